"""Safe motion planning for fully-actuated surface vessels in narrow waterways."""

__version__ = "0.1.0"
