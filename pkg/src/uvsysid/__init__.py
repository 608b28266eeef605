"""Data-driven dynamics identification for thruster-actuated underwater vehicles."""

__version__ = "0.1.0"
