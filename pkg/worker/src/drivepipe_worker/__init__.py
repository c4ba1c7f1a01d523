"""Stylizer worker speaking the drivepipe wire protocol."""

__version__ = "0.1.0"
