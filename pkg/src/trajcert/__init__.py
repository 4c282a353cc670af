"""Trajectory stability certificates for coupled training runs on neighboring datasets."""

__version__ = "0.1.0"
