"""Design and simulation toolkit for differential spiral joints."""

__version__ = '0.1.0'
