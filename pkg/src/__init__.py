# Package init

__version__ = "0.3.0"
