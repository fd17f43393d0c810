"""Two-stage attitude-aware prediction of rare ridesourcing trips."""

__version__ = "0.1.0"
