"""Goal-oriented adaptive finite elements for plane-strain elasticity with active fiber stress."""
__version__ = "0.1.0"
