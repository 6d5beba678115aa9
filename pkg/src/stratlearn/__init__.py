"""Learning distributions and strata structure on stratified spaces."""

__version__ = "0.1.0"
