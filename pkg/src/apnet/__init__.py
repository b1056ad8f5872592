"""Zero-shot classification by propagating class attributes over a learned class graph."""

__version__ = "0.1.0"
