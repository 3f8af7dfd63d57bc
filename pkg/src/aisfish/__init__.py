"""Semi-supervised fishing-activity detection from AIS position reports."""

__version__ = "0.1.0"
