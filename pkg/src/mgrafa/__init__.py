"""Reference-aided, multi-granularity attentive aggregation of video features."""

__version__ = "0.1.0"
