"""Next-active-object guided short-term anticipation at desk scale."""

__version__ = "0.1.0"
