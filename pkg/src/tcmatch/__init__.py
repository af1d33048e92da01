"""Text classification as matching inputs against natural-language label descriptions."""

__version__ = "0.1.0"
