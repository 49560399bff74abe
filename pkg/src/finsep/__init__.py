"""Fish vocalization / sea background separation toolkit."""

__version__ = "0.1.0"
