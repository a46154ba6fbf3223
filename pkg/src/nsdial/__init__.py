"""Neural-symbolic dialogue generation with multi-hop proof trees over a KB."""

__version__ = "0.1.0"
