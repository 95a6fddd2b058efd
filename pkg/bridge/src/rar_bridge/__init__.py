"""Model-process side of the line-JSON bridge protocol."""

from .server import PROTOCOL, OpError, serve

__all__ = ["PROTOCOL", "OpError", "serve"]
