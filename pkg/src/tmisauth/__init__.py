"""Executable model of a password + smart-card authentication scheme for
telecare medicine systems, with the attacks that break it."""

from .primitives import Suite
from .scheme import LoginMessage, Rejected, ServerResponse, ServerState, SmartCard

__all__ = ["LoginMessage", "Rejected", "ServerResponse", "ServerState", "SmartCard", "Suite"]
__version__ = "0.1.0"
