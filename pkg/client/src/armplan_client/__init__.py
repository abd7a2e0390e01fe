"""Client for the armplan episode server."""

from .client import ConnectionLost, ProtocolError, RemoteEnv, connect

__version__ = "0.1.0"
