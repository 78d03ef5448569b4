"""Event-sourced gateway: append-only log, project state, HTTP API."""

from .events import Event, EventLog, log_hash
from .service import GatewayService, ProjectService, state_hash

__all__ = [
    "Event",
    "EventLog",
    "log_hash",
    "GatewayService",
    "ProjectService",
    "state_hash",
]
