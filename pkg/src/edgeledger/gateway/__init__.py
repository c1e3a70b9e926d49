"""HTTP gateway exposing the contracts to daemons and clients."""
from edgeledger.gateway.app import (
    DEFAULT_WINDOW_MINUTES,
    ApiError,
    Gateway,
    OpTimingStats,
    TimingRecorder,
    api_error_for,
    post_json,
)
from edgeledger.gateway.server import GatewayServer

__all__ = [
    "DEFAULT_WINDOW_MINUTES",
    "ApiError",
    "Gateway",
    "GatewayServer",
    "OpTimingStats",
    "TimingRecorder",
    "api_error_for",
    "post_json",
]
