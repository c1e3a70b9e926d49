"""Per-device agent: resource sampling, echo probes and the reporting loop."""
from edgeledger.daemon.agent import Daemon, DaemonConfig, TickOutcome, run_loop
from edgeledger.daemon.client import (
    GatewayClientError,
    GatewayUnavailableError,
    HttpGatewayClient,
    LocalGatewayClient,
)
from edgeledger.daemon.echo import (
    AuthRejectedError,
    EchoProtocolError,
    EchoServer,
    EchoSession,
    TcpConnector,
    auth_token,
    serve_echo,
)
from edgeledger.daemon.probe import ProbeResult, ProbeTarget, measure_latency, probe
from edgeledger.daemon.sampler import HostMeter, sample_resources

__all__ = [
    "AuthRejectedError",
    "Daemon",
    "DaemonConfig",
    "EchoProtocolError",
    "EchoServer",
    "EchoSession",
    "GatewayClientError",
    "GatewayUnavailableError",
    "HostMeter",
    "HttpGatewayClient",
    "LocalGatewayClient",
    "ProbeResult",
    "ProbeTarget",
    "TcpConnector",
    "TickOutcome",
    "auth_token",
    "measure_latency",
    "probe",
    "run_loop",
    "sample_resources",
    "serve_echo",
]
