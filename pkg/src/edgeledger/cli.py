"""``edgeledger`` command: one binary, the role is picked by subcommand.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path

from edgeledger.errors import LedgerError

log = logging.getLogger("edgeledger")

ENV_PREFIX = "EDGELEDGER_"
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def _env_int(name: str, default: int) -> int:
    raw = _env(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{ENV_PREFIX}{name} must be an integer, got {raw!r}") from None


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must not be negative")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgeledger", description="Ledger-backed edge node selection.")
    parser.add_argument(
        "--log-level", choices=list(LOG_LEVELS), default="warn", help="logging verbosity"
    )
    sub = parser.add_subparsers(dest="command", metavar="{gateway,daemon,sim,verify,query}")

    gw = sub.add_parser("gateway", help="serve the HTTP API over a ledger", description="Serve the HTTP API.")
    gw.add_argument("--listen", help="host:port to bind (env EDGELEDGER_LISTEN, default 127.0.0.1:8080)")
    gw.add_argument("--ledger-path", help="block log file (env EDGELEDGER_LEDGER_PATH, default ledger.log)")
    gw.add_argument(
        "--block-timeout-ms", type=_non_negative_int, help="cut a block this long after its first tx (default 500)"
    )
    gw.add_argument("--block-max-txs", type=_positive_int, help="cut a block at this many txs (default 10)")
    gw.add_argument(
        "--notify-url",
        action="append",
        help="POST each selection result here; repeatable (env EDGELEDGER_NOTIFY_URL, comma separated)",
    )

    dm = sub.add_parser("daemon", help="run the per-device agent", description="Run the per-device agent.")
    dm.add_argument("--device-id", help="inventory id of this device (env EDGELEDGER_DEVICE_ID)")
    dm.add_argument("--gateway-url", help="gateway base URL (env EDGELEDGER_GATEWAY_URL)")
    dm.add_argument("--interval-seconds", type=_positive_float, help="seconds between ticks (default 30)")
    dm.add_argument("--listen", help="host:port for the echo peer; omit to skip it")
    dm.add_argument("--probe-timeout-ms", type=_positive_int, help="per-probe timeout (default 5000)")
    dm.add_argument("--credential-ref", help="echo credential; fetched from the inventory when omitted")

    sm = sub.add_parser("sim", help="run one scenario", description="Run one scenario and print its report.")
    sm.add_argument("--scenario", required=True, help="scenario file, or the name of a bundled one (exp1..exp5)")
    sm.add_argument("--expect", help="expectation file; exit 1 unless the report matches it")
    sm.add_argument("--out", help="write the JSON report here instead of stdout")
    sm.add_argument("--real-time", action="store_true", help="run 30x compressed in wall-clock time over sockets")
    sm.add_argument("--seed", type=int, help="override the scenario's rngSeed")

    vf = sub.add_parser("verify", help="check a block log", description="Check a block log; exit 0 iff intact.")
    vf.add_argument("--ledger-path", required=True, help="block log file")

    qy = sub.add_parser("query", help="print world-state entries", description="Print world-state entries.")
    qy.add_argument("--ledger-path", required=True, help="block log file")
    qy.add_argument("--prefix", default="", help="only keys starting with this prefix")
    return parser


def _install_signal_handlers(stop: threading.Event) -> None:
    def handler(signum, frame):
        log.info("signal %d received, shutting down", signum)
        stop.set()

    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, handler)


def _cmd_gateway(args) -> int:
    from edgeledger.contracts import default_contracts
    from edgeledger.gateway import Gateway, GatewayServer
    from edgeledger.ledger import Ledger

    notify = args.notify_url
    if notify is None:
        notify = [u for u in _env("NOTIFY_URL", "").split(",") if u]
    ledger = Ledger(
        default_contracts(),
        path=args.ledger_path or _env("LEDGER_PATH", "ledger.log"),
        max_txs=args.block_max_txs or _env_int("BLOCK_MAX_TXS", 10),
        block_timeout_ms=args.block_timeout_ms if args.block_timeout_ms is not None else _env_int("BLOCK_TIMEOUT_MS", 500),
    )
    gateway = Gateway(ledger, notify_urls=notify)
    server = GatewayServer(gateway, args.listen or _env("LISTEN", "127.0.0.1:8080"))
    stop = threading.Event()
    _install_signal_handlers(stop)
    server.start()
    log.warning("gateway listening on %s (ledger %s, height %d)", server.url, ledger.path, ledger.height)
    stop.wait()
    server.stop()
    gateway.close()
    ledger.close()
    return 0


def _cmd_daemon(args) -> int:
    from edgeledger.daemon import DaemonConfig, run_loop

    device_id = args.device_id or _env("DEVICE_ID")
    if not device_id:
        print("edgeledger daemon: --device-id is required", file=sys.stderr)
        return 2
    config = DaemonConfig(
        device_id=device_id,
        gateway_url=args.gateway_url or _env("GATEWAY_URL", "http://127.0.0.1:8080"),
        interval_seconds=args.interval_seconds or float(_env("INTERVAL_SECONDS", "30")),
        probe_timeout_ms=args.probe_timeout_ms or _env_int("PROBE_TIMEOUT_MS", 5000),
        listen_address=args.listen or _env("LISTEN"),
        credential_ref=args.credential_ref or _env("CREDENTIAL_REF"),
    )
    try:
        config.validate()
    except ValueError as exc:
        print(f"edgeledger daemon: {exc}", file=sys.stderr)
        return 2
    stop = threading.Event()
    _install_signal_handlers(stop)
    run_loop(config, stop)
    return 0


def _cmd_sim(args) -> int:
    from dataclasses import replace

    from edgeledger.sim import bundled_scenario, compare_to_expectation, load_expectation, load_scenario, run_scenario

    path = Path(args.scenario)
    if not path.exists() and os.sep not in args.scenario and not args.scenario.endswith(".toml"):
        path = bundled_scenario(args.scenario)
    spec = load_scenario(path)
    if args.seed is not None:
        spec = replace(spec, rng_seed=args.seed)
    if args.real_time:
        spec = spec.compressed(30)
    expectation = load_expectation(args.expect) if args.expect else None
    report = run_scenario(spec)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if report.selection_error:
        print(f"selection failed: {report.selection_error}", file=sys.stderr)
    if expectation is None:
        return 0
    result = compare_to_expectation(report, expectation)
    for diff in result.diffs:
        print(f"MISMATCH {diff}", file=sys.stderr)
    print("expectation " + ("met" if result.passed else "not met"), file=sys.stderr)
    return 0 if result.passed else 1


def _cmd_verify(args) -> int:
    from edgeledger.ledger import verify_log_file

    path = Path(args.ledger_path)
    if not path.is_file():
        print(f"edgeledger verify: no such file {path}", file=sys.stderr)
        return 1
    report = verify_log_file(path)
    print(json.dumps(report.to_dict()))
    return 0 if report.valid else 1


def _cmd_query(args) -> int:
    from edgeledger.ledger import load_log_file, replay

    path = Path(args.ledger_path)
    if not path.is_file():
        print(f"edgeledger query: no such file {path}", file=sys.stderr)
        return 1
    state = replay(load_log_file(path))
    for key in sorted((k for k in state if k.startswith(args.prefix)), key=lambda k: k.encode("utf-8")):
        print(json.dumps({"key": key, "value": state[key].decode("utf-8")}, ensure_ascii=False))
    return 0


COMMANDS = {
    "gateway": _cmd_gateway,
    "daemon": _cmd_daemon,
    "sim": _cmd_sim,
    "verify": _cmd_verify,
    "query": _cmd_query,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("edgeledger: a subcommand is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=LOG_LEVELS[args.log_level], format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (LedgerError, OSError, ValueError) as exc:
        print(f"edgeledger {args.command}: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 2
        return exc.code or 0


if __name__ == "__main__":
    sys.exit(main())
