"""Command-line entry points: device daemon, campaign orchestration, analysis."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from .model import AttachmentKind, TestbedKind, load_campaign_spec

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BIND_FAILURE = 2
EXIT_BACKEND_FAILURE = 3
EXIT_EMPTY_RESULT = 4
EXIT_CAMPAIGN_FAULT = 5


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


def daemon_main(argv=None) -> int:
    from .daemon import BackendInitError, Daemon, DaemonConfig
    from .sim import SimParams, default_params, load_sim_params

    parser = argparse.ArgumentParser(
        prog="pullbench-daemon",
        description="Serve one simulated door/drawer bench over the wire protocol.",
    )
    parser.add_argument("--config", type=Path,
                        help="daemon config JSON; flags below override its fields")
    parser.add_argument("--testbed", choices=["door", "drawer"])
    parser.add_argument("--attachment", choices=["handle", "knob"])
    parser.add_argument("--host")
    parser.add_argument("--port", type=int)
    parser.add_argument("--rate", type=float, help="telemetry rate, Hz")
    parser.add_argument("--accel", type=float, help="sim seconds per wall second")
    parser.add_argument("--backend", choices=["sim", "hardware_stub"])
    parser.add_argument("--params", type=Path, help="sim params JSON (seed mandatory)")
    parser.add_argument("--seed", type=int, help="override the sim seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    file_cfg = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
    if args.testbed is None and "testbed" not in file_cfg:
        parser.error("--testbed is required (flag or config file)")
    testbed = TestbedKind(args.testbed or file_cfg["testbed"])
    if args.params:
        params = load_sim_params(args.params)
    elif "sim_params" in file_cfg:
        params = SimParams(**file_cfg["sim_params"])
    else:
        params = default_params(testbed)
    if args.seed is not None:
        params = params.with_seed(args.seed)

    def pick(flag, key, default):
        return flag if flag is not None else file_cfg.get(key, default)

    try:
        config = DaemonConfig(
            testbed=testbed,
            attachment=AttachmentKind(pick(args.attachment, "attachment", "handle")),
            host=pick(args.host, "host", "127.0.0.1"),
            port=pick(args.port, "port", 7410),
            telemetry_rate=pick(args.rate, "telemetry_rate", 100.0),
            backend=pick(args.backend, "backend", "sim"),
            accel=pick(args.accel, "accel", 1.0),
            sim_params=params,
        )
        daemon = Daemon(config)
    except (BackendInitError, ValueError) as exc:
        log.error("backend init failed: %s", exc)
        return EXIT_BACKEND_FAILURE
    try:
        daemon.start()
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_BIND_FAILURE

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *a: stop.set())
    signal.signal(signal.SIGTERM, lambda *a: stop.set())
    log.info("serving on %s:%d (ctrl-c to stop)", args.host, daemon.port)
    stop.wait()
    daemon.stop()
    return EXIT_OK


def orchestrate_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="orchestrate", description="Run grasp-and-pull campaigns."
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    run_p = sub.add_parser("run", help="run a campaign end to end")
    run_p.add_argument("--campaign", type=Path, required=True, help="campaign JSON")
    run_p.add_argument("--out", type=Path, required=True, help="dataset output directory")
    run_p.add_argument("--daemon", help="host:port of an external daemon "
                       "(default: embedded simulated daemon + scripted arm)")
    run_p.add_argument("--accelerate", type=float, default=1.0, metavar="K")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--gateway-port", type=int, help="serve the operator gateway here")
    run_p.add_argument("--auto-continue", action="store_true",
                       help="recover and continue past faulted trials")
    run_p.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    return _orchestrate_run(args)


def _orchestrate_run(args) -> int:
    from .daemon import Daemon, DaemonConfig
    from .gateway import GatewayServer
    from .manipulator import ScriptedManipulator
    from .orchestrator import CampaignRunner, DaemonSession
    from .sim import default_params

    campaign = load_campaign_spec(args.campaign)
    embedded = None
    manipulator = ScriptedManipulator(seed=args.seed)

    if args.daemon:
        host, _, port = args.daemon.partition(":")
        address = (host, int(port))
        log.warning("external daemon: the scripted arm cannot reach its physics; "
                    "trials will record but pulls require a physically attached arm")
    else:
        embedded = Daemon(DaemonConfig(
            testbed=campaign.testbed,
            attachment=next(iter(campaign.attachment_grasps), AttachmentKind.HANDLE),
            accel=args.accelerate,
            sim_params=default_params(campaign.testbed, seed=args.seed),
        ))
        try:
            embedded.start()
        except OSError as exc:
            log.error("%s", exc)
            return EXIT_BIND_FAILURE
        embedded.backend.attach_actor(manipulator)
        address = ("127.0.0.1", embedded.port)

    session = DaemonSession(address[0], address[1], accel=args.accelerate)
    runner = CampaignRunner(
        campaign, session, manipulator, args.out,
        seed=args.seed, auto_continue=args.auto_continue,
    )
    gateway = None
    if args.gateway_port is not None:
        gateway = GatewayServer(runner, port=args.gateway_port)
        gateway.start()
        log.info("gateway listening on port %d", gateway.port)

    try:
        report = runner.run()
    finally:
        if gateway is not None:
            gateway.stop()
        session.close()
        if embedded is not None:
            embedded.stop()

    print(f"campaign {report.campaign_id}: {report.total} trials")
    for (grasp, resistance), counts in sorted(report.cells.items()):
        summary = ", ".join(f"{k}={v}" for k, v in counts.items() if v)
        print(f"  {grasp} @ {resistance:g} N: {summary}")
    if report.fault_count:
        print(f"  faults: {report.fault_count}")
        return EXIT_CAMPAIGN_FAULT
    return EXIT_OK


def analyze_main(argv=None) -> int:
    from .analysis import analyze_campaign, export_tables

    parser = argparse.ArgumentParser(
        prog="analyze",
        description="Filter, normalize, and aggregate recorded FSR traces.",
    )
    parser.add_argument("--campaign", type=Path, required=True)
    parser.add_argument("--channel", type=int, default=9)
    parser.add_argument("--group-by", choices=["resistance"], default="resistance")
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--threshold", type=float, default=0.2,
                        help="rise/fall threshold as a fraction of peak-baseline")
    parser.add_argument("--sustain-ms", type=float, default=100.0)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    result = analyze_campaign(
        args.campaign,
        channel=args.channel,
        threshold_frac=args.threshold,
        sustain_s=args.sustain_ms / 1000.0,
    )
    for warning in result.warnings:
        log.warning("%s", warning)
    if not result.group_rows:
        log.error("no trials survived filtering; nothing to export")
        return EXIT_EMPTY_RESULT
    group_path, trials_path = export_tables(result, args.out)
    print(f"wrote {group_path} and {trials_path}")
    return EXIT_OK
