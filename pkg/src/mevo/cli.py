"""Command-line entry points.

Three tools share this module: mevo-peer runs a live session endpoint,
mevo-sim drives the virtual-time simulator, mevo-analyze turns a
telemetry log into tables.  Each entry point returns a process exit
code; 2 is argparse's own code for bad usage, 1 means the input was
unusable (missing file, malformed log, invalid scenario).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace

from . import analysis, netsim
from .audio import ConfigError, FileSource, SilenceSource, SineSource
from .engine import load_session, run_session
from .telemetry import read_log, summarize
from .wire import WireError


def _fail(prog: str, message) -> int:
    print("%s: %s" % (prog, message), file=sys.stderr)
    return 1


# ---- mevo-peer ---------------------------------------------------------


def _make_source(spec: str, stream):
    """--virtual-audio values: silence (default), sine, file:<path>."""
    if spec == "silence":
        return SilenceSource(sample_rate=stream.sample_rate,
                             channels=stream.channels)
    if spec == "sine":
        return SineSource(sample_rate=stream.sample_rate,
                          channels=stream.channels)
    if spec.startswith("file:"):
        return FileSource(spec[len("file:"):],
                          sample_rate=stream.sample_rate,
                          channels=stream.channels)
    raise ConfigError("unknown virtual audio source %r "
                      "(expected silence, sine, or file:<path>)" % spec)


def peer_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mevo-peer",
        description="Run one live session endpoint until interrupted "
                    "or stopped through the control API.",
    )
    parser.add_argument("--config", required=True,
                        help="session TOML file (roster, stream, buffer)")
    parser.add_argument("--virtual-audio", default="silence",
                        metavar="silence|sine|file:<path>",
                        help="capture source (default: silence)")
    parser.add_argument("--control-port", type=int, default=None,
                        help="HTTP control port; overrides the config "
                             "file, 0 picks an ephemeral port")
    parser.add_argument("--telemetry-log", default=None,
                        help="write the once-per-second CSV log here")
    args = parser.parse_args(argv)

    try:
        config = load_session(args.config)
        if args.control_port is not None:
            config = replace(config, control_port=args.control_port)
        source = _make_source(args.virtual_audio, config.stream)
    except (OSError, ConfigError, WireError, ValueError) as exc:
        return _fail("mevo-peer", exc)

    try:
        handle = run_session(config, source=source,
                             telemetry_log=args.telemetry_log)
    except OSError as exc:
        return _fail("mevo-peer", exc)

    local = config.local_entry()
    print("peer %s: audio on %s:%d" % (local.peer_id, local.host, local.port),
          flush=True)
    if handle.control_port is not None:
        print("peer %s: control on http://127.0.0.1:%d"
              % (local.peer_id, handle.control_port), flush=True)
    if args.telemetry_log:
        print("peer %s: telemetry log %s" % (local.peer_id, args.telemetry_log),
              flush=True)

    try:
        while not handle.wait(0.5):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        handle.stop()
    print("peer %s: stopped" % local.peer_id, flush=True)
    return 0


# ---- mevo-sim ----------------------------------------------------------


def _resolve_scenario(ref: str):
    """A scenario reference is a file path or a packaged fixture name."""
    if os.path.exists(ref):
        return netsim.load_scenario(ref)
    try:
        return netsim.packaged_scenario(ref)
    except KeyError:
        raise ConfigError(
            "no scenario file %r and no packaged scenario by that name "
            "(packaged: %s)" % (ref, ", ".join(netsim.packaged_scenario_names()))
        ) from None


def sim_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mevo-sim",
        description="Deterministic virtual-time session simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a scenario and write its logs")
    run_p.add_argument("scenario",
                       help="scenario TOML path or packaged name")
    run_p.add_argument("--out", required=True,
                       help="output directory (created if missing)")
    args = parser.parse_args(argv)

    try:
        scenario = _resolve_scenario(args.scenario)
    except (OSError, ConfigError, WireError, ValueError, KeyError) as exc:
        return _fail("mevo-sim", exc)

    started = time.monotonic()
    result = netsim.run(scenario, args.out)
    wall = time.monotonic() - started

    print("scenario %s: %.0f s virtual in %.1f s wall"
          % (scenario.name, scenario.duration_s, wall))
    for pid in sorted(result.telemetry_paths):
        print("  telemetry %s" % result.telemetry_paths[pid])
    print("  ground truth %s" % result.ground_truth_path)
    return 0


# ---- mevo-analyze ------------------------------------------------------


def analyze_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mevo-analyze",
        description="Turn a telemetry log into tables and plot data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--log", required=True, help="telemetry CSV to read")
        p.add_argument("--out", required=True,
                       help="directory for the artifacts (created if missing)")

    rtt_p = sub.add_parser("rtt", help="RTT histogram and quantiles")
    common(rtt_p)
    rtt_p.add_argument("--bin-ms", type=float, default=0.5,
                       help="histogram bin width (default 0.5)")
    rtt_p.add_argument("--threshold-ms", type=float, default=59.0,
                       help="report the fraction of RTTs strictly below "
                            "this (default 59)")

    loss_p = sub.add_parser("loss", help="cumulative loss curve and ratio")
    common(loss_p)

    m2e_p = sub.add_parser("m2e", help="mouth-to-ear latency budget")
    common(m2e_p)
    m2e_p.add_argument("--driver-ms", type=float, default=5.0,
                       help="fixed endpoint driver latency (default 5)")

    summary_p = sub.add_parser("summary", help="headline numbers, one file")
    common(summary_p)
    summary_p.add_argument("--threshold-ms", type=float, default=59.0)

    args = parser.parse_args(argv)

    try:
        log = read_log(args.log)
        if args.command == "rtt":
            hist = analysis.rtt_histogram(log, bin_width_ms=args.bin_ms)
            paths = analysis.write_rtt_artifacts(hist, args.out,
                                                 threshold_ms=args.threshold_ms)
        elif args.command == "loss":
            paths = analysis.write_loss_artifacts(log, args.out)
        elif args.command == "m2e":
            envelope = analysis.m2e_budget(log, driver_ms=args.driver_ms)
            paths = analysis.write_m2e_artifacts(envelope, args.out)
        else:
            summary = summarize(log, threshold_ms=args.threshold_ms)
            paths = analysis.write_summary_artifacts(summary, args.out)
    except (OSError, ValueError) as exc:
        return _fail("mevo-analyze", exc)

    for path in paths:
        print(path)
    return 0
