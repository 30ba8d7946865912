"""Command-line entry point.

Exit codes:
  0    success
  1    runtime error (unreadable run directory, bad configuration file, ...)
  2    usage error (unknown flag, missing argument)
  100+ ``profile`` only: the workload exited with status N; the code is
       100 + N (signals count as 128 + signal number), capped at 255
"""

import argparse
import json
import logging
import os
import sys
import time

from . import __version__
from .analysis import compute_deltas, load_delta_config, load_run
from .collector import (INSIDE, OUTSIDE, Collector, CollectorConfig, ConfigError,
                        UnsupportedLayoutError)
from .metrics import CONTAINER, HOST, LEVELS, PROCESS, serialize_snapshot
from .plot import export_csv, load_graph_config, render_plot
from .runner import (ProfileConfig, WorkloadSpawnError, WorkloadSpec, build_runtime_invocation,
                     profile_workload)
from .sampler import SAMPLER_REPORT_FILE, SamplerReport, measure_self_latency
from .stats import latency_stats, overhead_percent

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
WORKLOAD_EXIT_OFFSET = 100

PROC_ROOT_ENV = "RUPROF_PROC_ROOT"
CGROUP_ROOT_ENV = "RUPROF_CGROUP_ROOT"

log = logging.getLogger("ruprof")


def workload_exit_code(status):
    if status == 0:
        return EXIT_OK
    if status < 0:
        status = 128 - status
    return min(255, WORKLOAD_EXIT_OFFSET + status)


def _add_verbosity(p):
    g = p.add_argument_group("verbosity (default: all three)")
    g.add_argument("-v", dest="host", action="store_true", help="collect host/VM level metrics")
    g.add_argument("-c", dest="container", action="store_true",
                   help="collect container (cgroup) level metrics")
    g.add_argument("-p", dest="process", action="store_true",
                   help="collect process level metrics")


def _add_sources(p):
    p.add_argument("--proc-root", default=None,
                   help=f"procfs mount (default: ${PROC_ROOT_ENV} or /proc)")
    p.add_argument("--cgroup-root", default=None,
                   help=f"cgroup v1 mount (default: ${CGROUP_ROOT_ENV} or /sys/fs/cgroup)")
    p.add_argument("--cgroup-path", default="",
                   help="container cgroup below each controller (outside mode)")
    p.add_argument("--container-id", default=None, help="identifier recorded as cId")
    p.add_argument("--device", action="append", default=None,
                   help="block device to include in disk totals (repeatable); "
                        "default: whole physical disks")
    p.add_argument("--include-loopback", action="store_true",
                   help="count the loopback interface in network totals")


def _verbosity(args):
    chosen = [level for level, flag in ((HOST, args.host), (CONTAINER, args.container),
                                        (PROCESS, args.process)) if flag]
    return tuple(chosen) or LEVELS


def _collector_config(args, mode=INSIDE):
    return CollectorConfig(
        proc_root=args.proc_root or os.environ.get(PROC_ROOT_ENV, "/proc"),
        cgroup_root=args.cgroup_root or os.environ.get(CGROUP_ROOT_ENV, "/sys/fs/cgroup"),
        verbosity=_verbosity(args),
        device_filter=frozenset(args.device) if args.device else None,
        exclude_loopback=not args.include_loopback,
        mode=mode,
        cgroup_path=args.cgroup_path,
        container_id=args.container_id,
    )


def _metric_list(values):
    if not values:
        return None
    out = []
    for v in values:
        out.extend(x for x in v.split(",") if x)
    return out


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ruprof",
        description="Sample host, container and process resource usage while a workload runs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("profile", help="run a workload and sample it until it exits")
    _add_verbosity(p)
    _add_sources(p)
    p.add_argument("--interval", type=float, default=1.0, help="seconds between samples")
    p.add_argument("--out", default=None, help="run directory (default: ./profile-<epoch>)")
    p.add_argument("--max-duration", type=float, default=None,
                   help="stop sampling after this many seconds")
    p.add_argument("--image", default=None, help="run the workload in this container image")
    p.add_argument("--mount", default=None,
                   help="host directory mounted at /data in the container")
    p.add_argument("--runtime", default="docker", help="container runtime binary")
    p.add_argument("--mode", choices=[INSIDE, OUTSIDE], default=INSIDE,
                   help="run the profiler inside the container or sample it from the host")
    p.add_argument("--name", default=None, help="container name")
    p.add_argument("--env", action="append", default=[], metavar="KEY=VALUE",
                   help="environment variable for the workload (repeatable)")
    p.add_argument("--profiler-command", default="ruprof",
                   help="profiler executable inside the image (inside mode)")
    p.add_argument("--dry-run", action="store_true",
                   help="print the container runtime invocation and exit")
    p.add_argument("command", nargs=argparse.REMAINDER, help="-- COMMAND [ARGS...]")

    p = sub.add_parser("snapshot", help="print one snapshot to stdout")
    _add_verbosity(p)
    _add_sources(p)

    p = sub.add_parser("selftest-latency", help="measure collection latency without writing files")
    _add_verbosity(p)
    _add_sources(p)
    p.add_argument("-n", type=int, default=100, help="collections per configuration")
    p.add_argument("--threshold", type=float, default=1.0,
                   help="report the fraction of samples under this many seconds")

    p = sub.add_parser("deltas", help="write per-interval deltas of a run as CSV")
    p.add_argument("run", help="run directory")
    p.add_argument("--target-interval", type=float, default=None)
    p.add_argument("--config", default=None, help="delta_configuration.ini")
    p.add_argument("--metrics", action="append", default=None,
                   help="comma separated metric names (repeatable)")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")

    p = sub.add_parser("plot", help="render delta series of a run to SVG")
    p.add_argument("run", help="run directory")
    p.add_argument("--target-interval", type=float, default=None)
    p.add_argument("--config", default=None, help="delta_configuration.ini")
    p.add_argument("--style", default=None, help="graph_generation_config.ini")
    p.add_argument("--metrics", action="append", default=None,
                   help="comma separated metric names (repeatable); default all")
    p.add_argument("--out", default=None, help="SVG path (default: RUN/plot.svg)")

    p = sub.add_parser("stats", help="collection latency statistics of a run")
    p.add_argument("run", help="run directory")
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--baseline", type=float, nargs="+", default=None,
                   help="unprofiled workload runtimes in seconds")
    p.add_argument("--profiled", type=float, nargs="+", default=None,
                   help="profiled workload runtimes in seconds")
    p.add_argument("--out", default=None, help="stats JSON path (default: RUN/stats.json)")

    p = sub.add_parser("overhead", help="runtime overhead of profiling in percent")
    p.add_argument("--baseline", type=float, nargs="+", required=True)
    p.add_argument("--profiled", type=float, nargs="+", required=True)
    return parser


def _cmd_profile(args, parser):
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        parser.error("profile needs a workload command after --")
    if args.interval <= 0:
        parser.error("--interval must be positive")
    env = {}
    for item in args.env:
        key, sep, value = item.partition("=")
        if not sep or not key:
            parser.error(f"--env expects KEY=VALUE, got {item!r}")
        env[key] = value
    spec = WorkloadSpec(command=command, container_image=args.image, data_mount=args.mount,
                        environment=env, runtime=args.runtime, mode=args.mode,
                        container_name=args.name,
                        profiler_command=tuple(args.profiler_command.split()))
    out = args.out or f"profile-{time.time_ns()}"
    if args.dry_run:
        if not args.image:
            parser.error("--dry-run needs --image")
        config = ProfileConfig(CollectorConfig(proc_root="/", verbosity=_verbosity(args)),
                               args.interval, out, args.max_duration)
        print(" ".join(build_runtime_invocation(spec, config)))
        return EXIT_OK
    collector_config = _collector_config(args, OUTSIDE if args.image and args.mode == OUTSIDE
                                         else INSIDE)
    profile = ProfileConfig(collector_config, args.interval, out, args.max_duration)
    result = profile_workload(spec, profile)
    print(json.dumps(result.to_dict(), indent=2))
    return workload_exit_code(result.exit_status)


def _cmd_snapshot(args, parser):
    snap, _ = Collector(_collector_config(args)).collect_snapshot()
    sys.stdout.write(serialize_snapshot(snap))
    return EXIT_OK


def _cmd_selftest(args, parser):
    if args.n < 1:
        parser.error("-n must be at least 1")
    if args.host or args.container or args.process:
        configs = [_verbosity(args)]
    else:
        configs = [(HOST,), (HOST, CONTAINER), LEVELS]
    out = {}
    for levels in configs:
        args.host, args.container, args.process = (HOST in levels, CONTAINER in levels,
                                                   PROCESS in levels)
        stats = measure_self_latency(_collector_config(args), args.n)
        out["+".join(levels)] = stats.to_dict(args.threshold)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _series(args):
    run = load_run(args.run)
    rules = load_delta_config(args.config) if args.config else None
    return compute_deltas(run, rules, args.target_interval, _metric_list(args.metrics))


def _cmd_deltas(args, parser):
    series = _series(args)
    if not series:
        raise ConfigError("no series matched")
    if args.out == "-":
        export_csv(series, sys.stdout)
    else:
        export_csv(series, args.out)
    return EXIT_OK


def _cmd_plot(args, parser):
    series = _series(args)
    style = load_graph_config(args.style) if args.style else None
    out = args.out or os.path.join(args.run, "plot.svg")
    render_plot(series, out, style)
    print(out)
    return EXIT_OK


def _cmd_stats(args, parser):
    report_path = os.path.join(args.run, SAMPLER_REPORT_FILE)
    doc = {}
    if os.path.exists(report_path):
        with open(report_path, encoding="utf-8") as f:
            report = SamplerReport.from_dict(json.load(f))
        latencies = report.latencies_ns
        doc.update(samplesWritten=report.samples_written, overruns=report.overruns,
                   warnings=report.warnings, latencySource=SAMPLER_REPORT_FILE)
    else:
        run = load_run(args.run)
        latencies = [s.collection_duration for s in run.snapshots]
        doc.update(samplesWritten=len(run.snapshots), latencySource="collectionDuration")
    doc["latency"] = latency_stats(latencies).to_dict(args.threshold)
    if args.baseline or args.profiled:
        if not (args.baseline and args.profiled):
            parser.error("--baseline and --profiled go together")
        doc["overhead"] = overhead_percent(args.baseline, args.profiled).to_dict()
    out = args.out or os.path.join(args.run, "stats.json")
    with open(out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _cmd_overhead(args, parser):
    print(json.dumps(overhead_percent(args.baseline, args.profiled).to_dict(), indent=2))
    return EXIT_OK


_COMMANDS = {
    "profile": _cmd_profile,
    "snapshot": _cmd_snapshot,
    "selftest-latency": _cmd_selftest,
    "deltas": _cmd_deltas,
    "plot": _cmd_plot,
    "stats": _cmd_stats,
    "overhead": _cmd_overhead,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level, format="ruprof: %(levelname)s: %(message)s")
        return _COMMANDS[args.subcommand](args, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ConfigError, UnsupportedLayoutError, WorkloadSpawnError, ValueError, OSError) as exc:
        print(f"ruprof: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
