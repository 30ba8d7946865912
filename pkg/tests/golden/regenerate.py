"""Rebuild the golden files. Review the diff by hand before committing.

    python tests/golden/regenerate.py

basic_snapshot.json   collector output over fixtures/basic with a step clock
run/                  four hand-written snapshots, 1 s apart with jitter
deltas_t2.csv         target-interval 2 s deltas of run/, computed below by
                      brute-force pairwise differencing (not by the package)
plot_structure.json   line point counts and axis labels of the run/ plot
"""

import csv
import json
import os
import shutil
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.dirname(HERE))

from conftest import StepClock, fixture_config  # noqa: E402

from ruprof.collector import Collector  # noqa: E402
from ruprof.metrics import (ContainerMetrics, HostMetrics, ProcessMetrics,  # noqa: E402
                            RunMetadata, Snapshot, serialize_snapshot, snapshot_filename)

RUN = os.path.join(HERE, "run")

HOST = {
    "vCpuTimeUserMode": [100, 150, 150, 400],
    "vCpuTimeKernelMode": [50, 60, 70, 80],
    "vCpuIdleTime": [1000, 1090, 1180, 1190],
    "vCpuTimeIOWait": [20, 20, 25, 30],
    "vCpuContextSwitches": [7777, 8000, 8100, 9000],
    "vCpuNice": [5, 5, 5, 5],
    "vCpuSteal": [2, 2, 3, 3],
    "vDiskSectorReads": [64000, 64008, 64008, 64100],
    "vDiskSectorWrites": [1000, 1016, 1016, 1416],
    "vDiskReadTime": [1200, 1201, 1201, 1210],
    "vDiskWriteTime": [2500, 2510, 2510, 2600],
    "vNetworkBytesRecvd": [1000, 5000, 5000, 905000],
    "vNetworkBytesSent": [2000, 2100, 2100, 12100],
    "vMemoryTotal": [8000000] * 4,
    "vMemoryFree": [3000000, 2900000, 2950000, 8000000],
    "vMemoryBuffers": [200000] * 4,
    "vMemoryCached": [1500000, 1500100, 1500200, 1500300],
}
CONTAINER = {
    "cCpuTimeUserMode": [90, 140, 140, 390],
    "cCpuTimeKernelMode": [40, 45, 50, 55],
    "cDiskSectorIO": [24, 32, 32, 424],
    "cDiskReadBytes": [4096, 8192, 8192, 55296],
    "cDiskWriteBytes": [0, 4096, 4096, 200000],
    "cNetworkBytesRecvd": [1000, 5000, 5000, 905000],
    "cNetworkBytesSent": [2000, 2100, 2100, 12100],
    "cMemoryUsed": [52428800, 60000000, 61000000, 1000000],
    "cNumProcesses": [2, 2, 2, 1],
}
PROCS = {
    101: ("bash", 4, {
        "pCpuTimeUserMode": [12, 12, 13, 13],
        "pCpuTimeKernelMode": [3, 3, 3, 4],
        "pVoluntaryContextSwitches": [150, 151, 160, 161],
        "pNonvoluntaryContextSwitches": [7, 7, 7, 8],
        "pBlockIODelays": [0, 0, 0, 0],
        "pResidentSetSize": [900, 900, 910, 905],
        "pNumThreads": [1, 1, 1, 1],
    }),
    102: ("python3", 3, {
        "pCpuTimeUserMode": [4000, 4050, 4050],
        "pCpuTimeKernelMode": [250, 251, 252],
        "pVoluntaryContextSwitches": [3000, 3001, 3002],
        "pNonvoluntaryContextSwitches": [420, 420, 421],
        "pBlockIODelays": [17, 17, 18],
        "pResidentSetSize": [25000, 25100, 25200],
        "pNumThreads": [4, 4, 4],
    }),
}
JITTER_NS = [0, 2_000_000, -1_000_000, 3_000_000]
MONO0 = 10_000_000_000
WALL0_NS = 1_700_000_000_000_000_000


def build_run():
    shutil.rmtree(RUN, ignore_errors=True)
    os.makedirs(RUN)
    meta = RunMetadata(interval_seconds=1.0, verbosity=("host", "container", "process"),
                       clock_ticks_per_second=100, sector_size_bytes=512,
                       start_wall_clock=WALL0_NS / 1e9, workload_command="golden",
                       output_directory="golden/run")
    with open(os.path.join(RUN, "run_metadata.json"), "w") as f:
        json.dump(meta.to_dict(), f, indent=2)
        f.write("\n")
    for i in range(4):
        mono = MONO0 + i * 1_000_000_000 + JITTER_NS[i]
        wall_ns = WALL0_NS + i * 1_000_000_000 + JITTER_NS[i]
        host = HostMetrics(**{k: v[i] for k, v in HOST.items()}, vLoadAvg=(0.5, 0.6, 0.7),
                           vId="fixture-host")
        container = ContainerMetrics(**{k: v[i] for k, v in CONTAINER.items()},
                                     cId="abc123def456")
        procs = tuple(
            ProcessMetrics(pId=pid, pName=name, **{k: v[i] for k, v in vals.items()})
            for pid, (name, n, vals) in PROCS.items() if i < n
        )
        snap = Snapshot(wall_clock=wall_ns / 1e9, monotonic_clock=mono,
                        section_timestamps={"host": mono + 1000, "container": mono + 400000,
                                            "process": mono + 700000},
                        collection_duration=900000 + i * 1000, host=host, container=container,
                        processes=procs)
        with open(os.path.join(RUN, snapshot_filename(wall_ns)), "w") as f:
            f.write(serialize_snapshot(snap))


def brute_force_deltas_t2():
    """Sum adjacent 1 s differences in pairs; gauges take the later sample."""
    walls = [(WALL0_NS + i * 1_000_000_000 + JITTER_NS[i]) / 1e9 for i in range(4)]
    # samples 0..3 at 1 s; 2 s buckets close at sample 2 and (partial) at sample 3
    ends = [2, 3]
    starts = [0, 2]
    cols = {}
    gauges = {"vMemoryTotal", "vMemoryFree", "vMemoryBuffers", "vMemoryCached",
              "cMemoryUsed", "cNumProcesses"}
    for table in (HOST, CONTAINER):
        for name, vals in table.items():
            if name in gauges:
                cols[name] = [vals[e] for e in ends]
            else:
                one_s = [vals[j + 1] - vals[j] for j in range(3)]
                cols[name] = [sum(one_s[s:e]) for s, e in zip(starts, ends)]
    return [walls[e] for e in ends], cols


def write_csv():
    times, cols = brute_force_deltas_t2()
    names = ["vCpuTimeUserMode", "vDiskSectorWrites", "vMemoryFree", "cDiskWriteBytes"]
    with open(os.path.join(HERE, "deltas_t2.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp"] + names)
        for k, t in enumerate(times):
            w.writerow([repr(t)] + [cols[n][k] for n in names])


def write_basic_snapshot():
    snap, _ = Collector(fixture_config("basic"), StepClock()).collect_snapshot()
    with open(os.path.join(HERE, "basic_snapshot.json"), "w") as f:
        f.write(serialize_snapshot(snap))


def write_plot_structure():
    import tempfile

    from ruprof.analysis import compute_deltas, load_run
    from ruprof.plot import render_plot
    from svgcheck import svg_structure

    series = compute_deltas(load_run(RUN), metrics=["vCpuTimeUserMode"])
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "p.svg")
        render_plot(series, path)
        structure = svg_structure(path)
    with open(os.path.join(HERE, "plot_structure.json"), "w") as f:
        json.dump(structure, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    build_run()
    write_csv()
    write_basic_snapshot()
    write_plot_structure()
