"""Periodic sampling loop.

Ticks are scheduled against a fixed nominal timeline: tick ``i + 1`` is
due one interval after the nominal start of tick ``i``, so collection and
write time are subtracted from the sleep and errors do not accumulate.
When a tick overruns its interval the next tick starts immediately and
the timeline is re-anchored at that moment.
"""

import json
import logging
import os
import threading
from dataclasses import dataclass, field

from .collector import Collector, SystemClock
from .metrics import serialize_snapshot, snapshot_filename
from .stats import latency_stats

log = logging.getLogger(__name__)

RUN_METADATA_FILE = "run_metadata.json"
SAMPLER_REPORT_FILE = "sampler_report.json"


@dataclass
class SamplerReport:
    samples_written: int = 0
    latencies_ns: list = field(default_factory=list)
    tick_starts_ns: list = field(default_factory=list)
    sleeps_ns: list = field(default_factory=list)
    overruns: int = 0
    warnings: dict = field(default_factory=dict)
    skipped_pids: int = 0
    stop_reason: str = ""

    def to_dict(self):
        return {
            "samplesWritten": self.samples_written,
            "overruns": self.overruns,
            "stopReason": self.stop_reason,
            "skippedPids": self.skipped_pids,
            "warnings": dict(self.warnings),
            "latenciesNs": list(self.latencies_ns),
            "tickStartsNs": list(self.tick_starts_ns),
            "sleepsNs": list(self.sleeps_ns),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            samples_written=doc["samplesWritten"],
            latencies_ns=list(doc.get("latenciesNs", [])),
            tick_starts_ns=list(doc.get("tickStartsNs", [])),
            sleeps_ns=list(doc.get("sleepsNs", [])),
            overruns=doc.get("overruns", 0),
            warnings=dict(doc.get("warnings", {})),
            skipped_pids=doc.get("skippedPids", 0),
            stop_reason=doc.get("stopReason", ""),
        )


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def write_run_metadata(metadata, out_dir):
    _write_atomic(os.path.join(out_dir, RUN_METADATA_FILE),
                  json.dumps(metadata.to_dict(), indent=2) + "\n")


class Sampler:
    """Collect a snapshot every ``interval`` seconds into ``out_dir``.

    ``stop()`` may be called from any thread. ``run()`` blocks until a stop
    is requested or ``max_duration`` seconds have elapsed.
    """

    def __init__(self, collector, metadata, out_dir, clock=None, max_duration=None,
                 write_files=True, stop_event=None):
        self.collector = collector
        self.metadata = metadata
        self.out_dir = out_dir
        self.clock = clock or collector.clock or SystemClock()
        self.max_duration = max_duration
        self.write_files = write_files
        self.interval_ns = int(round(metadata.interval_seconds * 1e9))
        self.report = SamplerReport()
        self.first_tick = threading.Event()
        self._stop = stop_event if stop_event is not None else threading.Event()
        self._stop_reason = ""
        self._last_name_ns = 0

    def stop(self, reason="stop signal"):
        if not self._stop.is_set():
            self._stop_reason = reason
        self._stop.set()

    @property
    def stop_requested(self):
        return self._stop.is_set()

    def _write(self, snapshot, wall_ns):
        # filenames must strictly increase even if the wall clock steps back
        name_ns = max(wall_ns, self._last_name_ns + 1)
        self._last_name_ns = name_ns
        _write_atomic(os.path.join(self.out_dir, snapshot_filename(name_ns)),
                      serialize_snapshot(snapshot))

    def tick(self):
        """Collect and persist one snapshot; return its latency in ns."""
        t0 = self.clock.monotonic_ns()
        self.report.tick_starts_ns.append(t0)
        snapshot, wall_ns = self.collector.collect_snapshot()
        if self.write_files:
            self._write(snapshot, wall_ns)
        self.report.samples_written += 1
        latency = self.clock.monotonic_ns() - t0
        self.report.latencies_ns.append(latency)
        return latency

    def run(self):
        if self.write_files:
            os.makedirs(self.out_dir, exist_ok=True)
            write_run_metadata(self.metadata, self.out_dir)
        started = nominal = self.clock.monotonic_ns()
        deadline = None
        if self.max_duration is not None:
            deadline = started + int(self.max_duration * 1e9)
        try:
            while not self._stop.is_set():
                self.tick()
                self.first_tick.set()
                nominal += self.interval_ns
                now = self.clock.monotonic_ns()
                if deadline is not None and now >= deadline:
                    self.stop("max duration")
                    break
                if now >= nominal:
                    self.report.overruns += 1
                    self.report.sleeps_ns.append(0)
                    nominal = now
                    continue
                wait = nominal - now
                if deadline is not None:
                    wait = min(wait, deadline - now)
                self.report.sleeps_ns.append(wait)
                self.clock.sleep(wait / 1e9, self._stop)
                if deadline is not None and self.clock.monotonic_ns() >= deadline:
                    self.stop("max duration")
        finally:
            self.first_tick.set()
            self.report.stop_reason = self._stop_reason or "stop signal"
            self.report.warnings = dict(self.collector.warnings)
            self.report.skipped_pids = self.collector.skipped_pids
            if self.write_files:
                _write_atomic(os.path.join(self.out_dir, SAMPLER_REPORT_FILE),
                              json.dumps(self.report.to_dict(), indent=1) + "\n")
        return self.report


def run_sampler(collector, metadata, out_dir, stop_event=None, clock=None, max_duration=None):
    """Run a sampler until ``stop_event`` is set or ``max_duration`` elapses."""
    sampler = Sampler(collector, metadata, out_dir, clock=clock, max_duration=max_duration,
                      stop_event=stop_event)
    return sampler.run()


def measure_self_latency(config, n, clock=None):
    """Collect ``n`` snapshots without writing anything and summarize their latency."""
    if n < 1:
        raise ValueError("n must be at least 1")
    collector = Collector(config, clock)
    latencies = []
    for _ in range(n):
        snap, _ = collector.collect_snapshot()
        latencies.append(snap.collection_duration)
    return latency_stats(latencies)
