import os
import shutil

import pytest

from ruprof.collector import CollectorConfig

HERE = os.path.dirname(os.path.abspath(__file__))
FIXTURES = os.path.join(HERE, "fixtures")
GOLDEN = os.path.join(HERE, "golden")


def fixture_root(scenario):
    return os.path.join(FIXTURES, scenario)


def fixture_config(scenario, **kwargs):
    root = fixture_root(scenario)
    kwargs.setdefault("proc_root", os.path.join(root, "proc"))
    kwargs.setdefault("cgroup_root", os.path.join(root, "sys", "fs", "cgroup"))
    return CollectorConfig(**kwargs)


def live_cgroup_v1():
    return os.path.isfile("/sys/fs/cgroup/cpuacct/cpuacct.stat")


class StepClock:
    """Deterministic clock: every read advances by ``step`` ns."""

    def __init__(self, start=1_000_000_000, wall=1_700_000_000_000_000_000, step=1000):
        self.now = start
        self.wall = wall
        self.step = step

    def monotonic_ns(self):
        self.now += self.step
        return self.now

    def time_ns(self):
        return self.wall + self.now

    def sleep(self, seconds, stop_event=None):
        self.now += int(round(seconds * 1e9))


class FakeClock:
    """Time only moves when something sleeps or advances it explicitly."""

    def __init__(self, start=5_000_000_000, wall=1_700_000_000_000_000_000):
        self.now = start
        self.wall = wall
        self.sleeps = []

    def monotonic_ns(self):
        return self.now

    def time_ns(self):
        return self.wall + self.now

    def advance(self, ns):
        self.now += ns

    def sleep(self, seconds, stop_event=None):
        ns = int(round(seconds * 1e9))
        self.sleeps.append(ns)
        self.now += ns


@pytest.fixture
def step_clock():
    return StepClock()


@pytest.fixture
def fake_clock():
    return FakeClock()


@pytest.fixture
def scratch_fixture(tmp_path):
    """Copy a fixture scenario somewhere it can be modified."""
    def copy(scenario):
        dest = tmp_path / scenario
        shutil.copytree(fixture_root(scenario), dest)
        return dest
    return copy


class FakeCollector:
    """Collector stand-in whose every collection takes exactly ``latency_ns``."""

    def __init__(self, clock, latency_ns):
        self.clock = clock
        self.latency_ns = latency_ns
        self.warnings = {}
        self.skipped_pids = 0
        self.calls = 0

    def collect_snapshot(self):
        from ruprof.metrics import HostMetrics, Snapshot

        start = self.clock.monotonic_ns()
        wall = self.clock.time_ns()
        self.clock.advance(self.latency_ns)
        self.calls += 1
        snap = Snapshot(wall_clock=wall / 1e9, monotonic_clock=start,
                        section_timestamps={"host": start}, collection_duration=self.latency_ns,
                        host=HostMetrics(vCpuTimeUserMode=self.calls))
        return snap, wall


def stop_after(sampler, ticks):
    """Make ``sampler`` stop itself once ``ticks`` ticks have run."""
    original = sampler.tick

    def tick():
        latency = original()
        if sampler.report.samples_written >= ticks:
            sampler.stop("test limit")
        return latency

    sampler.tick = tick
    return sampler


ACCEPTANCE_RESULTS = {}


def record_acceptance(number, title, passed, detail=""):
    """Remember one criterion's outcome for the end-of-run summary and print it now."""
    line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS, key=lambda n: (int(str(n)[:2].rstrip('ab')), str(n))):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
