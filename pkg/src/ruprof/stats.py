"""Collection-latency and profiling-overhead statistics."""

import math
import statistics
from dataclasses import dataclass
from fractions import Fraction

# Upper bucket edges in milliseconds for the latency histogram.
HISTOGRAM_EDGES_MS = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 1500, 2000, 5000, 10000,
                      math.inf)


def nearest_rank(sorted_values, percentile):
    """Smallest value such that at least ``percentile`` % of values are <= it."""
    if not sorted_values:
        raise ValueError("no values")
    if not 0 < percentile <= 100:
        raise ValueError("percentile must be in (0, 100]")
    rank = math.ceil(Fraction(percentile) * len(sorted_values) / 100)
    return sorted_values[max(rank, 1) - 1]


@dataclass(frozen=True)
class CollectionLatencyStats:
    """Latency distribution of snapshot collection, in nanoseconds."""

    count: int
    p50: int
    p90: int
    p99: int
    max: int
    histogram: tuple
    latencies_ns: tuple

    def fraction_under(self, threshold_seconds):
        limit = threshold_seconds * 1e9
        return sum(1 for v in self.latencies_ns if v < limit) / self.count

    def to_dict(self, threshold_seconds=1.0):
        return {
            "count": self.count,
            "p50Ns": self.p50,
            "p90Ns": self.p90,
            "p99Ns": self.p99,
            "maxNs": self.max,
            "fractionUnderThreshold": self.fraction_under(threshold_seconds),
            "thresholdSeconds": threshold_seconds,
            "histogramMs": [["inf" if edge == math.inf else edge, n]
                            for edge, n in self.histogram],
        }


def latency_stats(latencies_ns):
    """Nearest-rank percentiles, max and a coarse histogram of latencies."""
    values = sorted(int(v) for v in latencies_ns)
    if not values:
        raise ValueError("latency_stats needs at least one latency")
    counts = [0] * len(HISTOGRAM_EDGES_MS)
    for v in values:
        ms = v / 1e6
        for i, edge in enumerate(HISTOGRAM_EDGES_MS):
            if ms <= edge:
                counts[i] += 1
                break
    return CollectionLatencyStats(
        count=len(values),
        p50=nearest_rank(values, 50),
        p90=nearest_rank(values, 90),
        p99=nearest_rank(values, 99),
        max=values[-1],
        histogram=tuple(zip(HISTOGRAM_EDGES_MS, counts)),
        latencies_ns=tuple(values),
    )


@dataclass(frozen=True)
class Overhead:
    mean_percent: float
    stddev_percent: float

    def to_dict(self):
        return {"meanPercent": self.mean_percent, "stddevPercent": self.stddev_percent}


def overhead_percent(baseline_runtimes, profiled_runtimes):
    """Relative runtime increase caused by profiling, in percent of the baseline mean.

    The spread is the sample standard deviation of the profiled runtimes,
    also expressed as a percentage of the baseline mean.
    """
    if not baseline_runtimes or not profiled_runtimes:
        raise ValueError("both runtime lists must be non-empty")
    base = statistics.fmean(baseline_runtimes)
    if base == 0:
        raise ValueError("baseline mean runtime is zero")
    prof = statistics.fmean(profiled_runtimes)
    spread = statistics.stdev(profiled_runtimes) if len(profiled_runtimes) > 1 else 0.0
    return Overhead((prof - base) / base * 100, spread / base * 100)
