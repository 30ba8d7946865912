"""Turn a run directory into per-metric delta series.

Counters are differenced, gauges passed through, and derived metrics are
evaluated from small arithmetic formulas over already resolved series.
Samples are grouped into buckets of the target interval; a counter point
is the bucket-end value minus the bucket-start value, so deltas at any
target interval telescope to last-minus-first.
"""

import ast
import configparser
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .collector import ConfigError
from .metrics import (COUNTER, PROCESS, MalformedSnapshotError, RunMetadata,
                      canonical_verbosity, catalog, descriptor, parse_snapshot)
from .sampler import RUN_METADATA_FILE

log = logging.getLogger(__name__)

DELTA = "delta"
RAW = "raw"
DERIVED = "derived"
METHODS = (DELTA, RAW, DERIVED)

# Names usable in formulas besides metric names.
RUN_CONSTANTS = ("sectorSizeBytes", "clockTicksPerSecond", "intervalSeconds")

_SNAPSHOT_NAME = re.compile(r"[0-9]+\.json\Z")
_PROCESS_SERIES = re.compile(r"(p[A-Za-z]+)\[([0-9]+)\]\Z")


class DerivationUnavailable(LookupError):
    pass


@dataclass
class ProfileRun:
    metadata: RunMetadata
    snapshots: list
    warnings: list = field(default_factory=list)
    directory: str = ""

    def __len__(self):
        return len(self.snapshots)


@dataclass(frozen=True)
class DeltaRule:
    metric_name: str
    method: str
    formula: Optional[str] = None
    category: Optional[str] = None
    unit: Optional[str] = None


@dataclass(frozen=True)
class DeltaSeries:
    metric_name: str
    interval_seconds: float
    points: tuple
    resets: tuple = ()
    method: str = DELTA
    unit: str = ""
    category: str = ""

    @property
    def values(self):
        return [v for _, v in self.points]

    @property
    def timestamps(self):
        return [t for t, _ in self.points]


def load_run(directory):
    """Load every snapshot file in ``directory``, sorted by monotonic clock.

    Unparseable snapshot files are skipped and reported in ``warnings``.
    """
    names = sorted(n for n in os.listdir(directory) if _SNAPSHOT_NAME.match(n))
    warnings = []
    snapshots = []
    for name in names:
        path = os.path.join(directory, name)
        try:
            with open(path, encoding="utf-8") as f:
                snapshots.append(parse_snapshot(f.read()))
        except (OSError, UnicodeDecodeError, MalformedSnapshotError) as exc:
            warnings.append(f"{name}: {exc}")
    if not snapshots:
        raise FileNotFoundError(f"no readable snapshots in {directory}")
    snapshots.sort(key=lambda s: s.monotonic_clock)

    meta_path = os.path.join(directory, RUN_METADATA_FILE)
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as f:
            metadata = RunMetadata.from_dict(json.load(f))
    else:
        warnings.append(f"{RUN_METADATA_FILE} missing; interval inferred from snapshots")
        metadata = RunMetadata(
            interval_seconds=_infer_interval(snapshots),
            verbosity=canonical_verbosity(snapshots[0].sections()),
            clock_ticks_per_second=os.sysconf("SC_CLK_TCK"),
            output_directory=os.path.abspath(directory),
        )
    for w in warnings:
        log.warning("%s", w)
    return ProfileRun(metadata, snapshots, warnings, directory)


def _infer_interval(snapshots):
    gaps = sorted(b.monotonic_clock - a.monotonic_clock for a, b in zip(snapshots, snapshots[1:]))
    if not gaps:
        return 1.0
    median = gaps[len(gaps) // 2] / 1e9
    # scheduling jitter is a few ms; intervals of 0.1 s and up are taken to 10 ms
    return max(round(median, 2 if median >= 0.1 else 3), 0.001)


# -- rules -----------------------------------------------------------------

_NUMERIC_UNITS_EXCLUDED = ("identifier", "load")

BUILTIN_DERIVED = (
    DeltaRule("vBytesWritten", DERIVED, "vDiskSectorWrites * sectorSizeBytes", "disk", "bytes"),
    DeltaRule("vBytesRead", DERIVED, "vDiskSectorReads * sectorSizeBytes", "disk", "bytes"),
    DeltaRule("vMemoryUsed", DERIVED, "vMemoryTotal - vMemoryFree", "memory", "kilobytes"),
)


def numeric_metrics():
    return [d for d in catalog() if d.unit not in _NUMERIC_UNITS_EXCLUDED]


def default_rules():
    rules = [DeltaRule(d.name, DELTA if d.kind == COUNTER else RAW) for d in numeric_metrics()]
    return rules + list(BUILTIN_DERIVED)


def _formula_names(formula):
    try:
        tree = ast.parse(formula, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad formula {formula!r}: {exc.msg}") from None
    names = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Name):
            names.append(node.id)
        elif not isinstance(node, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant,
                                   ast.Add, ast.Sub, ast.Mult, ast.Div, ast.USub, ast.UAdd,
                                   ast.Load)):
            raise ConfigError(f"formula {formula!r}: {type(node).__name__} not allowed")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"formula {formula!r}: only numeric constants allowed")
    return tree, names


def validate_rules(rules):
    """Check every rule before any computation.

    Derived rules may only reference catalog metrics, run constants or
    derived metrics defined earlier in the list, which keeps them acyclic.
    """
    numeric = {d.name for d in numeric_metrics()}
    defined = set()
    for rule in rules:
        if rule.method not in METHODS:
            raise ConfigError(f"{rule.metric_name}: unknown method {rule.method!r}")
        if rule.method in (DELTA, RAW):
            if rule.metric_name not in numeric:
                raise ConfigError(f"{rule.metric_name}: not a numeric metric in the catalog")
            if rule.method == DELTA and descriptor(rule.metric_name).kind != COUNTER:
                raise ConfigError(f"{rule.metric_name}: delta rule on a gauge metric")
        else:
            if not rule.formula:
                raise ConfigError(f"{rule.metric_name}: derived rule without formula")
            if rule.metric_name in numeric:
                raise ConfigError(f"{rule.metric_name}: derived name shadows a catalog metric")
            _, names = _formula_names(rule.formula)
            for name in names:
                if name in RUN_CONSTANTS or name in defined:
                    continue
                if name not in numeric:
                    raise ConfigError(f"{rule.metric_name}: formula references unknown "
                                      f"metric {name!r}")
                if descriptor(name).level == PROCESS:
                    raise ConfigError(f"{rule.metric_name}: process metrics cannot be "
                                      "used in formulas")
        defined.add(rule.metric_name)
    return rules


def load_delta_config(path, base=None):
    """Read a ``delta_configuration.ini`` file.

    ``[deltas]`` maps a metric name to ``delta``, ``raw`` or
    ``derived: <formula>``. Entries override ``base`` (the default rules)
    and new derived metrics are appended in file order.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as f:
        parser.read_file(f)
    if not parser.has_section("deltas"):
        raise ConfigError(f"{path}: missing [deltas] section")
    rules = list(default_rules() if base is None else base)
    index = {r.metric_name: i for i, r in enumerate(rules)}
    for name, value in parser.items("deltas"):
        method, _, formula = value.partition(":")
        method = method.strip()
        formula = formula.strip() or None
        rule = DeltaRule(name, method, formula,
                         category=parser.get(name, "category", fallback=None)
                         if parser.has_section(name) else None,
                         unit=parser.get(name, "unit", fallback=None)
                         if parser.has_section(name) else None)
        if name in index:
            rules[index[name]] = rule
        else:
            index[name] = len(rules)
            rules.append(rule)
    return validate_rules(rules)


# -- series extraction ------------------------------------------------------

def _value(snapshot, name, pid=None):
    level = descriptor(name).level
    if level == PROCESS:
        for p in snapshot.processes or ():
            if p.pId == pid:
                return getattr(p, name)
        return None
    section = getattr(snapshot, level)
    return None if section is None else getattr(section, name)


def process_ids(run):
    pids = set()
    for s in run.snapshots:
        for p in s.processes or ():
            pids.add(p.pId)
    return sorted(pids)


def raw_values(run, name, pid=None):
    return [_value(s, name, pid) for s in run.snapshots]


def bucket_chain(run, target_interval):
    """Indices of the snapshots that close each bucket, starting with the first sample."""
    snaps = run.snapshots
    if not snaps:
        return []
    interval = Fraction(str(run.metadata.interval_seconds))
    target = Fraction(str(target_interval))
    interval_ns = interval * 1_000_000_000
    t0 = snaps[0].monotonic_clock
    chain = [0]
    prev_bucket = 0
    for i in range(1, len(snaps)):
        # nominal tick number absorbs scheduling jitter
        nominal = round(Fraction(snaps[i].monotonic_clock - t0) / interval_ns)
        bucket = math.floor(nominal * interval / target)
        if bucket != prev_bucket:
            chain.append(i)
            prev_bucket = bucket
    if chain[-1] != len(snaps) - 1:
        chain.append(len(snaps) - 1)
    return chain if len(chain) > 1 else []


def _resolve(values, method, chain):
    points = []
    resets = []
    for k, (a, b) in enumerate(zip(chain, chain[1:])):
        end = values[b]
        if method == RAW:
            points.append(end)
            continue
        start = values[a]
        if start is None or end is None:
            points.append(None)
            continue
        diff = end - start
        if diff < 0:
            # counter reset: flag and zero rather than emit a negative delta
            resets.append(k)
            diff = 0
        points.append(diff)
    return points, resets


def _evaluate(tree, env):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand)
            if v is None:
                return None
            return -v if isinstance(node.op, ast.USub) else v
        left, right = ev(node.left), ev(node.right)
        if left is None or right is None:
            return None
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if right == 0:
            return None
        return left / right
    return ev(tree)


def compute_deltas(run, rules=None, target_interval=None, metrics=None):
    """Resolve ``rules`` over ``run`` at ``target_interval`` seconds.

    ``metrics`` optionally restricts the output to the named series; a
    process metric name selects that metric for every pid.
    """
    rules = validate_rules(list(default_rules() if rules is None else rules))
    interval = run.metadata.interval_seconds
    if target_interval is None:
        target_interval = interval
    if Fraction(str(target_interval)) < Fraction(str(interval)):
        raise ConfigError(f"target interval {target_interval} is shorter than the run "
                          f"interval {interval}")
    chain = bucket_chain(run, target_interval)
    times = [run.snapshots[i].wall_clock for i in chain[1:]]
    constants = {
        "sectorSizeBytes": run.metadata.sector_size_bytes,
        "clockTicksPerSecond": run.metadata.clock_ticks_per_second,
        "intervalSeconds": target_interval,
    }
    pids = process_ids(run)
    numeric = {d.name for d in numeric_metrics()}
    resolved = {}
    out = []
    for rule in rules:
        if rule.method == DERIVED:
            tree, names = _formula_names(rule.formula)
            for n in names:
                if n not in resolved and n not in constants and n in numeric:
                    # referenced but not itself requested: resolve with its default method
                    d = descriptor(n)
                    raw = raw_values(run, n)
                    if not all(v is None for v in raw):
                        resolved[n] = _resolve(raw, DELTA if d.kind == COUNTER else RAW, chain)
            if any(n not in resolved and n not in constants for n in names):
                continue
            columns = {n: resolved[n][0] for n in names if n in resolved}
            values = []
            for k in range(len(times)):
                env = dict(constants)
                env.update({n: col[k] for n, col in columns.items()})
                values.append(_evaluate(tree, env))
            resolved[rule.metric_name] = (values, [])
            out.append(DeltaSeries(rule.metric_name, target_interval, tuple(zip(times, values)),
                                   (), DERIVED, rule.unit or "", rule.category or ""))
            continue
        d = descriptor(rule.metric_name)
        keys = [(f"{d.name}[{pid}]", pid) for pid in pids] if d.level == PROCESS \
            else [(d.name, None)]
        for key, pid in keys:
            raw = raw_values(run, d.name, pid)
            if all(v is None for v in raw):
                continue
            values, resets = _resolve(raw, rule.method, chain)
            resolved[key] = (values, resets)
            out.append(DeltaSeries(key, target_interval, tuple(zip(times, values)),
                                   tuple(resets), rule.method, d.unit, d.category))
    if metrics is not None:
        wanted = set(metrics)
        out = [s for s in out if s.metric_name in wanted or _base_name(s.metric_name) in wanted]
    return out


def _base_name(series_name):
    m = _PROCESS_SERIES.match(series_name)
    return m.group(1) if m else series_name


def derive_metric(run, name, target_interval=None):
    """One of the built-in derivations (vBytesWritten, vBytesRead, vMemoryUsed)."""
    rules = {r.metric_name: r for r in BUILTIN_DERIVED}
    if name not in rules:
        raise KeyError(f"no built-in derivation named {name!r}")
    rule = rules[name]
    _, inputs = _formula_names(rule.formula)
    inputs = [n for n in inputs if n not in RUN_CONSTANTS]
    needed = []
    for metric in inputs:
        if all(v is None for v in raw_values(run, metric)):
            raise DerivationUnavailable(f"{name} needs {metric}, which the run does not contain")
        d = descriptor(metric)
        needed.append(DeltaRule(metric, DELTA if d.kind == COUNTER else RAW))
    series = compute_deltas(run, needed + [rule], target_interval)
    return next(s for s in series if s.metric_name == name)
