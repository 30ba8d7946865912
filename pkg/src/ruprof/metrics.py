"""Metric catalog, snapshot schema and run metadata.

Every collected value lives in one of three sections of a snapshot:
host (names prefixed ``v``), container (``c``) and process (``p``).
Field names on the metric dataclasses are the metric names themselves so
that a snapshot document reads the same as the catalog.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Optional

SCHEMA_VERSION = 1

HOST = "host"
CONTAINER = "container"
PROCESS = "process"
LEVELS = (HOST, CONTAINER, PROCESS)
LEVEL_PREFIX = {HOST: "v", CONTAINER: "c", PROCESS: "p"}

COUNTER = "counter"
GAUGE = "gauge"


class MalformedSnapshotError(ValueError):
    """A snapshot document does not match the schema."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class MetricDescriptor:
    name: str
    level: str
    category: str
    source: str
    kind: str
    unit: str
    description: str = ""


def _d(name, level, category, source, kind, unit, description):
    return MetricDescriptor(name, level, category, source, kind, unit, description)


_CATALOG = (
    # host level, /proc
    _d("vCpuTimeUserMode", HOST, "cpu", "/proc/stat", COUNTER, "clock-ticks",
       "CPU time for processes executing in user mode"),
    _d("vCpuTimeKernelMode", HOST, "cpu", "/proc/stat", COUNTER, "clock-ticks",
       "CPU time for processes executing in kernel mode"),
    _d("vCpuIdleTime", HOST, "cpu", "/proc/stat", COUNTER, "clock-ticks",
       "CPU idle time"),
    _d("vCpuTimeIOWait", HOST, "cpu", "/proc/stat", COUNTER, "clock-ticks",
       "CPU time waiting for I/O to complete"),
    _d("vCpuContextSwitches", HOST, "cpu", "/proc/stat", COUNTER, "count",
       "Total number of context switches across all CPUs"),
    _d("vCpuNice", HOST, "cpu", "/proc/stat", COUNTER, "clock-ticks",
       "CPU time for niced processes in user mode"),
    _d("vCpuSteal", HOST, "cpu", "/proc/stat", COUNTER, "clock-ticks",
       "CPU time stolen by the hypervisor"),
    _d("vDiskSectorReads", HOST, "disk", "/proc/diskstats", COUNTER, "sectors",
       "Number of sectors read"),
    _d("vDiskSectorWrites", HOST, "disk", "/proc/diskstats", COUNTER, "sectors",
       "Number of sectors written"),
    _d("vDiskReadTime", HOST, "disk", "/proc/diskstats", COUNTER, "milliseconds",
       "Time spent reading"),
    _d("vDiskWriteTime", HOST, "disk", "/proc/diskstats", COUNTER, "milliseconds",
       "Time spent writing"),
    _d("vNetworkBytesRecvd", HOST, "network", "/proc/net/dev", COUNTER, "bytes",
       "Network bytes received"),
    _d("vNetworkBytesSent", HOST, "network", "/proc/net/dev", COUNTER, "bytes",
       "Network bytes sent"),
    _d("vMemoryTotal", HOST, "memory", "/proc/meminfo", GAUGE, "kilobytes",
       "Total usable memory"),
    _d("vMemoryFree", HOST, "memory", "/proc/meminfo", GAUGE, "kilobytes",
       "Unused memory"),
    _d("vMemoryBuffers", HOST, "memory", "/proc/meminfo", GAUGE, "kilobytes",
       "Memory in raw disk block buffers"),
    _d("vMemoryCached", HOST, "memory", "/proc/meminfo", GAUGE, "kilobytes",
       "Memory in the page cache"),
    _d("vLoadAvg", HOST, "cpu", "/proc/loadavg", GAUGE, "load",
       "1, 5 and 15 minute load averages"),
    _d("vId", HOST, "cpu", "/proc/sys/kernel/hostname", GAUGE, "identifier",
       "Host identifier"),
    # container level, cgroup v1
    _d("cCpuTimeUserMode", CONTAINER, "cpu", "/sys/fs/cgroup/cpuacct/cpuacct.stat",
       COUNTER, "clock-ticks", "CPU time consumed by tasks in user mode"),
    _d("cCpuTimeKernelMode", CONTAINER, "cpu", "/sys/fs/cgroup/cpuacct/cpuacct.stat",
       COUNTER, "clock-ticks", "CPU time consumed by tasks in kernel mode"),
    _d("cDiskSectorIO", CONTAINER, "disk", "/sys/fs/cgroup/blkio/blkio.sectors",
       COUNTER, "sectors", "Number of sectors transferred to or from specific devices"),
    _d("cDiskReadBytes", CONTAINER, "disk",
       "/sys/fs/cgroup/blkio/blkio.throttle.io_service_bytes", COUNTER, "bytes",
       "Number of bytes transferred from specific devices"),
    _d("cDiskWriteBytes", CONTAINER, "disk",
       "/sys/fs/cgroup/blkio/blkio.throttle.io_service_bytes", COUNTER, "bytes",
       "Number of bytes transferred to specific devices"),
    _d("cNetworkBytesRecvd", CONTAINER, "network", "/proc/net/dev", COUNTER, "bytes",
       "Bytes received by all interfaces in the container network namespace"),
    _d("cNetworkBytesSent", CONTAINER, "network", "/proc/net/dev", COUNTER, "bytes",
       "Bytes sent by all interfaces in the container network namespace"),
    _d("cMemoryUsed", CONTAINER, "memory", "/sys/fs/cgroup/memory/memory.usage_in_bytes",
       GAUGE, "bytes", "Current memory usage of the cgroup"),
    _d("cId", CONTAINER, "cpu", "/proc/self/cgroup", GAUGE, "identifier",
       "Container identifier"),
    _d("cNumProcesses", CONTAINER, "cpu", "/sys/fs/cgroup/cpuacct/cgroup.procs",
       GAUGE, "count", "Number of processes in the cgroup"),
    # process level, /proc/[pid]
    _d("pId", PROCESS, "cpu", "/proc/[pid]/stat", GAUGE, "identifier", "Process id"),
    _d("pName", PROCESS, "cpu", "/proc/[pid]/stat", GAUGE, "identifier", "Command name"),
    _d("pCpuTimeUserMode", PROCESS, "cpu", "/proc/[pid]/stat", COUNTER, "clock-ticks",
       "Time this process has been scheduled in user mode"),
    _d("pCpuTimeKernelMode", PROCESS, "cpu", "/proc/[pid]/stat", COUNTER, "clock-ticks",
       "Time this process has been scheduled in kernel mode"),
    _d("pVoluntaryContextSwitches", PROCESS, "cpu", "/proc/[pid]/status", COUNTER,
       "count", "Number of voluntary context switches"),
    _d("pNonvoluntaryContextSwitches", PROCESS, "cpu", "/proc/[pid]/status", COUNTER,
       "count", "Number of involuntary context switches"),
    _d("pBlockIODelays", PROCESS, "disk", "/proc/[pid]/stat", COUNTER, "clock-ticks",
       "Aggregated block I/O delays"),
    _d("pResidentSetSize", PROCESS, "memory", "/proc/[pid]/stat", GAUGE, "pages",
       "Number of pages the process has in real memory"),
    _d("pNumThreads", PROCESS, "cpu", "/proc/[pid]/stat", GAUGE, "count",
       "Number of threads"),
)

_BY_NAME = {d.name: d for d in _CATALOG}


def catalog():
    """Return the full, static list of metric descriptors."""
    return list(_CATALOG)


def descriptor(name):
    return _BY_NAME[name]


def counter_names(level=None):
    return [d.name for d in _CATALOG
            if d.kind == COUNTER and (level is None or d.level == level)]


@dataclass(frozen=True)
class HostMetrics:
    vCpuTimeUserMode: Optional[int] = None
    vCpuTimeKernelMode: Optional[int] = None
    vCpuIdleTime: Optional[int] = None
    vCpuTimeIOWait: Optional[int] = None
    vCpuContextSwitches: Optional[int] = None
    vCpuNice: Optional[int] = None
    vCpuSteal: Optional[int] = None
    vDiskSectorReads: Optional[int] = None
    vDiskSectorWrites: Optional[int] = None
    vDiskReadTime: Optional[int] = None
    vDiskWriteTime: Optional[int] = None
    vNetworkBytesRecvd: Optional[int] = None
    vNetworkBytesSent: Optional[int] = None
    vMemoryTotal: Optional[int] = None
    vMemoryFree: Optional[int] = None
    vMemoryBuffers: Optional[int] = None
    vMemoryCached: Optional[int] = None
    vLoadAvg: Optional[tuple] = None
    vId: Optional[str] = None


@dataclass(frozen=True)
class ContainerMetrics:
    cCpuTimeUserMode: Optional[int] = None
    cCpuTimeKernelMode: Optional[int] = None
    cDiskSectorIO: Optional[int] = None
    cDiskReadBytes: Optional[int] = None
    cDiskWriteBytes: Optional[int] = None
    cNetworkBytesRecvd: Optional[int] = None
    cNetworkBytesSent: Optional[int] = None
    cMemoryUsed: Optional[int] = None
    cId: Optional[str] = None
    cNumProcesses: Optional[int] = None


@dataclass(frozen=True)
class ProcessMetrics:
    pId: int
    pName: str
    pCpuTimeUserMode: Optional[int] = None
    pCpuTimeKernelMode: Optional[int] = None
    pVoluntaryContextSwitches: Optional[int] = None
    pNonvoluntaryContextSwitches: Optional[int] = None
    pBlockIODelays: Optional[int] = None
    pResidentSetSize: Optional[int] = None
    pNumThreads: Optional[int] = None


SECTION_TYPES = {HOST: HostMetrics, CONTAINER: ContainerMetrics, PROCESS: ProcessMetrics}


@dataclass(frozen=True)
class Snapshot:
    """One timestamped sample.

    ``section_timestamps`` maps a section name to the monotonic clock (ns)
    read immediately before that section's source files were opened.
    """

    wall_clock: float
    monotonic_clock: int
    section_timestamps: dict
    collection_duration: int
    host: Optional[HostMetrics] = None
    container: Optional[ContainerMetrics] = None
    processes: Optional[tuple] = None
    metadata: dict = field(default_factory=dict)

    def sections(self):
        return [name for name, value in ((HOST, self.host), (CONTAINER, self.container),
                                         (PROCESS, self.processes)) if value is not None]


@dataclass(frozen=True)
class RunMetadata:
    interval_seconds: float
    verbosity: tuple
    clock_ticks_per_second: int
    sector_size_bytes: int = 512
    start_wall_clock: float = 0.0
    workload_command: str = ""
    output_directory: str = ""

    def __post_init__(self):
        if not self.interval_seconds > 0:
            raise ValueError("interval_seconds must be positive")
        if not self.verbosity:
            raise ValueError("verbosity must name at least one level")
        unknown = set(self.verbosity) - set(LEVELS)
        if unknown:
            raise ValueError(f"unknown verbosity levels: {sorted(unknown)}")
        if self.sector_size_bytes <= 0:
            raise ValueError("sector_size_bytes must be positive")

    def to_dict(self):
        return {
            "schemaVersion": SCHEMA_VERSION,
            "intervalSeconds": self.interval_seconds,
            "verbosity": list(self.verbosity),
            "clockTicksPerSecond": self.clock_ticks_per_second,
            "sectorSizeBytes": self.sector_size_bytes,
            "startWallClock": self.start_wall_clock,
            "workloadCommand": self.workload_command,
            "outputDirectory": self.output_directory,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(
                interval_seconds=doc["intervalSeconds"],
                verbosity=tuple(doc["verbosity"]),
                clock_ticks_per_second=doc["clockTicksPerSecond"],
                sector_size_bytes=doc.get("sectorSizeBytes", 512),
                start_wall_clock=doc.get("startWallClock", 0.0),
                workload_command=doc.get("workloadCommand", ""),
                output_directory=doc.get("outputDirectory", ""),
            )
        except KeyError as exc:
            raise MalformedSnapshotError(f"run metadata missing {exc.args[0]!r}",
                                         key=exc.args[0]) from None


def canonical_verbosity(levels):
    """Order verbosity levels host, container, process and drop duplicates."""
    levels = set(levels)
    return tuple(level for level in LEVELS if level in levels)


def _section_to_dict(obj):
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def snapshot_to_dict(s):
    doc = {}
    if s.metadata:
        doc["metadata"] = dict(s.metadata)
    doc["wallClock"] = s.wall_clock
    doc["monotonicClock"] = s.monotonic_clock
    doc["sectionTimestamps"] = dict(s.section_timestamps)
    if s.host is not None:
        doc["host"] = _section_to_dict(s.host)
    if s.container is not None:
        doc["container"] = _section_to_dict(s.container)
    if s.processes is not None:
        doc["processes"] = [_section_to_dict(p) for p in s.processes]
    doc["collectionDuration"] = s.collection_duration
    return doc


def serialize_snapshot(s):
    """Serialize a snapshot to a deterministic JSON document."""
    return json.dumps(snapshot_to_dict(s), indent=2, ensure_ascii=False) + "\n"


_TOP_LEVEL_KEYS = ("metadata", "wallClock", "monotonicClock", "sectionTimestamps",
                   "host", "container", "processes", "collectionDuration")


def _expect_int(value, key, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedSnapshotError(f"{key}: expected integer, got {value!r}", key=key)
    return value


def _section_from_dict(cls, doc, where, strict):
    if not isinstance(doc, dict):
        raise MalformedSnapshotError(f"{where}: expected an object", key=where)
    names = {f.name for f in dataclasses.fields(cls)}
    if strict:
        for key in doc:
            if key not in names:
                raise MalformedSnapshotError(f"{where}.{key}: unknown key", key=f"{where}.{key}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{where}.{f.name}"
        if f.name not in doc:
            if f.default is dataclasses.MISSING:
                raise MalformedSnapshotError(f"{key}: required field missing", key=key)
            continue
        value = doc[f.name]
        unit = descriptor(f.name).unit
        if unit == "identifier":
            if f.name == "pId":
                value = _expect_int(value, key)
            elif value is not None and not isinstance(value, str):
                raise MalformedSnapshotError(f"{key}: expected string", key=key)
        elif unit == "load":
            if value is not None:
                if (not isinstance(value, list) or len(value) != 3
                        or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                   for v in value)):
                    raise MalformedSnapshotError(f"{key}: expected three numbers", key=key)
                value = tuple(float(v) for v in value)
        else:
            value = _expect_int(value, key, allow_none=True)
        kwargs[f.name] = value
    return cls(**kwargs)


def snapshot_from_dict(doc, strict=False):
    if not isinstance(doc, dict):
        raise MalformedSnapshotError("snapshot document must be a JSON object")
    if strict:
        for key in doc:
            if key not in _TOP_LEVEL_KEYS:
                raise MalformedSnapshotError(f"{key}: unknown key", key=key)
    for key in ("wallClock", "monotonicClock", "sectionTimestamps", "collectionDuration"):
        if key not in doc:
            raise MalformedSnapshotError(f"{key}: required field missing", key=key)
    wall = doc["wallClock"]
    if isinstance(wall, bool) or not isinstance(wall, (int, float)):
        raise MalformedSnapshotError(f"wallClock: expected number, got {wall!r}", key="wallClock")
    stamps = doc["sectionTimestamps"]
    if not isinstance(stamps, dict):
        raise MalformedSnapshotError("sectionTimestamps: expected an object",
                                     key="sectionTimestamps")
    for name, value in stamps.items():
        _expect_int(value, f"sectionTimestamps.{name}")
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise MalformedSnapshotError("metadata: expected an object", key="metadata")

    host = container = processes = None
    if doc.get("host") is not None:
        host = _section_from_dict(HostMetrics, doc["host"], "host", strict)
    if doc.get("container") is not None:
        container = _section_from_dict(ContainerMetrics, doc["container"], "container", strict)
    if doc.get("processes") is not None:
        if not isinstance(doc["processes"], list):
            raise MalformedSnapshotError("processes: expected a list", key="processes")
        processes = tuple(
            _section_from_dict(ProcessMetrics, p, f"processes[{i}]", strict)
            for i, p in enumerate(doc["processes"])
        )
    if host is None and container is None and processes is None:
        raise MalformedSnapshotError("snapshot has no host, container or processes section")
    return Snapshot(
        wall_clock=float(wall),
        monotonic_clock=_expect_int(doc["monotonicClock"], "monotonicClock"),
        section_timestamps=dict(stamps),
        collection_duration=_expect_int(doc["collectionDuration"], "collectionDuration"),
        host=host,
        container=container,
        processes=processes,
        metadata=dict(metadata),
    )


def parse_snapshot(text, strict=False):
    """Parse a snapshot document.

    With ``strict`` unknown keys are rejected; otherwise they are ignored.
    Raises MalformedSnapshotError naming the first offending key or line.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedSnapshotError(f"line {exc.lineno}: {exc.msg}") from None
    return snapshot_from_dict(doc, strict=strict)


def snapshot_filename(epoch_ns):
    return f"{int(epoch_ns)}.json"


def section_values(section: Any):
    """Yield (name, value) pairs for a metric section."""
    for f in dataclasses.fields(section):
        yield f.name, getattr(section, f.name)
