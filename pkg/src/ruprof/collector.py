"""Assemble snapshots from a procfs root and a cgroup v1 root.

Both roots are configurable so that the whole collector runs against a
fixture tree. Data-source problems never abort a collection: the
affected fields are left as None and a warning counter is bumped.
"""

import collections
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import parsers
from .metrics import (CONTAINER, HOST, LEVELS, PROCESS, ContainerMetrics, HostMetrics,
                      ProcessMetrics, Snapshot, canonical_verbosity)
from .parsers import SourceFormatError

log = logging.getLogger(__name__)

INSIDE = "inside"
OUTSIDE = "outside"

# Container runtimes place a container's cgroup under one of these, relative
# to each controller mount: cgroupfs driver first, systemd driver second.
_CGROUP_ID_TEMPLATES = ("docker/{id}", "system.slice/docker-{id}.scope")


class UnsupportedLayoutError(RuntimeError):
    """The cgroup root is not a cgroup v1 hierarchy."""


class ConfigError(ValueError):
    pass


class SystemClock:
    """Real clocks. Tests substitute an object with the same three methods."""

    def monotonic_ns(self):
        return time.monotonic_ns()

    def time_ns(self):
        return time.time_ns()

    def sleep(self, seconds, stop_event=None):
        if seconds <= 0:
            return
        if stop_event is None:
            time.sleep(seconds)
        else:
            stop_event.wait(seconds)


@dataclass
class CollectorConfig:
    proc_root: str = "/proc"
    cgroup_root: str = "/sys/fs/cgroup"
    verbosity: tuple = LEVELS
    device_filter: Optional[frozenset] = None
    exclude_loopback: bool = True
    mode: str = INSIDE
    # Path of the container's cgroup below each controller mount. Empty in
    # inside mode, where the mount already is the container's own cgroup.
    cgroup_path: str = ""
    container_id: Optional[str] = None

    def __post_init__(self):
        self.verbosity = canonical_verbosity(self.verbosity)
        if not self.verbosity:
            raise ConfigError("verbosity must include at least one of host, container, process")
        if self.mode not in (INSIDE, OUTSIDE):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.device_filter is not None:
            self.device_filter = frozenset(self.device_filter)
        if not os.path.isdir(self.proc_root) or not os.access(self.proc_root, os.R_OK):
            raise ConfigError(f"proc root {self.proc_root!r} is not a readable directory")
        if CONTAINER in self.verbosity:
            root = Path(self.cgroup_root)
            if not root.is_dir() or not os.access(root, os.R_OK):
                raise ConfigError(f"cgroup root {self.cgroup_root!r} is not a readable directory")
            if (root / "cgroup.controllers").exists() and not _controller_dir(root, "cpuacct"):
                raise UnsupportedLayoutError(
                    f"{self.cgroup_root} is a cgroup v2 hierarchy; only cgroup v1 is supported")


def _controller_dir(root, controller):
    for name in (controller, "cpu,cpuacct" if controller in ("cpu", "cpuacct") else None):
        if name and (root / name).is_dir():
            return root / name
    return None


def find_container_cgroup(cgroup_root, container_id):
    """Locate a named container's cgroup path under a v1 hierarchy."""
    root = Path(cgroup_root)
    cpuacct = _controller_dir(root, "cpuacct")
    if cpuacct is None:
        raise ConfigError(f"no cpuacct controller under {cgroup_root}")
    for template in _CGROUP_ID_TEMPLATES:
        rel = template.format(id=container_id)
        if (cpuacct / rel).is_dir():
            return rel
    # short ids: match by prefix
    for template in _CGROUP_ID_TEMPLATES:
        parent = cpuacct / os.path.dirname(template)
        prefix = os.path.basename(template).split("{id}")[0] + container_id
        if parent.is_dir():
            for child in sorted(parent.iterdir()):
                if child.name.startswith(prefix) and child.is_dir():
                    return os.path.join(os.path.dirname(template), child.name)
    raise ConfigError(f"no cgroup found for container {container_id!r}")


class Collector:
    """Reads source files and builds Snapshot objects.

    One collector is used by one sampling thread at a time.
    """

    def __init__(self, config, clock=None):
        self.config = config
        self.clock = clock or SystemClock()
        self.proc = Path(config.proc_root)
        self.cgroup = Path(config.cgroup_root)
        self.warnings = collections.Counter()
        self.skipped_pids = 0

    # -- helpers ---------------------------------------------------------

    def _read(self, path):
        with open(path, "r", encoding="utf-8", errors="replace") as f:
            return f.read()

    def _warn(self, section, source, exc):
        key = f"{section}:{source}:{type(exc).__name__}"
        if not self.warnings[key]:
            log.warning("%s: %s unavailable (%s)", section, source, exc)
        self.warnings[key] += 1

    def _source(self, section, path, parse, *args):
        try:
            return parse(self._read(path), *args)
        except (OSError, SourceFormatError) as exc:
            self._warn(section, str(path), exc)
            return None

    def _cgroup_file(self, controller, name):
        base = _controller_dir(self.cgroup, controller)
        if base is None:
            return self.cgroup / controller / self.config.cgroup_path.lstrip("/") / name
        return base / self.config.cgroup_path.lstrip("/") / name

    def _net_dev_path(self, container):
        if container and self.config.mode == OUTSIDE:
            pids = self.cgroup_pids()
            if pids:
                return self.proc / str(pids[0]) / "net" / "dev"
        return self.proc / "net" / "dev"

    def cgroup_pids(self):
        try:
            return parsers.parse_cgroup_procs(self._read(self._cgroup_file("cpuacct", "cgroup.procs")))
        except (OSError, SourceFormatError):
            return None

    def list_pids(self):
        """Pids to profile: cgroup members when readable, else every pid under proc root."""
        pids = None
        if CONTAINER in self.config.verbosity or self.config.mode == OUTSIDE:
            pids = self.cgroup_pids()
        if pids is None:
            pids = [int(name) for name in os.listdir(self.proc) if name.isdigit()]
        return sorted(set(pids))

    # -- sections --------------------------------------------------------

    def collect_host(self):
        stamp = self.clock.monotonic_ns()
        cfg = self.config
        values = {}
        cpu = self._source(HOST, self.proc / "stat", parsers.parse_proc_stat)
        if cpu is not None:
            values.update(
                vCpuTimeUserMode=cpu.user,
                vCpuTimeKernelMode=cpu.system,
                vCpuIdleTime=cpu.idle,
                vCpuTimeIOWait=cpu.iowait,
                vCpuContextSwitches=cpu.context_switches,
                vCpuNice=cpu.nice,
                vCpuSteal=cpu.steal,
            )
        disks = self._source(HOST, self.proc / "diskstats", parsers.parse_proc_diskstats,
                             cfg.device_filter)
        if disks is not None:
            values.update(
                vDiskSectorReads=sum(d.sectors_read for d in disks),
                vDiskSectorWrites=sum(d.sectors_written for d in disks),
                vDiskReadTime=sum(d.read_time_ms for d in disks),
                vDiskWriteTime=sum(d.write_time_ms for d in disks),
            )
        net = self._source(HOST, self.proc / "net" / "dev", parsers.parse_proc_net_dev,
                           cfg.exclude_loopback)
        if net is not None:
            values.update(
                vNetworkBytesRecvd=sum(n.bytes_recvd for n in net),
                vNetworkBytesSent=sum(n.bytes_sent for n in net),
            )
        mem = self._source(HOST, self.proc / "meminfo", parsers.parse_proc_meminfo)
        if mem is not None:
            values.update(
                vMemoryTotal=mem.total_kb,
                vMemoryFree=mem.free_kb,
                vMemoryBuffers=mem.buffers_kb,
                vMemoryCached=mem.cached_kb,
            )
        values["vLoadAvg"] = self._source(HOST, self.proc / "loadavg", parsers.parse_proc_loadavg)
        host_id = self._source(HOST, self.proc / "sys" / "kernel" / "hostname", str.strip)
        values["vId"] = host_id or None
        return HostMetrics(**values), stamp

    def _container_id(self):
        if self.config.container_id:
            return self.config.container_id
        if self.config.cgroup_path.strip("/"):
            return os.path.basename(self.config.cgroup_path.rstrip("/"))
        try:
            paths = parsers.parse_proc_self_cgroup(self._read(self.proc / "self" / "cgroup"))
        except OSError:
            paths = {}
        path = paths.get("cpuacct", "/").rstrip("/")
        if path:
            return os.path.basename(path)
        # cgroup namespace hides the path; the runtime sets hostname to the short id
        try:
            return self._read(self.proc / "sys" / "kernel" / "hostname").strip() or None
        except OSError:
            return None

    def collect_container(self):
        stamp = self.clock.monotonic_ns()
        values = {}
        cpu = self._source(CONTAINER, self._cgroup_file("cpuacct", "cpuacct.stat"),
                           parsers.parse_cgroup_cpuacct)
        if cpu is not None:
            values.update(cCpuTimeUserMode=cpu.user, cCpuTimeKernelMode=cpu.system)

        service_path = self._cgroup_file("blkio", "blkio.throttle.io_service_bytes")
        try:
            service_text = self._read(service_path)
        except OSError as exc:
            self._warn(CONTAINER, str(service_path), exc)
            service_text = None
        if service_text is not None:
            sectors_path = self._cgroup_file("blkio", "blkio.sectors")
            try:
                sectors_text = self._read(sectors_path)
            except OSError:
                sectors_text = None
            blkio = parsers.parse_cgroup_blkio(sectors_text, service_text)
            values.update(cDiskSectorIO=blkio.sectors_total, cDiskReadBytes=blkio.read_bytes,
                          cDiskWriteBytes=blkio.write_bytes)

        net = self._source(CONTAINER, self._net_dev_path(container=True),
                           parsers.parse_proc_net_dev, self.config.exclude_loopback)
        if net is not None:
            values.update(cNetworkBytesRecvd=sum(n.bytes_recvd for n in net),
                          cNetworkBytesSent=sum(n.bytes_sent for n in net))
        values["cMemoryUsed"] = self._source(
            CONTAINER, self._cgroup_file("memory", "memory.usage_in_bytes"),
            parsers.parse_single_uint, "memory.usage_in_bytes")
        pids = self.cgroup_pids()
        values["cNumProcesses"] = len(pids) if pids is not None else None
        values["cId"] = self._container_id()
        return ContainerMetrics(**values), stamp

    def _collect_pid(self, pid):
        base = self.proc / str(pid)
        try:
            stat = parsers.parse_pid_stat(self._read(base / "stat"))
            status = parsers.parse_pid_status(self._read(base / "status"))
        except OSError:
            # process exited between enumeration and read
            self.skipped_pids += 1
            return None
        except SourceFormatError as exc:
            self.skipped_pids += 1
            self._warn(PROCESS, str(base / "stat"), exc)
            return None
        return ProcessMetrics(
            pId=stat.pid,
            pName=stat.comm,
            pCpuTimeUserMode=stat.utime,
            pCpuTimeKernelMode=stat.stime,
            pVoluntaryContextSwitches=status.voluntary_ctxt_switches,
            pNonvoluntaryContextSwitches=status.nonvoluntary_ctxt_switches,
            pBlockIODelays=stat.delayacct_blkio_ticks,
            pResidentSetSize=stat.rss,
            pNumThreads=stat.num_threads,
        )

    def collect_processes(self):
        stamp = self.clock.monotonic_ns()
        out = []
        for pid in self.list_pids():
            record = self._collect_pid(pid)
            if record is not None:
                out.append(record)
        return tuple(out), stamp

    def collect_snapshot(self):
        """Collect the sections selected by verbosity in host, container, process order."""
        start = self.clock.monotonic_ns()
        wall_ns = self.clock.time_ns()
        stamps = {}
        sections = {}
        for level, collect in ((HOST, self.collect_host), (CONTAINER, self.collect_container),
                               (PROCESS, self.collect_processes)):
            if level in self.config.verbosity:
                sections[level], stamps[level] = collect()
        end = self.clock.monotonic_ns()
        snap = Snapshot(
            wall_clock=wall_ns / 1e9,
            monotonic_clock=start,
            section_timestamps=stamps,
            collection_duration=end - start,
            host=sections.get(HOST),
            container=sections.get(CONTAINER),
            processes=sections.get(PROCESS),
        )
        return snap, wall_ns


def collect_snapshot(config, clock=None):
    snap, _ = Collector(config, clock).collect_snapshot()
    return snap
