"""Pure text parsers for procfs and cgroup v1 accounting files.

Nothing here touches the filesystem; every function takes the file
contents as a string. Malformed input raises SourceFormatError, never
anything else.
"""

import re
from dataclasses import dataclass
from typing import Optional

_UINT = re.compile(r"[0-9]+\Z")
_DECIMAL = re.compile(r"[0-9]+(\.[0-9]+)?\Z")


class SourceFormatError(ValueError):
    """Contents of a kernel source file could not be parsed."""

    def __init__(self, source, message, line=None):
        detail = f"{source}: {message}"
        if line is not None:
            detail += f" in row {line!r}"
        super().__init__(detail)
        self.source = source
        self.line = line


def _uint(token, source, line=None):
    # int() alone would accept '+1', '1_000' and non-ASCII digits
    if not _UINT.match(token):
        raise SourceFormatError(source, f"expected unsigned integer, got {token!r}", line)
    return int(token)


@dataclass(frozen=True)
class CpuStatLine:
    user: int
    nice: int
    system: int
    idle: int
    iowait: Optional[int] = None
    irq: Optional[int] = None
    softirq: Optional[int] = None
    steal: Optional[int] = None
    context_switches: int = 0


@dataclass(frozen=True)
class DiskStatsEntry:
    device_name: str
    sectors_read: int
    sectors_written: int
    read_time_ms: int
    write_time_ms: int


@dataclass(frozen=True)
class NetDevEntry:
    interface_name: str
    bytes_recvd: int
    bytes_sent: int


@dataclass(frozen=True)
class PidStatRecord:
    pid: int
    comm: str
    utime: int
    stime: int
    num_threads: int
    rss: int
    delayacct_blkio_ticks: Optional[int] = None


@dataclass(frozen=True)
class PidStatusRecord:
    voluntary_ctxt_switches: Optional[int] = None
    nonvoluntary_ctxt_switches: Optional[int] = None


@dataclass(frozen=True)
class CgroupCpuacctStat:
    user: int
    system: int


@dataclass(frozen=True)
class CgroupBlkio:
    read_bytes: int
    write_bytes: int
    sectors_total: Optional[int] = None


@dataclass(frozen=True)
class MemInfo:
    total_kb: int
    free_kb: int
    buffers_kb: Optional[int] = None
    cached_kb: Optional[int] = None


def parse_proc_stat(text):
    """Aggregate CPU times from the ``cpu `` line and the ``ctxt`` counter."""
    source = "/proc/stat"
    cpu = ctxt = None
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "cpu" and cpu is None:
            cpu = line
            cpu_parts = parts[1:]
        elif parts[0] == "ctxt" and ctxt is None:
            if len(parts) != 2:
                raise SourceFormatError(source, "bad ctxt line", line)
            ctxt = _uint(parts[1], source, line)
    if cpu is None:
        raise SourceFormatError(source, "missing aggregate 'cpu ' line")
    if ctxt is None:
        raise SourceFormatError(source, "missing 'ctxt' line")
    if len(cpu_parts) < 4:
        raise SourceFormatError(source, "cpu line has fewer than 4 columns", cpu)
    values = [_uint(tok, source, cpu) for tok in cpu_parts[:8]]
    values += [None] * (8 - len(values))
    return CpuStatLine(*values, context_switches=ctxt)


# Partitions of whole disks, e.g. sda1, vdb2, nvme0n1p1, mmcblk0p2.
_PARTITION = re.compile(r"((s|h|v|xv)d[a-z]+[0-9]+|(nvme[0-9]+n[0-9]+|mmcblk[0-9]+|md[0-9]+)p[0-9]+)\Z")
# Virtual or stacked devices whose I/O is already counted on a physical disk.
_VIRTUAL = re.compile(r"(loop|ram|zram|dm-|nbd|sr|fd)[0-9]*\Z")


def is_physical_device(name):
    """Name heuristic used when no explicit device filter is given.

    Partitions are rejected because their sectors are already included
    in the parent disk row. Loop, ram, zram, device-mapper, nbd, optical
    and floppy devices are rejected too: they are either virtual or
    stacked on top of a physical disk that is already counted.
    """
    return not (_PARTITION.match(name) or _VIRTUAL.match(name))


def parse_proc_diskstats(text, device_filter=None):
    source = "/proc/diskstats"
    entries = []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 14:
            raise SourceFormatError(source, f"expected at least 14 columns, got {len(parts)}",
                                    line)
        name = parts[2]
        if device_filter is not None:
            if name not in device_filter:
                continue
        elif not is_physical_device(name):
            continue
        # 1-based columns: 6 sectors read, 7 ms reading, 10 sectors written, 11 ms writing
        entries.append(DiskStatsEntry(
            device_name=name,
            sectors_read=_uint(parts[5], source, line),
            sectors_written=_uint(parts[9], source, line),
            read_time_ms=_uint(parts[6], source, line),
            write_time_ms=_uint(parts[10], source, line),
        ))
    return entries


def parse_proc_net_dev(text, exclude_loopback=True):
    source = "/proc/net/dev"
    lines = text.splitlines()
    if len(lines) < 2 or "|" not in lines[0] or "|" not in lines[1]:
        raise SourceFormatError(source, "missing two-line header")
    entries = []
    for line in lines[2:]:
        if not line.strip():
            continue
        name, sep, rest = line.rpartition(":")
        name = name.strip()
        if not sep or not name:
            raise SourceFormatError(source, "row without interface name", line)
        cols = rest.split()
        if len(cols) < 9:
            raise SourceFormatError(source, "row has fewer than 9 counters", line)
        entry = NetDevEntry(
            interface_name=name,
            bytes_recvd=_uint(cols[0], source, line),
            bytes_sent=_uint(cols[8], source, line),
        )
        if not (exclude_loopback and name == "lo"):
            entries.append(entry)
    return entries


def parse_pid_stat(text):
    """Parse ``/proc/[pid]/stat``.

    The command name sits between the first ``(`` and the *last* ``)``
    and may itself contain spaces and parentheses.
    """
    source = "/proc/[pid]/stat"
    text = text.strip()
    close = text.rfind(")")
    open_ = text.find("(")
    if close < 0 or open_ < 0 or open_ > close:
        raise SourceFormatError(source, "no parenthesized command name")
    pid = _uint(text[:open_].strip(), source)
    comm = text[open_ + 1:close]
    rest = text[close + 1:].split()

    # rest[0] is field 3 (state); field n lives at rest[n - 3]
    def fld(n):
        return _uint(rest[n - 3], source)

    if len(rest) < 22:
        raise SourceFormatError(source, f"expected at least 24 fields, got {len(rest) + 2}")
    return PidStatRecord(
        pid=pid,
        comm=comm,
        utime=fld(14),
        stime=fld(15),
        num_threads=fld(20),
        rss=fld(24),
        delayacct_blkio_ticks=fld(42) if len(rest) >= 40 else None,
    )


_STATUS_KEY = re.compile(r"\s*(voluntary_ctxt_switches|nonvoluntary_ctxt_switches)\s*:\s*([0-9]+)\s*\Z")


def parse_pid_status(text):
    """Context-switch counters; keys missing on older kernels stay None."""
    found = {}
    for line in text.splitlines():
        m = _STATUS_KEY.match(line)
        if m:
            found[m.group(1)] = int(m.group(2))
    return PidStatusRecord(**found)


def parse_cgroup_cpuacct(text):
    source = "cpuacct.stat"
    values = {}
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[0] in ("user", "system"):
            values[parts[0]] = _uint(parts[1], source, line)
    for key in ("user", "system"):
        if key not in values:
            raise SourceFormatError(source, f"missing '{key}' line")
    return CgroupCpuacctStat(user=values["user"], system=values["system"])


def parse_cgroup_blkio(sectors_text, service_bytes_text):
    """Sum per-device blkio rows.

    The ``Total`` summary row is skipped so devices are not counted twice.
    Unparseable rows are ignored; ``sectors_text`` may be None because
    newer kernels dropped ``blkio.sectors``.
    """
    read = write = 0
    for line in service_bytes_text.splitlines():
        parts = line.split()
        if len(parts) != 3 or parts[0] == "Total" or not _UINT.match(parts[2]):
            continue
        if parts[1] == "Read":
            read += int(parts[2])
        elif parts[1] == "Write":
            write += int(parts[2])
    sectors = None
    if sectors_text is not None:
        sectors = 0
        for line in sectors_text.splitlines():
            parts = line.split()
            if len(parts) == 2 and parts[0] != "Total" and _UINT.match(parts[1]):
                sectors += int(parts[1])
    return CgroupBlkio(read_bytes=read, write_bytes=write, sectors_total=sectors)


def parse_proc_meminfo(text):
    source = "/proc/meminfo"
    values = {}
    for line in text.splitlines():
        key, sep, rest = line.partition(":")
        if not sep:
            continue
        parts = rest.split()
        if parts and key in ("MemTotal", "MemFree", "Buffers", "Cached"):
            values[key] = _uint(parts[0], source, line)
    for key in ("MemTotal", "MemFree"):
        if key not in values:
            raise SourceFormatError(source, f"missing {key}")
    return MemInfo(values["MemTotal"], values["MemFree"],
                   values.get("Buffers"), values.get("Cached"))


def parse_proc_loadavg(text):
    source = "/proc/loadavg"
    parts = text.split()
    if len(parts) < 3:
        raise SourceFormatError(source, "expected three load averages")
    for tok in parts[:3]:
        if not _DECIMAL.match(tok):
            raise SourceFormatError(source, f"bad load average {tok!r}")
    return tuple(float(tok) for tok in parts[:3])


def parse_cgroup_procs(text):
    source = "cgroup.procs"
    return [_uint(line.strip(), source, line) for line in text.splitlines() if line.strip()]


def parse_single_uint(text, source):
    return _uint(text.strip(), source)


def parse_proc_self_cgroup(text):
    """Map each v1 controller to its cgroup path, from ``/proc/[pid]/cgroup``."""
    paths = {}
    for line in text.splitlines():
        parts = line.split(":", 2)
        if len(parts) != 3:
            continue
        for controller in parts[1].split(","):
            if controller:
                paths[controller] = parts[2]
    return paths
