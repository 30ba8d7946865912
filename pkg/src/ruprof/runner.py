"""Launch a workload and keep a sampler running for exactly its lifetime."""

import json
import logging
import os
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .collector import (INSIDE, OUTSIDE, Collector, CollectorConfig, ConfigError,
                        find_container_cgroup)
from .metrics import LEVEL_PREFIX, RunMetadata
from .sampler import Sampler

log = logging.getLogger(__name__)

RUN_RESULT_FILE = "run_result.json"
CONTAINER_DATA_DIR = "/data"


class WorkloadSpawnError(RuntimeError):
    def __init__(self, invocation, cause):
        super().__init__(f"could not start workload: {invocation}: {cause}")
        self.invocation = invocation


@dataclass
class WorkloadSpec:
    command: list
    container_image: Optional[str] = None
    # host directory bound to /data inside the container
    data_mount: Optional[str] = None
    environment: dict = field(default_factory=dict)
    runtime: str = "docker"
    mode: str = INSIDE
    container_name: Optional[str] = None
    # argv that starts this profiler inside the image (inside mode only)
    profiler_command: tuple = ("ruprof",)

    def __post_init__(self):
        self.command = list(self.command)
        if not self.command:
            raise ValueError("workload command must not be empty")
        if self.mode not in (INSIDE, OUTSIDE):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class ProfileConfig:
    collector: CollectorConfig
    interval_seconds: float = 1.0
    out_dir: str = "profile"
    max_duration: Optional[float] = None


@dataclass
class RunResult:
    exit_status: int
    wall_time_seconds: float
    run_directory: str
    invocation: list
    workload_start: float = 0.0
    workload_end: float = 0.0

    def to_dict(self):
        return {
            "exitStatus": self.exit_status,
            "wallTimeSeconds": self.wall_time_seconds,
            "runDirectory": self.run_directory,
            "invocation": list(self.invocation),
            "workloadStartWallClock": self.workload_start,
            "workloadEndWallClock": self.workload_end,
        }


def _verbosity_flags(verbosity):
    return [f"-{LEVEL_PREFIX[level]}" for level in verbosity]


def build_runtime_invocation(spec, profile=None, cidfile=None):
    """Container runtime argv for ``spec``. Builds the vector only, never runs it.

    In inside mode with a ``profile`` config the profiler itself becomes the
    container's entry command and writes its run directory below /data.
    """
    if not spec.container_image:
        raise ValueError("a runtime invocation needs a container image")
    argv = [spec.runtime, "run", "--rm"]
    if spec.container_name:
        argv += ["--name", spec.container_name]
    if cidfile:
        argv += ["--cidfile", cidfile]
    if spec.data_mount:
        argv += ["-v", f"{os.path.abspath(spec.data_mount)}:{CONTAINER_DATA_DIR}"]
    for key, value in spec.environment.items():
        argv += ["-e", f"{key}={value}"]
    argv.append(spec.container_image)
    if spec.mode == INSIDE and profile is not None:
        out = f"{CONTAINER_DATA_DIR}/{os.path.basename(os.path.normpath(profile.out_dir))}"
        argv += list(spec.profiler_command)
        argv += ["profile", "--interval", repr(profile.interval_seconds), "--out", out]
        argv += _verbosity_flags(profile.collector.verbosity)
        argv.append("--")
    argv += spec.command
    return argv


def _write_result(result):
    path = os.path.join(result.run_directory, RUN_RESULT_FILE)
    os.makedirs(result.run_directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(result.to_dict(), f, indent=2)
        f.write("\n")


def _spawn(argv, env=None):
    try:
        return subprocess.Popen(argv, env=env)
    except OSError as exc:
        raise WorkloadSpawnError(shlex.join(argv), exc) from exc


def _wait(proc):
    try:
        return proc.wait()
    except KeyboardInterrupt:
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
        raise


def _metadata(profile, spec):
    return RunMetadata(
        interval_seconds=profile.interval_seconds,
        verbosity=profile.collector.verbosity,
        clock_ticks_per_second=os.sysconf("SC_CLK_TCK"),
        sector_size_bytes=512,
        start_wall_clock=time.time(),
        workload_command=shlex.join(spec.command),
        output_directory=os.path.abspath(profile.out_dir),
    )


def _sampled_run(spec, profile, argv, env, before_sampler=None):
    """Sampler on a background thread, workload in the foreground."""
    start_thread_first = before_sampler is None
    proc = None
    if not start_thread_first:
        proc = _spawn(argv, env)
        t_start = time.time()
        try:
            collector_config = before_sampler()
        except Exception:
            proc.kill()
            proc.wait()
            raise
    else:
        collector_config = profile.collector

    sampler = Sampler(Collector(collector_config), _metadata(profile, spec), profile.out_dir,
                      max_duration=profile.max_duration)
    errors = []

    def target():
        try:
            sampler.run()
        except BaseException as exc:  # surfaced in the calling thread
            errors.append(exc)

    thread = threading.Thread(target=target, name="ruprof-sampler", daemon=True)
    thread.start()
    try:
        if start_thread_first:
            # first snapshot must precede the workload
            sampler.first_tick.wait()
            if errors:
                raise errors[0]
            t_start = time.time()
            proc = _spawn(argv, env)
        status = _wait(proc)
        t_end = time.time()
    finally:
        sampler.stop("workload exit")
        thread.join()
    if errors:
        raise errors[0]
    return status, t_start, t_end


def profile_workload(spec, profile):
    """Run ``spec`` under the profiler and return its RunResult.

    A non-zero workload exit status is reported in the result, not raised.
    """
    env = None
    if spec.environment:
        env = dict(os.environ, **{k: str(v) for k, v in spec.environment.items()})

    if spec.container_image is None:
        argv = list(spec.command)
        status, t0, t1 = _sampled_run(spec, profile, argv, env)
        run_dir = profile.out_dir
    elif spec.mode == INSIDE:
        if not spec.data_mount:
            raise ValueError("inside mode needs a data mount to export snapshots to the host")
        argv = build_runtime_invocation(spec, profile)
        t0 = time.time()
        status = _wait(_spawn(argv))
        t1 = time.time()
        run_dir = os.path.join(spec.data_mount, os.path.basename(os.path.normpath(profile.out_dir)))
    else:
        cidfile = os.path.join(os.path.abspath(profile.out_dir), "container.cid")
        os.makedirs(profile.out_dir, exist_ok=True)
        if os.path.exists(cidfile):
            os.unlink(cidfile)
        argv = build_runtime_invocation(spec, cidfile=cidfile)

        def resolve_cgroup():
            cfg = profile.collector
            deadline = time.monotonic() + 30
            while True:
                cid = path = None
                if os.path.exists(cidfile):
                    with open(cidfile) as f:
                        cid = f.read().strip()
                if cid:
                    try:
                        path = find_container_cgroup(cfg.cgroup_root, cid)
                    except ConfigError:
                        pass
                if path is not None:
                    break
                if time.monotonic() > deadline:
                    raise WorkloadSpawnError(shlex.join(argv), "container cgroup never appeared")
                time.sleep(0.05)
            return CollectorConfig(
                proc_root=cfg.proc_root, cgroup_root=cfg.cgroup_root,
                verbosity=cfg.verbosity, device_filter=cfg.device_filter,
                exclude_loopback=cfg.exclude_loopback, mode=OUTSIDE,
                cgroup_path=path, container_id=cid,
            )

        status, t0, t1 = _sampled_run(spec, profile, argv, None, before_sampler=resolve_cgroup)
        run_dir = profile.out_dir

    result = RunResult(exit_status=status, wall_time_seconds=t1 - t0, run_directory=run_dir,
                       invocation=argv, workload_start=t0, workload_end=t1)
    if os.path.isdir(run_dir) or spec.container_image is None or spec.mode == OUTSIDE:
        _write_result(result)
    return result
