"""Resource-utilization profiler for host, container and process metrics."""

__version__ = "0.1.0"
