"""CSV export and static SVG time-series plots of delta series."""

import configparser
import csv
import math
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .collector import ConfigError  # noqa: E402

_PANEL_ORDER = ("disk", "cpu", "network", "memory")


@dataclass
class MetricStyle:
    label: str = ""
    panel: str = ""
    color: str = ""


@dataclass
class GraphStyle:
    """Defaults plus per-metric overrides from ``graph_generation_config.ini``."""

    width: float = 12.0
    height: float = 8.0
    columns: int = 2
    xlabel: str = "Time (s)"
    title: str = ""
    panel_ylabels: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def for_metric(self, name):
        base = name.split("[", 1)[0]
        return self.metrics.get(name) or self.metrics.get(base) or MetricStyle()


def load_graph_config(path):
    """Parse a graph configuration file.

    ``[defaults]`` holds width, height, columns, xlabel and title;
    ``[panels]`` maps a panel name to its y-axis label; any other section
    names a metric and may set label, panel and color.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as f:
        parser.read_file(f)
    style = GraphStyle()
    if parser.has_section("defaults"):
        d = parser["defaults"]
        try:
            style.width = d.getfloat("width", style.width)
            style.height = d.getfloat("height", style.height)
            style.columns = d.getint("columns", style.columns)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        style.xlabel = d.get("xlabel", style.xlabel)
        style.title = d.get("title", style.title)
    if parser.has_section("panels"):
        style.panel_ylabels = dict(parser["panels"])
    for section in parser.sections():
        if section in ("defaults", "panels"):
            continue
        s = parser[section]
        style.metrics[section] = MetricStyle(s.get("label", ""), s.get("panel", ""),
                                             s.get("color", ""))
    return style


def export_csv(series_list, path):
    """One row per timestamp, one column per series; blanks where a series has no point."""
    if not series_list:
        raise ValueError("nothing to export")
    times = sorted({t for s in series_list for t, _ in s.points})
    columns = [dict(s.points) for s in series_list]
    if hasattr(path, "write"):
        _write_rows(path, series_list, times, columns)
    else:
        with open(path, "w", newline="", encoding="utf-8") as f:
            _write_rows(f, series_list, times, columns)
    return path


def _write_rows(f, series_list, times, columns):
    writer = csv.writer(f)
    writer.writerow(["timestamp"] + [s.metric_name for s in series_list])
    for t in times:
        row = [repr(t)]
        for col in columns:
            v = col.get(t)
            row.append("" if v is None else v)
        writer.writerow(row)


def _panel(series, style):
    return style.for_metric(series.metric_name).panel or series.category or "other"


def render_plot(series_list, path, style=None, metrics=None):
    """Write an SVG with one panel per category and one line per series.

    Line groups carry the series name as their SVG id and text stays as
    ``<text>`` elements, so the output can be checked structurally.
    """
    style = style or GraphStyle()
    if metrics is not None:
        wanted = set(metrics)
        series_list = [s for s in series_list
                       if s.metric_name in wanted or s.metric_name.split("[", 1)[0] in wanted]
    if not series_list:
        raise ValueError("no series to plot")
    panels = {}
    for s in series_list:
        panels.setdefault(_panel(s, style), []).append(s)
    order = [p for p in _PANEL_ORDER if p in panels] + sorted(p for p in panels
                                                              if p not in _PANEL_ORDER)
    ncols = min(style.columns, len(order))
    nrows = math.ceil(len(order) / ncols)
    t0 = min(t for s in series_list for t, _ in s.points) if any(s.points for s in series_list) \
        else 0.0

    with plt.rc_context({"svg.fonttype": "none", "svg.hashsalt": "ruprof"}):
        fig, axes = plt.subplots(nrows, ncols, figsize=(style.width, style.height),
                                 squeeze=False)
        for ax, panel in zip(axes.flat, order):
            units = set()
            for s in panels[panel]:
                ms = style.for_metric(s.metric_name)
                xs = [t - t0 for t, _ in s.points]
                ys = [math.nan if v is None else v for _, v in s.points]
                kwargs = {"color": ms.color} if ms.color else {}
                ax.plot(xs, ys, label=ms.label or s.metric_name, gid=s.metric_name, **kwargs)
                if s.unit:
                    units.add(s.unit)
            ax.set_title(panel)
            ax.set_xlabel(style.xlabel)
            ax.set_ylabel(style.panel_ylabels.get(panel, ", ".join(sorted(units))))
            ax.legend(loc="best", fontsize="small")
        for ax in list(axes.flat)[len(order):]:
            ax.set_visible(False)
        if style.title:
            fig.suptitle(style.title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
