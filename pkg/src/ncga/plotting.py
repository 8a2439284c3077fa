"""Static SVG charts of strategy comparisons on an 800x500 canvas."""

from __future__ import annotations

from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "ncga"
import matplotlib.pyplot as plt  # noqa: E402

CHART_KINDS = {
    "download_time_vs_filesize": ("File size (blocks)", "Average download time (rounds)", "Download Time Vs File Size"),
    "failure_vs_dynamic_links": ("Number of dynamic links", "Failure rate", "Failure rate Vs Number of dynamic links"),
    "redundancy_vs_filesize": ("File size (blocks)", "Packet redundancy", "Packet Redundancy Vs File Size"),
    "throughput_vs_time": ("Time (rounds)", "System throughput (bytes/round)", "System Throughput"),
}

MARKERS = {"GANS": "o", "RSN": "s", "CAN": "^", "NONE": "x"}


@dataclass(frozen=True)
class ChartSpec:
    kind: str
    x: tuple[float, ...]
    series: dict[str, tuple[float, ...]]

    def __post_init__(self):
        if self.kind not in CHART_KINDS:
            raise ValueError(f"unknown chart kind {self.kind!r}")
        for name, ys in self.series.items():
            if len(ys) != len(self.x):
                raise ValueError(f"series {name} has {len(ys)} points, x has {len(self.x)}")


def render_svg(spec: ChartSpec, path) -> None:
    xlabel, ylabel, title = CHART_KINDS[spec.kind]
    # SVG user units are points: 800/72 in wide gives an 800x500 viewBox
    fig, ax = plt.subplots(figsize=(800 / 72, 500 / 72), dpi=72)
    for name, ys in spec.series.items():
        ax.plot(spec.x, ys, marker=MARKERS.get(name, "."), label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
