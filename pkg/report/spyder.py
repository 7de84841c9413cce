"""Spyder (radar) chart of normalized property scores."""

from __future__ import annotations

import io
import math
from collections.abc import Sequence
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from entities import PropertyReport  # noqa: E402
from src.errors import ConfigError  # noqa: E402


@dataclass(frozen=True)
class SpyderPolygon:
    method: str
    radii: tuple[float, ...]
    vertices: tuple[tuple[float, float], ...]


def axis_angles(count: int) -> list[float]:
    """First axis points up, the rest follow clockwise."""
    return [math.pi / 2 - 2 * math.pi * k / count for k in range(count)]


def spyder_geometry(
    reports: Sequence[PropertyReport], properties: Sequence[str]
) -> list[SpyderPolygon]:
    """
    One polygon per method.

    Radii are normalized means rescaled so the best method on each axis sits
    at 1; negative means are clipped to 0.
    """
    if len(properties) < 3:
        raise ConfigError(
            "ranking.properties", "a spyder plot needs at least 3 properties"
        )
    by_prop = {r.property: r for r in reports}
    missing = [p for p in properties if p not in by_prop]
    if missing:
        raise ConfigError("ranking.properties", f"no report for {missing[0]!r}")
    methods = list(by_prop[properties[0]].scores)
    angles = axis_angles(len(properties))
    polygons: list[SpyderPolygon] = []
    for method in methods:
        radii: list[float] = []
        for prop in properties:
            scores = by_prop[prop].scores
            best = max(mean for mean, _ in scores.values())
            mean = scores.get(method, (0.0, 0.0))[0]
            radii.append(max(0.0, mean / best) if best > 0 else 0.0)
        vertices = tuple(
            (r * math.cos(a), r * math.sin(a)) for r, a in zip(radii, angles)
        )
        polygons.append(SpyderPolygon(method, tuple(radii), vertices))
    return polygons


def render_spyder_svg(
    polygons: Sequence[SpyderPolygon], properties: Sequence[str], description: str
) -> str:
    """SVG text of the radar chart; identical input gives identical bytes."""
    count = len(properties)
    # matplotlib polar axes measure theta counter-clockwise from east
    thetas = [2 * math.pi * k / count for k in range(count)]
    with plt.rc_context({"svg.hashsalt": "xaibench", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 7), subplot_kw={"polar": True})
        ax.set_theta_offset(math.pi / 2)
        ax.set_theta_direction(-1)
        _ = ax.set_xticks(thetas, list(properties))
        _ = ax.set_yticks([0.25, 0.5, 0.75, 1.0], ["", "", "", ""])
        _ = ax.set_ylim(0, 1)
        cmap = plt.get_cmap("tab10")
        for i, poly in enumerate(polygons):
            closed_t = [*thetas, thetas[0]]
            closed_r = [*poly.radii, poly.radii[0]]
            _ = ax.plot(
                closed_t,
                closed_r,
                linewidth=1.25,
                color=cmap(i % 10),
                label=poly.method,
            )
            _ = ax.fill(closed_t, closed_r, alpha=0.1, color=cmap(i % 10))
        _ = ax.legend(loc="upper right", bbox_to_anchor=(1.3, 1.1), fontsize=8)
        buf = io.StringIO()
        fig.savefig(
            buf,
            format="svg",
            bbox_inches="tight",
            metadata={"Date": None, "Description": description},
        )
        plt.close(fig)
    return buf.getvalue()
