from .spyder import SpyderPolygon, render_spyder_svg, spyder_geometry
from .tables import (
    ranks_frame,
    render_ranking_table,
    scores_frame,
    spyder_frame,
    to_csv,
)

__all__ = [
    "SpyderPolygon",
    "ranks_frame",
    "render_ranking_table",
    "render_spyder_svg",
    "scores_frame",
    "spyder_frame",
    "spyder_geometry",
    "to_csv",
]
