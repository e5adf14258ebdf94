"""Vector artwork to dynamically feasible, per-color paint programs."""

from .infill import InfillResult, generate_infill, point_in_polygon, polygon_area
from .program import (
    ArtworkDocument,
    PaintProgram,
    Shape,
    Stroke,
    compile_program,
    import_svg,
    load_artwork,
    load_program_csv,
    save_artwork,
    save_program_csv,
)
from .retime import TimedTrajectory, retime, trapezoid_duration

__all__ = [
    "ArtworkDocument",
    "InfillResult",
    "PaintProgram",
    "Shape",
    "Stroke",
    "TimedTrajectory",
    "compile_program",
    "generate_infill",
    "import_svg",
    "load_artwork",
    "load_program_csv",
    "point_in_polygon",
    "polygon_area",
    "retime",
    "save_artwork",
    "save_program_csv",
    "trapezoid_duration",
]
