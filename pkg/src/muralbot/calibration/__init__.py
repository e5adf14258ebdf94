"""Two-stage proprioceptive winch calibration and exteroceptive
piecewise-homography task-space correction.
"""

from .datasets import CalibrationDataset, load_dataset_csv, save_dataset_csv
from .excitation import GridExcitation, generate_grid_excitation, synth_drag_path
from .homography import (
    HomographyMap,
    build_piecewise_map,
    fit_homography,
    load_homography_map,
    save_homography_map,
    warp_point,
    warp_point_inverse,
    warp_trajectory,
)
from .winch import CalibrationResult, solve_joint, solve_proprioceptive

__all__ = [
    "CalibrationDataset",
    "CalibrationResult",
    "GridExcitation",
    "HomographyMap",
    "build_piecewise_map",
    "fit_homography",
    "generate_grid_excitation",
    "load_dataset_csv",
    "load_homography_map",
    "save_dataset_csv",
    "save_homography_map",
    "solve_joint",
    "solve_proprioceptive",
    "synth_drag_path",
    "warp_point",
    "warp_point_inverse",
    "warp_trajectory",
]
