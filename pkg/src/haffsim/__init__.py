"""Inelastic dispersing billiards on the torus, their averaged cooling law, and Haff's law."""
from .averaging import consistency_h_vs_gbar, drift_h, g_increment, gbar, haff_line, solve_averaged
from .cones import check_condition_C, cone_params, cone_sweep, in_cone, strip_index, verify_cone_step
from .dynamics import (ExtPhasePoint, PhasePoint, apply_P, elastic_map, free_flight, jacobian_F,
                       jacobian_Fhat, jacobian_P, run_trajectory, step_map)
from .ensemble import InitialDistribution, compare_to_averaged, ensemble_driver, haff_fit, run_slow_path
from .errors import HaffsimError
from .geometry import Scatterer, TableGeometry, build_table, flagship_table, load_table
from .models import RestitutionModel, load_model

__version__ = "0.1.0"

__all__ = [
    "ExtPhasePoint", "HaffsimError", "InitialDistribution", "PhasePoint", "RestitutionModel",
    "Scatterer", "TableGeometry", "apply_P", "build_table", "check_condition_C", "compare_to_averaged",
    "cone_params", "cone_sweep", "consistency_h_vs_gbar", "drift_h", "elastic_map", "ensemble_driver",
    "flagship_table", "free_flight", "g_increment", "gbar", "haff_fit", "haff_line", "in_cone",
    "jacobian_F", "jacobian_Fhat", "jacobian_P", "load_model", "load_table", "run_slow_path",
    "run_trajectory", "solve_averaged", "step_map", "strip_index", "verify_cone_step",
]
