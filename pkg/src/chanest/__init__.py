"""Joint delay and angle-of-arrival estimation for OFDM array receivers.

The estimator grids the delay axis, fits a block matrix under a per-block
nuclear-norm penalty (solved by STELA), walks a regularization path, and
reads the path parameters off the selected support. Plain joint-grid OMP
and 2D MUSIC are included for comparison.
"""
from .baselines import JointGrid, SmoothingConfig, music_2d, omp_2d
from .dictionary import StructuredDictionary, angle_dictionary, delay_dictionary, uniform_grid
from .harness import ExperimentConfig, load_config, match_paths, run_benchmark, run_convergence
from .recovery import EstimatorConfig, PathEstimates, estimate_paths
from .signal_model import (
    ArrayGeometry,
    OfdmConfig,
    PathParams,
    Scenario,
    paper_scenario,
    synthesize,
)
from .solver import RegSchedule, SolverConfig, bcd_solve, mu_max, solution_path, stela_solve

__version__ = "0.1.0"
