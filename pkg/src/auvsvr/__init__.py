"""Online learning of AUV horizontal-plane dynamics with incremental epsilon-SVR."""

from .auv_dynamics import (Dataset, ExcitationPlan, SimState, VehicleConfig, default_dataset,
                           generate_dataset, paper_configs, read_dataset, write_dataset)
from .evaluation import (EvalTrace, SplitSpec, baseline_matrix, compare_strategies, online_run,
                         r2_score, stratified_split)
from .kernel_density import BandwidthMatrix, KernelParams, fit_bandwidth, kde_density, kernel_eval
from .online_learner import OnlineLearner, PipelineReport, make_bank, multi_dof_step
from .svr_core import Hyperparams, Sample, SupportSet, SvrSolution, predict, solve_dual

__version__ = "0.1.0"
