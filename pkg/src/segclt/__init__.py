"""Stochastic extra-gradient methods under Markov noise, with CLT diagnostics."""

from .core import (BoundaryEquilibriumError, ConstantStep, DecisionPoint, RunFailure,
                   SaddleProblem, SaddleUnknownError, SingularSystemError, StepSchedule,
                   running_average, step_size, suboptimality)
from .diagnostics import (asymptotic_covariance, batch_means_covariance, covariance_report,
                          gradient_noise_covariance_iid, histogram_and_qq, jacobian_fd,
                          ks_critical_value, ks_statistic, longrun_covariance_batch_means)
from .experiment import (ExperimentConfig, ReplicationSummary, clt_check, divergence_demo,
                         run_experiment)
from .kernels import DemandChainParams, NormalStream, initial_state
from .models import (EVGameSpec, LinearFieldSpec, build_preset, equilibrium_solve, ev_gradient,
                     remark3_gradient)
from .optimizers import TruncationPolicy, run, seg_step, sgda_step, tseg_step

__version__ = "0.1.0"
