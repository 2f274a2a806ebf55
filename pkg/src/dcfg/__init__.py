"""Decoupled classifier-free guidance for diffusion counterfactuals.

Exact verification harness on attribute-conditioned Gaussian-mixture worlds
where the optimal denoiser is available in closed form: structural causal
models over discrete attributes, a deterministic DDIM sampler with
inversion, global and group-decoupled guidance, the three-step
counterfactual pipeline, and effectiveness/reversibility metrics.
"""

__version__ = "0.1.0"

from .causal import (
    AttributeSpec,
    CausalGraph,
    Intervention,
    Mechanism,
    Partition,
    counterfactual_attributes,
    partition,
    sample_attributes,
)
from .condition import ConditionSlots, SplitEmbedder, dropout, init_embedder, mask
from .counterfactual import (
    CounterfactualRecord,
    PartitionWeights,
    counterfactual,
    counterfactual_batch,
    reverse,
)
from .data import Dataset, sample_dataset
from .denoiser import (
    DenoiserParams,
    TrainConfig,
    TrainedBackend,
    load_checkpoint,
    mlp_epsilon,
    save_checkpoint,
    train,
)
from .errors import ConfigError, MissingBaselineError, NumericalError
from .guidance import CFG, DCFG, GuidanceSpec, epsilon_cfg, epsilon_dcfg, guided_epsilon
from .metrics import (
    EvalReport,
    auroc,
    composition,
    effectiveness,
    paired_sign_test,
    reversibility,
)
from .sampler import Trajectory, generate, invert, predict_x0
from .schedule import NoiseSchedule, ScheduleKind, TimestepGrid, build_schedule, make_grid
from .score import AnalyticBackend, GMMWorld, analytic_epsilon, bayes_posterior, log_density
from .worlds import builtin_graph, builtin_world, mixture_means
