"""Grid radio-map synthesis with a conditional denoising diffusion model.

Library layout: ``compute`` (autodiff backend), ``scenario`` (synthetic
propagation oracle and dataset container), ``selection`` (RSS fragment
selection), ``encoders`` (condition encoders), ``denoiser`` (conditional
U-Net), ``diffusion`` (schedules, training, sampling, checkpoints),
``metrics`` (ETR accuracy, histograms, error maps), ``cli`` (command-line
front end).
"""

from .compute import Parameter, Tensor, adam_step
from .denoiser import UNet, UNetConfig
from .diffusion import (
    ModelCheckpoint,
    NoiseSchedule,
    TrainConfig,
    forward_sample,
    linear_schedule,
    load_checkpoint,
    sample,
    sample_batch,
    save_checkpoint,
    sigma_variant,
    train,
)
from .encoders import ConditionEmbedding, ConditionSet, FragmentEncoder, TxEncoder
from .errors import (
    ConditionError,
    ConfigurationError,
    DimensionError,
    RadioMapError,
    SelectionError,
    StepError,
    StorageError,
    TrainingError,
)
from .metrics import (
    EvalReport,
    baseline_mean_map,
    error_map,
    etr_accuracy,
    evaluate,
    rss_histogram,
)
from .scenario import (
    Dataset,
    Obstacle,
    RadioMap,
    Scenario,
    ScenarioParams,
    TxLocation,
    build_dataset,
    compute_rss,
    crossings,
    generate_map,
    load_dataset,
    random_scenario,
    save_dataset,
)
from .selection import (
    Fragment,
    SubareaRanking,
    environment_aware_select,
    fragment_budget,
    obstacle_density,
    random_select,
)

__version__ = "0.1.0"
