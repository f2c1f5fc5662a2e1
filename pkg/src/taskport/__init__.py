"""Training-free transport of task-specific weight updates between models of
different widths and depths, by aligning paired activations with orthogonal
Procrustes maps and conjugating the update through them."""

from . import baselines, harness
from .errors import (
    ConfigError,
    ConvergenceError,
    DepthMismatchError,
    DimensionError,
    FormatError,
    NonFiniteError,
    TaskportError,
    TrainingError,
)
from .linalg import (
    DEFAULT_RCOND,
    SvdResult,
    pseudo_inverse,
    random_orthonormal_rows,
    svd,
    tikhonov_solve,
)
from .model import (
    ACTIVATIONS,
    ActivationRecord,
    Checkpoint,
    LayerSpec,
    TaskVector,
    apply_update,
    forward_collect,
    init_checkpoint,
    load_activations,
    load_calibration,
    load_checkpoint,
    save_activations,
    save_calibration,
    save_checkpoint,
    task_vector,
)
from .seqalign import STRATEGIES, align_sequence, flatten_tokens, unflatten_tokens
from .transport import (
    METHODS,
    ProcrustesMap,
    TransportConfig,
    bilinear_residual,
    cross_covariance,
    depth_expand,
    procrustes_align,
    procrustes_maps,
    transport_bias,
    transport_model,
    transport_task_vector,
    transport_update,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "TaskportError",
    "DimensionError",
    "NonFiniteError",
    "ConvergenceError",
    "FormatError",
    "DepthMismatchError",
    "ConfigError",
    "TrainingError",
    "DEFAULT_RCOND",
    "SvdResult",
    "svd",
    "pseudo_inverse",
    "tikhonov_solve",
    "random_orthonormal_rows",
    "ACTIVATIONS",
    "LayerSpec",
    "Checkpoint",
    "TaskVector",
    "ActivationRecord",
    "forward_collect",
    "task_vector",
    "apply_update",
    "init_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "save_activations",
    "load_activations",
    "save_calibration",
    "load_calibration",
    "STRATEGIES",
    "align_sequence",
    "flatten_tokens",
    "unflatten_tokens",
    "METHODS",
    "ProcrustesMap",
    "TransportConfig",
    "cross_covariance",
    "procrustes_align",
    "procrustes_maps",
    "transport_update",
    "transport_bias",
    "bilinear_residual",
    "depth_expand",
    "transport_task_vector",
    "transport_model",
    "baselines",
    "harness",
]
