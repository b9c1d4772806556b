"""Graph learning toolkit: SGC/GCN with a two-sided constraint.

Column random masking regulates how much neighbor information each layer
absorbs; a layer contrastive loss keeps node representations apart.
Together they let deep graph convolutions train without the usual
representation collapse.  The package is self-contained: sparse graph
core, a small reverse-mode tape, synthetic data, metrics, and an
experiment runner with a CLI.
"""

from .errors import ConfigError, GenerationError, InputError, TrainingError, TscError

__version__ = "0.1.0"

__all__ = [
    "TscError",
    "InputError",
    "ConfigError",
    "GenerationError",
    "TrainingError",
    "__version__",
]
