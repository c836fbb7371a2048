"""HAR-Net: multi-scale separable 1-D CNN for smartphone activity recognition."""

__version__ = "0.1.0"

from .data import CHANNELS, CLASS_NAMES, Dataset, Split, load_dataset, normalize_windows
from .errors import HarNetError
from .metrics import ConfusionMatrix, EvalReport
from .model import HarNet, HarNetConfig

__all__ = [
    "CHANNELS", "CLASS_NAMES", "ConfusionMatrix", "Dataset", "EvalReport", "HarNet",
    "HarNetConfig", "HarNetError", "Split", "__version__", "load_dataset", "normalize_windows",
]
