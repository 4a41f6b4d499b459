"""Few-shot segmentation of remote-sensing imagery with class-public and
class-specific region mining plus known-class suppression."""

__version__ = "0.1.0"

from .config import Config, load_config  # noqa: E402
from .model import DMNet, EpisodeOutput  # noqa: E402

__all__ = ["Config", "DMNet", "EpisodeOutput", "load_config", "__version__"]
