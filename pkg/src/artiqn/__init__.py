"""Risk-adaptive distributional RL agent with a 2D lidar navigation simulator."""

__version__ = "0.1.0"

from .config import RunConfig, dump_config, load_config
from .seeding import SeedTree

__all__ = ["RunConfig", "SeedTree", "dump_config", "load_config", "__version__"]
