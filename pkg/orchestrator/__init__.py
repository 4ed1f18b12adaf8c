# Transfer-accuracy run orchestration
# Configuration, worker pool, run manifests and history

from .config import ConfigManager
from .parallel import parallel_map, stream

__all__ = [
    'ConfigManager',
    'parallel_map',
    'stream',
]
