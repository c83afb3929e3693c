"""chartkit: synthesize, validate, package, and evaluate chart-grounded
instruction data.

The pipeline stages are plain modules wired together by the CLI:
corpus -> genclient -> instructions -> qualitycheck -> packaging, with
metrics/judge/humaneval on the evaluation side.
"""

__version__ = "0.1.0"

from .genclient import TaskKind
from .metrics import MetricConfig, relaxed_match

__all__ = ["TaskKind", "MetricConfig", "relaxed_match", "__version__"]
