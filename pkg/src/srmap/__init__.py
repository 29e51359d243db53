"""Salient relevance maps: LRP relevance refined by context-aware saliency."""

from .casal import SaliencyConfig, SaliencyMap, context_aware_saliency
from .edges import EdgeMap, canny, fuse
from .lrp import conservation_check, propagate
from .metrics import SsimConfig, evaluate_image, ssim
from .netrt import Network, forward, load_network, predict
from .pipeline import PipelineConfig, SRReport, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "EdgeMap", "Network", "PipelineConfig", "SRReport", "SaliencyConfig", "SaliencyMap", "SsimConfig",
    "canny", "conservation_check", "context_aware_saliency", "evaluate_image", "forward", "fuse",
    "load_network", "predict", "propagate", "run_pipeline", "ssim",
]
