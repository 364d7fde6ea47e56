"""Noise-resistant multimodal (RGB + 3D) industrial anomaly detection."""

from .config import PipelineConfig, desk_config, load_config
from .pipeline import Run, run_pipeline

__all__ = ["PipelineConfig", "Run", "desk_config", "load_config", "run_pipeline"]
__version__ = "0.1.0"
