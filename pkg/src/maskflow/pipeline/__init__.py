from .adapters import AdapterSpec, StageError, StageTimeout, run_stage
from .filtering import FilterReport, FilterThresholds, keep
from .manifest import DatasetManifest, ManifestError, ValidationReport, read_manifest, validate_manifest, write_manifest
from .overlay import render_overlay
from .runner import ConfigError, PipelineError, load_config, run_pipeline, write_demo_config

__all__ = [
    "AdapterSpec",
    "ConfigError",
    "DatasetManifest",
    "FilterReport",
    "FilterThresholds",
    "ManifestError",
    "PipelineError",
    "StageError",
    "StageTimeout",
    "ValidationReport",
    "keep",
    "load_config",
    "read_manifest",
    "render_overlay",
    "run_pipeline",
    "run_stage",
    "validate_manifest",
    "write_demo_config",
    "write_manifest",
]
