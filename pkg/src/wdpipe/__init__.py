"""Ensemble weapon-detection pipeline.

A small, fully inspectable stack: a from-scratch convolutional network
engine trained by mini-batch gradient descent, disjoint class-covering
data partitioning, an ensemble of architecturally distinct base models
aggregated by their mean softmax output, evaluation metrics, and
stage-level inference profiling.  ``EnsembleWeaponDetector`` and
``FramePreprocessor`` expose the usual fit/transform/predict surface.
"""

from .data import (
    CLASS_NAMES,
    Dataset,
    Sample,
    export_dataset,
    ingest_directory,
    merge_datasets,
    synth_generate,
)
from .ensemble import (
    ArchitectureDescriptor,
    BaseModel,
    Detection,
    Ensemble,
    EnsembleWeaponDetector,
    default_architectures,
    detect,
    init_ensemble,
    load_ensemble,
    mean_aggregate,
    predict_proba,
    save_ensemble,
    train_base_model,
    train_ensemble,
)
from .errors import (
    ConfigError,
    IngestError,
    MergeError,
    ModelFormatError,
    PartitionError,
    PipelineError,
    ShapeError,
    TrainingError,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    accuracy,
    binarize,
    confusion,
    evaluate,
    format_metrics_table,
    precision,
    sensitivity,
)
from .nn.network import LayerSpec, Network, TrainConfig, finite_diff_gradient, train_network
from .partition import (
    PartitionPlan,
    PlanValidation,
    learner_training_set,
    make_partition,
    validate_plan,
)
from .pipeline import ProfileReport, StageTimings, profile, run_pipeline
from .preprocess import (
    FramePreprocessor,
    PreprocessConfig,
    normalize,
    preprocess_dataset,
    preprocess_frame,
    resize,
    to_grayscale,
    train_test_split,
)

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "Dataset",
    "Sample",
    "export_dataset",
    "ingest_directory",
    "merge_datasets",
    "synth_generate",
    "ArchitectureDescriptor",
    "BaseModel",
    "Detection",
    "Ensemble",
    "EnsembleWeaponDetector",
    "default_architectures",
    "detect",
    "init_ensemble",
    "load_ensemble",
    "mean_aggregate",
    "predict_proba",
    "save_ensemble",
    "train_base_model",
    "train_ensemble",
    "ConfigError",
    "IngestError",
    "MergeError",
    "ModelFormatError",
    "PartitionError",
    "PipelineError",
    "ShapeError",
    "TrainingError",
    "ConfusionMatrix",
    "MetricsReport",
    "accuracy",
    "binarize",
    "confusion",
    "evaluate",
    "format_metrics_table",
    "precision",
    "sensitivity",
    "LayerSpec",
    "Network",
    "TrainConfig",
    "finite_diff_gradient",
    "train_network",
    "PartitionPlan",
    "PlanValidation",
    "learner_training_set",
    "make_partition",
    "validate_plan",
    "ProfileReport",
    "StageTimings",
    "profile",
    "run_pipeline",
    "FramePreprocessor",
    "PreprocessConfig",
    "normalize",
    "preprocess_dataset",
    "preprocess_frame",
    "resize",
    "to_grayscale",
    "train_test_split",
]
