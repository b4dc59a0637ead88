"""cxrtriage: chest X-ray triage pipeline.

Ingests labeled X-ray trees into a binary archive, trains small
convolutional networks from scratch (pure numpy forward/backward), and
serves per-class probability predictions over HTTP.
"""

from .data import (CLASS_NAMES, DatasetArchive, LabeledImage, SplitPlan,
                   assign_label,
                   decode_image, ingest, label_name, preprocess,
                   read_archive, split, synthesize_dataset, write_archive)
from .errors import (BuildError, ConfigError, CxrError, DataFormatError,
                     DecodeError, DomainError, IngestError, ModelFormatError,
                     ShapeError)
from .estimator import CxrClassifier
from .models import (ModelSpec, build, build_custom_cnn,
                     build_inception_small, build_vgg16_style, initialize,
                     load_model, parameter_count, save_model)
from .nn import Network, cross_entropy
from .serve import load_bundle, predict_report, serve
from .train import (History, TrainConfig, evaluate, export_history, train,
                    train_arrays)

__version__ = "0.1.0"

__all__ = [
    "BuildError", "CLASS_NAMES", "ConfigError", "CxrClassifier", "CxrError",
    "DataFormatError", "DatasetArchive", "DecodeError", "DomainError",
    "History", "IngestError", "LabeledImage", "ModelFormatError",
    "ModelSpec", "Network",
    "ShapeError", "SplitPlan", "TrainConfig", "assign_label", "build",
    "build_custom_cnn", "build_inception_small", "build_vgg16_style",
    "cross_entropy", "decode_image", "evaluate", "export_history", "ingest",
    "initialize", "label_name", "load_bundle", "load_model",
    "parameter_count", "predict_report", "preprocess", "read_archive",
    "save_model", "serve", "split", "synthesize_dataset", "train",
    "train_arrays", "write_archive",
]
