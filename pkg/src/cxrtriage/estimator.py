"""Scikit-learn-style front door over the training pipeline.

CxrClassifier follows the estimator protocol (constructor stores
hyperparameters verbatim, ``get_params``/``set_params``, ``fit`` returns
self, fitted attributes carry a trailing underscore) so the network can
sit in sklearn pipelines and grid searches without this package importing
sklearn itself.
"""

from __future__ import annotations

import numpy as np

from . import models
from .data import CLASS_NAMES, split
from .errors import ConfigError
from .train import TrainConfig, train_arrays
from .validation import check_images, check_labels


class CxrClassifier:
    """Three-class chest-X-ray classifier trained from scratch.

    Parameters mirror the CLI ``train`` flags; ``fit`` expects images as
    float arrays shaped [N,C,90,90] (or [N,90,90]) with values in [0,1]
    and labels in {0,1,2}.
    """

    _PARAM_NAMES = (
        "arch", "channels", "width_mult", "epochs", "batch_size",
        "val_fraction", "optimizer", "lr", "momentum", "class_weighting",
        "seed",
    )

    def __init__(self, arch="custom_cnn", channels=1, width_mult=1.0,
                 epochs=10, batch_size=120, val_fraction=0.2,
                 optimizer="adam", lr=1e-3, momentum=0.9,
                 class_weighting="off", seed=0):
        self.arch = arch
        self.channels = channels
        self.width_mult = width_mult
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.optimizer = optimizer
        self.lr = lr
        self.momentum = momentum
        self.class_weighting = class_weighting
        self.seed = seed

    # -- estimator protocol ---------------------------------------------

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "CxrClassifier":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ConfigError(
                    f"unknown parameter {name!r}; valid parameters are "
                    f"{', '.join(self._PARAM_NAMES)}")
            setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={getattr(self, k)!r}" for k in self._PARAM_NAMES)
        return f"CxrClassifier({args})"

    # -- fitting ----------------------------------------------------------

    def fit(self, x, y) -> "CxrClassifier":
        x = check_images(x, self.channels)
        y = check_labels(y, len(x))
        spec = models.build(self.arch, self.channels, self.width_mult)
        net = models.initialize(spec, seed=self.seed)
        plan = split(len(x), self.val_fraction, self.seed)
        cfg = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            val_fraction=self.val_fraction, optimizer=self.optimizer,
            lr=self.lr, momentum=self.momentum, seed=self.seed,
            class_weighting=self.class_weighting,
        )
        self.history_ = train_arrays(net, x, y, plan, cfg)
        self.network_ = net
        self.classes_ = np.arange(len(CLASS_NAMES))
        self.class_names_ = CLASS_NAMES
        return self

    def _require_fitted(self):
        if not hasattr(self, "network_"):
            raise ConfigError("this CxrClassifier has not been fitted yet")

    def predict_proba(self, x) -> np.ndarray:
        self._require_fitted()
        x = check_images(x, self.channels)
        chunks = []
        for start in range(0, len(x), 256):
            chunks.append(self.network_.forward(x[start:start + 256],
                                                train=False))
        return np.concatenate(chunks, axis=0)

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    def score(self, x, y) -> float:
        y = check_labels(np.asarray(y), len(np.asarray(y)))
        return float(np.mean(self.predict(x) == y))
