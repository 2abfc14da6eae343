"""Scikit-learn-style classifier facade over the model/trainer stack.

ResNeXtClassifier follows the estimator conventions — constructor stores
hyper-parameters verbatim, fit(X, y) learns and returns self, fitted state
lives in trailing-underscore attributes — without importing scikit-learn.
X is raw pixels [n, 3, 32, 32] in [0, 255]; y is any integer label vector.
"""

import numpy as np

from . import data
from .layers import softmax_probs
from .model import ModelConfig, build_model
from .train import OptimizerState, TrainConfig, train_epoch
from .validation import check_images, check_is_fitted, check_labels


class ResNeXtClassifier:
    """Grouped-convolution residual network classifier for 32x32 images."""

    def __init__(self, depth=20, cardinality=2, base_width=8, block_form="grouped",
                 epochs=30, batch_size=128, lr=0.1, lr_drop_epochs=(),
                 lr_drop_factor=0.1, momentum=0.9, weight_decay=0.0005,
                 augment=True, seed=0):
        self.depth = depth
        self.cardinality = cardinality
        self.base_width = base_width
        self.block_form = block_form
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_drop_epochs = lr_drop_epochs
        self.lr_drop_factor = lr_drop_factor
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.augment = augment
        self.seed = seed

    _PARAM_NAMES = ("depth", "cardinality", "base_width", "block_form", "epochs",
                    "batch_size", "lr", "lr_drop_epochs", "lr_drop_factor",
                    "momentum", "weight_decay", "augment", "seed")

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r} for ResNeXtClassifier")
            setattr(self, name, value)
        return self

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, base_lr=self.lr,
            lr_drop_epochs=tuple(self.lr_drop_epochs), lr_drop_factor=self.lr_drop_factor,
            momentum=self.momentum, weight_decay=self.weight_decay,
            augment=self.augment, seed=self.seed,
        )

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, X.shape[0])
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes_.shape[0]}")
        cfg = ModelConfig(self.depth, self.cardinality, self.base_width,
                          num_classes=self.classes_.shape[0], block_form=self.block_form)
        tcfg = self._train_config()
        split = data.Split(X, encoded.astype(np.int64))
        self.norm_stats_ = data.compute_norm_stats(split)
        self.model_ = build_model(cfg, np.random.default_rng(tcfg.seed))
        opt = OptimizerState(self.model_.parameters())
        history = []
        for epoch in range(tcfg.epochs):
            loss, acc = train_epoch(self.model_, split, self.norm_stats_, opt, tcfg, epoch)
            history.append((epoch, loss, acc))
        self.history_ = history
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def decision_function(self, X):
        check_is_fitted(self, ("model_", "norm_stats_", "classes_"))
        X = check_images(X)
        outs = []
        for raw, _ in data.batches(data.Split(X, np.zeros(X.shape[0], dtype=np.int64)),
                                   self.batch_size, shuffle=False):
            x = data.normalize(raw, self.norm_stats_)
            outs.append(self.model_.forward(x, train=False).value)
        return np.concatenate(outs, axis=0)

    def predict_proba(self, X):
        return softmax_probs(self.decision_function(X))

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    def score(self, X, y):
        y = check_labels(y, np.asarray(X).shape[0])
        return float(np.mean(self.predict(X) == y))
