"""scikit-learn style wrappers around the degradation model, HQ-Net and GViT.

The wrappers follow the usual estimator contract: hyper-parameters are
constructor arguments stored verbatim, ``fit`` learns attributes with a
trailing underscore, and unfitted use raises ``NotFittedError``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidArgument, check_image_batch
from .data import NUM_CLASSES, check_label
from .gvit import GViTConfig, GViTTrainConfig, predict_logits, train_gvit
from .hqnet import HQNetConfig, HQNetTrainConfig, hqnet_forward, train_hqnet
from .imaging import DegradationConfig, degrade, psnr


class Degrader(TransformerMixin, BaseEstimator):
    """Stateless transformer that applies :func:`~urgr.imaging.degrade` to each image."""

    def __init__(self, smooth_kernel=5, smooth_sigma=1.0, jpeg_quality=30):
        self.smooth_kernel = smooth_kernel
        self.smooth_sigma = smooth_sigma
        self.jpeg_quality = jpeg_quality

    def fit(self, X, y=None):
        check_image_batch(X)
        self.config_ = self._config()
        return self

    def _config(self):
        return DegradationConfig(self.smooth_kernel, self.smooth_sigma, self.jpeg_quality)

    def transform(self, X):
        X = check_image_batch(X)
        cfg = self._config()
        return np.stack([degrade(x, cfg) for x in X])

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


class HQNetEnhancer(TransformerMixin, BaseEstimator):
    """Learns to map degraded images back to clean ones.

    ``fit(X, y)`` takes degraded images ``X`` and clean targets ``y``, both
    shaped ``(N, input_size, input_size, 3)``.
    """

    def __init__(self, input_size=64, scale_factor=0.5, residual=False, lr=0.00485,
                 batch_size=16, weight_decay=0.0787, dropout=0.4, epochs=10, random_state=0):
        self.input_size = input_size
        self.scale_factor = scale_factor
        self.residual = residual
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.epochs = epochs
        self.random_state = random_state

    def _configs(self):
        cfg = HQNetConfig(input_size=self.input_size, scale_factor=self.scale_factor,
                          residual=self.residual)
        hyper = HQNetTrainConfig(lr=self.lr, batch_size=self.batch_size,
                                 weight_decay=self.weight_decay, dropout=self.dropout,
                                 epochs=self.epochs, seed=int(self.random_state or 0))
        return cfg, hyper

    def fit(self, X, y):
        X = check_image_batch(X)
        y = check_image_batch(y, name="y")
        if X.shape != y.shape:
            raise InvalidArgument("degraded and clean stacks must have the same shape")
        cfg, hyper = self._configs()
        result = train_hqnet(list(zip(X, y)), cfg, hyper)
        self.model_ = result.model
        self.history_ = result.history
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return hqnet_forward(check_image_batch(X), self.model_)

    def score(self, X, y):
        """Mean PSNR (dB) of the improved images against ``y``."""
        out = self.transform(X)
        return float(np.mean([psnr(o, t) for o, t in zip(out, check_image_batch(y, name="y"))]))


class GViTClassifier(ClassifierMixin, BaseEstimator):
    """Gesture classifier over focused frames; labels are the class indices 1..6."""

    def __init__(self, graph_grid=64, gc_dims=(16, 32), token_grid=8, embed_dim=64, depth=4,
                 heads=4, mlp_ratio=2.0, dropout_between_gc=0.4, lr=1e-3, batch_size=16,
                 weight_decay=1e-4, epochs=20, flip=True, random_state=0):
        self.graph_grid = graph_grid
        self.gc_dims = gc_dims
        self.token_grid = token_grid
        self.embed_dim = embed_dim
        self.depth = depth
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.dropout_between_gc = dropout_between_gc
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.flip = flip
        self.random_state = random_state

    def _configs(self):
        cfg = GViTConfig(graph_grid=self.graph_grid, gc_dims=tuple(self.gc_dims),
                         token_grid=self.token_grid, embed_dim=self.embed_dim, depth=self.depth,
                         heads=self.heads, mlp_ratio=self.mlp_ratio,
                         dropout_between_gc=self.dropout_between_gc)
        hyper = GViTTrainConfig(lr=self.lr, batch_size=self.batch_size,
                                weight_decay=self.weight_decay, epochs=self.epochs,
                                seed=int(self.random_state or 0), flip=self.flip)
        return cfg, hyper

    def fit(self, X, y):
        X = check_image_batch(X)
        y = np.array([check_label(v) for v in np.asarray(y).ravel()])
        cfg, hyper = self._configs()
        result = train_gvit(X, y, cfg, hyper)
        self.model_ = result.model
        self.history_ = result.history
        self.classes_ = np.arange(1, NUM_CLASSES + 1)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return predict_logits(check_image_batch(X), self.model_)

    def predict_proba(self, X):
        z = self.decision_function(X)
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
