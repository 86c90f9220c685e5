"""Scikit-learn style front end: fit on clean images, transform degraded ones.

``fit`` synthesizes the chosen degradation on the fly and optimizes the
restoration network at desk scale; ``transform`` runs full-resolution
inference on degraded inputs.  Hyperparameters follow the sklearn estimator
contract (constructor args stored verbatim, ``get_params``/``set_params``
inherited), so the restorer drops into pipelines and searches.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .config import NetworkConfig, toy_train_config
from .metrics import psnr
from .network import D2Net, load_checkpoint
from .training import DegradationSpec, train_toy
from .validation import check_image_batch


class D2NetRestorer(TransformerMixin, BaseEstimator):
    """Trainable image restorer with a fit/transform surface.

    Parameters
    ----------
    task : {"lowlight", "haze", "blur"}
        Synthetic degradation to train against (ignored if ``degradation``
        is given).
    iters, batch_size, crop, base_lr, seed
        Optimization knobs; see ``training.train_toy``.
    config : NetworkConfig or None
        Network layout; ``None`` selects the desk-scale training default.
    degradation : DegradationSpec or None
        Full degradation override; ``None`` derives one from ``task``.
    """

    def __init__(self, task: str = "lowlight", iters: int = 400,
                 batch_size: int = 4, crop: int = 64, base_lr: float = 2e-4,
                 seed: int = 0, config: NetworkConfig | None = None,
                 degradation: DegradationSpec | None = None):
        self.task = task
        self.iters = iters
        self.batch_size = batch_size
        self.crop = crop
        self.base_lr = base_lr
        self.seed = seed
        self.config = config
        self.degradation = degradation

    def _spec(self) -> DegradationSpec:
        if self.degradation is not None:
            return self.degradation
        return DegradationSpec(kind=self.task, seed=self.seed)

    def fit(self, X, y=None):
        """Train on clean images (N, 3, H, W) in [0, 1]; needs >= 8 of them."""
        X = check_image_batch(X)
        cfg = self.config or toy_train_config()
        result = train_toy(cfg, self._spec(), self.iters, seed=self.seed,
                           images=X, batch=self.batch_size, crop=self.crop,
                           base_lr=self.base_lr)
        self.network_ = result.net
        self.train_result_ = result
        return self

    def _require_fitted(self) -> D2Net:
        net = getattr(self, "network_", None)
        if net is None:
            raise NotFittedError("this D2NetRestorer is not fitted; call fit() "
                                 "or from_checkpoint() first")
        return net

    def transform(self, X) -> np.ndarray:
        """Restore degraded images; returns float32 (N, 3, H, W) in [0, 1]."""
        net = self._require_fitted()
        X = check_image_batch(X)
        return np.clip(net.forward_full_resolution(X), 0.0, 1.0).astype(np.float32)

    def predict(self, X) -> np.ndarray:
        return self.transform(X)

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of the restored X against clean references y."""
        y = check_image_batch(y, name="y")
        return psnr(y, self.transform(X))

    @classmethod
    def from_checkpoint(cls, path, config: NetworkConfig | None = None,
                        **params) -> "D2NetRestorer":
        """Build an already-fitted restorer from a saved checkpoint."""
        est = cls(config=config, **params)
        cfg = config or toy_train_config()
        net = D2Net(cfg, seed=est.seed, precision="single")
        load_checkpoint(path, net)
        est.network_ = net
        return est
