"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def check_image_batch(X, dtype=np.float32, name: str = "X") -> np.ndarray:
    """Coerce images into a (N, 3, H, W) float array in [0, 1].

    Accepts a single (3, H, W) image, a (N, 3, H, W) batch, or a sequence of
    equally sized (3, H, W) images.
    """
    if isinstance(X, (list, tuple)):
        try:
            X = np.stack([np.asarray(img) for img in X])
        except ValueError as exc:
            raise DataError(f"{name}: images must share one shape ({exc})") from None
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise DataError(f"{name}: expected (N, 3, H, W) images, got {X.shape}")
    if not np.issubdtype(X.dtype, np.floating):
        raise DataError(f"{name}: expected float pixels in [0, 1], got {X.dtype}")
    X = X.astype(dtype, copy=False)
    if X.size and (not np.isfinite(X).all() or X.min() < 0.0 or X.max() > 1.0):
        raise DataError(f"{name}: pixel values must be finite and lie in [0, 1]")
    return X
