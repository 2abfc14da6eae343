"""Input validation helpers for the estimator-facing API."""

import numpy as np


class NotFittedError(RuntimeError):
    """Raised when predict/score is called before fit."""


def check_images(X) -> np.ndarray:
    """Coerce X to uint8 pixels of shape [n, 3, 32, 32].

    Accepts any numeric dtype with values in [0, 255]; rejects NaN/inf,
    wrong rank and wrong channel/spatial extents.
    """
    arr = np.asarray(X)
    if arr.ndim != 4 or arr.shape[1:] != (3, 32, 32):
        raise ValueError(f"expected images of shape [n, 3, 32, 32], got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("empty image batch")
    if not np.issubdtype(arr.dtype, np.number):
        raise ValueError(f"images must be numeric, got dtype {arr.dtype}")
    if np.issubdtype(arr.dtype, np.floating):
        if not np.all(np.isfinite(arr)):
            raise ValueError("images contain NaN or infinite values")
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError(
            f"pixel values must lie in [0, 255], got range [{arr.min()}, {arr.max()}]"
        )
    return arr.astype(np.uint8)


def check_labels(y, n: int) -> np.ndarray:
    """Coerce y to an integer label vector aligned with n images."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D label vector, got shape {arr.shape}")
    if arr.shape[0] != n:
        raise ValueError(f"{arr.shape[0]} labels for {n} images")
    if not np.issubdtype(arr.dtype, np.integer):
        cast = arr.astype(np.int64)
        if not np.array_equal(cast, arr):
            raise ValueError("labels must be integers")
        arr = cast
    return arr.astype(np.int64)


def check_is_fitted(estimator, attributes: tuple[str, ...]) -> None:
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet (missing {', '.join(missing)}); "
            f"call fit first"
        )
