"""Dense 4-D array kernels in batch-channel-height-width (NCHW) layout.

Tensors are plain numpy arrays: float32 for training, float64 for the
finite-difference oracles. There is no broadcasting; every shape agreement
is explicit and violations raise ShapeError naming both shapes. All kernels
are pure: inputs are never mutated and outputs own their memory.
"""

from typing import NamedTuple, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when tensor shapes or dtypes do not agree."""


class Shape(NamedTuple):
    """NCHW extent of a tensor: batch, channels, height, width."""

    n: int
    c: int
    h: int
    w: int

    @property
    def element_count(self) -> int:
        return self.n * self.c * self.h * self.w


def shape_of(x: np.ndarray) -> Shape:
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D NCHW array, got ndim={x.ndim} shape={x.shape}")
    return Shape(*x.shape)


def check_dtype(x: np.ndarray, name: str = "tensor") -> None:
    if x.dtype not in FLOAT_DTYPES:
        raise ShapeError(f"{name} must be float32 or float64, got {x.dtype}")


def check_nchw(x: np.ndarray, name: str = "tensor") -> Shape:
    check_dtype(x, name)
    return shape_of(x)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum of two tensors of identical shape."""
    check_dtype(a, "a")
    check_dtype(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"add: dtype mismatch {a.dtype} vs {b.dtype}")
    return a + b


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate tensors along the channel axis, in list order.

    All parts must share batch, height and width.
    """
    if len(parts) == 0:
        raise ShapeError("concat_channels: empty part list")
    first = check_nchw(parts[0], "parts[0]")
    for i, p in enumerate(parts[1:], start=1):
        s = check_nchw(p, f"parts[{i}]")
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) or p.dtype != parts[0].dtype:
            raise ShapeError(
                f"concat_channels: parts[{i}] has shape {p.shape} ({p.dtype}), "
                f"expected n/h/w {first.n}/{first.h}/{first.w} ({parts[0].dtype})"
            )
    return np.concatenate(parts, axis=1)


def split_channels(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Split a tensor into consecutive channel ranges of the given sizes."""
    s = check_nchw(x, "x")
    if any(k <= 0 for k in sizes):
        raise ShapeError(f"split_channels: sizes must be positive, got {list(sizes)}")
    if sum(sizes) != s.c:
        raise ShapeError(f"split_channels: sizes {list(sizes)} sum to {sum(sizes)}, tensor has {s.c} channels")
    out = []
    offset = 0
    for k in sizes:
        out.append(x[:, offset:offset + k].copy())
        offset += k
    return out


def pad2d(x: np.ndarray, p: int) -> np.ndarray:
    """Zero-pad the two spatial dimensions by p pixels on every side."""
    s = check_nchw(x, "x")
    if p < 0:
        raise ShapeError(f"pad2d: padding must be non-negative, got {p}")
    if p == 0:
        return x.copy()
    out = np.zeros((s.n, s.c, s.h + 2 * p, s.w + 2 * p), dtype=x.dtype)
    out[:, :, p:p + s.h, p:p + s.w] = x
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D arrays with an explicit inner-dimension check."""
    check_dtype(a, "a")
    check_dtype(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    return a @ b
