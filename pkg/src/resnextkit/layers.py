"""Differentiable layer set: grouped convolution, batch norm, ReLU,
global average pooling, linear head and softmax cross-entropy.

Convolution runs as im2col plus one batched matrix multiply per group; the
naive nested-loop formulation is kept in the test suite as its oracle.
All operations preserve the input dtype so the same code path serves both
float32 training and float64 gradient checking.
"""

import numpy as np

from . import tensor
from .autograd import Variable, param
from .tensor import ShapeError


def he_init(shape: tuple[int, ...], rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """He-normal sample: zero mean, std sqrt(2 / fan_in).

    fan_in is in_channels-per-group * kh * kw for a 4-D conv weight and the
    input feature count for a 2-D linear weight.
    """
    if len(shape) == 4:
        fan_in = shape[1] * shape[2] * shape[3]
    elif len(shape) == 2:
        fan_in = shape[0]
    else:
        raise ShapeError(f"he_init: expected a 2-D or 4-D weight shape, got {shape}")
    if fan_in <= 0:
        raise ShapeError(f"he_init: fan-in must be positive, got {fan_in}")
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(xp: np.ndarray, kernel: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Gather k*k patches of a padded NCHW array into [n, c*k*k, oh*ow]."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kernel, kernel, oh, ow),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return np.ascontiguousarray(patches).reshape(n, c * kernel * kernel, oh * ow)


def _col2im(dcols: np.ndarray, xp_shape: tuple[int, ...], kernel: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add column gradients back onto the padded input grid."""
    n, c, hp, wp = xp_shape
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    d6 = dcols.reshape(n, c, kernel, kernel, oh, ow)
    for u in range(kernel):
        for v in range(kernel):
            dxp[:, :, u:u + stride * oh:stride, v:v + stride * ow:stride] += d6[:, :, u, v]
    return dxp


def conv2d(x: Variable, weight: Variable, bias: Variable | None = None,
           stride: int = 1, pad: int = 0, groups: int = 1) -> Variable:
    """2-D convolution with contiguous channel groups.

    weight has shape [out_channels, in_channels/groups, k, k]; group g maps
    input channels [g*cin/g, (g+1)*cin/g) to output channels
    [g*cout/g, (g+1)*cout/g).
    """
    n, cin, h, w = tensor.check_nchw(x.value, "conv2d input")
    co, cig, kh, kw = tensor.check_nchw(weight.value, "conv2d weight")
    if kh != kw:
        raise ShapeError(f"conv2d: only square kernels supported, got {kh}x{kw}")
    k = kh
    if stride < 1 or pad < 0 or groups < 1:
        raise ShapeError(f"conv2d: bad stride/pad/groups ({stride}, {pad}, {groups})")
    if cin % groups != 0 or co % groups != 0:
        raise ShapeError(f"conv2d: channels ({cin} in, {co} out) not divisible by groups={groups}")
    if cig != cin // groups:
        raise ShapeError(f"conv2d: weight expects {cig * groups} input channels, input has {cin}")
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(f"conv2d: spatial dims {h}x{w} with pad {pad} smaller than kernel {k}")
    if x.value.dtype != weight.value.dtype:
        raise ShapeError(f"conv2d: dtype mismatch input {x.value.dtype} vs weight {weight.value.dtype}")

    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    pointwise = (k == 1 and stride == 1 and pad == 0)
    if pointwise:
        xp_shape = x.value.shape
        cols = x.value.reshape(n, cin, h * w)
    else:
        xp = tensor.pad2d(x.value, pad)
        xp_shape = xp.shape
        cols = _im2col(xp, k, stride, oh, ow)

    ckk = (cin // groups) * k * k
    cog = co // groups
    cols_g = cols.reshape(n, groups, ckk, oh * ow)
    w_g = weight.value.reshape(groups, cog, ckk)
    out_val = np.matmul(w_g, cols_g)                # [n, groups, cog, oh*ow]
    out_val = out_val.reshape(n, co, oh, ow)
    if bias is not None:
        if bias.value.shape != (co,):
            raise ShapeError(f"conv2d: bias shape {bias.value.shape}, expected ({co},)")
        out_val = out_val + bias.value[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Variable(out_val, parents=parents)

    def _bwd():
        g = out.grad.reshape(n, groups, cog, oh * ow)
        if weight.requires_grad:
            dw = np.matmul(g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0)
            weight.accumulate_grad(dw.reshape(weight.value.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(out.grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w_g.transpose(0, 2, 1), g).reshape(n, cin * k * k, oh * ow)
            if pointwise:
                dx = dcols.reshape(n, cin, h, w)
            else:
                dxp = _col2im(dcols, xp_shape, k, stride, oh, ow)
                dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
            x.accumulate_grad(dx)

    out._backward = _bwd
    return out


def batchnorm2d(x: Variable, gamma: Variable, beta: Variable,
                running_mean: np.ndarray, running_var: np.ndarray,
                eps: float = 1e-5, momentum: float = 0.1, train: bool = True) -> Variable:
    """Per-channel batch normalization.

    Train mode normalizes by the batch's biased mean/variance and folds them
    into the running statistics in place (running stats are state, not
    parameters). Eval mode normalizes by the running statistics only.
    """
    n, c, h, w = tensor.check_nchw(x.value, "batchnorm input")
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta shapes {gamma.value.shape}/{beta.value.shape}, input has {c} channels")
    count = n * h * w
    if train:
        if count < 2:
            raise ShapeError(f"batchnorm: train mode needs >=2 values per channel, got {count}")
        mean = x.value.mean(axis=(0, 2, 3))
        var = x.value.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.value.dtype, copy=False)
        var = running_var.astype(x.value.dtype, copy=False)

    invstd = 1.0 / np.sqrt(var + eps)
    x_hat = (x.value - mean[None, :, None, None]) * invstd[None, :, None, None]
    out_val = gamma.value[None, :, None, None] * x_hat + beta.value[None, :, None, None]
    out = Variable(out_val, parents=(x, gamma, beta))

    def _bwd():
        g = out.grad
        dgamma = (g * x_hat).sum(axis=(0, 2, 3))
        if gamma.requires_grad:
            gamma.accumulate_grad(dgamma)
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            scale = (gamma.value * invstd)[None, :, None, None]
            if train:
                dbeta = g.sum(axis=(0, 2, 3))
                dx = (scale / count) * (
                    count * g
                    - dbeta[None, :, None, None]
                    - x_hat * dgamma[None, :, None, None]
                )
            else:
                dx = scale * g
            x.accumulate_grad(dx)

    out._backward = _bwd
    return out


def relu(x: Variable) -> Variable:
    """max(0, x); gradient flows only where the input is strictly positive."""
    out = Variable(np.maximum(x.value, 0), parents=(x,))

    def _bwd():
        if x.requires_grad:
            x.accumulate_grad(out.grad * (x.value > 0))

    out._backward = _bwd
    return out


def global_avg_pool(x: Variable) -> Variable:
    """Mean over all spatial positions, [n,c,h,w] -> [n,c]."""
    n, c, h, w = tensor.check_nchw(x.value, "pool input")
    if h < 1 or w < 1:
        raise ShapeError(f"global_avg_pool: empty spatial dims in shape {x.value.shape}")
    out = Variable(x.value.mean(axis=(2, 3)), parents=(x,))

    def _bwd():
        if x.requires_grad:
            g = out.grad[:, :, None, None] / (h * w)
            x.accumulate_grad(np.broadcast_to(g, x.value.shape))

    out._backward = _bwd
    return out


def linear(x: Variable, weight: Variable, bias: Variable) -> Variable:
    """Affine map on row vectors: x[n,f] @ weight[f,k] + bias[k]."""
    if x.value.ndim != 2 or weight.value.ndim != 2:
        raise ShapeError(f"linear: expected 2-D operands, got {x.value.shape} and {weight.value.shape}")
    if x.value.shape[1] != weight.value.shape[0]:
        raise ShapeError(f"linear: inner dims disagree, {x.value.shape} x {weight.value.shape}")
    if bias.value.shape != (weight.value.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.value.shape}, expected ({weight.value.shape[1]},)")
    out_val = tensor.matmul(x.value, weight.value) + bias.value[None, :]
    out = Variable(out_val, parents=(x, weight, bias))

    def _bwd():
        g = out.grad
        if weight.requires_grad:
            weight.accumulate_grad(x.value.T @ g)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate_grad(g @ weight.value.T)

    out._backward = _bwd
    return out


def softmax_cross_entropy(logits: Variable, labels: np.ndarray) -> Variable:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Computed with max-subtraction for stability; the backward rule is the
    analytic (softmax - one_hot) / batch_size.
    """
    if logits.value.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be [n, classes], got {logits.value.shape}")
    n, k = logits.value.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape}, expected ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"cross_entropy: label out of range [0, {k}): {labels.min()}..{labels.max()}")

    z = logits.value - logits.value.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), labels].mean()
    out = Variable(np.asarray(loss, dtype=logits.value.dtype), parents=(logits,))
    probs = np.exp(log_probs)

    def _bwd():
        if logits.requires_grad:
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            logits.accumulate_grad(d * (out.grad / n))

    out._backward = _bwd
    return out


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (prediction-time helper)."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# parameter-owning layer objects
# ---------------------------------------------------------------------------

class Conv2d:
    """Convolution layer owning its weight (and optional bias) parameters."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, pad: int = 0, groups: int = 1, bias: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32, name: str = "conv"):
        if in_channels % groups or out_channels % groups:
            raise ShapeError(f"{name}: channels ({in_channels}, {out_channels}) not divisible by groups={groups}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.groups = groups
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        wshape = (out_channels, in_channels // groups, kernel, kernel)
        self.weight = param(he_init(wshape, rng, dtype), name=f"{name}.weight")
        self.bias = param(np.zeros(out_channels, dtype=dtype), name=f"{name}.bias") if bias else None

    def forward(self, x: Variable) -> Variable:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad, groups=self.groups)

    def parameters(self):
        yield self.weight
        if self.bias is not None:
            yield self.bias


class BatchNorm2d:
    """Batch normalization layer: learnable gamma/beta plus running stats."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32, name: str = "bn"):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.name = name
        self.gamma = param(np.ones(channels, dtype=dtype), name=f"{name}.gamma")
        self.beta = param(np.zeros(channels, dtype=dtype), name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Variable, train: bool) -> Variable:
        return batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           eps=self.eps, momentum=self.momentum, train=train)

    def parameters(self):
        yield self.gamma
        yield self.beta


class Linear:
    """Fully-connected layer with He-normal weight and zero bias."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32, name: str = "fc"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.name = name
        self.weight = param(he_init((in_features, out_features), rng, dtype), name=f"{name}.weight")
        self.bias = param(np.zeros(out_features, dtype=dtype), name=f"{name}.bias")

    def forward(self, x: Variable) -> Variable:
        return linear(x, self.weight, self.bias)

    def parameters(self):
        yield self.weight
        yield self.bias
