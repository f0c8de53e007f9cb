"""Dense numerical layers with explicit forward/backward passes.

Every operation works on plain float64 numpy arrays in NCHW layout and is
deterministic for identical inputs.  Backward passes are hand-derived; the
test suite checks each one against central finite differences.

Conventions fixed here:
  - conv2d uses cross-correlation semantics (no kernel flip).
  - batchnorm uses eps=1e-5 and running-stat momentum 0.1.
  - max pooling breaks ties toward the first position in row-major window
    order, so the backward routing is deterministic.
  - SGD momentum: v <- alpha*v + g; w <- w - eta*v.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class LayerGradients:
    """Gradients produced by one layer's backward pass."""

    input_grad: np.ndarray
    parameter_grads: dict[str, np.ndarray]


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _conv_padding(kh: int, kw: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        return (kh - 1) // 2, (kw - 1) // 2
    raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_columns(x, kh: int, kw: int, padding: str = "valid") -> np.ndarray:
    """im2col: contiguous (batch, oh, ow, in_ch, kh, kw) window array.

    Built once per layer step and shared between conv2d and conv2d_backward;
    this layout feeds BLAS matmuls without further copies.
    """
    x = _as_f64(x)
    ph, pw = _conv_padding(kh, kw, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))


def _check_conv_shapes(x, kernels, bias, padding):
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input/kernels, got {x.shape} and {kernels.shape}")
    out_ch, k_in, kh, kw = kernels.shape
    if x.shape[1] != k_in:
        raise ShapeError(f"input has {x.shape[1]} channels but kernels expect {k_in}")
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError(f"bias shape {bias.shape} != ({out_ch},)")
    ph, pw = _conv_padding(kh, kw, padding)
    if kh > x.shape[2] + 2 * ph or kw > x.shape[3] + 2 * pw:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{x.shape[2] + 2 * ph}x{x.shape[3] + 2 * pw}")
    return ph, pw


def conv2d(x, kernels, bias, padding: str = "valid", columns: np.ndarray | None = None) -> np.ndarray:
    """Cross-correlate a batch of images with a kernel stack.

    x: (batch, in_ch, h, w); kernels: (out_ch, in_ch, kh, kw); bias: (out_ch,).
    Output spatial size is h - kh + 1 + 2*pad (pad = (k-1)//2 for 'same').
    ``columns`` may carry a precomputed conv2d_columns(x, ...) result.
    """
    x, kernels, bias = _as_f64(x), _as_f64(kernels), _as_f64(bias)
    _check_conv_shapes(x, kernels, bias, padding)
    out_ch, k_in, kh, kw = kernels.shape
    if columns is None:
        columns = conv2d_columns(x, kh, kw, padding)
    b, oh, ow = columns.shape[:3]
    flat = columns.reshape(b * oh * ow, k_in * kh * kw)
    out = flat @ kernels.reshape(out_ch, -1).T
    out = np.ascontiguousarray(out.reshape(b, oh, ow, out_ch).transpose(0, 3, 1, 2))
    out += bias[None, :, None, None]
    return out


def conv2d_backward(x, kernels, output_grad, padding: str = "valid",
                    columns: np.ndarray | None = None) -> LayerGradients:
    """Gradients of a conv2d output w.r.t. input, kernels and bias."""
    x, kernels, dy = _as_f64(x), _as_f64(kernels), _as_f64(output_grad)
    ph, pw = _check_conv_shapes(x, kernels, None, padding)
    out_ch, k_in, kh, kw = kernels.shape
    b, _, h, w = x.shape
    oh, ow = h - kh + 1 + 2 * ph, w - kw + 1 + 2 * pw
    if dy.shape != (b, out_ch, oh, ow):
        raise ShapeError(f"output_grad shape {dy.shape} != {(b, out_ch, oh, ow)}")
    if columns is None:
        columns = conv2d_columns(x, kh, kw, padding)

    dy_flat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(b * oh * ow, out_ch)
    cols_flat = columns.reshape(b * oh * ow, k_in * kh * kw)
    d_kernels = (dy_flat.T @ cols_flat).reshape(out_ch, k_in, kh, kw)
    d_bias = dy.sum(axis=(0, 2, 3))

    # col2im: push each column gradient back to its input window
    d_cols = (dy_flat @ kernels.reshape(out_ch, -1)).reshape(b, oh, ow, k_in, kh, kw)
    dxp = np.zeros((b, k_in, h + 2 * ph, w + 2 * pw))
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u:u + oh, v:v + ow] += d_cols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    dx = dxp[:, :, ph:ph + h, pw:pw + w]
    return LayerGradients(
        input_grad=np.ascontiguousarray(dx),
        parameter_grads={"kernels": d_kernels, "bias": d_bias},
    )


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def elu(x) -> np.ndarray:
    """Exponential linear unit with a=1: x for x>0, exp(x)-1 otherwise."""
    x = _as_f64(x)
    return np.where(x > 0, x, np.expm1(x))


def elu_backward(x, output_grad) -> np.ndarray:
    x, dy = _as_f64(x), _as_f64(output_grad)
    return dy * np.where(x > 0, 1.0, np.exp(x))


def sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function."""
    x = _as_f64(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y, output_grad) -> np.ndarray:
    """Backward from the forward *output* y = sigmoid(x)."""
    y, dy = _as_f64(y), _as_f64(output_grad)
    return dy * y * (1.0 - y)


# ---------------------------------------------------------------------------
# max pooling (kernel fixed at 2x2)
# ---------------------------------------------------------------------------

def _pool_windows(x: np.ndarray, stride: int) -> np.ndarray:
    return sliding_window_view(x, (2, 2), axis=(2, 3))[:, :, ::stride, ::stride]


def maxpool2d(x, stride: int = 2) -> np.ndarray:
    """2x2 max pooling; output spatial size is (n-2)//stride + 1."""
    x = _as_f64(x)
    if stride < 1:
        raise ShapeError(f"pool stride must be >= 1, got {stride}")
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"maxpool2d needs spatial dims >= 2, got {x.shape}")
    return _pool_windows(x, stride).max(axis=(4, 5))


def maxpool2d_backward(x, output_grad, stride: int = 2) -> np.ndarray:
    """Route each output gradient to its window's argmax (first on ties)."""
    x, dy = _as_f64(x), _as_f64(output_grad)
    windows = _pool_windows(x, stride)
    b, c, oh, ow = windows.shape[:4]
    if dy.shape != (b, c, oh, ow):
        raise ShapeError(f"output_grad shape {dy.shape} != {(b, c, oh, ow)}")
    flat = windows.reshape(b, c, oh, ow, 4)
    idx = flat.argmax(axis=4)
    rows = idx // 2 + (np.arange(oh) * stride)[None, None, :, None]
    cols = idx % 2 + (np.arange(ow) * stride)[None, None, None, :]
    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    dx = np.zeros_like(x)
    np.add.at(dx, (bi, ci, rows, cols), dy)
    return dx


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    if x.ndim == 2:
        return (0,)
    if x.ndim == 4:
        return (0, 2, 3)
    raise ShapeError(f"batchnorm expects 2-d or 4-d input, got {x.shape}")


def _bn_bcast(v: np.ndarray, ndim: int) -> np.ndarray:
    return v[None, :] if ndim == 2 else v[None, :, None, None]


def batchnorm(x, gamma, beta, running_mean, running_var, train: bool,
              eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
    """Normalize per channel (axis 1) by batch or running statistics.

    Train mode returns (y, cache, new_running_mean, new_running_var) and needs
    batch >= 2; infer mode returns (y, None, running_mean, running_var)
    unchanged.  The cache feeds :func:`batchnorm_backward`.
    """
    x = _as_f64(x)
    gamma, beta = _as_f64(gamma), _as_f64(beta)
    axes = _bn_axes(x)
    nd = x.ndim
    if train:
        if x.shape[0] < 2:
            raise ShapeError("batchnorm train mode needs batch >= 2 (variance is degenerate)")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_rm = (1.0 - momentum) * _as_f64(running_mean) + momentum * mu
        new_rv = (1.0 - momentum) * _as_f64(running_var) + momentum * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - _bn_bcast(mu, nd)) * _bn_bcast(inv, nd)
        y = _bn_bcast(gamma, nd) * xhat + _bn_bcast(beta, nd)
        cache = (xhat, inv, gamma, axes)
        return y, cache, new_rm, new_rv
    rm, rv = _as_f64(running_mean), _as_f64(running_var)
    inv = 1.0 / np.sqrt(rv + eps)
    xhat = (x - _bn_bcast(rm, nd)) * _bn_bcast(inv, nd)
    y = _bn_bcast(gamma, nd) * xhat + _bn_bcast(beta, nd)
    cache = (xhat, inv, gamma, axes)
    return y, cache, rm, rv


def batchnorm_backward(cache, output_grad, train: bool = True):
    """Gradients w.r.t. input, gamma and beta.

    In train mode the batch statistics depend on the input, which couples all
    samples; with frozen (running) statistics the map is a plain affine
    transform per channel.
    """
    xhat, inv, gamma, axes = cache
    dy = _as_f64(output_grad)
    nd = dy.ndim
    d_gamma = (dy * xhat).sum(axis=axes)
    d_beta = dy.sum(axis=axes)
    dxhat = dy * _bn_bcast(gamma, nd)
    if not train:
        dx = dxhat * _bn_bcast(inv, nd)
        return dx, d_gamma, d_beta
    m = float(np.prod([dy.shape[a] for a in axes]))
    sum_dxhat = dxhat.sum(axis=axes)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes)
    dx = (_bn_bcast(inv, nd) / m) * (
        m * dxhat - _bn_bcast(sum_dxhat, nd) - xhat * _bn_bcast(sum_dxhat_xhat, nd)
    )
    return dx, d_gamma, d_beta


# ---------------------------------------------------------------------------
# dense layer
# ---------------------------------------------------------------------------

def dense(x, weights, bias) -> np.ndarray:
    """Affine map: (batch, n) @ (m, n)^T + (m,) -> (batch, m)."""
    x, weights, bias = _as_f64(x), _as_f64(weights), _as_f64(bias)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"dense mismatch: input {x.shape} vs weights {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
    return x @ weights.T + bias


def dense_backward(x, weights, output_grad) -> LayerGradients:
    x, weights, dy = _as_f64(x), _as_f64(weights), _as_f64(output_grad)
    if dy.shape != (x.shape[0], weights.shape[0]):
        raise ShapeError(f"output_grad shape {dy.shape} != {(x.shape[0], weights.shape[0])}")
    return LayerGradients(
        input_grad=dy @ weights,
        parameter_grads={"weights": dy.T @ x, "bias": dy.sum(axis=0)},
    )


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient 2*(pred-target)/batch."""
    pred, target = _as_f64(pred), _as_f64(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    n = pred.shape[0] if pred.ndim else 0
    if n == 0:
        raise ShapeError("mse_loss needs a non-empty batch")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / n


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """SGD-with-momentum state: eta, alpha, and one velocity per parameter."""

    learning_rate: float = 0.01
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                      state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """Update parameters in place: v <- alpha*v + g; w <- w - eta*v."""
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name!r}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
            state.velocity[name] = v
        v *= state.momentum
        v += g
        w -= state.learning_rate * v
    return params, state
