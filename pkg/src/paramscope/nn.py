"""Hand-written float64 forward/backward kernels and the Adam optimizer.

Every op takes and returns ``numpy.ndarray`` float64 tensors.  Backward
functions map the upstream gradient to gradients for each input, written
out explicitly so each kernel can be verified against central finite
differences (see :func:`grad_check`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(ValueError):
    """Raised when an optimizer step receives NaN/inf gradient entries."""


def _as2d(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``y = x @ w + b`` with x (B, n_in), w (n_in, n_out), b (n_out,)."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"shape mismatch: x {x.shape} @ w {w.shape}")
    return x @ w + b


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Return (dx, dw, db) for ``y = x @ w + b``."""
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# relu
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0; the subgradient at exactly 0 is taken as 0."""
    return dy * (x > 0.0)


# ---------------------------------------------------------------------------
# softmax / cross-entropy
# ---------------------------------------------------------------------------

def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    z = _as2d(z, "z")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of integer ``labels`` under ``probs``."""
    probs = _as2d(probs, "probs")
    labels = np.asarray(labels)
    if labels.shape[0] != probs.shape[0]:
        raise ValueError(f"batch mismatch: probs {probs.shape} labels {labels.shape}")
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(np.mean(-np.log(picked)))


def softmax_cross_entropy(z: np.ndarray, labels: np.ndarray):
    """Loss from logits via log-sum-exp, plus gradient and probabilities.

    Returns ``(loss, dz, probs)`` where ``dz = (probs - onehot) / B`` is the
    gradient of the mean loss with respect to the logits.
    """
    z = _as2d(z, "z")
    labels = np.asarray(labels)
    b = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1)) + zmax[:, 0]
    loss = float(np.mean(lse - z[np.arange(b), labels]))
    probs = softmax(z)
    dz = probs.copy()
    dz[np.arange(b), labels] -= 1.0
    dz /= b
    return loss, dz, probs


# ---------------------------------------------------------------------------
# conv2d: 3x3 kernels, valid padding, stride 1 (cross-correlation)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, C, H, W) -> (B, H', W', C*kh*kw) patches for valid stride-1 windows."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # windows: (B, C, H', W', kh, kw) -> (B, H', W', C, kh, kw)
    windows = windows.transpose(0, 2, 3, 1, 4, 5)
    b, ho, wo = windows.shape[:3]
    return np.ascontiguousarray(windows).reshape(b, ho, wo, -1)


def conv2d_forward(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid stride-1 cross-correlation.

    x (B, C_in, H, W), k (C_out, C_in, 3, 3), b (C_out,) ->
    y (B, C_out, H-2, W-2).
    """
    if x.ndim != 4 or k.ndim != 4:
        raise ValueError(f"expected 4-D x and k, got {x.shape} and {k.shape}")
    if k.shape[2:] != (3, 3):
        raise ValueError(f"kernel must be 3x3, got {k.shape[2:]}")
    if x.shape[1] != k.shape[1]:
        raise ValueError(f"channel mismatch: x {x.shape} k {k.shape}")
    if x.shape[2] < 3 or x.shape[3] < 3:
        raise ValueError(f"input {x.shape[2:]} smaller than kernel")
    cols = _im2col(x, 3, 3)                    # (B, H', W', C*9)
    kmat = k.reshape(k.shape[0], -1).T          # (C*9, C_out)
    y = cols @ kmat + b                         # (B, H', W', C_out)
    return y.transpose(0, 3, 1, 2)


def conv2d_backward(dy: np.ndarray, x: np.ndarray, k: np.ndarray):
    """Return (dx, dk, db) for :func:`conv2d_forward`."""
    b_sz, c_out, ho, wo = dy.shape
    c_in = x.shape[1]
    cols = _im2col(x, 3, 3).reshape(-1, c_in * 9)          # (B*H'*W', C*9)
    dyf = dy.transpose(0, 2, 3, 1).reshape(-1, c_out)       # (B*H'*W', C_out)
    dk = (cols.T @ dyf).T.reshape(c_out, c_in, 3, 3)
    db = dyf.sum(axis=0)
    dcols = (dyf @ k.reshape(c_out, -1)).reshape(b_sz, ho, wo, c_in, 3, 3)
    dx = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            dx[:, :, di:di + ho, dj:dj + wo] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return dx, dk, db


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------

LAYER_NORM_EPS = 1e-9


def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                       eps: float = LAYER_NORM_EPS):
    """Normalize over the last axis; returns (y, cache).

    ``y = gamma * (x - mean) / sqrt(var + eps) + beta`` with population
    variance over the last axis.
    """
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv)


def layer_norm_backward(dy: np.ndarray, cache, gamma: np.ndarray):
    """Return (dx, dgamma, dbeta) for :func:`layer_norm_forward`."""
    xhat, inv = cache
    reduce_axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=reduce_axes)
    dbeta = dy.sum(axis=reduce_axes)
    dxhat = dy * gamma
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# multi-head attention (bias-free projections, post-norm block lives in models)
# ---------------------------------------------------------------------------

def multi_head_attention_forward(x: np.ndarray, wq: np.ndarray, wk: np.ndarray,
                                 wv: np.ndarray, wo: np.ndarray, nhead: int):
    """Standard multi-head self-attention; returns (y, cache).

    x (B, T, d); all projection matrices (d, d); scale = 1/sqrt(d/nhead).
    ``d`` must be divisible by ``nhead``.
    """
    b, t, d = x.shape
    if d % nhead != 0:
        raise ValueError(f"d_model {d} not divisible by nhead {nhead}")
    dh = d // nhead
    scale = 1.0 / np.sqrt(dh)
    xf = np.ascontiguousarray(x).reshape(b * t, d)

    def heads(m):  # (B*T, d) -> (B, nhead, T, dh)
        return m.reshape(b, t, nhead, dh).transpose(0, 2, 1, 3)

    q = heads(xf @ wq)
    k = heads(xf @ wk)
    v = heads(xf @ wv)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale          # (B, nh, T, T)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)                 # rows sum to 1
    ctx = attn @ v                                           # (B, nh, T, dh)
    concat = ctx.transpose(0, 2, 1, 3).reshape(b * t, d)
    y = (concat @ wo).reshape(b, t, d)
    return y, (xf, q, k, v, attn, concat, scale)


def multi_head_attention_backward(dy: np.ndarray, cache, wq: np.ndarray,
                                  wk: np.ndarray, wv: np.ndarray, wo: np.ndarray):
    """Return (dx, dwq, dwk, dwv, dwo) for the attention forward above."""
    xf, q, k, v, attn, concat, scale = cache
    b, nhead, t, dh = q.shape
    d = nhead * dh

    dyf = dy.reshape(b * t, d)
    dwo = concat.T @ dyf
    dconcat = dyf @ wo.T
    dctx = dconcat.reshape(b, t, nhead, dh).transpose(0, 2, 1, 3)

    dattn = dctx @ v.transpose(0, 1, 3, 2)                   # (B, nh, T, T)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    # softmax backward per row: ds = attn * (dattn - sum(dattn * attn))
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dscores *= scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    def unheads(m):  # (B, nhead, T, dh) -> (B*T, d)
        return m.transpose(0, 2, 1, 3).reshape(b * t, d)

    uq, uk, uv = unheads(dq), unheads(dk), unheads(dv)
    dwq = xf.T @ uq
    dwk = xf.T @ uk
    dwv = xf.T @ uv
    dx = (uq @ wq.T + uk @ wk.T + uv @ wv.T).reshape(b, t, d)
    return dx, dwq, dwk, dwv, dwo


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ADAM_LR = 0.001


@dataclass
class AdamState:
    """Per-parameter Adam accumulators (first/second moment, step count)."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_param(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float = ADAM_LR, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
    """One Adam update; mutates ``param``/``state`` in place and returns them.

    Bias-corrected moments, epsilon outside the square root:
    ``param -= lr * m_hat / (sqrt(v_hat) + eps)``.  Non-finite gradient
    entries abort the step with :class:`NonFiniteGradientError`.
    """
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(
            f"non-finite gradient entries: {int(np.sum(~np.isfinite(grad)))}")
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    step = grad * grad
    step *= 1.0 - beta2
    state.v *= beta2
    state.v += step
    # step = sqrt(v_hat) + eps, then the final update, reusing the buffer
    np.divide(state.v, 1.0 - beta2 ** state.t, out=step)
    np.sqrt(step, out=step)
    step += eps
    np.divide(state.m, step, out=step)
    step *= lr / (1.0 - beta1 ** state.t)
    param -= step
    return param, state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

GRAD_CHECK_DELTA = 1e-5
_REL_ERR_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    per_param: dict = field(default_factory=dict)


def grad_check(loss_fn, params: dict, analytic: dict, stream,
               delta: float = GRAD_CHECK_DELTA, max_coords: int = 100) -> GradCheckResult:
    """Compare analytic gradients to central finite differences.

    ``loss_fn()`` recomputes the scalar loss from the live ``params`` dict;
    ``analytic`` maps the same names to gradient arrays.  For each tensor up
    to ``max_coords`` coordinates are sampled with ``stream`` and perturbed
    by ``+/- delta``.  Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-6)``; the floor keeps float64 round-off on
    O(1) losses (~1e-11) from dominating at true-zero gradients.
    """
    per_param = {}
    worst = ("", 0.0)
    for name, p in params.items():
        g = analytic[name]
        if p.size <= max_coords:
            coords = np.arange(p.size)
        else:
            coords = np.unique(stream.integers(max_coords * 2, p.size))[:max_coords]
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError(f"parameter {name} is not contiguous")
        gflat = g.reshape(-1)
        worst_here = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + delta
            lp = loss_fn()
            flat[c] = orig - delta
            lm = loss_fn()
            flat[c] = orig
            numeric = (lp - lm) / (2.0 * delta)
            a = gflat[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), _REL_ERR_FLOOR)
            if rel > worst_here:
                worst_here = rel
        per_param[name] = worst_here
        if worst_here > worst[1]:
            worst = (name, worst_here)
    return GradCheckResult(max_rel_err=worst[1], worst_param=worst[0], per_param=per_param)
