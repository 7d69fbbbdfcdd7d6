"""Model families: 2-hidden-layer DNN, single-conv CNN, depth-1 ViT.

A model is a :class:`ModelSpec` plus an ordered dict of named float64
parameter arrays.  Forward and backward passes are written out by hand on
top of the kernels in :mod:`paramscope.nn`; every family exposes the same
three entry points (:func:`forward`, :func:`loss_and_grads`,
:func:`weight_groups`) so the trainer and analysis layers stay
family-agnostic.

Parameter naming doubles as the analysis grouping: biases (``*_b``) and
norm shifts are never part of weight statistics, and `weight_groups`
returns the named layer groups plus a ``whole_net`` concatenation whose
length always equals the sum of the named groups.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .rng import RngStream

FAMILIES = ("dnn", "cnn", "vit")

# layer groups per family, in display order (whole_net is appended by
# weight_groups); names echo the figure panels they feed
ANALYSIS_GROUPS = {
    "dnn": ("ip_fc1", "fc1_fc2", "fc2_op"),
    "cnn": ("conv1", "fc"),
    "vit": ("attn", "mlp", "norm"),
}

MLP_HIDDEN_FACTOR = 2  # ViT encoder MLP hidden size = factor * d_model

# default N(mean, std) initialization scale per family
DEFAULT_INIT_STD = {"dnn": 0.05, "cnn": 0.05, "vit": 0.02}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture + initialization description; hashable cohort identity."""

    family: str
    input_shape: tuple = (1, 28, 28)          # (C, H, W)
    classes: int = 10
    hidden: tuple = (100, 100)                 # dnn: two hidden widths
    channels: int = 8                          # cnn: conv output channels
    gap: bool = False                          # cnn: global average pooling
    d_model: int = 784                         # vit: embedding width
    nhead: int = 4                             # vit: attention heads
    patch_grid: int = 2                        # vit: grid g -> T = g*g tokens
    init_mean: float = 0.0
    init_std: float | None = None              # None -> DEFAULT_INIT_STD[family]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.init_std is None:
            object.__setattr__(self, "init_std", DEFAULT_INIT_STD[self.family])
        c, h, w = self.input_shape
        if c < 1 or h < 1 or w < 1:
            raise ValueError(f"bad input_shape {self.input_shape}")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.init_std < 0:
            raise ValueError(f"init_std must be >= 0, got {self.init_std}")
        if self.family == "dnn":
            if len(self.hidden) != 2 or any(h_ <= 0 for h_ in self.hidden):
                raise ValueError(f"dnn needs two positive hidden widths, got {self.hidden}")
        elif self.family == "cnn":
            if self.channels < 1:
                raise ValueError(f"channels must be >= 1, got {self.channels}")
            if h < 3 or w < 3:
                raise ValueError(f"input {h}x{w} too small for 3x3 conv")
        elif self.family == "vit":
            if self.d_model % self.nhead != 0:
                raise ValueError(
                    f"d_model {self.d_model} not divisible by nhead {self.nhead}")
            if self.patch_grid < 1 or h % self.patch_grid or w % self.patch_grid:
                raise ValueError(
                    f"patch_grid {self.patch_grid} must evenly divide input {h}x{w}")

    def to_dict(self) -> dict:
        """Family-relevant fields only, for manifests/checkpoints/cohorts."""
        d = {"family": self.family, "input_shape": list(self.input_shape),
             "classes": self.classes, "init_mean": self.init_mean,
             "init_std": self.init_std}
        if self.family == "dnn":
            d["hidden"] = list(self.hidden)
        elif self.family == "cnn":
            d["channels"] = self.channels
            d["gap"] = self.gap
        else:
            d["d_model"] = self.d_model
            d["nhead"] = self.nhead
            d["patch_grid"] = self.patch_grid
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        kw = dict(d)
        if "input_shape" in kw:
            kw["input_shape"] = tuple(kw["input_shape"])
        if "hidden" in kw:
            kw["hidden"] = tuple(kw["hidden"])
        return cls(**kw)

    def canonical_key(self) -> str:
        """Deterministic JSON string identifying a cohort of trials."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class Model:
    spec: ModelSpec
    params: dict  # name -> np.ndarray, insertion order = init draw order


def param_count(model: Model) -> int:
    return sum(p.size for p in model.params.values())


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _init_weight(stream: RngStream, shape, spec: ModelSpec) -> np.ndarray:
    return stream.normal(shape, mean=spec.init_mean, std=spec.init_std)


def build_model(spec: ModelSpec, stream: RngStream) -> Model:
    """Initialize parameters; weights drawn in insertion order, biases zero."""
    c, h, w = spec.input_shape
    p: dict[str, np.ndarray] = {}
    if spec.family == "dnn":
        n_in = c * h * w
        h1, h2 = spec.hidden
        p["ip_fc1_w"] = _init_weight(stream, (n_in, h1), spec)
        p["ip_fc1_b"] = np.zeros(h1)
        p["fc1_fc2_w"] = _init_weight(stream, (h1, h2), spec)
        p["fc1_fc2_b"] = np.zeros(h2)
        p["fc2_op_w"] = _init_weight(stream, (h2, spec.classes), spec)
        p["fc2_op_b"] = np.zeros(spec.classes)
    elif spec.family == "cnn":
        ho, wo = h - 2, w - 2
        fc_in = spec.channels if spec.gap else spec.channels * ho * wo
        p["conv1_k"] = _init_weight(stream, (spec.channels, c, 3, 3), spec)
        p["conv1_b"] = np.zeros(spec.channels)
        p["fc_w"] = _init_weight(stream, (fc_in, spec.classes), spec)
        p["fc_b"] = np.zeros(spec.classes)
    else:
        g = spec.patch_grid
        d = spec.d_model
        t = g * g
        patch_dim = c * (h // g) * (w // g)
        hid = MLP_HIDDEN_FACTOR * d
        p["patch_w"] = _init_weight(stream, (patch_dim, d), spec)
        p["patch_b"] = np.zeros(d)
        p["patch_pos"] = _init_weight(stream, (t, d), spec)
        p["attn_wq"] = _init_weight(stream, (d, d), spec)
        p["attn_wk"] = _init_weight(stream, (d, d), spec)
        p["attn_wv"] = _init_weight(stream, (d, d), spec)
        p["attn_wo"] = _init_weight(stream, (d, d), spec)
        p["norm_g1"] = np.ones(d)
        p["norm_b1"] = np.zeros(d)
        p["mlp_w1"] = _init_weight(stream, (d, hid), spec)
        p["mlp_b1"] = np.zeros(hid)
        p["mlp_w2"] = _init_weight(stream, (hid, d), spec)
        p["mlp_b2"] = np.zeros(d)
        p["norm_g2"] = np.ones(d)
        p["norm_b2"] = np.zeros(d)
        p["head_w"] = _init_weight(stream, (d, spec.classes), spec)
        p["head_b"] = np.zeros(spec.classes)
    return Model(spec=spec, params=p)


def build_dnn(hidden=(100, 100), input_shape=(1, 28, 28), classes=10,
              init_mean=0.0, init_std=0.05, stream: RngStream | None = None) -> Model:
    spec = ModelSpec(family="dnn", hidden=tuple(hidden), input_shape=tuple(input_shape),
                     classes=classes, init_mean=init_mean, init_std=init_std)
    return build_model(spec, stream or RngStream(0))


def build_cnn(channels=8, gap=False, input_shape=(1, 28, 28), classes=10,
              init_mean=0.0, init_std=0.05, stream: RngStream | None = None) -> Model:
    spec = ModelSpec(family="cnn", channels=channels, gap=gap,
                     input_shape=tuple(input_shape), classes=classes,
                     init_mean=init_mean, init_std=init_std)
    return build_model(spec, stream or RngStream(0))


def build_vit(d_model=784, nhead=4, patch_grid=2, input_shape=(1, 28, 28), classes=10,
              init_mean=0.0, init_std=0.05, stream: RngStream | None = None) -> Model:
    spec = ModelSpec(family="vit", d_model=d_model, nhead=nhead, patch_grid=patch_grid,
                     input_shape=tuple(input_shape), classes=classes,
                     init_mean=init_mean, init_std=init_std)
    return build_model(spec, stream or RngStream(0))


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _check_input(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != model.spec.input_shape:
        raise ValueError(
            f"expected input (B, {model.spec.input_shape}), got {x.shape}")
    return x


def _patchify(x: np.ndarray, g: int) -> np.ndarray:
    """(B, C, H, W) -> (B, g*g, C*(H/g)*(W/g)); tokens in raster order."""
    b, c, h, w = x.shape
    ph, pw = h // g, w // g
    return (x.reshape(b, c, g, ph, g, pw)
             .transpose(0, 2, 4, 1, 3, 5)
             .reshape(b, g * g, c * ph * pw))


def _unpatchify(dtok: np.ndarray, shape, g: int) -> np.ndarray:
    b, c, h, w = shape
    ph, pw = h // g, w // g
    return (dtok.reshape(b, g, g, c, ph, pw)
                .transpose(0, 3, 1, 4, 2, 5)
                .reshape(b, c, h, w))


def _vit_encode(model: Model, x: np.ndarray, want_cache: bool):
    """Shared ViT forward: returns (logits, cache or None)."""
    p = model.params
    spec = model.spec
    g = spec.patch_grid
    tok_in = _patchify(x, g)                               # (B, T, dp)
    b, t, dp = tok_in.shape
    d = spec.d_model
    tokens = tok_in.reshape(-1, dp) @ p["patch_w"]
    tokens = tokens.reshape(b, t, d) + p["patch_b"] + p["patch_pos"]

    attn_out, attn_cache = nn.multi_head_attention_forward(
        tokens, p["attn_wq"], p["attn_wk"], p["attn_wv"], p["attn_wo"], spec.nhead)
    res1 = tokens + attn_out
    h1n, ln1_cache = nn.layer_norm_forward(res1, p["norm_g1"], p["norm_b1"])

    z1 = h1n.reshape(-1, d) @ p["mlp_w1"] + p["mlp_b1"]    # (B*T, hid)
    a1 = nn.relu(z1)
    mlp_out = (a1 @ p["mlp_w2"] + p["mlp_b2"]).reshape(b, t, d)
    res2 = h1n + mlp_out
    h2n, ln2_cache = nn.layer_norm_forward(res2, p["norm_g2"], p["norm_b2"])

    pooled = h2n.mean(axis=1)                              # (B, d)
    logits = nn.linear_forward(pooled, p["head_w"], p["head_b"])
    if not want_cache:
        return logits, None
    return logits, (tok_in, tokens, attn_cache, ln1_cache, h1n, z1, a1,
                    ln2_cache, h2n, pooled)


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits (B, classes) for an input batch (B, C, H, W)."""
    x = _check_input(model, x)
    p = model.params
    if model.spec.family == "dnn":
        flat = x.reshape(x.shape[0], -1)
        h1 = nn.relu(nn.linear_forward(flat, p["ip_fc1_w"], p["ip_fc1_b"]))
        h2 = nn.relu(nn.linear_forward(h1, p["fc1_fc2_w"], p["fc1_fc2_b"]))
        return nn.linear_forward(h2, p["fc2_op_w"], p["fc2_op_b"])
    if model.spec.family == "cnn":
        z = nn.conv2d_forward(x, p["conv1_k"], p["conv1_b"])
        a = nn.relu(z)
        feat = a.mean(axis=(2, 3)) if model.spec.gap else \
            a.reshape(a.shape[0], -1)
        return nn.linear_forward(feat, p["fc_w"], p["fc_b"])
    logits, _ = _vit_encode(model, x, want_cache=False)
    return logits


def loss_and_grads(model: Model, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy on the batch plus gradients for every parameter.

    Returns ``(loss, grads, probs)`` with ``grads`` keyed like
    ``model.params``.
    """
    x = _check_input(model, x)
    p = model.params
    spec = model.spec
    grads: dict[str, np.ndarray] = {}

    if spec.family == "dnn":
        flat = x.reshape(x.shape[0], -1)
        z1 = nn.linear_forward(flat, p["ip_fc1_w"], p["ip_fc1_b"])
        h1 = nn.relu(z1)
        z2 = nn.linear_forward(h1, p["fc1_fc2_w"], p["fc1_fc2_b"])
        h2 = nn.relu(z2)
        z3 = nn.linear_forward(h2, p["fc2_op_w"], p["fc2_op_b"])
        loss, dz3, probs = nn.softmax_cross_entropy(z3, labels)
        dh2, grads["fc2_op_w"], grads["fc2_op_b"] = nn.linear_backward(dz3, h2, p["fc2_op_w"])
        dz2 = nn.relu_backward(dh2, z2)
        dh1, grads["fc1_fc2_w"], grads["fc1_fc2_b"] = nn.linear_backward(dz2, h1, p["fc1_fc2_w"])
        dz1 = nn.relu_backward(dh1, z1)
        _, grads["ip_fc1_w"], grads["ip_fc1_b"] = nn.linear_backward(dz1, flat, p["ip_fc1_w"])
        return loss, grads, probs

    if spec.family == "cnn":
        z = nn.conv2d_forward(x, p["conv1_k"], p["conv1_b"])
        a = nn.relu(z)
        if spec.gap:
            feat = a.mean(axis=(2, 3))
        else:
            feat = a.reshape(a.shape[0], -1)
        zl = nn.linear_forward(feat, p["fc_w"], p["fc_b"])
        loss, dzl, probs = nn.softmax_cross_entropy(zl, labels)
        dfeat, grads["fc_w"], grads["fc_b"] = nn.linear_backward(dzl, feat, p["fc_w"])
        if spec.gap:
            hw = a.shape[2] * a.shape[3]
            da = (dfeat[:, :, None, None] / hw) * np.ones_like(a)
        else:
            da = dfeat.reshape(a.shape)
        dz = nn.relu_backward(da, z)
        _, grads["conv1_k"], grads["conv1_b"] = nn.conv2d_backward(dz, x, p["conv1_k"])
        return loss, grads, probs

    # vit
    logits, cache = _vit_encode(model, x, want_cache=True)
    (tok_in, tokens, attn_cache, ln1_cache, h1n, z1, a1,
     ln2_cache, h2n, pooled) = cache
    b, t, dp = tok_in.shape
    d = spec.d_model
    loss, dlogits, probs = nn.softmax_cross_entropy(logits, labels)

    dpooled, grads["head_w"], grads["head_b"] = nn.linear_backward(
        dlogits, pooled, p["head_w"])
    dh2n = np.broadcast_to(dpooled[:, None, :] / t, (b, t, d)).copy()

    dres2, grads["norm_g2"], grads["norm_b2"] = nn.layer_norm_backward(
        dh2n, ln2_cache, p["norm_g2"])
    dmlp = dres2.reshape(-1, d)
    grads["mlp_w2"] = a1.T @ dmlp
    grads["mlp_b2"] = dmlp.sum(axis=0)
    da1 = dmlp @ p["mlp_w2"].T
    dz1 = nn.relu_backward(da1, z1)
    h1n_flat = h1n.reshape(-1, d)
    grads["mlp_w1"] = h1n_flat.T @ dz1
    grads["mlp_b1"] = dz1.sum(axis=0)
    dh1n = dres2 + (dz1 @ p["mlp_w1"].T).reshape(b, t, d)

    dres1, grads["norm_g1"], grads["norm_b1"] = nn.layer_norm_backward(
        dh1n, ln1_cache, p["norm_g1"])
    dx_attn, grads["attn_wq"], grads["attn_wk"], grads["attn_wv"], grads["attn_wo"] = \
        nn.multi_head_attention_backward(dres1, attn_cache,
                                         p["attn_wq"], p["attn_wk"],
                                         p["attn_wv"], p["attn_wo"])
    dtokens = dres1 + dx_attn
    grads["patch_pos"] = dtokens.sum(axis=0)
    grads["patch_b"] = dtokens.sum(axis=(0, 1))
    dtok_flat = dtokens.reshape(-1, d)
    grads["patch_w"] = tok_in.reshape(-1, dp).T @ dtok_flat
    return loss, grads, probs


# ---------------------------------------------------------------------------
# weight groups
# ---------------------------------------------------------------------------

# parameters contributing to each analysis group, per family; everything
# else (biases, norm shifts, ViT patch/positional/head parameters) is
# excluded from weight statistics
GROUP_PARAMS = {
    "dnn": {"ip_fc1": ("ip_fc1_w",), "fc1_fc2": ("fc1_fc2_w",), "fc2_op": ("fc2_op_w",)},
    "cnn": {"conv1": ("conv1_k",), "fc": ("fc_w",)},
    "vit": {"attn": ("attn_wq", "attn_wk", "attn_wv", "attn_wo"),
            "mlp": ("mlp_w1", "mlp_w2"),
            "norm": ("norm_g1", "norm_g2")},
}

WHOLE_NET = "whole_net"


def group_params(model: Model, group: str) -> list:
    """The (name, array) parameters making up one analysis group."""
    table = GROUP_PARAMS[model.spec.family]
    if group not in table:
        raise ValueError(
            f"unknown group {group!r} for family {model.spec.family!r}; "
            f"expected one of {tuple(table)}")
    return [(name, model.params[name]) for name in table[group]]


def weight_groups(model: Model) -> dict:
    """Ordered ``{group: flat float64 vector}`` plus the whole-net concat.

    The ``whole_net`` entry is the concatenation of the named groups in
    order, so its length is exactly the sum of theirs.
    """
    out: dict[str, np.ndarray] = {}
    for group in ANALYSIS_GROUPS[model.spec.family]:
        vecs = [arr.ravel() for _, arr in group_params(model, group)]
        out[group] = np.concatenate(vecs) if len(vecs) > 1 else vecs[0].copy()
    out[WHOLE_NET] = np.concatenate(list(out.values()))
    return out
