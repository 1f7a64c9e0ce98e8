"""Dense/conv network core: parameters, forward, analytic backward, batch losses."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import PriorDistribution

PROB_CLAMP = 1e-12
CONV_KERNEL = 5  # 5x5 kernels, stride 1, no padding; 2x2 max-pool follows each conv
POOL = 2


# --------------------------------------------------------------------------
# Parameter containers


@dataclass(frozen=True)
class ParamSet:
    """Ordered collection of named tensors with value semantics."""

    items: tuple  # tuple of (name, np.ndarray)

    def __post_init__(self) -> None:
        frozen = []
        seen = set()
        for name, arr in self.items:
            if name in seen:
                raise ValueError(f"duplicate parameter name {name!r}")
            seen.add(name)
            a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            a.setflags(write=False)
            frozen.append((name, a))
        object.__setattr__(self, "items", tuple(frozen))

    @property
    def names(self) -> tuple:
        return tuple(name for name, _ in self.items)

    def arrays(self) -> tuple:
        return tuple(arr for _, arr in self.items)

    def __getitem__(self, name: str) -> np.ndarray:
        for n, arr in self.items:
            if n == name:
                return arr
        raise KeyError(name)

    def congruent(self, other: "ParamSet") -> bool:
        return self.names == other.names and all(
            a.shape == b.shape for a, b in zip(self.arrays(), other.arrays())
        )

    def replace_arrays(self, arrays) -> "ParamSet":
        arrays = tuple(arrays)
        if len(arrays) != len(self.items):
            raise ValueError("array count mismatch")
        return ParamSet(tuple((n, a) for (n, _), a in zip(self.items, arrays)))


def require_congruent(a: ParamSet, b: ParamSet) -> None:
    if not a.congruent(b):
        raise ValueError(
            f"incongruent parameter sets: {a.names} vs {b.names} or shape mismatch"
        )


def sq_distance(a: ParamSet, b: ParamSet) -> float:
    """Squared L2 distance summed over all tensors."""
    require_congruent(a, b)
    return float(sum(np.sum((x - y) ** 2) for x, y in zip(a.arrays(), b.arrays())))


def sgd_step(params: ParamSet, grads: ParamSet, eta: float) -> ParamSet:
    if eta < 0:
        raise ValueError("learning rate must be nonnegative")
    require_congruent(params, grads)
    return params.replace_arrays(
        p - eta * g for p, g in zip(params.arrays(), grads.arrays())
    )


def paramset_to_bytes(ps: ParamSet) -> bytes:
    """Flat layout per tensor: u32 name length, name, u32 rank, u32 dims, f64 LE payload."""
    out = bytearray()
    for name, arr in ps.items:
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb))
        out += nb
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f8").tobytes(order="C")
    return bytes(out)


def paramset_from_bytes(raw: bytes) -> ParamSet:
    items = []
    off = 0
    while off < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims)
        off += 8 * count
        items.append((name, arr.copy()))
    return ParamSet(tuple(items))


# --------------------------------------------------------------------------
# Model specification


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Conv2d:
    """5x5 valid convolution, stride 1, followed by a 2x2 max-pool."""

    in_channels: int
    out_channels: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Layer stack with an implicit terminal softmax."""

    layers: tuple
    input_shape: tuple  # (n_features,) or (channels, height, width)
    num_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = _propagate_shape(layer, shape, i)
        if shape != (self.num_classes,):
            raise ValueError(
                f"model output shape {shape} does not match {self.num_classes} classes"
            )

    @property
    def n_inputs(self) -> int:
        return int(np.prod(self.input_shape))


def _propagate_shape(layer, shape, idx):
    if isinstance(layer, Dense):
        if shape != (layer.in_dim,):
            raise ValueError(f"layer {idx}: dense expects ({layer.in_dim},), got {shape}")
        return (layer.out_dim,)
    if isinstance(layer, Relu):
        return shape
    if isinstance(layer, Conv2d):
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ValueError(
                f"layer {idx}: conv expects ({layer.in_channels}, H, W), got {shape}"
            )
        h, w = shape[1] - CONV_KERNEL + 1, shape[2] - CONV_KERNEL + 1
        if h < 1 or w < 1:
            raise ValueError(f"layer {idx}: input too small for a {CONV_KERNEL}x{CONV_KERNEL} kernel")
        return (layer.out_channels, h // POOL, w // POOL)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    raise ValueError(f"layer {idx}: unknown layer type {type(layer).__name__}")


def init_params(spec: ModelSpec, seed: int) -> ParamSet:
    """He-style init: weights ~ N(0, 2/fan_in), biases zero, seeded."""
    rng = np.random.default_rng(seed)
    items = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            std = np.sqrt(2.0 / layer.in_dim)
            items.append((f"layer{i}_w", rng.normal(0.0, std, (layer.in_dim, layer.out_dim))))
            items.append((f"layer{i}_b", np.zeros(layer.out_dim)))
        elif isinstance(layer, Conv2d):
            fan_in = layer.in_channels * CONV_KERNEL * CONV_KERNEL
            std = np.sqrt(2.0 / fan_in)
            shape = (layer.out_channels, layer.in_channels, CONV_KERNEL, CONV_KERNEL)
            items.append((f"layer{i}_w", rng.normal(0.0, std, shape)))
            items.append((f"layer{i}_b", np.zeros(layer.out_channels)))
    return ParamSet(tuple(items))


# --------------------------------------------------------------------------
# Forward / backward


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(spec: ModelSpec, params: ParamSet, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.n_inputs:
        raise ValueError(
            f"input shape {X.shape} does not match model input size {spec.n_inputs}"
        )
    h = X if len(spec.input_shape) == 1 else X.reshape((X.shape[0],) + spec.input_shape)
    caches = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            w, b = params[f"layer{i}_w"], params[f"layer{i}_b"]
            caches.append(("dense", h, i))
            h = h @ w + b
        elif isinstance(layer, Relu):
            mask = h > 0
            caches.append(("relu", mask, i))
            h = h * mask
        elif isinstance(layer, Conv2d):
            w, b = params[f"layer{i}_w"], params[f"layer{i}_b"]
            win = sliding_window_view(h, (CONV_KERNEL, CONV_KERNEL), axis=(2, 3))
            pre = np.einsum("bihwkl,oikl->bohw", win, w) + b[None, :, None, None]
            bsz, och, ph, pw = pre.shape
            h2, w2 = ph // POOL, pw // POOL
            blocks = (
                pre[:, :, : h2 * POOL, : w2 * POOL]
                .reshape(bsz, och, h2, POOL, w2, POOL)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(bsz, och, h2, w2, POOL * POOL)
            )
            argmax = blocks.argmax(axis=-1)
            caches.append(("conv", (h, win, pre.shape, argmax), i))
            h = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
        elif isinstance(layer, Flatten):
            caches.append(("flatten", h.shape, i))
            h = h.reshape(h.shape[0], -1)
    if h.ndim != 2 or h.shape[1] != spec.num_classes:
        raise ValueError("model did not produce class logits; check layer list")
    return _softmax(h), caches


def forward(spec: ModelSpec, params: ParamSet, X) -> np.ndarray:
    """Class-probability matrix (batch x classes); rows sum to 1."""
    probs, _ = _forward_cached(spec, params, X)
    return probs


def _backprop(spec: ModelSpec, params: ParamSet, caches, dlogits: np.ndarray) -> dict:
    grads = {}
    g = dlogits
    for kind, cache, i in reversed(caches):
        if kind == "dense":
            x = cache
            w = params[f"layer{i}_w"]
            grads[f"layer{i}_w"] = x.T @ g
            grads[f"layer{i}_b"] = g.sum(axis=0)
            g = g @ w.T
        elif kind == "relu":
            g = g * cache
        elif kind == "flatten":
            g = g.reshape(cache)
        elif kind == "conv":
            x, win, pre_shape, argmax = cache
            w = params[f"layer{i}_w"]
            bsz, och, ph, pw = pre_shape
            h2, w2 = argmax.shape[2], argmax.shape[3]
            blocks_grad = np.zeros((bsz, och, h2, w2, POOL * POOL))
            np.put_along_axis(blocks_grad, argmax[..., None], g[..., None], axis=-1)
            gpre = np.zeros(pre_shape)
            gpre[:, :, : h2 * POOL, : w2 * POOL] = (
                blocks_grad.reshape(bsz, och, h2, w2, POOL, POOL)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(bsz, och, h2 * POOL, w2 * POOL)
            )
            grads[f"layer{i}_w"] = np.einsum("bihwkl,bohw->oikl", win, gpre)
            grads[f"layer{i}_b"] = gpre.sum(axis=(0, 2, 3))
            pad = CONV_KERNEL - 1
            gpad = np.pad(gpre, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            gwin = sliding_window_view(gpad, (CONV_KERNEL, CONV_KERNEL), axis=(2, 3))
            g = np.einsum("bohwkl,oikl->bihw", gwin, w[:, :, ::-1, ::-1])
    return grads


# --------------------------------------------------------------------------
# Batch label distribution and losses


@dataclass(frozen=True)
class BatchLabelDist:
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a nonempty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("batch label distribution must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)


def batch_label_dist(labels, num_classes: int) -> BatchLabelDist:
    """Per-class proportions within one minibatch, normalized by its actual length."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"label out of range [0, {num_classes})")
    return BatchLabelDist(np.bincount(labels, minlength=num_classes) / labels.size)


def _check_probs(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.ndim != 1 or probs.shape[0] != labels.size:
        raise ValueError("probs must be (batch, classes) with one label per row")
    if labels.size == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"label out of range [0, {probs.shape[1]})")
    return probs, labels


def _sld_weights(labels: np.ndarray, num_classes: int, prior: PriorDistribution) -> np.ndarray:
    if prior.num_classes != num_classes:
        raise ValueError(
            f"prior has {prior.num_classes} classes, batch expects {num_classes}"
        )
    pri = prior.probs[labels]
    if np.any(pri <= 0):
        bad = int(labels[np.argmin(pri)])
        raise ValueError(f"zero-prior class encountered: class {bad}")
    dist = batch_label_dist(labels, num_classes)
    return dist.probs[labels] / pri


def _weighted_ce(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    p = probs[np.arange(labels.size), labels]
    return float(-(weights * np.log(np.maximum(p, PROB_CLAMP))).sum())


def loss_ce(probs, labels) -> float:
    """Summed (not mean) cross-entropy over the batch."""
    probs, labels = _check_probs(probs, labels)
    return _weighted_ce(probs, labels, np.ones(labels.size))


def loss_fedsld(probs, labels, prior: PriorDistribution) -> float:
    """Cross-entropy with each sample scaled by batch-proportion / prior of its class."""
    probs, labels = _check_probs(probs, labels)
    weights = _sld_weights(labels, probs.shape[1], prior)
    return _weighted_ce(probs, labels, weights)


def loss_fedprox(probs, labels, params: ParamSet, anchor: ParamSet, mu: float) -> float:
    """Cross-entropy plus (mu/2) * squared distance to the broadcast anchor."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    return loss_ce(probs, labels) + 0.5 * mu * sq_distance(params, anchor)


# --------------------------------------------------------------------------
# Objectives (loss + gradient in one pass)


@dataclass(frozen=True)
class CeObjective:
    def sample_weights(self, labels, num_classes):
        return np.ones(np.asarray(labels).size)

    def param_loss(self, params):
        return 0.0

    def param_grads(self, params):
        return None


@dataclass(frozen=True)
class SldObjective:
    prior: PriorDistribution

    def sample_weights(self, labels, num_classes):
        return _sld_weights(np.asarray(labels, dtype=np.int64), num_classes, self.prior)

    def param_loss(self, params):
        return 0.0

    def param_grads(self, params):
        return None


@dataclass(frozen=True)
class ProxObjective:
    anchor: ParamSet
    mu: float

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    def sample_weights(self, labels, num_classes):
        return np.ones(np.asarray(labels).size)

    def param_loss(self, params):
        return 0.5 * self.mu * sq_distance(params, self.anchor)

    def param_grads(self, params):
        require_congruent(params, self.anchor)
        return {
            name: self.mu * (p - a)
            for (name, p), a in zip(params.items, self.anchor.arrays())
        }


def loss_and_grad(spec: ModelSpec, params: ParamSet, X, labels, objective):
    """Batch loss and its exact gradient w.r.t. every parameter tensor."""
    labels = np.asarray(labels, dtype=np.int64)
    probs, caches = _forward_cached(spec, params, X)
    if labels.size == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise ValueError(f"label out of range [0, {spec.num_classes})")
    weights = objective.sample_weights(labels, spec.num_classes)
    loss = _weighted_ce(probs, labels, weights) + objective.param_loss(params)

    rows = np.arange(labels.size)
    # -log is clamped below PROB_CLAMP, so those samples contribute no gradient.
    w_eff = np.where(probs[rows, labels] > PROB_CLAMP, weights, 0.0)
    dlogits = w_eff[:, None] * probs
    dlogits[rows, labels] -= w_eff
    grad_map = _backprop(spec, params, caches, dlogits)

    extra = objective.param_grads(params)
    arrays = []
    for name, p in params.items:
        g = grad_map.get(name)
        g = np.zeros_like(p) if g is None else g
        if extra is not None:
            g = g + extra[name]
        arrays.append(g)
    return loss, params.replace_arrays(arrays)


def backward(spec: ModelSpec, params: ParamSet, X, labels, objective) -> ParamSet:
    """Gradient of the selected batch loss, congruent with ``params``."""
    _, grads = loss_and_grad(spec, params, X, labels, objective)
    return grads
