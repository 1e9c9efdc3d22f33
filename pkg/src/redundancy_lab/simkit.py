"""Toy multi-encoder classifier with controllable information overlap.

A latent vector z ~ N(0, I_C) stands in for the image.  Each encoder sees a
subset of the latent channels through a fixed random linear map and emits a
grid of tokens; a fusion layer combines the grids, a mean-pooled MLP head
predicts one label per task.  Masking an encoder replaces its tokens with
zeros before fusion.

Everything runs in float64 on batches; ``backward`` is written out by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import EncoderSubset, PreconditionError, RedundancyLabError, canonical_category

FUSION_STRATEGIES = ("sequence_append", "channel_concat", "shared_mlp", "cross_attention")


class ShapeError(RedundancyLabError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Task:
    """Classification task whose label is the sign pattern of orthonormal functionals of its channels."""

    name: str
    category: str
    channels: tuple[int, ...]
    classes: int
    functionals: np.ndarray

    def labels(self, z: np.ndarray) -> np.ndarray:
        proj = z[:, list(self.channels)] @ self.functionals.T
        bits = (proj > 0).astype(np.int64)
        return bits @ (1 << np.arange(bits.shape[1], dtype=np.int64))


def make_task(
    name: str,
    category: str,
    channels: Sequence[int],
    classes: int,
    rng: np.random.Generator,
) -> Task:
    channels = tuple(int(c) for c in channels)
    if not channels:
        raise PreconditionError(f"task {name!r} needs at least one relevant channel")
    if len(set(channels)) != len(channels):
        raise PreconditionError(f"task {name!r} lists a channel twice")
    if classes < 2 or classes & (classes - 1):
        raise PreconditionError(f"task {name!r}: class count must be a power of two >= 2, got {classes}")
    bits = classes.bit_length() - 1
    if bits > len(channels):
        raise PreconditionError(f"task {name!r}: {classes} classes need at least {bits} channels")
    # orthonormal functionals make the projections independent, so classes are balanced
    q, _ = np.linalg.qr(rng.standard_normal((len(channels), bits)))
    return Task(name, canonical_category(category), channels, classes, q.T.copy())


@dataclass(frozen=True, eq=False)
class SimWorld:
    channels: int
    tasks: tuple[Task, ...]
    noise: float = 0.0

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise PreconditionError("world needs at least one latent channel")
        if self.noise < 0:
            raise PreconditionError("observation noise must be nonnegative")
        if not self.tasks:
            raise PreconditionError("world needs at least one task")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise PreconditionError(f"duplicate task names {names}")
        for t in self.tasks:
            if max(t.channels) >= self.channels or min(t.channels) < 0:
                raise PreconditionError(f"task {t.name!r} uses channels outside [0, {self.channels})")

    def sample_latents(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((size, self.channels))

    def task(self, name: str) -> Task:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class EncoderSpec:
    name: str
    visible_channels: tuple[int, ...]
    tokens: int
    dim: int
    weights: np.ndarray
    frozen: bool = True

    def __post_init__(self) -> None:
        if not self.visible_channels:
            raise PreconditionError(f"encoder {self.name!r} must see at least one channel")
        if self.tokens < 1 or self.dim < 1:
            raise PreconditionError(f"encoder {self.name!r}: tokens and dim must be >= 1")
        if self.weights.ndim != 2 or self.weights.shape[0] != self.tokens * self.dim:
            raise ShapeError(
                f"encoder {self.name!r}: weights shape {self.weights.shape} != ({self.tokens * self.dim}, C)"
            )
        if max(self.visible_channels) >= self.weights.shape[1]:
            raise ShapeError(f"encoder {self.name!r} sees channels beyond the weight matrix")

    @property
    def channels(self) -> int:
        return self.weights.shape[1]

    def visibility(self) -> np.ndarray:
        vis = np.zeros(self.channels)
        vis[list(self.visible_channels)] = 1.0
        return vis


def make_encoder(
    name: str,
    visible_channels: Sequence[int],
    channels: int,
    rng: np.random.Generator,
    tokens: int = 4,
    dim: int = 8,
    frozen: bool = True,
    jitter: float = 0.5,
) -> EncoderSpec:
    """Random encoder whose tokens share an orthonormal embedding of the visible channels.

    Each token map is that embedding plus independent Gaussian jitter of relative
    size ``jitter``, so the token mean stays well conditioned.
    """
    visible = tuple(sorted({int(c) for c in visible_channels}))
    if not visible:
        raise PreconditionError(f"encoder {name!r} must see at least one channel")
    if visible[0] < 0 or visible[-1] >= channels:
        raise PreconditionError(f"encoder {name!r} sees channels outside [0, {channels})")
    k = len(visible)
    if dim >= k:
        base, _ = np.linalg.qr(rng.standard_normal((dim, k)))
    else:
        q, _ = np.linalg.qr(rng.standard_normal((k, dim)))
        base = q.T * math.sqrt(k / dim)
    maps = base[None] + jitter * rng.standard_normal((tokens, dim, k)) / math.sqrt(k)
    weights = np.zeros((tokens * dim, channels))
    weights[:, list(visible)] = maps.reshape(tokens * dim, k)
    return EncoderSpec(name, visible, tokens, dim, weights, frozen)


def encode(
    spec: EncoderSpec,
    z: np.ndarray,
    rng: np.random.Generator | None = None,
    sigma: float = 0.0,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Token grid (tokens x dim) for one latent, or (batch x tokens x dim) for a batch."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if zb.ndim != 2 or zb.shape[1] != spec.channels:
        raise ShapeError(f"latent of shape {z.shape} does not match C={spec.channels}")
    w = spec.weights if weights is None else weights
    out = (zb * spec.visibility()) @ w.T
    out = out.reshape(zb.shape[0], spec.tokens, spec.dim)
    if sigma > 0:
        if rng is None:
            raise PreconditionError("noisy encoding needs an rng")
        out = out + sigma * rng.standard_normal(out.shape)
    return out[0] if single else out


def mask(tokens: np.ndarray) -> np.ndarray:
    """Zero tensor of the same shape: how a masked encoder's output enters the fusion layer."""
    return np.zeros_like(tokens)


@dataclass(frozen=True)
class FusionSpec:
    strategy: str = "channel_concat"
    dim: int = 8
    queries: int = 4
    attn_dim: int = 8
    value_dim: int = 8

    def __post_init__(self) -> None:
        if self.strategy not in FUSION_STRATEGIES:
            raise PreconditionError(f"unknown fusion strategy {self.strategy!r}; choose from {FUSION_STRATEGIES}")
        if min(self.dim, self.queries, self.attn_dim, self.value_dim) < 1:
            raise PreconditionError("fusion sizes must be >= 1")

    def check(self, encoders: Sequence[EncoderSpec]) -> None:
        dims = {e.dim for e in encoders}
        toks = {e.tokens for e in encoders}
        if self.strategy in ("sequence_append", "shared_mlp") and len(dims) > 1:
            raise ShapeError(f"{self.strategy} needs equal token dims, got {sorted(dims)}")
        if self.strategy == "channel_concat" and len(toks) > 1:
            raise ShapeError(f"channel_concat needs equal token counts, got {sorted(toks)}")

    def output_shape(self, encoders: Sequence[EncoderSpec]) -> tuple[int, int]:
        self.check(encoders)
        if self.strategy == "sequence_append":
            return sum(e.tokens for e in encoders), encoders[0].dim
        if self.strategy == "channel_concat":
            return encoders[0].tokens, sum(e.dim for e in encoders)
        if self.strategy == "shared_mlp":
            return sum(e.tokens for e in encoders), self.dim
        return self.queries, self.value_dim


@dataclass(frozen=True)
class HeadSpec:
    hidden: tuple[int, ...] = (32,)

    def __post_init__(self) -> None:
        if any(h < 1 for h in self.hidden):
            raise PreconditionError("hidden widths must be >= 1")


# ---------------------------------------------------------------------------
# batched forward / backward pieces


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def encode_forward(w: np.ndarray, zvis: np.ndarray, noise: np.ndarray, sigma: float, active: np.ndarray) -> np.ndarray:
    b, t, d = noise.shape
    tokens = (zvis @ w.T).reshape(b, t, d) + sigma * noise
    return tokens * active[:, None, None]


def encode_backward(dtokens: np.ndarray, zvis: np.ndarray, active: np.ndarray) -> np.ndarray:
    b = dtokens.shape[0]
    return (dtokens * active[:, None, None]).reshape(b, -1).T @ zvis


def fuse_forward(spec: FusionSpec, params: Mapping[str, np.ndarray], grids: list[np.ndarray]):
    if spec.strategy == "sequence_append":
        return np.concatenate(grids, axis=1), None
    if spec.strategy == "channel_concat":
        return np.concatenate(grids, axis=2), None
    if spec.strategy == "shared_mlp":
        return _shared_mlp_forward(params, grids)
    return _cross_attention_forward(spec, params, grids)


def fuse_backward(spec: FusionSpec, params, grids: list[np.ndarray], cache, dfused: np.ndarray):
    """Returns (parameter grads, per-encoder token grads)."""
    if spec.strategy == "sequence_append":
        return {}, _split(dfused, [g.shape[1] for g in grids], axis=1)
    if spec.strategy == "channel_concat":
        return {}, _split(dfused, [g.shape[2] for g in grids], axis=2)
    if spec.strategy == "shared_mlp":
        return _shared_mlp_backward(params, grids, cache, dfused)
    return _cross_attention_backward(spec, params, grids, cache, dfused)


def _split(x: np.ndarray, sizes: list[int], axis: int) -> list[np.ndarray]:
    return np.split(x, np.cumsum(sizes)[:-1], axis=axis)


def _shared_mlp_forward(params, grids):
    x = np.concatenate(grids, axis=1)
    h = np.tanh(x @ params["fuse.W1"].T + params["fuse.b1"])
    return h @ params["fuse.W2"].T + params["fuse.b2"], (x, h)


def _shared_mlp_backward(params, grids, cache, dy):
    x, h = cache
    grads = {
        "fuse.W2": np.einsum("bnd,bnh->dh", dy, h),
        "fuse.b2": dy.sum(axis=(0, 1)),
    }
    du = (dy @ params["fuse.W2"]) * (1.0 - h * h)
    grads["fuse.W1"] = np.einsum("bnh,bnd->hd", du, x)
    grads["fuse.b1"] = du.sum(axis=(0, 1))
    dx = du @ params["fuse.W1"]
    return grads, _split(dx, [g.shape[1] for g in grids], axis=1)


def _cross_attention_forward(spec, params, grids):
    keys = np.concatenate([g @ params[f"fuse.Wk.{k}"].T for k, g in enumerate(grids)], axis=1)
    values = np.concatenate([g @ params[f"fuse.Wv.{k}"].T for k, g in enumerate(grids)], axis=1)
    scale = 1.0 / math.sqrt(spec.attn_dim)
    attn = _softmax(np.einsum("ma,bna->bmn", params["fuse.Q"], keys) * scale)
    return attn @ values, (keys, values, attn)


def _cross_attention_backward(spec, params, grids, cache, dout):
    keys, values, attn = cache
    scale = 1.0 / math.sqrt(spec.attn_dim)
    dattn = np.einsum("bmv,bnv->bmn", dout, values)
    dvalues = np.einsum("bmn,bmv->bnv", attn, dout)
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
    grads = {"fuse.Q": np.einsum("bmn,bna->ma", dscores, keys)}
    dkeys = np.einsum("bmn,ma->bna", dscores, params["fuse.Q"])
    sizes = [g.shape[1] for g in grids]
    dgrids = []
    for k, (g, dk, dv) in enumerate(zip(grids, _split(dkeys, sizes, 1), _split(dvalues, sizes, 1))):
        wk, wv = params[f"fuse.Wk.{k}"], params[f"fuse.Wv.{k}"]
        grads[f"fuse.Wk.{k}"] = np.einsum("bta,btd->ad", dk, g)
        grads[f"fuse.Wv.{k}"] = np.einsum("btv,btd->vd", dv, g)
        dgrids.append(dk @ wk + dv @ wv)
    return grads, dgrids


def head_forward(params, pooled: np.ndarray, n_hidden: int, task_names: Sequence[str]):
    acts = [pooled]
    for j in range(n_hidden):
        acts.append(np.tanh(acts[-1] @ params[f"head.W{j}"].T + params[f"head.b{j}"]))
    logits = {t: acts[-1] @ params[f"out.{t}.W"].T + params[f"out.{t}.b"] for t in task_names}
    return logits, acts


def head_backward(params, acts: list[np.ndarray], dlogits: Mapping[str, np.ndarray], n_hidden: int):
    """Returns (parameter grads, gradient w.r.t. the pooled vector)."""
    top = acts[-1]
    grads = {}
    dh = np.zeros_like(top)
    for t, dl in dlogits.items():
        grads[f"out.{t}.W"] = dl.T @ top
        grads[f"out.{t}.b"] = dl.sum(axis=0)
        dh = dh + dl @ params[f"out.{t}.W"]
    for j in reversed(range(n_hidden)):
        h = acts[j + 1]
        du = dh * (1.0 - h * h)
        grads[f"head.W{j}"] = du.T @ acts[j]
        grads[f"head.b{j}"] = du.sum(axis=0)
        dh = du @ params[f"head.W{j}"]
    return grads, dh


# ---------------------------------------------------------------------------


@dataclass
class Batch:
    z: np.ndarray
    noise: list[np.ndarray]
    labels: dict[str, np.ndarray]

    def __len__(self) -> int:
        return self.z.shape[0]


def sample_batch(world: SimWorld, encoders: Sequence[EncoderSpec], size: int, rng: np.random.Generator) -> Batch:
    z = world.sample_latents(size, rng)
    noise = [rng.standard_normal((size, e.tokens, e.dim)) for e in encoders]
    return Batch(z, noise, {t.name: t.labels(z) for t in world.tasks})


def subset_active(subset: EncoderSubset, size: int) -> np.ndarray:
    row = np.array([1.0 if i in subset else 0.0 for i in range(subset.n)])
    return np.tile(row, (size, 1))


def cross_entropy(probs: np.ndarray, labels: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Per-sample -log p[label], with probabilities clamped below at ``floor``."""
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(labels)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise PreconditionError(f"label outside [0, {probs.shape[1]})")
    return -np.log(np.maximum(probs[np.arange(len(labels)), labels], floor))


@dataclass
class ForwardCache:
    zvis: list[np.ndarray]
    grids: list[np.ndarray]
    fused: np.ndarray
    fuse_cache: object
    acts: list[np.ndarray]
    active: np.ndarray


@dataclass
class MultiEncoderModel:
    """Encoders + fusion + pooled MLP head with one output layer per task."""

    world: SimWorld
    encoders: tuple[EncoderSpec, ...]
    fusion: FusionSpec
    head: HeadSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        world: SimWorld,
        encoders: Sequence[EncoderSpec],
        fusion: FusionSpec,
        head: HeadSpec,
        rng: np.random.Generator,
    ) -> MultiEncoderModel:
        encoders = tuple(encoders)
        if not encoders:
            raise PreconditionError("model needs at least one encoder")
        names = [e.name for e in encoders]
        if len(set(names)) != len(names):
            raise PreconditionError(f"duplicate encoder names {names}")
        for e in encoders:
            if e.channels != world.channels:
                raise ShapeError(f"encoder {e.name!r} expects C={e.channels}, world has {world.channels}")
        _, width = fusion.output_shape(encoders)
        params: dict[str, np.ndarray] = {}
        for k, e in enumerate(encoders):
            params[f"enc.{k}.W"] = e.weights.astype(np.float64).copy()
        if fusion.strategy == "shared_mlp":
            d = encoders[0].dim
            params["fuse.W1"] = rng.standard_normal((fusion.dim, d)) / math.sqrt(d)
            params["fuse.b1"] = np.zeros(fusion.dim)
            params["fuse.W2"] = rng.standard_normal((fusion.dim, fusion.dim)) / math.sqrt(fusion.dim)
            params["fuse.b2"] = np.zeros(fusion.dim)
        elif fusion.strategy == "cross_attention":
            params["fuse.Q"] = rng.standard_normal((fusion.queries, fusion.attn_dim))
            for k, e in enumerate(encoders):
                params[f"fuse.Wk.{k}"] = rng.standard_normal((fusion.attn_dim, e.dim)) / math.sqrt(e.dim)
                params[f"fuse.Wv.{k}"] = rng.standard_normal((fusion.value_dim, e.dim)) / math.sqrt(e.dim)
        fan_in = width
        for j, h in enumerate(head.hidden):
            params[f"head.W{j}"] = rng.standard_normal((h, fan_in)) / math.sqrt(fan_in)
            params[f"head.b{j}"] = np.zeros(h)
            fan_in = h
        for t in world.tasks:
            params[f"out.{t.name}.W"] = rng.standard_normal((t.classes, fan_in)) / math.sqrt(fan_in)
            params[f"out.{t.name}.b"] = np.zeros(t.classes)
        return cls(world, encoders, fusion, head, params)

    @property
    def n(self) -> int:
        return len(self.encoders)

    @property
    def task_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.world.tasks)

    def copy(self) -> MultiEncoderModel:
        return MultiEncoderModel(
            self.world, self.encoders, self.fusion, self.head, {k: v.copy() for k, v in self.params.items()}
        )

    def param_group(self, key: str) -> str:
        if key.startswith("enc."):
            return "encoders"
        if key.startswith("fuse."):
            return "fusion"
        return "head"

    def encoder_trainable(self, k: int) -> bool:
        return not self.encoders[k].frozen

    # -- forward / backward ------------------------------------------------

    def _check_batch(self, batch: Batch, active: np.ndarray) -> None:
        if batch.z.ndim != 2 or batch.z.shape[1] != self.world.channels:
            raise ShapeError(f"latent batch shape {batch.z.shape} does not match C={self.world.channels}")
        if active.shape != (len(batch), self.n):
            raise ShapeError(f"active mask shape {active.shape} != ({len(batch)}, {self.n})")

    def forward(self, batch: Batch, active: np.ndarray) -> tuple[dict[str, np.ndarray], ForwardCache]:
        """Logits per task for a batch; ``active`` is a (batch, n) 0/1 encoder mask."""
        active = np.asarray(active, dtype=np.float64)
        self._check_batch(batch, active)
        zvis, grids = [], []
        for k, e in enumerate(self.encoders):
            zv = batch.z * e.visibility()
            zvis.append(zv)
            grids.append(encode_forward(self.params[f"enc.{k}.W"], zv, batch.noise[k], self.world.noise, active[:, k]))
        fused, fuse_cache = fuse_forward(self.fusion, self.params, grids)
        pooled = fused.mean(axis=1)
        logits, acts = head_forward(self.params, pooled, len(self.head.hidden), self.task_names)
        return logits, ForwardCache(zvis, grids, fused, fuse_cache, acts, active)

    def backward(self, cache: ForwardCache, dlogits: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        grads, dpooled = head_backward(self.params, cache.acts, dlogits, len(self.head.hidden))
        n_tokens = cache.fused.shape[1]
        dfused = np.broadcast_to(dpooled[:, None, :] / n_tokens, cache.fused.shape)
        fgrads, dgrids = fuse_backward(self.fusion, self.params, cache.grids, cache.fuse_cache, dfused)
        grads.update(fgrads)
        for k in range(self.n):
            grads[f"enc.{k}.W"] = encode_backward(dgrids[k], cache.zvis[k], cache.active[:, k])
        return grads

    def loss(self, batch: Batch, active: np.ndarray) -> float:
        logits, _ = self.forward(batch, active)
        return self._loss(logits, batch)[0]

    def _loss(self, logits, batch):
        total = 0.0
        dlogits = {}
        scale = 1.0 / (len(batch) * len(logits))
        for t, lg in logits.items():
            probs = _softmax(lg)
            labels = batch.labels[t]
            total += cross_entropy(probs, labels).sum() * scale
            d = probs.copy()
            d[np.arange(len(labels)), labels] -= 1.0
            dlogits[t] = d * scale
        return float(total), dlogits

    def loss_and_grads(self, batch: Batch, active: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy over batch and tasks, with its gradient for every parameter."""
        logits, cache = self.forward(batch, active)
        value, dlogits = self._loss(logits, batch)
        return value, self.backward(cache, dlogits)

    def predict_proba(
        self,
        z: np.ndarray,
        subset: EncoderSubset | None = None,
        task: str | None = None,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """Class probabilities for latents ``z`` with only ``subset`` active (default: all)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        subset = EncoderSubset.full(self.n) if subset is None else subset
        if subset.n != self.n:
            raise ShapeError(f"subset over {subset.n} encoders, model has {self.n}")
        if rng is None:
            noise = [np.zeros((z.shape[0], e.tokens, e.dim)) for e in self.encoders]
        else:
            noise = [rng.standard_normal((z.shape[0], e.tokens, e.dim)) for e in self.encoders]
        batch = Batch(z, noise, {})
        logits, _ = self.forward(batch, subset_active(subset, z.shape[0]))
        task = task or self.task_names[0]
        return _softmax(logits[task])


def fuse(spec: FusionSpec, grids: Sequence[np.ndarray], params: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
    """Fuse per-encoder token grids (masked encoders passed as zero grids).

    Accepts unbatched (tokens x dim) grids or batched ones.  ``params`` is needed
    for the learnable strategies.
    """
    grids = [np.asarray(g, dtype=np.float64) for g in grids]
    single = grids[0].ndim == 2
    gb = [g[None] if single else g for g in grids]
    if spec.strategy in ("sequence_append", "shared_mlp") and len({g.shape[2] for g in gb}) > 1:
        raise ShapeError(f"{spec.strategy} needs equal token dims")
    if spec.strategy == "channel_concat" and len({g.shape[1] for g in gb}) > 1:
        raise ShapeError("channel_concat needs equal token counts")
    if spec.strategy in ("shared_mlp", "cross_attention") and params is None:
        raise PreconditionError(f"{spec.strategy} needs fusion parameters")
    out, _ = fuse_forward(spec, params or {}, gb)
    return out[0] if single else out
