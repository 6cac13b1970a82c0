"""Temporal GNN encoder.

A node's representation at time t aggregates its own previous-layer message
with the messages of its historical neighbors, each neighbor evaluated at
the time of its event and weighted by a normalized exponential time-decay
kernel. The self term carries the base rate of link formation; the decayed
neighbor term carries the excitement induced by past events.

Embeddings are [1 x d] rows. Hidden layers use ReLU; the output layer is
identity so downstream heads see unconstrained reals. All time arithmetic
happens in the store's normalized units, where the training window spans
[0, 1] and the decay rate is a learnable positive scalar reparameterized
through softplus.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .errors import ContractError
from .tgraph import EventStore


class TgnnParams:
    """Per-layer self/history weight matrices plus the decay parameter.

    ``decay_raw`` is stored pre-softplus so the effective rate stays
    positive. One shared decay by default; ``per_layer_decay`` switches to
    one rate per layer.
    """

    def __init__(self, layers: list[tuple[DiffTensor, DiffTensor]],
                 decays: list[DiffTensor], dims: list[int]):
        self.layers = layers
        self.decays = decays
        self.dims = dims

    @classmethod
    def init(cls, dims: list[int], rng: np.random.Generator,
             per_layer_decay: bool = False,
             init_decay: float = 1.0) -> "TgnnParams":
        layers = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(d_in)
            w_self = DiffTensor(rng.uniform(-bound, bound, (d_in, d_out)),
                                requires_grad=True)
            w_hist = DiffTensor(rng.uniform(-bound, bound, (d_in, d_out)),
                                requires_grad=True)
            layers.append((w_self, w_hist))
        raw = math.log(math.expm1(init_decay))  # softplus inverse
        n_decays = len(layers) if per_layer_decay else 1
        decays = [DiffTensor(np.full((1, 1), raw), requires_grad=True)
                  for _ in range(n_decays)]
        return cls(layers, decays, dims)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def decay_for(self, layer: int) -> DiffTensor:
        if len(self.decays) == 1:
            return self.decays[0]
        return self.decays[layer - 1]

    def decay_value(self, layer: int = 1) -> float:
        raw = self.decay_for(layer).value
        return float(np.logaddexp(0.0, raw).reshape(()))

    def named_tensors(self) -> list[tuple[str, DiffTensor]]:
        named = []
        for l, (w_self, w_hist) in enumerate(self.layers, start=1):
            named.append((f"gnn.layer{l}.w_self", w_self))
            named.append((f"gnn.layer{l}.w_hist", w_hist))
        for k, d in enumerate(self.decays):
            named.append((f"gnn.decay_raw{k}", d))
        return named


def kernel(dt: float, decay_raw: DiffTensor) -> DiffTensor:
    """Exponential time-decay kernel exp(-rate * dt), rate = softplus(raw).

    dt must be non-negative: future events never excite the past.
    """
    if dt < 0:
        raise ContractError(f"kernel: negative time gap {dt}")
    rate = ad.softplus(decay_raw)
    return ad.exp(ad.negate(ad.mul(rate, float(dt))))


def decay_weights(i: int, t: float, hist: list[tuple[int, float]],
                  decay_raw: DiffTensor, time_span: float = 1.0) -> DiffTensor:
    """Normalized kernel weights over a node's sampled history.

    Returns a [1 x h] row that sums to 1; entry k is
    kernel(t - t_k) / sum_m kernel(t - t_m). Computed in shifted log space
    so large decay rates cannot underflow the normalization.
    """
    if not hist:
        raise ContractError("decay_weights: empty history")
    gaps = np.asarray([(t - t_prime) / time_span for _, t_prime in hist])
    if np.any(gaps < 0):
        raise ContractError(f"decay_weights: history entry at or after t={t}")
    rate = ad.softplus(decay_raw)
    logits = ad.mul(ad.negate(rate), DiffTensor(gaps.reshape(1, -1)))
    # max logit sits at the smallest gap; subtract it before exponentiating
    top = ad.slice_axis(logits, 1, int(np.argmin(gaps)), int(np.argmin(gaps)) + 1)
    z = ad.reduce_sum(ad.exp(ad.sub(logits, top)))
    log_norm = ad.add(ad.log(z), top)
    return ad.exp(ad.sub(logits, log_norm))


def embed(store: EventStore, params: TgnnParams, i: int, t: float,
          layer: int | None = None, limit: int = 10,
          cache: dict | None = None) -> DiffTensor:
    """Temporal representation of node ``i`` at time ``t``.

    Layer 0 is the node's input feature row. Each higher layer applies
    sigma(h_i W_self + sum_k w_k h_{j_k}^{t_k} W_hist) where the sum runs
    over the ``limit`` most recent events on i strictly before t, each
    neighbor embedded recursively at its own event time. A node with no
    history keeps only the self term, which is what makes unseen
    feature-bearing nodes embeddable.
    """
    if layer is None:
        layer = params.num_layers
    if not 0 <= layer <= params.num_layers:
        raise ContractError(f"layer {layer} outside [0, {params.num_layers}]")
    if cache is None:
        cache = {}
    return _embed(store, params, i, float(t), layer, limit, cache)


def _embed(store: EventStore, params: TgnnParams, i: int, t: float,
           layer: int, limit: int, cache: dict) -> DiffTensor:
    key = (i, t, layer)
    hit = cache.get(key)
    if hit is not None:
        return hit

    if layer == 0:
        if not 0 <= i < store.features.shape[0]:
            raise ContractError(f"node {i} has no feature row")
        out = DiffTensor(store.features[i:i + 1])
    else:
        w_self, w_hist = params.layers[layer - 1]
        h_self = _embed(store, params, i, t, layer - 1, limit, cache)
        pre = ad.matmul(h_self, w_self)
        hist = store.historical_neighbors(i, t, limit)
        if hist:
            weights = decay_weights(i, t, hist, params.decay_for(layer),
                                    time_span=store.time_span)
            rows = [_embed(store, params, j, tj, layer - 1, limit, cache)
                    for j, tj in hist]
            stacked = rows[0] if len(rows) == 1 else ad.concat(*rows, axis=0)
            pre = ad.add(pre, ad.matmul(weights, ad.matmul(stacked, w_hist)))
        out = ad.relu(pre) if layer < params.num_layers else pre

    cache[key] = out
    return out


def embed_batch(store: EventStore, params: TgnnParams,
                pairs: list[tuple[int, float]], limit: int = 10,
                cache: dict | None = None) -> list[DiffTensor]:
    """Embed many (node, time) pairs against one shared subtree cache."""
    if cache is None:
        cache = {}
    return [embed(store, params, i, t, limit=limit, cache=cache)
            for i, t in pairs]
