"""Node dynamics: estimating each node's new-event count at a timestamp.

A node's "event tendency" at time t is the number of new events it takes
part in at t. A one-layer ReLU head predicts that count from the temporal
embedding, and the smooth L1 loss scores it against the groundtruth count,
staying quadratic for small errors and linear for outliers (burst nodes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tgnn
from .autodiff import DiffTensor
from .tgraph import Event, EventStore


@dataclass
class NodeDynParams:
    w: DiffTensor  # [d x 1]
    b: DiffTensor  # [1 x 1]

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "NodeDynParams":
        bound = 1.0 / math.sqrt(dim)
        return cls(DiffTensor(rng.uniform(-bound, bound, (dim, 1)),
                              requires_grad=True),
                   DiffTensor(np.zeros((1, 1)), requires_grad=True))

    def named_tensors(self) -> list[tuple[str, DiffTensor]]:
        return [("node.w", self.w), ("node.b", self.b)]


def estimate(h_i: DiffTensor, params: NodeDynParams) -> DiffTensor:
    """Predicted new-event count, ReLU-clamped to be non-negative."""
    return ad.relu(ad.add(ad.matmul(h_i, params.w), params.b))


def smooth_l1(pred, truth) -> DiffTensor:
    """0.5*diff^2 below unit error, |diff| - 0.5 above; continuous with
    matching one-sided derivatives at |diff| = 1."""
    diff = ad.sub(pred, truth)
    return ad.pointwise(
        diff,
        lambda d: np.where(np.abs(d) < 1.0, 0.5 * d * d, np.abs(d) - 0.5),
        lambda d: np.where(np.abs(d) < 1.0, d, np.sign(d)),
    )


def node_loss(event: Event, model, store: EventStore, limit: int = 10,
              cache: dict | None = None, window: float = 0.0,
              endpoints: str = "both") -> DiffTensor:
    """Smooth L1 between each endpoint's estimated and actual new-event
    count at the event time. Groundtruth counts come from the store the
    model trains on, so no future events leak in."""
    if cache is None:
        cache = {}
    i, j, t = event
    nodes = (i,) if endpoints == "src" else (i, j)
    total = None
    for n in nodes:
        h_n = tgnn.embed(store, model.tgnn, n, t, limit=limit, cache=cache)
        term = smooth_l1(estimate(h_n, model.node),
                         float(store.delta_events(n, t, window)))
        total = term if total is None else ad.add(total, term)
    return total
