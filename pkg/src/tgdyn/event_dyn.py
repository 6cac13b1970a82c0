"""Event dynamics: per-event conditional intensities and the event loss.

The intensity of a candidate pair is a one-layer transfer function with a
sigmoid head applied to the elementwise-squared difference of the two
temporal embeddings. A shared prior parameterizes that layer; for each
event the prior is specialized by FiLM, i.e. scaled and shifted by vectors
generated from the concatenated pair embeddings. Negative (non-)events are
scored with the same machinery and pushed toward zero intensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tgnn
from .autodiff import DiffTensor
from .errors import ContractError, DimensionError
from .tgraph import Event, EventStore, NodeSampler

INTENSITY_MODES = ("adapted", "global", "inner")


@dataclass
class EventPrior:
    """Flattened transfer-function parameters: d weights then one bias."""

    theta: DiffTensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "EventPrior":
        bound = 1.0 / math.sqrt(dim)
        flat = np.zeros((1, dim + 1))
        flat[0, :dim] = rng.uniform(-bound, bound, dim)
        return cls(DiffTensor(flat, requires_grad=True))

    @property
    def dim(self) -> int:
        return self.theta.value.shape[1] - 1

    def named_tensors(self) -> list[tuple[str, DiffTensor]]:
        return [("prior.theta", self.theta)]


@dataclass
class FilmParams:
    """Generators of the per-event scaling and shifting vectors."""

    w_alpha: DiffTensor
    b_alpha: DiffTensor
    w_beta: DiffTensor
    b_beta: DiffTensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "FilmParams":
        n_in, n_out = 2 * dim, dim + 1
        bound = 1.0 / math.sqrt(n_in)

        def w():
            return DiffTensor(rng.uniform(-bound, bound, (n_in, n_out)),
                              requires_grad=True)

        def b():
            return DiffTensor(np.zeros((1, n_out)), requires_grad=True)

        return cls(w(), b(), w(), b())

    def named_tensors(self) -> list[tuple[str, DiffTensor]]:
        return [("film.w_alpha", self.w_alpha), ("film.b_alpha", self.b_alpha),
                ("film.w_beta", self.w_beta), ("film.b_beta", self.b_beta)]


@dataclass
class AdaptedParams:
    """Event-specific transfer parameters plus the operators that built them.

    theta = (alpha + 1) * prior + beta elementwise; alpha and beta are kept
    for the L2 penalty in the joint objective.
    """

    theta: DiffTensor
    alpha: DiffTensor
    beta: DiffTensor


def film_adapt(prior: EventPrior, film: FilmParams, h_i: DiffTensor,
               h_j: DiffTensor, slope: float = 0.01) -> AdaptedParams:
    """Specialize the event prior to the pair (h_i, h_j).

    The conditioning input is the ordered concatenation h_i || h_j, so the
    adaptation is generally not symmetric under swapping endpoints.
    """
    if h_i.value.shape != h_j.value.shape:
        raise DimensionError(
            f"film_adapt: embedding shapes differ, {h_i.value.shape} "
            f"vs {h_j.value.shape}")
    cond = ad.concat(h_i, h_j, axis=1)
    if cond.value.shape[1] != film.w_alpha.value.shape[0]:
        raise DimensionError(
            f"film_adapt: condition width {cond.value.shape[1]} does not "
            f"match generator input {film.w_alpha.value.shape[0]}")
    alpha = ad.leaky_relu(ad.add(ad.matmul(cond, film.w_alpha), film.b_alpha),
                          slope)
    beta = ad.leaky_relu(ad.add(ad.matmul(cond, film.w_beta), film.b_beta),
                         slope)
    theta = ad.add(ad.mul(ad.add(alpha, 1.0), prior.theta), beta)
    return AdaptedParams(theta, alpha, beta)


def _transfer_logit(h_i: DiffTensor, h_j: DiffTensor,
                    theta: DiffTensor) -> DiffTensor:
    d = theta.value.shape[1] - 1
    if h_i.value.shape[1] != d:
        raise DimensionError(
            f"intensity: embedding dim {h_i.value.shape[1]} does not match "
            f"transfer parameters for dim {d}")
    sq_diff = ad.square(ad.sub(h_i, h_j))
    w = ad.slice_axis(theta, 1, 0, d)
    b = ad.slice_axis(theta, 1, d, d + 1)
    return ad.add(ad.reduce_sum(ad.mul(sq_diff, w)), b)


def intensity(h_i: DiffTensor, h_j: DiffTensor,
              adapted: AdaptedParams | DiffTensor) -> DiffTensor:
    """Conditional intensity in (0, 1): sigmoid over the transfer logit.

    Symmetric in (h_i, h_j) for a fixed theta, since the squared difference
    is. Accepts either adapted parameters or a bare theta row.
    """
    theta = adapted.theta if isinstance(adapted, AdaptedParams) else adapted
    return ad.sigmoid(_transfer_logit(h_i, h_j, theta))


def _event_logit(event: Event, model, store: EventStore, mode: str,
                 limit: int, cache: dict, slope: float,
                 sorted_pair: bool) -> tuple[DiffTensor, AdaptedParams | None]:
    i, j, t = event
    h_i = tgnn.embed(store, model.tgnn, i, t, limit=limit, cache=cache)
    h_j = tgnn.embed(store, model.tgnn, j, t, limit=limit, cache=cache)
    if mode == "inner":
        return ad.reduce_sum(ad.mul(h_i, h_j)), None
    if mode == "global":
        return _transfer_logit(h_i, h_j, model.prior.theta), None
    if mode == "adapted":
        h_a, h_b = (h_j, h_i) if (sorted_pair and j < i) else (h_i, h_j)
        adapted = film_adapt(model.prior, model.film, h_a, h_b, slope)
        return _transfer_logit(h_i, h_j, adapted.theta), adapted
    raise ContractError(f"unknown intensity mode {mode!r}")


def event_intensity(event: Event, model, store: EventStore,
                    mode: str = "adapted", limit: int = 10,
                    cache: dict | None = None) -> DiffTensor:
    """Intensity of one event, composing the encoder with the transfer head.

    ``global`` skips the FiLM adaptation and applies the shared prior;
    ``inner`` scores the pair by the sigmoid of the embedding inner product
    (the encoder-only ablation).
    """
    if cache is None:
        cache = {}
    logit, _ = _event_logit(event, model, store, mode, limit, cache,
                            slope=0.01, sorted_pair=False)
    return ad.sigmoid(logit)


def event_loss(event: Event, negatives: list[int], model, store: EventStore,
               mode: str = "adapted", limit: int = 10,
               cache: dict | None = None, slope: float = 0.01,
               sorted_pair: bool = False
               ) -> tuple[DiffTensor, AdaptedParams | None]:
    """Negative log-likelihood of one observed event against sampled
    non-events: -log lambda(i,j,t) - sum_k log(1 - lambda(i,k,t)).

    The expectation over the negative distribution is realized as the sum of
    the given unit-weight draws. Computed as softplus of the logits, which
    equals the log expression exactly but stays finite for any logit.
    Returns the loss and the positive event's adaptation operators (None
    outside adapted mode), which the joint objective regularizes.
    """
    if cache is None:
        cache = {}
    i, j, t = event
    pos_logit, adapted = _event_logit(event, model, store, mode, limit,
                                      cache, slope, sorted_pair)
    loss = ad.softplus(ad.negate(pos_logit))
    for k in negatives:
        neg_logit, _ = _event_logit(Event(i, k, t), model, store, mode,
                                    limit, cache, slope, sorted_pair)
        loss = ad.add(loss, ad.softplus(neg_logit))
    return loss, adapted


def sample_negatives(store: EventStore, sampler: NodeSampler, event: Event,
                     count: int, rng: np.random.Generator,
                     max_tries: int = 100) -> list[int]:
    """Draw negative endpoints k for (i, k, t) from the degree-based
    distribution, rejecting observed events and the node itself. After
    ``max_tries`` rejections, falls back to a uniform draw over the valid
    candidates so dense nodes cannot stall sampling."""
    i, _, t = event
    negatives: list[int] = []
    for _ in range(count):
        choice = None
        for _ in range(max_tries):
            k = int(sampler.sample(rng))
            if k != i and not store.has_event(i, k, t):
                choice = k
                break
        if choice is None:
            candidates = [v for v in range(store.num_nodes)
                          if v != i and not store.has_event(i, v, t)]
            if not candidates:
                raise ContractError(
                    f"no valid negative endpoint exists for node {i} at {t}")
            choice = int(candidates[rng.integers(len(candidates))])
        negatives.append(choice)
    return negatives
