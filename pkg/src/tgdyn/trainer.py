"""Joint training of the encoder, event head, FiLM generators, and node head.

Each batch of training events contributes, per event, the event loss plus
eta1 times the node loss plus eta2 times the squared norms of the event's
scaling/shifting operators. Ablation modes drop terms exactly (the dropped
term is never built, so nested configurations produce bit-identical
losses). Optimization is bias-corrected Adam over all parameter groups.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import event_dyn, node_dyn, tgnn
from .autodiff import DiffTensor
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .event_dyn import EventPrior, FilmParams
from .node_dyn import NodeDynParams
from .tgraph import EventStore, negative_distribution
from .tgnn import TgnnParams

ABLATIONS = ("full", "tgnn", "tgnn_h", "tgnn_h_e", "tgnn_h_n")

# ablation -> (intensity mode, node term on, operator regularizer on)
_ABLATION_TERMS = {
    "full": ("adapted", True, True),
    "tgnn": ("inner", False, False),
    "tgnn_h": ("global", False, False),
    "tgnn_h_e": ("adapted", False, True),
    "tgnn_h_n": ("global", True, False),
}

CHECKPOINT_FORMAT = "tgdyn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    hidden_dim: int = 16
    out_dim: int = 16
    layers: int = 2
    neighbor_limit: int = 10
    num_negatives: int = 1
    eta1: float = 0.01
    eta2: float = 0.001
    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    ablation: str = "full"
    leaky_slope: float = 0.01
    film_sorted_pair: bool = False
    per_layer_decay: bool = False
    node_loss_endpoints: str = "both"
    delta_window: float = 0.0
    frozen_negatives: bool = False
    init_decay: float = 1.0
    convergence_tol: float = 1e-5
    convergence_patience: int = 5

    def validate(self) -> None:
        if min(self.hidden_dim, self.out_dim, self.layers,
               self.neighbor_limit, self.num_negatives,
               self.batch_size) <= 0:
            raise ConfigError("dimensions and counts must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.eta1 < 0 or self.eta2 < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"unknown ablation {self.ablation!r}; pick one of {ABLATIONS}")
        if self.node_loss_endpoints not in ("both", "src"):
            raise ConfigError("node_loss_endpoints must be 'both' or 'src'")

    def dims(self, in_dim: int) -> list[int]:
        return [in_dim] + [self.hidden_dim] * (self.layers - 1) + [self.out_dim]


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class EpochStats:
    epoch: int
    loss: float
    seconds: float


class ModelParams:
    """All learnable parameter groups plus the optimizer state."""

    def __init__(self, tgnn_params: TgnnParams, prior: EventPrior,
                 film: FilmParams, node: NodeDynParams):
        self.tgnn = tgnn_params
        self.prior = prior
        self.film = film
        self.node = node
        self.adam = AdamState()

    def named_tensors(self) -> list[tuple[str, DiffTensor]]:
        return (self.tgnn.named_tensors() + self.prior.named_tensors()
                + self.film.named_tensors() + self.node.named_tensors())

    def tensors(self) -> list[DiffTensor]:
        return [t for _, t in self.named_tensors()]

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def all_finite(self) -> bool:
        return all(np.isfinite(t.value).all() for t in self.tensors())

    def detached(self) -> "ModelParams":
        """A read-only twin sharing the value arrays but building no graph;
        use for evaluation so forward passes stay cheap."""

        def clone(t: DiffTensor) -> DiffTensor:
            return DiffTensor(t.value)

        g = self.tgnn
        tg = TgnnParams([(clone(a), clone(b)) for a, b in g.layers],
                        [clone(d) for d in g.decays], list(g.dims))
        return ModelParams(
            tg, EventPrior(clone(self.prior.theta)),
            FilmParams(clone(self.film.w_alpha), clone(self.film.b_alpha),
                       clone(self.film.w_beta), clone(self.film.b_beta)),
            NodeDynParams(clone(self.node.w), clone(self.node.b)))


def init_params(config: TrainConfig, in_dim: int,
                seed: int | None = None) -> ModelParams:
    """Seeded initialization: weights uniform in +-1/sqrt(fan_in), biases
    zero, decay rate softplus-mapped to ``config.init_decay``."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    tgnn_params = TgnnParams.init(config.dims(in_dim), rng,
                                  per_layer_decay=config.per_layer_decay,
                                  init_decay=config.init_decay)
    prior = EventPrior.init(config.out_dim, rng)
    film = FilmParams.init(config.out_dim, rng)
    node = NodeDynParams.init(config.out_dim, rng)
    return ModelParams(tgnn_params, prior, film, node)


def total_loss(batch, model: ModelParams, store: EventStore,
               config: TrainConfig, rng: np.random.Generator | None = None,
               negatives: list[list[int]] | None = None,
               sampler=None, cache: dict | None = None) -> DiffTensor:
    """Joint objective over one batch of training events.

    Negatives may be passed explicitly (frozen sampling for gradient
    checks); otherwise they are drawn per event from ``sampler``.
    """
    if len(batch) == 0:
        raise ContractError("total_loss: empty batch")
    mode, node_on, reg_on = _ABLATION_TERMS[config.ablation]
    node_on = node_on and config.eta1 > 0
    reg_on = reg_on and config.eta2 > 0
    if negatives is None:
        if sampler is None:
            sampler = negative_distribution(store)
        if rng is None:
            raise ContractError("total_loss: need rng or explicit negatives")
        negatives = [event_dyn.sample_negatives(store, sampler, e,
                                                config.num_negatives, rng)
                     for e in batch]
    if cache is None:
        cache = {}

    total = None
    for event, negs in zip(batch, negatives):
        loss, adapted = event_dyn.event_loss(
            event, negs, model, store, mode=mode,
            limit=config.neighbor_limit, cache=cache,
            slope=config.leaky_slope, sorted_pair=config.film_sorted_pair)
        if node_on:
            n_loss = node_dyn.node_loss(
                event, model, store, limit=config.neighbor_limit,
                cache=cache, window=config.delta_window,
                endpoints=config.node_loss_endpoints)
            loss = ad.add(loss, ad.mul(n_loss, config.eta1))
        if reg_on and adapted is not None:
            reg = ad.add(ad.reduce_sum(ad.square(adapted.alpha)),
                         ad.reduce_sum(ad.square(adapted.beta)))
            loss = ad.add(loss, ad.mul(reg, config.eta2))
        total = loss if total is None else ad.add(total, loss)
    return total


def adam_step(model: ModelParams, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place; gradients are zeroed after."""
    state = model.adam
    state.step += 1
    t = state.step
    for name, p in model.named_tensors():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.value)
        elif not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


def train(store: EventStore, config: TrainConfig,
          model: ModelParams | None = None
          ) -> tuple[ModelParams, list[EpochStats]]:
    """Epoch loop over shuffled training events.

    Per batch: forward the joint loss, backpropagate, Adam step. Negatives
    are resampled every epoch unless frozen. Stops early once the relative
    epoch-loss improvement stays below ``convergence_tol`` for
    ``convergence_patience`` consecutive epochs.
    """
    config.validate()
    if model is None:
        model = init_params(config, store.feature_dim)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    sampler = negative_distribution(store)
    events = store.events
    n = len(events)
    if n == 0:
        raise ContractError("train: store has no events")

    frozen: list[list[int]] | None = None
    if config.frozen_negatives:
        frozen = [event_dyn.sample_negatives(store, sampler, e,
                                             config.num_negatives, rng)
                  for e in events]

    history: list[EpochStats] = []
    prev_loss = None
    stalled = 0
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b0 in range(0, n, config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            batch = [events[k] for k in idx]
            negs = [frozen[k] for k in idx] if frozen is not None else None
            loss = total_loss(batch, model, store, config, rng=rng,
                              negatives=negs, sampler=sampler)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"training loss diverged at epoch {epoch}, "
                    f"batch starting at event {b0}")
            loss.backward()
            adam_step(model, config.lr)
            epoch_loss += value
        mean_loss = epoch_loss / n
        history.append(EpochStats(epoch, mean_loss,
                                  time.perf_counter() - start))
        if prev_loss is not None:
            improvement = (prev_loss - mean_loss) / max(abs(prev_loss), 1e-12)
            stalled = stalled + 1 if improvement < config.convergence_tol else 0
            if stalled >= config.convergence_patience:
                break
        prev_loss = mean_loss
    return model, history


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(model: ModelParams, config: TrainConfig,
                    path: str) -> None:
    """Versioned JSON dump of the config and every parameter array.

    Floats are serialized via repr, so a load reproduces values bit-exactly.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "params": {
            name: {"shape": list(t.value.shape),
                   "data": t.value.reshape(-1).tolist()}
            for name, t in model.named_tensors()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str) -> tuple[ModelParams, TrainConfig]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version "
                          f"{payload.get('version')}")
    config = TrainConfig(**payload["config"])
    entries = payload["params"]
    in_dim = entries["gnn.layer1.w_self"]["shape"][0]
    model = init_params(config, in_dim)
    for name, t in model.named_tensors():
        if name not in entries:
            raise ConfigError(f"checkpoint missing parameter {name}")
        shape = tuple(entries[name]["shape"])
        if shape != t.value.shape:
            raise DimensionError(
                f"checkpoint parameter {name} has shape {shape}, "
                f"config implies {t.value.shape}")
        t.value = np.asarray(entries[name]["data"],
                             dtype=np.float64).reshape(shape)
    return model, config


def clone_config(config: TrainConfig, **overrides) -> TrainConfig:
    return replace(config, **overrides)
