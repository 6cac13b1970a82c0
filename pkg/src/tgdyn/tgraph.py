"""Temporal graph storage and queries.

A temporal graph is a chronological stream of undirected link-formation
events (src, dst, time). The store indexes per-node histories for fast
"who interacted with i strictly before t" lookups, carries the node feature
matrix, and provides the train/test time split, the degree-based negative
sampling distribution, and a self-exciting synthetic generator used as a
test fixture.

All timestamps are kept raw; each store additionally carries an affine time
scale (origin, span) so model code can work in normalized units where the
training window maps to [0, 1]. Stores are immutable after construction and
safe for concurrent readers.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left, bisect_right
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ParseError

logger = logging.getLogger(__name__)


class Event(NamedTuple):
    src: int
    dst: int
    time: float


class NodeDynamicsLabel(NamedTuple):
    """Groundtruth new-event count for one node at one timestamp."""

    node: int
    time: float
    count: int


class EventStore:
    """Chronologically ordered events with per-node history indices."""

    def __init__(self, events: Sequence[Event], features: np.ndarray,
                 num_nodes: int, time_origin: float | None = None,
                 time_span: float | None = None, skipped_self_loops: int = 0):
        self.events: list[Event] = sorted(events, key=lambda e: e.time)
        self.num_nodes = num_nodes
        self.features = np.asarray(features, dtype=np.float64)
        self.skipped_self_loops = skipped_self_loops

        if time_origin is None:
            time_origin = self.events[0].time if self.events else 0.0
        if time_span is None:
            time_span = (self.events[-1].time - time_origin) if self.events else 1.0
        self.time_origin = float(time_origin)
        self.time_span = float(time_span) if time_span > 0 else 1.0

        nbr_ids: list[list[int]] = [[] for _ in range(num_nodes)]
        nbr_times: list[list[float]] = [[] for _ in range(num_nodes)]
        self.degrees = np.zeros(num_nodes, dtype=np.int64)
        self._triples: set[tuple[int, int, float]] = set()
        for src, dst, t in self.events:
            nbr_ids[src].append(dst)
            nbr_times[src].append(t)
            nbr_ids[dst].append(src)
            nbr_times[dst].append(t)
            self.degrees[src] += 1
            self.degrees[dst] += 1
            lo, hi = (src, dst) if src <= dst else (dst, src)
            self._triples.add((lo, hi, t))
        self._nbr_ids = [np.asarray(ids, dtype=np.int64) for ids in nbr_ids]
        self._nbr_times = [np.asarray(ts, dtype=np.float64) for ts in nbr_times]

    @property
    def num_events(self) -> int:
        return len(self.events)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def norm_time(self, t: float) -> float:
        return (t - self.time_origin) / self.time_span

    def per_node_history(self, i: int) -> list[tuple[int, float]]:
        if not 0 <= i < self.num_nodes:
            return []
        return list(zip(self._nbr_ids[i].tolist(), self._nbr_times[i].tolist()))

    def historical_neighbors(self, i: int, t: float,
                             limit: int) -> list[tuple[int, float]]:
        """The at-most-``limit`` most recent (neighbor, time) entries with
        time strictly before ``t``, in chronological order.

        Strict inequality means events sharing the query timestamp are
        excluded; an event never sees itself. Unknown nodes have no history.
        """
        if not 0 <= i < self.num_nodes:
            return []
        times = self._nbr_times[i]
        hi = bisect_left(times, t)
        lo = max(0, hi - limit)
        return list(zip(self._nbr_ids[i][lo:hi].tolist(), times[lo:hi].tolist()))

    def delta_events(self, i: int, t: float, window: float = 0.0) -> int:
        """Number of events incident to ``i`` at timestamp ``t`` (exactly, or
        within ``|t' - t| <= window`` when a window is configured)."""
        if not 0 <= i < self.num_nodes:
            return 0
        times = self._nbr_times[i]
        return bisect_right(times, t + window) - bisect_left(times, t - window)

    def has_event(self, i: int, j: int, t: float) -> bool:
        lo, hi = (i, j) if i <= j else (j, i)
        return (lo, hi, t) in self._triples

    def node_feature(self, i: int) -> np.ndarray:
        if not 0 <= i < self.features.shape[0]:
            raise ContractError(f"node {i} has no feature row")
        return self.features[i]


def parse_events(lines: Iterable[str],
                 feature_lines: Iterable[str] | None = None) -> EventStore:
    """Build an EventStore from "src dst time" lines.

    Lines starting with '#' are skipped. Self-loop events are dropped and
    counted. Without a feature file, features fall back to a one-hot
    encoding of node ids; nodes missing from a provided feature file get
    zero vectors.
    """
    events: list[Event] = []
    skipped = 0
    max_id = -1
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'src dst time', got {line!r}", line=lineno)
        try:
            src, dst, t = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        if src < 0 or dst < 0:
            raise ParseError(f"negative node id in {line!r}", line=lineno)
        if t < 0:
            raise ParseError(f"negative timestamp in {line!r}", line=lineno)
        if src == dst:
            skipped += 1
            continue
        events.append(Event(src, dst, t))
        max_id = max(max_id, src, dst)
    if skipped:
        logger.warning("skipped %d self-loop events", skipped)

    feat_rows: dict[int, np.ndarray] = {}
    feat_dim = None
    if feature_lines is not None:
        for lineno, raw in enumerate(feature_lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                node = int(parts[0])
                vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if node < 0:
                raise ParseError(f"negative node id {node}", line=lineno)
            if feat_dim is None:
                feat_dim = vec.size
            elif vec.size != feat_dim:
                raise ParseError(
                    f"feature width {vec.size} != {feat_dim}", line=lineno)
            feat_rows[node] = vec
            max_id = max(max_id, node)

    num_nodes = max_id + 1
    if feature_lines is not None and feat_dim is not None:
        features = np.zeros((num_nodes, feat_dim))
        for node, vec in feat_rows.items():
            features[node] = vec
    else:
        # one-hot of node id; the model becomes transductive in this mode
        features = np.eye(num_nodes)
    return EventStore(events, features, num_nodes, skipped_self_loops=skipped)


def load_events(events_path: str, features_path: str | None = None) -> EventStore:
    feature_lines = None
    with open(events_path, encoding="utf-8") as fh:
        lines = fh.readlines()
    if features_path is not None:
        with open(features_path, encoding="utf-8") as fh:
            feature_lines = fh.readlines()
    return parse_events(lines, feature_lines)


def write_events(store: EventStore, events_path: str,
                 features_path: str | None = None) -> None:
    """Dump the store in the same text formats parse_events reads."""
    with open(events_path, "w", encoding="utf-8") as fh:
        for src, dst, t in store.events:
            fh.write(f"{src} {dst} {t!r}\n")
    if features_path is not None:
        with open(features_path, "w", encoding="utf-8") as fh:
            for node in range(store.num_nodes):
                row = " ".join(repr(v) for v in store.features[node])
                fh.write(f"{node} {row}\n")


def split(store: EventStore, t_tr: float) -> tuple[EventStore, list[Event]]:
    """Time split: the train view holds events with t <= t_tr, test gets the
    rest. The train view's time scale maps [t_min, t_tr] onto [0, 1], so
    test-time queries land slightly above 1. Test events with nodes unseen
    in training are preserved (the model is inductive via features)."""
    if not store.events:
        return store, []
    t_min = store.events[0].time
    if t_tr < t_min:
        raise ContractError(
            f"split time {t_tr} precedes the first event at {t_min}")
    if t_tr >= store.events[-1].time:
        logger.warning("split time %s at or beyond the last event; "
                       "test set is empty", t_tr)
    train_events = [e for e in store.events if e.time <= t_tr]
    test_events = [e for e in store.events if e.time > t_tr]
    train = EventStore(train_events, store.features, store.num_nodes,
                       time_origin=t_min, time_span=t_tr - t_min,
                       skipped_self_loops=store.skipped_self_loops)
    return train, test_events


class NodeSampler:
    """Categorical distribution over nodes, p(v) proportional to deg(v)^0.75."""

    def __init__(self, probabilities: np.ndarray):
        self.probabilities = probabilities

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return rng.choice(len(self.probabilities), size=size,
                          p=self.probabilities)


def negative_distribution(store: EventStore) -> NodeSampler:
    if store.num_nodes == 0:
        raise ContractError("negative_distribution: empty store")
    weights = store.degrees.astype(np.float64) ** 0.75
    total = weights.sum()
    if total == 0.0:
        logger.warning("all node degrees are zero; falling back to uniform")
        return NodeSampler(np.full(store.num_nodes, 1.0 / store.num_nodes))
    return NodeSampler(weights / total)


def _simulate_pair(rng: np.random.Generator, mu: float, alpha: float,
                   beta: float, horizon: float) -> list[float]:
    """Ogata's modified thinning for one self-exciting process with an
    exponential kernel. Between events the intensity decays monotonically,
    so the intensity just after the previous candidate is a valid bound."""
    t = 0.0
    bound = mu  # intensity immediately after the last candidate
    times: list[float] = []
    while True:
        gap = rng.exponential(1.0 / bound)
        t_new = t + gap
        if t_new > horizon:
            return times
        decayed = mu + (bound - mu) * math.exp(-beta * gap)
        if rng.uniform() * bound <= decayed:
            times.append(t_new)
            bound = decayed + alpha
        else:
            bound = decayed
        t = t_new


def synth_hawkes_graph(n_nodes: int, horizon: float, base_rate: float,
                       excitation: float, decay: float,
                       seed: int) -> EventStore:
    """Simulate a planted two-community temporal graph.

    Every node pair forms links as an independent self-exciting process with
    base rate ``base_rate``; pairs inside the same community additionally
    excite themselves (jump ``excitation``, exponential decay ``decay``),
    while cross-community pairs stay at the base rate. With excitation 0
    every pair is therefore an iid Poisson(base_rate * horizon) count.

    Node features are 2-d community indicators plus Gaussian noise, giving
    an inductive model enough signal to tell excitable pairs apart.
    """
    if n_nodes < 2:
        raise ConfigError("synth_hawkes_graph: need at least 2 nodes")
    if horizon <= 0 or base_rate <= 0 or decay <= 0:
        raise ConfigError("synth_hawkes_graph: rates and horizon must be positive")
    if excitation < 0 or excitation >= decay:
        raise ConfigError(
            f"synth_hawkes_graph: need 0 <= excitation < decay for "
            f"stationarity, got excitation={excitation} decay={decay}")

    rng = np.random.default_rng(seed)
    half = n_nodes // 2
    community = np.asarray([0 if i < half else 1 for i in range(n_nodes)])
    features = np.zeros((n_nodes, 2))
    features[np.arange(n_nodes), community] = 1.0
    features += 0.1 * rng.standard_normal((n_nodes, 2))

    events: list[Event] = []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            alpha = excitation if community[i] == community[j] else 0.0
            for t in _simulate_pair(rng, base_rate, alpha, decay, horizon):
                events.append(Event(i, j, t))
    return EventStore(events, features, n_nodes)
