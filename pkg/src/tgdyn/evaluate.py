"""Downstream evaluation of trained embeddings.

Temporal link prediction: each held-out event becomes a positive example
with feature |h_i - h_j|, paired with one sampled non-event; a logistic
regression classifier is fit on 5 different 80/20 splits and accuracy/F1
are reported with 95% confidence intervals. Node dynamics prediction:
ordinary least squares from the embedding to the node's new-event count,
scored by mean absolute error on the held-out share.

All embeddings are computed against the training view only, so no test
event can leak into its own features.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tgnn
from .errors import ContractError, DegenerateDataError
from .tgraph import Event, EventStore

logger = logging.getLogger(__name__)

# two-sided 95% t multipliers by degrees of freedom
_T95 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447,
        7: 2.365, 8: 2.306, 9: 2.262, 10: 2.228}


class LinkExample(NamedTuple):
    feature: np.ndarray  # |h_i - h_j|, length d
    label: int  # 1 = event observed, 0 = sampled non-event


@dataclass
class MetricsReport:
    per_split: dict[str, list[float]] = field(default_factory=dict)
    n_examples: int = 0
    warnings: list[str] = field(default_factory=list)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.per_split[metric]))

    def ci_halfwidth(self, metric: str) -> float:
        values = self.per_split[metric]
        n = len(values)
        if n < 2:
            return 0.0
        t = _T95.get(n - 1, 1.96)
        return float(t * np.std(values, ddof=1) / np.sqrt(n))

    def to_dict(self) -> dict:
        out: dict = {"n_examples": self.n_examples, "splits": {}}
        for metric in self.per_split:
            out[metric] = {"mean": self.mean(metric),
                           "ci95": self.ci_halfwidth(metric)}
            out["splits"][metric] = self.per_split[metric]
        if self.warnings:
            out["warnings"] = self.warnings
        return out

    def to_lines(self) -> list[str]:
        lines = [f"n_examples={self.n_examples}"]
        for metric in self.per_split:
            lines.append(f"{metric}_mean={self.mean(metric):.6f}")
            lines.append(f"{metric}_ci95={self.ci_halfwidth(metric):.6f}")
            values = ",".join(f"{v:.6f}" for v in self.per_split[metric])
            lines.append(f"{metric}_splits={values}")
        for w in self.warnings:
            lines.append(f"warning={w}")
        return lines


def _embedding(store: EventStore, model, i: int, t: float, limit: int,
               cache: dict) -> np.ndarray:
    return tgnn.embed(store, model.tgnn, i, t, limit=limit,
                      cache=cache).value[0]


def build_link_dataset(test_events: list[Event], model, store: EventStore,
                       seed: int = 0, limit: int = 10) -> list[LinkExample]:
    """One positive per held-out event plus one sampled negative.

    Negative endpoints are drawn uniformly from the nodes active in the test
    window, re-drawn until the pair does not form a link at that timestamp,
    so the dataset is exactly balanced and disjoint from the positives.
    """
    if not test_events:
        raise ContractError("build_link_dataset: no test events")
    rng = np.random.default_rng(seed)
    active = sorted({n for e in test_events for n in (e.src, e.dst)})
    test_triples = {(min(e.src, e.dst), max(e.src, e.dst), e.time)
                    for e in test_events}
    cache: dict = {}
    examples: list[LinkExample] = []
    skipped = 0
    for e in test_events:
        try:
            h_i = _embedding(store, model, e.src, e.time, limit, cache)
            h_j = _embedding(store, model, e.dst, e.time, limit, cache)
        except ContractError:
            skipped += 1
            continue
        examples.append(LinkExample(np.abs(h_i - h_j), 1))
        while True:
            u, v = active[rng.integers(len(active))], active[rng.integers(len(active))]
            if u == v:
                continue
            if (min(u, v), max(u, v), e.time) in test_triples:
                continue
            break
        h_u = _embedding(store, model, u, e.time, limit, cache)
        h_v = _embedding(store, model, v, e.time, limit, cache)
        examples.append(LinkExample(np.abs(h_u - h_v), 0))
    if skipped:
        logger.warning("skipped %d test events without feature rows", skipped)
    return examples


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_fit(examples: list[LinkExample], l2: float = 1e-4,
               iters: int = 500) -> np.ndarray:
    """L2-regularized logistic regression by gradient descent with
    backtracking line search; runs until the gradient norm drops below
    1e-6 or the iteration budget is spent. Returns weights with the
    intercept as the last entry (the intercept is not penalized)."""
    X = np.stack([e.feature for e in examples])
    y = np.asarray([e.label for e in examples], dtype=np.float64)
    if y.min() == y.max():
        raise DegenerateDataError("logreg_fit: only one class present")
    Xb = np.hstack([X, np.ones((len(X), 1))])
    n, d = Xb.shape
    w = np.zeros(d)
    reg_mask = np.ones(d)
    reg_mask[-1] = 0.0

    def loss_grad(w):
        z = Xb @ w
        # mean of softplus(z) - y*z equals the logistic NLL
        nll = float(np.mean(np.logaddexp(0.0, z) - y * z))
        nll += l2 * float(np.sum((w * reg_mask) ** 2))
        grad = Xb.T @ (_sigmoid(z) - y) / n + 2.0 * l2 * w * reg_mask
        return nll, grad

    value, grad = loss_grad(w)
    step = 1.0
    for _ in range(iters):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-6:
            break
        for _ in range(60):
            trial = w - step * grad
            t_value, t_grad = loss_grad(trial)
            if t_value <= value - 1e-4 * step * gnorm * gnorm:
                w, value, grad = trial, t_value, t_grad
                step *= 1.25
                break
            step *= 0.5
    return w


def logreg_predict(w: np.ndarray, X: np.ndarray) -> np.ndarray:
    Xb = np.hstack([X, np.ones((len(X), 1))])
    return (_sigmoid(Xb @ w) >= 0.5).astype(int)


def accuracy_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    return float(np.mean(y_true == y_pred))


def f1_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    tp = float(np.sum((y_pred == 1) & (y_true == 1)))
    fp = float(np.sum((y_pred == 1) & (y_true == 0)))
    fn = float(np.sum((y_pred == 0) & (y_true == 1)))
    if tp == 0.0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def eval_link(model, store: EventStore, test_events: list[Event],
              splits: int = 5, seed: int = 0, limit: int = 10,
              l2: float = 1e-4, iters: int = 500) -> MetricsReport:
    """Link-prediction accuracy and F1 over ``splits`` seeded 80/20 splits
    of the balanced example set, with 95% CIs across splits."""
    examples = build_link_dataset(test_events, model, store, seed=seed,
                                  limit=limit)
    report = MetricsReport(per_split={"accuracy": [], "f1": []},
                           n_examples=len(examples))
    if len(test_events) < 10:
        report.warnings.append(
            "fewer than 10 test events; confidence interval is degenerate")
    X = np.stack([e.feature for e in examples])
    y = np.asarray([e.label for e in examples])
    n = len(examples)
    for s in range(splits):
        rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
        order = rng.permutation(n)
        cut = max(1, int(0.8 * n))
        tr, te = order[:cut], order[cut:]
        w = logreg_fit([examples[k] for k in tr], l2=l2, iters=iters)
        pred = logreg_predict(w, X[te])
        report.per_split["accuracy"].append(accuracy_score(y[te], pred))
        report.per_split["f1"].append(f1_score(y[te], pred))
    return report


def node_dynamics_labels(test_events: list[Event],
                         window: float = 0.0) -> list[tuple[int, float, int]]:
    """Unique (node, time, count) labels from held-out events: the count is
    how many held-out events touch the node at that timestamp."""
    pairs = sorted({(n, e.time) for e in test_events for n in (e.src, e.dst)})
    counts: dict[tuple[int, float], int] = {p: 0 for p in pairs}
    if window == 0.0:
        for e in test_events:
            counts[(e.src, e.time)] += 1
            counts[(e.dst, e.time)] += 1
    else:
        for node, t in pairs:
            counts[(node, t)] = sum(
                1 for e in test_events
                if node in (e.src, e.dst) and abs(e.time - t) <= window)
    return [(node, t, c) for (node, t), c in counts.items()]


def ols_fit(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Normal-equation least squares with a 1e-8 ridge fallback on
    singularity. Returns weights with intercept last."""
    Xb = np.hstack([X, np.ones((len(X), 1))])
    gram = Xb.T @ Xb
    rhs = Xb.T @ y
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        logger.warning("singular design matrix; applying ridge 1e-8")
        return np.linalg.solve(gram + 1e-8 * np.eye(gram.shape[0]), rhs)


def eval_node_dynamics(model, store: EventStore, test_events: list[Event],
                       splits: int = 5, seed: int = 0, limit: int = 10,
                       window: float = 0.0) -> MetricsReport:
    """MAE of a linear readout from embeddings to new-event counts, over
    seeded 80/20 splits of the (node, time) label set."""
    if not test_events:
        raise ContractError("eval_node_dynamics: no test events")
    labels = node_dynamics_labels(test_events, window=window)
    cache: dict = {}
    feats, targets = [], []
    skipped = 0
    for node, t, count in labels:
        try:
            feats.append(_embedding(store, model, node, t, limit, cache))
        except ContractError:
            skipped += 1
            continue
        targets.append(float(count))
    if skipped:
        logger.warning("skipped %d node labels without feature rows", skipped)
    X = np.stack(feats)
    y = np.asarray(targets)
    report = MetricsReport(per_split={"mae": []}, n_examples=len(y))
    n = len(y)
    for s in range(splits):
        rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
        order = rng.permutation(n)
        cut = max(1, int(0.8 * n))
        tr, te = order[:cut], order[cut:]
        w = ols_fit(X[tr], y[tr])
        pred = np.hstack([X[te], np.ones((len(te), 1))]) @ w
        report.per_split["mae"].append(float(np.mean(np.abs(pred - y[te]))))
    return report
