"""Command-line entry point.

Commands: train, eval-link, eval-node, gen-synth, grad-check. Runs are
driven by a key=value config file; every key can be overridden by a flag of
the same name, and each run writes a resolved-config snapshot sufficient to
reproduce it. Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import evaluate, tgraph, trainer
from .autodiff import grad_check
from .errors import (ConfigError, ContractError, DegenerateDataError,
                     DimensionError, DomainError, NumericError, ParseError)
from .event_dyn import sample_negatives
from .trainer import TrainConfig

OUTPUT_DIR_ENV = "TGDYN_OUT_DIR"

_RUN_KEYS = {
    "events": str,
    "features": str,
    "out_dir": str,
    "t_tr": float,
    "train_frac": float,
    "splits": int,
}
_BOOL_KEYS = {"film_sorted_pair", "per_layer_decay", "frozen_negatives"}

_TRAIN_KINDS: dict[str, type] = {
    "hidden_dim": int, "out_dim": int, "layers": int, "neighbor_limit": int,
    "num_negatives": int, "batch_size": int, "epochs": int, "seed": int,
    "convergence_patience": int, "eta1": float, "eta2": float, "lr": float,
    "leaky_slope": float, "init_decay": float, "convergence_tol": float,
    "delta_window": float, "ablation": str, "node_loss_endpoints": str,
    "film_sorted_pair": bool, "per_layer_decay": bool,
    "frozen_negatives": bool,
}
assert set(_TRAIN_KINDS) == {f.name for f in fields(TrainConfig)}


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _coerce(key: str, raw: str):
    if key in _RUN_KEYS:
        return _RUN_KEYS[key](raw)
    if key not in _TRAIN_KINDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TRAIN_KINDS[key]
    try:
        return _parse_bool(raw) if kind is bool else kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _resolve(args: argparse.Namespace) -> dict:
    """Merge config file < command-line flags into one settings dict."""
    settings: dict = {}
    if getattr(args, "config", None):
        for key, raw in _parse_config_file(args.config).items():
            settings[key] = _coerce(key, raw)
    for key in list(_RUN_KEYS) + list(_TRAIN_KINDS):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    out_env = os.environ.get(OUTPUT_DIR_ENV)
    if out_env:
        settings["out_dir"] = out_env
    return settings


def _train_config(settings: dict) -> TrainConfig:
    config = TrainConfig(**{k: v for k, v in settings.items()
                            if k in _TRAIN_KINDS})
    config.validate()
    return config


def _load_split(settings: dict):
    if "events" not in settings:
        raise ConfigError("no events file configured")
    events_path = settings["events"]
    if not os.path.exists(events_path):
        raise ParseError(f"events file not found: {events_path}")
    features_path = settings.get("features")
    if features_path and not os.path.exists(features_path):
        raise ParseError(f"feature file not found: {features_path}")
    store = tgraph.load_events(events_path, features_path)
    if not store.events:
        raise ParseError(f"events file {events_path} holds no events")
    if "t_tr" in settings:
        t_tr = settings["t_tr"]
    else:
        frac = settings.get("train_frac", 0.8)
        if not 0.0 < frac < 1.0:
            raise ConfigError(f"train_frac must be in (0, 1), got {frac}")
        times = [e.time for e in store.events]
        t_tr = times[min(len(times) - 1, int(frac * len(times)))]
    train_view, test_events = tgraph.split(store, t_tr)
    return train_view, test_events, t_tr


def _out_dir(settings: dict) -> str:
    out = settings.get("out_dir", "runs/latest")
    os.makedirs(out, exist_ok=True)
    return out


def _write_snapshot(settings: dict, config: TrainConfig, out: str,
                    extra: dict | None = None) -> None:
    resolved = dict(settings)
    resolved.update(asdict(config))
    if extra:
        resolved.update(extra)
    with open(os.path.join(out, "config_resolved.txt"), "w",
              encoding="utf-8") as fh:
        for key in sorted(resolved):
            fh.write(f"{key}={resolved[key]}\n")


def _write_metrics(report: evaluate.MetricsReport, out: str,
                   stem: str) -> None:
    with open(os.path.join(out, f"{stem}.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.to_lines()) + "\n")
    with open(os.path.join(out, f"{stem}.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)


def cmd_train(args: argparse.Namespace) -> int:
    settings = _resolve(args)
    config = _train_config(settings)
    train_view, test_events, t_tr = _load_split(settings)
    out = _out_dir(settings)
    model, history = trainer.train(train_view, config)
    trainer.save_checkpoint(model, config, os.path.join(out, "checkpoint.json"))
    with open(os.path.join(out, "loss_history.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "seconds"])
        for stats in history:
            writer.writerow([stats.epoch, repr(stats.loss),
                             f"{stats.seconds:.3f}"])
    _write_snapshot(settings, config, out,
                    extra={"t_tr": t_tr, "n_train": train_view.num_events,
                           "n_test": len(test_events)})
    final = history[-1].loss if history else float("nan")
    print(f"trained {config.epochs} epochs (ran {len(history)}), "
          f"final loss {final:.6f}, checkpoint in {out}")
    return 0


def _cmd_eval(args: argparse.Namespace, task: str) -> int:
    settings = _resolve(args)
    model, config = trainer.load_checkpoint(args.checkpoint)
    train_view, test_events, t_tr = _load_split(settings)
    if train_view.feature_dim != model.tgnn.dims[0]:
        raise DimensionError(
            f"checkpoint expects {model.tgnn.dims[0]} input features, "
            f"data provides {train_view.feature_dim}")
    if not test_events:
        raise ParseError(f"no test events after t_tr={t_tr}")
    out = _out_dir(settings)
    frozen = model.detached()
    splits = settings.get("splits", 5)
    seed = settings.get("seed", config.seed)
    if task == "link":
        report = evaluate.eval_link(frozen, train_view, test_events,
                                    splits=splits, seed=seed,
                                    limit=config.neighbor_limit)
        stem = "metrics_link"
        summary = (f"accuracy={report.mean('accuracy'):.4f}"
                   f"+-{report.ci_halfwidth('accuracy'):.4f} "
                   f"f1={report.mean('f1'):.4f}"
                   f"+-{report.ci_halfwidth('f1'):.4f}")
    else:
        report = evaluate.eval_node_dynamics(
            frozen, train_view, test_events, splits=splits, seed=seed,
            limit=config.neighbor_limit,
            window=settings.get("delta_window", 0.0))
        stem = "metrics_node"
        summary = (f"mae={report.mean('mae'):.4f}"
                   f"+-{report.ci_halfwidth('mae'):.4f}")
    _write_metrics(report, out, stem)
    _write_snapshot(settings, config, out, extra={"t_tr": t_tr, "task": task})
    print(summary)
    return 0


def cmd_gen_synth(args: argparse.Namespace) -> int:
    store = tgraph.synth_hawkes_graph(args.nodes, args.horizon,
                                      args.base_rate, args.excitation,
                                      args.decay, args.seed)
    tgraph.write_events(store, args.out + ".events", args.out + ".features")
    print(f"wrote {store.num_events} events over {store.num_nodes} nodes "
          f"to {args.out}.events / {args.out}.features")
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    settings = _resolve(args)
    config = _train_config(settings)
    if "events" in settings:
        store, _, _ = _load_split(settings)
    else:
        store = tgraph.synth_hawkes_graph(
            n_nodes=20, horizon=30.0, base_rate=0.01, excitation=0.5,
            decay=1.0, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    model = trainer.init_params(config, store.feature_dim)
    sampler = tgraph.negative_distribution(store)
    batch = store.events[:args.batch_events]
    frozen = [sample_negatives(store, sampler, e, config.num_negatives, rng)
              for e in batch]

    def loss_fn():
        return trainer.total_loss(batch, model, store, config,
                                  negatives=frozen)

    named = model.named_tensors()
    worst_name, worst_err = "", -1.0
    for name, tensor in named:
        err = grad_check(loss_fn, [tensor], step=args.step)
        if err > worst_err:
            worst_name, worst_err = name, err
    print(f"max_rel_err={worst_err:.3e} worst={worst_name}")
    return 0 if worst_err < 1e-4 else 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    for key, kind in _RUN_KEYS.items():
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key,
                            type=kind, default=None)
    for key, kind in _TRAIN_KINDS.items():
        flag = f"--{key.replace('_', '-')}"
        if kind is bool:
            parser.add_argument(flag, dest=key, type=_parse_bool,
                                default=None)
        elif key == "ablation":
            parser.add_argument(flag, dest=key, choices=trainer.ABLATIONS,
                                default=None)
        elif key == "node_loss_endpoints":
            parser.add_argument(flag, dest=key, choices=("both", "src"),
                                default=None)
        else:
            parser.add_argument(flag, dest=key, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tgdyn",
        description="Hawkes-process temporal graph embeddings: train, "
                    "evaluate, generate synthetic data, check gradients.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model end to end")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_el = sub.add_parser("eval-link", help="temporal link prediction")
    p_el.add_argument("--checkpoint", required=True)
    _add_common(p_el)
    p_el.set_defaults(func=lambda a: _cmd_eval(a, "link"))

    p_en = sub.add_parser("eval-node", help="node dynamics prediction")
    p_en.add_argument("--checkpoint", required=True)
    _add_common(p_en)
    p_en.set_defaults(func=lambda a: _cmd_eval(a, "node"))

    p_gs = sub.add_parser("gen-synth", help="write a synthetic event file")
    p_gs.add_argument("--nodes", type=int, default=100)
    p_gs.add_argument("--horizon", type=float, default=100.0)
    p_gs.add_argument("--base-rate", dest="base_rate", type=float,
                      default=0.0035)
    p_gs.add_argument("--excitation", type=float, default=0.8)
    p_gs.add_argument("--decay", type=float, default=1.0)
    p_gs.add_argument("--seed", type=int, default=0)
    p_gs.add_argument("--out", required=True,
                      help="output path prefix (.events/.features added)")
    p_gs.set_defaults(func=cmd_gen_synth)

    p_gc = sub.add_parser("grad-check",
                          help="compare analytic and numeric gradients")
    _add_common(p_gc)
    p_gc.add_argument("--step", type=float, default=1e-5)
    p_gc.add_argument("--batch-events", dest="batch_events", type=int,
                      default=8)
    p_gc.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, DegenerateDataError, FileNotFoundError,
            DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, DomainError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
