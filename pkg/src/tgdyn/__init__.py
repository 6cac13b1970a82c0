"""Hawkes-process temporal graph embeddings with event and node dynamics."""

from .autodiff import DiffTensor, grad_check
from .tgraph import (Event, EventStore, load_events, negative_distribution,
                     parse_events, split, synth_hawkes_graph, write_events)
from .trainer import (ModelParams, TrainConfig, init_params, load_checkpoint,
                      save_checkpoint, total_loss, train)
from .evaluate import (MetricsReport, build_link_dataset, eval_link,
                       eval_node_dynamics)

__all__ = [
    "DiffTensor", "grad_check",
    "Event", "EventStore", "load_events", "negative_distribution",
    "parse_events", "split", "synth_hawkes_graph", "write_events",
    "ModelParams", "TrainConfig", "init_params", "load_checkpoint",
    "save_checkpoint", "total_loss", "train",
    "MetricsReport", "build_link_dataset", "eval_link", "eval_node_dynamics",
]

__version__ = "0.1.0"
