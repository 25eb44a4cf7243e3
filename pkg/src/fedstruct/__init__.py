"""Subgraph federated node classification with structure-aware predictors."""

from .graphcore import GlobalGraph, LabelSplit, load_graph, save_graph, split_labels
from .partition import ClientView, Partition, build_client_views, make_partition
from .propagate import BetaSchedule, acquire_partitions, acquire_partitions_pruned, combined_adjacency
from .fed import HyperParams, TrainReport

__version__ = "0.1.0"
