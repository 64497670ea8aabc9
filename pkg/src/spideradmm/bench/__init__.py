"""Problem builders, data I/O and experiment sweeps."""

from .data import parse_libsvm, synthetic_binary, synthetic_multiclass, write_libsvm
from .experiment import ExperimentConfig, read_trace_csv, run_experiment, write_trace_csv
from .graph import build_fusion_graph, edge_matrix, read_edge_list, write_edge_list
from .problems import build_graph_problem, build_multitask_problem

__all__ = [
    "parse_libsvm",
    "write_libsvm",
    "synthetic_binary",
    "synthetic_multiclass",
    "ExperimentConfig",
    "run_experiment",
    "write_trace_csv",
    "read_trace_csv",
    "build_fusion_graph",
    "edge_matrix",
    "read_edge_list",
    "write_edge_list",
    "build_graph_problem",
    "build_multitask_problem",
]
