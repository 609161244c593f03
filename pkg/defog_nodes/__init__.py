"""
Pipeline nodes for the defogging laboratory

Each CLI command runs a short chain of nodes over a shared GraphState:
configuration, the command's own work, error handling and the run log.
"""

from .base_node import BaseNode, classify_error
from .graph_state import GraphState, StateManager, PipelineStages
from .error_handlers import ErrorHandlerNode, should_go_to_error_handler
from .dataset_nodes import LoadConfigNode, SimulateNode, SplitNode, FeaturizeCheckNode, check_replay
from .model_nodes import TrainNode, SweepNode, read_thresholds, write_thresholds
from .evaluation_nodes import EvaluateNode, ReportNode, HeatmapNode
from .response_nodes import WriteRunLogNode, format_run_log

COMMAND_NODES = {
    "simulate": [SimulateNode],
    "split": [SplitNode],
    "featurize-check": [FeaturizeCheckNode],
    "train": [TrainNode],
    "sweep": [SweepNode],
    "evaluate": [EvaluateNode],
    "report": [ReportNode],
    "heatmap": [HeatmapNode],
}


def run_command(state: GraphState) -> GraphState:
    """Run the node chain of state['command']; errors route to the error handler"""
    nodes = [LoadConfigNode()] + [node_cls() for node_cls in COMMAND_NODES[state["command"]]]
    for node in nodes:
        state = node(state)
        if should_go_to_error_handler(state) == PipelineStages.ERROR_HANDLER:
            break
    state = ErrorHandlerNode()(state)
    return WriteRunLogNode()(state)


__all__ = [
    "BaseNode",
    "classify_error",
    "GraphState",
    "StateManager",
    "PipelineStages",
    "should_go_to_error_handler",
    "run_command",
    "COMMAND_NODES",

    # Configuration and data nodes
    "LoadConfigNode",
    "SimulateNode",
    "SplitNode",
    "FeaturizeCheckNode",
    "check_replay",

    # Model nodes
    "TrainNode",
    "SweepNode",
    "read_thresholds",
    "write_thresholds",

    # Evaluation nodes
    "EvaluateNode",
    "ReportNode",
    "HeatmapNode",

    # Response and error handler nodes
    "ErrorHandlerNode",
    "WriteRunLogNode",
    "format_run_log",
]

__version__ = "1.0.0"
