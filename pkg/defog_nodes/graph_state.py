"""
GraphState definition for the defogging pipeline
"""
from typing import TypedDict, Optional, List, Dict, Any


class GraphState(TypedDict, total=False):
    """
    State object that flows between pipeline nodes
    Holds the command arguments, resolved configuration and every output
    """
    # Run management
    command: Optional[str]
    stage: Optional[str]
    seed: Optional[int]
    out_dir: Optional[str]
    config_path: Optional[str]
    args: Optional[Dict[str, Any]]

    # Resolved configuration (section name -> pydantic model)
    sections: Optional[Dict[str, Any]]
    tech: Optional[Any]

    # Data
    manifest_path: Optional[str]
    split_paths: Optional[List[str]]
    check_results: Optional[Any]

    # Models and evaluation
    checkpoint_path: Optional[str]
    thresholds: Optional[Dict[str, float]]
    report: Optional[Any]
    written: Optional[List[str]]

    # key=value lines of the run log
    summary: Optional[Dict[str, Any]]

    # Final output
    response: Optional[Dict[str, Any]]

    # Error handling
    error: Optional[str]
    error_type: Optional[str]

    # Seconds spent per node
    timings: Optional[Dict[str, float]]


class StateManager:
    """Utility class for managing GraphState operations"""

    @staticmethod
    def create_initial_state(command: str, out_dir: str, seed: Optional[int] = None,
                             config_path: Optional[str] = None, args: Optional[Dict[str, Any]] = None) -> GraphState:
        """Create the initial state of one CLI command"""
        return GraphState(
            command=command,
            stage="initialized",
            seed=seed,
            out_dir=str(out_dir),
            config_path=config_path,
            args=dict(args or {}),
            sections=None,
            tech=None,
            manifest_path=None,
            split_paths=None,
            check_results=None,
            checkpoint_path=None,
            thresholds=None,
            report=None,
            written=[],
            summary={"command": command, "seed": seed},
            response=None,
            error=None,
            error_type=None,
            timings={},
        )

    @staticmethod
    def update_stage(state: GraphState, stage: str) -> GraphState:
        state["stage"] = stage
        return state

    @staticmethod
    def add_timing(state: GraphState, node_name: str, seconds: float) -> GraphState:
        timings = state.get("timings") or {}
        timings[node_name] = timings.get(node_name, 0.0) + seconds
        state["timings"] = timings
        return state

    @staticmethod
    def set_error(state: GraphState, error: str, error_type: str = "general") -> GraphState:
        """Set error information in state"""
        state["error"] = error
        state["error_type"] = error_type
        state["stage"] = "error"
        return state

    @staticmethod
    def is_error_state(state: GraphState) -> bool:
        """Check if state contains an error"""
        return bool(state.get("error"))

    @staticmethod
    def record(state: GraphState, **values) -> GraphState:
        """Add key=value entries to the run log summary"""
        summary = state.get("summary") or {}
        summary.update(values)
        state["summary"] = summary
        return state

    @staticmethod
    def add_written(state: GraphState, *paths) -> GraphState:
        written = state.get("written") or []
        written.extend(str(p) for p in paths)
        state["written"] = written
        return state


class PipelineStages:
    """Constants for pipeline stage names"""

    LOAD_CONFIG = "load_config"
    SIMULATE = "simulate"
    SPLIT = "split"
    FEATURIZE_CHECK = "featurize_check"
    TRAIN = "train"
    SWEEP = "sweep"
    EVALUATE = "evaluate"
    REPORT = "report"
    HEATMAP = "heatmap"
    WRITE_RUN_LOG = "write_run_log"

    # Special Stages
    ERROR_HANDLER = "error_handler"
    END = "END"
