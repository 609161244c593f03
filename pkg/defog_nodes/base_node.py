"""
Base node implementation for the defogging pipeline
Every node is a callable on GraphState; BaseNode times it and turns exceptions into state errors
"""
import time
import logging
from abc import ABC, abstractmethod

from pydantic import ValidationError

from tech_tree import TechTreeError
from grid_featurizer import FeaturizationError, GridSpecError
from replay_io import ReplayFormatError
from sequence_sampler import SamplingError
from toy_simulator import SimulationError
from tensorgrad import CheckpointError, ShapeError
from defogger_trainer import TrainingDivergedError

from .graph_state import GraphState, StateManager

logger = logging.getLogger(__name__)

# Most specific first
ERROR_TYPES = (
    (TrainingDivergedError, "training_diverged_error"),
    (SimulationError, "simulation_error"),
    (FileNotFoundError, "file_not_found_error"),
    (ReplayFormatError, "data_format_error"),
    (CheckpointError, "data_format_error"),
    (FeaturizationError, "data_format_error"),
    (ValidationError, "validation_error"),
    (GridSpecError, "validation_error"),
    (TechTreeError, "validation_error"),
    (SamplingError, "validation_error"),
    (ShapeError, "validation_error"),
    (KeyError, "validation_error"),
    (ValueError, "validation_error"),
)


def classify_error(error: Exception) -> str:
    """Map an exception onto a pipeline error type"""
    for error_class, error_type in ERROR_TYPES:
        if isinstance(error, error_class):
            return error_type
    return "general"


class BaseNode(ABC):
    """
    Abstract base class for all pipeline nodes
    Subclasses implement execute(); __call__ adds timing, skip-on-error and exception mapping
    """

    def __init__(self, node_name: str):
        self.node_name = node_name
        self.logger = logging.getLogger(f"{__name__}.{node_name}")

    def __call__(self, state: GraphState) -> GraphState:
        # An earlier node failed: pass the state through to the error handler untouched
        if StateManager.is_error_state(state):
            self.logger.warning(f"Skipping {self.node_name}: {state.get('error')}")
            return state

        started = time.perf_counter()
        StateManager.update_stage(state, self.node_name)
        self.logger.info(f"▶️ {self.node_name} ({state.get('command')})")
        try:
            result = self.execute(state)
        except Exception as e:
            error_type = classify_error(e)
            self.logger.error(f"Error in {self.node_name}: {e}")
            StateManager.set_error(state, f"Error in {self.node_name}: {e}", error_type)
            if isinstance(e, TrainingDivergedError) and e.checkpoint_path is not None:
                state["checkpoint_path"] = str(e.checkpoint_path)
            return state

        if result is None:
            return StateManager.set_error(state, f"{self.node_name} returned no state", "general")
        elapsed = time.perf_counter() - started
        StateManager.add_timing(result, self.node_name, elapsed)
        self.logger.info(f"✅ {self.node_name} done in {elapsed:.2f}s")
        return result

    @abstractmethod
    def execute(self, state: GraphState) -> GraphState:
        """Node body: read what it needs from state, write its outputs back"""

    def require(self, state: GraphState, *fields: str) -> None:
        """Raise ValueError when a state field is missing or blank"""
        for name in fields:
            value = state.get(name)
            if value is None or (isinstance(value, str) and not value.strip()):
                raise ValueError(f"{self.node_name} needs '{name}' in the pipeline state")

    def arg(self, state: GraphState, name: str, default=None):
        """Command-line value, or default when it was not given"""
        value = (state.get("args") or {}).get(name)
        return default if value is None else value
