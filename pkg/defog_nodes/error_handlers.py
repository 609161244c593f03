"""
Error handling node for the defogging pipeline
"""
from .base_node import BaseNode
from .graph_state import GraphState, StateManager, PipelineStages

ERROR_CODES = {
    "validation_error": "ERR_VALIDATION",
    "file_not_found_error": "ERR_FILE_NOT_FOUND",
    "data_format_error": "ERR_DATA_FORMAT",
    "simulation_error": "ERR_SIMULATION",
    "training_diverged_error": "ERR_TRAINING_DIVERGED",
    "missing_checkpoint_error": "ERR_MISSING_CHECKPOINT",
    "general": "ERR_GENERAL",
}

USER_MESSAGES = {
    "validation_error": "Invalid arguments or configuration.",
    "file_not_found_error": "A required file was not found.",
    "data_format_error": "A replay, manifest or checkpoint is malformed.",
    "simulation_error": "The simulator could not produce a valid game.",
    "training_diverged_error": "Training diverged (non-finite loss).",
    "missing_checkpoint_error": "The requested model checkpoint does not exist.",
    "general": "An error occurred during processing.",
}


class ErrorHandlerNode(BaseNode):
    """
    Turns an error state into a structured error response
    Runs on error states only, so it overrides the skip-on-error behaviour
    """

    def __init__(self):
        super().__init__(PipelineStages.ERROR_HANDLER)

    def __call__(self, state: GraphState) -> GraphState:
        if not StateManager.is_error_state(state):
            return state
        return self.execute(state)

    def execute(self, state: GraphState) -> GraphState:
        """Process error state and create error response"""
        if state.get("response") and not state["response"].get("success", True):
            self.logger.info("Error response already exists, skipping error handler")
            return state

        error_type = state.get("error_type") or "general"
        error_analysis = {
            "error_code": ERROR_CODES.get(error_type, "ERR_GENERAL"),
            "error_message": USER_MESSAGES.get(error_type, USER_MESSAGES["general"]),
            "technical_details": state.get("error", "Unknown error occurred"),
        }
        if state.get("checkpoint_path"):
            error_analysis["last_good_checkpoint"] = state["checkpoint_path"]

        state["response"] = {"success": False, "error": error_analysis}
        StateManager.record(state, status="error", error_code=error_analysis["error_code"],
                            error=error_analysis["technical_details"])
        self.logger.error(f"{state.get('command')} failed: {error_analysis['error_code']} "
                          f"- {error_analysis['technical_details']}")
        return state


def should_go_to_error_handler(state: GraphState) -> str:
    """Routing helper: name of the next stage after a node"""
    if StateManager.is_error_state(state):
        return PipelineStages.ERROR_HANDLER
    return "continue"
