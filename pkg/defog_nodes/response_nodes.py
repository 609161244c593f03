"""
Response node for the defogging pipeline
Writes the machine-readable run log and the final response
"""
from pathlib import Path

from .base_node import BaseNode
from .graph_state import GraphState, StateManager, PipelineStages


def format_run_log(summary: dict) -> str:
    """key=value lines in insertion order; no timestamps so reruns are byte-identical"""
    lines = []
    for key, value in summary.items():
        text = str(value).replace("\n", " ")
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


class WriteRunLogNode(BaseNode):
    """
    Final node: <out_dir>/<command>_log.txt plus the response dict
    Runs for successful and failed commands alike
    """

    def __init__(self):
        super().__init__(PipelineStages.WRITE_RUN_LOG)

    def __call__(self, state: GraphState) -> GraphState:
        return self.execute(state)

    def execute(self, state: GraphState) -> GraphState:
        if not StateManager.is_error_state(state):
            StateManager.record(state, status="ok")
            out_dir = Path(state["out_dir"])
            written = sorted({Path(p).relative_to(out_dir).as_posix() if Path(p).is_relative_to(out_dir)
                              else str(p) for p in state.get("written") or []})
            StateManager.record(state, outputs=",".join(written))
            state["response"] = {"success": True, "summary": dict(state["summary"])}

        log_path = Path(state["out_dir"]) / f"{state['command']}_log.txt"
        try:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            log_path.write_text(format_run_log(state["summary"]), encoding="utf-8")
            self.logger.info(f"📝 Run log written to {log_path}")
        except OSError as e:
            self.logger.error(f"Could not write run log {log_path}: {e}")
        StateManager.update_stage(state, PipelineStages.END)
        return state
