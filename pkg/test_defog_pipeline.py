#!/usr/bin/env python3
"""
Pipeline node and command line tests

Runs the CLI commands end to end on a handful of simulated games:
simulate -> split -> featurize-check -> train -> sweep -> evaluate -> report -> heatmap
"""
import sys
from pathlib import Path

import pytest
from pydantic import BaseModel

project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from replay_io import ReplayFormatError
from sequence_sampler import SamplingError
from toy_simulator import SimulationError
from tensorgrad import CheckpointError
from defogger_trainer import TrainingDivergedError
from evaluation import read_graymap
from defog_nodes import (BaseNode, ErrorHandlerNode, LoadConfigNode, StateManager, WriteRunLogNode, classify_error,
                         format_run_log, read_thresholds, write_thresholds)
from config import build_section, data_dir, load_config_file
from defogger_model import ModelConfig
from defog_cli import build_parser, main

TINY_CONFIG = """model.conv_channels=3
model.lstm_channels=8
model.kernel_size=2
model.terrain_channels=2
model.faction_channels=2
train.steps=2
train.validate_every=2
train.lr=0.003
eval.n_thresholds=5
"""


def run_log(out_dir: Path, command: str) -> dict:
    lines = (out_dir / f"{command}_log.txt").read_text().splitlines()
    return dict(line.split("=", 1) for line in lines)


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    root = tmp_path_factory.mktemp("lab")
    assert main(["simulate", "--out", str(root / "games"), "--count", "6", "--seed", "70"]) == 0
    assert main(["split", "--manifest", str(root / "games" / "manifest.txt"), "--out", str(root / "splits"),
                 "--seed", "1"]) == 0
    config = root / "tiny.cfg"
    config.write_text(TINY_CONFIG)
    assert main(["train", "--train", str(root / "splits" / "train_manifest.txt"),
                 "--valid", str(root / "splits" / "valid_manifest.txt"), "--out", str(root / "cl"),
                 "--config", str(config), "--g", "32", "--s", "30", "--seed", "3"]) == 0
    return root


# ----------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------

def test_config_file_sections(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model.depth=9\ntrain.steps=10\n# comment\neval.aggregation=sliced\n")
    sections = load_config_file(str(path))
    assert sections == {"sim": {}, "model": {"depth": "9"}, "train": {"steps": "10"},
                        "eval": {"aggregation": "sliced"}}
    assert load_config_file(None) == {"sim": {}, "model": {}, "train": {}, "eval": {}}
    with pytest.raises(FileNotFoundError):
        load_config_file(str(tmp_path / "missing.cfg"))


def test_command_line_beats_file_beats_defaults():
    config = build_section(ModelConfig, {"depth": "9", "encoder_kind": "C"}, depth=16, block_kind=None)
    assert (config.depth, config.encoder_kind, config.block_kind) == (16, "C", "basic")


def test_preset_applies_under_file_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model.conv_channels=16\n")
    state = StateManager.create_initial_state("train", tmp_path, seed=7, config_path=str(path),
                                              args={"preset": "desk", "sections": {"model": {"depth": 9}}})
    state = LoadConfigNode()(state)
    model = state["sections"]["model"]
    assert (model.conv_channels, model.lstm_channels, model.depth, model.seed) == (16, 256, 9, 7)
    assert state["sections"]["train"].seed == 7 and state["sections"]["sim"].seed == 7


def test_file_seeds_hold_unless_seed_is_given(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model.seed=5\ntrain.seed=6\nsim.seed=11\n")
    state = LoadConfigNode()(StateManager.create_initial_state("train", tmp_path, config_path=str(path)))
    sections = state["sections"]
    assert (sections["model"].seed, sections["train"].seed, sections["sim"].seed) == (5, 6, 11)
    assert state["seed"] == 11 and state["summary"]["seed"] == 11

    state = LoadConfigNode()(StateManager.create_initial_state("train", tmp_path, seed=2, config_path=str(path)))
    assert {name: section.seed for name, section in state["sections"].items() if name != "eval"} == \
        {"sim": 2, "model": 2, "train": 2}

    assert LoadConfigNode()(StateManager.create_initial_state("split", tmp_path))["seed"] == 0
    assert build_parser().parse_args(["simulate"]).seed is None


def test_default_output_dirs_follow_data_dir():
    assert build_parser().parse_args(["simulate"]).out == str(data_dir() / "games")
    assert build_parser().parse_args(["split", "--manifest", "m.txt"]).out == str(data_dir() / "splits")


# ----------------------------------------------------------------------
# Nodes
# ----------------------------------------------------------------------

class _Strict(BaseModel):
    value: int


def _validation_error():
    try:
        _Strict(value="x")
    except ValueError as e:
        return e


@pytest.mark.parametrize("error,expected", [
    (TrainingDivergedError("nan"), "training_diverged_error"),
    (SimulationError("no base"), "simulation_error"),
    (FileNotFoundError("gone"), "file_not_found_error"),
    (ReplayFormatError("bad", line_number=3), "data_format_error"),
    (CheckpointError("truncated"), "data_format_error"),
    (SamplingError("short"), "validation_error"),
    (_validation_error(), "validation_error"),
    (RuntimeError("boom"), "general"),
])
def test_classify_error(error, expected):
    assert classify_error(error) == expected


class _FailingNode(BaseNode):
    def __init__(self, error):
        super().__init__("failing")
        self.error = error
        self.calls = 0

    def execute(self, state):
        self.calls += 1
        raise self.error


def test_node_converts_exception_and_later_nodes_skip(tmp_path):
    state = StateManager.create_initial_state("train", tmp_path)
    first = _FailingNode(TrainingDivergedError("loss is nan", tmp_path / "best.ckpt"))
    state = first(state)
    assert state["error_type"] == "training_diverged_error"
    assert state["checkpoint_path"] == str(tmp_path / "best.ckpt")

    second = _FailingNode(RuntimeError("never"))
    state = second(state)
    assert second.calls == 0

    state = ErrorHandlerNode()(state)
    assert state["response"]["error"]["error_code"] == "ERR_TRAINING_DIVERGED"
    assert state["response"]["error"]["last_good_checkpoint"] == str(tmp_path / "best.ckpt")
    WriteRunLogNode()(state)
    log = run_log(tmp_path, "train")
    assert log["status"] == "error" and log["error_code"] == "ERR_TRAINING_DIVERGED"


class _NeedsManifestNode(BaseNode):
    def __init__(self):
        super().__init__("needs_manifest")

    def execute(self, state):
        self.require(state, "manifest_path")
        StateManager.record(state, manifest=state["manifest_path"])
        return state


def test_node_timing_and_requirements(tmp_path):
    state = StateManager.create_initial_state("split", tmp_path)
    state = _NeedsManifestNode()(state)
    assert state["error_type"] == "validation_error" and "manifest_path" in state["error"]
    assert "needs_manifest" not in state["timings"]

    state = StateManager.create_initial_state("split", tmp_path)
    state["manifest_path"] = "m.txt"
    state = _NeedsManifestNode()(state)
    assert state["stage"] == "needs_manifest" and state["timings"]["needs_manifest"] >= 0.0
    assert state["summary"]["manifest"] == "m.txt"


@pytest.mark.parametrize("error_type,code", [
    ("validation_error", "ERR_VALIDATION"),
    ("file_not_found_error", "ERR_FILE_NOT_FOUND"),
    ("data_format_error", "ERR_DATA_FORMAT"),
    ("simulation_error", "ERR_SIMULATION"),
    ("missing_checkpoint_error", "ERR_MISSING_CHECKPOINT"),
    ("general", "ERR_GENERAL"),
])
def test_error_codes(tmp_path, error_type, code):
    state = StateManager.set_error(StateManager.create_initial_state("report", tmp_path), "x", error_type)
    assert ErrorHandlerNode()(state)["response"]["error"]["error_code"] == code


def test_error_handler_ignores_healthy_state(tmp_path):
    state = StateManager.create_initial_state("report", tmp_path)
    assert ErrorHandlerNode()(state)["response"] is None


def test_run_log_format():
    assert format_run_log({"command": "split", "seed": 3, "note": "a\nb"}) == "command=split\nseed=3\nnote=a b\n"


def test_thresholds_file_roundtrip(tmp_path):
    thresholds = {"op_u": 0.0123, "hid_u": 1.5, "g_op_b": 0.5}
    assert read_thresholds(write_thresholds(thresholds, tmp_path / "t.txt")) == thresholds
    (tmp_path / "bad.txt").write_text("op_x=0.1\n")
    with pytest.raises(ValueError):
        read_thresholds(tmp_path / "bad.txt")


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

def test_simulate_is_byte_reproducible(lab, tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--count", "6", "--seed", "70"]) == 0
    for name in ["manifest.txt", "simulate_log.txt"] + [f"game_{i:05d}.dfg" for i in range(6)]:
        assert (tmp_path / name).read_bytes() == (lab / "games" / name).read_bytes(), name
    log = run_log(tmp_path, "simulate")
    assert log["status"] == "ok" and log["games"] == "6" and log["outputs"] == "manifest.txt"


def test_split_writes_three_manifests(lab):
    log = run_log(lab / "splits", "split")
    assert (log["train_games"], log["valid_games"], log["test_games"]) == ("4", "1", "1")
    assert log["outputs"] == "test_manifest.txt,train_manifest.txt,valid_manifest.txt"


def test_featurize_check_passes_on_simulated_games(lab, tmp_path):
    assert main(["featurize-check", "--manifest", str(lab / "splits" / "test_manifest.txt"),
                 "--out", str(tmp_path)]) == 0
    log = run_log(tmp_path, "featurize-check")
    assert log["failed"] == "0" and log["checked"] == "2"


def test_train_writes_checkpoint_and_log(lab):
    log = run_log(lab / "cl", "train")
    assert log["status"] == "ok"
    assert (log["encoder"], log["depth"], log["s"]) == ("CL", "4", "30.0")
    assert (lab / "cl" / "best.ckpt").exists() and (lab / "cl" / "training_log.txt").exists()


def test_sweep_then_evaluate_checkpoint(lab, tmp_path):
    checkpoint = str(lab / "cl" / "best.ckpt")
    valid = str(lab / "splits" / "valid_manifest.txt")
    assert main(["sweep", "--checkpoint", checkpoint, "--valid", valid, "--out", str(tmp_path / "sweep")]) == 0
    thresholds = read_thresholds(tmp_path / "sweep" / "thresholds.txt")
    assert set(thresholds) == {"op_u", "hid_u", "g_op_b"}
    assert all(0.001 <= v <= 1.5 + 1e-12 for v in thresholds.values())

    assert main(["evaluate", "--predictor", checkpoint, "--thresholds", str(tmp_path / "sweep" / "thresholds.txt"),
                 "--manifest", str(lab / "splits" / "test_manifest.txt"), "--out", str(tmp_path / "eval")]) == 0
    log = run_log(tmp_path / "eval", "evaluate")
    assert log["predictor"] == "best" and log["s"] == "30.0"
    lines = (tmp_path / "eval" / "report_lines.txt").read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("best 32 30 op_u ")


def test_evaluate_baseline(lab, tmp_path):
    assert main(["evaluate", "--predictor", "PM", "--manifest", str(lab / "splits" / "test_manifest.txt"),
                 "--out", str(tmp_path), "--g", "32", "--s", "15"]) == 0
    log = run_log(tmp_path, "evaluate")
    assert 0.0 <= float(log["op_u_f1"]) <= 1.0 and float(log["huber"]) >= 0.0


def test_report_with_model_is_reproducible(lab, tmp_path):
    model = f"CL={lab / 'cl' / 'best.ckpt'}"
    outputs = []
    for run in ("a", "b"):
        assert main(["report", "--manifest", str(lab / "splits" / "test_manifest.txt"), "--out", str(tmp_path / run),
                     "--grid", "32:30,64:15", "--baselines", "Input,PM", "--model", model]) == 0
        outputs.append((tmp_path / run / "report.txt").read_bytes())
    assert outputs[0] == outputs[1]
    log = run_log(tmp_path / "a", "report")
    # model rows only where its own (g, s) is requested
    assert log["rows"] == str((3 + 2) * 4)


def test_heatmap_writes_triptych(lab, tmp_path):
    assert main(["heatmap", "--predictor", "PS", "--manifest", str(lab / "splits" / "test_manifest.txt"),
                 "--out", str(tmp_path), "--s", "30", "--step", "3", "--type", "0", "--scale", "2"]) == 0
    images = [read_graymap(tmp_path / f"heatmap_{name}.pgm") for name in ("input", "predicted", "real")]
    assert images[0].shape == images[2].shape
    assert min(image.min() for image in images) == 0


# ----------------------------------------------------------------------
# Failures
# ----------------------------------------------------------------------

def test_missing_checkpoint_exits_nonzero(lab, tmp_path):
    assert main(["evaluate", "--predictor", str(tmp_path / "none.ckpt"),
                 "--manifest", str(lab / "splits" / "test_manifest.txt"), "--out", str(tmp_path)]) == 1
    assert run_log(tmp_path, "evaluate")["error_code"] == "ERR_MISSING_CHECKPOINT"


def test_missing_manifest_exits_nonzero(tmp_path):
    assert main(["split", "--manifest", str(tmp_path / "nothing.txt"), "--out", str(tmp_path)]) == 1
    assert run_log(tmp_path, "split")["error_code"] == "ERR_FILE_NOT_FOUND"


@pytest.mark.parametrize("line", ["model.bogus=1", "network.depth=4", "model.depth=5"])
def test_bad_config_is_a_validation_error(tmp_path, line):
    config = tmp_path / "bad.cfg"
    config.write_text(line + "\n")
    assert main(["simulate", "--out", str(tmp_path), "--count", "1", "--config", str(config)]) == 1
    assert run_log(tmp_path, "simulate")["error_code"] == "ERR_VALIDATION"


def test_split_with_too_few_games(lab, tmp_path):
    assert main(["split", "--manifest", str(lab / "splits" / "test_manifest.txt"), "--out", str(tmp_path)]) == 1
    assert run_log(tmp_path, "split")["error_code"] == "ERR_VALIDATION"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
