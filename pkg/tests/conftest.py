import numpy as np
import pytest

from idian.experiment import DataConfig, ExperimentConfig, ModelConfig, RunConfig, prepare_data
from idian.networks import Widths, build_model
from idian.trainer import TrainConfig


def tiny_config(**run) -> ExperimentConfig:
    """A task small enough to train in well under a second per run."""
    return ExperimentConfig(
        data=DataConfig(n_per_class=40, n_classes=3, d_s=8, d_t=6, labeled_per_class=4),
        model=ModelConfig(widths=Widths.uniform(8)),
        train=TrainConfig(batch_size=16, epochs=2),
        run=RunConfig(**run),
    )


@pytest.fixture
def tiny():
    cfg = tiny_config()
    prepared = prepare_data(cfg, 0)
    model = build_model(8, 6, 3, 0, Widths.uniform(8))
    return cfg, prepared, model


def snapshot(model):
    return {k: v.copy() for k, v in model.parameters().items()}


def changed_networks(before, model):
    return {k[0] for k, v in model.parameters().items() if v.tobytes() != before[k].tobytes()}


# one line per acceptance criterion, echoed after the test session
ACCEPTANCE_LINES: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
