import sys
from pathlib import Path

import pytest

from evagcn.config import RunConfig
from evagcn.events import SynthConfig, synthesize_dataset

sys.path.insert(0, str(Path(__file__).parent))

# a tiny but complete pipeline configuration for fast end-to-end tests
SMALL_OVERRIDES = [
    "model.hidden_dim=8",
    "model.num_blocks=2",
    "model.num_kernels=2",
    "model.head_hidden=16",
    "voxel.top_k=128",
    "train.epochs=3",
    "train.lr_decay_epochs=[2]",
    "train.batch_size=8",
]


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    cfg = SynthConfig(num_classes=3, duration_us=50_000, num_steps=30)
    manifest = synthesize_dataset(root, num_classes=3, samples_per_class=5, seed=7, config=cfg)
    return root / "manifest.json", manifest


@pytest.fixture()
def small_config(small_dataset):
    path, _ = small_dataset
    return RunConfig().with_overrides(SMALL_OVERRIDES + [f'data.manifest="{path}"'])


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
