import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from pgstyle.config import TrainConfig  # noqa: E402
from pgstyle.data import make_fixture_images  # noqa: E402
from pgstyle.trainer import train  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def fixture_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    make_fixture_images(root / "content", "content", n=8, size=64)
    make_fixture_images(root / "style", "style", n=8, size=64)
    return root / "content", root / "style"


@pytest.fixture(scope="session")
def fixture_pair(fixture_dirs):
    content_dir, style_dir = fixture_dirs
    return content_dir / "content_00.png", style_dir / "style_01.png"


@pytest.fixture(scope="session")
def smoke_run(fixture_dirs, tmp_path_factory):
    """The 50-iteration tiny-mode training run, shared by CLI and acceptance tests."""
    out = tmp_path_factory.mktemp("smoke")
    cfg = TrainConfig(iterations=50, batch_size=8, learning_rate=1e-4, weight_decay=5e-5, lam=10.0, seed=0)
    import time

    t0 = time.perf_counter()
    result = train(*fixture_dirs, cfg, out_dir=out)
    return result, out, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
