import os

os.environ.setdefault("VOLO_THREADS", "1")

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from vologan.cli import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TOY_CONFIG = os.path.join(ROOT, "configs", "toy.json")

threadpool_limits(limits=int(os.environ["VOLO_THREADS"]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """64 + 64 procedural samples at 64x64, seed 0."""
    out = tmp_path_factory.mktemp("toy_data")
    assert main(["dataset-synth", "--out", str(out), "--n", "64", "--size", "64", "--seed", "0"]) == 0
    return out


@pytest.fixture(scope="session")
def toy_run(toy_data, tmp_path_factory):
    """The full 20-epoch toy training run, shared by the end-to-end tests."""
    import time

    run_dir = tmp_path_factory.mktemp("toy_run")
    start = time.perf_counter()
    code = main(["train", "--config", TOY_CONFIG, "--run-dir", str(run_dir),
                 "--synthetic", str(toy_data / "synthetic.manifest"),
                 "--target", str(toy_data / "target.manifest")])
    elapsed = time.perf_counter() - start
    assert code == 0
    return {"run_dir": run_dir, "data": toy_data, "seconds": elapsed}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
