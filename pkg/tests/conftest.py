import time

import pytest

from histat.harness import TrainConfig, ablation_grid
from histat.model import ModelConfig
from histat.synthdata import generate_dataset

# default corpus: 512 training and 128 held-out trajectories, S=64, d=7
TRAIN_SEED, EVAL_SEED = 0, 1


@pytest.fixture(scope="session")
def default_corpus():
    return generate_dataset(512, seed=TRAIN_SEED), generate_dataset(128, seed=EVAL_SEED)


@pytest.fixture(scope="session")
def default_grid(default_corpus):
    """The four component variants at the default config, trained once per session.

    Returns ``(rows, results, seconds)`` keyed by variant name.
    """
    train_set, eval_set = default_corpus
    results, seconds, started = {}, {}, {}

    def progress(name):
        started[name] = time.perf_counter()

    def on_result(name, res):
        seconds[name] = time.perf_counter() - started[name]
        results[name] = res

    rows = ablation_grid(ModelConfig(), TrainConfig(), train_set, eval_set, include_sweep=False,
                         progress=progress, on_result=on_result)
    return {r["variant"]: r for r in rows}, results, seconds


ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(number, ok, detail)`` then assert on ``ok``."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
