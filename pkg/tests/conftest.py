"""Session fixtures for the expensive pipelines shared by several test files."""
import time
from types import SimpleNamespace

import pytest

from dipole_coupling.cli import fig12_pipeline
from dipole_coupling.geometry import half_wave_dipole
from dipole_coupling.pclstm import TwoPortConfig, train_two_port
from dipole_coupling.synthesis import SpacingConstraints, gen_dataset

# Table II dipole: 3 GHz, l = 0.5 lambda, r = 0.002 lambda.  The spacing range
# covers both published cases (0.052 and 0.206 lambda).
CASE_F = 3e9
CASE_CONSTRAINTS = SpacingConstraints(0.05, 0.6, 0.6, 0.6)


@pytest.fixture(scope="session")
def case_dataset():
    return gen_dataset(100, 2, half_wave_dipole(CASE_F, 0.002, 16), CASE_F, 42,
                       CASE_CONSTRAINTS)


@pytest.fixture(scope="session")
def case_training(case_dataset):
    t0 = time.perf_counter()
    bundle, history = train_two_port(case_dataset, TwoPortConfig())
    return SimpleNamespace(bundle=bundle, history=history,
                           seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def synth_run():
    t0 = time.perf_counter()
    run = fig12_pipeline(seed=42)
    run["wall_seconds"] = time.perf_counter() - t0
    return run


# -- acceptance verdict lines ------------------------------------------------------------

_VERDICTS = {}


def record(criterion, ok, detail):
    """Store a one-line verdict for the terminal summary."""
    _VERDICTS[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(_VERDICTS[criterion])


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
