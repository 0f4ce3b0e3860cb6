import json
import time

import numpy as np
import pytest

from sampledlmi import cli
from sampledlmi.sampling import infer_structure, sample_grid
from sampledlmi.systems import get_system

ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex1():
    spec = get_system("example1")
    samples = sample_grid(spec.oracle, spec.X, spec.U, spec.grid)
    return spec, samples, infer_structure(samples)


@pytest.fixture(scope="session")
def ex2():
    spec = get_system("example2")
    samples = sample_grid(spec.oracle, spec.X, spec.U, spec.grid)
    return spec, samples, infer_structure(samples)


def _cli_run(tmp_path_factory, name, argv):
    out = tmp_path_factory.mktemp(name)
    t0 = time.perf_counter()
    code = cli.main(argv + ["--out", str(out)])
    elapsed = time.perf_counter() - t0
    report = json.loads((out / "report.json").read_text())
    log = [json.loads(line) for line in (out / "runlog.jsonl").read_text().splitlines()]
    return {"out": out, "code": code, "elapsed": elapsed, "report": report, "log": log}


@pytest.fixture(scope="session")
def ex1_run(tmp_path_factory):
    """Full Example-1 synthesis through the command line (about half a minute)."""
    return _cli_run(tmp_path_factory, "ex1", ["synthesize", "--system", "example1", "--r-grid", "0.01:0.5:11"])


@pytest.fixture(scope="session")
def ex2_run(tmp_path_factory):
    return _cli_run(tmp_path_factory, "ex2", ["synthesize", "--system", "example2", "--nmax", "20"])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
