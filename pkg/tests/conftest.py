import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))  # oracles.py sits next to the tests

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def one_class(tmp_path_factory):
    """Seeded synthetic class (100 train / 40 test) with its noisy-train run handle."""
    from mmnr.config import desk_config
    from mmnr.ingest.synth import SynthSpec, generate_synthetic_dataset
    from mmnr.pipeline import Run

    root = tmp_path_factory.mktemp("one_class")
    generate_synthetic_dataset(SynthSpec(classes=1), 0, root)
    cfg = desk_config(out_dir=str(root / "runs"), data={"root": str(root), "noise": "overlap"})
    return Run(cfg)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line; returns ``ok``."""
    def record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[n])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
