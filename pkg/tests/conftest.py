from pathlib import Path

import pytest

from riskbounds.bounds import BoundInputs
from riskbounds.model import ModelConfig, build_model

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def load_config(name: str) -> ModelConfig:
    return ModelConfig.load(CONFIGS / f"{name}.json")


def bs_config(r=0.05, v=0.2, factor=2.0, levels=6, n_points=1001, lam_tol=None) -> ModelConfig:
    from dataclasses import replace

    cfg = load_config("bs")
    cfg = replace(cfg, parameters={"r": r, "v": v})
    cfg = cfg.with_grid(refinement_factor=factor, boundary_refinement_levels=levels, n_points=n_points)
    if lam_tol is not None:
        cfg = replace(cfg, tolerances=replace(cfg.tolerances, lam=lam_tol))
    return cfg


@pytest.fixture(scope="session")
def bs_deep():
    """Black-Scholes on the deep refinement used for eigenvalue accuracy."""
    return build_model(load_config("bs"))


@pytest.fixture(scope="session")
def bs_deep_inputs(bs_deep):
    return BoundInputs(bs_deep)


@pytest.fixture(scope="session")
def bs():
    """Black-Scholes with factor-2 refinement: cheap, enough for lam = 0 work."""
    return build_model(bs_config())


@pytest.fixture(scope="session")
def brownian():
    return build_model(load_config("brownian"), allow_zero_rate=True)


@pytest.fixture(scope="session")
def x2dw():
    return build_model(load_config("x2dw"), allow_zero_rate=True)


@pytest.fixture(scope="session")
def cir():
    return build_model(load_config("cir"))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
