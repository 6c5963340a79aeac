from __future__ import annotations
import copy
from pathlib import Path
from typing import Any, Callable, Dict

import pytest

from hullsense.models import ScenarioConfig

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

SI_POSITIONS = [[-4.0, 2.0], [3.5, 4.0], [4.5, -3.5], [-2.5, -4.0]]
DI_VELOCITIES = [[1.0, 0.0], [0.0, -1.0], [-1.0, 0.0], [0.0, 1.0]]


def small_scenario(**overrides: Any) -> Dict[str, Any]:
    """Three single integrators on a complete graph; converges in a handful of steps."""
    raw: Dict[str, Any] = {
        "name": "small",
        "agents": [
            {"kind": "single_integrator", "dim": 2, "u_max": 1.0, "x0": [0.0, 0.0]},
            {"kind": "single_integrator", "dim": 2, "u_max": 1.0, "x0": [1.0, 0.0]},
            {"kind": "single_integrator", "dim": 2, "u_max": 1.0, "x0": [0.0, 1.0]},
        ],
        "graph": {"mode": "complete"},
        "horizon": {"mode": "explicit", "M": 2},
        "kappa": 0.8,
        "policy": {"kind": "lex"},
        "run": {"J_max": 3, "stop_tol": 1e-3},
    }
    for key, value in overrides.items():
        raw[key] = value
    return raw


@pytest.fixture
def repo_root() -> Path:
    return ROOT


@pytest.fixture
def si_ring_path() -> Path:
    return SCENARIOS / "si_paper.json"


@pytest.fixture
def di_ring_path() -> Path:
    return SCENARIOS / "di_paper.json"


@pytest.fixture
def boundary_trap_path() -> Path:
    return SCENARIOS / "boundary_trap.json"


@pytest.fixture
def scenario_dict() -> Callable[..., Dict[str, Any]]:
    return lambda **kw: copy.deepcopy(small_scenario(**kw))


@pytest.fixture
def small_config() -> ScenarioConfig:
    return ScenarioConfig.model_validate(small_scenario())


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    for var in (
        "HULLSENSE_SOLVER_MAX_ITER",
        "HULLSENSE_SOLVER_EPS_ABS",
        "HULLSENSE_SOLVER_EPS_REL",
        "HULLSENSE_SOLVER_RHO",
        "HULLSENSE_TIMEOUT_S",
        "HULLSENSE_ACCEPT_TIMEOUT_S",
    ):
        monkeypatch.delenv(var, raising=False)
