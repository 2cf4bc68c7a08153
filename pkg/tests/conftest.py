from dataclasses import replace

import numpy as np
import pytest

from odedbn import dist
from odedbn.engine import ParticleEnsemble
from odedbn.model import OdeModel
from odedbn.modelfile import load_model
from odedbn.oracle import models_dir


def shipped(name: str) -> OdeModel:
    return load_model(models_dir() / f"{name}.model")


def frozen(m: OdeModel, params=None, x0=None, obs_sigma=None) -> OdeModel:
    """Copy of ``m`` with every source of randomness switched off.

    Parameters become point masses (at ``params`` or their prior mean) with
    no transition noise; states start exactly at ``x0`` (or their assumed
    values).
    """
    params = params or {}
    x0 = x0 or {}
    ps = tuple(
        replace(p, prior=dist.Gaussian(float(params.get(p.name, dist.mean_of(p.prior))), 0.0), transition_sigma=0.0)
        for p in m.params
    )
    ss = tuple(replace(s, initial_mean=float(x0.get(s.name, s.initial_mean)), initial_sigma=0.0) for s in m.states)
    ins = tuple(replace(i, input_sigma=0.0) for i in m.inputs)
    obs = m.observations if obs_sigma is None else tuple(replace(o, obs_sigma=obs_sigma) for o in m.observations)
    return replace(m, states=ss, params=ps, inputs=ins, observations=obs)


def ensemble(states, params=None, log_weights=None, names=("X",), param_names=(), time=0.0) -> ParticleEnsemble:
    states = np.asarray(states, dtype=float).reshape(len(states), -1)
    n = states.shape[0]
    params = np.zeros((n, 0)) if params is None else np.asarray(params, dtype=float).reshape(n, -1)
    lw = np.zeros(n) if log_weights is None else np.asarray(log_weights, dtype=float)
    return ParticleEnsemble(states, params, np.zeros((n, 0)), lw, time, tuple(names), tuple(param_names), ())


@pytest.fixture
def lorenz():
    return shipped("lorenz")


# ---- acceptance report -------------------------------------------------------

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[key] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: [int(p) if p.isdigit() else p for p in k.replace("-", ".").split(".")]):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
