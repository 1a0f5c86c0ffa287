import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skewfa.model import ComponentParams, MixtureParams  # noqa: E402

_ACCEPTANCE = {}


def random_params(spec, rng, delta_scale=1.0, sep=0.0, nu=5.0, pis=None):
    """Random but well-conditioned parameters for ``spec``."""
    comps = []
    g = spec.g
    pis = np.full(g, 1.0 / g) if pis is None else np.asarray(pis, float)
    for i in range(g):
        mu = rng.normal(size=spec.p) * 0.5
        mu[0] += sep * i
        comps.append(ComponentParams(
            pi=pis[i], mu=mu, B=rng.normal(size=(spec.p, spec.q)),
            d=rng.uniform(0.3, 1.0, size=spec.p),
            delta0=rng.normal(size=spec.delta0_shape()) * delta_scale,
            delta1=rng.normal(size=(spec.p, spec.s)) * delta_scale if spec.s else None,
            nu=nu if spec.tfamily else None))
    return MixtureParams(spec, tuple(comps))


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the summary."""
    def record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
