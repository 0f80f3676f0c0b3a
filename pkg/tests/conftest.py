import numpy as np
import pytest

from ssmrom.model import build_oscillator_chain
from ssmrom.pipeline import build_dataset, decay_trajectory, fit_rom, training_plan
from ssmrom.spectral import build_chart, compute_spectrum

# two-mass chain used across the forced-response tests: cubic spring at the wall,
# stiff coupling spring so the second mode decays ~5x faster than the first
DUFFING_SPRINGS = [1.0, 2.6, 1.0]
DUFFING_CUBIC = [1.0, 0.0, 0.0]
DUFFING_DAMPING = (0.01, 0.05)


def duffing_chain(damping=DUFFING_DAMPING):
    return build_oscillator_chain(2, DUFFING_SPRINGS, DUFFING_CUBIC, damping=damping)


def fitted_rom(model, style="modal-complex", order=5, amplitude=1.0, n_periods=28, W0=None):
    s = compute_spectrum(model)
    chart = build_chart(s, [0], style, W0=W0)
    plan = training_plan(model, [0], amplitude)
    trajs = [decay_trajectory(model, x0, chart, n_periods, label=lab) for lab, _, x0 in plan]
    ds = build_dataset(trajs, chart, model.obs_dof, splits=[sp for _, sp, _ in plan])
    return s, chart, ds, fit_rom(ds, chart, order)


@pytest.fixture(scope="session")
def duffing():
    model = duffing_chain()
    s, chart, ds, rom = fitted_rom(model)
    return {"model": model, "spectrum": s, "chart": chart, "data": ds, "rom": rom}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Print and record one pass/fail line per acceptance check, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        lines.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
