import numpy as np
import pytest

from fawn.data import SHAPE_5G, SHAPE_WIFI, CsiSample, SceneLabel
from fawn.model import bind, fawn_loss, forward, init_params
from fawn.numerics import Graph, Rng, activation_pattern, relative_error


def _loss_and_pattern(params, sample):
    g = Graph()
    loss = fawn_loss(forward(g, bind(g, params), sample.x5g, sample.xwifi).heads, sample.label)
    return float(loss.value), activation_pattern(g)


def model_grad_check(params, sample, per_tensor=4, step=1e-5, seed=0):
    """Relative error of backward vs central differences for every parameter tensor.

    Entries are sampled per tensor; an entry whose +-step probes change any relu
    or max-pool decision sits on a kink and is replaced by another draw.
    Returns ``({name: error}, skipped)``.
    """
    rng = np.random.default_rng(seed)
    g = Graph()
    pv = bind(g, params)
    loss = fawn_loss(forward(g, pv, sample.x5g, sample.xwifi).heads, sample.label)
    base_pattern = activation_pattern(g)
    g.backward(loss)

    errors, skipped = {}, 0
    for name, value in params.items():
        ad, fd = [], []
        tried = 0
        while len(ad) < min(per_tensor, value.size) and tried < 20 * per_tensor:
            tried += 1
            idx = np.unravel_index(rng.integers(value.size), value.shape)
            probes = []
            for sign in (1.0, -1.0):
                x = value.copy()
                x[idx] += sign * step
                q = dict(params)
                q[name] = x
                probes.append(_loss_and_pattern(q, sample))
            if any(pat != base_pattern for _, pat in probes):
                skipped += 1
                continue
            ad.append(pv[name].grad[idx])
            fd.append((probes[0][0] - probes[1][0]) / (2 * step))
        assert ad, f"every probe of {name} crossed a kink"
        errors[name] = relative_error(np.array(ad), np.array(fd))
    return errors, skipped


@pytest.fixture(scope="session")
def grad_checker():
    """The kink-aware full-model gradient check, shared with the acceptance suite."""
    return model_grad_check


@pytest.fixture(scope="session")
def grad_fixture():
    """Initialised params with small random biases and a random CSI sample."""
    params = init_params(Rng(42))
    rng = np.random.default_rng(7)
    for name in params:
        if name.endswith(".b"):
            params[name] = rng.normal(scale=0.1, size=params[name].shape)
    rng = np.random.default_rng(0)
    sample = CsiSample(rng.normal(size=SHAPE_5G), rng.normal(size=SHAPE_WIFI), SceneLabel((2, 3), (6, 1)))
    return params, sample


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record and print one ``criterion N [PASS|FAIL]`` line, then assert it."""

    def record(n, title, ok, detail):
        line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        request.config.stash.setdefault(_ACCEPTANCE, {})[n] = line
        reporter = request.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
