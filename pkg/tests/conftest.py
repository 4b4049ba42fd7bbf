import numpy as np
import pytest

from hbfl.data import DatasetPartition, build_endpoints, generate_synthetic, netflow_like_synthetic_spec, PartitionPlan
from hbfl.federation import Endpoint, Organisation, Topology
from hbfl.nn import ModelParameters


def toy_partition(n=64, d=3, seed=0, endpoint_id="C1", shift=1.5):
    """Two well-separated clusters inside [0, 1]^d."""
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 2).astype(np.int8)
    x = np.clip(0.5 + 0.15 * rng.standard_normal((n, d)) + np.where(y[:, None] == 1, 0.1 * shift, -0.1 * shift), 0, 1)
    classes = np.where(y == 1, "DDoS", "Benign").astype(object)
    return DatasetPartition(x, y, classes, endpoint_id)


def toy_topology(d=3, n=40, seed=0):
    orgs = []
    for o, eps in (("k1", ("C1", "C2")), ("k2", ("C3", "C4"))):
        members = tuple(Endpoint(e, o, toy_partition(n + 8 * i, d, seed + i, e)) for i, e in enumerate(eps))
        orgs.append(Organisation(o, members))
    return Topology(tuple(orgs))


def relu_pattern(params, x):
    """Which hidden units are active, per row; FD is only valid where this does not change."""
    h, masks = np.asarray(x, dtype=np.float64), []
    for w, b in params.layers()[:-1]:
        z = h @ w + b
        masks.append(z > 0)
        h = np.maximum(z, 0.0)
    return np.concatenate([m.ravel() for m in masks])


def smooth_at(params, x, c, step):
    """True when moving coordinate ``c`` by +-step leaves every ReLU on the same side of its kink."""
    base = relu_pattern(params, x)
    for s in (step, -step):
        v = params.values.copy()
        v[c] += s
        if not np.array_equal(relu_pattern(ModelParameters(v, params.spec), x), base):
            return False
    return True


@pytest.fixture(scope="session")
def small_endpoints():
    spec = netflow_like_synthetic_spec(benign=1600, per_attack=400)
    raw = generate_synthetic(spec, 0)
    return build_endpoints(raw, PartitionPlan.standard(), seed=0)


# acceptance criteria register here; the summary prints one line each
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def record_criterion(name: str, ok: bool | None, detail: str = "") -> bool:
    ACCEPTANCE[name] = ("SKIP" if ok is None else "PASS" if ok else "FAIL", detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in ACCEPTANCE:
        status, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{status} {name}" + (f": {detail}" if detail else ""))
