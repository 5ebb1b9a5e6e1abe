import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from partcert import BoxSet, CertProblem, PolytopeSet, box_from_nominal, random_network

settings.register_profile("partcert", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("partcert")


def one_layer_problem(seed: int, max_in: int = 6, max_out: int = 6, eps: float | None = None,
                      distribution: str | None = None, bias: bool | None = None) -> CertProblem:
    """Seeded one-hidden-layer instance with a random cost and a box around a normal nominal."""
    rng = np.random.default_rng(10_000 + seed)
    n_x = int(rng.integers(1, max_in + 1))
    n_z = int(rng.integers(1, max_out + 1))
    dist = distribution or ("normal", "uniform")[seed % 2]
    eps = eps if eps is not None else (0.1, 0.5)[(seed // 2) % 2]
    use_bias = bias if bias is not None else dist == "normal"
    net = random_network([n_x, n_z], dist, seed=seed, bias=use_bias)
    nominal = rng.standard_normal(n_x)
    cost = rng.standard_normal(n_z)
    return CertProblem(net, PolytopeSet(box_from_nominal(nominal, eps)), cost, name=f"net-{seed}")


def box_problem(net, lower, upper, cost) -> CertProblem:
    return CertProblem(net, PolytopeSet(BoxSet(lower, upper)), cost)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
