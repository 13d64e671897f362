import numpy as np
import pytest

from saferl.config import ExperimentConfig
from saferl.experiment import init_theta
from saferl.mpc_scheme import mpc_program
from saferl.plant_sim import Rollout, TransitionBatch
from saferl.reference_problems import disc_problem, unconstrained_quadratic


@pytest.fixture(scope="session")
def disc():
    return disc_problem()


@pytest.fixture(scope="session")
def quad():
    return unconstrained_quadratic(2)


@pytest.fixture(scope="session")
def case1():
    return ExperimentConfig(case=1, out_dir="unused")


@pytest.fixture(scope="session")
def theta0(case1):
    return init_theta(case1)


@pytest.fixture(scope="session")
def mpc(case1):
    return mpc_program(case1.dims())


@pytest.fixture
def small_config(tmp_path):
    """Case-1 preset shrunk to a few short rollouts."""
    return ExperimentConfig(case=1, seed=3, rl_steps=1, out_dir=str(tmp_path / "run"), S=2, N_t=3, report=False)


def bisect(f, lo, hi, tol=1e-14):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


@pytest.fixture
def disc_radius_oracle():
    """u solving u - theta1 + 2 mu u = 0, mu (u^2 - 1) = -tau on (0, 1)."""

    def oracle(theta1, tau):
        return bisect(lambda u: u - theta1 + 2.0 * tau * u / (1.0 - u * u), 0.0, 1.0 - 1e-15)

    return oracle


def random_interior_thetas(n, seed=0):
    rng = np.random.default_rng(seed)
    return [np.concatenate([rng.uniform(-2.0, 2.0, 2), rng.uniform(0.5, 1.5, 1)]) for _ in range(n)]


def make_batch(states, actions, next_states, costs, records=None, split=1):
    """TransitionBatch from stacked arrays, cut into ``split`` equal rollouts."""
    n = len(costs)
    records = records if records is not None else [None] * n
    size = n // split
    rollouts = []
    for i in range(split):
        sl = slice(i * size, (i + 1) * size)
        rollouts.append(
            Rollout(
                i,
                np.asarray(states[sl], dtype=float),
                np.asarray(actions[sl], dtype=float),
                np.asarray(costs[sl], dtype=float),
                np.asarray(next_states[sl], dtype=float),
                tuple(records[sl]),
            )
        )
    return TransitionBatch(tuple(rollouts))
