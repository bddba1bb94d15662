import numpy as np
import pytest

import armctl


@pytest.fixture(scope="session")
def planar2():
    return armctl.load_fixture("planar2").with_gravity([0.0, -9.81, 0.0])


@pytest.fixture(scope="session")
def planar3():
    return armctl.load_fixture("planar3").with_gravity([0.0, -9.81, 0.0])


@pytest.fixture(scope="session")
def generic7():
    return armctl.load_fixture("generic7")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_config(model, rng, margin=0.1):
    """Uniform in-limit joint configuration, kept off the exact bounds."""
    lo = model.lower_limits + margin
    hi = model.upper_limits - margin
    return rng.uniform(lo, hi)


def well_conditioned_config(model, rng, min_singular_value=0.08):
    """In-limit configuration whose tip Jacobian has full row rank with margin.

    Checks that need the undamped task-space inverse to exist (e.g. the
    Lambda residual oracles) sample here to stay away from singularities.
    """
    from armctl import dynamics as dyn

    for _ in range(200):
        q = random_config(model, rng)
        J = dyn.geometric_jacobian(model, q).matrix
        if np.linalg.svd(J, compute_uv=False)[-1] >= min_singular_value:
            return q
    raise RuntimeError("could not sample a well-conditioned configuration")
