import numpy as np
import pytest

from periphase.model import CoefFn, DiffusionModel, PeriodicFn, SignalSpec

T = 10.0


def make_model(lam=1.0, lam_star=2.0, a=3.0, theta=4.0,
               b=("affine", (0.0, 1.0)), sigma=("constant", (1.0,)),
               lam_kind=None):
    lam_fn = lam_kind if lam_kind is not None else PeriodicFn("constant", (lam,), T)
    return DiffusionModel(
        signal=SignalSpec(
            lam=lam_fn,
            lam_star=PeriodicFn("constant", (lam_star,), T),
            T=T, a=a, theta=theta,
        ),
        b=CoefFn(*b),
        sigma=CoefFn(*sigma),
    )


@pytest.fixture(scope="session")
def ou_model():
    """Mean-reverting unit model: J = 8 at every theta."""
    return make_model()


@pytest.fixture(scope="session")
def ou_sinusoid_model():
    return make_model(lam_kind=PeriodicFn("sinusoid", (1.0, 0.5, 0.0), T))


@pytest.fixture(scope="session")
def rational_sigma_model():
    return make_model(sigma=("bounded_rational", (1.0, 0.5)))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
