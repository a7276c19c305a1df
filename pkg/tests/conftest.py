import numpy as np
import pytest

from doubleweight import Dataset, PartialCovariates


def make_instance(rng, n=None, j=1, k=2, e=0.4, tame=True):
    """Random missing-outcome/missing-covariate instance for identity tests.

    Continuous covariates and moderate missingness keep every fit full rank
    with overwhelming probability; callers that need guarantees should check
    the fit diagnostics and redraw.
    """
    if n is None:
        n = int(rng.integers(30, 200))
    x = rng.normal(size=(n, j))
    w = rng.normal(size=(n, k)) + 0.5
    mask = (rng.random((n, k)) < 0.7).astype(int)
    z = (rng.random(n) < e).astype(int)
    # keep observation probabilities moderate so weights stay tame
    lin = 0.5 + 0.8 * x[:, 0] if tame else 1.0 + 2.0 * x[:, 0]
    p = 1.0 / (1.0 + np.exp(-lin))
    r = (rng.random(n) < p).astype(int)
    y1 = 1.0 + x @ rng.normal(size=j) + np.where(mask.sum(axis=1) > k / 2, 1.0, 0.0)
    y0 = x @ rng.normal(size=j)
    y = np.where(z == 1, y1 + rng.normal(size=n), y0 + rng.normal(size=n))
    ds = Dataset(
        y=np.where(r == 1, y, 0.0),
        r_y=r,
        z=z,
        covariates=PartialCovariates(
            fully_observed=x, partial=np.nan_to_num(w) * mask, observed_mask=mask
        ),
    )
    return ds


def arms_ok(ds, min_per_arm=3):
    obs = ds.r_y == 1
    return (
        int(np.sum(obs & (ds.z == 1))) >= min_per_arm
        and int(np.sum(obs & (ds.z == 0))) >= min_per_arm
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
