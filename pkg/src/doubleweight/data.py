"""Per-unit experiment records."""

from dataclasses import dataclass

import numpy as np

from .missing import PartialCovariates


@dataclass(frozen=True)
class Dataset:
    """One randomized experiment: outcomes, treatment, covariates.

    ``y`` is NaN wherever ``r_y`` is 0; the outcome of an unobserved unit
    carries no usable value.  Treatment is assumed fully observed.
    """

    y: np.ndarray
    r_y: np.ndarray
    z: np.ndarray
    covariates: PartialCovariates

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64, copy=True)
        r = np.asarray(self.r_y)
        z = np.asarray(self.z)
        n = y.shape[0]
        if r.shape != (n,) or z.shape != (n,):
            raise ValueError("y, r_y, z must share one length")
        if not np.all((r == 0) | (r == 1)):
            raise ValueError("r_y must be binary 0/1")
        if not np.all((z == 0) | (z == 1)):
            raise ValueError("z must be binary 0/1 with no missing entries")
        if self.covariates.n != n:
            raise ValueError("covariate rows do not match outcome length")
        r = r.astype(np.int8)
        z = z.astype(np.int8)
        if not np.all(np.isfinite(y[r == 1])):
            raise ValueError("observed outcomes contain NaN or Inf")
        y[r == 0] = np.nan
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r_y", r)
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def n_observed_outcomes(self):
        return int(np.sum(self.r_y))

    def take(self, idx):
        """Row resample with replacement (bootstrap) or subset."""
        idx = np.asarray(idx)
        return Dataset(
            y=np.nan_to_num(self.y)[idx],
            r_y=self.r_y[idx],
            z=self.z[idx],
            covariates=self.covariates.take(idx),
        )
