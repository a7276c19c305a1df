"""Missingness-indicator preprocessing for partially observed covariates.

Missing covariate cells are represented by the observation mask alone; the
stored value slot is normalized to NaN so no code path can read it by
accident.  Augmentation imputes each partially observed column with a
per-column constant and appends the observation indicators.
"""

from dataclasses import dataclass

import numpy as np

SELECTORS = ("full-mim", "fully-observed-only", "imputed-only")


@dataclass(frozen=True)
class PartialCovariates:
    """Fully observed covariates plus masked partially observed ones.

    ``observed_mask`` is 1 where the corresponding ``partial`` cell is
    observed and 0 where it is missing.
    """

    fully_observed: np.ndarray
    partial: np.ndarray
    observed_mask: np.ndarray
    x_labels: tuple = None
    w_labels: tuple = None

    def __post_init__(self):
        x = np.asarray(self.fully_observed, dtype=np.float64)
        w = np.array(self.partial, dtype=np.float64, copy=True)
        m = np.asarray(self.observed_mask)
        if x.ndim != 2 or w.ndim != 2 or m.ndim != 2:
            raise ValueError("covariate blocks must be 2-D")
        if x.shape[0] != w.shape[0] or w.shape != m.shape:
            raise ValueError("covariate block shapes disagree")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("observed_mask must be binary")
        m = m.astype(np.int8)
        if not np.all(np.isfinite(x)):
            raise ValueError("fully observed covariates contain NaN or Inf")
        if not np.all(np.isfinite(w[m == 1])):
            raise ValueError("observed partial-covariate cells contain NaN or Inf")
        w[m == 0] = np.nan  # missing cells carry no usable value
        object.__setattr__(self, "fully_observed", x)
        object.__setattr__(self, "partial", w)
        object.__setattr__(self, "observed_mask", m)
        x_labels = self.x_labels or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        w_labels = self.w_labels or tuple(f"w{j + 1}" for j in range(w.shape[1]))
        if len(x_labels) != x.shape[1] or len(w_labels) != w.shape[1]:
            raise ValueError("covariate label counts disagree with shapes")
        object.__setattr__(self, "x_labels", tuple(x_labels))
        object.__setattr__(self, "w_labels", tuple(w_labels))

    @property
    def n(self):
        return self.fully_observed.shape[0]

    @property
    def n_fully_observed(self):
        return self.fully_observed.shape[1]

    @property
    def n_partial(self):
        return self.partial.shape[1]

    def take(self, idx):
        """Row subset/resample (used by the bootstrap)."""
        return PartialCovariates(
            fully_observed=self.fully_observed[idx],
            partial=np.nan_to_num(self.partial)[idx],
            observed_mask=self.observed_mask[idx],
            x_labels=self.x_labels,
            w_labels=self.w_labels,
        )


@dataclass(frozen=True)
class AugmentedCovariates:
    """Concatenation [x | imputed w | observation indicators]."""

    matrix: np.ndarray
    labels: tuple
    imputation_constants: np.ndarray
    dropped_indicator_columns: tuple
    n_fully_observed: int
    n_partial: int


def augment_mim(pc, c=None):
    """Impute missing cells with constants c and append the indicators.

    Indicator columns that are constant across units (a covariate observed
    for all units, or for none) are kept in the matrix but flagged in
    ``dropped_indicator_columns`` so downstream designs can exclude them
    before fitting; they are guaranteed collinear with an intercept.
    """
    n, j, k = pc.n, pc.n_fully_observed, pc.n_partial
    if c is None:
        c = np.zeros(k)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (k,):
        raise ValueError(f"imputation constants must have length {k}")
    if not np.all(np.isfinite(c)):
        raise ValueError("imputation constants contain NaN or Inf")
    mask = pc.observed_mask.astype(np.float64)
    w_imputed = np.where(pc.observed_mask == 1, np.nan_to_num(pc.partial), c)
    matrix = np.hstack([pc.fully_observed, w_imputed, mask])
    labels = (
        pc.x_labels
        + tuple(f"{lab}_imp" for lab in pc.w_labels)
        + tuple(f"{lab}_obs" for lab in pc.w_labels)
    )
    flagged = tuple(
        j + k + idx
        for idx in range(k)
        if np.all(pc.observed_mask[:, idx] == pc.observed_mask[0, idx])
    )
    return AugmentedCovariates(
        matrix=matrix,
        labels=labels,
        imputation_constants=c,
        dropped_indicator_columns=flagged,
        n_fully_observed=j,
        n_partial=k,
    )


def _selector_columns(ac, selector):
    j, k = ac.n_fully_observed, ac.n_partial
    if selector == "fully-observed-only":
        return list(range(j))
    if selector == "imputed-only":
        return list(range(j + k))
    if selector == "full-mim":
        flagged = set(ac.dropped_indicator_columns)
        return [idx for idx in range(j + 2 * k) if idx not in flagged]
    raise ValueError(f"unknown selector {selector!r}; expected one of {SELECTORS}")


def subset_covariates(ac, selector):
    """Column subset of the augmented matrix for the requested selector."""
    return ac.matrix[:, _selector_columns(ac, selector)]


def subset_labels(ac, selector):
    """Labels matching subset_covariates for the same selector."""
    return tuple(ac.labels[idx] for idx in _selector_columns(ac, selector))
