"""Point estimators of the average treatment effect under missing data.

Four estimators share one recipe: fit the outcome-observation model over all
units, optionally fit a working treatment model over all units, then read the
treatment coefficient off a weighted least-squares fit restricted to units
with observed outcomes.  They differ only in the regression specification
(unadjusted vs interacted) and in the weight (1/p-hat vs pi-hat/p-hat).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .exceptions import DegenerateArmError, EstimationError, RankError
from .glm import DesignMatrix, GlmFit, fit_logistic, fit_wls
from .missing import augment_mim, subset_covariates, subset_labels

METHODS = ("unadj", "x-reg", "x-ps", "dr")
COVARIATE_SELECTORS = ("full-mim", "fully-observed-only", "imputed-only", "empty")
PMODEL_FORMS = ("interacted", "additive", "covariates-only", "intercept-only")

EXTREME_WEIGHT_BOUND = 1e4


@dataclass(frozen=True)
class EstimatorConfig:
    """Which estimator to run and how to build its nuisance designs.

    ``emodel_design`` selects the covariates used both for the working
    treatment model and, for the interacted estimators, the adjustment
    columns.  ``"empty"`` means intercept-only: x-ps then collapses to the
    unadjusted estimator, x-reg to the unadjusted regression.
    """

    method: str = "x-ps"
    pmodel_design: str = "interacted"
    pmodel_covariates: str = "full-mim"
    emodel_design: str = "full-mim"
    imputation_constants: np.ndarray = None
    name: str = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.pmodel_design not in PMODEL_FORMS:
            raise ValueError(f"pmodel_design must be one of {PMODEL_FORMS}")
        if self.pmodel_covariates not in COVARIATE_SELECTORS:
            raise ValueError(f"pmodel_covariates must be one of {COVARIATE_SELECTORS}")
        if self.emodel_design not in COVARIATE_SELECTORS:
            raise ValueError(f"emodel_design must be one of {COVARIATE_SELECTORS}")

    @property
    def label(self):
        if self.name:
            return self.name
        if self.method in ("x-ps", "x-reg", "dr"):
            return f"{self.method}({self.emodel_design})"
        return self.method


@dataclass(frozen=True)
class Designs:
    """All design matrices one estimator run needs, built once."""

    ac: object
    u: DesignMatrix
    e: DesignMatrix
    adjustment: np.ndarray
    adjustment_labels: tuple
    adjustment_mean: np.ndarray


def _selected(ac, selector):
    if selector == "empty":
        n = ac.matrix.shape[0]
        return np.empty((n, 0)), ()
    return subset_covariates(ac, selector), subset_labels(ac, selector)


def build_designs(data: Dataset, cfg: EstimatorConfig) -> Designs:
    """Assemble the p-model, e-model, and adjustment designs for a run."""
    ac = augment_mim(data.covariates, cfg.imputation_constants)
    n = data.n
    z = data.z.astype(np.float64)

    pcols, plabels = _selected(ac, cfg.pmodel_covariates)
    blocks = [np.ones((n, 1))]
    labels = ["1"]
    if cfg.pmodel_design in ("interacted", "additive", "covariates-only"):
        blocks.append(pcols)
        labels.extend(plabels)
    if cfg.pmodel_design in ("interacted", "additive"):
        blocks.append(z[:, None])
        labels.append("z")
    if cfg.pmodel_design == "interacted":
        blocks.append(pcols * z[:, None])
        labels.extend(f"{lab}:z" for lab in plabels)
    u = DesignMatrix(values=np.hstack(blocks), labels=tuple(labels))

    ecols, elabels = _selected(ac, cfg.emodel_design)
    e = DesignMatrix(
        values=np.hstack([np.ones((n, 1)), ecols]),
        labels=("1",) + tuple(elabels),
    )
    return Designs(
        ac=ac,
        u=u,
        e=e,
        adjustment=ecols,
        adjustment_labels=tuple(elabels),
        adjustment_mean=ecols.mean(axis=0) if ecols.size else np.zeros(ecols.shape[1]),
    )


@dataclass
class EstimateResult:
    """Point estimate with the weights and nuisance fits behind it."""

    method: str
    label: str
    tau_hat: float
    n: int
    n_used: int
    weights: np.ndarray
    p_fit: GlmFit = None
    e_fit: GlmFit = None
    p_hat: np.ndarray = None
    e_hat: np.ndarray = None
    components: tuple = None
    wls_coefficients: np.ndarray = None
    wls_dropped: tuple = ()
    diagnostics: dict = field(default_factory=dict)


def hajek_components(y, z, weights):
    """Weighted outcome means per arm (ratio form)."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z)
    w = np.asarray(weights, dtype=np.float64)
    out = []
    for arm in (1, 0):
        sel = z == arm
        total = np.sum(w[sel])
        if not total > 0:
            raise DegenerateArmError(f"arm z={arm} has no positive-weight units")
        out.append(float(np.sum(w[sel] * y[sel]) / total))
    return out[0], out[1]


def _check_arms(data):
    obs = data.r_y == 1
    for arm in (1, 0):
        if not np.any(obs & (data.z == arm)):
            raise DegenerateArmError(f"arm z={arm} has no observed outcomes")


def _fit_p(data, designs, p_hat, prior_weights=None):
    if p_hat is not None:
        p_hat = np.asarray(p_hat, dtype=np.float64)
        if p_hat.shape != (data.n,) or np.any(p_hat <= 0) or np.any(p_hat > 1):
            raise ValueError("injected p_hat must lie in (0, 1]")
        return None, p_hat
    fit = fit_logistic(designs.u, data.r_y.astype(np.float64), prior_weights)
    return fit, fit.fitted_probabilities


def _fit_e(data, designs, e_hat, prior_weights=None):
    if e_hat is not None:
        e_hat = np.asarray(e_hat, dtype=np.float64)
        if e_hat.shape != (data.n,) or np.any(e_hat <= 0) or np.any(e_hat >= 1):
            raise ValueError("injected e_hat must lie in (0, 1)")
        return None, e_hat
    fit = fit_logistic(designs.e, data.z.astype(np.float64), prior_weights)
    return fit, fit.fitted_probabilities


def _weight_diagnostics(weights, obs):
    used = weights[obs]
    return {
        "min_weight": float(np.min(used)),
        "max_weight": float(np.max(used)),
        "ess": float(np.sum(used) ** 2 / np.sum(used**2)),
        "extreme_weights": bool(np.max(used) > EXTREME_WEIGHT_BOUND),
    }


def _nuisance_diagnostics(p_fit, e_fit):
    diag = {}
    if p_fit is not None:
        diag.update(
            p_converged=p_fit.converged,
            p_separation=p_fit.separation,
            p_dropped_columns=p_fit.dropped_columns,
        )
    if e_fit is not None:
        diag.update(
            e_converged=e_fit.converged,
            e_separation=e_fit.separation,
            e_dropped_columns=e_fit.dropped_columns,
        )
    return diag


def _unadjusted_wls(data, weights, obs):
    x = DesignMatrix(
        values=np.column_stack(
            [np.ones(int(np.sum(obs))), data.z[obs].astype(np.float64)]
        ),
        labels=("1", "z"),
    )
    return fit_wls(x, data.y[obs], weights[obs])


def estimate_unadj(data, cfg=None, *, p_hat=None, p_prior_weights=None):
    """Difference in weighted means: WLS of y on (1, z) with weight 1/p-hat."""
    cfg = cfg or EstimatorConfig(method="unadj")
    _check_arms(data)
    designs = build_designs(data, cfg)
    p_fit, p = _fit_p(data, designs, p_hat, p_prior_weights)
    obs = data.r_y == 1
    weights = np.zeros(data.n)
    weights[obs] = 1.0 / p[obs]
    wls = _unadjusted_wls(data, weights, obs)
    tau = float(wls.coefficients[1])
    components = hajek_components(data.y[obs], data.z[obs], weights[obs])
    diagnostics = _weight_diagnostics(weights, obs)
    diagnostics.update(_nuisance_diagnostics(p_fit, None))
    return EstimateResult(
        method="unadj",
        label=cfg.label,
        tau_hat=tau,
        n=data.n,
        n_used=int(np.sum(obs)),
        weights=weights,
        p_fit=p_fit,
        p_hat=p,
        components=components,
        wls_coefficients=wls.coefficients,
        wls_dropped=wls.dropped_columns,
        diagnostics=diagnostics,
    )


def estimate_xps(
    data,
    cfg=None,
    *,
    p_hat=None,
    e_hat=None,
    p_prior_weights=None,
    e_prior_weights=None,
):
    """Double-weighted estimator: weight 1/p-hat times inverse arm probability."""
    cfg = cfg or EstimatorConfig(method="x-ps")
    _check_arms(data)
    designs = build_designs(data, cfg)
    p_fit, p = _fit_p(data, designs, p_hat, p_prior_weights)
    e_fit, e = _fit_e(data, designs, e_hat, e_prior_weights)
    z = data.z.astype(np.float64)
    pi = z / e + (1.0 - z) / (1.0 - e)
    obs = data.r_y == 1
    weights = np.zeros(data.n)
    weights[obs] = pi[obs] / p[obs]
    wls = _unadjusted_wls(data, weights, obs)
    tau = float(wls.coefficients[1])
    components = hajek_components(data.y[obs], data.z[obs], weights[obs])
    diagnostics = _weight_diagnostics(weights, obs)
    diagnostics.update(_nuisance_diagnostics(p_fit, e_fit))
    return EstimateResult(
        method="x-ps",
        label=cfg.label,
        tau_hat=tau,
        n=data.n,
        n_used=int(np.sum(obs)),
        weights=weights,
        p_fit=p_fit,
        e_fit=e_fit,
        p_hat=p,
        e_hat=e,
        components=components,
        wls_coefficients=wls.coefficients,
        wls_dropped=wls.dropped_columns,
        diagnostics=diagnostics,
    )


def _interacted_fit(data, designs, weights, obs):
    """WLS of y on (1, z, centered covariates, z * centered covariates).

    Covariates are centered at their mean over all N units, including units
    with missing outcomes.
    """
    xc = designs.adjustment - designs.adjustment_mean
    z = data.z.astype(np.float64)
    cols = [np.ones(data.n), z]
    labels = ["1", "z"]
    if xc.shape[1]:
        cols.append(xc)
        cols.append(xc * z[:, None])
        labels.extend(designs.adjustment_labels)
        labels.extend(f"{lab}:z" for lab in designs.adjustment_labels)
    full = np.column_stack(cols)
    x = DesignMatrix(values=full[obs], labels=tuple(labels))
    wls = fit_wls(x, data.y[obs], weights[obs])
    if 1 in wls.dropped_columns:
        raise RankError("treatment column dropped from the interacted design")
    return wls, xc


def _interacted_pieces(wls, q):
    coef = wls.coefficients
    intercept, tau = float(coef[0]), float(coef[1])
    gamma0 = coef[2 : 2 + q].copy()
    gamma1 = gamma0 + coef[2 + q : 2 + 2 * q]
    return intercept, tau, gamma1, gamma0


def estimate_xreg(data, cfg=None, *, p_hat=None, p_prior_weights=None):
    """Interacted regression adjustment with weight 1/p-hat."""
    cfg = cfg or EstimatorConfig(method="x-reg")
    _check_arms(data)
    designs = build_designs(data, cfg)
    p_fit, p = _fit_p(data, designs, p_hat, p_prior_weights)
    obs = data.r_y == 1
    weights = np.zeros(data.n)
    weights[obs] = 1.0 / p[obs]
    wls, _ = _interacted_fit(data, designs, weights, obs)
    q = designs.adjustment.shape[1]
    intercept, tau, _, _ = _interacted_pieces(wls, q)
    diagnostics = _weight_diagnostics(weights, obs)
    diagnostics.update(_nuisance_diagnostics(p_fit, None))
    diagnostics["adj_dropped_columns"] = wls.dropped_columns
    return EstimateResult(
        method="x-reg",
        label=cfg.label,
        tau_hat=tau,
        n=data.n,
        n_used=int(np.sum(obs)),
        weights=weights,
        p_fit=p_fit,
        p_hat=p,
        components=(intercept + tau, intercept),
        wls_coefficients=wls.coefficients,
        wls_dropped=wls.dropped_columns,
        diagnostics=diagnostics,
    )


def estimate_dr(
    data,
    cfg=None,
    *,
    p_hat=None,
    e_hat=None,
    p_prior_weights=None,
    e_prior_weights=None,
):
    """Doubly robust variant: interacted regression with the double weight.

    Cross-checks the regression coefficient against the explicit augmented
    sum built from the same fitted outcome means and raises if they differ.
    """
    cfg = cfg or EstimatorConfig(method="dr")
    _check_arms(data)
    designs = build_designs(data, cfg)
    p_fit, p = _fit_p(data, designs, p_hat, p_prior_weights)
    e_fit, e = _fit_e(data, designs, e_hat, e_prior_weights)
    z = data.z.astype(np.float64)
    pi = z / e + (1.0 - z) / (1.0 - e)
    obs = data.r_y == 1
    weights = np.zeros(data.n)
    weights[obs] = pi[obs] / p[obs]
    wls, xc = _interacted_fit(data, designs, weights, obs)
    q = designs.adjustment.shape[1]
    intercept, tau, gamma1, gamma0 = _interacted_pieces(wls, q)

    m1 = intercept + tau + (xc @ gamma1 if q else 0.0)
    m0 = intercept + (xc @ gamma0 if q else 0.0)
    r_over_p = np.where(obs, data.r_y / p, 0.0)
    yf = np.where(obs, data.y, 0.0)
    aug1 = float(np.mean(m1 + r_over_p * z / e * (yf - m1)))
    aug0 = float(np.mean(m0 + r_over_p * (1.0 - z) / (1.0 - e) * (yf - m0)))
    tau_sum = aug1 - aug0
    gap = abs(tau - tau_sum)
    if gap > 1e-8 * (1.0 + abs(tau)):
        raise EstimationError(
            f"regression and augmented-sum routes disagree: {tau} vs {tau_sum}"
        )

    diagnostics = _weight_diagnostics(weights, obs)
    diagnostics.update(_nuisance_diagnostics(p_fit, e_fit))
    diagnostics["adj_dropped_columns"] = wls.dropped_columns
    diagnostics["dr_two_route_gap"] = gap
    return EstimateResult(
        method="dr",
        label=cfg.label,
        tau_hat=tau,
        n=data.n,
        n_used=int(np.sum(obs)),
        weights=weights,
        p_fit=p_fit,
        e_fit=e_fit,
        p_hat=p,
        e_hat=e,
        components=(aug1, aug0),
        wls_coefficients=wls.coefficients,
        wls_dropped=wls.dropped_columns,
        diagnostics=diagnostics,
    )


_DISPATCH = {
    "unadj": estimate_unadj,
    "x-reg": estimate_xreg,
    "x-ps": estimate_xps,
    "dr": estimate_dr,
}


def estimate(data, cfg, **hooks):
    """Run the estimator named by cfg.method."""
    fn = _DISPATCH[cfg.method]
    if cfg.method in ("unadj", "x-reg"):
        hooks.pop("e_hat", None)
        hooks.pop("e_prior_weights", None)
    return fn(data, cfg, **hooks)


def config_variants(method="x-ps", designs=("empty", "fully-observed-only", "imputed-only", "full-mim")):
    """One config per covariate selector, convenient for comparisons."""
    base = EstimatorConfig(method=method)
    return [replace(base, emodel_design=d) for d in designs]
