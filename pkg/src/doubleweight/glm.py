"""Logistic regression via IRLS and weighted least squares.

These are the two nuisance fitters everything downstream leans on: the
logistic fits produce the observation and treatment probabilities used as
inverse weights, and the WLS fits produce the treatment-effect coefficients.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from . import linalg
from .exceptions import DegenerateFitError, LabelMismatchError, NonConvergenceError

# Fitted probabilities are clipped into [CLIP_EPS, 1 - CLIP_EPS] before use as
# inverse weights, bounding any single weight at 1e6.
CLIP_EPS = 1e-6
SEPARATION_BOUND = 30.0
MAX_ITER = 100
MAX_HALVINGS = 10
STEP_TOL = 1e-10
SCORE_TOL = 1e-8
# Floor on the IRLS working weight p(1-p) so saturated fits keep a usable step.
IRLS_WEIGHT_FLOOR = 1e-14


@dataclass(frozen=True)
class DesignMatrix:
    """Dense design matrix with column labels."""

    values: np.ndarray
    labels: tuple

    def __post_init__(self):
        values = linalg.check_matrix(self.values, "design")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != values.shape[1]:
            raise ValueError(
                f"{len(self.labels)} labels for {values.shape[1]} columns"
            )

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def k(self):
        return self.values.shape[1]


def design(values, labels=None):
    """Build a DesignMatrix, auto-labelling columns c0, c1, ... if needed."""
    values = linalg.check_matrix(values, "design")
    if labels is None:
        labels = tuple(f"c{j}" for j in range(values.shape[1]))
    return DesignMatrix(values=values, labels=labels)


@dataclass
class GlmFit:
    """Result of a logistic IRLS fit."""

    coefficients: np.ndarray
    fitted_probabilities: np.ndarray
    converged: bool
    iterations: int
    dropped_columns: tuple
    design_labels: tuple
    separation: bool
    score_inf_norm: float


@dataclass
class WlsFit:
    """Result of a weighted least-squares fit."""

    coefficients: np.ndarray
    residuals: np.ndarray
    weights_used: np.ndarray
    design_labels: tuple
    dropped_columns: tuple = field(default_factory=tuple)


def _loglik(eta, y, w):
    # y*eta - log(1 + exp(eta)), computed stably
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def fit_logistic(x, y, prior_weights=None):
    """Maximum-likelihood logistic regression by IRLS with step-halving.

    Convergence requires the score to vanish (inf-norm <= 1e-8 times the
    total prior weight) together with either a tiny final step or a flagged
    separation (|coefficient| beyond SEPARATION_BOUND, where the likelihood
    is numerically flat).  Raises NonConvergenceError after MAX_ITER.
    """
    if not isinstance(x, DesignMatrix):
        x = design(x)
    xv = x.values
    n, k = xv.shape
    y = linalg.check_vector(y, "y")
    if y.shape[0] != n:
        raise ValueError("y length does not match design")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be binary 0/1")
    if prior_weights is None:
        w0 = np.ones(n)
    else:
        w0 = linalg.check_vector(prior_weights, "prior_weights", nonnegative=True)
        if w0.shape[0] != n:
            raise ValueError("prior_weights length does not match design")
    if not np.any(w0 > 0):
        raise DegenerateFitError("no rows with positive prior weight")

    # Rank decisions are made once, from an unpivoted QR: a small diagonal of
    # R flags a column (nearly) inside the span of the ones before it, which
    # is exactly the drop-trailing policy.  The IRLS iteration then runs in
    # the orthonormal basis, so its linear algebra stays well conditioned no
    # matter how the caller parameterized the design; coefficients map back
    # through the triangular factor.
    qfull, rfull = np.linalg.qr(np.sqrt(w0)[:, None] * xv)
    rdiag = np.abs(np.diag(rfull))
    tol = np.sqrt(linalg.RANK_RTOL) * (np.max(rdiag) if rdiag.size else 0.0)
    dropped = [j for j in range(min(k, xv.shape[0])) if rdiag[j] <= tol]
    dropped += list(range(min(k, xv.shape[0]), k))  # more columns than rows
    kept = np.asarray([j for j in range(k) if j not in set(dropped)], dtype=int)
    xk, rmat = np.linalg.qr(np.sqrt(w0)[:, None] * xv[:, kept])
    with np.errstate(divide="ignore", invalid="ignore"):
        xk = np.where(w0[:, None] > 0, xk / np.sqrt(w0)[:, None], 0.0)

    total_weight = float(np.sum(w0))
    score_scale = SCORE_TOL * total_weight
    score_floor = 1e-13 * total_weight
    x_orig = xv[:, kept]

    def to_original(beta_q):
        if not beta_q.size:
            return beta_q
        return solve_triangular(rmat, beta_q, lower=False)

    beta_k = np.zeros(kept.shape[0])
    beta_orig = np.zeros(kept.shape[0])
    eta = xk @ beta_k
    ll = _loglik(eta, y, w0)
    converged = False
    separation = False
    score_norm = np.inf
    ll_flat = False
    iterations = 0

    for iterations in range(1, MAX_ITER + 1):
        p = expit(eta)
        score = xk.T @ (w0 * (y - p))
        irls_w = w0 * np.maximum(p * (1.0 - p), IRLS_WEIGHT_FLOOR)
        gram, _ = linalg.weighted_gram(xk, irls_w, y)
        step = linalg._solve_normal_equations(gram, score).beta

        # Halve the step until the log-likelihood stops decreasing.
        for _ in range(MAX_HALVINGS + 1):
            cand = beta_k + step
            eta_cand = xk @ cand
            ll_cand = _loglik(eta_cand, y, w0)
            if ll_cand >= ll - 1e-10:
                break
            step = step / 2.0

        ll_flat = abs(ll_cand - ll) <= 1e-12 * (1.0 + abs(ll_cand))
        beta_k, eta, ll = cand, eta_cand, ll_cand
        prev_orig = beta_orig
        beta_orig = to_original(beta_k)
        max_step = (
            float(np.max(np.abs(beta_orig - prev_orig))) if beta_orig.size else 0.0
        )
        p = expit(eta)
        score_norm = (
            float(np.max(np.abs(x_orig.T @ (w0 * (y - p))))) if kept.size else 0.0
        )
        separation = separation or bool(
            beta_orig.size and np.max(np.abs(beta_orig)) > SEPARATION_BOUND
        )
        # A flat likelihood with a bottomed-out score means the fitted
        # probabilities are pinned even when some coefficient direction is
        # not identified ((quasi-)separation).  Keep polishing such fits to
        # the score floor (or the iteration budget) so the result does not
        # depend on the covariate basis; separation is reported, never an
        # exit on its own.
        if score_norm <= score_scale and (
            max_step <= STEP_TOL or (ll_flat and score_norm <= score_floor)
        ):
            converged = True
            break

    if not converged and score_norm <= score_scale and ll_flat:
        converged = True
    if not converged:
        raise NonConvergenceError(
            f"IRLS did not converge in {MAX_ITER} iterations "
            f"(score inf-norm {score_norm:.3e})"
        )

    beta = np.zeros(k)
    beta[kept] = beta_orig
    fitted = np.clip(expit(xv @ beta), CLIP_EPS, 1.0 - CLIP_EPS)
    return GlmFit(
        coefficients=beta,
        fitted_probabilities=fitted,
        converged=converged,
        iterations=iterations,
        dropped_columns=tuple(int(j) for j in dropped),
        design_labels=x.labels,
        separation=separation,
        score_inf_norm=score_norm,
    )


def predict_prob(fit, x):
    """Evaluate fitted probabilities on a new design with matching labels."""
    if not isinstance(x, DesignMatrix):
        x = design(x)
    if tuple(x.labels) != tuple(fit.design_labels):
        raise LabelMismatchError(
            f"design labels {x.labels} do not match fit labels {fit.design_labels}"
        )
    return np.clip(expit(x.values @ fit.coefficients), CLIP_EPS, 1.0 - CLIP_EPS)


def fit_wls(x, y, weights):
    """Weighted least squares of y on the design columns."""
    if not isinstance(x, DesignMatrix):
        x = design(x)
    y = linalg.check_vector(y, "y")
    beta, dropped = linalg.solve_least_squares(x.values, weights, y)
    w = np.asarray(weights, dtype=np.float64)
    return WlsFit(
        coefficients=beta,
        residuals=y - x.values @ beta,
        weights_used=w,
        design_labels=x.labels,
        dropped_columns=dropped,
    )
