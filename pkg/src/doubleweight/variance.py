"""Variance estimation: empirical sandwich, bootstrap, and a population oracle.

The sandwich stacks the per-unit estimating functions each estimator solves
(outcome moments, the observation-model score, and, where present, the
treatment-model score), with analytic Jacobians.  Nuisance blocks are
profiled out of the stack when the corresponding probabilities were injected
or are degenerate (all outcomes observed): they then carry no sampling
noise to propagate.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Dataset
from .estimators import EstimatorConfig, build_designs, estimate
from .exceptions import DoubleweightError, SingularBreadError, TooManyFailuresError

Z975 = 1.959963984540054

# Reciprocal-condition floor below which a bread solve carries no digits.
BREAD_RCOND = 100 * np.finfo(np.float64).eps


@dataclass
class EstimatingSystem:
    """Stacked per-unit estimating functions and their averaged Jacobian."""

    theta: np.ndarray
    labels: tuple
    contrast: np.ndarray
    psi: callable
    a_matrix: callable


@dataclass
class VarianceReport:
    method: str
    tau_variance: float
    se: float
    ci95: tuple = None
    extras: dict = field(default_factory=dict)


def _rng_from_key(seed, *suffix):
    key = seed if isinstance(seed, tuple) else (seed,)
    return np.random.default_rng(np.random.SeedSequence(tuple(key) + suffix))


def _kept(design, glm_fit):
    dropped = set(glm_fit.dropped_columns)
    idx = [j for j in range(design.values.shape[1]) if j not in dropped]
    return design.values[:, idx], glm_fit.coefficients[idx]


class _StackParts:
    """Shared ingredients for every stack variant."""

    def __init__(self, data, cfg, fit):
        designs = build_designs(data, cfg)
        self.n = data.n
        self.z = data.z.astype(np.float64)
        self.r = data.r_y.astype(np.float64)
        self.yf = np.where(data.r_y == 1, np.nan_to_num(data.y), 0.0)
        # Observation-model block: profiled out when p was injected or the
        # response is degenerate (all outcomes observed).
        self.estimate_p = fit.p_fit is not None and not np.all(data.r_y == 1)
        if self.estimate_p:
            self.u, self.beta = _kept(designs.u, fit.p_fit)
        else:
            self.u, self.beta = None, np.empty(0)
            self.p_fixed = np.ones(self.n) if fit.p_fit is None and fit.p_hat is None else fit.p_hat
            if np.all(data.r_y == 1):
                self.p_fixed = np.ones(self.n)
        self.estimate_e = fit.e_fit is not None
        if self.estimate_e:
            self.xe, self.alpha = _kept(designs.e, fit.e_fit)
        else:
            self.xe, self.alpha = None, np.empty(0)
            self.e_fixed = fit.e_hat
        # Adjustment covariates for interacted stacks: only columns whose
        # main and interaction coefficients both survived the rank policy.
        q = designs.adjustment.shape[1]
        dropped = set(fit.wls_dropped or ())
        self.adj_idx = [
            j for j in range(q) if (2 + j) not in dropped and (2 + q + j) not in dropped
        ] if fit.method in ("x-reg", "dr") else []
        self.x_adj = designs.adjustment[:, self.adj_idx]
        if fit.method in ("x-reg", "dr") and q:
            coef = fit.wls_coefficients
            g0 = coef[2 : 2 + q][self.adj_idx]
            g1 = g0 + coef[2 + q : 2 + 2 * q][self.adj_idx]
            self.gamma1_hat, self.gamma0_hat = g1, g0
        else:
            self.gamma1_hat = np.empty(0)
            self.gamma0_hat = np.empty(0)
        self.mu1_hat, self.mu0_hat = fit.components

    def p_of(self, beta):
        if self.estimate_p:
            return expit(self.u @ beta)
        return self.p_fixed

    def e_of(self, alpha):
        if self.estimate_e:
            return expit(self.xe @ alpha)
        return self.e_fixed


def _mean_outer(t, a, b):
    """mean over units of t_i * outer(a_i, b_i)."""
    return (a * t[:, None]).T @ b / t.shape[0]


def build_system(data: Dataset, cfg: EstimatorConfig, fit) -> EstimatingSystem:
    """Stacked estimating equations matching the estimator in ``fit``."""
    parts = _StackParts(data, cfg, fit)
    if fit.method == "unadj":
        return _system_means(parts, with_e=False)
    if fit.method == "x-ps":
        return _system_means(parts, with_e=True)
    if fit.method == "x-reg":
        return _system_interacted(parts, with_e=False)
    if fit.method == "dr":
        return _system_interacted(parts, with_e=True)
    raise ValueError(f"no estimating system for method {fit.method!r}")


def _system_means(parts, with_e):
    """Stack for the Hajek-mean estimators (unadjusted and double-weighted)."""
    kb = parts.beta.shape[0] if parts.estimate_p else 0
    ka = parts.alpha.shape[0] if with_e and parts.estimate_e else 0
    labels = ["mu1", "mu0"]
    labels += [f"beta{j}" for j in range(kb)]
    labels += [f"alpha{j}" for j in range(ka)]
    d = len(labels)
    theta = np.concatenate(
        [
            [parts.mu1_hat, parts.mu0_hat],
            parts.beta if kb else np.empty(0),
            parts.alpha if ka else np.empty(0),
        ]
    )
    z, r, yf, n = parts.z, parts.r, parts.yf, parts.n
    sl_b = slice(2, 2 + kb)
    sl_a = slice(2 + kb, 2 + kb + ka)

    def unpack(theta):
        # saturated nuisance fits can hit p or e of exactly 0/1; the caller
        # detects the resulting non-finite values and reports a degenerate
        # sandwich rather than warning here
        mu1, mu0 = theta[0], theta[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            p = parts.p_of(theta[sl_b])
            if with_e:
                e = parts.e_of(theta[sl_a])
                w1 = r / p * z / e
                w0 = r / p * (1.0 - z) / (1.0 - e)
            else:
                e = None
                w1 = z * r / p
                w0 = (1.0 - z) * r / p
        return mu1, mu0, p, e, w1, w0

    def psi(theta):
        mu1, mu0, p, e, w1, w0 = unpack(theta)
        out = np.empty((n, d))
        out[:, 0] = w1 * (yf - mu1)
        out[:, 1] = w0 * (yf - mu0)
        if kb:
            out[:, sl_b] = parts.u * (r - p)[:, None]
        if ka:
            out[:, sl_a] = parts.xe * (z - e)[:, None]
        return out

    def a_matrix(theta):
        mu1, mu0, p, e, w1, w0 = unpack(theta)
        a = np.zeros((d, d))
        a[0, 0] = np.mean(w1)
        a[1, 1] = np.mean(w0)
        if kb:
            a[0, sl_b] = np.mean(
                (w1 * (1.0 - p) * (yf - mu1))[:, None] * parts.u, axis=0
            )
            a[1, sl_b] = np.mean(
                (w0 * (1.0 - p) * (yf - mu0))[:, None] * parts.u, axis=0
            )
            a[sl_b, sl_b] = _mean_outer(p * (1.0 - p), parts.u, parts.u)
        if ka:
            a[0, sl_a] = np.mean(
                (w1 * (1.0 - e) * (yf - mu1))[:, None] * parts.xe, axis=0
            )
            a[1, sl_a] = -np.mean(
                (w0 * e * (yf - mu0))[:, None] * parts.xe, axis=0
            )
            a[sl_a, sl_a] = _mean_outer(e * (1.0 - e), parts.xe, parts.xe)
        return a

    contrast = np.zeros(d)
    contrast[0], contrast[1] = 1.0, -1.0
    return EstimatingSystem(
        theta=theta, labels=tuple(labels), contrast=contrast, psi=psi, a_matrix=a_matrix
    )


def _system_interacted(parts, with_e):
    """Stack for the interacted-regression estimators (x-reg and dr)."""
    q = parts.x_adj.shape[1]
    kb = parts.beta.shape[0] if parts.estimate_p else 0
    ka = parts.alpha.shape[0] if with_e and parts.estimate_e else 0
    labels = (
        ["mu1"]
        + [f"gamma1_{j}" for j in range(q)]
        + ["mu0"]
        + [f"gamma0_{j}" for j in range(q)]
        + [f"mux{j}" for j in range(q)]
        + [f"beta{j}" for j in range(kb)]
        + [f"alpha{j}" for j in range(ka)]
    )
    d = len(labels)
    i_mu1 = 0
    sl_g1 = slice(1, 1 + q)
    i_mu0 = 1 + q
    sl_g0 = slice(2 + q, 2 + 2 * q)
    sl_mx = slice(2 + 2 * q, 2 + 3 * q)
    sl_b = slice(2 + 3 * q, 2 + 3 * q + kb)
    sl_a = slice(2 + 3 * q + kb, d)
    theta = np.concatenate(
        [
            [parts.mu1_hat],
            parts.gamma1_hat,
            [parts.mu0_hat],
            parts.gamma0_hat,
            parts.x_adj.mean(axis=0) if q else np.empty(0),
            parts.beta if kb else np.empty(0),
            parts.alpha if ka else np.empty(0),
        ]
    )
    z, r, yf, n = parts.z, parts.r, parts.yf, parts.n

    def unpack(theta):
        mu1, mu0 = theta[i_mu1], theta[i_mu0]
        g1, g0, mux = theta[sl_g1], theta[sl_g0], theta[sl_mx]
        xc = parts.x_adj - mux
        with np.errstate(divide="ignore", invalid="ignore"):
            p = parts.p_of(theta[sl_b])
            if with_e:
                e = parts.e_of(theta[sl_a])
                t1 = r / p * z / e
                t0 = r / p * (1.0 - z) / (1.0 - e)
            else:
                e = None
                t1 = z * r / p
                t0 = (1.0 - z) * r / p
        resid1 = yf - xc @ g1 - mu1
        resid0 = yf - xc @ g0 - mu0
        dmat = np.column_stack([np.ones(n), xc])
        return mu1, mu0, g1, g0, xc, p, e, t1, t0, resid1, resid0, dmat

    def psi(theta):
        _, _, _, _, xc, p, e, t1, t0, resid1, resid0, dmat = unpack(theta)
        out = np.empty((n, d))
        out[:, i_mu1 : 1 + q] = (t1 * resid1)[:, None] * dmat
        out[:, i_mu0 : 2 + 2 * q] = (t0 * resid0)[:, None] * dmat
        out[:, sl_mx] = xc
        if kb:
            out[:, sl_b] = parts.u * (r - p)[:, None]
        if ka:
            out[:, sl_a] = parts.xe * (z - e)[:, None]
        return out

    def a_matrix(theta):
        _, _, g1, g0, xc, p, e, t1, t0, resid1, resid0, dmat = unpack(theta)
        a = np.zeros((d, d))
        arms = (
            (slice(i_mu1, 1 + q), t1, resid1, g1, 1.0),
            (slice(i_mu0, 2 + 2 * q), t0, resid0, g0, -1.0),
        )
        for block, t, resid, g, arm_sign in arms:
            a[block, block] = _mean_outer(t, dmat, dmat)
            if q:
                # derivative of the moment w.r.t. the centering point
                blk = np.zeros((1 + q, q))
                blk[0, :] = -np.mean(t) * g
                blk[1:, :] = -np.outer(
                    np.mean(t[:, None] * xc, axis=0), g
                ) + np.mean(t * resid) * np.eye(q)
                a[block, sl_mx] = blk
            if kb:
                a[block, sl_b] = _mean_outer(t * (1.0 - p) * resid, dmat, parts.u)
            if ka:
                scale = (1.0 - e) if arm_sign > 0 else e
                a[block, sl_a] = arm_sign * _mean_outer(
                    t * scale * resid, dmat, parts.xe
                )
        if q:
            a[sl_mx, sl_mx] = np.eye(q)
        if kb:
            a[sl_b, sl_b] = _mean_outer(p * (1.0 - p), parts.u, parts.u)
        if ka:
            a[sl_a, sl_a] = _mean_outer(e * (1.0 - e), parts.xe, parts.xe)
        return a

    contrast = np.zeros(d)
    contrast[i_mu1], contrast[i_mu0] = 1.0, -1.0
    return EstimatingSystem(
        theta=theta, labels=tuple(labels), contrast=contrast, psi=psi, a_matrix=a_matrix
    )


def sandwich_variance(data, cfg, fit) -> VarianceReport:
    """Empirical sandwich variance of tau-hat from the stacked equations."""
    system = build_system(data, cfg, fit)
    n = data.n
    psi_hat = system.psi(system.theta)
    if not np.all(np.isfinite(psi_hat)):
        raise SingularBreadError(
            "estimating functions are non-finite at the fit (boundary nuisance fit)"
        )
    mean_psi = float(np.max(np.abs(psi_hat.mean(axis=0)))) if psi_hat.size else 0.0
    bread = system.a_matrix(system.theta)
    meat = psi_hat.T @ psi_hat / n
    if not np.all(np.isfinite(bread)):
        raise SingularBreadError("bread matrix contains non-finite entries")
    d = bread.shape[0]
    if d and 1.0 / np.linalg.cond(bread) < BREAD_RCOND:
        raise SingularBreadError("bread matrix is rank-deficient")
    inner = np.linalg.solve(bread, meat)
    cov = np.linalg.solve(bread, inner.T).T
    tau_var = float(system.contrast @ cov @ system.contrast) / n
    tau_var = max(tau_var, 0.0)
    se = float(np.sqrt(tau_var))
    ci = (fit.tau_hat - Z975 * se, fit.tau_hat + Z975 * se)
    return VarianceReport(
        method="sandwich",
        tau_variance=tau_var,
        se=se,
        ci95=ci,
        extras={"theta_labels": system.labels, "mean_psi_inf_norm": mean_psi},
    )


def bootstrap_variance(data, cfg, b, seed, *, index_sampler=None, **hooks) -> VarianceReport:
    """Nonparametric unit-level bootstrap, refitting everything per replicate.

    Replicates where an arm degenerates or a fit fails are dropped and
    counted; more than 10% dropped raises TooManyFailuresError.
    """
    if b < 2:
        raise ValueError("bootstrap needs at least 2 replications")
    point = estimate(data, cfg, **hooks)
    n = data.n
    taus = []
    failures = 0
    for rep in range(b):
        if index_sampler is not None:
            idx = np.asarray(index_sampler(rep))
        else:
            idx = _rng_from_key(seed, 90, rep).integers(0, n, size=n)
        try:
            taus.append(estimate(data.take(idx), cfg, **hooks).tau_hat)
        except (DoubleweightError, np.linalg.LinAlgError):
            failures += 1
    if failures > 0.1 * b:
        raise TooManyFailuresError(f"{failures} of {b} bootstrap replicates failed")
    taus = np.asarray(taus)
    var = float(np.var(taus, ddof=1))
    se = float(np.sqrt(var))
    ci = (point.tau_hat - Z975 * se, point.tau_hat + Z975 * se)
    return VarianceReport(
        method="bootstrap",
        tau_variance=var,
        se=se,
        ci95=ci,
        extras={"replications": b, "failures": failures, "tau_hat": point.tau_hat},
    )


def _v_from_draws(draws, e):
    """Assemble the three asymptotic variances from one batch of oracle draws."""
    y1, y0, z, p, x, u = (
        draws["y1"],
        draws["y0"],
        draws["z"],
        draws["p"],
        draws["x_adj"],
        draws["u"],
    )
    n = y1.shape[0]
    mu1, mu0 = np.mean(y1), np.mean(y0)
    mux = x.mean(axis=0)
    xc = x - mux
    sx = xc.T @ xc / (n - 1)
    c1 = xc.T @ (y1 - mu1) / (n - 1)
    c0 = xc.T @ (y0 - mu0) / (n - 1)
    g1 = np.linalg.solve(sx, c1) if x.shape[1] else np.empty(0)
    g0 = np.linalg.solve(sx, c0) if x.shape[1] else np.empty(0)

    def v_ipw(res1, res0, m1, m0):
        b11 = np.mean(z * (res1 - m1) ** 2 / p)
        b22 = np.mean((1.0 - z) * (res0 - m0) ** 2 / p)
        b13 = np.mean((z * (1.0 - p) * (res1 - m1))[:, None] * u, axis=0)
        b23 = np.mean(((1.0 - z) * (1.0 - p) * (res0 - m0))[:, None] * u, axis=0)
        b33 = _mean_outer(p * (1.0 - p), u, u)
        dvec = b13 / e - b23 / (1.0 - e)
        # pinv so the fully observed limit (b33 -> 0, dvec -> 0) degrades to
        # a zero correction instead of a singular solve
        correction = float(dvec @ np.linalg.pinv(b33) @ dvec)
        return (
            b11 / e**2 + b22 / (1.0 - e) ** 2 - correction,
            {"b11": b11, "b22": b22, "b13": b13, "b23": b23, "b33": b33},
        )

    v_unadj, bterms = v_ipw(y1, y0, mu1, mu0)
    y1p = y1 - x @ g1
    y0p = y0 - x @ g0
    v_reg_base, bterms_prime = v_ipw(y1p, y0p, np.mean(y1p), np.mean(y0p))
    gd = g1 - g0
    v_xreg = v_reg_base + float(gd @ sx @ gd)
    gproj = g1 / e + g0 / (1.0 - e)
    var_proj = float(gproj @ sx @ gproj)
    ytilde = y1 / e + y0 / (1.0 - e)
    ct = xc.T @ (ytilde - np.mean(ytilde)) / (n - 1)
    var_proj_direct = float(ct @ np.linalg.solve(sx, ct)) if x.shape[1] else 0.0
    v_xps = v_unadj - e * (1.0 - e) * var_proj
    return {
        "v_unadj": v_unadj,
        "v_xreg": v_xreg,
        "v_xps": v_xps,
        "var_proj": var_proj,
        "var_proj_direct": var_proj_direct,
        "bterms": bterms,
        "bterms_prime": bterms_prime,
        "gamma1": g1,
        "gamma0": g0,
    }


def oracle_asymptotic_variance(dgp, n_mc, seed, n_batches=25) -> VarianceReport:
    """Monte Carlo evaluation of the population asymptotic-variance formulas.

    Needs a DGP that exposes potential outcomes and the observation
    probability analytically.  Point values use all n_mc draws; Monte Carlo
    standard errors come from batch means over ``n_batches`` splits.
    """
    from .simulation import population_draws

    draws = population_draws(dgp, n_mc, (seed, 77))
    e = dgp.e
    full = _v_from_draws(draws, e)
    batch_vals = {"v_unadj": [], "v_xreg": [], "v_xps": []}
    edges = np.linspace(0, n_mc, n_batches + 1).astype(int)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sub = {k: v[lo:hi] for k, v in draws.items()}
        got = _v_from_draws(sub, e)
        for k in batch_vals:
            batch_vals[k].append(got[k])
    mc_se = {
        k: float(np.std(np.asarray(v), ddof=1) / np.sqrt(n_batches))
        for k, v in batch_vals.items()
    }
    return VarianceReport(
        method="oracle",
        tau_variance=full["v_unadj"],
        se=mc_se["v_unadj"],
        ci95=None,
        extras={
            "v": {
                "unadj": full["v_unadj"],
                "x-reg": full["v_xreg"],
                "x-ps": full["v_xps"],
            },
            "mc_se": {
                "unadj": mc_se["v_unadj"],
                "x-reg": mc_se["v_xreg"],
                "x-ps": mc_se["v_xps"],
            },
            "var_proj": full["var_proj"],
            "var_proj_direct": full["var_proj_direct"],
            "bterms": full["bterms"],
            "bterms_prime": full["bterms_prime"],
            "n_mc": n_mc,
            "n_batches": n_batches,
        },
    )
