"""Data-generating processes and the replication harness.

Every random draw comes from a named substream keyed by
(seed..., replication, role), so covariates, assignment, masks, and noise
are reproducible independently of evaluation order or worker count.
"""

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Dataset
from .estimators import estimate
from .exceptions import DoubleweightError
from .missing import PartialCovariates
from .variance import bootstrap_variance, sandwich_variance

DGP_NAMES = ("sinusoidal", "latent-class", "custom")

# Substream roles
ROLE_CLASS = 1
ROLE_COVARIATES = 2
ROLE_PARTIAL = 3
ROLE_COVARIATE_MASK = 4
ROLE_ASSIGNMENT = 5
ROLE_OUTCOME_NOISE = 6
ROLE_OUTCOME_MASK = 7

SINUSOIDAL_TRUE_TAU = float(np.sin(10.0) / 10.0)
LATENT_CLASS_TRUE_TAU = 8.0


def stream(seed, *key):
    """Independent generator for (seed..., key...)."""
    base = seed if isinstance(seed, tuple) else (seed,)
    return np.random.default_rng(np.random.SeedSequence(tuple(base) + key))


@dataclass(frozen=True)
class DgpSpec:
    """A named data-generating process and its sampling configuration."""

    name: str
    n: int
    e: float
    parameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.name not in DGP_NAMES:
            raise ValueError(f"unknown DGP {self.name!r}; expected one of {DGP_NAMES}")
        if not 0.0 < self.e < 1.0:
            raise ValueError("treatment probability e must lie in (0, 1)")
        if self.n < 2:
            raise ValueError("n must be at least 2")


def _sinusoidal_arrays(n, e, seed, full_data=False):
    x = stream(seed, ROLE_COVARIATES).uniform(-10.0, 10.0, size=n)
    z = (stream(seed, ROLE_ASSIGNMENT).random(n) < e).astype(np.int8)
    p = expit(1.0 + 2.0 * x)
    if full_data:
        p = np.ones(n)
        r = np.ones(n, dtype=np.int8)
    else:
        r = (stream(seed, ROLE_OUTCOME_MASK).random(n) < p).astype(np.int8)
    y1 = np.sin(x)
    y0 = -np.cos(x)
    return x, z, p, r, y1, y0


def sample_sinusoidal(n, e, seed, full_data=False):
    """One fully observed covariate, deterministic potential outcomes.

    Outcomes are masked with probability 1 - p(x) where p is logistic in x;
    the left tail of the covariate range is almost never observed.
    """
    x, z, p, r, y1, y0 = _sinusoidal_arrays(n, e, seed, full_data)
    y = np.where(z == 1, y1, y0)
    ds = Dataset(
        y=np.where(r == 1, y, 0.0),
        r_y=r,
        z=z,
        covariates=PartialCovariates(
            fully_observed=x[:, None],
            partial=np.empty((n, 0)),
            observed_mask=np.empty((n, 0), dtype=np.int8),
            x_labels=("x",),
        ),
    )
    oracle = {"y1": y1, "y0": y0, "p": p}
    return ds, SINUSOIDAL_TRUE_TAU, oracle


_LC_DEFAULTS = {
    "k": 9,
    "class_prob": 0.4,
    "obs_rate_ill": 0.5,
    "obs_rate_well": 0.95,
    "gamma": {(1, 1): 1.0, (0, 1): -1.0, (1, 0): 0.5, (0, 0): -0.5},
}


def _latent_class_arrays(n, e, seed, params=None):
    cfg = dict(_LC_DEFAULTS, **(params or {}))
    k = cfg["k"]
    xi = (stream(seed, ROLE_CLASS).random(n) < cfg["class_prob"]).astype(np.int8)
    x = stream(seed, ROLE_COVARIATES).normal(0.0, 1.0, size=n) + xi
    w = stream(seed, ROLE_PARTIAL).normal(0.0, 1.0, size=(n, k)) + xi[:, None]
    obs_rate = cfg["obs_rate_ill"] * xi + cfg["obs_rate_well"] * (1 - xi)
    mask = (
        stream(seed, ROLE_COVARIATE_MASK).random((n, k)) < obs_rate[:, None]
    ).astype(np.int8)
    z = (stream(seed, ROLE_ASSIGNMENT).random(n) < e).astype(np.int8)
    p = expit(1.0 + 2.0 * x)
    r = (stream(seed, ROLE_OUTCOME_MASK).random(n) < p).astype(np.int8)
    gam = cfg["gamma"]
    g1 = np.where(xi == 1, gam[(1, 1)], gam[(1, 0)])
    g0 = np.where(xi == 1, gam[(0, 1)], gam[(0, 0)])
    total = x + w.sum(axis=1)
    bonus = 3.0 * xi + 3.0 * mask.sum(axis=1)
    eps = stream(seed, ROLE_OUTCOME_NOISE).normal(0.0, 1.0, size=(n, 2))
    y1 = bonus + total * g1 + eps[:, 0]
    y0 = bonus + total * g0 + eps[:, 1]
    return xi, x, w, mask, z, p, r, y1, y0


def sample_latent_class(n=500, e=0.2, seed=0, params=None):
    """Two latent classes; the sicker class is missing covariates more often.

    Nine partially observed covariates are missing not at random through the
    class label, and outcomes are missing at random given the fully observed
    covariate.
    """
    xi, x, w, mask, z, p, r, y1, y0 = _latent_class_arrays(n, e, seed, params)
    y = np.where(z == 1, y1, y0)
    ds = Dataset(
        y=np.where(r == 1, y, 0.0),
        r_y=r,
        z=z,
        covariates=PartialCovariates(
            fully_observed=x[:, None],
            partial=np.nan_to_num(w) * mask,  # masked cells nulled on entry
            observed_mask=mask,
            x_labels=("x",),
        ),
    )
    oracle = {"y1": y1, "y0": y0, "p": p, "xi": xi, "w": w, "mask": mask}
    return ds, LATENT_CLASS_TRUE_TAU, oracle


def sample_dgp(dgp: DgpSpec, seed):
    """Draw one dataset from the named DGP under the given seed key."""
    if dgp.name == "sinusoidal":
        return sample_sinusoidal(
            dgp.n, dgp.e, seed, full_data=dgp.parameters.get("full_data", False)
        )
    if dgp.name == "latent-class":
        return sample_latent_class(dgp.n, dgp.e, seed, params=dgp.parameters or None)
    sampler = dgp.parameters.get("sampler")
    if sampler is None:
        raise ValueError("custom DGP requires a 'sampler' entry in parameters")
    return sampler(dgp.n, dgp.e, seed)


def _pmodel_regressors(x_adj, z, form):
    n = x_adj.shape[0]
    zf = z.astype(np.float64)
    blocks = [np.ones((n, 1))]
    if form in ("interacted", "additive", "covariates-only"):
        blocks.append(x_adj)
    if form in ("interacted", "additive"):
        blocks.append(zf[:, None])
    if form == "interacted":
        blocks.append(x_adj * zf[:, None])
    return np.hstack(blocks)


def population_draws(dgp: DgpSpec, n, seed, pmodel_design="interacted"):
    """Fresh population-level draws exposing the DGP internals.

    Returns potential outcomes, the true observation probability, the
    adjustment covariates, and the observation-model regressors, for use by
    the asymptotic-variance oracle.
    """
    if dgp.name == "sinusoidal":
        x, z, p, _, y1, y0 = _sinusoidal_arrays(
            n, dgp.e, seed, full_data=dgp.parameters.get("full_data", False)
        )
        x_adj = x[:, None]
    elif dgp.name == "latent-class":
        _, x, w, mask, z, p, _, y1, y0 = _latent_class_arrays(
            n, dgp.e, seed, params=dgp.parameters or None
        )
        x_adj = np.hstack([x[:, None], np.nan_to_num(w) * mask, mask.astype(float)])
    else:
        draws_fn = dgp.parameters.get("population")
        if draws_fn is None:
            raise ValueError("custom DGP requires a 'population' entry in parameters")
        return draws_fn(n, dgp.e, seed)
    return {
        "y1": y1,
        "y0": y0,
        "z": z.astype(np.float64),
        "p": p,
        "x_adj": x_adj,
        "u": _pmodel_regressors(x_adj, z, pmodel_design),
    }


@dataclass
class EstimatorSummary:
    """Replication-level summary for one estimator."""

    label: str
    reps_ok: int
    failures: int
    variance_failures: int = 0
    mean_bias: float = None
    empirical_variance: float = None
    mean_sandwich_variance: float = None
    mean_bootstrap_variance: float = None
    coverage: float = None


@dataclass
class McSummary:
    """Full Monte Carlo result: per-estimator summaries plus raw draws."""

    dgp: str
    n: int
    e: float
    reps: int
    seed: int
    true_tau: float
    estimators: dict
    tau_hats: np.ndarray  # reps x n_estimators, NaN on failure
    sandwich_variances: np.ndarray
    bootstrap_variances: np.ndarray = None
    labels: tuple = ()


def _run_rep(args):
    dgp, configs, seed, rep, with_bootstrap = args
    ds, true_tau, _ = sample_dgp(dgp, (seed, rep))
    m = len(configs)
    taus = np.full(m, np.nan)
    svars = np.full(m, np.nan)
    bvars = np.full(m, np.nan)
    covered = np.full(m, np.nan)
    fail = [""] * m
    for j, cfg in enumerate(configs):
        try:
            fit = estimate(ds, cfg)
            taus[j] = fit.tau_hat
        except (DoubleweightError, np.linalg.LinAlgError) as exc:
            fail[j] = type(exc).__name__
            continue
        # A valid point estimate is kept even when its variance machinery
        # degenerates (e.g. quasi-separated nuisance fit).
        try:
            rep_var = sandwich_variance(ds, cfg, fit)
            svars[j] = rep_var.tau_variance
            covered[j] = float(rep_var.ci95[0] <= true_tau <= rep_var.ci95[1])
        except (DoubleweightError, np.linalg.LinAlgError) as exc:
            fail[j] = type(exc).__name__
        if with_bootstrap:
            try:
                bvars[j] = bootstrap_variance(
                    ds, cfg, with_bootstrap, (seed, rep, 91)
                ).tau_variance
            except (DoubleweightError, np.linalg.LinAlgError) as exc:
                fail[j] = type(exc).__name__
    return taus, svars, bvars, covered, fail, true_tau


def run_monte_carlo(
    dgp: DgpSpec,
    estimators,
    reps,
    seed,
    with_bootstrap=None,
    workers=1,
) -> McSummary:
    """Replicate sample -> estimate -> variance and summarize.

    Deterministic for a fixed seed regardless of ``workers``: every
    replication derives its own substreams from (seed, rep), and summaries
    reduce arrays ordered by replication index.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    configs = list(estimators)
    args = [(dgp, configs, seed, rep, with_bootstrap) for rep in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_rep, args, chunksize=max(1, reps // (4 * workers))))
    else:
        results = [_run_rep(a) for a in args]

    m = len(configs)
    taus = np.vstack([r[0] for r in results])
    svars = np.vstack([r[1] for r in results])
    bvars = np.vstack([r[2] for r in results])
    covered = np.vstack([r[3] for r in results])
    fails = [r[4] for r in results]
    true_tau = results[0][5]

    if not np.any(np.isfinite(taus)):
        raise DoubleweightError("every replication failed for every estimator")

    summaries = {}
    labels = tuple(cfg.label for cfg in configs)
    for j, cfg in enumerate(configs):
        ok = np.isfinite(taus[:, j])
        var_ok = np.isfinite(svars[:, j])
        n_ok = int(np.sum(ok))
        s = EstimatorSummary(
            label=cfg.label,
            reps_ok=n_ok,
            failures=int(reps - n_ok),
            variance_failures=int(np.sum(ok & ~var_ok)),
        )
        if n_ok:
            t = taus[ok, j]
            s.mean_bias = float(np.mean(t) - true_tau)
            s.empirical_variance = float(np.var(t, ddof=1)) if n_ok > 1 else None
            if np.any(var_ok):
                s.mean_sandwich_variance = float(np.mean(svars[var_ok, j]))
                s.coverage = float(np.mean(covered[var_ok, j]))
            if with_bootstrap:
                b_ok = np.isfinite(bvars[:, j])
                if np.any(b_ok):
                    s.mean_bootstrap_variance = float(np.mean(bvars[b_ok, j]))
        summaries[cfg.label] = s
    return McSummary(
        dgp=dgp.name,
        n=dgp.n,
        e=dgp.e,
        reps=reps,
        seed=seed,
        true_tau=true_tau,
        estimators=summaries,
        tau_hats=taus,
        sandwich_variances=svars,
        bootstrap_variances=bvars if with_bootstrap else None,
        labels=labels,
    )


def paired_variance_gap(dev_a, dev_b):
    """Empirical var(a) - var(b) and its paired Monte Carlo standard error.

    Per-replication squared deviations from the respective means are paired,
    so the standard error accounts for the correlation between estimators
    computed on the same datasets.
    """
    a = np.asarray(dev_a, dtype=np.float64)
    b = np.asarray(dev_b, dtype=np.float64)
    sq = (a - a.mean()) ** 2 - (b - b.mean()) ** 2
    gap = float(np.var(a, ddof=1) - np.var(b, ddof=1))
    se = float(np.std(sq, ddof=1) / np.sqrt(sq.shape[0]))
    return gap, se


def summary_to_dict(summary: McSummary):
    out = {
        "dgp": summary.dgp,
        "n": summary.n,
        "e": summary.e,
        "reps": summary.reps,
        "seed": summary.seed,
        "true_tau": summary.true_tau,
        "estimators": {},
    }
    for label, s in summary.estimators.items():
        out["estimators"][label] = {
            "reps_ok": s.reps_ok,
            "failures": s.failures,
            "variance_failures": s.variance_failures,
            "mean_bias": s.mean_bias,
            "empirical_variance": s.empirical_variance,
            "mean_sandwich_variance": s.mean_sandwich_variance,
            "mean_bootstrap_variance": s.mean_bootstrap_variance,
            "coverage": s.coverage,
        }
    return out


def write_summary_json(summary: McSummary, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary_to_dict(summary), f, indent=2, sort_keys=True)
        f.write("\n")


def write_replications_csv(summary: McSummary, path):
    """Per-replication deviations, one row per (rep, estimator)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["rep", "estimator", "tau_hat", "se_sandwich"])
        for rep in range(summary.reps):
            for j, label in enumerate(summary.labels):
                tau = summary.tau_hats[rep, j]
                if not np.isfinite(tau):
                    continue
                svar = summary.sandwich_variances[rep, j]
                se = repr(float(np.sqrt(svar))) if np.isfinite(svar) else ""
                writer.writerow([rep, label, repr(float(tau)), se])
