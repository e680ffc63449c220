"""Biomarker statistics: accuracy metrics, brain-PAD, age correction,
twin ACE/AE/E variance decomposition with AIC selection, and ICC(2,1)
reliability with 95% confidence intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize
from scipy.stats import f as f_dist

from .errors import NumericError, ValidationError

_LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PredictionRecord:
    subject_id: str
    chronological_age: float
    predicted_age: float
    brain_pad: float | None = None
    site: str | None = None
    session: int | None = None


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    pearson_r: float
    r_squared: float
    r_defined: bool = True


@dataclass(frozen=True)
class TwinPair:
    phenotype_1: float
    phenotype_2: float
    zygosity: str  # "MZ" or "DZ"

    def __post_init__(self):
        if self.zygosity not in ("MZ", "DZ"):
            raise ValidationError(f"zygosity must be MZ or DZ, got {self.zygosity!r}")
        if not (np.isfinite(self.phenotype_1) and np.isfinite(self.phenotype_2)):
            raise ValidationError("twin phenotypes must be finite")


@dataclass(frozen=True)
class AceFit:
    model: str  # "ACE", "AE" or "E"
    a2: float
    c2: float
    e2: float
    mean: float
    log_likelihood: float
    aic: float
    h2: float | None
    h2_se: float | None = None
    boundary: bool = False


@dataclass(frozen=True)
class IccResult:
    icc: float
    ci_low: float
    ci_high: float
    n_targets: int
    n_raters: int
    defined: bool = True


def compute_metrics(predicted, actual) -> MetricsReport:
    """MAE, RMSE, Pearson r and R^2 = r^2 (the headline convention).

    A constant actual vector leaves r undefined; the report flags it and
    still carries MAE/RMSE.
    """
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    if p.size != a.size:
        raise ValidationError(f"length mismatch: {p.size} vs {a.size}")
    if p.size < 2:
        raise ValidationError("need at least 2 predictions")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(a))):
        raise ValidationError("non-finite values in predictions or ages")

    diff = p - a
    mae = float(np.mean(np.abs(diff)))
    rmse = float(np.sqrt(np.mean(diff ** 2)))

    sa = a - a.mean()
    sp = p - p.mean()
    denom = np.sqrt((sa ** 2).sum() * (sp ** 2).sum())
    if denom == 0.0:
        return MetricsReport(mae, rmse, float("nan"), float("nan"), r_defined=False)
    r = float((sa * sp).sum() / denom)
    return MetricsReport(mae, rmse, r, r * r)


def brain_pad(records: list[PredictionRecord]) -> list[PredictionRecord]:
    """Fill brain_pad = predicted_age - chronological_age on every record."""
    return [
        replace(rec, brain_pad=rec.predicted_age - rec.chronological_age)
        for rec in records
    ]


def age_correct(scores, ages) -> np.ndarray:
    """OLS residuals of scores regressed on [1, age]."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    a = np.asarray(ages, dtype=np.float64).reshape(-1)
    if s.size != a.size:
        raise ValidationError(f"length mismatch: {s.size} vs {a.size}")
    if s.size < 3:
        raise ValidationError("age correction needs at least 3 scores")
    if np.ptp(a) == 0.0:
        raise ValidationError("ages are constant; age correction undefined")
    design = np.column_stack([np.ones_like(a), a])
    beta, *_ = np.linalg.lstsq(design, s, rcond=None)
    return s - design @ beta


# ---------------------------------------------------------------------------
# twin ACE / AE / E maximum likelihood


@dataclass(frozen=True)
class _SuffStats:
    """Per-zygosity sufficient statistics: the bivariate-normal likelihood
    with exchangeable twins depends on the data only through these."""

    n: int
    s1: float  # sum of (p1 + p2)
    s2: float  # sum of (p1^2 + p2^2)
    s12: float  # sum of p1*p2


def _suff_stats(pairs: list[TwinPair]):
    groups = {}
    for zyg in ("MZ", "DZ"):
        p = np.array(
            [(t.phenotype_1, t.phenotype_2) for t in pairs if t.zygosity == zyg],
            dtype=np.float64,
        ).reshape(-1, 2)
        groups[zyg] = _SuffStats(
            n=p.shape[0],
            s1=float(p.sum()),
            s2=float((p ** 2).sum()),
            s12=float((p[:, 0] * p[:, 1]).sum()) if p.size else 0.0,
        )
    return groups


def _group_loglik(st: _SuffStats, mu: float, v: float, c: float) -> float:
    if st.n == 0:
        return 0.0
    det = v * v - c * c
    if det <= 0.0 or v <= 0.0:
        return -np.inf
    sq = st.s2 - 2.0 * mu * st.s1 + 2.0 * st.n * mu * mu
    cross = st.s12 - mu * st.s1 + st.n * mu * mu
    quad = (v * sq - 2.0 * c * cross) / det
    return -st.n * _LOG2PI - 0.5 * st.n * np.log(det) - 0.5 * quad


def _model_components(model: str):
    if model not in ("ACE", "AE", "E"):
        raise ValidationError(f"unknown variance model {model!r}")
    return model  # letters double as the component list


def _loglik(model: str, theta: np.ndarray, stats) -> float:
    mu = theta[0]
    comps = dict(zip(model, np.exp(theta[1:])))
    a2 = comps.get("A", 0.0)
    c2 = comps.get("C", 0.0)
    e2 = comps["E"]
    v = a2 + c2 + e2
    return _group_loglik(stats["MZ"], mu, v, a2 + c2) + _group_loglik(
        stats["DZ"], mu, v, 0.5 * a2 + c2
    )


def _moment_inits(pairs: list[TwinPair]):
    """Grand mean, pooled variance and Falconer-style component guesses."""
    allp = np.array(
        [(t.phenotype_1, t.phenotype_2) for t in pairs], dtype=np.float64
    )
    mu0 = float(allp.mean())
    v0 = float(allp.var())
    v0 = max(v0, 1e-8)

    def _icc(zyg):
        p = np.array(
            [(t.phenotype_1, t.phenotype_2) for t in pairs if t.zygosity == zyg]
        )
        if p.shape[0] < 2:
            return 0.0
        centered = p - allp.mean()
        denom = (centered ** 2).sum()
        if denom == 0:
            return 0.0
        return float(2.0 * (centered[:, 0] * centered[:, 1]).sum() / denom)

    r_mz, r_dz = _icc("MZ"), _icc("DZ")
    a2 = np.clip(2.0 * (r_mz - r_dz) * v0, 1e-3 * v0, v0)
    c2 = np.clip((2.0 * r_dz - r_mz) * v0, 1e-3 * v0, v0)
    e2 = np.clip(v0 - a2 - c2, 1e-3 * v0, v0)
    return mu0, v0, float(a2), float(c2), float(e2)


def _starts_for(model: str, pairs: list[TwinPair]):
    mu0, v0, a2f, c2f, e2f = _moment_inits(pairs)
    splits = [
        (a2f, c2f, e2f),
        (v0 / 3.0, v0 / 3.0, v0 / 3.0),
        (0.8 * v0, 0.1 * v0, 0.1 * v0),
        (0.1 * v0, 0.1 * v0, 0.8 * v0),
        (0.1 * v0, 0.8 * v0, 0.1 * v0),
    ]
    starts = []
    for a2, c2, e2 in splits:
        comps = {"A": a2, "C": c2, "E": e2}
        # fold dropped components into E so every start has variance ~= v0
        folded = sum(val for key, val in comps.items() if key not in model)
        comps["E"] += folded
        theta = [mu0] + [np.log(max(comps[key], 1e-6 * v0)) for key in model]
        starts.append(np.array(theta))
    # the same split can collapse to one start after folding; dedupe
    unique = []
    for s in starts:
        if not any(np.allclose(s, u) for u in unique):
            unique.append(s)
    return unique


_LOG_PINNED = -60.0  # exp() ~ 1e-26: numerically zero variance component


def _embed_solution(model: str, fit: AceFit) -> np.ndarray:
    """Express a smaller model's solution in a larger model's coordinates."""
    comps = {"A": fit.a2, "C": fit.c2, "E": fit.e2}
    theta = [fit.mean]
    for key in model:
        val = comps.get(key, 0.0)
        theta.append(np.log(val) if val > 0 else _LOG_PINNED)
    return np.array(theta)


def fit_variance_model(pairs: list[TwinPair], model: str,
                       h2_se_bootstrap: int = 1000, seed: int = 0) -> AceFit:
    """Maximum-likelihood ACE / AE / E fit over twin pairs.

    Nelder-Mead over (mean, log components) from 5 deterministic moment-
    based starts; nested submodel solutions are added as extra starts so
    log-likelihoods nest properly. For AE fits the h2 standard error comes
    from a stratified pair bootstrap (h2_se_bootstrap resamples; 0 skips).
    """
    model = _model_components(model)
    n_mz = sum(1 for t in pairs if t.zygosity == "MZ")
    n_dz = sum(1 for t in pairs if t.zygosity == "DZ")
    if model in ("ACE", "AE") and (n_mz < 2 or n_dz < 2):
        raise ValidationError(
            f"{model} needs >= 2 MZ and >= 2 DZ pairs, got {n_mz} MZ / {n_dz} DZ"
        )
    if len(pairs) < 2:
        raise ValidationError("need at least 2 twin pairs")

    stats = _suff_stats(pairs)
    starts = _starts_for(model, pairs)
    if model == "AE":
        starts.append(_embed_solution("AE", _fit_from_stats(pairs, stats, "E")))
    elif model == "ACE":
        starts.append(
            _embed_solution("ACE", _fit_from_stats(pairs, stats, "AE"))
        )

    fit = _maximize(model, stats, starts, len(pairs))
    if model == "AE" and h2_se_bootstrap > 0:
        fit = replace(
            fit, h2_se=bootstrap_h2_se(pairs, n_boot=h2_se_bootstrap, seed=seed,
                                       warm_start=fit)
        )
    return fit


def _fit_from_stats(pairs, stats, model: str) -> AceFit:
    starts = _starts_for(model, pairs)
    if model == "AE":
        starts.append(_embed_solution("AE", _fit_from_stats(pairs, stats, "E")))
    return _maximize(model, stats, starts, len(pairs))


def _maximize(model: str, stats, starts, n_pairs: int) -> AceFit:
    def negloglik(theta):
        value = _loglik(model, theta, stats)
        return -value if np.isfinite(value) else 1e300

    best = None
    any_converged = False
    for theta0 in starts:
        res = optimize.minimize(
            negloglik,
            theta0,
            method="Nelder-Mead",
            options={"fatol": 1e-9, "xatol": 1e-8, "maxiter": 4000},
        )
        any_converged = any_converged or bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not any_converged:
        raise NumericError(
            f"{model} fit did not converge from any of {len(starts)} starts "
            f"(best objective {best.fun if best else 'n/a'})"
        )

    theta = best.x
    comps = dict(zip(model, np.exp(theta[1:])))
    a2 = float(comps.get("A", 0.0))
    c2 = float(comps.get("C", 0.0))
    e2 = float(comps["E"])
    loglik = float(-best.fun)
    k = 1 + len(model)  # mean + retained components
    aic = 2.0 * k - 2.0 * loglik
    if model == "AE":
        h2 = a2 / (a2 + e2)
    elif model == "E":
        h2 = 0.0
    else:
        h2 = None
    return AceFit(
        model=model,
        a2=a2,
        c2=c2,
        e2=e2,
        mean=float(theta[0]),
        log_likelihood=loglik,
        aic=float(aic),
        h2=h2,
        boundary=bool(e2 < 1e-8),
    )


def bootstrap_h2_se(pairs: list[TwinPair], n_boot: int = 1000, seed: int = 0,
                    warm_start: AceFit | None = None) -> float:
    """Stratified pair bootstrap SE of the AE-model h2 (resamples MZ and DZ
    pairs separately, refits AE warm-started at the point estimate)."""
    mz = [t for t in pairs if t.zygosity == "MZ"]
    dz = [t for t in pairs if t.zygosity == "DZ"]
    if warm_start is None:
        warm_start = fit_variance_model(pairs, "AE", h2_se_bootstrap=0)
    theta0 = _embed_solution("AE", warm_start)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    h2s = np.empty(n_boot)
    for b in range(n_boot):
        take_mz = rng.integers(0, len(mz), len(mz))
        take_dz = rng.integers(0, len(dz), len(dz))
        resampled = [mz[i] for i in take_mz] + [dz[i] for i in take_dz]
        stats = _suff_stats(resampled)

        def negloglik(theta):
            value = _loglik("AE", theta, stats)
            return -value if np.isfinite(value) else 1e300

        res = optimize.minimize(
            negloglik, theta0, method="Nelder-Mead",
            options={"fatol": 1e-8, "xatol": 1e-7, "maxiter": 2000},
        )
        a2, e2 = np.exp(res.x[1]), np.exp(res.x[2])
        h2s[b] = a2 / (a2 + e2)
    return float(np.std(h2s, ddof=1))


def select_model_aic(pairs: list[TwinPair], h2_se_bootstrap: int = 1000,
                     seed: int = 0) -> AceFit:
    """Sequential AIC selection ACE -> AE -> E (E always retained)."""
    ace = fit_variance_model(pairs, "ACE", h2_se_bootstrap=0)
    ae = fit_variance_model(pairs, "AE", h2_se_bootstrap=0)
    e = fit_variance_model(pairs, "E", h2_se_bootstrap=0)
    best = ace
    if ae.aic <= best.aic:
        best = ae
    if e.aic <= best.aic:
        best = e
    if best.model == "AE" and h2_se_bootstrap > 0:
        best = replace(
            best,
            h2_se=bootstrap_h2_se(pairs, n_boot=h2_se_bootstrap, seed=seed,
                                  warm_start=best),
        )
    return best


def heritability(fit: AceFit) -> tuple[float, float | None]:
    """h2 = a2/(a2+e2); defined for the AE model only."""
    if fit.model != "AE":
        raise ValidationError(
            f"h2 is defined for AE fits; the selected model is {fit.model} "
            "(refit with model='AE' for a forced-AE estimate)"
        )
    return fit.a2 / (fit.a2 + fit.e2), fit.h2_se


# ---------------------------------------------------------------------------
# ICC(2, 1)


def icc_2_1(ratings, confidence: float = 0.95) -> IccResult:
    """Two-way random effects, absolute agreement, single measurement.

    ICC(2,1) = (BMS - EMS) / (BMS + (k-1) EMS + k (JMS - EMS) / n) with the
    Shrout-Fleiss F-based confidence interval.
    """
    x = np.asarray(ratings, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"ratings must be a 2-D matrix, got {x.shape}")
    n, k = x.shape
    if n < 3 or k < 2:
        raise ValidationError(f"need >= 3 targets and >= 2 raters, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("ratings contain non-finite values")

    grand = x.mean()
    rows = x.mean(axis=1)
    cols = x.mean(axis=0)
    bms = k * ((rows - grand) ** 2).sum() / (n - 1)
    jms = n * ((cols - grand) ** 2).sum() / (k - 1)
    resid = x - rows[:, None] - cols[None, :] + grand
    ems = (resid ** 2).sum() / ((n - 1) * (k - 1))

    if ems == 0.0 and bms == 0.0:
        return IccResult(float("nan"), float("nan"), float("nan"), n, k,
                         defined=False)

    icc = (bms - ems) / (bms + (k - 1) * ems + k * (jms - ems) / n)
    if ems == 0.0:
        # no residual variance: the interval degenerates to the point
        return IccResult(float(icc), float(icc), float(icc), n, k)

    alpha = 1.0 - confidence
    fj = jms / ems
    nu_num = (k - 1) * (n - 1) * (
        k * icc * fj + n * (1.0 + (k - 1) * icc) - k * icc
    ) ** 2
    nu_den = (n - 1) * k ** 2 * icc ** 2 * fj ** 2 + (
        n * (1.0 + (k - 1) * icc) - k * icc
    ) ** 2
    nu = nu_num / nu_den
    f_low = f_dist.ppf(1.0 - alpha / 2.0, n - 1, nu)
    f_up = f_dist.ppf(1.0 - alpha / 2.0, nu, n - 1)
    lower = n * (bms - f_low * ems) / (
        f_low * (k * jms + (k * n - k - n) * ems) + n * bms
    )
    upper = n * (f_up * bms - ems) / (
        k * jms + (k * n - k - n) * ems + n * f_up * bms
    )
    # the interval is bounded by [-1, 1]; near-degenerate inputs can
    # overshoot by one rounding step
    lower = min(max(lower, -1.0), 1.0)
    upper = min(max(upper, -1.0), 1.0)
    return IccResult(float(icc), float(lower), float(upper), n, k)


def reliability_report(records_a: list[PredictionRecord],
                       records_b: list[PredictionRecord]) -> IccResult:
    """ICC(2,1) over the n x 2 brain-PAD matrix of two matched sessions."""
    pads_a = {r.subject_id: r.brain_pad for r in brain_pad(records_a)}
    pads_b = {r.subject_id: r.brain_pad for r in brain_pad(records_b)}
    missing = sorted(set(pads_a) ^ set(pads_b))
    if missing:
        raise ValidationError(
            "subjects not present in both sessions: " + ", ".join(missing)
        )
    ids = sorted(pads_a)
    matrix = np.array([[pads_a[i], pads_b[i]] for i in ids])
    return icc_2_1(matrix)
