"""Linear-kernel Gaussian process regression over flattened volumes.

The kernel is the subject-by-subject dot-product matrix scaled by 1/F so
hyperparameter ranges do not depend on resolution. Targets are mean-
centered; hyperparameters (signal scale s, noise variance sigma2) maximize
the log marginal likelihood over a deterministic log grid with two local
refinement passes. Everything here runs in float64.
"""

from __future__ import annotations

import os
import zipfile
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import FormatError, InputOutputError, NumericError, ValidationError

_GRID_LOG_S = tuple(float(e) for e in range(-3, 4))  # 10^-3 .. 10^3
_GRID_LOG_N = tuple(float(e) for e in range(-4, 3))  # 10^-4 .. 10^2
_BASE_JITTER = 1e-10
_MAX_JITTER_DOUBLINGS = 8


@dataclass
class GprModel:
    signal_scale: float
    noise_variance: float
    alpha: np.ndarray  # (N,) dual weights, (sK + sigma2 I)^-1 (y - mean)
    y_mean: float
    log_marginal_likelihood: float


def _check_features(X, name: str = "features") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"{name} must be 2-D (subjects x voxels), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contain non-finite values")
    return X


def linear_kernel(X, Z) -> np.ndarray:
    """K[i, j] = x_i . z_j / F."""
    X = _check_features(X, "X")
    Z = _check_features(Z, "Z")
    if X.shape[1] != Z.shape[1]:
        raise ValidationError(
            f"feature width mismatch: {X.shape[1]} vs {Z.shape[1]}"
        )
    return (X @ Z.T) / X.shape[1]


def _factor_with_jitter(C: np.ndarray):
    """Cholesky of a symmetric matrix, retrying with doubling jitter."""
    n = C.shape[0]
    base = _BASE_JITTER * np.trace(C) / n
    jitter = 0.0
    for attempt in range(_MAX_JITTER_DOUBLINGS + 2):
        try:
            return cho_factor(C + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            jitter = base if jitter == 0.0 else 2.0 * jitter
            if attempt >= _MAX_JITTER_DOUBLINGS + 1:
                break
    raise NumericError(
        f"kernel factorization failed after jitter up to {jitter:g}"
    )


def log_marginal_likelihood(K: np.ndarray, y: np.ndarray, s: float,
                            sigma2: float) -> float:
    """log N(y | 0, s*K + sigma2*I) via Cholesky."""
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = y.size
    if K.shape != (n, n):
        raise ValidationError(f"kernel shape {K.shape} does not match y ({n})")
    if s <= 0 or sigma2 <= 0:
        raise ValidationError("signal scale and noise variance must be positive")
    C = s * K + sigma2 * np.eye(n)
    factor = _factor_with_jitter(C)
    alpha = cho_solve(factor, y)
    logdet_half = float(np.sum(np.log(np.diag(factor[0]))))
    return float(-0.5 * y @ alpha - logdet_half - 0.5 * n * np.log(2.0 * np.pi))


def _search_hyperparameters(K, y):
    """(log10 s, log10 sigma2) grid search plus two halved refinement passes."""
    best = (-np.inf, 0.0, 0.0)
    for ls in _GRID_LOG_S:
        for ln in _GRID_LOG_N:
            lml = log_marginal_likelihood(K, y, 10.0 ** ls, 10.0 ** ln)
            if lml > best[0]:
                best = (lml, ls, ln)
    step = 1.0
    for _ in range(2):
        step /= 2.0
        _, ls0, ln0 = best
        for ls in (ls0 - step, ls0, ls0 + step):
            for ln in (ln0 - step, ln0, ln0 + step):
                if (ls, ln) == (ls0, ln0):
                    continue
                lml = log_marginal_likelihood(K, y, 10.0 ** ls, 10.0 ** ln)
                if lml > best[0]:
                    best = (lml, ls, ln)
    return best


def gpr_fit(X, ages, signal_scale: float | None = None,
            noise_variance: float | None = None) -> GprModel:
    """Fit dual weights and (unless fixed by the caller) hyperparameters.

    Passing explicit signal_scale and noise_variance skips the marginal-
    likelihood search; passing only one of them fixes it is not supported.
    """
    X = _check_features(X)
    y = np.asarray(ages, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.size:
        raise ValidationError(f"{X.shape[0]} feature rows vs {y.size} ages")
    if y.size < 2:
        raise ValidationError("gpr_fit needs at least 2 subjects")
    if not np.all(np.isfinite(y)):
        raise ValidationError("ages contain non-finite values")
    if (signal_scale is None) != (noise_variance is None):
        raise ValidationError(
            "fix both signal_scale and noise_variance or neither"
        )

    y_mean = float(np.mean(y))
    yc = y - y_mean
    K = linear_kernel(X, X)

    if signal_scale is None:
        lml, ls, ln = _search_hyperparameters(K, yc)
        s, sigma2 = 10.0 ** ls, 10.0 ** ln
    else:
        s, sigma2 = float(signal_scale), float(noise_variance)
        if s <= 0 or sigma2 <= 0:
            raise ValidationError("signal scale and noise variance must be positive")
        lml = log_marginal_likelihood(K, yc, s, sigma2)

    C = s * K + sigma2 * np.eye(y.size)
    alpha = cho_solve(_factor_with_jitter(C), yc)
    return GprModel(
        signal_scale=s,
        noise_variance=sigma2,
        alpha=alpha,
        y_mean=y_mean,
        log_marginal_likelihood=lml,
    )


def gpr_predict(model: GprModel, X_train, X_new) -> np.ndarray:
    """Posterior mean: s * k(X_new, X_train) @ alpha + y_mean."""
    K_new = linear_kernel(X_new, X_train)
    if K_new.shape[1] != model.alpha.size:
        raise ValidationError(
            f"{K_new.shape[1]} training rows vs {model.alpha.size} dual weights"
        )
    return model.signal_scale * (K_new @ model.alpha) + model.y_mean


_GPR_FORMAT_VERSION = 1


def save_gpr(model: GprModel, X_train: np.ndarray, path: str | os.PathLike) -> None:
    """Persist a fitted GPR (training features ride along for prediction)."""
    try:
        np.savez(
            path,
            format_version=np.int64(_GPR_FORMAT_VERSION),
            signal_scale=np.float64(model.signal_scale),
            noise_variance=np.float64(model.noise_variance),
            alpha=model.alpha,
            y_mean=np.float64(model.y_mean),
            log_marginal_likelihood=np.float64(model.log_marginal_likelihood),
            x_train=np.asarray(X_train, dtype=np.float32),
        )
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc


def load_gpr(path: str | os.PathLike) -> tuple[GprModel, np.ndarray]:
    try:
        with np.load(path) as archive:
            if int(archive["format_version"]) != _GPR_FORMAT_VERSION:
                raise FormatError(
                    f"{path}: unsupported GPR model version "
                    f"{int(archive['format_version'])}"
                )
            model = GprModel(
                signal_scale=float(archive["signal_scale"]),
                noise_variance=float(archive["noise_variance"]),
                alpha=archive["alpha"],
                y_mean=float(archive["y_mean"]),
                log_marginal_likelihood=float(archive["log_marginal_likelihood"]),
            )
            return model, archive["x_train"]
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise FormatError(f"{path}: corrupt GPR model file: {exc}") from exc
