"""Convergence diagnostics and deviance-based model comparison.

All functions operate on scalar traces (one parameter, one or more equal
length chains) or on a whole draw archive.  Constant traces are reported
through DegenerateTraceError rather than NaN so callers can distinguish
"stuck" from "failed to compute"; diagnose_all converts that into a
degenerate flag instead of aborting the table.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .draws import PosteriorDraws
from .errors import DataError, DegenerateTraceError
from .model import Dataset, interval_logprob

PSRF_WARN = 1.1
ESS_WARN = 100.0


def _as_chain_matrix(traces) -> np.ndarray:
    """Coerce a list of 1-D chains (or a 2-D array) to an (m, n) matrix."""
    if isinstance(traces, np.ndarray) and traces.ndim == 2:
        mat = np.asarray(traces, dtype=float)
    else:
        rows = [np.asarray(t, dtype=float).ravel() for t in traces]
        if not rows:
            raise ValueError("need at least one chain")
        n = rows[0].size
        if any(r.size != n for r in rows):
            raise ValueError("chains must have equal lengths")
        mat = np.vstack(rows)
    if not np.isfinite(mat).all():
        raise ValueError("traces must be finite")
    return mat


def gelman_rubin(traces, split: bool = False) -> float:
    """Potential scale reduction factor over >= 2 equal-length chains.

    PSRF = sqrt(((n-1)/n * W + B/n) / W) with W the mean within-chain
    variance and B = n * Var(chain means).  With split=True each chain is
    halved first (classic two-chain form stays the default).  A zero
    within-chain variance raises DegenerateTraceError.
    """
    mat = _as_chain_matrix(traces)
    if split:
        half = mat.shape[1] // 2
        if half < 10:
            raise ValueError("split chains need length >= 20")
        mat = np.vstack([mat[:, :half], mat[:, -half:]])
    m, n = mat.shape
    if m < 2:
        raise ValueError("PSRF needs at least two chains")
    if n < 10:
        raise ValueError("PSRF needs chain length >= 10")
    within = mat.var(axis=1, ddof=1)
    w = within.mean()
    if w == 0.0:
        raise DegenerateTraceError("all chains are constant")
    b_over_n = mat.mean(axis=1).var(ddof=1)
    v_hat = (n - 1) / n * w + b_over_n
    return math.sqrt(v_hat / w)


def _autocov(trace: np.ndarray) -> np.ndarray:
    """Biased-normalisation autocovariances c_0..c_{n-1} via FFT."""
    n = trace.size
    centred = trace - trace.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(centred, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def autocorrelation(trace, lag: int) -> float:
    """Sample autocorrelation of one chain at one lag (biased normalisation)."""
    x = np.asarray(trace, dtype=float).ravel()
    if not np.isfinite(x).all():
        raise ValueError("trace must be finite")
    if x.size < 2:
        raise ValueError("autocorrelation needs a trace of length >= 2")
    if not 0 <= lag < x.size:
        raise ValueError(f"lag must be in 0..{x.size - 1}, got {lag}")
    acov = _autocov(x)
    if acov[0] == 0.0:
        raise DegenerateTraceError("constant trace")
    if lag == 0:
        return 1.0
    return float(acov[lag] / acov[0])


def _ess_one_chain(x: np.ndarray) -> float:
    n = x.size
    acov = _autocov(x)
    if acov[0] == 0.0:
        raise DegenerateTraceError("constant trace")
    rho = acov / acov[0]
    # Geyer initial positive sequence: sum consecutive-lag pairs
    # Gamma_m = rho_{2m} + rho_{2m+1} while they stay positive.
    tau = -1.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        m += 1
    tau = max(tau, 1.0)
    return min(max(n / tau, 1.0), float(n))


def effective_sample_size(traces) -> float:
    """Autocorrelation-adjusted sample size, summed over chains.

    Each chain contributes n / (1 + 2 sum of positive paired
    autocorrelations), clamped to [1, n]; a single 1-D trace may be passed
    directly.  Never exceeds the total number of draws.
    """
    try:
        arr = np.asarray(traces, dtype=float)
    except (TypeError, ValueError):
        raise ValueError("chains must be numeric and of equal lengths") from None
    if arr.ndim == 1:
        mat = arr[None, :]
        if not np.isfinite(mat).all():
            raise ValueError("traces must be finite")
    elif arr.ndim == 2:
        mat = _as_chain_matrix(arr)
    else:
        raise ValueError("expected one trace or a chains x draws matrix")
    if mat.shape[1] < 10:
        raise ValueError("ESS needs chain length >= 10")
    return float(sum(_ess_one_chain(row) for row in mat))


@dataclass(frozen=True)
class DicResult:
    """Deviance information criterion and its parts."""

    dic: float
    p_d: float
    mean_deviance: float
    plugin_deviance: float
    resorted_cutpoints: bool = False


def dic_components(deviances, plugin_deviance: float, resorted: bool = False) -> DicResult:
    """Assemble a DicResult from stored deviances and a plug-in deviance.

    mean_deviance uses exact (compensated) summation, so the result is
    invariant under any reordering of the draws.
    """
    values = np.asarray(deviances, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("need at least one stored deviance")
    if not np.isfinite(values).all() or not np.isfinite(plugin_deviance):
        raise ValueError("deviances must be finite")
    dbar = math.fsum(values.tolist()) / values.size
    p_d = dbar - plugin_deviance
    return DicResult(
        dic=dbar + p_d,
        p_d=p_d,
        mean_deviance=dbar,
        plugin_deviance=float(plugin_deviance),
        resorted_cutpoints=resorted,
    )


def _exact_column_means(mat: np.ndarray) -> np.ndarray:
    """Per-column means via compensated summation (draw-order invariant)."""
    n = mat.shape[0]
    return np.array([math.fsum(mat[:, j].tolist()) / n for j in range(mat.shape[1])])


def dic(draws: PosteriorDraws, data: Dataset) -> DicResult:
    """DIC of an archive against the dataset it was fitted to.

    The plug-in deviance is evaluated at the posterior means of the
    parameters that enter the likelihood directly: cutpoints, slopes and
    pair effects.  Averaged cutpoints are re-sorted (and flagged) in the
    defensive case where they come out non-monotone.
    """
    from .dataio import dataset_digest

    if draws.total_draws == 0:
        raise ValueError("archive holds no draws")
    if draws.dataset_digest != dataset_digest(data):
        raise DataError(
            "archive was fitted to a different dataset (digest mismatch)"
        )
    stacked = draws.stacked()
    layout = draws.layout
    lam = _exact_column_means(stacked[:, layout.lambda_slice])
    beta = _exact_column_means(stacked[:, layout.beta_slice])
    alpha = _exact_column_means(stacked[:, layout.alpha_slice])
    resorted = bool((np.diff(lam) <= 0).any())
    if resorted:
        lam = np.sort(lam)
    bounds = np.concatenate(([-np.inf], lam, [np.inf]))
    mu = data.design @ beta + alpha[data.pair_id]
    terms = interval_logprob(bounds[data.category] - mu, bounds[data.category + 1] - mu)
    plugin = -2.0 * math.fsum(terms.tolist())
    deviances = draws.column("deviance")
    return dic_components(np.concatenate(deviances), plugin, resorted)


@dataclass(frozen=True)
class DiagnosticRow:
    """One parameter's convergence summary; None marks unavailable cells."""

    parameter: str
    psrf: float | None
    ess: float | None
    ac1: float | None
    ac5: float | None
    ac10: float | None
    flag: str


def _mean_autocorr(mat: np.ndarray, lag: int) -> float | None:
    if lag >= mat.shape[1]:
        return None
    values = []
    for row in mat:
        acov = _autocov(row)
        if acov[0] == 0.0:
            continue
        values.append(acov[lag] / acov[0])
    if not values:
        return None
    return float(np.mean(values))


def diagnose_all(draws: PosteriorDraws) -> list[DiagnosticRow]:
    """Convergence table over every real scalar parameter in the archive.

    Cluster labels (integer-valued, permutation-sensitive) and the stored
    deviance are excluded.  Constant traces get a degenerate flag; with a
    single chain the PSRF cell is unavailable.  A row is flagged "warn"
    when PSRF exceeds 1.1 or ESS falls below 100.
    """
    rows: list[DiagnosticRow] = []
    multi = draws.n_chains >= 2
    for name in draws.layout.columns:
        if name == "deviance" or name.startswith("R."):
            continue
        mat = np.vstack(draws.column(name))
        pooled_constant = np.ptp(mat) == 0.0
        if pooled_constant:
            rows.append(DiagnosticRow(name, None, None, None, None, None, "degenerate"))
            continue
        psrf: float | None = None
        if multi:
            try:
                psrf = gelman_rubin(mat)
            except DegenerateTraceError:
                psrf = None
        try:
            ess = effective_sample_size(mat)
        except DegenerateTraceError:
            ess = None
        flag = "ok"
        if (psrf is not None and psrf > PSRF_WARN) or ess is None or ess < ESS_WARN:
            flag = "warn"
        rows.append(
            DiagnosticRow(
                parameter=name,
                psrf=psrf,
                ess=ess,
                ac1=_mean_autocorr(mat, 1),
                ac5=_mean_autocorr(mat, 5),
                ac10=_mean_autocorr(mat, 10),
                flag=flag,
            )
        )
    return rows


def write_diagnostics(rows: list[DiagnosticRow], path) -> None:
    """CSV form of the diagnostics table; blank cells mean unavailable."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("parameter", "psrf", "ess", "ac1", "ac5", "ac10", "flag"))
        for r in rows:
            w.writerow(
                (
                    r.parameter,
                    "" if r.psrf is None else repr(float(r.psrf)),
                    "" if r.ess is None else repr(float(r.ess)),
                    "" if r.ac1 is None else repr(float(r.ac1)),
                    "" if r.ac5 is None else repr(float(r.ac5)),
                    "" if r.ac10 is None else repr(float(r.ac10)),
                    r.flag,
                )
            )
