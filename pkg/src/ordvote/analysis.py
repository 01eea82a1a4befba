"""Posterior post-processing: standardized pair effects, exceedance
probabilities, cluster membership, label alignment, summary tables and
deviance-based model selection.

Exceedance probabilities and membership frequencies are exact counts over
stored draws divided by the number of draws; posterior means use exact
(compensated) summation; quantiles use the lower empirical quantile (the
order statistic at ceil(q*n), no interpolation).  Those choices make every
report deterministic and invariant under draw duplication.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .draws import PosteriorDraws
from .errors import DegenerateDrawError
from .model import ParameterState


def _lower_quantile(sorted_values: np.ndarray, q: float) -> float:
    """Lower empirical quantile: the order statistic at position ceil(q*n)."""
    n = sorted_values.size
    idx = math.ceil(q * n) - 1
    return float(sorted_values[min(max(idx, 0), n - 1)])


def _exact_mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / values.size


def standardize_alpha(draw) -> np.ndarray:
    """Within-draw standardisation of the pair effects.

    alpha* = (alpha - mean(alpha)) / sd(alpha) with the sample standard
    deviation (denominator H-1), computed over the observed pairs of one
    draw.  Accepts a ParameterState or a bare alpha vector.
    """
    alpha = draw.alpha if isinstance(draw, ParameterState) else np.asarray(draw, dtype=float)
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size < 2:
        raise ValueError("standardisation needs at least two observed pairs")
    sd = alpha.std(ddof=1)
    if sd == 0.0:
        raise DegenerateDrawError("all pair effects equal; zero dispersion")
    return (alpha - alpha.mean()) / sd


def standardized_matrix(draws: PosteriorDraws) -> np.ndarray:
    """Per-draw standardized pair effects, stacked (total draws x H)."""
    if draws.total_draws == 0:
        raise ValueError("archive holds no draws")
    a = draws.stacked()[:, draws.layout.alpha_slice]
    if a.shape[1] < 2:
        raise ValueError("standardisation needs at least two observed pairs")
    sd = a.std(axis=1, ddof=1, keepdims=True)
    if (sd == 0.0).any():
        raise DegenerateDrawError("a stored draw has zero pair-effect dispersion")
    return (a - a.mean(axis=1, keepdims=True)) / sd


@dataclass(frozen=True)
class BiasRow:
    """Posterior summary of one pair's standardized effect."""

    voter: str
    performer: str
    mean: float
    q025: float
    q25: float
    q75: float
    q975: float
    p_pos: float
    p_neg: float
    n_pos: int = 0
    n_neg: int = 0


@dataclass(frozen=True)
class BiasReport:
    """Exceedance report over all observed pairs, ordered voter, performer."""

    threshold: float
    n_draws: int
    rows: tuple[BiasRow, ...]

    def __post_init__(self):
        for r in self.rows:
            if not (0.0 <= r.p_pos <= 1.0 and 0.0 <= r.p_neg <= 1.0):
                raise ValueError("exceedance probabilities must lie in [0, 1]")
            if r.n_pos + r.n_neg > self.n_draws:
                raise ValueError("exceedance counts exceed the number of draws")
            if not (r.q025 <= r.q25 <= r.q75 <= r.q975):
                raise ValueError("credible intervals must be nested")


def exceedance(draws: PosteriorDraws, threshold: float = 1.96) -> BiasReport:
    """Bias screen: per pair, the exact fraction of standardized draws
    beyond +threshold and beyond -threshold, with mean and 50%/95%
    intervals of the standardized effect."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    star = standardized_matrix(draws)
    n = star.shape[0]
    rows = []
    for h, (voter, performer) in enumerate(draws.layout.pairs):
        col = np.sort(star[:, h])
        n_pos = int(np.count_nonzero(col > threshold))
        n_neg = int(np.count_nonzero(col < -threshold))
        rows.append(
            BiasRow(
                voter=voter,
                performer=performer,
                mean=_exact_mean(col),
                q025=_lower_quantile(col, 0.025),
                q25=_lower_quantile(col, 0.25),
                q75=_lower_quantile(col, 0.75),
                q975=_lower_quantile(col, 0.975),
                p_pos=n_pos / n,
                p_neg=n_neg / n,
                n_pos=n_pos,
                n_neg=n_neg,
            )
        )
    return BiasReport(threshold=float(threshold), n_draws=n, rows=tuple(rows))


def write_bias_report(report: BiasReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("voter", "performer", "mean", "q025", "q25", "q75", "q975", "p_pos", "p_neg"))
        for r in report.rows:
            w.writerow(
                (r.voter, r.performer)
                + tuple(repr(float(x)) for x in (r.mean, r.q025, r.q25, r.q75, r.q975, r.p_pos, r.p_neg))
            )


@dataclass(frozen=True)
class MembershipMatrix:
    """Row-stochastic V x K matrix of posterior cluster frequencies."""

    voters: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.shape[0] != len(self.voters):
            raise ValueError("one row per voter required")
        if (mat < 0).any() or (mat > 1).any():
            raise ValueError("membership entries must lie in [0, 1]")
        if np.abs(mat.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("membership rows must sum to 1")
        object.__setattr__(self, "matrix", mat)


def membership(draws: PosteriorDraws) -> MembershipMatrix:
    """Fraction of stored draws assigning each voter to each cluster.

    Meaningful after relabel(); the counts are exact, so duplicating the
    archive leaves the matrix unchanged.
    """
    if draws.total_draws == 0:
        raise ValueError("archive holds no draws")
    lay = draws.layout
    labels = np.rint(draws.stacked()[:, lay.region_slice]).astype(np.intp) - 1
    n = labels.shape[0]
    mat = np.empty((len(lay.voters), lay.k))
    for v in range(len(lay.voters)):
        mat[v] = np.bincount(labels[:, v], minlength=lay.k) / n
    return MembershipMatrix(voters=lay.voters, matrix=mat)


def write_membership(member: MembershipMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("voter", "k", "probability"))
        for v, name in enumerate(member.voters):
            for k in range(member.matrix.shape[1]):
                w.writerow((name, k + 1, repr(float(member.matrix[v, k]))))


def relabel(draws: PosteriorDraws) -> PosteriorDraws:
    """Undo label switching.

    Every stored draw's cluster labels are permuted to maximise agreement
    (Hungarian assignment on the K x K co-assignment count matrix) with the
    reference partition, taken as the first stored draw of chain 1; delta
    rows and zeta entries move with their labels.  Likelihood, pair effects
    and all other label-invariant quantities are untouched.
    """
    lay = draws.layout
    k = lay.k
    if k < 2 or draws.total_draws == 0:
        return draws
    if draws.chains[0].shape[0] == 0:
        raise ValueError("chain 1 holds no draws to supply the reference partition")
    ref = np.rint(draws.chains[0][0, lay.region_slice]).astype(np.intp) - 1
    n_perf = len(lay.performers)
    new_chains = []
    for mat in draws.chains:
        out = mat.copy()
        for i in range(mat.shape[0]):
            labels = np.rint(mat[i, lay.region_slice]).astype(np.intp) - 1
            counts = np.zeros((k, k), dtype=np.int64)
            np.add.at(counts, (ref, labels), 1)
            _, perm = linear_sum_assignment(-counts)
            inv = np.empty(k, dtype=np.intp)
            inv[perm] = np.arange(k)
            out[i, lay.region_slice] = inv[labels] + 1
            delta = mat[i, lay.delta_slice].reshape(k, n_perf)
            out[i, lay.delta_slice] = delta[perm].reshape(-1)
            out[i, lay.zeta_slice] = mat[i, lay.zeta_slice][perm]
        new_chains.append(out)
    return draws.with_chains(new_chains)


@dataclass(frozen=True)
class SummaryRow:
    parameter: str
    mean: float
    q025: float
    q25: float
    q75: float
    q975: float


def summarize(draws: PosteriorDraws) -> list[SummaryRow]:
    """Posterior mean and 50%/95% interval endpoints per scalar parameter.

    Cluster labels are skipped (categorical); the stored deviance is
    included.  Quantiles follow the lower-empirical-quantile rule.
    """
    if draws.total_draws == 0:
        raise ValueError("archive holds no draws")
    stacked = draws.stacked()
    rows = []
    for j, name in enumerate(draws.layout.columns):
        if name.startswith("R."):
            continue
        col = np.sort(stacked[:, j])
        rows.append(
            SummaryRow(
                parameter=name,
                mean=_exact_mean(col),
                q025=_lower_quantile(col, 0.025),
                q25=_lower_quantile(col, 0.25),
                q75=_lower_quantile(col, 0.75),
                q975=_lower_quantile(col, 0.975),
            )
        )
    return rows


def write_summary(rows: list[SummaryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("parameter", "mean", "q025", "q25", "q75", "q975"))
        for r in rows:
            w.writerow(
                (r.parameter,)
                + tuple(repr(float(x)) for x in (r.mean, r.q025, r.q25, r.q75, r.q975))
            )


@dataclass(frozen=True)
class PerformerEffectRow:
    cluster: int
    performer: str
    mean: float
    q025: float
    q25: float
    q75: float
    q975: float


def performer_effects(draws: PosteriorDraws) -> list[PerformerEffectRow]:
    """Per-cluster, per-performer summaries of the structured effects."""
    if draws.total_draws == 0:
        raise ValueError("archive holds no draws")
    lay = draws.layout
    stacked = draws.stacked()
    rows = []
    for c in range(1, lay.k + 1):
        for performer in lay.performers:
            col = np.sort(stacked[:, lay.column_index(f"delta.{c}.{performer}")])
            rows.append(
                PerformerEffectRow(
                    cluster=c,
                    performer=performer,
                    mean=_exact_mean(col),
                    q025=_lower_quantile(col, 0.025),
                    q25=_lower_quantile(col, 0.25),
                    q75=_lower_quantile(col, 0.75),
                    q975=_lower_quantile(col, 0.975),
                )
            )
    return rows


def write_performer_effects(rows: list[PerformerEffectRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("k", "performer", "mean", "q025", "q25", "q75", "q975"))
        for r in rows:
            w.writerow(
                (r.cluster, r.performer)
                + tuple(repr(float(x)) for x in (r.mean, r.q025, r.q25, r.q75, r.q975))
            )


def select_model(dic_results) -> int:
    """Cluster count with the smallest DIC; ties go to the smaller K."""
    items = []
    for k, value in dict(dic_results).items() if isinstance(dic_results, dict) else dic_results:
        dic_value = value.dic if hasattr(value, "dic") else float(value)
        items.append((int(k), float(dic_value)))
    if not items:
        raise ValueError("no models to select from")
    return min(items, key=lambda kd: (kd[1], kd[0]))[0]


def best_label_agreement(labels_a, labels_b) -> float:
    """Largest fraction of positions on which two partitions agree,
    maximised over relabelings of the second partition."""
    a = np.asarray(labels_a, dtype=np.intp).ravel()
    b = np.asarray(labels_b, dtype=np.intp).ravel()
    if a.size != b.size or a.size == 0:
        raise ValueError("partitions must be nonempty and equally long")
    if a.min() < 0 or b.min() < 0:
        raise ValueError("labels must be >= 0")
    k = int(max(a.max(), b.max())) + 1
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (a, b), 1)
    rows, cols = linear_sum_assignment(-counts)
    return float(counts[rows, cols].sum()) / a.size
