"""Model mathematics for ordinal score panels with structured voter-performer effects.

A score given by voter v to performer p in year t is modelled on an ordered
S-point scale through a cumulative-logit link with S-1 strictly increasing
cutpoints: logit P(score <= s) = lambda_s - mu_vpt.  The linear predictor

    mu_vpt = beta . x_pt + alpha_vp

combines a year trend, language and act-type contrasts, and a persistent
pair effect alpha_vp.  Pair effects are drawn around a structured mean

    theta_vp = gamma + delta_{R_v, p} + psi * w_vp + phi * z_vp

where R_v is the voter's latent cluster, w_vp marks a shared border and
z_vp is the migrant-stock covariate (contributing exactly zero when no
stock is recorded).  This module holds the containers and the pure
functions for that model: category probabilities, linear predictors,
structured-effect means, log-likelihood and log-prior.  The sampler, the
diagnostics and the test oracles all go through these definitions.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import (
    DataError,
    DegenerateLikelihoodWarning,
    InvariantViolation,
)

# exp() underflows to a hard zero just below this, so log-probabilities are
# floored here before exponentiation.
LOG_PROB_FLOOR = -745.0

_IDENTIFIER_CHARS = "identifiers must be non-empty and contain only [A-Za-z0-9_-]"


class Language(enum.Enum):
    """Song language contrast; ENGLISH is the reference level."""

    ENGLISH = "English"
    OWN = "Own"
    MIXED = "Mixed"


class ActType(enum.Enum):
    """Act type contrast; GROUP is the reference level."""

    GROUP = "Group"
    FEMALE_SOLO = "FemaleSolo"
    MALE_SOLO = "MaleSolo"


# Fixed slope order: year trend, then the two language contrasts, then the
# two act-type contrasts.  Archive columns beta.1..beta.5 follow this order.
BETA_LABELS = ("year", "lang_mixed", "lang_own", "act_female_solo", "act_male_solo")
N_BETA = len(BETA_LABELS)

DEFAULT_SCORE_VALUES = (0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 12)


def _check_identifier(name: str) -> str:
    if not name or not all(c.isalnum() or c in "_-" for c in name):
        raise DataError(f"bad identifier {name!r}: {_IDENTIFIER_CHARS}")
    return name


@dataclass(frozen=True)
class ScoreScale:
    """Ordered vocabulary of admissible scores.

    Maps each admissible score value bijectively onto a category index
    0..S-1 (ascending).  Scores outside the vocabulary are rejected.
    """

    values: tuple[int, ...] = DEFAULT_SCORE_VALUES

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise InvariantViolation("score scale needs at least two values")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvariantViolation(f"score scale must be strictly increasing: {vals}")

    @property
    def n_categories(self) -> int:
        return len(self.values)

    def category(self, score) -> int:
        """0-based category index of a score; DataError if not in the scale."""
        try:
            value = float(score)
        except (TypeError, ValueError):
            raise DataError(f"score {score!r} is not a number") from None
        if value.is_integer():
            try:
                return self.values.index(int(value))
            except ValueError:
                pass
        raise DataError(f"score {score!r} is not on the scale {self.values}")

    def score(self, category: int) -> int:
        """Inverse of category(): the score value at a 0-based index."""
        if not 0 <= category < len(self.values):
            raise DataError(f"category index {category} outside 0..{len(self.values) - 1}")
        return self.values[category]


@dataclass(frozen=True)
class CovariateProfile:
    """Observed covariates of one performance (p, t)."""

    year_offset: int
    language: Language
    act_type: ActType

    def __post_init__(self):
        if self.year_offset < 0:
            raise InvariantViolation(f"year offset must be >= 0, got {self.year_offset}")

    def design_row(self) -> np.ndarray:
        """Length-5 design vector in BETA_LABELS order."""
        return np.array(
            [
                float(self.year_offset),
                1.0 if self.language is Language.MIXED else 0.0,
                1.0 if self.language is Language.OWN else 0.0,
                1.0 if self.act_type is ActType.FEMALE_SOLO else 0.0,
                1.0 if self.act_type is ActType.MALE_SOLO else 0.0,
            ]
        )


@dataclass(frozen=True)
class PairStructure:
    """Adjacency and migration covariates on the V x P pair grid.

    ``border`` is 0/1; ``migration`` holds the (possibly transformed) stock
    and is only meaningful where ``present`` is True.  Absent migration
    contributes exactly zero to theta, regardless of phi.
    """

    border: np.ndarray
    migration: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        border = np.asarray(self.border, dtype=np.int8)
        migration = np.asarray(self.migration, dtype=float)
        present = np.asarray(self.present, dtype=bool)
        if not (border.shape == migration.shape == present.shape):
            raise InvariantViolation("pair-structure arrays must share one V x P shape")
        if border.ndim != 2:
            raise InvariantViolation("pair-structure arrays must be 2-D (V x P)")
        if not np.isin(border, (0, 1)).all():
            raise InvariantViolation("border entries must be 0 or 1")
        if not np.isfinite(migration[present]).all() or (migration[present] < 0).any():
            raise InvariantViolation("recorded migration stocks must be finite and >= 0")
        object.__setattr__(self, "border", border)
        object.__setattr__(self, "migration", migration)
        object.__setattr__(self, "present", present)

    @classmethod
    def empty(cls, n_voters: int, n_performers: int) -> "PairStructure":
        shape = (n_voters, n_performers)
        return cls(np.zeros(shape, np.int8), np.zeros(shape), np.zeros(shape, bool))

    def w(self, voter: int, performer: int) -> int:
        return int(self.border[voter, performer])

    def z(self, voter: int, performer: int) -> float:
        """Migration design value: the stock if recorded, else exactly 0."""
        if self.present[voter, performer]:
            return float(self.migration[voter, performer])
        return 0.0


@dataclass
class Dataset:
    """A loaded score panel plus everything derived from it.

    ``voter_idx``, ``performer_idx``, ``year`` and ``category`` are aligned
    per-record arrays (category is the 0-based scale index).  ``profiles``
    maps (performer_idx, year) to the covariates of that performance.
    ``observed_pairs`` lists the distinct (voter_idx, performer_idx) that
    actually vote, sorted by voter then performer; the loader derives it
    from the records, so normally H == #distinct pairs in the records.

    Derived fields (design matrix, record -> pair index, counts) are
    computed on construction and must not be passed in.
    """

    scale: ScoreScale
    voters: tuple[str, ...]
    performers: tuple[str, ...]
    voter_idx: np.ndarray
    performer_idx: np.ndarray
    year: np.ndarray
    category: np.ndarray
    profiles: dict[tuple[int, int], CovariateProfile]
    pairs: PairStructure
    observed_pairs: np.ndarray

    design: np.ndarray = field(init=False, repr=False)
    pair_id: np.ndarray = field(init=False, repr=False)
    pair_record_counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.voters = tuple(self.voters)
        self.performers = tuple(self.performers)
        self.voter_idx = np.asarray(self.voter_idx, dtype=np.intp)
        self.performer_idx = np.asarray(self.performer_idx, dtype=np.intp)
        self.year = np.asarray(self.year, dtype=np.int64)
        self.category = np.asarray(self.category, dtype=np.intp)
        self.observed_pairs = np.asarray(self.observed_pairs, dtype=np.intp).reshape(-1, 2)

        n = self.voter_idx.shape[0]
        if not (self.performer_idx.shape[0] == self.year.shape[0] == self.category.shape[0] == n):
            raise InvariantViolation("record arrays must share one length")
        if self.pairs.border.shape != (len(self.voters), len(self.performers)):
            raise InvariantViolation("pair structure shape must be V x P")

        if n:
            if self.category.min() < 0 or self.category.max() >= self.scale.n_categories:
                raise InvariantViolation("record categories outside the score scale")
            design = np.empty((n, N_BETA))
            rows: dict[tuple[int, int], np.ndarray] = {}
            for key, prof in self.profiles.items():
                rows[key] = prof.design_row()
            for i in range(n):
                key = (int(self.performer_idx[i]), int(self.year[i]))
                try:
                    design[i] = rows[key]
                except KeyError:
                    p = self.performers[self.performer_idx[i]]
                    raise DataError(
                        f"missing covariate profile for performer {p} in year {self.year[i]}"
                    ) from None
            self.design = design
        else:
            self.design = np.empty((0, N_BETA))

        lookup = {
            (int(v), int(p)): h for h, (v, p) in enumerate(self.observed_pairs)
        }
        if len(lookup) != len(self.observed_pairs):
            raise InvariantViolation("observed pairs must be distinct")
        self.pair_id = np.empty(n, dtype=np.intp)
        for i in range(n):
            key = (int(self.voter_idx[i]), int(self.performer_idx[i]))
            try:
                self.pair_id[i] = lookup[key]
            except KeyError:
                raise InvariantViolation(
                    f"record pair {key} missing from observed_pairs"
                ) from None
        self.pair_record_counts = np.bincount(
            self.pair_id, minlength=len(self.observed_pairs)
        ).astype(np.intp)

    @property
    def n_records(self) -> int:
        return int(self.voter_idx.shape[0])

    @property
    def n_voters(self) -> int:
        return len(self.voters)

    @property
    def n_performers(self) -> int:
        return len(self.performers)

    @property
    def n_pairs(self) -> int:
        return int(self.observed_pairs.shape[0])

    def pair_index(self, voter: str, performer: str) -> int:
        """Position of an observed (voter, performer) pair in alpha order."""
        try:
            v = self.voters.index(voter)
            p = self.performers.index(performer)
        except ValueError as exc:
            raise DataError(f"unknown identifier in pair ({voter}, {performer})") from exc
        match = np.flatnonzero(
            (self.observed_pairs[:, 0] == v) & (self.observed_pairs[:, 1] == p)
        )
        if match.size == 0:
            raise DataError(f"pair ({voter}, {performer}) has no observed votes")
        return int(match[0])


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the hierarchy.

    q is the prior standard deviation shared by the slopes beta and by the
    scalar structure effects gamma, psi, phi.  Cutpoints get independent
    Normal(0, sigma2_lambda) kernels restricted to the increasing region.
    log sigma_alpha and log sigma_delta are uniform on logsd_bounds.
    """

    k: int
    scale: ScoreScale = field(default_factory=ScoreScale)
    sigma2_lambda: float = 10.0
    q: float = 1.0e4
    dirichlet_concentration: tuple[float, ...] | None = None
    logsd_bounds: tuple[float, float] = (-3.0, 3.0)
    pin_gamma: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise InvariantViolation(f"cluster count must be >= 1, got {self.k}")
        if self.sigma2_lambda <= 0 or self.q <= 0:
            raise InvariantViolation("prior scales must be positive")
        lo, hi = self.logsd_bounds
        if not lo < hi:
            raise InvariantViolation(f"logsd bounds must be ordered, got {self.logsd_bounds}")
        if self.dirichlet_concentration is not None:
            conc = tuple(float(a) for a in self.dirichlet_concentration)
            if len(conc) != self.k:
                raise InvariantViolation(
                    f"dirichlet concentration needs {self.k} entries, got {len(conc)}"
                )
            if any(a <= 0 for a in conc):
                raise InvariantViolation("dirichlet concentration entries must be positive")
            object.__setattr__(self, "dirichlet_concentration", conc)

    def concentration(self) -> np.ndarray:
        if self.dirichlet_concentration is None:
            return np.ones(self.k)
        return np.asarray(self.dirichlet_concentration, dtype=float)


@dataclass
class ParameterState:
    """One point in parameter space.

    regions holds 0-based cluster labels internally; archives store them
    1-based.  alpha is aligned with Dataset.observed_pairs.
    """

    cutpoints: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    gamma: float
    delta: np.ndarray
    psi: float
    phi: float
    regions: np.ndarray
    zeta: np.ndarray
    sigma_alpha: float
    sigma_delta: float

    def __post_init__(self):
        self.cutpoints = np.asarray(self.cutpoints, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.delta = np.atleast_2d(np.asarray(self.delta, dtype=float))
        self.regions = np.asarray(self.regions, dtype=np.intp)
        self.zeta = np.asarray(self.zeta, dtype=float)

    def copy(self) -> "ParameterState":
        return ParameterState(
            cutpoints=self.cutpoints.copy(),
            beta=self.beta.copy(),
            alpha=self.alpha.copy(),
            gamma=float(self.gamma),
            delta=self.delta.copy(),
            psi=float(self.psi),
            phi=float(self.phi),
            regions=self.regions.copy(),
            zeta=self.zeta.copy(),
            sigma_alpha=float(self.sigma_alpha),
            sigma_delta=float(self.sigma_delta),
        )

    def validate(self, config: ModelConfig) -> None:
        """Raise InvariantViolation unless every state constraint holds."""
        if self.cutpoints.size and np.any(np.diff(self.cutpoints) <= 0):
            raise InvariantViolation(f"cutpoints not strictly increasing: {self.cutpoints}")
        if self.beta.shape != (N_BETA,):
            raise InvariantViolation(f"beta must have {N_BETA} entries")
        if self.zeta.shape != (config.k,):
            raise InvariantViolation(f"zeta must have {config.k} entries")
        if np.any(self.zeta <= 0) or abs(float(self.zeta.sum()) - 1.0) > 1e-12:
            raise InvariantViolation(f"zeta must be a positive simplex point: {self.zeta}")
        if self.delta.shape[0] != config.k:
            raise InvariantViolation("delta must have one row per cluster")
        if self.regions.size and (self.regions.min() < 0 or self.regions.max() >= config.k):
            raise InvariantViolation("region labels outside 0..K-1")
        lo, hi = config.logsd_bounds
        for name, sig in (("sigma_alpha", self.sigma_alpha), ("sigma_delta", self.sigma_delta)):
            if not sig > 0 or not lo <= math.log(sig) <= hi:
                raise InvariantViolation(f"log {name} outside [{lo}, {hi}]: {sig}")
        arrays = (self.cutpoints, self.beta, self.alpha, self.delta, self.zeta)
        if not all(np.isfinite(a).all() for a in arrays):
            raise InvariantViolation("non-finite value in parameter state")
        if not all(np.isfinite(x) for x in (self.gamma, self.psi, self.phi)):
            raise InvariantViolation("non-finite scalar in parameter state")


# ---------------------------------------------------------------------------
# Stable cumulative-logit pieces.


def _log_logistic(x: np.ndarray) -> np.ndarray:
    """log F(x) for the logistic CDF F, i.e. -log(1 + exp(-x))."""
    return -np.logaddexp(0.0, np.negative(x))


def _log1mexp(d: np.ndarray) -> np.ndarray:
    """log(1 - exp(d)) for d <= 0, accurate near both endpoints."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        near = np.log(-np.expm1(d))
        far = np.log1p(-np.exp(d))
    return np.where(d > -math.log(2.0), near, far)


def interval_logprob(a, b) -> np.ndarray:
    """log(F(b) - F(a)) for the logistic CDF, elementwise, with a < b.

    Infinite endpoints encode the first (a = -inf) and last (b = +inf)
    categories; the same expression covers all three cases.  Returns -inf
    when the interval mass is indistinguishable from zero at float
    resolution.
    """
    log_fb = _log_logistic(np.asarray(b, dtype=float))
    log_fa = _log_logistic(np.asarray(a, dtype=float))
    d = np.minimum(log_fa - log_fb, 0.0)
    # a = -inf gives d = -inf and log1mexp = 0 exactly, so the first
    # category reduces to log F(b) without a separate branch.
    return log_fb + _log1mexp(d)


def category_probs(cutpoints, mu: float) -> np.ndarray:
    """Probability vector over the S categories at linear predictor mu.

    P(category s) is the logistic mass of (lambda_{s-1} - mu, lambda_s - mu)
    with lambda_0 = -inf and lambda_S = +inf.  Log-masses are floored at
    LOG_PROB_FLOOR before exponentiation so no entry is a hard zero.
    """
    lam = np.asarray(cutpoints, dtype=float)
    if lam.ndim != 1 or lam.size < 1:
        raise InvariantViolation("cutpoints must be a non-empty 1-D array")
    if np.any(np.diff(lam) <= 0):
        raise InvariantViolation(f"cutpoints not strictly increasing: {lam}")
    bounds = np.concatenate(([-np.inf], lam, [np.inf]))
    logp = interval_logprob(bounds[:-1] - mu, bounds[1:] - mu)
    return np.exp(np.maximum(logp, LOG_PROB_FLOOR))


def category_prob_matrix(cutpoints, mu: np.ndarray) -> np.ndarray:
    """Row-wise category_probs for a vector of linear predictors."""
    lam = np.asarray(cutpoints, dtype=float)
    if np.any(np.diff(lam) <= 0):
        raise InvariantViolation(f"cutpoints not strictly increasing: {lam}")
    mu = np.asarray(mu, dtype=float).reshape(-1, 1)
    bounds = np.concatenate(([-np.inf], lam, [np.inf]))
    logp = interval_logprob(bounds[:-1] - mu, bounds[1:] - mu)
    return np.exp(np.maximum(logp, LOG_PROB_FLOOR))


def linear_predictor(state: ParameterState, profile: CovariateProfile, pair_index: int) -> float:
    """mu for one record: design . beta + alpha of its observed pair."""
    return float(profile.design_row() @ state.beta + state.alpha[pair_index])


def theta_mean(
    state: ParameterState, voter: int, performer: int, structure: PairStructure
) -> float:
    """Structured mean of alpha_vp for a (voter, performer) index pair."""
    k = int(state.regions[voter])
    base = state.gamma + state.delta[k, performer]
    base += state.psi * structure.w(voter, performer)
    if structure.present[voter, performer]:
        base += state.phi * float(structure.migration[voter, performer])
    return float(base)


def theta_vector(state: ParameterState, data: Dataset) -> np.ndarray:
    """theta for every observed pair, aligned with state.alpha."""
    v = data.observed_pairs[:, 0]
    p = data.observed_pairs[:, 1]
    k = state.regions[v]
    out = state.gamma + state.delta[k, p]
    out = out + state.psi * data.pairs.border[v, p]
    z = np.where(data.pairs.present[v, p], data.pairs.migration[v, p], 0.0)
    return out + state.phi * z


def per_record_loglik(state: ParameterState, data: Dataset) -> np.ndarray:
    """Log category probability of every record under the state."""
    lam = state.cutpoints
    if np.any(np.diff(lam) <= 0):
        raise InvariantViolation(f"cutpoints not strictly increasing: {lam}")
    if data.n_records == 0:
        return np.empty(0)
    bounds = np.concatenate(([-np.inf], lam, [np.inf]))
    mu = data.design @ state.beta + state.alpha[data.pair_id]
    return interval_logprob(bounds[data.category] - mu, bounds[data.category + 1] - mu)


def log_likelihood(state: ParameterState, data: Dataset) -> float:
    """Total log-likelihood; -inf (with a warning) if any record underflows.

    Summation uses math.fsum, so the result is the exactly rounded sum of
    the per-record terms and is independent of record order.
    """
    terms = per_record_loglik(state, data)
    if terms.size and np.isneginf(terms).any():
        warnings.warn(
            "a record's category probability underflowed to zero",
            DegenerateLikelihoodWarning,
            stacklevel=2,
        )
        return float("-inf")
    return math.fsum(terms.tolist())


def _normal_logpdf(x, mean, sd) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -0.5 * ((x - mean) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2.0 * math.pi)


def log_prior(state: ParameterState, config: ModelConfig, data: Dataset) -> float:
    """Joint log-prior density of a state; -inf when any constraint fails.

    Pieces: increasing-region normal kernels on cutpoints, Normal(0, q^2)
    on beta and on gamma/psi/phi (gamma skipped when pinned), Normal(theta,
    sigma_alpha^2) on each pair effect, Normal(0, sigma_delta^2) on every
    delta_kp, categorical mass for the voter labels, a Dirichlet density on
    zeta, and Uniform(logsd_bounds) on each log sigma.
    """
    lam = state.cutpoints
    if lam.size and np.any(np.diff(lam) <= 0):
        return float("-inf")
    lo, hi = config.logsd_bounds
    for sig in (state.sigma_alpha, state.sigma_delta):
        if not sig > 0 or not lo <= math.log(sig) <= hi:
            return float("-inf")
    if np.any(state.zeta <= 0) or abs(float(state.zeta.sum()) - 1.0) > 1e-12:
        return float("-inf")
    if state.regions.size and (state.regions.min() < 0 or state.regions.max() >= config.k):
        return float("-inf")

    sd_lambda = math.sqrt(config.sigma2_lambda)
    pieces = [float(np.sum(_normal_logpdf(lam, 0.0, sd_lambda)))]
    pieces.append(float(np.sum(_normal_logpdf(state.beta, 0.0, config.q))))
    scalars = [state.psi, state.phi] if config.pin_gamma else [state.gamma, state.psi, state.phi]
    pieces.append(float(np.sum(_normal_logpdf(np.asarray(scalars), 0.0, config.q))))
    theta = theta_vector(state, data)
    pieces.append(float(np.sum(_normal_logpdf(state.alpha, theta, state.sigma_alpha))))
    pieces.append(float(np.sum(_normal_logpdf(state.delta, 0.0, state.sigma_delta))))
    pieces.append(float(np.sum(np.log(state.zeta[state.regions]))))
    conc = config.concentration()
    dirichlet = float(
        gammaln(conc.sum()) - gammaln(conc).sum() + np.sum((conc - 1.0) * np.log(state.zeta))
    )
    pieces.append(dirichlet)
    pieces.append(-2.0 * math.log(hi - lo))  # the two uniform log-sd densities
    return math.fsum(pieces)
