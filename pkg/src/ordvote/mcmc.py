"""Metropolis-within-Gibbs sampler for the hierarchical ordinal panel model.

Each sweep applies the update kernels once, in a fixed order: cutpoints,
slopes, pair effects, structured-mean block, cluster labels, mixture
weights, recentering, variances.  Cutpoints move through truncated-normal
Metropolis
steps confined to the interval between their neighbours; slopes, pair
effects and log standard deviations move through adaptive random-walk
Metropolis (Robbins-Monro scaling toward 0.44 acceptance during burn-in,
frozen afterwards); the structured-mean block and the mixture weights are
exact conjugate Gibbs draws; labels come from their exact categorical
conditional evaluated in log space.

Chains draw from independent streams spawned from one seed, so a run is
reproducible bit for bit whether chains execute serially or in parallel.
Within a chain the pair-effect update evaluates all conditionally
independent pair steps as one vectorised batch in fixed pair order, which
is the deterministic equivalent of per-pair parallel evaluation.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .dataio import dataset_digest
from .draws import ParameterLayout, PosteriorDraws, SamplerConfig
from .errors import DataError
from .model import (
    Dataset,
    ModelConfig,
    N_BETA,
    ParameterState,
    interval_logprob,
    per_record_loglik,
    theta_vector,
)

_TARGET_ACCEPT = 0.44
_SCALE_FLOOR, _SCALE_CEIL = 1e-6, 1e6


@dataclass
class ProposalScales:
    """Random-walk proposal scales, one per adapted coordinate."""

    cutpoints: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    log_sigma: np.ndarray

    @classmethod
    def defaults(cls, n_cutpoints: int, n_pairs: int) -> "ProposalScales":
        return cls(
            cutpoints=np.full(n_cutpoints, 0.2),
            beta=np.full(N_BETA, 0.2),
            alpha=np.full(n_pairs, 0.8),
            log_sigma=np.array([0.4, 0.4]),
        )

    def copy(self) -> "ProposalScales":
        return ProposalScales(
            self.cutpoints.copy(), self.beta.copy(), self.alpha.copy(), self.log_sigma.copy()
        )


@dataclass
class _Work:
    """Per-chain likelihood caches kept consistent with the current state."""

    mu: np.ndarray
    logp: np.ndarray
    lo_bound: np.ndarray
    hi_bound: np.ndarray


def _adapt(value: float, accepted: float, rate: float) -> float:
    scaled = value * math.exp(rate * (accepted - _TARGET_ACCEPT))
    return min(max(scaled, _SCALE_FLOOR), _SCALE_CEIL)


def _truncnorm_draw(rng, center: float, scale: float, lo: float, hi: float) -> float:
    """Inverse-CDF draw from Normal(center, scale^2) truncated to (lo, hi).

    Never generates a point outside the interval; by construction the
    center lies inside it.
    """
    a = float(ndtr((lo - center) / scale)) if np.isfinite(lo) else 0.0
    b = float(ndtr((hi - center) / scale)) if np.isfinite(hi) else 1.0
    v = a + rng.uniform() * (b - a)
    v = min(max(v, 5e-324), 1.0 - 1e-16)
    x = center + scale * float(ndtri(v))
    if not lo < x < hi:
        x = min(max(x, np.nextafter(lo, hi)), np.nextafter(hi, lo))
    return x


def _truncnorm_mass(center: float, scale: float, lo: float, hi: float) -> float:
    """Normal(center, scale^2) mass of (lo, hi); the proposal normaliser."""
    a = float(ndtr((lo - center) / scale)) if np.isfinite(lo) else 0.0
    b = float(ndtr((hi - center) / scale)) if np.isfinite(hi) else 1.0
    return b - a


def init_state(model: ModelConfig, data: Dataset, rng: np.random.Generator) -> ParameterState:
    """Deterministic-given-rng starting point.

    Cutpoints sit at the logit of Laplace-smoothed cumulative category
    frequencies (one pseudo-count per category keeps them strictly
    increasing and finite even with empty categories); everything else
    starts at zero except the labels, which are drawn uniformly.
    """
    if data.n_records == 0:
        raise DataError("cannot initialise the sampler from an empty dataset")
    s = model.scale.n_categories
    counts = np.bincount(data.category, minlength=s).astype(float)
    cum = np.cumsum(counts + 1.0)[:-1]
    frac = cum / (data.n_records + s)
    cutpoints = np.log(frac) - np.log1p(-frac)
    v, p, h, k = data.n_voters, data.n_performers, data.n_pairs, model.k
    return ParameterState(
        cutpoints=cutpoints,
        beta=np.zeros(N_BETA),
        alpha=np.zeros(h),
        gamma=0.0,
        delta=np.zeros((k, p)),
        psi=0.0,
        phi=0.0,
        regions=rng.integers(0, k, size=v).astype(np.intp),
        zeta=np.full(k, 1.0 / k),
        sigma_alpha=1.0,
        sigma_delta=1.0,
    )


def draw_state_from_prior(
    model: ModelConfig, data: Dataset, rng: np.random.Generator
) -> ParameterState:
    """Exact draw of a full state from the prior hierarchy.

    The ordered cutpoint prior (normal kernels on the increasing region) is
    sampled by sorting independent normals, which has exactly that density.
    """
    s, k = model.scale.n_categories, model.k
    v, p, h = data.n_voters, data.n_performers, data.n_pairs
    lo, hi = model.logsd_bounds
    log_sd = rng.uniform(lo, hi, size=2)
    zeta = np.maximum(rng.dirichlet(model.concentration()), 1e-300)
    zeta = zeta / zeta.sum()
    cum = np.cumsum(zeta)
    u = rng.uniform(size=v)
    regions = np.minimum((u[:, None] * cum[-1] > cum[None, :]).sum(axis=1), k - 1)
    sigma_delta = math.exp(log_sd[1])
    delta = rng.normal(0.0, sigma_delta, size=(k, p))
    gamma = 0.0 if model.pin_gamma else rng.normal(0.0, model.q)
    psi = rng.normal(0.0, model.q)
    phi = rng.normal(0.0, model.q)
    cutpoints = np.sort(rng.normal(0.0, math.sqrt(model.sigma2_lambda), size=s - 1))
    beta = rng.normal(0.0, model.q, size=N_BETA)
    state = ParameterState(
        cutpoints=cutpoints,
        beta=beta,
        alpha=np.zeros(h),
        gamma=float(gamma),
        delta=delta,
        psi=float(psi),
        phi=float(phi),
        regions=regions.astype(np.intp),
        zeta=zeta,
        sigma_alpha=math.exp(log_sd[0]),
        sigma_delta=sigma_delta,
    )
    theta = theta_vector(state, data)
    state.alpha = theta + state.sigma_alpha * rng.standard_normal(h)
    return state


class Sampler:
    """Update kernels bound to one model configuration and dataset.

    Public kernel methods copy the incoming state and return the updated
    copy; ``run`` drives the same kernels through an in-place fast path.
    """

    def __init__(self, model: ModelConfig, data: Dataset):
        self.model = model
        self.data = data
        self.s = model.scale.n_categories
        self.k = model.k
        self.n_voters = data.n_voters
        self.n_performers = data.n_performers
        self.n_pairs = data.n_pairs
        self.n_records = data.n_records
        self.cat_records = [
            np.flatnonzero(data.category == c) for c in range(self.s)
        ]
        pv = data.observed_pairs[:, 0]
        pp = data.observed_pairs[:, 1]
        self.pair_voter = pv
        self.pair_performer = pp
        self.pair_w = data.pairs.border[pv, pp].astype(float)
        self.pair_z = np.where(data.pairs.present[pv, pp], data.pairs.migration[pv, pp], 0.0)
        self.sd_lambda = math.sqrt(model.sigma2_lambda)
        self._conc = model.concentration()

    # -- caches ------------------------------------------------------------

    def _make_work(self, state: ParameterState) -> _Work:
        bounds = np.concatenate(([-np.inf], state.cutpoints, [np.inf]))
        lo = bounds[self.data.category]
        hi = bounds[self.data.category + 1]
        mu = self.data.design @ state.beta + state.alpha[self.data.pair_id]
        logp = interval_logprob(lo - mu, hi - mu)
        return _Work(mu=mu, logp=logp, lo_bound=lo, hi_bound=hi)

    def _refresh_bounds(self, state: ParameterState, work: _Work) -> None:
        bounds = np.concatenate(([-np.inf], state.cutpoints, [np.inf]))
        work.lo_bound = bounds[self.data.category]
        work.hi_bound = bounds[self.data.category + 1]

    # -- cutpoints ----------------------------------------------------------

    def _cutpoint_interval(self, state: ParameterState, s: int) -> tuple[float, float]:
        lam = state.cutpoints
        lo = float(lam[s - 1]) if s > 0 else -np.inf
        hi = float(lam[s + 1]) if s < lam.size - 1 else np.inf
        return lo, hi

    def _cutpoint_ratio(self, state, work, s: int, proposal: float, scale: float):
        """Log acceptance ratio for moving cutpoint s, plus the recomputed
        per-record terms needed to commit the move."""
        lam = state.cutpoints
        lo, hi = self._cutpoint_interval(state, s)
        cur = float(lam[s])
        idx_hi = self.cat_records[s]        # records bounded above by lambda_s
        idx_lo = self.cat_records[s + 1]    # records bounded below by lambda_s
        mu_hi = work.mu[idx_hi]
        mu_lo = work.mu[idx_lo]
        # The far edges of the affected intervals are the neighbouring
        # cutpoints, read fresh from the state: earlier moves in the same
        # sweep may already have shifted them.
        prop_hi = interval_logprob(lo - mu_hi, proposal - mu_hi)
        prop_lo = interval_logprob(proposal - mu_lo, hi - mu_lo)
        # summed as elementwise differences so an identity proposal cancels
        # term by term and the ratio is exactly zero
        delta_lik = (prop_hi - work.logp[idx_hi]).sum() + (prop_lo - work.logp[idx_lo]).sum()
        prior = -0.5 * (proposal * proposal - cur * cur) / self.model.sigma2_lambda
        # Truncated proposals are asymmetric through their normaliser only.
        z_cur = _truncnorm_mass(cur, scale, lo, hi)
        z_prop = _truncnorm_mass(proposal, scale, lo, hi)
        correction = math.log(z_cur) - math.log(z_prop)
        return float(delta_lik) + prior + correction, prop_hi, prop_lo, idx_hi, idx_lo

    def cutpoint_log_accept(
        self, state: ParameterState, s: int, proposal: float, scale: float = 0.2
    ) -> float:
        work = self._make_work(state)
        log_r, *_ = self._cutpoint_ratio(state, work, s, proposal, scale)
        return log_r

    def _update_cutpoints(self, state, work, rng, scales, adapt_rate=None) -> None:
        lam = state.cutpoints
        for s in range(lam.size):
            lo, hi = self._cutpoint_interval(state, s)
            scale = float(scales.cutpoints[s])
            proposal = _truncnorm_draw(rng, float(lam[s]), scale, lo, hi)
            u = rng.uniform()
            log_r, prop_hi, prop_lo, idx_hi, idx_lo = self._cutpoint_ratio(
                state, work, s, proposal, scale
            )
            accepted = (math.log(u) < log_r) if u > 0.0 else log_r > -np.inf
            if accepted:
                lam[s] = proposal
                work.logp[idx_hi] = prop_hi
                work.logp[idx_lo] = prop_lo
            if adapt_rate is not None:
                scales.cutpoints[s] = _adapt(scale, 1.0 if accepted else 0.0, adapt_rate)
        self._refresh_bounds(state, work)

    def update_cutpoints(
        self, state: ParameterState, rng: np.random.Generator, scales: ProposalScales | None = None
    ) -> ParameterState:
        state = state.copy()
        work = self._make_work(state)
        self._update_cutpoints(state, work, rng, scales or self.default_scales())
        return state

    # -- slopes ---------------------------------------------------------------

    def _beta_ratio(self, state, work, j: int, proposal: float):
        cur = float(state.beta[j])
        mu_prop = work.mu + self.data.design[:, j] * (proposal - cur)
        logp_prop = interval_logprob(work.lo_bound - mu_prop, work.hi_bound - mu_prop)
        delta_lik = logp_prop.sum() - work.logp.sum()
        prior = -0.5 * (proposal * proposal - cur * cur) / (self.model.q**2)
        return float(delta_lik) + prior, mu_prop, logp_prop

    def beta_log_accept(self, state: ParameterState, j: int, proposal: float) -> float:
        work = self._make_work(state)
        log_r, _, _ = self._beta_ratio(state, work, j, proposal)
        return log_r

    def _update_beta(self, state, work, rng, scales, adapt_rate=None) -> None:
        for j in range(N_BETA):
            z = rng.standard_normal()
            u = rng.uniform()
            proposal = float(state.beta[j]) + float(scales.beta[j]) * z
            log_r, mu_prop, logp_prop = self._beta_ratio(state, work, j, proposal)
            accepted = (math.log(u) < log_r) if u > 0.0 else log_r > -np.inf
            if accepted:
                state.beta[j] = proposal
                work.mu = mu_prop
                work.logp = logp_prop
            if adapt_rate is not None:
                scales.beta[j] = _adapt(
                    float(scales.beta[j]), 1.0 if accepted else 0.0, adapt_rate
                )

    def update_beta_block(
        self, state: ParameterState, rng: np.random.Generator, scales: ProposalScales | None = None
    ) -> ParameterState:
        state = state.copy()
        work = self._make_work(state)
        self._update_beta(state, work, rng, scales or self.default_scales())
        return state

    # -- pair effects -----------------------------------------------------------

    def _alpha_ratio(self, state, work, prop_alpha: np.ndarray):
        shift = (prop_alpha - state.alpha)[self.data.pair_id]
        mu_prop = work.mu + shift
        logp_prop = interval_logprob(work.lo_bound - mu_prop, work.hi_bound - mu_prop)
        h = self.n_pairs
        cur_by_pair = np.bincount(self.data.pair_id, weights=work.logp, minlength=h)
        prop_by_pair = np.bincount(self.data.pair_id, weights=logp_prop, minlength=h)
        theta = theta_vector(state, self.data)
        sa2 = state.sigma_alpha**2
        d_prior = -0.5 * ((prop_alpha - theta) ** 2 - (state.alpha - theta) ** 2) / sa2
        return prop_by_pair - cur_by_pair + d_prior, mu_prop, logp_prop

    def alpha_log_accept(self, state: ParameterState, prop_alpha: np.ndarray) -> np.ndarray:
        work = self._make_work(state)
        log_r, _, _ = self._alpha_ratio(state, work, np.asarray(prop_alpha, float))
        return log_r

    def _update_alpha(self, state, work, rng, scales, adapt_rate=None) -> None:
        h = self.n_pairs
        z = rng.standard_normal(h)
        u = rng.uniform(size=h)
        prop_alpha = state.alpha + scales.alpha * z
        log_r, mu_prop, logp_prop = self._alpha_ratio(state, work, prop_alpha)
        with np.errstate(divide="ignore"):
            accept = np.log(u) < log_r
        state.alpha = np.where(accept, prop_alpha, state.alpha)
        rec_accept = accept[self.data.pair_id]
        work.mu = np.where(rec_accept, mu_prop, work.mu)
        work.logp = np.where(rec_accept, logp_prop, work.logp)
        if adapt_rate is not None:
            scales.alpha[:] = np.clip(
                scales.alpha * np.exp(adapt_rate * (accept.astype(float) - _TARGET_ACCEPT)),
                _SCALE_FLOOR,
                _SCALE_CEIL,
            )

    def update_alpha(
        self, state: ParameterState, rng: np.random.Generator, scales: ProposalScales | None = None
    ) -> ParameterState:
        state = state.copy()
        work = self._make_work(state)
        self._update_alpha(state, work, rng, scales or self.default_scales())
        return state

    # -- structured-mean block (exact conjugate Gibbs) ---------------------------

    def _pair_delta_values(self, state) -> np.ndarray:
        return state.delta[state.regions[self.pair_voter], self.pair_performer]

    def gamma_conditional(self, state: ParameterState) -> tuple[float, float]:
        """Mean and variance of gamma's normal full conditional."""
        sa2 = state.sigma_alpha**2
        resid = state.alpha - self._pair_delta_values(state) - state.psi * self.pair_w
        resid = resid - state.phi * self.pair_z
        prec = 1.0 / self.model.q**2 + self.n_pairs / sa2
        return float(resid.sum() / sa2 / prec), 1.0 / prec

    def psi_conditional(self, state: ParameterState) -> tuple[float, float]:
        """Mean and variance of psi's normal full conditional."""
        sa2 = state.sigma_alpha**2
        resid = state.alpha - state.gamma - self._pair_delta_values(state)
        resid = resid - state.phi * self.pair_z
        prec = 1.0 / self.model.q**2 + float(np.sum(self.pair_w**2)) / sa2
        return float(np.sum(self.pair_w * resid) / sa2 / prec), 1.0 / prec

    def phi_conditional(self, state: ParameterState) -> tuple[float, float]:
        """Mean and variance of phi's normal full conditional."""
        sa2 = state.sigma_alpha**2
        resid = state.alpha - state.gamma - self._pair_delta_values(state)
        resid = resid - state.psi * self.pair_w
        prec = 1.0 / self.model.q**2 + float(np.sum(self.pair_z**2)) / sa2
        return float(np.sum(self.pair_z * resid) / sa2 / prec), 1.0 / prec

    def delta_conditional(self, state: ParameterState) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances of every delta_kp conditional (K x P arrays).

        Cells with no assigned pairs reduce exactly to the Normal(0,
        sigma_delta^2) prior.
        """
        sa2 = state.sigma_alpha**2
        resid = state.alpha - state.gamma - state.psi * self.pair_w - state.phi * self.pair_z
        group = state.regions[self.pair_voter] * self.n_performers + self.pair_performer
        size = self.k * self.n_performers
        sums = np.bincount(group, weights=resid, minlength=size)
        counts = np.bincount(group, minlength=size)
        prec = 1.0 / state.sigma_delta**2 + counts / sa2
        mean = (sums / sa2) / prec
        shape = (self.k, self.n_performers)
        return mean.reshape(shape), (1.0 / prec).reshape(shape)

    def _update_theta_block(self, state, rng) -> None:
        if not self.model.pin_gamma:
            mean, var = self.gamma_conditional(state)
            state.gamma = mean + math.sqrt(var) * rng.standard_normal()
        mean, var = self.psi_conditional(state)
        state.psi = mean + math.sqrt(var) * rng.standard_normal()
        mean, var = self.phi_conditional(state)
        state.phi = mean + math.sqrt(var) * rng.standard_normal()
        means, variances = self.delta_conditional(state)
        state.delta = means + np.sqrt(variances) * rng.standard_normal(means.shape)

    def update_theta_block(
        self, state: ParameterState, rng: np.random.Generator
    ) -> ParameterState:
        state = state.copy()
        self._update_theta_block(state, rng)
        return state

    # -- cluster labels -----------------------------------------------------------

    def region_log_weights(self, state: ParameterState) -> np.ndarray:
        """Unnormalised per-voter log weights over clusters (V x K)."""
        base = state.gamma + state.psi * self.pair_w + state.phi * self.pair_z
        cand = base[:, None] + state.delta[:, self.pair_performer].T
        sa2 = state.sigma_alpha**2
        ll = -0.5 * (state.alpha[:, None] - cand) ** 2 / sa2
        weights = np.zeros((self.n_voters, self.k))
        np.add.at(weights, self.pair_voter, ll)
        return weights + np.log(state.zeta)[None, :]

    def region_probabilities(self, state: ParameterState) -> np.ndarray:
        """Exact categorical conditional of each voter's label (V x K)."""
        w = self.region_log_weights(state)
        w = w - w.max(axis=1, keepdims=True)
        probs = np.exp(w)
        return probs / probs.sum(axis=1, keepdims=True)

    def _update_regions(self, state, rng) -> None:
        probs = self.region_probabilities(state)
        cum = np.cumsum(probs, axis=1)
        u = rng.uniform(size=self.n_voters)
        draws = (u[:, None] * cum[:, -1:] > cum).sum(axis=1)
        state.regions = np.minimum(draws, self.k - 1).astype(np.intp)

    def update_regions(self, state: ParameterState, rng: np.random.Generator) -> ParameterState:
        state = state.copy()
        self._update_regions(state, rng)
        return state

    # -- mixture weights ------------------------------------------------------------

    def _update_zeta(self, state, rng) -> None:
        conc = zeta_posterior_concentration(state.regions, self.k, self._conc)
        draw = np.maximum(rng.dirichlet(conc), 1e-300)
        state.zeta = draw / draw.sum()

    def update_zeta(self, state: ParameterState, rng: np.random.Generator) -> ParameterState:
        state = state.copy()
        self._update_zeta(state, rng)
        return state

    # -- recentering ---------------------------------------------------------------

    def _update_recenter(self, state, work, rng) -> None:
        """Two exact translation-group moves along the model's flat ridges.

        Move 1 shifts the cutpoints, all pair effects and the intercept by
        a common c, which leaves the likelihood and every alpha residual
        unchanged; c is drawn from its exact Gaussian conditional, which
        only the cutpoint and intercept priors constrain (the alpha
        residuals instead, when the intercept is pinned).  Move 2 trades
        the intercept against all cluster effects (theta invariant).  Both
        moves leave the posterior invariant and exist purely to decorrelate
        the location of the cutpoint block from the pair effects.
        """
        s2l = self.model.sigma2_lambda
        n_lam = self.s - 1
        if self.model.pin_gamma:
            resid = state.alpha - theta_vector(state, self.data)
            sa2 = state.sigma_alpha**2
            prec = n_lam / s2l + self.n_pairs / sa2
            lin = state.cutpoints.sum() / s2l + resid.sum() / sa2
        else:
            prec = n_lam / s2l + 1.0 / self.model.q**2
            lin = state.cutpoints.sum() / s2l + state.gamma / self.model.q**2
        c = -lin / prec + math.sqrt(1.0 / prec) * rng.standard_normal()
        state.cutpoints = state.cutpoints + c
        state.alpha = state.alpha + c
        if not self.model.pin_gamma:
            state.gamma += c
        work.mu = work.mu + c
        self._refresh_bounds(state, work)
        work.logp = interval_logprob(work.lo_bound - work.mu, work.hi_bound - work.mu)

        if not self.model.pin_gamma:
            sd2 = state.sigma_delta**2
            kp = self.k * self.n_performers
            prec = 1.0 / self.model.q**2 + kp / sd2
            lin = state.gamma / self.model.q**2 - state.delta.sum() / sd2
            d = -lin / prec + math.sqrt(1.0 / prec) * rng.standard_normal()
            state.gamma += d
            state.delta = state.delta - d

    def update_recenter(self, state: ParameterState, rng: np.random.Generator) -> ParameterState:
        state = state.copy()
        work = self._make_work(state)
        self._update_recenter(state, work, rng)
        return state

    # -- variances --------------------------------------------------------------------

    def _logsd_ratio(self, state, which: str, proposal: float) -> float:
        """Log target ratio for moving one log standard deviation."""
        lo, hi = self.model.logsd_bounds
        if not lo <= proposal <= hi:
            return -np.inf
        if which == "alpha":
            resid = state.alpha - theta_vector(state, self.data)
            n = self.n_pairs
            cur = math.log(state.sigma_alpha)
        elif which == "delta":
            resid = state.delta
            n = self.k * self.n_performers
            cur = math.log(state.sigma_delta)
        else:
            raise ValueError(f"unknown variance component {which!r}")
        ss = float(np.sum(np.asarray(resid) ** 2))
        return -n * (proposal - cur) - 0.5 * ss * (
            math.exp(-2.0 * proposal) - math.exp(-2.0 * cur)
        )

    def logsd_log_accept(self, state: ParameterState, which: str, proposal: float) -> float:
        return self._logsd_ratio(state, which, proposal)

    def _update_variances(self, state, rng, scales, adapt_rate=None) -> None:
        for i, which in enumerate(("alpha", "delta")):
            z = rng.standard_normal()
            u = rng.uniform()
            cur = math.log(state.sigma_alpha if which == "alpha" else state.sigma_delta)
            proposal = cur + float(scales.log_sigma[i]) * z
            log_r = self._logsd_ratio(state, which, proposal)
            accepted = (math.log(u) < log_r) if u > 0.0 else log_r > -np.inf
            if accepted:
                if which == "alpha":
                    state.sigma_alpha = math.exp(proposal)
                else:
                    state.sigma_delta = math.exp(proposal)
            if adapt_rate is not None:
                scales.log_sigma[i] = _adapt(
                    float(scales.log_sigma[i]), 1.0 if accepted else 0.0, adapt_rate
                )

    def update_variances(
        self, state: ParameterState, rng: np.random.Generator, scales: ProposalScales | None = None
    ) -> ParameterState:
        state = state.copy()
        self._update_variances(state, rng, scales or self.default_scales())
        return state

    # -- sweep --------------------------------------------------------------------------

    def default_scales(self) -> ProposalScales:
        return ProposalScales.defaults(self.s - 1, self.n_pairs)

    def _sweep(self, state, work, rng, scales, adapt_rate=None) -> None:
        self._update_cutpoints(state, work, rng, scales, adapt_rate)
        self._update_beta(state, work, rng, scales, adapt_rate)
        self._update_alpha(state, work, rng, scales, adapt_rate)
        self._update_theta_block(state, rng)
        self._update_regions(state, rng)
        self._update_zeta(state, rng)
        self._update_recenter(state, work, rng)
        self._update_variances(state, rng, scales, adapt_rate)

    def sweep(
        self,
        state: ParameterState,
        rng: np.random.Generator,
        scales: ProposalScales | None = None,
        adapt_rate: float | None = None,
    ) -> ParameterState:
        """One full kernel sweep on a copy of the state (fixed kernel order)."""
        state = state.copy()
        work = self._make_work(state)
        self._sweep(state, work, rng, scales or self.default_scales(), adapt_rate)
        return state


def zeta_posterior_concentration(regions, k: int, concentration) -> np.ndarray:
    """Dirichlet posterior concentration: prior a_k plus cluster counts."""
    counts = np.bincount(np.asarray(regions, dtype=np.intp), minlength=k)
    return np.asarray(concentration, dtype=float) + counts


def _run_chain(
    model: ModelConfig,
    config: SamplerConfig,
    data: Dataset,
    seed_seq: np.random.SeedSequence,
) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    sampler = Sampler(model, data)
    layout = ParameterLayout.for_dataset(model, data)
    state = init_state(model, data, rng)
    scales = sampler.default_scales()
    work = sampler._make_work(state)

    burn = config.burn_in
    adapt_limit = burn if config.adapt_window is None else min(burn, config.adapt_window)
    total = burn + config.retained
    rows = np.empty((config.draws_per_chain, layout.n_columns))
    stored = 0
    for t in range(total):
        adapt_rate = (t + 1.0) ** -0.6 if t < adapt_limit else None
        sampler._sweep(state, work, rng, scales, adapt_rate)
        if config.check_invariants:
            state.validate(model)
        if t >= burn and (t - burn + 1) % config.thin == 0:
            # Refresh the caches from scratch at store points so the stored
            # deviance is exactly -2 * log_likelihood of the stored state.
            work = sampler._make_work(state)
            terms = per_record_loglik(state, data)
            deviance = -2.0 * math.fsum(terms.tolist())
            state.validate(model)
            rows[stored] = layout.state_to_row(state, deviance)
            stored += 1
    assert stored == config.draws_per_chain
    return rows


def _run_chain_star(args) -> np.ndarray:
    return _run_chain(*args)


def run(
    config: SamplerConfig,
    model: ModelConfig,
    data: Dataset,
    jobs: int = 1,
) -> PosteriorDraws:
    """Run every chain and assemble the archive.

    Chains use streams spawned from config.seed by chain index, so results
    are identical bit for bit whether jobs is 1 or larger.
    """
    layout = ParameterLayout.for_dataset(model, data)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    args = [(model, config, data, seeds[c]) for c in range(config.chains)]
    if jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.chains)) as pool:
            chains = list(pool.map(_run_chain_star, args))
    else:
        chains = [_run_chain_star(a) for a in args]
    return PosteriorDraws(
        layout=layout,
        chains=chains,
        sampler_config=config,
        model_config=model,
        dataset_digest=dataset_digest(data),
    )
