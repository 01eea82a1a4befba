"""Shared builders and independent oracles for the test suite.

Everything here deliberately avoids the library's own computational
shortcuts: quadrature integrates log-densities on a dense grid, Monte
Carlo standard errors come from batch means rather than the package's
ESS, and datasets are assembled from raw arrays.
"""
import math

import numpy as np

from ordvote import (
    ActType,
    CovariateProfile,
    Dataset,
    Language,
    PairStructure,
    ParameterLayout,
    PosteriorDraws,
    SamplerConfig,
    ScoreScale,
    dataset_digest,
    log_likelihood,
)


def grid_mean(grid, log_density):
    """Posterior mean of a 1-D density known up to a constant on a grid."""
    grid = np.asarray(grid, dtype=float)
    lp = np.asarray(log_density, dtype=float)
    w = np.exp(lp - lp.max())
    return float(np.sum(grid * w) / np.sum(w))


def grid_expectation(fn_values, log_density):
    """Quadrature expectation of f over the same grid."""
    lp = np.asarray(log_density, dtype=float)
    w = np.exp(lp - lp.max())
    return float(np.sum(np.asarray(fn_values) * w) / np.sum(w))


def batch_se(trace, n_batches=30):
    """Batch-means Monte Carlo standard error of a trace's mean."""
    x = np.asarray(trace, dtype=float)
    usable = (x.size // n_batches) * n_batches
    if usable < n_batches:
        raise ValueError("trace too short for batch means")
    means = x[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


def build_dataset(
    records,
    n_voters,
    n_performers,
    *,
    scale=None,
    profiles=None,
    border=None,
    migration=None,
    present=None,
    extra_pairs=(),
):
    """Dataset from (voter, performer, year, category) index tuples.

    Default covariates are reference-level (English, Group) at the record's
    year offset, so the design matrix is zero beyond the year column.
    extra_pairs adds observed pairs that have no records.
    """
    scale = scale if scale is not None else ScoreScale()
    records = list(records)
    voter_idx = np.array([r[0] for r in records], dtype=np.intp)
    performer_idx = np.array([r[1] for r in records], dtype=np.intp)
    year = np.array([r[2] for r in records], dtype=np.int64)
    category = np.array([r[3] for r in records], dtype=np.intp)
    if profiles is None:
        profiles = {
            (int(p), int(t)): CovariateProfile(int(t), Language.ENGLISH, ActType.GROUP)
            for p, t in zip(performer_idx, year)
        }
    shape = (n_voters, n_performers)
    if border is None and migration is None and present is None:
        pairs = PairStructure.empty(n_voters, n_performers)
    else:
        b = np.zeros(shape, np.int8) if border is None else np.asarray(border, np.int8)
        m = np.zeros(shape) if migration is None else np.asarray(migration, float)
        if present is None:
            present = m != 0.0
        pairs = PairStructure(border=b, migration=m, present=np.asarray(present, bool))
    observed = sorted(
        {(int(v), int(p)) for v, p in zip(voter_idx, performer_idx)}
        | {(int(v), int(p)) for v, p in extra_pairs}
    )
    return Dataset(
        scale=scale,
        voters=tuple(f"V{i + 1:02d}" for i in range(n_voters)),
        performers=tuple(f"P{j + 1:02d}" for j in range(n_performers)),
        voter_idx=voter_idx,
        performer_idx=performer_idx,
        year=year,
        category=category,
        profiles=profiles,
        pairs=pairs,
        observed_pairs=np.array(observed, dtype=np.intp).reshape(-1, 2),
    )


def write_panel(directory, votes, covariates, adjacency=None, migration=None):
    """Write input tables from row tuples; returns a name -> path dict."""
    paths = {}

    def write(name, header, rows):
        text = "\n".join([header] + [",".join(str(x) for x in r) for r in rows])
        path = directory / name
        path.write_text(text + "\n", encoding="utf-8")
        return path

    paths["votes"] = write("votes.csv", "voter,performer,year,score", votes)
    paths["covariates"] = write(
        "covariates.csv", "performer,year,language,act_type", covariates
    )
    if adjacency is not None:
        paths["adjacency"] = write("adjacency.csv", "voter,performer,border", adjacency)
    if migration is not None:
        paths["migration"] = write("migration.csv", "voter,performer,stock", migration)
    return paths


def make_archive(model, data, chain_states, chain_deviances=None, thin=1, seed=0):
    """PosteriorDraws holding the given per-chain state lists.

    Deviances default to -2 * log_likelihood of each state.
    """
    layout = ParameterLayout.for_dataset(model, data)
    chains = []
    for c, states in enumerate(chain_states):
        rows = np.empty((len(states), layout.n_columns))
        for i, state in enumerate(states):
            if chain_deviances is None:
                deviance = -2.0 * log_likelihood(state, data)
            else:
                deviance = chain_deviances[c][i]
            rows[i] = layout.state_to_row(state, deviance)
        chains.append(rows)
    per_chain = len(chain_states[0]) if chain_states else 0
    config = SamplerConfig(
        chains=max(len(chain_states), 1),
        iterations=per_chain * thin,
        burn_in=0,
        thin=thin,
        seed=seed,
    )
    return PosteriorDraws(
        layout=layout,
        chains=chains,
        sampler_config=config,
        model_config=model,
        dataset_digest=dataset_digest(data),
    )
