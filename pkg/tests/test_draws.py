"""Run protocol configuration, archive layout, and archive round trips."""
import math

import numpy as np
import pytest

from ordvote import (
    ConfigError,
    DataError,
    ModelConfig,
    ParameterLayout,
    ParameterState,
    PosteriorDraws,
    SamplerConfig,
    ScoreScale,
    dataset_digest,
    read_archive,
    write_archive,
)
from helpers import build_dataset, make_archive


def tiny_dataset():
    scale = ScoreScale(values=(0, 1, 2))
    return build_dataset([(0, 0, 0, 0), (1, 1, 0, 2)], 2, 2, scale=scale)


def tiny_state(rng=None):
    rng = np.random.default_rng(0 if rng is None else rng)
    return ParameterState(
        cutpoints=np.array([-0.8, 0.9]),
        beta=rng.normal(size=5),
        alpha=rng.normal(size=2),
        gamma=float(rng.normal()),
        delta=rng.normal(size=(2, 2)),
        psi=float(rng.normal()),
        phi=float(rng.normal()),
        regions=np.array([1, 0], dtype=np.intp),
        zeta=np.array([0.25, 0.75]),
        sigma_alpha=1.5,
        sigma_delta=0.5,
    )


# ---------------------------------------------------------------------------
# SamplerConfig


def test_default_protocol():
    config = SamplerConfig()
    assert config.chains == 2
    assert config.iterations == 11_000
    assert config.burn_in == 1_000
    assert config.thin == 20
    assert config.seed == 0
    assert config.adapt_window is None
    assert config.iterations_include_burnin is False
    assert config.retained == 11_000
    assert config.draws_per_chain == 550


def test_iterations_include_burnin_semantics():
    config = SamplerConfig(iterations=11_000, burn_in=1_000, iterations_include_burnin=True)
    assert config.retained == 10_000
    assert config.draws_per_chain == 500


def test_zero_iterations_allowed():
    config = SamplerConfig(iterations=0, burn_in=5)
    assert config.retained == 0
    assert config.draws_per_chain == 0


def test_config_rejections():
    with pytest.raises(ConfigError, match="chains must be >= 1"):
        SamplerConfig(chains=0)
    with pytest.raises(ConfigError, match="must be >= 0"):
        SamplerConfig(iterations=-1)
    with pytest.raises(ConfigError, match="must be >= 0"):
        SamplerConfig(burn_in=-1)
    with pytest.raises(ConfigError, match="thin must be >= 1"):
        SamplerConfig(thin=0)
    with pytest.raises(ConfigError, match="adapt_window"):
        SamplerConfig(adapt_window=-3)
    with pytest.raises(ConfigError, match="shorter"):
        SamplerConfig(iterations=500, burn_in=1000, iterations_include_burnin=True)


# ---------------------------------------------------------------------------
# ParameterLayout


def test_layout_column_names_in_full():
    model = ModelConfig(k=2, scale=ScoreScale(values=(0, 1, 2)))
    layout = ParameterLayout.for_dataset(model, tiny_dataset())
    assert layout.columns == (
        "lambda.1",
        "lambda.2",
        "beta.1",
        "beta.2",
        "beta.3",
        "beta.4",
        "beta.5",
        "gamma",
        "psi",
        "phi",
        "alpha.V01.P01",
        "alpha.V02.P02",
        "delta.1.P01",
        "delta.1.P02",
        "delta.2.P01",
        "delta.2.P02",
        "R.V01",
        "R.V02",
        "zeta.1",
        "zeta.2",
        "sigma.alpha",
        "sigma.delta",
        "deviance",
    )
    assert layout.n_columns == 23


def test_layout_slices_partition_the_row():
    model = ModelConfig(k=3, scale=ScoreScale())
    data = build_dataset([(0, 1, 0, 3), (1, 0, 1, 10)], 2, 2)
    layout = ParameterLayout.for_dataset(model, data)
    covered = set()
    for sl in (layout.lambda_slice, layout.beta_slice, layout.alpha_slice,
               layout.delta_slice, layout.region_slice, layout.zeta_slice):
        covered.update(range(sl.start, sl.stop))
    covered.update({layout.gamma_index, layout.psi_index, layout.phi_index,
                    layout.sigma_alpha_index, layout.sigma_delta_index, layout.deviance_index})
    assert covered == set(range(layout.n_columns))


def test_pairs_are_voter_major():
    data = build_dataset(
        [(1, 0, 0, 0), (0, 1, 0, 1), (0, 0, 0, 1)], 2, 2, scale=ScoreScale(values=(0, 1))
    )
    model = ModelConfig(k=1, scale=ScoreScale(values=(0, 1)))
    layout = ParameterLayout.for_dataset(model, data)
    alpha_cols = [c for c in layout.columns if c.startswith("alpha.")]
    assert alpha_cols == ["alpha.V01.P01", "alpha.V01.P02", "alpha.V02.P01"]


def test_state_row_bijection():
    model = ModelConfig(k=2, scale=ScoreScale(values=(0, 1, 2)))
    layout = ParameterLayout.for_dataset(model, tiny_dataset())
    state = tiny_state()
    row = layout.state_to_row(state, deviance=12.5)
    # labels are stored 1-based
    assert row[layout.column_index("R.V01")] == 2.0
    assert row[layout.column_index("R.V02")] == 1.0
    assert row[layout.deviance_index] == 12.5
    back, deviance = layout.state_from_row(row)
    assert deviance == 12.5
    assert np.array_equal(back.cutpoints, state.cutpoints)
    assert np.array_equal(back.beta, state.beta)
    assert np.array_equal(back.alpha, state.alpha)
    assert np.array_equal(back.delta, state.delta)
    assert np.array_equal(back.regions, state.regions)
    assert np.array_equal(back.zeta, state.zeta)
    assert back.gamma == state.gamma
    assert back.psi == state.psi
    assert back.phi == state.phi
    assert back.sigma_alpha == state.sigma_alpha
    assert back.sigma_delta == state.sigma_delta


def test_unknown_column_raises():
    model = ModelConfig(k=2, scale=ScoreScale(values=(0, 1, 2)))
    layout = ParameterLayout.for_dataset(model, tiny_dataset())
    with pytest.raises(DataError, match="unknown archive column 'beta.9'"):
        layout.column_index("beta.9")


def test_wrong_width_chain_rejected():
    model = ModelConfig(k=2, scale=ScoreScale(values=(0, 1, 2)))
    data = tiny_dataset()
    layout = ParameterLayout.for_dataset(model, data)
    with pytest.raises(DataError, match="width"):
        PosteriorDraws(
            layout=layout,
            chains=[np.zeros((3, layout.n_columns - 1))],
            sampler_config=SamplerConfig(),
            model_config=model,
            dataset_digest=dataset_digest(data),
        )


# ---------------------------------------------------------------------------
# Archive files


def archive_fixture():
    model = ModelConfig(
        k=2,
        scale=ScoreScale(values=(0, 1, 2)),
        dirichlet_concentration=(1.5, 2.0),
        logsd_bounds=(-2.0, 2.5),
    )
    data = tiny_dataset()
    chains = [
        [tiny_state(rng=1), tiny_state(rng=2), tiny_state(rng=3)],
        [tiny_state(rng=4), tiny_state(rng=5), tiny_state(rng=6)],
    ]
    return model, data, make_archive(model, data, chains, thin=2, seed=9)


def test_archive_round_trip_bitwise(tmp_path):
    model, data, draws = archive_fixture()
    write_archive(draws, tmp_path)
    back = read_archive(tmp_path)
    assert back.n_chains == draws.n_chains
    for a, b in zip(back.chains, draws.chains):
        assert np.array_equal(a, b)  # repr round trip is exact
    assert back.dataset_digest == draws.dataset_digest
    assert back.layout.columns == draws.layout.columns


def test_archive_metadata_round_trip(tmp_path):
    model, data, draws = archive_fixture()
    write_archive(draws, tmp_path)
    back = read_archive(tmp_path)
    assert back.model_config == model
    assert back.sampler_config == draws.sampler_config


def test_archive_file_contents(tmp_path):
    model, data, draws = archive_fixture()
    paths = write_archive(draws, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["chain_1.csv", "chain_2.csv", "metadata.txt"]
    lines = (tmp_path / "chain_1.csv").read_text().splitlines()
    assert lines[0].split(",") == list(draws.layout.columns)
    first = lines[1].split(",")
    r_pos = draws.layout.column_index("R.V01")
    assert first[r_pos] in {"1", "2"}  # labels written as bare integers
    assert "." not in first[r_pos]
    meta = (tmp_path / "metadata.txt").read_text()
    assert "format_version=1" in meta
    assert "dataset_digest=" + draws.dataset_digest in meta
    assert "voters=V01,V02" in meta


def test_empty_archive_round_trip(tmp_path):
    model = ModelConfig(k=2, scale=ScoreScale(values=(0, 1, 2)))
    data = tiny_dataset()
    draws = make_archive(model, data, [[], []], thin=1, seed=0)
    assert draws.total_draws == 0
    write_archive(draws, tmp_path)
    back = read_archive(tmp_path)
    assert back.total_draws == 0
    assert back.draws_per_chain == 0
    assert back.layout.columns == draws.layout.columns


def test_missing_metadata_raises(tmp_path):
    with pytest.raises(DataError, match="metadata not found"):
        read_archive(tmp_path)


def test_missing_chain_file_raises(tmp_path):
    model, data, draws = archive_fixture()
    write_archive(draws, tmp_path)
    (tmp_path / "chain_2.csv").unlink()
    with pytest.raises(DataError, match="chain file missing"):
        read_archive(tmp_path)


def test_column_traces_and_stacking():
    model, data, draws = archive_fixture()
    traces = draws.column("psi")
    assert len(traces) == 2
    assert traces[0].shape == (3,)
    stacked = draws.stacked()
    assert stacked.shape == (6, draws.layout.n_columns)
    i = draws.layout.column_index("psi")
    assert np.array_equal(stacked[:3, i], traces[0])
    assert np.array_equal(stacked[3:, i], traces[1])
