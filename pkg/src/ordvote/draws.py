"""Draw archives: run configuration, flat parameter layout, CSV persistence.

An archive directory holds one CSV per chain (``chain_1.csv``, ...) plus a
plain-text ``metadata.txt`` sidecar recording the seed, the run and model
configuration, and the dataset digest.  Columns are stable and documented:

    lambda.1..lambda.{S-1}, beta.1..beta.5, gamma, psi, phi,
    alpha.{voter}.{performer} (observed pairs, voter-major order),
    delta.{k}.{performer} (clusters 1..K), R.{voter} (labels 1..K),
    zeta.1..zeta.K, sigma.alpha, sigma.delta, deviance

Floats are written with shortest round-trip formatting, so re-reading an
archive reproduces the draws bit for bit.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .model import Dataset, ModelConfig, N_BETA, ParameterState, ScoreScale

ARCHIVE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    """Run protocol: chain count, lengths, thinning, seed, adaptation.

    By default ``iterations`` counts post-burn-in sweeps (burn_in extra
    sweeps are discarded first); with ``iterations_include_burnin`` the
    total is ``iterations`` and the retained stretch is what remains after
    burn-in.  Proposal scales adapt for ``adapt_window`` sweeps of burn-in
    (all of burn-in when None) and are frozen afterwards.
    """

    chains: int = 2
    iterations: int = 11_000
    burn_in: int = 1_000
    thin: int = 20
    seed: int = 0
    adapt_window: int | None = None
    iterations_include_burnin: bool = False
    check_invariants: bool = False

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigError(f"chains must be >= 1, got {self.chains}")
        if self.iterations < 0 or self.burn_in < 0:
            raise ConfigError("iterations and burn_in must be >= 0")
        if self.thin < 1:
            raise ConfigError(f"thin must be >= 1, got {self.thin}")
        if self.adapt_window is not None and self.adapt_window < 0:
            raise ConfigError("adapt_window must be >= 0")
        if self.iterations_include_burnin and self.iterations < self.burn_in:
            raise ConfigError("iterations include burn-in but are shorter than it")

    @property
    def retained(self) -> int:
        if self.iterations_include_burnin:
            return self.iterations - self.burn_in
        return self.iterations

    @property
    def draws_per_chain(self) -> int:
        return self.retained // self.thin


class ParameterLayout:
    """Bijection between ParameterState and one flat archive row."""

    def __init__(
        self,
        scale: ScoreScale,
        k: int,
        voters: tuple[str, ...],
        performers: tuple[str, ...],
        pairs: tuple[tuple[str, str], ...],
    ):
        self.scale = scale
        self.k = int(k)
        self.voters = tuple(voters)
        self.performers = tuple(performers)
        self.pairs = tuple((v, p) for v, p in pairs)
        s = scale.n_categories

        cols: list[str] = [f"lambda.{i}" for i in range(1, s)]
        cols += [f"beta.{i}" for i in range(1, N_BETA + 1)]
        cols += ["gamma", "psi", "phi"]
        cols += [f"alpha.{v}.{p}" for v, p in self.pairs]
        cols += [f"delta.{c}.{p}" for c in range(1, self.k + 1) for p in self.performers]
        cols += [f"R.{v}" for v in self.voters]
        cols += [f"zeta.{c}" for c in range(1, self.k + 1)]
        cols += ["sigma.alpha", "sigma.delta", "deviance"]
        self.columns: tuple[str, ...] = tuple(cols)
        self._index = {name: i for i, name in enumerate(cols)}

        n_lam, n_pairs = s - 1, len(self.pairs)
        n_perf, n_vot = len(self.performers), len(self.voters)
        pos = 0
        self.lambda_slice = slice(pos, pos + n_lam); pos += n_lam
        self.beta_slice = slice(pos, pos + N_BETA); pos += N_BETA
        self.gamma_index = pos; pos += 1
        self.psi_index = pos; pos += 1
        self.phi_index = pos; pos += 1
        self.alpha_slice = slice(pos, pos + n_pairs); pos += n_pairs
        self.delta_slice = slice(pos, pos + self.k * n_perf); pos += self.k * n_perf
        self.region_slice = slice(pos, pos + n_vot); pos += n_vot
        self.zeta_slice = slice(pos, pos + self.k); pos += self.k
        self.sigma_alpha_index = pos; pos += 1
        self.sigma_delta_index = pos; pos += 1
        self.deviance_index = pos; pos += 1
        assert pos == len(cols)

    @classmethod
    def for_dataset(cls, model: ModelConfig, data: Dataset) -> "ParameterLayout":
        pairs = tuple(
            (data.voters[v], data.performers[p]) for v, p in data.observed_pairs
        )
        return cls(model.scale, model.k, data.voters, data.performers, pairs)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def column_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown archive column {name!r}") from None

    def state_to_row(self, state: ParameterState, deviance: float) -> np.ndarray:
        row = np.empty(self.n_columns)
        row[self.lambda_slice] = state.cutpoints
        row[self.beta_slice] = state.beta
        row[self.gamma_index] = state.gamma
        row[self.psi_index] = state.psi
        row[self.phi_index] = state.phi
        row[self.alpha_slice] = state.alpha
        row[self.delta_slice] = state.delta.reshape(-1)
        row[self.region_slice] = state.regions + 1  # archives are 1-based
        row[self.zeta_slice] = state.zeta
        row[self.sigma_alpha_index] = state.sigma_alpha
        row[self.sigma_delta_index] = state.sigma_delta
        row[self.deviance_index] = deviance
        return row

    def state_from_row(self, row: np.ndarray) -> tuple[ParameterState, float]:
        n_perf = len(self.performers)
        state = ParameterState(
            cutpoints=row[self.lambda_slice].copy(),
            beta=row[self.beta_slice].copy(),
            alpha=row[self.alpha_slice].copy(),
            gamma=float(row[self.gamma_index]),
            delta=row[self.delta_slice].reshape(self.k, n_perf).copy(),
            psi=float(row[self.psi_index]),
            phi=float(row[self.phi_index]),
            regions=np.rint(row[self.region_slice]).astype(np.intp) - 1,
            zeta=row[self.zeta_slice].copy(),
            sigma_alpha=float(row[self.sigma_alpha_index]),
            sigma_delta=float(row[self.sigma_delta_index]),
        )
        return state, float(row[self.deviance_index])


@dataclass
class PosteriorDraws:
    """Retained draws of every chain over one fixed layout."""

    layout: ParameterLayout
    chains: list[np.ndarray]
    sampler_config: SamplerConfig
    model_config: ModelConfig
    dataset_digest: str

    def __post_init__(self):
        width = self.layout.n_columns
        fixed = []
        for mat in self.chains:
            mat = np.asarray(mat, dtype=float)
            if mat.size == 0:
                mat = mat.reshape(0, width)
            if mat.ndim != 2 or mat.shape[1] != width:
                raise DataError(
                    f"chain matrix width {mat.shape} does not match layout ({width} columns)"
                )
            fixed.append(mat)
        self.chains = fixed

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def draws_per_chain(self) -> int:
        return int(self.chains[0].shape[0]) if self.chains else 0

    @property
    def total_draws(self) -> int:
        return int(sum(c.shape[0] for c in self.chains))

    def stacked(self) -> np.ndarray:
        """All chains concatenated, chain-major order."""
        return np.concatenate(self.chains, axis=0) if self.chains else np.empty((0, self.layout.n_columns))

    def column(self, name: str) -> list[np.ndarray]:
        """Per-chain traces of one scalar column."""
        i = self.layout.column_index(name)
        return [c[:, i] for c in self.chains]

    def with_chains(self, chains: list[np.ndarray]) -> "PosteriorDraws":
        return replace(self, chains=[c.copy() for c in chains])


def _format_value(column: str, value: float) -> str:
    if column.startswith("R."):
        return str(int(round(value)))
    return repr(float(value))


def write_archive(draws: PosteriorDraws, directory: str | Path) -> list[Path]:
    """Write chain CSVs plus the metadata sidecar; returns written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layout = draws.layout
    written = []
    header = ",".join(layout.columns)
    for c, mat in enumerate(draws.chains, start=1):
        path = directory / f"chain_{c}.csv"
        lines = [header]
        for row in mat:
            lines.append(",".join(_format_value(col, x) for col, x in zip(layout.columns, row)))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    sc, mc = draws.sampler_config, draws.model_config
    meta = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "seed": sc.seed,
        "chains": sc.chains,
        "iterations": sc.iterations,
        "burn_in": sc.burn_in,
        "thin": sc.thin,
        "adapt_window": "" if sc.adapt_window is None else sc.adapt_window,
        "iterations_include_burnin": int(sc.iterations_include_burnin),
        "k": mc.k,
        "scale": ",".join(str(v) for v in mc.scale.values),
        "sigma2_lambda": repr(float(mc.sigma2_lambda)),
        "q": repr(float(mc.q)),
        "dirichlet_concentration": ""
        if mc.dirichlet_concentration is None
        else ",".join(repr(float(a)) for a in mc.dirichlet_concentration),
        "logsd_lo": repr(float(mc.logsd_bounds[0])),
        "logsd_hi": repr(float(mc.logsd_bounds[1])),
        "pin_gamma": int(mc.pin_gamma),
        "voters": ",".join(layout.voters),
        "performers": ",".join(layout.performers),
        "dataset_digest": draws.dataset_digest,
    }
    meta_path = directory / "metadata.txt"
    meta_path.write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    written.append(meta_path)
    return written


def _parse_metadata(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise DataError(f"archive metadata not found: {path}")
    meta: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def read_archive(directory: str | Path) -> PosteriorDraws:
    """Reload an archive directory written by write_archive."""
    directory = Path(directory)
    meta = _parse_metadata(directory / "metadata.txt")
    try:
        version = int(meta["format_version"])
        if version != ARCHIVE_FORMAT_VERSION:
            raise DataError(f"unsupported archive format version {version}")
        sampler_config = SamplerConfig(
            chains=int(meta["chains"]),
            iterations=int(meta["iterations"]),
            burn_in=int(meta["burn_in"]),
            thin=int(meta["thin"]),
            seed=int(meta["seed"]),
            adapt_window=None if meta["adapt_window"] == "" else int(meta["adapt_window"]),
            iterations_include_burnin=bool(int(meta["iterations_include_burnin"])),
        )
        conc = meta["dirichlet_concentration"]
        model_config = ModelConfig(
            k=int(meta["k"]),
            scale=ScoreScale(tuple(int(v) for v in meta["scale"].split(","))),
            sigma2_lambda=float(meta["sigma2_lambda"]),
            q=float(meta["q"]),
            dirichlet_concentration=None
            if conc == ""
            else tuple(float(a) for a in conc.split(",")),
            logsd_bounds=(float(meta["logsd_lo"]), float(meta["logsd_hi"])),
            pin_gamma=bool(int(meta["pin_gamma"])),
        )
        voters = tuple(meta["voters"].split(",")) if meta["voters"] else ()
        performers = tuple(meta["performers"].split(",")) if meta["performers"] else ()
        digest = meta["dataset_digest"]
    except KeyError as exc:
        raise DataError(f"archive metadata missing key {exc}") from None

    chain_paths = []
    for c in range(1, sampler_config.chains + 1):
        path = directory / f"chain_{c}.csv"
        if not path.is_file():
            raise DataError(f"archive chain file missing: {path}")
        chain_paths.append(path)

    header = chain_paths[0].read_text().splitlines()[0].split(",")
    pairs = []
    for col in header:
        if col.startswith("alpha."):
            parts = col.split(".")
            if len(parts) != 3:
                raise DataError(f"cannot parse pair column {col!r}")
            pairs.append((parts[1], parts[2]))
    layout = ParameterLayout(model_config.scale, model_config.k, voters, performers, tuple(pairs))
    if tuple(header) != layout.columns:
        raise DataError(f"archive columns do not match the expected layout in {chain_paths[0]}")

    chains = []
    for path in chain_paths:
        lines = path.read_text().splitlines()
        if tuple(lines[0].split(",")) != layout.columns:
            raise DataError(f"archive columns differ across chains in {path}")
        if len(lines) == 1:
            chains.append(np.empty((0, layout.n_columns)))
        else:
            mat = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            if mat.shape[1] != layout.n_columns:
                raise DataError(f"ragged archive row count in {path}")
            chains.append(mat)

    return PosteriorDraws(
        layout=layout,
        chains=chains,
        sampler_config=sampler_config,
        model_config=model_config,
        dataset_digest=digest,
    )
