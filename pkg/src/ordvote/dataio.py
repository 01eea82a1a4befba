"""Reading, validating, writing and synthesising score panels.

Input format: four headered, comma-separated, UTF-8 tables.

* votes(voter,performer,year,score): one row per cast vote.  The voter
  and performer universes are exactly the identifiers appearing here.
* covariates(performer,year,language,act_type): one row per performance
  that received votes; language is English|Own|Mixed and act_type is
  Group|FemaleSolo|MaleSolo.  Rows for performances nobody voted on are
  ignored.
* adjacency(voter,performer,border): border is 0 or 1; missing pairs are 0.
* migration(voter,performer,stock): stock is the number of people of the
  performer country's origin currently living in the voter's country
  (that direction, always); missing pairs are treated as absent and
  contribute exactly zero to the structured mean.  Pass log_migration to
  work with log(1 + stock) instead of the raw stock.

The canonical writer sorts rows (votes by voter, performer, year;
covariates by performer, year; pair tables by voter, performer), emits
only border-1 adjacency rows and recorded migration rows, and stores
years relative to the earliest vote year, so write -> load -> write is
byte-stable.  The dataset digest is a SHA-256 over that canonical form.
"""
from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InvariantViolation
from .model import (
    ActType,
    CovariateProfile,
    Dataset,
    Language,
    ModelConfig,
    N_BETA,
    PairStructure,
    ParameterState,
    ScoreScale,
    _check_identifier,
    category_prob_matrix,
    theta_vector,
)

VOTES_COLUMNS = ("voter", "performer", "year", "score")
COVARIATES_COLUMNS = ("performer", "year", "language", "act_type")
ADJACENCY_COLUMNS = ("voter", "performer", "border")
MIGRATION_COLUMNS = ("voter", "performer", "stock")

_LANGUAGE_TOKENS = {
    "English": Language.ENGLISH,
    "Own": Language.OWN,
    "Mixed": Language.MIXED,
}
_ACT_TOKENS = {
    "Group": ActType.GROUP,
    "FemaleSolo": ActType.FEMALE_SOLO,
    "MaleSolo": ActType.MALE_SOLO,
}
_LANGUAGE_NAMES = {v: k for k, v in _LANGUAGE_TOKENS.items()}
_ACT_NAMES = {v: k for k, v in _ACT_TOKENS.items()}


@dataclass(frozen=True)
class InputBundle:
    """Paths of the input tables plus read options.

    adjacency and migration may be None; the corresponding structure then
    holds zeros (all migration absent).
    """

    votes: Path
    covariates: Path
    adjacency: Path | None = None
    migration: Path | None = None
    scale: ScoreScale | None = None
    log_migration: bool = False


def _read_table(path, columns) -> list[tuple[int, list[str]]]:
    """Rows of a headered CSV as (row number, fields); header is row 1."""
    name = os.path.basename(str(path))
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{name}: cannot read file: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{name}: empty file, expected header {','.join(columns)}")
        if [h.strip() for h in header] != list(columns):
            raise DataError(
                f"{name} row 1: expected header {','.join(columns)}, got {','.join(header)}"
            )
        rows = []
        for rownum, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(columns):
                raise DataError(
                    f"{name} row {rownum}: expected {len(columns)} fields, found {len(fields)}"
                )
            rows.append((rownum, [f.strip() for f in fields]))
        return rows


def _ident(token: str, name: str, rownum: int, column: str) -> str:
    try:
        return _check_identifier(token)
    except DataError as exc:
        raise DataError(f"{name} row {rownum}: bad {column}: {exc}") from None


def _int(token: str, name: str, rownum: int, column: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise DataError(
            f"{name} row {rownum}: {column} must be an integer, got {token!r}"
        ) from None


def _float(token: str, name: str, rownum: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(
            f"{name} row {rownum}: {column} must be a number, got {token!r}"
        ) from None
    if not np.isfinite(value):
        raise DataError(f"{name} row {rownum}: {column} must be finite, got {token!r}")
    return value


def load(bundle: InputBundle) -> Dataset:
    """Read an input bundle into a validated Dataset.

    Every structural problem is reported with the offending file and row:
    malformed fields, off-scale scores, self-votes, duplicate records,
    identifiers that never appear in the votes table.
    """
    scale = bundle.scale if bundle.scale is not None else ScoreScale()
    votes_name = os.path.basename(str(bundle.votes))

    rows = _read_table(bundle.votes, VOTES_COLUMNS)
    if not rows:
        raise DataError(f"{votes_name}: no records")
    seen: set[tuple[str, str, int]] = set()
    raw: list[tuple[str, str, int, int]] = []
    for rownum, f in rows:
        voter = _ident(f[0], votes_name, rownum, "voter")
        performer = _ident(f[1], votes_name, rownum, "performer")
        year = _int(f[2], votes_name, rownum, "year")
        score = _float(f[3], votes_name, rownum, "score")
        if voter == performer:
            raise DataError(
                f"{votes_name} row {rownum}: self-vote {voter} -> {performer} is not allowed"
            )
        try:
            cat = scale.category(score)
        except DataError as exc:
            raise DataError(f"{votes_name} row {rownum}: {exc}") from None
        key = (voter, performer, year)
        if key in seen:
            raise DataError(
                f"{votes_name} row {rownum}: duplicate vote {voter} -> {performer} in year {year}"
            )
        seen.add(key)
        raw.append((voter, performer, year, cat))

    voters = tuple(sorted({r[0] for r in raw}))
    performers = tuple(sorted({r[1] for r in raw}))
    v_index = {v: i for i, v in enumerate(voters)}
    p_index = {p: i for i, p in enumerate(performers)}
    base_year = min(r[2] for r in raw)

    voter_idx = np.array([v_index[r[0]] for r in raw], dtype=np.intp)
    performer_idx = np.array([p_index[r[1]] for r in raw], dtype=np.intp)
    year = np.array([r[2] - base_year for r in raw], dtype=np.int64)
    category = np.array([r[3] for r in raw], dtype=np.intp)

    needed = {(p_index[r[1]], r[2] - base_year) for r in raw}
    profiles = _load_profiles(bundle.covariates, p_index, base_year, needed)
    missing = sorted(needed - set(profiles))
    if missing:
        p, t = missing[0]
        raise DataError(
            f"{os.path.basename(str(bundle.covariates))}: missing covariates for "
            f"performer {performers[p]} in year {t + base_year}"
            + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else "")
        )

    pairs = _load_structure(
        bundle.adjacency,
        bundle.migration,
        v_index,
        p_index,
        log_migration=bundle.log_migration,
    )
    observed = sorted({(int(v), int(p)) for v, p in zip(voter_idx, performer_idx)})
    return Dataset(
        scale=scale,
        voters=voters,
        performers=performers,
        voter_idx=voter_idx,
        performer_idx=performer_idx,
        year=year,
        category=category,
        profiles=profiles,
        pairs=pairs,
        observed_pairs=np.array(observed, dtype=np.intp).reshape(-1, 2),
    )


def load_dataset(
    votes,
    covariates,
    adjacency=None,
    migration=None,
    *,
    scale: ScoreScale | None = None,
    log_migration: bool = False,
) -> Dataset:
    """Path-arguments convenience wrapper around load()."""
    return load(
        InputBundle(
            votes=Path(votes),
            covariates=Path(covariates),
            adjacency=None if adjacency is None else Path(adjacency),
            migration=None if migration is None else Path(migration),
            scale=scale,
            log_migration=log_migration,
        )
    )


def _load_profiles(path, p_index, base_year, needed):
    name = os.path.basename(str(path))
    profiles: dict[tuple[int, int], CovariateProfile] = {}
    seen: set[tuple[str, int]] = set()
    for rownum, f in _read_table(path, COVARIATES_COLUMNS):
        performer = _ident(f[0], name, rownum, "performer")
        year = _int(f[1], name, rownum, "year")
        if f[2] not in _LANGUAGE_TOKENS:
            raise DataError(
                f"{name} row {rownum}: language must be one of "
                f"{'|'.join(_LANGUAGE_TOKENS)}, got {f[2]!r}"
            )
        if f[3] not in _ACT_TOKENS:
            raise DataError(
                f"{name} row {rownum}: act_type must be one of "
                f"{'|'.join(_ACT_TOKENS)}, got {f[3]!r}"
            )
        key = (performer, year)
        if key in seen:
            raise DataError(
                f"{name} row {rownum}: duplicate covariates for {performer} in year {year}"
            )
        seen.add(key)
        if performer not in p_index:
            continue  # no votes ever mention this performer
        offset = year - base_year
        if (p_index[performer], offset) not in needed:
            continue  # performance nobody voted on
        profiles[(p_index[performer], offset)] = CovariateProfile(
            year_offset=offset,
            language=_LANGUAGE_TOKENS[f[2]],
            act_type=_ACT_TOKENS[f[3]],
        )
    return profiles


def _load_structure(adjacency, migration, v_index, p_index, *, log_migration):
    shape = (len(v_index), len(p_index))
    border = np.zeros(shape, dtype=np.int8)
    stock = np.zeros(shape)
    present = np.zeros(shape, dtype=bool)

    if adjacency is not None:
        name = os.path.basename(str(adjacency))
        seen: set[tuple[str, str]] = set()
        for rownum, f in _read_table(adjacency, ADJACENCY_COLUMNS):
            voter = _ident(f[0], name, rownum, "voter")
            performer = _ident(f[1], name, rownum, "performer")
            _require_known(voter, v_index, "voter", name, rownum)
            _require_known(performer, p_index, "performer", name, rownum)
            if f[2] not in ("0", "1"):
                raise DataError(f"{name} row {rownum}: border must be 0 or 1, got {f[2]!r}")
            if (voter, performer) in seen:
                raise DataError(
                    f"{name} row {rownum}: duplicate adjacency entry {voter},{performer}"
                )
            seen.add((voter, performer))
            border[v_index[voter], p_index[performer]] = int(f[2])

    if migration is not None:
        name = os.path.basename(str(migration))
        seen = set()
        for rownum, f in _read_table(migration, MIGRATION_COLUMNS):
            voter = _ident(f[0], name, rownum, "voter")
            performer = _ident(f[1], name, rownum, "performer")
            _require_known(voter, v_index, "voter", name, rownum)
            _require_known(performer, p_index, "performer", name, rownum)
            value = _float(f[2], name, rownum, "stock")
            if value < 0:
                raise DataError(f"{name} row {rownum}: stock must be >= 0, got {f[2]!r}")
            if (voter, performer) in seen:
                raise DataError(
                    f"{name} row {rownum}: duplicate migration entry {voter},{performer}"
                )
            seen.add((voter, performer))
            stock[v_index[voter], p_index[performer]] = (
                np.log1p(value) if log_migration else value
            )
            present[v_index[voter], p_index[performer]] = True

    return PairStructure(border=border, migration=stock, present=present)


def _require_known(ident, index, column, name, rownum):
    if ident not in index:
        raise DataError(
            f"{name} row {rownum}: {column} {ident!r} never appears in the votes table"
        )


# ---------------------------------------------------------------------------
# canonical writer and digest


def _num_token(value: float) -> str:
    """Shortest exact decimal token: integers bare, floats via repr."""
    value = float(value)
    if value.is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(value)


def _canonical_tables(data: Dataset) -> dict[str, str]:
    votes = sorted(
        (
            data.voters[data.voter_idx[i]],
            data.performers[data.performer_idx[i]],
            int(data.year[i]),
            data.scale.score(int(data.category[i])),
        )
        for i in range(data.n_records)
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VOTES_COLUMNS)
    for voter, performer, year, score in votes:
        w.writerow([voter, performer, year, score])
    votes_text = buf.getvalue()

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COVARIATES_COLUMNS)
    for (p, year), prof in sorted(data.profiles.items(), key=lambda kv: (data.performers[kv[0][0]], kv[0][1])):
        w.writerow(
            [
                data.performers[p],
                year,
                _LANGUAGE_NAMES[prof.language],
                _ACT_NAMES[prof.act_type],
            ]
        )
    cov_text = buf.getvalue()

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ADJACENCY_COLUMNS)
    for v, p in np.argwhere(data.pairs.border == 1):
        w.writerow([data.voters[v], data.performers[p], 1])
    adj_text = buf.getvalue()

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MIGRATION_COLUMNS)
    for v, p in np.argwhere(data.pairs.present):
        w.writerow([data.voters[v], data.performers[p], _num_token(data.pairs.migration[v, p])])
    mig_text = buf.getvalue()

    return {
        "votes.csv": votes_text,
        "covariates.csv": cov_text,
        "adjacency.csv": adj_text,
        "migration.csv": mig_text,
    }


def write_dataset(data: Dataset, directory) -> dict[str, Path]:
    """Write the canonical four-table form; returns the file paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {}
    for filename, text in _canonical_tables(data).items():
        path = directory / filename
        path.write_text(text, encoding="utf-8")
        out[filename] = path
    return out


def dataset_digest(data: Dataset) -> str:
    """SHA-256 hex digest of the canonical serialisation.

    Covers the score scale and both identifier universes as well as the
    four tables, so any semantic change to the dataset changes the digest.
    """
    h = hashlib.sha256()
    h.update(("scale:" + ",".join(str(v) for v in data.scale.values) + "\n").encode())
    h.update(("voters:" + ",".join(data.voters) + "\n").encode())
    h.update(("performers:" + ",".join(data.performers) + "\n").encode())
    for filename, text in sorted(_canonical_tables(data).items()):
        h.update(filename.encode() + b"\0")
        h.update(text.encode())
        h.update(b"\0")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# validation report


@dataclass
class ValidationReport:
    """Shape summary plus a list of problems (empty when the data is sound)."""

    n_voters: int
    n_performers: int
    n_pairs: int
    n_records: int
    n_years: int
    occasions_min: int
    occasions_max: int
    occasions_mean: float
    covariate_rows: int
    structure_only_pairs: list[tuple[str, str]] = field(default_factory=list)
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def lines(self) -> list[str]:
        out = [
            f"voters: {self.n_voters}",
            f"performers: {self.n_performers}",
            f"observed pairs: {self.n_pairs}",
            f"records: {self.n_records}",
            f"years: {self.n_years}",
            f"occasions per pair: min {self.occasions_min}, "
            f"max {self.occasions_max}, mean {self.occasions_mean:.3f}",
            f"covariate rows in use: {self.covariate_rows}",
            f"structure-only pairs (adjacency or migration, no votes): "
            f"{len(self.structure_only_pairs)}",
        ]
        for v, p in self.structure_only_pairs[:20]:
            out.append(f"  structure-only: {v},{p}")
        if len(self.structure_only_pairs) > 20:
            out.append(f"  ... {len(self.structure_only_pairs) - 20} more")
        if self.issues:
            out.append(f"issues: {len(self.issues)}")
            out.extend(f"  ISSUE: {msg}" for msg in self.issues)
        else:
            out.append("issues: none")
        return out


def validate(data: Dataset) -> ValidationReport:
    """Report-only audit of a Dataset: shapes, balance, structure coverage."""
    issues: list[str] = []
    counts = data.pair_record_counts
    if data.n_records == 0:
        issues.append("dataset has no records")
    for h in np.flatnonzero(counts == 0):
        v, p = data.observed_pairs[h]
        issues.append(
            f"observed pair {data.voters[v]},{data.performers[p]} has no records"
        )
    observed = {(int(v), int(p)) for v, p in data.observed_pairs}
    structured = np.argwhere((data.pairs.border == 1) | data.pairs.present)
    structure_only = [
        (data.voters[v], data.performers[p])
        for v, p in structured
        if (int(v), int(p)) not in observed
    ]
    years = np.unique(data.year)
    return ValidationReport(
        n_voters=data.n_voters,
        n_performers=data.n_performers,
        n_pairs=data.n_pairs,
        n_records=data.n_records,
        n_years=int(years.size),
        occasions_min=int(counts.min()) if counts.size else 0,
        occasions_max=int(counts.max()) if counts.size else 0,
        occasions_mean=float(counts.mean()) if counts.size else 0.0,
        covariate_rows=len(data.profiles),
        structure_only_pairs=sorted(structure_only),
        issues=issues,
    )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class TrueParameters:
    """A generating state tied to the design it generated (or will generate).

    The design carries the full panel layout (who votes for whom and when,
    covariates, adjacency, migration); its score categories are whatever
    the design was built or simulated with and are replaced on simulate().
    """

    state: ParameterState
    design: Dataset

    def __post_init__(self):
        k, p = self.state.delta.shape
        if p != self.design.n_performers:
            raise InvariantViolation("delta width must equal the design's performer count")
        if self.state.alpha.shape != (self.design.n_pairs,):
            raise InvariantViolation("alpha length must equal the design's pair count")
        if self.state.regions.shape != (self.design.n_voters,):
            raise InvariantViolation("regions length must equal the design's voter count")


def make_design(
    n_voters: int,
    n_performers: int,
    n_years: int,
    rng,
    *,
    vote_fraction: float = 1.0,
    border_prob: float = 0.25,
    migration_prob: float = 0.5,
    migration_scale: float = 1.0,
    scale: ScoreScale | None = None,
) -> Dataset:
    """Synthetic panel layout with placeholder scores (lowest category).

    Covariates cycle deterministically through the language and act levels
    so every slope column varies; adjacency and migration are drawn from
    the given rng.  Scores are filled in by resample_scores / simulate.
    """
    if n_voters < 2 or n_performers < 1 or n_years < 1:
        raise DataError("a design needs at least 2 voters, 1 performer, 1 year")
    rng = np.random.default_rng(rng)
    scale = scale if scale is not None else ScoreScale()
    width_v = len(str(n_voters))
    width_p = len(str(n_performers))
    all_voters = tuple(f"V{i + 1:0{width_v}d}" for i in range(n_voters))
    all_performers = tuple(f"P{j + 1:0{width_p}d}" for j in range(n_performers))

    triples = [
        (v, p, t)
        for v in range(n_voters)
        for p in range(n_performers)
        for t in range(n_years)
    ]
    if vote_fraction < 1.0:
        keep = rng.uniform(size=len(triples)) < vote_fraction
        if not keep.any():
            keep[0] = True
        triples = [tr for tr, k in zip(triples, keep) if k]

    kept_v = sorted({v for v, _, _ in triples})
    kept_p = sorted({p for _, p, _ in triples})
    v_map = {v: i for i, v in enumerate(kept_v)}
    p_map = {p: j for j, p in enumerate(kept_p)}
    voters = tuple(all_voters[v] for v in kept_v)
    performers = tuple(all_performers[p] for p in kept_p)

    voter_idx = np.array([v_map[v] for v, _, _ in triples], dtype=np.intp)
    performer_idx = np.array([p_map[p] for _, p, _ in triples], dtype=np.intp)
    year = np.array([t for _, _, t in triples], dtype=np.int64)
    category = np.zeros(len(triples), dtype=np.intp)

    languages = tuple(Language)
    acts = tuple(ActType)
    needed_pt = {(p_map[p], t) for _, p, t in triples}
    profiles = {
        (pj, t): CovariateProfile(
            year_offset=t,
            language=languages[(kept_p[pj] + t) % len(languages)],
            act_type=acts[(kept_p[pj] + 2 * t) % len(acts)],
        )
        for pj, t in needed_pt
    }

    shape = (len(voters), len(performers))
    border = (rng.uniform(size=shape) < border_prob).astype(np.int8)
    present = rng.uniform(size=shape) < migration_prob
    stock = np.where(present, rng.exponential(migration_scale, size=shape), 0.0)
    observed = sorted({(int(v), int(p)) for v, p in zip(voter_idx, performer_idx)})
    return Dataset(
        scale=scale,
        voters=voters,
        performers=performers,
        voter_idx=voter_idx,
        performer_idx=performer_idx,
        year=year,
        category=category,
        profiles=profiles,
        pairs=PairStructure(border=border, migration=stock, present=present),
        observed_pairs=np.array(observed, dtype=np.intp).reshape(-1, 2),
    )


def draw_true_state(
    model: ModelConfig,
    design: Dataset,
    rng,
    *,
    beta_scale: float = 0.05,
    effect_scale: float = 0.8,
    delta_scale: float = 1.5,
    sigma_alpha: float = 0.5,
) -> ParameterState:
    """Moderate-effect-size generating state for recovery experiments.

    Unlike a diffuse-prior draw this keeps linear predictors in a range
    where every score category has real mass.  Cluster labels are balanced
    (round-robin after shuffling) so no cluster starts empty.
    """
    rng = np.random.default_rng(rng)
    s = model.scale.n_categories
    frac = np.arange(1, s) / s
    cutpoints = np.log(frac) - np.log1p(-frac)
    v, p, h, k = design.n_voters, design.n_performers, design.n_pairs, model.k
    regions = np.arange(v, dtype=np.intp) % k
    rng.shuffle(regions)
    counts = np.bincount(regions, minlength=k).astype(float)
    zeta = counts / counts.sum() if counts.all() else np.full(k, 1.0 / k)
    state = ParameterState(
        cutpoints=cutpoints,
        beta=rng.normal(0.0, beta_scale, size=N_BETA),
        alpha=np.zeros(h),
        gamma=0.0 if model.pin_gamma else float(rng.normal(0.0, effect_scale / 2)),
        delta=rng.normal(0.0, delta_scale, size=(k, p)),
        psi=float(rng.normal(0.0, effect_scale)),
        phi=float(rng.normal(0.0, effect_scale)),
        regions=regions,
        zeta=zeta,
        sigma_alpha=sigma_alpha,
        sigma_delta=delta_scale,
    )
    theta = theta_vector(state, design)
    state.alpha = theta + sigma_alpha * rng.standard_normal(h)
    return state


def resample_scores(state: ParameterState, data: Dataset, rng) -> Dataset:
    """New Dataset with categories drawn from the model at the given state."""
    rng = np.random.default_rng(rng)
    mu = data.design @ state.beta + state.alpha[data.pair_id]
    probs = category_prob_matrix(state.cutpoints, mu)
    cum = np.cumsum(probs, axis=1)
    u = rng.uniform(size=data.n_records)
    category = (u[:, None] * cum[:, -1:] > cum).sum(axis=1)
    category = np.minimum(category, data.scale.n_categories - 1).astype(np.intp)
    return Dataset(
        scale=data.scale,
        voters=data.voters,
        performers=data.performers,
        voter_idx=data.voter_idx.copy(),
        performer_idx=data.performer_idx.copy(),
        year=data.year.copy(),
        category=category,
        profiles=dict(data.profiles),
        pairs=data.pairs,
        observed_pairs=data.observed_pairs.copy(),
    )


def simulate(true: TrueParameters, seed) -> Dataset:
    """Scores drawn from the model at the true state, over the true design."""
    return resample_scores(true.state, true.design, np.random.default_rng(seed))


def write_true_parameters(true: TrueParameters, path) -> Path:
    """Sidecar CSV (parameter,value) naming scalars like the draw archive."""
    from .draws import ParameterLayout

    model = ModelConfig(k=true.state.delta.shape[0], scale=true.design.scale)
    layout = ParameterLayout.for_dataset(model, true.design)
    row = layout.state_to_row(true.state, deviance=float("nan"))
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("parameter", "value"))
    for name, value in zip(layout.columns, row):
        if name == "deviance":
            continue
        if name.startswith("R."):
            w.writerow((name, str(int(value))))
        else:
            w.writerow((name, repr(float(value))))
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path
