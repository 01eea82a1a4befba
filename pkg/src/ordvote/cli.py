"""Command-line front end.

Subcommands: simulate, fit, diagnose, compare, report, validate.  Options
resolve in precedence order: explicit flag, then config file (flat
key=value lines, # comments allowed), then the ORDVOTE_SEED environment
variable (seed only), then built-in defaults.  Every run that writes
files finishes by atomically writing manifest.json naming them; data
problems exit 2, configuration problems exit 3, anything else 1.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    exceedance,
    membership,
    performer_effects,
    relabel,
    select_model,
    summarize,
    write_bias_report,
    write_membership,
    write_performer_effects,
    write_summary,
)
from .dataio import (
    InputBundle,
    TrueParameters,
    dataset_digest,
    draw_true_state,
    load,
    make_design,
    resample_scores,
    validate as validate_dataset,
    write_dataset,
    write_true_parameters,
)
from .diagnostics import diagnose_all, dic, write_diagnostics
from .draws import PosteriorDraws, SamplerConfig, read_archive, write_archive
from .errors import ConfigError, DataError, OrdvoteError
from .figures import plot_exceedance, plot_membership, plot_performer_effects
from .mcmc import run
from .model import ModelConfig

SEED_ENV = "ORDVOTE_SEED"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit 3)."""

    def error(self, message):
        raise ConfigError(message)


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path} line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path} line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"{path} line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


_BOOL_TOKENS = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def _coerce(key: str, raw: str, kind) -> object:
    try:
        if kind is bool:
            token = raw.lower()
            if token not in _BOOL_TOKENS:
                raise ValueError
            return _BOOL_TOKENS[token]
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


class _Options:
    """Flag > config file > environment (seed only) > default."""

    def __init__(self, args, allowed: dict[str, type]):
        self.allowed = allowed
        self.args = args
        self.file_values: dict[str, str] = {}
        config_path = getattr(args, "config", None)
        if config_path:
            self.file_values = _read_config_file(config_path)
            for key in self.file_values:
                if key not in allowed:
                    raise ConfigError(
                        f"unknown config key {key!r}; known keys: {', '.join(sorted(allowed))}"
                    )

    def get(self, key: str, default):
        kind = self.allowed[key]
        flag = getattr(self.args, key.replace("-", "_"), None)
        if flag is not None:
            return flag
        if key in self.file_values:
            return _coerce(key, self.file_values[key], kind)
        if key == "seed" and os.environ.get(SEED_ENV):
            return _coerce(f"${SEED_ENV}", os.environ[SEED_ENV], int)
        return default


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config_echo: dict,
                    input_digests: dict, outputs: list[Path], started: float) -> Path:
    manifest = {
        "version": __version__,
        "command": command,
        "config": config_echo,
        "seed": config_echo.get("seed"),
        "input_digests": input_digests,
        "outputs": sorted(str(p) for p in outputs),
        "wall_clock_seconds": round(time.monotonic() - started, 3),
    }
    for p in outputs:
        if not Path(p).exists():
            raise OrdvoteError(f"internal error: manifest names missing output {p}")
    out_dir.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, out_dir / "manifest.json")
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return out_dir / "manifest.json"


def _bundle_from(options: _Options) -> tuple[InputBundle, dict[str, str]]:
    votes = options.get("votes", None)
    covariates = options.get("covariates", None)
    if not votes or not covariates:
        raise ConfigError("votes and covariates tables are required")
    adjacency = options.get("adjacency", None)
    migration = options.get("migration", None)
    bundle = InputBundle(
        votes=Path(votes),
        covariates=Path(covariates),
        adjacency=Path(adjacency) if adjacency else None,
        migration=Path(migration) if migration else None,
        log_migration=bool(options.get("log-migration", False)),
    )
    digests = {}
    for path in (bundle.votes, bundle.covariates, bundle.adjacency, bundle.migration):
        if path is None:
            continue
        try:
            digests[str(path)] = _file_sha256(path)
        except OSError as exc:
            raise DataError(f"cannot read input file {path}: {exc}") from exc
    return bundle, digests


_DATA_KEYS = {
    "votes": str,
    "covariates": str,
    "adjacency": str,
    "migration": str,
    "log-migration": bool,
}


def cmd_fit(args) -> int:
    started = time.monotonic()
    allowed = dict(_DATA_KEYS, k=int, chains=int, iters=int, burnin=int,
                   thin=int, seed=int, jobs=int, out=str)
    options = _Options(args, allowed)
    bundle, digests = _bundle_from(options)
    data = load(bundle)

    k = int(options.get("k", 1))
    chains = int(options.get("chains", 2))
    sampler_config = SamplerConfig(
        chains=chains,
        iterations=int(options.get("iters", 11_000)),
        burn_in=int(options.get("burnin", 1_000)),
        thin=int(options.get("thin", 20)),
        seed=int(options.get("seed", 0)),
    )
    model = ModelConfig(k=k, scale=data.scale)
    jobs = int(options.get("jobs", chains))
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    out_dir = Path(options.get("out", "fit-out"))

    draws = run(sampler_config, model, data, jobs=jobs)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = write_archive(draws, out_dir)
    echo = {
        "k": k, "chains": chains, "iters": sampler_config.iterations,
        "burnin": sampler_config.burn_in, "thin": sampler_config.thin,
        "seed": sampler_config.seed, "jobs": jobs, "out": str(out_dir),
        "log_migration": bundle.log_migration,
        "dataset_digest": draws.dataset_digest,
    }
    outputs.append(_write_manifest(out_dir, "fit", echo, digests, outputs, started))
    print(
        f"fit: {draws.total_draws} stored draws "
        f"({chains} chains x {draws.draws_per_chain}) -> {out_dir}"
    )
    return 0


def cmd_simulate(args) -> int:
    started = time.monotonic()
    allowed = {
        "voters": int, "performers": int, "years": int, "k": int,
        "seed": int, "out": str, "vote-fraction": float,
    }
    options = _Options(args, allowed)
    n_voters = int(options.get("voters", 10))
    n_performers = int(options.get("performers", 8))
    n_years = int(options.get("years", 15))
    k = int(options.get("k", 2))
    seed = int(options.get("seed", 0))
    fraction = float(options.get("vote-fraction", 1.0))
    if not 0 < fraction <= 1:
        raise ConfigError(f"vote-fraction must be in (0, 1], got {fraction}")
    out_dir = Path(options.get("out", "simulated"))

    rng = np.random.default_rng(seed)
    design = make_design(n_voters, n_performers, n_years, rng, vote_fraction=fraction)
    model = ModelConfig(k=k, scale=design.scale)
    state = draw_true_state(model, design, rng)
    data = resample_scores(state, design, rng)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = write_dataset(data, out_dir)
    outputs = list(written.values())
    outputs.append(
        write_true_parameters(TrueParameters(state=state, design=data), out_dir / "true_parameters.csv")
    )
    echo = {
        "voters": n_voters, "performers": n_performers, "years": n_years,
        "k": k, "seed": seed, "vote_fraction": fraction, "out": str(out_dir),
        "dataset_digest": dataset_digest(data),
    }
    outputs.append(_write_manifest(out_dir, "simulate", echo, {}, outputs, started))
    print(f"simulate: {data.n_records} records over {data.n_pairs} pairs -> {out_dir}")
    return 0


def cmd_diagnose(args) -> int:
    started = time.monotonic()
    options = _Options(args, {"archive": str, "out": str})
    archive_dir = options.get("archive", None)
    if not archive_dir:
        raise ConfigError("an archive directory is required")
    draws = read_archive(archive_dir)
    if draws.total_draws == 0:
        raise DataError(f"archive {archive_dir} holds no draws")
    out_dir = Path(options.get("out", archive_dir))
    rows = diagnose_all(draws)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "diagnostics.csv"
    write_diagnostics(rows, table)
    warned = [r for r in rows if r.flag == "warn"]
    degenerate = [r for r in rows if r.flag == "degenerate"]
    print(f"diagnose: {len(rows)} parameters, {len(warned)} warned, "
          f"{len(degenerate)} degenerate -> {table}")
    for r in warned[:25]:
        psrf = "n/a" if r.psrf is None else f"{r.psrf:.4f}"
        ess = "n/a" if r.ess is None else f"{r.ess:.1f}"
        print(f"  warn: {r.parameter} psrf={psrf} ess={ess}")
    if len(warned) > 25:
        print(f"  ... {len(warned) - 25} more warned parameters")
    echo = {"archive": str(archive_dir), "out": str(out_dir), "seed": None}
    digests = {"dataset": draws.dataset_digest}
    _write_manifest(out_dir, "diagnose", echo, digests, [table], started)
    return 0


def cmd_compare(args) -> int:
    started = time.monotonic()
    allowed = dict(_DATA_KEYS, out=str)
    options = _Options(args, allowed)
    if not args.archives:
        raise ConfigError("at least one archive is required")
    bundle, digests = _bundle_from(options)
    data = load(bundle)
    results = []
    for archive_dir in args.archives:
        draws = read_archive(archive_dir)
        if draws.total_draws == 0:
            raise DataError(f"archive {archive_dir} holds no draws")
        result = dic(draws, data)  # digest guard lives in dic()
        results.append((draws.model_config.k, result, archive_dir))
    chosen = select_model([(k, r) for k, r, _ in results])
    out_dir = Path(options.get("out", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "comparison.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        fh.write("k,dic,p_d,mean_deviance,archive,selected\n")
        for k, r, archive_dir in sorted(results):
            fh.write(
                f"{k},{r.dic!r},{r.p_d!r},{r.mean_deviance!r},"
                f"{archive_dir},{int(k == chosen)}\n"
            )
    print("k  dic            p_d")
    for k, r, _ in sorted(results):
        print(f"{k}  {r.dic:<13.4f}  {r.p_d:.4f}")
    print(f"selected k = {chosen}")
    echo = {"archives": [str(a) for a in args.archives], "out": str(out_dir), "seed": None}
    _write_manifest(out_dir, "compare", echo, digests, [table], started)
    return 0


def cmd_report(args) -> int:
    started = time.monotonic()
    options = _Options(args, {"archive": str, "out": str, "threshold": float})
    archive_dir = options.get("archive", None)
    if not archive_dir:
        raise ConfigError("an archive directory is required")
    threshold = float(options.get("threshold", 1.96))
    if threshold <= 0:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    draws = read_archive(archive_dir)
    if draws.total_draws == 0:
        raise DataError(f"archive {archive_dir} holds no draws")
    out_dir = Path(options.get("out", archive_dir))
    out_dir.mkdir(parents=True, exist_ok=True)

    aligned = relabel(draws)
    member = membership(aligned)
    report = exceedance(aligned, threshold)
    summary_rows = summarize(aligned)
    effect_rows = performer_effects(aligned)

    outputs = []
    write_membership(member, out_dir / "membership.csv")
    outputs.append(out_dir / "membership.csv")
    write_bias_report(report, out_dir / "bias_report.csv")
    outputs.append(out_dir / "bias_report.csv")
    write_summary(summary_rows, out_dir / "summary.csv")
    outputs.append(out_dir / "summary.csv")
    write_performer_effects(effect_rows, out_dir / "performer_effects.csv")
    outputs.append(out_dir / "performer_effects.csv")
    plot_membership(member, out_dir / "membership.png")
    outputs.append(out_dir / "membership.png")
    plot_exceedance(report, out_dir / "exceedance.png")
    outputs.append(out_dir / "exceedance.png")
    plot_performer_effects(effect_rows, out_dir / "performer_effects.png")
    outputs.append(out_dir / "performer_effects.png")

    flagged = sum(1 for r in report.rows if r.p_pos > 0.5 or r.p_neg > 0.5)
    echo = {
        "archive": str(archive_dir), "out": str(out_dir),
        "threshold": threshold, "seed": None,
    }
    digests = {"dataset": draws.dataset_digest}
    outputs.append(_write_manifest(out_dir, "report", echo, digests, outputs, started))
    print(
        f"report: {len(report.rows)} pairs, {flagged} with majority exceedance "
        f"probability -> {out_dir}"
    )
    return 0


def cmd_validate(args) -> int:
    options = _Options(args, dict(_DATA_KEYS))
    bundle, _ = _bundle_from(options)
    data = load(bundle)
    report = validate_dataset(data)
    for line in report.lines():
        print(line)
    print(f"dataset digest: {dataset_digest(data)}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ordvote", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ordvote {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_data_flags(p):
        p.add_argument("--votes", help="votes table (voter,performer,year,score)")
        p.add_argument("--covariates", help="covariates table (performer,year,language,act_type)")
        p.add_argument("--adjacency", help="adjacency table (voter,performer,border)")
        p.add_argument("--migration", help="migration table (voter,performer,stock)")
        p.add_argument("--log-migration", action="store_const", const=True, default=None,
                       help="model log(1 + stock) instead of the raw stock")

    def add_config_flag(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help=f"RNG seed (falls back to ${SEED_ENV})")

    p = sub.add_parser("fit", help="run the sampler and write a draw archive")
    add_data_flags(p)
    add_config_flag(p)
    p.add_argument("--k", type=int, help="number of latent clusters (default 1)")
    p.add_argument("--chains", type=int, help="number of chains (default 2)")
    p.add_argument("--iters", type=int, help="post-burn-in sweeps per chain (default 11000)")
    p.add_argument("--burnin", type=int, help="burn-in sweeps per chain (default 1000)")
    p.add_argument("--thin", type=int, help="keep every thin-th sweep (default 20)")
    p.add_argument("--jobs", type=int, help="parallel chain workers (default: chain count)")
    p.add_argument("--out", help="archive output directory (default fit-out)")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("simulate", help="write a synthetic dataset with known truth")
    add_config_flag(p)
    p.add_argument("--voters", type=int, help="number of voters (default 10)")
    p.add_argument("--performers", type=int, help="number of performers (default 8)")
    p.add_argument("--years", type=int, help="number of years (default 15)")
    p.add_argument("--k", type=int, help="number of latent clusters (default 2)")
    p.add_argument("--vote-fraction", type=float,
                   help="fraction of voter-performer-year cells that vote (default 1.0)")
    p.add_argument("--out", help="output directory (default simulated)")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("diagnose", help="convergence diagnostics for an archive")
    add_config_flag(p)
    p.add_argument("--archive", help="draw archive directory")
    p.add_argument("--out", help="output directory (default: the archive)")
    p.set_defaults(handler=cmd_diagnose)

    p = sub.add_parser("compare", help="DIC model comparison across archives")
    add_data_flags(p)
    add_config_flag(p)
    p.add_argument("archives", nargs="*", help="draw archive directories")
    p.add_argument("--out", help="output directory (default .)")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("report", help="membership, bias and summary reports")
    add_config_flag(p)
    p.add_argument("--archive", help="draw archive directory")
    p.add_argument("--threshold", type=float, help="exceedance threshold (default 1.96)")
    p.add_argument("--out", help="output directory (default: the archive)")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("validate", help="audit a dataset and print its shape")
    add_data_flags(p)
    add_config_flag(p)
    p.set_defaults(handler=cmd_validate)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        parser = build_parser()
        args = parser.parse_args(list(argv))
        return args.handler(args)
    except DataError as exc:
        print(f"ordvote: data error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"ordvote: config error: {exc}", file=sys.stderr)
        return 3
    except OrdvoteError as exc:
        print(f"ordvote: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"ordvote: unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
