"""Command line entry point: ``regfreq {cluster,fit,return-levels,validate,synth}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cluster import ClusterError
from .egpd import EgpdParams, FitError, Level, return_level_field
from .evaluate import EvaluationError, GofReport, qq_data, return_level_diff, write_qq_csv
from .ingest import SEASONS, DataError, load_grid
from .pipeline import cluster_season, fit_season, markers, validate_season, wet_samples
from .synth import SynthError, SynthSpec, write_synthetic

log = logging.getLogger("regfreq")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    format: str | None = None
    seasons: list[str] = field(default_factory=lambda: list(SEASONS))
    threshold: float = 1.0
    k: dict[str, int | str] = field(default_factory=dict)
    levels: list[str] = field(default_factory=lambda: [l.value for l in Level])
    periods: list[float] = field(default_factory=lambda: [10.0, 50.0, 100.0])
    out: str = "out"
    seed: int = 0
    threads: int = 1
    ad_fraction: float = 1 / 8
    n_sim: int = 999
    partition: str | None = None
    synth_spec: str | None = None
    synth_format: str = "binary"

    def k_for(self, season: str):
        if season not in self.k:
            raise UsageError(f"no k given for season {season}; pass --k N, --k scan or --k {season}=N")
        return self.k[season]

    def manifest(self, command: str) -> dict:
        return {"command": command, "version": __version__, "config": asdict(self)}


def _parse_k(text: str, seasons) -> dict:
    out = {}
    for part in str(text).split(","):
        part = part.strip()
        if "=" in part:
            season, val = part.split("=", 1)
            out[season.strip()] = _k_value(val)
        else:
            for s in seasons:
                out[s] = _k_value(part)
    return out


def _k_value(val: str):
    val = str(val).strip()
    if val == "scan":
        return "scan"
    try:
        k = int(val)
    except ValueError:
        raise UsageError(f"k must be an integer or 'scan', got {val!r}") from None
    if k < 2:
        raise UsageError("k must be at least 2")
    return k


def build_config(args: argparse.Namespace) -> RunConfig:
    """Config file values first, then command-line flags on top."""
    values: dict = {}
    if args.config:
        try:
            values = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
    cfg = RunConfig(**{k: v for k, v in values.items() if k != "k"})
    if isinstance(cfg.seasons, str):
        cfg.seasons = [cfg.seasons]
    if "k" in values:
        k = values["k"]
        cfg.k = {s: _k_value(v) for s, v in k.items()} if isinstance(k, dict) else _parse_k(str(k), cfg.seasons)
    for name in ("input", "format", "threshold", "out", "seed", "threads", "partition", "synth_spec",
                 "ad_fraction", "n_sim", "synth_format"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if args.season:
        cfg.seasons = [s.strip() for s in args.season.split(",")]
    if args.levels:
        cfg.levels = [l.strip().upper() for l in args.levels.split(",")]
    if args.periods:
        cfg.periods = [float(t) for t in args.periods.split(",")]
    if args.k:
        cfg.k.update(_parse_k(args.k, cfg.seasons))
    for s in cfg.seasons:
        if s not in SEASONS:
            raise UsageError(f"unknown season {s!r}")
    for l in cfg.levels:
        if l not in Level.__members__:
            raise UsageError(f"unknown level {l!r}")
    cfg.periods = [float(t) for t in cfg.periods]
    if any(t < 1 for t in cfg.periods):
        raise UsageError("return periods must be at least one year")
    if not cfg.threshold > 0:
        raise UsageError("threshold must be positive")
    return cfg


# ---------------------------------------------------------------------------
# file helpers


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_manifest(out: Path, cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    doc = cfg.manifest(command)
    if extra:
        doc["metadata"] = extra
    (out / f"run_manifest_{command}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _load_input(cfg: RunConfig):
    if not cfg.input:
        raise UsageError("--input is required")
    return load_grid(cfg.input, cfg.format)


def _partition_path(cfg: RunConfig, season: str) -> Path:
    if cfg.partition:
        return Path(cfg.partition.format(season=season))
    k = cfg.k.get(season)
    out = Path(cfg.out)
    if isinstance(k, int) and (out / f"partition_{season}_k{k}.csv").exists():
        return out / f"partition_{season}_k{k}.csv"
    return out / f"partition_{season}.csv"


def read_partition(path: Path) -> tuple[dict[str, int], dict[str, float]]:
    if not path.exists():
        raise DataError(f"partition file {path} not found; run `cluster` first")
    labels, sil = {}, {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            labels[row["site_id"]] = int(row["cluster"])
            sil[row["site_id"]] = float(row["silhouette"])
    return labels, sil


PARAM_HEADER = ["site_id", "season", "level", "cluster", "kappa", "sigma", "xi", "converged", "n_fit"]


def write_params(path: Path, season: str, params: dict[str, EgpdParams], n_fit: dict[str, int]) -> None:
    rows = []
    for s in sorted(params):
        p = params[s]
        rows.append([s, season, Level(p.level).value, "" if p.cluster_id is None else p.cluster_id,
                     repr(p.kappa), repr(p.sigma), repr(p.xi), int(p.converged), n_fit.get(s, 0)])
    _write_rows(path, PARAM_HEADER, rows)


def read_params(path: Path) -> dict[str, EgpdParams]:
    if not path.exists():
        raise DataError(f"parameter file {path} not found; run `fit` first")
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            out[row["site_id"]] = EgpdParams(float(row["kappa"]), float(row["sigma"]), float(row["xi"]),
                                             level=Level(row["level"]),
                                             cluster_id=int(row["cluster"]) if row["cluster"] else None,
                                             converged=bool(int(row["converged"])))
    return out


def read_wetdays(path: Path) -> dict[str, dict]:
    if not path.exists():
        raise DataError(f"wet-day table {path} not found; run `fit` first")
    with open(path) as fh:
        return {r["site_id"]: {"n_wds_mean": float(r["n_wds_mean"]), "lon": float(r["lon"]), "lat": float(r["lat"])}
                for r in csv.DictReader(fh)}


# ---------------------------------------------------------------------------
# subcommands


def cmd_cluster(cfg: RunConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sites = _load_input(cfg)
    meta = {}
    for season in cfg.seasons:
        k = cfg.k_for(season)
        samples = wet_samples(sites, season, cfg.threshold)
        try:
            field_, result = cluster_season(samples, season, k)
        except ClusterError as exc:
            raise ClusterError(f"season {season}: {exc}") from exc
        field_.to_csv(out / f"omega_{season}.csv")
        if k == "scan":
            report, parts = result
            report.to_csv(out / f"validity_{season}.csv")
            for kk, part in parts.items():
                part.to_csv(out / f"partition_{season}_k{kk}.csv", field_, season)
                _write_rows(out / f"markers_{season}_k{kk}.csv", ["site_id", "cluster", "marker"],
                            [[r["site_id"], r["cluster"], r["marker"]] for r in markers(part)])
            flagged = {r["k"]: r["flag"] for r in report.rows if r["flag"]}
            meta[season] = {"k": "scan", "flagged_k": flagged}
        else:
            part = result
            part.to_csv(out / f"partition_{season}.csv", field_, season)
            _write_rows(out / f"markers_{season}.csv", ["site_id", "cluster", "marker"],
                        [[r["site_id"], r["cluster"], r["marker"]] for r in markers(part)])
            meta[season] = {"k": k, "total_cost": part.total_cost, "sweeps": part.n_sweeps,
                            "degenerate_sites": int(field_.degenerate.sum())}
        meta[season]["omega_sample"] = field_.metadata["omega_sample"]
    _write_manifest(out, cfg, "cluster", meta)


def _fit_from_files(cfg: RunConfig, season: str, samples) -> FitResult:
    levels = [Level(l) for l in cfg.levels]
    partition = {}
    if Level.SEMIREGIONAL in levels or Level.REGIONAL in levels:
        partition, _ = read_partition(_partition_path(cfg, season))
    return fit_season(samples, partition, season, levels, cfg.threshold, cfg.threads)


def cmd_fit(cfg: RunConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sites = _load_input(cfg)
    meta = {}
    for season in cfg.seasons:
        samples = wet_samples(sites, season, cfg.threshold)
        fit = _fit_from_files(cfg, season, samples)
        n_fit = {s: int(smp.fit.size) for s, smp in samples.items()}
        for level in fit.levels:
            write_params(out / f"params_{season}_{level.value}.csv", season, fit.params(level), n_fit)
        _write_rows(out / f"wetdays_{season}.csv", ["site_id", "lon", "lat", "season", "n_wds_mean", "n_wet", "n_fit"],
                    [[s, repr(smp.lon), repr(smp.lat), season, repr(float(smp.n_wds_mean)), smp.wet_values.size,
                      smp.fit.size] for s, smp in samples.items()])
        _write_rows(out / f"unfitted_{season}.csv", ["site_id", "level", "reason"],
                    [[u["site_id"], u["level"], u["reason"]] for u in fit.unfitted])
        diag = {"n_sites": len(samples), "n_local": len(fit.local), "n_unfitted": len(fit.unfitted),
                "local_methods": {m: sum(p.method == m for p in fit.local.values()) for m in ("pwm", "mle")}}
        if fit.regional is not None:
            its = list(fit.regional.iterations.values())
            diag["regional"] = {"shape": {str(c): {"kappa0": k0, "xi0": x0} for c, (k0, x0) in fit.regional.shape.items()},
                                "max_iterations": max(its) if its else 0,
                                "n_not_converged": sum(not v for v in fit.regional.converged.values())}
        meta[season] = diag
    _write_manifest(out, cfg, "fit", meta)


def cmd_return_levels(cfg: RunConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {}
    for season in cfg.seasons:
        wet = read_wetdays(out / f"wetdays_{season}.csv")
        fields_ = {}
        for level in cfg.levels:
            params = read_params(out / f"params_{season}_{level}.csv")
            missing = [s for s in params if s not in wet]
            if missing:
                raise DataError(f"season {season}: no wet-day count for sites {missing[:5]}")
            for t in cfg.periods:
                f = return_level_field(params, {s: w["n_wds_mean"] for s, w in wet.items()}, t, season,
                                       Level(level), cfg.threshold,
                                       {s: (w["lon"], w["lat"]) for s, w in wet.items()})
                fields_[(level, t)] = f
                _write_rows(out / f"rl_{season}_{level}_T{t:g}.csv",
                            ["site_id", "lon", "lat", "season", "T_years", "return_level_mm", "level"], f.to_rows())
        diffs = {}
        for t in cfg.periods:
            if ("REGIONAL", t) in fields_ and ("LOCAL", t) in fields_:
                a, b = fields_[("REGIONAL", t)], fields_[("LOCAL", t)]
                common = sorted(set(a.site_ids) & set(b.site_ids))
                a, b = _restrict(a, common), _restrict(b, common)
                d = return_level_diff(a, b)
                _write_rows(out / f"rl_diff_{season}_T{t:g}.csv", ["site_id", "season", "T_years", "rel_diff"],
                            [[s, season, repr(t), repr(float(r))] for s, r in zip(d["site_ids"], d["rel_diff"])])
                diffs[f"T{t:g}"] = {"fraction_within_10pct": d["fraction_within_10pct"],
                                    "mean_abs_rel_diff": d["mean_abs_rel_diff"]}
        if diffs:
            (out / f"rl_diff_summary_{season}.json").write_text(json.dumps(diffs, indent=2, sort_keys=True))
        meta[season] = {"regional_vs_local": diffs}
    _write_manifest(out, cfg, "return-levels", meta)


def _restrict(f, sites):
    idx = [f.site_ids.index(s) for s in sites]
    return type(f)(f.season, f.period, f.level, list(sites), f.values[idx],
                   None if f.lon is None else f.lon[idx], None if f.lat is None else f.lat[idx])


def cmd_validate(cfg: RunConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sites = _load_input(cfg)
    rng = np.random.default_rng(cfg.seed)
    report = GofReport(seed=cfg.seed, fraction=cfg.ad_fraction)
    aic_rows = []
    for season in cfg.seasons:
        samples = wet_samples(sites, season, cfg.threshold)
        partition, sil = {}, {}
        ppath = _partition_path(cfg, season)
        if ppath.exists():
            partition, sil = read_partition(ppath)
        loaded = {Level(l): read_params(out / f"params_{season}_{l}.csv") for l in cfg.levels}
        n_clusters = len(set(partition.values()))
        _, scores = validate_season(loaded, samples, season, cfg.threshold, n_clusters, rng, cfg.ad_fraction,
                                    cfg.seed, sil, cfg.n_sim, report)
        for s in scores:
            aic_rows.append([season, s.level.value, repr(s.log_likelihood), s.n_sites, s.n_params, repr(s.aic)])
        # QQ data at the medoid of each cluster, or the first fitted site without a partition
        qq_sites = []
        if ppath.exists():
            with open(ppath) as fh:
                qq_sites = [r["site_id"] for r in csv.DictReader(fh) if r["is_medoid"] == "1"]
        for level, params in loaded.items():
            for site in (qq_sites or sorted(params)[:1]):
                if site in params and samples[site].test.size:
                    emp, mod = qq_data(params[site], samples[site].test, cfg.threshold)
                    write_qq_csv(out / f"qq_{season}_{level.value}_{site}.csv", site, season, level.value, emp, mod)
    report.to_csv(out / "gof.csv")
    report.write_summary(out / "gof_summary.json")
    _write_rows(out / "aic.csv", ["season", "level", "log_likelihood", "n_sites", "n_params", "aic"], aic_rows)
    _write_manifest(out, cfg, "validate", {"gof": report.summary()})


def cmd_synth(cfg: RunConfig) -> None:
    if not cfg.synth_spec:
        raise UsageError("synth needs --spec FILE (YAML or JSON)")
    try:
        spec_doc = yaml.safe_load(Path(cfg.synth_spec).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read synth spec {cfg.synth_spec}: {exc}") from exc
    spec_doc.setdefault("seed", cfg.seed)
    spec = SynthSpec.from_dict(spec_doc)
    out = Path(cfg.out)
    path = write_synthetic(spec, out, cfg.synth_format)
    _write_manifest(out, cfg, "synth", {"grid": path.name, "n_sites": spec.n_sites})


COMMANDS = {
    "cluster": cmd_cluster,
    "fit": cmd_fit,
    "return-levels": cmd_return_levels,
    "validate": cmd_validate,
    "synth": cmd_synth,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with RunConfig keys; flags override it")
    common.add_argument("--input", help="grid file: long CSV or dense-format JSON sidecar")
    common.add_argument("--format", choices=["csv", "binary"], help="input format (default: by suffix)")
    common.add_argument("--season", help="comma-separated seasons (SON,DJF,MAM,JJA)")
    common.add_argument("--k", help="clusters: N, 'scan', or SEASON=N pairs separated by commas")
    common.add_argument("--levels", help="comma-separated model levels (LOCAL,SEMIREGIONAL,REGIONAL)")
    common.add_argument("--periods", help="comma-separated return periods in years")
    common.add_argument("--threshold", type=float, help="wet-day threshold in mm (default 1)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--partition", help="partition CSV (may contain {season})")
    common.add_argument("--ad-fraction", dest="ad_fraction", type=float, help="share of sites tested (default 1/8)")
    common.add_argument("--n-sim", dest="n_sim", type=int, help="simulated samples per AD test (default 999)")
    common.add_argument("--spec", dest="synth_spec", help="synthetic grid spec for `synth`")
    common.add_argument("--synth-format", dest="synth_format", choices=["csv", "binary"])
    common.add_argument("-v", "--verbose", action="store_true")
    # flags live on the subcommands; a shared parent on both levels would let
    # the subcommand's None defaults overwrite values given before it
    parser = _Parser(prog="regfreq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"regfreq {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = build_config(args)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"regfreq: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SynthError, EvaluationError) as exc:
        print(f"regfreq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, ClusterError, ArithmeticError, FloatingPointError) as exc:
        print(f"regfreq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
