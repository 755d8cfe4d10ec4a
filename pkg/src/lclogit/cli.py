"""Command-line entry point: design, simulate, estimate, wtp, recover.

Exit codes: 0 success, 1 user or data error, 2 completed with warnings
(flagged design, non-convergence, identification or WTP warnings).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .choice_data import (
    DEFAULT_SCHEMA,
    DataError,
    Dataset,
    covariates_from_config,
    load_dataset,
    save_dataset,
    schema_from_config,
)
from .design import DesignConfig, DesignError, generate_design, read_design_csv, write_design_csv
from .estimation import FitOptions, fit
from .likelihood import ImpossibleResponseError
from .model_spec import ModelSpec, SpecError, fold_redundant_terms, load_spec, validate_spec
from .simulate import (
    SimConfig,
    constant_membership,
    load_covariate_generators,
    naysayer_bias_demo,
    recovery_experiment,
    simulate_population,
    write_truth_csv,
)
from .wtp import (
    FittedModel,
    SegmentShares,
    WtpTable,
    choice_prob_profile,
    segment_shares,
    wtp_table,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("lclogit")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2
FIT_FORMAT = "lclogit-fit/1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for warnings here
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Merged settings: defaults < config file < command-line flags.

    Relative paths in a config file are resolved against its directory.
    """

    seed: int = 0
    threads: int | None = None
    out: Path = Path("lclogit-out")
    attributes: tuple = DEFAULT_SCHEMA
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)
    base_dir: Path = Path(".")
    source: str | None = None

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from exc
        attrs = schema_from_config(data["attributes"]) if "attributes" in data else DEFAULT_SCHEMA
        sections = {k: dict(v) for k, v in data.items() if isinstance(v, dict)}
        base = p.parent
        out = Path(data["out"]) if "out" in data else Path("lclogit-out")
        return cls(
            seed=int(data.get("seed", 0)),
            threads=int(data["threads"]) if "threads" in data else None,
            out=out if out.is_absolute() else base / out,
            attributes=attrs,
            sections=sections,
            base_dir=base,
            source=str(p),
        )

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def path(self, section: str, key: str, override: str | None = None, required: bool = True) -> Path | None:
        if override is not None:
            return Path(override)
        v = self.get(section, key)
        if v is None:
            if required:
                raise UsageError(f"no {key} given (flag or [{section}] {key} in the config)")
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def set(self, section: str, key: str, value) -> None:
        if value is not None:
            self.sections.setdefault(section, {})[key] = value

    def echo(self, command: str) -> dict:
        def plain(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v

        return {
            "command": command,
            "version": __version__,
            "config_file": self.source,
            "seed": self.seed,
            "attributes": [a.to_dict() for a in self.attributes],
            "sections": plain(self.sections),
        }


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _clean(v):
    """JSON-safe copy: NaN and infinities become null, numpy scalars floats."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")


def _num(x) -> str:
    if x is None:
        return ""
    f = float(x)
    return repr(f) if math.isfinite(f) else ""


def write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


# ---------------------------------------------------------------------------
# Fit artifact
# ---------------------------------------------------------------------------


def fit_artifact(res, attributes) -> dict:
    se = res.se if res.se is not None else np.full(res.k, np.nan)
    return {
        "format": FIT_FORMAT,
        "spec": res.spec.to_dict(),
        "spec_digest": res.spec.digest(),
        "attributes": [a.to_dict() for a in attributes],
        "parameters": dict(zip(res.names, res.estimates.tolist())),
        "std_err": dict(zip(res.names, se.tolist())),
        "loglik": res.loglik,
        "k": res.k,
        "aic": res.aic,
        "bic": res.bic,
        "converged": res.converged,
        "grad_norm": res.grad_norm,
        "n_respondents": res.n_respondents,
        "n_observations": res.n_observations,
        "seed": res.seed,
        "message": res.message,
    }


@dataclass
class LoadedFit:
    model: FittedModel | None
    attributes: tuple
    shares: SegmentShares | None
    wtp: dict[str, dict[str, float | None]] | None  # class -> category -> value


def load_fit_artifact(path: Path) -> LoadedFit:
    """Read a fit artifact; embedded ``segment_shares``/``segment_wtp`` are optional.

    A hand-written artifact with only shares and segment WTP supports the
    aggregation step without any data.
    """
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"fit artifact not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from exc
    attrs = schema_from_config(data["attributes"]) if "attributes" in data else DEFAULT_SCHEMA
    model = None
    if "spec" in data and "parameters" in data:
        spec = ModelSpec.from_dict(data["spec"])
        digest = data.get("spec_digest")
        if digest is not None and digest != spec.digest():
            raise UsageError(f"{path}: spec digest does not match the embedded spec")
        model = FittedModel(spec, {k: float(v) for k, v in data["parameters"].items()})
    shares = None
    if "segment_shares" in data:
        sh = data["segment_shares"]
        shares = SegmentShares(tuple(sh), np.array([float(v) for v in sh.values()]))
    wtp = None
    if "segment_wtp" in data:
        wtp = {c: {k: (None if v is None else float(v)) for k, v in row.items()} for c, row in data["segment_wtp"].items()}
    if model is None and (shares is None or wtp is None):
        raise UsageError(f"{path}: needs either spec and parameters, or segment_shares and segment_wtp")
    return LoadedFit(model, attrs, shares, wtp)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _design_config(cfg: RunConfig) -> DesignConfig:
    d = DesignConfig()
    return DesignConfig(
        attributes=cfg.attributes,
        n_tasks=int(cfg.get("design", "tasks", d.n_tasks)),
        n_blocks=int(cfg.get("design", "blocks", d.n_blocks)),
        iterations=int(cfg.get("design", "iterations", d.iterations)),
        restarts=int(cfg.get("design", "restarts", d.restarts)),
        block_iterations=int(cfg.get("design", "block_iterations", d.block_iterations)),
        threshold=float(cfg.get("design", "threshold", d.threshold)),
        seed=cfg.seed,
    )


def _fit_options(cfg: RunConfig, section: str = "fit") -> FitOptions:
    d = FitOptions()
    g = lambda k, default: cfg.get(section, k, default)  # noqa: E731
    return FitOptions(
        max_iter=int(g("max_iter", d.max_iter)),
        grad_tol=float(g("grad_tol", d.grad_tol)),
        loglik_tol=float(g("loglik_tol", d.loglik_tol)),
        multistarts=int(g("multistarts", d.multistarts)),
        seed=cfg.seed,
        optimizer=str(g("optimizer", d.optimizer)),
        em_iterations=int(g("em_iterations", d.em_iterations)),
        membership_sd=float(g("membership_sd", d.membership_sd)),
        utility_sd=float(g("utility_sd", d.utility_sd)),
        newton_polish=bool(g("newton_polish", d.newton_polish)),
        threads=cfg.threads,
        compute_se=bool(g("compute_se", d.compute_se)),
    )


def _spec(cfg: RunConfig, section: str, override: str | None, fold: bool | None) -> ModelSpec:
    path = cfg.path(section, "spec", override)
    if not path.is_file():
        raise UsageError(f"spec file not found: {path}")
    spec = load_spec(path)
    if fold if fold is not None else bool(cfg.get(section, "fold_redundant", False)):
        spec = fold_redundant_terms(spec, [a for a in cfg.attributes if a.name == "category"][0].levels)
    return spec


def _dataset(cfg: RunConfig, args) -> Dataset:
    obs = cfg.path("data", "observations", args.observations)
    resp = cfg.path("data", "respondents", args.respondents)
    for p in (obs, resp):
        if not p.is_file():
            raise UsageError(f"data file not found: {p}")
    covs = cfg.get("data", "covariates")
    return load_dataset(obs, resp, cfg.attributes, covariates_from_config(covs) if covs is not None else None)


def _design_for(cfg: RunConfig, section: str, override: str | None):
    path = cfg.path(section, "design", override, required=False)
    if path is not None:
        if not path.is_file():
            raise UsageError(f"design file not found: {path}")
        return read_design_csv(path, cfg.attributes)
    return generate_design(_design_config(cfg), seed=cfg.seed, threads=cfg.threads)


def _sim_config(cfg: RunConfig, section: str, args, n: int) -> SimConfig:
    spec = _spec(cfg, section, args.spec, True if args.fold else None)
    params = spec.nominal_parameters()
    shares = cfg.get(section, "shares")
    if shares:
        spec, params = constant_membership(spec, {k: float(v) for k, v in shares.items()})
    cov_path = cfg.path(section, "covariates", args.covariates, required=False)
    gens = load_covariate_generators(cov_path) if cov_path is not None else ()
    design = _design_for(cfg, section, args.design)
    return SimConfig(spec, params, n, design, gens, cfg.seed)


def cmd_design(cfg: RunConfig, args) -> int:
    cfg.set("design", "tasks", args.tasks)
    cfg.set("design", "blocks", args.blocks)
    cfg.set("design", "iterations", args.iterations)
    cfg.set("design", "restarts", args.restarts)
    cfg.set("design", "threshold", args.threshold)
    dc = _design_config(cfg)
    design = generate_design(dc, seed=cfg.seed, threads=cfg.threads)
    out = cfg.out
    write_design_csv(design, out / "design.csv")
    diag = design.diagnostics.to_dict()
    diag.update({"warning": design.warning, "notes": list(design.notes), "seed": design.seed})
    write_json(out / "design_diagnostics.json", diag)
    log.info(
        "design: %d tasks, %d blocks, max|r|=%.4f, D-eff=%.4f",
        design.n_tasks, len(design.blocks), design.diagnostics.max_abs_correlation, design.diagnostics.d_efficiency,
    )
    return EXIT_WARN if design.warning else EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    n = args.n if args.n is not None else cfg.get("simulate", "n")
    if n is None:
        raise UsageError("number of respondents not given (--n or [simulate] n)")
    if int(n) < 1:
        raise UsageError("number of respondents must be at least 1")
    cfg.set("simulate", "n", int(n))
    sc = _sim_config(cfg, "simulate", args, int(n))
    sim = simulate_population(sc)
    out = cfg.out
    save_dataset(sim.dataset, out / "observations.csv", out / "respondents.csv")
    write_truth_csv(sim, out / "respondents.truth.csv")
    write_design_csv(sc.design, out / "design.csv")
    log.info("simulated %d respondents, %d observations", sim.dataset.n_respondents, sim.dataset.n_observations)
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, args) -> int:
    cfg.set("fit", "multistarts", args.multistarts)
    cfg.set("fit", "optimizer", args.optimizer)
    data = _dataset(cfg, args)
    spec = _spec(cfg, "model", args.spec, True if args.fold else None)
    report = validate_spec(spec, data)
    report.raise_for_errors()
    for w in report.warnings:
        log.warning(w)
    res = fit(data, spec, _fit_options(cfg))
    out = cfg.out
    write_rows(
        out / "parameters.csv",
        ("parameter", "value", "std_err", "t", "p"),
        ([r["parameter"], _num(r["value"]), _num(r["std_err"]), _num(r["t"]), _num(r["p"])] for r in res.table()),
    )
    write_json(out / "fit.json", fit_artifact(res, data.attributes))
    summary = {
        "loglik": res.loglik,
        "k": res.k,
        "aic": res.aic,
        "bic": res.bic,
        "converged": res.converged,
        "grad_norm": res.grad_norm,
        "n_respondents": res.n_respondents,
        "n_observations": res.n_observations,
        "best_start": res.best_start,
        "start_logliks": res.start_logliks,
        "seed": res.seed,
        "message": res.message,
        "warnings": report.warnings,
        "undefined_std_err": [n for n, s in zip(res.names, res.se if res.se is not None else []) if not np.isfinite(s)],
    }
    write_json(out / "summary.json", summary)
    log.info("lnL=%.4f k=%d converged=%s", res.loglik, res.k, res.converged)
    if not res.converged:
        log.warning("optimizer did not converge: %s", res.message)
    return EXIT_OK if res.converged and not report.warnings else EXIT_WARN


def _write_wtp(out: Path, shares: SegmentShares, kinds: Mapping[str, str], table: WtpTable) -> None:
    write_rows(
        out / "shares.csv",
        ("segment", "kind", "share"),
        ([c, kinds.get(c, ""), _num(s)] for c, s in zip(shares.classes, shares.shares)),
    )
    write_rows(out / "wtp.csv", table.rows()[0], table.rows()[1:])


def cmd_wtp(cfg: RunConfig, args) -> int:
    cfg.set("wtp", "mode", args.mode)
    cfg.set("wtp", "upper_bound", args.upper_bound)
    loaded = load_fit_artifact(cfg.path("wtp", "fit", args.fit))
    mode = cfg.get("wtp", "mode", "sample")
    upper = cfg.get("wtp", "upper_bound")
    upper = float(upper) if upper is not None else None
    out = cfg.out
    warn = False

    if loaded.wtp is not None and loaded.shares is not None:
        # aggregation only, from embedded segment results
        classes = loaded.shares.classes
        cats = sorted({k for row in loaded.wtp.values() for k in row}, key=_category_order(loaded.attributes))
        table = WtpTable(classes, tuple(cats), loaded.shares)
        for c in classes:
            for k in cats:
                table.values[(c, k)] = loaded.wtp.get(c, {}).get(k)
        kinds = {c.name: c.kind for c in loaded.model.spec.classes} if loaded.model else {}
        _write_wtp(out, loaded.shares, kinds, table)
        for k in cats:
            log.info("%s household average %.2f", k, table.household_average(k))
        return EXIT_OK

    data = _dataset(cfg, args)
    model = loaded.model
    shares = segment_shares(model, data)
    table = wtp_table(model, data, mode=mode, upper_bound=upper, shares=shares)
    _write_wtp(out, shares, {c.name: c.kind for c in model.spec.classes}, table)
    flagged = {k: v for k, v in table.flags.items() if v not in ("ok", "pinned_yes", "not_willing")}
    for (c, k), f in sorted(flagged.items()):
        log.warning("class %s, %s: %s", c, k, f)
        warn = True
    rows = []
    for c in model.spec.classes:
        for k in data.categories:
            if c.fixity_for(k) != "estimated":
                continue
            for a in data.attributes:
                if a.kind != "continuous":
                    continue
                grid = np.linspace(a.lower, a.upper, 21)
                curve = choice_prob_profile(c.name, k, a.name, grid, model, data.attributes)
                rows.extend([c.name, k, a.name, _num(x), _num(p), curve.shape] for x, p in zip(grid, curve.p_yes))
    write_rows(out / "curves.csv", ("segment", "category", "attribute", "value", "p_yes", "shape"), rows)
    return EXIT_WARN if warn else EXIT_OK


def _category_order(attributes):
    levels = next((a.levels for a in attributes if a.name == "category"), ())

    def key(k):
        return (levels.index(k), k) if k in levels else (len(levels), k)

    return key


def cmd_recover(cfg: RunConfig, args) -> int:
    cfg.set("recover", "n", args.n)
    cfg.set("recover", "replications", args.replications)
    cfg.set("fit", "multistarts", args.multistarts)
    n = int(cfg.get("recover", "n", 2000))
    if n < 1:
        raise UsageError("number of respondents must be at least 1")
    reps = int(cfg.get("recover", "replications", 1))
    if reps < 1:
        raise UsageError("replications must be at least 1")
    if args.fold is None and cfg.get("recover", "fold_redundant") is None:
        args.fold = True
    sc = _sim_config(cfg, "recover", args, n)
    opts = _fit_options(cfg)
    out = cfg.out
    if args.naysayer_demo or cfg.get("recover", "naysayer_demo", False):
        rows, conv = [], True
        summary = []
        for k in range(reps):
            rep = naysayer_bias_demo(replace(sc, seed=sc.seed + k), replace(opts, seed=opts.seed + k))
            rows.extend(rep.rows())
            conv &= all(v.fit.converged for v in rep.variants)
            summary.append(
                {
                    "seed": rep.seed,
                    "truth": rep.truth.household_wtp,
                    **{v.name: v.household_wtp for v in rep.variants},
                }
            )
        header = ("seed", "variant", "respondents", "category", "household_wtp", "relative_error")
        write_rows(
            out / "bias.csv",
            header,
            ([r["seed"], r["variant"], r["respondents"], r["category"], _num(r["household_wtp"]), _num(r["relative_error"])] for r in rows),
        )
        write_json(out / "bias_summary.json", {"replications": summary, "all_converged": conv})
        return EXIT_OK if conv else EXIT_WARN

    report = recovery_experiment(sc, opts, reps)
    header = ("seed", "parameter", "truth", "estimate", "std_err", "bias", "covered_95", "within_3se")
    write_rows(
        out / "recovery.csv",
        header,
        ([r[h] if h in ("seed", "parameter", "covered_95", "within_3se") else _num(r[h]) for h in header] for r in report.rows()),
    )
    per_rep = [
        {
            "seed": r.seed,
            "loglik": r.fit.loglik,
            "converged": r.fit.converged,
            "true_shares": dict(zip(r.class_names, r.true_shares.tolist())),
            "fitted_shares": dict(zip(r.class_names, r.fitted_shares.tolist())),
            "max_share_error": float(np.max(np.abs(r.share_errors))),
            "all_utility_within_3se": all(p.within_3se for p in r.utility_parameters()),
        }
        for r in report.replications
    ]
    write_json(
        out / "recovery_summary.json",
        {
            "coverage_95": report.coverage(),
            "rmse": report.rmse(),
            "max_share_error": report.max_share_error(),
            "replications": per_rep,
        },
    )
    conv = all(r.fit.converged for r in report.replications)
    return EXIT_OK if conv else EXIT_WARN


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=d, help="top-level seed (all randomness)")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--threads", type=int, default=d, help="worker cap (default: available cores)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lclogit", description="Latent-class referendum choice models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("design", help="generate a blocked referendum design")
    _global_flags(d, suppress=True)
    d.add_argument("--tasks", type=int)
    d.add_argument("--blocks", type=int)
    d.add_argument("--iterations", type=int)
    d.add_argument("--restarts", type=int)
    d.add_argument("--threshold", type=float)

    def model_flags(q):
        q.add_argument("--spec", help="model spec (TOML)")
        q.add_argument("--fold", action="store_true", default=None, help="fold redundant all-category terms")

    s = sub.add_parser("simulate", help="simulate respondents and votes from a spec")
    _global_flags(s, suppress=True)
    s.add_argument("--n", type=int, help="number of respondents")
    model_flags(s)
    s.add_argument("--covariates", help="covariate generator spec (TOML)")
    s.add_argument("--design", help="design CSV (default: generate one)")

    def data_flags(q):
        q.add_argument("--observations", help="observations CSV")
        q.add_argument("--respondents", help="respondents CSV")

    e = sub.add_parser("estimate", help="fit a latent-class model")
    _global_flags(e, suppress=True)
    data_flags(e)
    model_flags(e)
    e.add_argument("--multistarts", type=int)
    e.add_argument("--optimizer", choices=("bfgs", "em-bfgs"))

    w = sub.add_parser("wtp", help="segment shares and willingness to pay")
    _global_flags(w, suppress=True)
    w.add_argument("--fit", help="fit artifact (JSON)")
    data_flags(w)
    w.add_argument("--mode", choices=("sample", "midpoint"))
    w.add_argument("--upper-bound", type=float, dest="upper_bound")

    r = sub.add_parser("recover", help="parameter recovery or nay-sayer bias study")
    _global_flags(r, suppress=True)
    r.add_argument("--n", type=int)
    model_flags(r)
    r.add_argument("--covariates")
    r.add_argument("--design")
    r.add_argument("--replications", type=int)
    r.add_argument("--multistarts", type=int)
    r.add_argument("--naysayer-demo", action="store_true", dest="naysayer_demo")
    return p


COMMANDS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "wtp": cmd_wtp,
    "recover": cmd_recover,
}


def _setup_logging() -> None:
    level = os.environ.get("LCLOGIT_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise UsageError("seed must be non-negative")
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        elif cfg.threads is None:
            cfg.threads = os.cpu_count() or 1
        if cfg.threads < 1:
            raise UsageError("threads must be at least 1")
        if args.out is not None:
            cfg.out = Path(args.out)
        cfg.out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, args)
        write_json(cfg.out / f"{args.command}_run.json", cfg.echo(args.command))
        return code
    except UsageError as exc:
        print(f"lclogit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DataError as exc:
        print("lclogit: data error:\n  " + "\n  ".join(exc.problems), file=sys.stderr)
        return EXIT_ERROR
    except (SpecError, DesignError, ImpossibleResponseError, ValueError, KeyError, OSError) as exc:
        print(f"lclogit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
