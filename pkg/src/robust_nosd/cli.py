"""Command-line entry point: ``robust-nosd <command> [options]``.

Every command reads one JSON config (or a preset), writes machine-readable
JSON (and CSV where there is plot data) into ``--out`` and prints a
6-decimal summary table.  Exit status: 0 ok, 2 config or data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import influence as inf
from .bayes import HyperparameterError, PseudoPosterior
from .config import (DEFAULT_TUNING_GRID, ConfigError, RunConfig, build_config, counts_to_json, load_config,
                     parse_gamma_list, plan_to_json)
from .data import SIMULATION_VERSION, DataError
from .estimators import SingularMatrixError, fit, sandwich_covariance, select_tuning, wald_ci
from .hmc import hpd_interval, posterior_mean, sample
from .model import PARAM_NAMES, ModelDomainError, as_param_array
from .testing import EmptyRegionError, bayes_factor, gof_bootstrap

log = logging.getLogger("robust_nosd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (np.linalg.LinAlgError, FloatingPointError, ModelDomainError, EmptyRegionError,
                  HyperparameterError, RuntimeError)


class NumericFailure(RuntimeError):
    pass


# ----------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------

def _clean(obj):
    """JSON-ready copy: numpy to builtins, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _vec(x) -> dict:
    return dict(zip(PARAM_NAMES, (float(v) for v in as_param_array(x))))


def write_outputs(out_dir, files: dict) -> list:
    """Write ``{name: text}`` into ``out_dir``; each file appears complete or not at all."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)
    return [dest for _, dest in staged]


def _table(header, rows) -> str:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return "nan" if not np.isfinite(v) else f"{v:.6f}"
        return str(v)

    cells = [list(header)] + [[fmt(v) for v in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells) + "\n"


def _data_block(cfg: RunConfig) -> dict:
    return {"plan": plan_to_json(cfg.plan), "counts": counts_to_json(cfg.require_counts())}


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig):
    truth = cfg.generating_params()
    cfg.counts = None
    counts = cfg.require_counts()
    doc = {
        "plan": plan_to_json(cfg.plan),
        "counts": counts_to_json(counts),
        "truth": list(as_param_array(truth)),
        "seed": cfg.seed,
        "simulation_version": SIMULATION_VERSION,
    }
    rows = [[i + 1, grp.g, grp.s] + list(counts.cells[i]) for i, grp in enumerate(cfg.plan.groups)]
    head = ["group", "g", "s"] + [f"n{l + 1}{r + 1}" for l in range(cfg.plan.L) for r in range(2)] + ["k"]
    return {"counts.json": dumps(doc)}, _table(head, rows)


def cmd_fit(cfg: RunConfig):
    counts = cfg.require_counts()
    rows, table = [], []
    for g in cfg.gamma_list():
        res = fit(cfg.plan, counts, g, init=cfg.init)
        row = {
            "gamma": g,
            "estimator": "MLE" if g == 0 else "WMDPDE",
            "estimate": _vec(res.params),
            "objective": res.objective,
            "objective_kind": "loglik" if g == 0 else "wdpd",
            "converged": res.converged,
            "sweeps": res.iterations,
            "on_tail": res.at_bound(),
        }
        try:
            sw = sandwich_covariance(res.params, cfg.plan, g)
            ci = wald_ci(res.params, sw, cfg.level)
            row.update(cov=sw.cov, se=np.sqrt(np.diag(sw.cov)), ci=ci, error=None)
        except SingularMatrixError as exc:
            ci = np.full((4, 2), np.nan)
            row.update(cov=None, se=None, ci=None, error=str(exc))
        rows.append(row)
        table.append([g] + list(res.x) + [f"[{lo:.6f}, {hi:.6f}]" for lo, hi in ci])
    doc = {**_data_block(cfg), "level": cfg.level, "fits": rows}
    head = ["gamma"] + list(PARAM_NAMES) + [f"ci_{p}" for p in PARAM_NAMES]
    return {"fit.json": dumps(doc)}, _table(head, table)


def _start(cfg, counts, g):
    return cfg.init if cfg.init is not None else fit(cfg.plan, counts, g).params


def _chains(cfg, counts, g, hmc):
    post = PseudoPosterior(cfg.plan, counts, g, cfg.prior)
    return sample(post.logp, post.grad, hmc, _start(cfg, counts, g))


def _chains_csv(entries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("gamma", "chain", "draw") + PARAM_NAMES)
    for g, ch in entries:
        for c, chain in enumerate(ch.draws):
            for t, x in enumerate(chain):
                w.writerow([repr(g), c, t] + [repr(float(v)) for v in x])
    return buf.getvalue()


def cmd_bayes(cfg: RunConfig):
    counts = cfg.require_counts()
    hmc = cfg.hmc_config()
    rows, table, kept = [], [], []
    for g in cfg.gamma_list():
        ch = _chains(cfg, counts, g, hmc)
        mean = posterior_mean(ch)
        hpd = hpd_interval(ch, cfg.level)
        rows.append({
            "gamma": g,
            "estimator": "BE" if g == 0 else "WRBE",
            "estimate": _vec(mean),
            "hpd": hpd,
            "rhat": ch.rhat,
            "accept_rate": ch.accept_rate,
            "n_divergent": ch.n_divergent,
            "step_size": ch.step_size,
        })
        table.append([g] + list(as_param_array(mean)) + list(ch.rhat))
        kept.append((g, ch))
    doc = {**_data_block(cfg), "level": cfg.level, "prior": vars(cfg.prior), "hmc": vars(hmc), "posteriors": rows}
    files = {"bayes.json": dumps(doc)}
    if cfg.save_chains:
        files["chains.csv"] = _chains_csv(kept)
    head = ["gamma"] + list(PARAM_NAMES) + [f"rhat_{p}" for p in PARAM_NAMES]
    return files, _table(head, table)


def _hypothesis(cfg):
    if cfg.hypothesis is None:
        raise ConfigError("hypothesis: missing; give {'lambda0': [...], 'radius': ...}")
    return cfg.hypothesis


def cmd_bf(cfg: RunConfig):
    counts = cfg.require_counts()
    hyp = _hypothesis(cfg)
    hmc = cfg.hmc_config()
    rows, table = [], []
    for g in cfg.gamma_list():
        try:
            r = bayes_factor(cfg.plan, counts, g, cfg.prior, hyp, hmc, init=cfg.init)
        except EmptyRegionError as exc:
            log.warning("gamma=%g: %s", g, exc)
            rows.append({"gamma": g, "error": str(exc)})
            table.append([g, np.nan, np.nan, np.nan, "-"])
            continue
        rows.append({
            "gamma": g,
            "prior_odds": r.prior_odds,
            "posterior_odds": r.posterior_odds,
            "bf01": r.bf01,
            "category": r.category,
            "prior_inside": r.prior_inside,
            "posterior_inside": r.posterior_inside,
            "error": None,
        })
        table.append([g, r.prior_odds, r.posterior_odds, r.bf01, r.category])
    if all(r["error"] for r in rows):
        raise NumericFailure("no gamma gave draws on both sides of the null ball")
    doc = {
        **_data_block(cfg),
        "hypothesis": {"lambda0": list(_vec(hyp.lambda0).values()), "radius": hyp.radius, "rho0": hyp.rho0},
        "prior": vars(cfg.prior),
        "hmc": vars(hmc),
        "tests": rows,
    }
    return {"bf.json": dumps(doc)}, _table(["gamma", "prior_odds", "post_odds", "BF01", "evidence"], table)


def cmd_gof(cfg: RunConfig):
    counts = cfg.require_counts()
    r = gof_bootstrap(cfg.plan, counts, cfg.n_boot, cfg.seed, init=cfg.init)
    doc = {
        **_data_block(cfg),
        "mle": _vec(r.mle),
        "statistic": r.statistic,
        "p_value": r.p_value,
        "n_boot": r.n_boot,
        "n_failed": r.n_failed,
        "seed": cfg.seed,
    }
    return {"gof.json": dumps(doc)}, _table(["T", "p_value", "n_boot", "n_failed"],
                                              [[r.statistic, r.p_value, r.n_boot, r.n_failed]])


def cmd_tune(cfg: RunConfig):
    counts = cfg.require_counts()
    grid = cfg.gammas or cfg.tuning.get("grid", DEFAULT_TUNING_GRID)
    C1, C2 = cfg.tuning.get("C1", 0.5), cfg.tuning.get("C2", 0.5)
    try:
        best, rows = select_tuning(cfg.plan, counts, grid, C1, C2, init=cfg.init)
    except ValueError as exc:
        if isinstance(exc, (DataError, ModelDomainError)):
            raise
        raise ConfigError(f"tuning: {exc}") from None
    out = [{
        "gamma": r.gamma,
        "divergence": r.divergence,
        "trace": r.trace,
        "phi": r.phi,
        "estimate": None if r.params is None else _vec(r.params),
        "error": r.error,
    } for r in rows]
    doc = {**_data_block(cfg), "C1": C1, "C2": C2, "best_gamma": best, "rows": out}
    table = [[r.gamma, r.divergence, r.trace, r.phi, "*" if r.gamma == best else ""] for r in rows]
    return {"tune.json": dumps(doc)}, _table(["gamma", "divergence", "trace", "phi", ""], table)


def cmd_if(cfg: RunConfig):
    opts = cfg.influence
    estimators = opts.get("estimators", ("wmdpde", "wrbe"))
    gammas = cfg.gamma_list(default=(0.2, 0.4, 0.6, 0.8))
    if "wrbe" in estimators or "bf" in estimators:
        if any(g <= 0 for g in gammas):
            raise ConfigError("gamma: the WRBE and Bayes-factor influence functions need gamma > 0")
    t_max = opts.get("t_max", 1.5 * float(cfg.plan.tau[:, -1].max()))
    grid = np.linspace(0.0, t_max, opts.get("n_grid", 201))
    cause, group = opts.get("cause", 1), opts.get("group")
    if group is not None and group >= cfg.plan.I:
        raise ConfigError(f"influence.group: {group} is outside the plan's {cfg.plan.I} groups")
    observed = cfg.counts is not None
    if not observed and "params" not in opts and cfg.truth is None:
        raise ConfigError("counts: missing; give 'counts', a fixture, or a simulation preset")
    bayes_needed = "wrbe" in estimators or "bf" in estimators
    counts = cfg.require_counts() if observed or bayes_needed else None
    hmc = cfg.hmc_config() if bayes_needed else None
    curves, summary = [], []
    for g in gammas:
        # explicit point, else the fit to observed data, else the generating value
        if "params" in opts:
            at = opts["params"]
        elif observed:
            at = fit(cfg.plan, counts, g, init=cfg.init).params
        else:
            at = cfg.truth
        made = []
        if "wmdpde" in estimators:
            made.append(inf.wmdpde_curve(at, cfg.plan, g, grid, cause, group))
        if "wrbe" in estimators:
            ch = _chains(cfg, counts, g, hmc)
            made.append(inf.wrbe_curve(ch, cfg.plan, g, grid, cause, group))
        if "bf" in estimators:
            r = bayes_factor(cfg.plan, counts, g, cfg.prior, _hypothesis(cfg), hmc, init=cfg.init)
            made.append(inf.bayes_factor_curve(r.posterior_chains, cfg.plan, cfg.hypothesis, g, r.bf01, grid,
                                               cause, group))
        for c in made:
            if not np.all(np.isfinite(c.values)):
                raise NumericFailure(f"{c.estimator} influence at gamma={g} is not finite on the grid")
            summary.append({"gamma": g, "estimator": c.estimator, "at": _vec(at), "sup_norm": c.sup_norm()})
        curves.extend(made)
    doc = {"cause": cause, "group": group, "t_max": t_max, "n_grid": len(grid), "curves": summary}
    table = [[s["gamma"], s["estimator"], s["sup_norm"]] for s in summary]
    return {"influence.csv": inf.if_csv_text(curves), "influence.json": dumps(doc)}, _table(["gamma", "estimator", "sup|IF|"],
                                                                                   table)


COMMANDS = {
    "simulate": (cmd_simulate, "simulate failure counts from a preset or given parameters"),
    "fit": (cmd_fit, "MLE and WMDPDE fits with sandwich covariance and Wald intervals"),
    "bayes": (cmd_bayes, "Bayes and robust Bayes estimates by HMC, with HPD intervals"),
    "bf": (cmd_bf, "Bayes factor for a ball-shaped null hypothesis"),
    "gof": (cmd_gof, "parametric-bootstrap goodness of fit at the MLE"),
    "if": (cmd_if, "influence-function curves over contamination time (CSV)"),
    "tune": (cmd_tune, "select the tuning parameter by the Warwick-Jones criterion"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robust-nosd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--preset", type=str, default=None, help="sim1, sim2 or seer-pancreatic-2016")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=".", help="output directory (default: current)")
        p.add_argument("--gamma", type=str, default=None, help="comma-separated tuning parameters")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(args) -> int:
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        gammas = parse_gamma_list(args.gamma) if args.gamma is not None else None
        overrides = {"preset": args.preset, "seed": args.seed, "gammas": gammas}
        cfg = load_config(args.config, **overrides) if args.config else build_config(None, **overrides)
        files, table = COMMANDS[args.command][0](cfg)
    except (ConfigError, DataError) as exc:
        print(f"robust-nosd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"robust-nosd {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    try:
        paths = write_outputs(args.out, files)
    except OSError as exc:
        print(f"robust-nosd {args.command}: cannot write to {args.out}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(table)
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


def main(argv=None) -> int:
    return run(build_parser().parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
