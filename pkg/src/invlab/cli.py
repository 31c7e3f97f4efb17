"""Command-line entry point: ``invlab simulate | fit | bench | mcmc | stability``.

Every subcommand accepts ``--config file.json``; explicit flags override file
values and unknown keys are rejected.  Exit codes: 0 success, 2 invalid input,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bayes, estimators, harness, stability
from .dataset import load_dataset, save_dataset
from .errors import NumericalError, ValidationError
from .fixtures import get_fixture
from .frame import cached_frame
from .numerics import Grid, field_to_json

log = logging.getLogger("invlab")

DEFAULTS = {
    "simulate": {"model": "darcy", "fixture": "bump", "n": 1024, "sigma": 0.05, "seed": 0,
                 "fine_n": None, "out": "dataset.csv"},
    "fit": {"data": None, "estimator": "plugin", "model": None, "fixture": None, "alpha": 3,
            "c_dim": 4.0, "out": "report.json", "dump_dir": None, "iters": 50, "tol": 1e-10,
            "beta_min": 2, "beta_max": 4, "A": 1.0, "alpha_min": 2},
    "rates": {"model": "darcy", "fixture": "bump", "alpha": 3, "d": 1,
              "n_grid": "512:16384", "reps": 20, "sigma": 0.05, "seed": 0, "c_dim": 4.0,
              "jobs": 1, "out": "rates"},
    "runtime": {"model": "darcy", "fixture": "bump", "alpha": 3, "d": 1,
                "n_grid": "4096:65536", "sigma": 0.05, "seed": 0, "c_dim": 4.0,
                "out": "runtime"},
    "mcmc": {"d": 1, "fixture": "bump", "n": 8192, "sigma": 0.05, "seed": 0, "alpha": 3,
             "dim": 8, "steps": 10000, "delta": None, "burn_in": 0.2, "f_min": 0.1,
             "prior_alpha": 2.0, "out": "mcmc"},
    "stability": {"model": "darcy", "pairs": 100, "n": 127, "d": 1, "seed": 0,
                  "exact": False, "out": "stability.csv"},
}


def parse_n_grid(text) -> tuple:
    """``"512:16384"`` (powers of two, inclusive) or ``"512,1024,..."``."""
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            if lo < 2 or hi < lo or lo & (lo - 1):
                raise ValueError("bounds must be powers of two with lo <= hi")
            out, N = [], lo
            while N <= hi:
                out.append(N)
                N *= 2
            return tuple(out)
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"bad N grid {text!r}: {exc}") from exc


def _merge(cmd: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[cmd])
    given = {k: v for k, v in vars(args).items() if k not in ("command", "bench", "config",
                                                               "verbose")}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise ValidationError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        cfg.update(file_cfg)
    cfg.update(given)
    return cfg


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n"


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def cmd_simulate(cfg: dict) -> int:
    ds = harness.simulate(cfg["model"], cfg["fixture"], int(cfg["n"]), float(cfg["sigma"]),
                          int(cfg["seed"]), cfg["fine_n"])
    csv_path, side = save_dataset(ds, cfg["out"], {"config": cfg})
    print(f"wrote {csv_path} and {side}")
    return 0


def cmd_fit(cfg: dict) -> int:
    if not cfg["data"]:
        raise ValidationError("fit needs --data")
    ds = load_dataset(cfg["data"])
    model = cfg["model"] or ds.meta.get("model", "darcy")
    fixture = cfg["fixture"] or ds.meta.get("fixture")
    if fixture is None:
        raise ValidationError("fit needs --fixture (or a dataset sidecar naming one)")
    fx = get_fixture(model, fixture)
    if fx.d != ds.d:
        raise ValidationError(f"fixture {fixture!r} is {fx.d}-D but the data are {ds.d}-D")
    hp = estimators.derive_hyperparams(model, ds.N, int(cfg["alpha"]), ds.d, float(cfg["c_dim"]))
    grid = estimators.estimator_grid(ds.d, hp.J)
    _, g = fx.fields(grid)
    est = cfg["estimator"]
    if est == "plugin":
        reg, inv = estimators.plugin_estimate(ds, g, hp, cached_frame(grid, hp.J))
        report = estimators.fit_report(hp, reg, inv, ds.seed, estimator=est, config=cfg)
        u_hat, f_hat = reg.u_hat, inv.f_hat
    elif est == "joint":
        u_hat, f_hat, trace = estimators.joint_pde_penalized(
            ds, g, hp, int(cfg["iters"]), float(cfg["tol"]), cached_frame(grid, hp.J))
        report = {"hyperparameters": hp.__dict__, "seed": ds.seed, "estimator": est,
                  "objective_trace": trace, "config": cfg}
    elif est == "adaptive":
        res = estimators.adaptive_estimate(ds, g, int(cfg["beta_min"]), int(cfg["beta_max"]),
                                           float(cfg["A"]), int(cfg["alpha_min"]),
                                           float(cfg["c_dim"]), model)
        if res.frame.grid != grid:
            g = fx.fields(res.frame.grid)[1]
        report = estimators.fit_report(hp, res.regression, res.inversion, ds.seed,
                                       estimator=est, beta_hat=res.beta_hat,
                                       scores={str(k): v for k, v in res.scores.items()},
                                       config=cfg)
        u_hat, f_hat = res.regression.u_hat, res.inversion.f_hat
    else:
        raise ValidationError(f"unknown estimator {est!r}; expected plugin, joint or adaptive")
    _write(Path(cfg["out"]), _dump(report))
    if cfg["dump_dir"]:
        d = Path(cfg["dump_dir"])
        _write(d / "u_hat.json", field_to_json(u_hat) + "\n")
        _write(d / "f_hat.json", field_to_json(f_hat) + "\n")
    print(f"wrote {cfg['out']}")
    return 0


def _rate_config(cfg: dict, reps: int = 1) -> harness.RateConfig:
    return harness.RateConfig(model=cfg["model"], fixture=cfg["fixture"],
                              N_grid=parse_n_grid(cfg["n_grid"]), reps=int(cfg.get("reps", reps)),
                              alpha=int(cfg["alpha"]), d=int(cfg["d"]),
                              sigma=float(cfg["sigma"]), seed=int(cfg["seed"]),
                              c_dim=float(cfg["c_dim"]), jobs=int(cfg.get("jobs", 1)))


def cmd_bench_rates(cfg: dict) -> int:
    table = harness.rate_benchmark(_rate_config(cfg))
    prefix = Path(cfg["out"])
    _write(prefix.with_suffix(".csv"), table.to_csv())
    _write(prefix.with_suffix(".json"), _dump({**table.summary(), "config": cfg}))
    for name, fit in (("forward", table.forward), ("inverse", table.inverse)):
        status = "" if fit.conclusive else " (inconclusive: R^2 < 0.9)"
        print(f"{name} slope {fit.slope:.3f} +- {fit.stderr:.3f}, "
              f"theory {table.theory[name]:.3f}{status}")
    return 0


def cmd_bench_runtime(cfg: dict) -> int:
    table = harness.runtime_benchmark(_rate_config(cfg))
    prefix = Path(cfg["out"])
    _write(prefix.with_suffix(".csv"), table.to_csv())
    _write(prefix.with_suffix(".json"), _dump({**table.summary(), "config": cfg}))
    print(f"flop slope {table.flop_slope.slope:.3f}, theory {table.kappa:.3f}")
    return 0


def cmd_mcmc(cfg: dict) -> int:
    d = int(cfg["d"])
    fixture = cfg["fixture"] if d == 1 or cfg["fixture"] != "bump" else "bump2d"
    hp = estimators.derive_hyperparams("darcy", int(cfg["n"]), int(cfg["alpha"]), d)
    grid = estimators.estimator_grid(d, hp.J)
    ds = harness.simulate("darcy", fixture, hp.N, float(cfg["sigma"]), int(cfg["seed"]),
                          estimation_n=grid.n)
    _, g = get_fixture("darcy", fixture).fields(grid)
    _, inv = estimators.plugin_estimate(ds, g, hp, cached_frame(grid, hp.J))
    basis = bayes.eigen_basis(grid, int(cfg["dim"]))
    link = bayes.LinkFunction(float(cfg["f_min"]))
    prior = bayes.prior_spec(basis, float(cfg["prior_alpha"]), ds.N)
    theta0 = bayes.warm_start(inv.f_hat, basis, link)
    post = bayes.DarcyPosterior(ds, g, basis, link, prior)
    delta = None if cfg["delta"] is None else float(cfg["delta"])
    chain = bayes.ula_run(theta0, post, bayes.UlaConfig(int(cfg["steps"]), delta,
                                                        int(cfg["seed"]), float(cfg["burn_in"])))
    prefix = Path(cfg["out"])
    _write(prefix.with_suffix(".csv"), bayes.chain_to_csv(chain))
    summary = bayes.chain_summary(chain, theta_init=theta0.tolist(), config=cfg)
    _write(prefix.with_suffix(".json"), _dump(summary))
    print(f"posterior mean {np.round(summary['posterior_mean'], 4).tolist()}")
    return 0


def cmd_stability(cfg: dict) -> int:
    rows = stability.stability_suite(cfg["model"], int(cfg["pairs"]), int(cfg["n"]),
                                     int(cfg["d"]), int(cfg["seed"]), exact=bool(cfg["exact"]))
    _write(Path(cfg["out"]), stability.suite_to_csv(rows))
    worst = stability.check_suite(rows)
    print(f"wrote {cfg['out']}; max ratio {worst:.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = argparse.ArgumentParser(prog="invlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option values")
        return sp

    s = common(sub.add_parser("simulate", argument_default=S, help="generate a dataset"))
    s.add_argument("--model", choices=estimators.MODELS)
    s.add_argument("--fixture")
    s.add_argument("--n", type=int, help="number of observations N")
    s.add_argument("--sigma", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--fine-n", dest="fine_n", type=int)
    s.add_argument("--out")

    f = common(sub.add_parser("fit", argument_default=S, help="fit an estimator"))
    f.add_argument("--data")
    f.add_argument("--estimator", choices=("plugin", "joint", "adaptive"))
    f.add_argument("--model", choices=estimators.MODELS)
    f.add_argument("--fixture")
    f.add_argument("--alpha", type=int)
    f.add_argument("--c-dim", dest="c_dim", type=float)
    f.add_argument("--iters", type=int)
    f.add_argument("--tol", type=float)
    f.add_argument("--beta-min", dest="beta_min", type=int)
    f.add_argument("--beta-max", dest="beta_max", type=int)
    f.add_argument("--A", type=float)
    f.add_argument("--alpha-min", dest="alpha_min", type=int)
    f.add_argument("--out")
    f.add_argument("--dump-dir", dest="dump_dir")

    b = sub.add_parser("bench", help="rate or runtime benchmark")
    bsub = b.add_subparsers(dest="bench", required=True)
    for name in ("rates", "runtime"):
        r = common(bsub.add_parser(name, argument_default=S))
        r.add_argument("--model", choices=estimators.MODELS)
        r.add_argument("--fixture")
        r.add_argument("--alpha", type=int)
        r.add_argument("--d", type=int)
        r.add_argument("--n-grid", dest="n_grid")
        r.add_argument("--sigma", type=float)
        r.add_argument("--seed", type=int)
        r.add_argument("--c-dim", dest="c_dim", type=float)
        r.add_argument("--out", help="output prefix (.csv and .json are written)")
        if name == "rates":
            r.add_argument("--reps", type=int)
            r.add_argument("--jobs", type=int)

    m = common(sub.add_parser("mcmc", argument_default=S, help="warm-started ULA"))
    m.add_argument("--d", type=int)
    m.add_argument("--fixture")
    m.add_argument("--n", type=int)
    m.add_argument("--sigma", type=float)
    m.add_argument("--seed", type=int)
    m.add_argument("--alpha", type=int)
    m.add_argument("--dim", type=int, help="eigenbasis truncation D")
    m.add_argument("--steps", type=int)
    m.add_argument("--delta", type=float)
    m.add_argument("--burn-in", dest="burn_in", type=float, help="burn-in fraction")
    m.add_argument("--f-min", dest="f_min", type=float)
    m.add_argument("--prior-alpha", dest="prior_alpha", type=float)
    m.add_argument("--out")

    st = common(sub.add_parser("stability", argument_default=S, help="random-pair suite"))
    st.add_argument("--model", choices=estimators.MODELS)
    st.add_argument("--pairs", type=int)
    st.add_argument("--n", type=int)
    st.add_argument("--d", type=int)
    st.add_argument("--seed", type=int)
    st.add_argument("--exact", action="store_true")
    st.add_argument("--out")
    return p


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "rates": cmd_bench_rates,
            "runtime": cmd_bench_runtime, "mcmc": cmd_mcmc, "stability": cmd_stability}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = args.bench if args.command == "bench" else args.command
    try:
        cfg = _merge(cmd, args)
        return COMMANDS[cmd](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
