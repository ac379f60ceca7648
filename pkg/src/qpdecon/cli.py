"""Command line interface: fit, scree, and simulate subcommands.

Exit codes: 0 success, 1 usage, 2 data, 3 solver, 4 selection required.
Options may come from a TOML config file (sections named after the
subcommands); explicit flags override the file, which overrides the
defaults.  The effective configuration is echoed into every output
bundle as config.json.
"""

import argparse
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from . import plots
from .errors import (AllZero, DegenerateData, NumericalOverflow, OutOfRange,
                     QpdeconError, SelectionRequired, SingularMatrix,
                     SolverFailure)
from .estimator import LAMBDA_SCREE, LAMBDA_SURE, fit
from .grids import load_observations, parse_noise_spec
from .kd import BANDWIDTH_RULE, oracle_bandwidth, rule_of_thumb_bandwidth
from .regularization import REG_AUTO, REG_D2, REG_GAUSS
from .simlab import (METHOD_KD, METHOD_QP, SimulationSpec, parse_dist_spec,
                     parse_method_spec, run_simulation)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3
EXIT_SELECTION = 4

THREADS_ENV = "QPDECON_THREADS"


class UsageError(Exception):
    """Bad command line or config contents."""


class DataError(Exception):
    """Unreadable or malformed input data."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


DEFAULTS = {
    "fit": {"input": None, "noise": None, "constraints": "in", "reg": REG_AUTO,
            "lambda": LAMBDA_SURE, "K": None, "out": ".", "diagnostics": False,
            "threads": None},
    "scree": {"input": None, "noise": None, "constraints": "in", "reg": REG_AUTO,
              "K": None, "out": ".", "threads": None},
    "simulate": {"dist": None, "noise": None, "n": None, "reps": None,
                 "methods": None, "seed": 0, "K": None, "lambda": None,
                 "h": None, "out": ".", "threads": None},
}


def build_parser():
    p = _Parser(prog="qpdecon",
                description="Latent density, cdf, and quantile estimation "
                            "from noisy observations.")
    sub = p.add_subparsers(dest="command", metavar="{fit,scree,simulate}")

    def common(sp):
        sp.add_argument("--out", help="output directory (default: current)")
        sp.add_argument("--config", help="TOML config file with a section per subcommand")
        sp.add_argument("--threads", type=int,
                        help=f"worker threads (fallback: ${THREADS_ENV})")

    f = sub.add_parser("fit", help="fit the latent density to one sample")
    f.add_argument("--input", help="single-column CSV of observations")
    f.add_argument("--noise", help="noise spec, e.g. gaussian:sigma2=3.2")
    f.add_argument("--constraints", help="constraint spec, e.g. in,mright:0,s:0,inf")
    f.add_argument("--reg", choices=[REG_D2, REG_GAUSS, REG_AUTO],
                   help="penalty kind (default: auto)")
    f.add_argument("--lambda", dest="lam",
                   help="penalty weight: a real, 'sure', or 'scree'")
    f.add_argument("--K", type=int, help="grid size (default: 3 sqrt(n), max 200)")
    f.add_argument("--diagnostics", action="store_true", default=None,
                   help="also write the risk curve and a fit figure")
    common(f)

    s = sub.add_parser("scree", help="emit the scree curve for graphical selection")
    s.add_argument("--input")
    s.add_argument("--noise")
    s.add_argument("--constraints")
    s.add_argument("--reg", choices=[REG_D2, REG_GAUSS, REG_AUTO])
    s.add_argument("--K", type=int)
    common(s)

    m = sub.add_parser("simulate", help="seeded Monte Carlo method comparison")
    m.add_argument("--dist", help="latent truth, e.g. gamma:5,1 or exp:0.447")
    m.add_argument("--noise")
    m.add_argument("--n", type=int, help="sample size per replicate")
    m.add_argument("--reps", type=int, help="number of replicates")
    m.add_argument("--methods",
                   help="comma list, e.g. qp-in,qp-incms@0.316,kd-rect@0.867")
    m.add_argument("--seed", type=int, help="base seed (default 0)")
    m.add_argument("--K", type=int)
    m.add_argument("--lambda", dest="lam",
                   help="penalty weight for qp methods without @value")
    m.add_argument("--h", help="bandwidth for kd methods without @value: "
                               "a real, 'rule', or 'oracle'")
    common(m)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("usage: qpdecon {fit,scree,simulate} [options]; see --help",
              file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        build_parser().print_help()
        return EXIT_USAGE
    try:
        cfg = _effective_config(args)
        runner = {"fit": _run_fit, "scree": _run_scree, "simulate": _run_simulate}
        return runner[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, DegenerateData, OutOfRange) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverFailure, SingularMatrix, NumericalOverflow, AllZero) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except QpdeconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def _effective_config(args):
    """Merge defaults, config-file section, then explicit flags."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file {args.config!r} not found")
        with open(args.config, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise UsageError(f"config file {args.config!r}: {exc}") from None
        section = data.get(cmd, {})
        if not isinstance(section, dict):
            raise UsageError(f"config section [{cmd}] must be a table")
        for key, value in section.items():
            if key not in cfg:
                raise UsageError(f"unknown config key {key!r} in section [{cmd}]")
            cfg[key] = value
    for key in cfg:
        arg_name = "lam" if key == "lambda" else key
        value = getattr(args, arg_name, None)
        if value is not None:
            cfg[key] = value
    if cfg.get("threads") is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                cfg["threads"] = int(env)
            except ValueError:
                raise UsageError(f"${THREADS_ENV} must be an integer, got {env!r}") from None
    cfg["command"] = cmd
    return cfg


def _require(cfg, keys):
    for key in keys:
        if cfg.get(key) is None:
            raise UsageError(f"--{key} is required for '{cfg['command']}'")


def _usage_parse(fn, *a):
    try:
        return fn(*a)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_data(path):
    try:
        return load_observations(path)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _outdir(cfg):
    out = cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(cfg, outdir):
    path = os.path.join(outdir, "config.json")
    with open(path, "w") as fh:
        json.dump({k: cfg[k] for k in sorted(cfg)}, fh, indent=2)
        fh.write("\n")
    return path


def _parse_lambda(text):
    if text in (LAMBDA_SURE, LAMBDA_SCREE):
        return text
    try:
        v = float(text)
    except ValueError:
        raise UsageError(f"--lambda must be a real, 'sure', or 'scree', got {text!r}") from None
    if v < 0:
        raise UsageError(f"--lambda must be nonnegative, got {v}")
    return v


def _write_quantiles_csv(est, path):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "quantile"])
        for p in sorted(est.quantiles):
            w.writerow([f"{p:g}", f"{est.quantiles[p]:.6g}"])


def _write_selection_bundle(outdir, scree, sure):
    paths = {}
    if scree is not None:
        paths["scree_csv"] = os.path.join(outdir, "scree.csv")
        scree.to_csv(paths["scree_csv"])
        paths["scree_svg"] = os.path.join(outdir, "scree.svg")
        plots.save_scree_plot(scree, paths["scree_svg"],
                              sure_lambda=None if sure is None else sure.chosen_lambda)
    if sure is not None:
        paths["sure_csv"] = os.path.join(outdir, "sure.csv")
        sure.to_csv(paths["sure_csv"])
        paths["sure_svg"] = os.path.join(outdir, "sure.svg")
        plots.save_sure_plot(sure, paths["sure_svg"])
    return paths


def _run_fit(cfg):
    _require(cfg, ["input", "noise"])
    noise = _usage_parse(parse_noise_spec, cfg["noise"])
    lam = _parse_lambda(str(cfg["lambda"]))
    from .constraints import parse_constraint_spec
    cspec = _usage_parse(parse_constraint_spec, cfg["constraints"])
    data = _load_data(cfg["input"])
    outdir = _outdir(cfg)
    _echo_config(cfg, outdir)
    try:
        est = fit(data, noise, constraints=cspec, regularizer=cfg["reg"],
                  lam=lam, K=cfg["K"])
    except SelectionRequired as sel:
        paths = _write_selection_bundle(outdir, sel.scree, sel.sure)
        print("selection required: inspect", paths.get("scree_svg", "the scree curve"),
              "and refit with --lambda <value>")
        if sel.scree is not None:
            print(f"elbow suggestion: {sel.scree.elbow_lambda:.6g}")
        if sel.sure is not None:
            print(f"risk minimizer: {sel.sure.chosen_lambda:.6g}")
        return EXIT_SELECTION

    paths = {"config": os.path.join(outdir, "config.json")}
    qpath = os.path.join(outdir, "quantiles.csv")
    _write_quantiles_csv(est, qpath)
    paths["quantiles_csv"] = qpath
    if cfg["diagnostics"]:
        paths.update(_write_selection_bundle(outdir, est.scree, est.sure))
        fig = os.path.join(outdir, "fit.svg")
        plots.save_fit_plot(est, fig)
        paths["fit_svg"] = fig
    rpath = os.path.join(outdir, "result.json")
    with open(rpath, "w") as fh:
        json.dump(est.to_dict(diagnostics=paths), fh, indent=2)
        fh.write("\n")
    print(f"fit: K={est.grid.K} lambda={est.lam:.6g} regularizer={est.regularizer} "
          f"constraints={est.constraints}")
    for p in sorted(est.quantiles):
        print(f"  q({p:g}) = {est.quantiles[p]:.6g}")
    print(f"wrote {rpath}")
    return EXIT_OK


def _run_scree(cfg):
    _require(cfg, ["input", "noise"])
    noise = _usage_parse(parse_noise_spec, cfg["noise"])
    from .constraints import parse_constraint_spec
    cspec = _usage_parse(parse_constraint_spec, cfg["constraints"])
    data = _load_data(cfg["input"])
    outdir = _outdir(cfg)
    _echo_config(cfg, outdir)
    try:
        fit(data, noise, constraints=cspec, regularizer=cfg["reg"],
            lam=LAMBDA_SCREE, K=cfg["K"])
    except SelectionRequired as sel:
        paths = _write_selection_bundle(outdir, sel.scree, sel.sure)
        print(f"scree curve written to {paths['scree_csv']} and {paths['scree_svg']}")
        print(f"elbow suggestion: {sel.scree.elbow_lambda:.6g}")
        if sel.sure is not None:
            print(f"risk minimizer: {sel.sure.chosen_lambda:.6g}")
        print("pick a weight comfortably right of the elbow and run "
              "'qpdecon fit --lambda <value>'")
        return EXIT_OK
    raise SolverFailure("scree computation unexpectedly produced a fit")


def _run_simulate(cfg):
    _require(cfg, ["dist", "noise", "n", "reps", "methods"])
    dist = _usage_parse(parse_dist_spec, cfg["dist"])
    noise = _usage_parse(parse_noise_spec, cfg["noise"])
    tokens = [t for t in str(cfg["methods"]).split(",") if t.strip()]
    methods = [_usage_parse(parse_method_spec, t) for t in tokens]
    if not methods:
        raise UsageError("--methods must list at least one method")
    methods = _apply_global_overrides(cfg, methods)
    spec = SimulationSpec(dist=dist, noise=noise, n=int(cfg["n"]),
                          reps=int(cfg["reps"]), methods=tuple(methods),
                          seed=int(cfg["seed"]), K=cfg["K"])
    spec = _resolve_oracle_bandwidths(spec)
    report = run_simulation(spec, threads=cfg.get("threads"))
    outdir = _outdir(cfg)
    _echo_config(cfg, outdir)
    paths = report.write_csvs(outdir)
    corr_grid = spec.correlation_grid()
    for res in report.results:
        svg = os.path.join(outdir, f"corr_{res.method.file_label()}.svg")
        plots.save_corr_heatmap(res.correlation, corr_grid, svg, title=res.method.name)
    rpath = os.path.join(outdir, "report.json")
    with open(rpath, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    for row in report.mae_table_rows():
        print("  ".join(f"{c:>12}" for c in row))
    fails = sum(r.failures for r in report.results)
    if fails:
        print(f"warning: {fails} per-replicate failure(s); see {rpath}")
    print(f"wrote {rpath}")
    return EXIT_OK


def _apply_global_overrides(cfg, methods):
    """Apply --lambda / --h to methods that did not pin a value with @."""
    from dataclasses import replace
    out = []
    for m in methods:
        pinned = "@" in m.name
        if m.kind == METHOD_QP and cfg.get("lambda") is not None and not pinned:
            m = replace(m, lam=_parse_lambda(str(cfg["lambda"])))
        if m.kind == METHOD_KD and cfg.get("h") is not None and not pinned:
            h = str(cfg["h"])
            if h not in (BANDWIDTH_RULE, "oracle"):
                try:
                    h = float(h)
                except ValueError:
                    raise UsageError(
                        f"--h must be a real, 'rule', or 'oracle', got {h!r}") from None
                if h <= 0:
                    raise UsageError(f"--h must be positive, got {h}")
            m = replace(m, h=h)
        out.append(m)
    return out


def _resolve_oracle_bandwidths(spec):
    """Replace h='oracle' with the aggregate-error minimizer over a default grid."""
    from dataclasses import replace
    methods = []
    for m in spec.methods:
        if m.kind == METHOD_KD and m.h == "oracle":
            rule = rule_of_thumb_bandwidth(spec.n, spec.noise)
            candidates = np.geomspace(rule / 12.0, 1.2 * rule, 16)
            best, _ = oracle_bandwidth(replace(spec, methods=(m,)), m, candidates)
            print(f"oracle bandwidth for {m.name}: {best:.6g}")
            m = replace(m, h=best)
        methods.append(m)
    return replace(spec, methods=tuple(methods))


if __name__ == "__main__":
    sys.exit(main())
