"""``stagekde`` command line: fit, simulate, bounds, ise and replay.

Every run writes ``manifest.json`` with the resolved configuration, input
hashes and output hashes; ``stagekde replay manifest.json --out DIR``
re-executes it. Option values resolve as flag, then ``STAGEKDE_<NAME>``
environment variable, then scenario file (simulate/bounds), then default.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys

import numpy as np

from . import __version__
from . import _kernels as K
from .bounds import error_bound_check, kl_curvature_bound, log_ratio_constants, \
    log_ratio_moment_quadrature
from .density import default_integrator
from .dictionary import build_b1, build_b2, build_dictionary
from .divergence import DivergenceFamily
from .errors import CoverageError, DomainError, FitError, NumericIntegrityError, SchemaError, \
    StageKDEError
from .fitter import FitConfig, StagewiseEstimate, condensation_metrics, fit, normalize
from .simulation import BUILTIN_TARGETS, ScenarioSpec, ise, load_target, replicates_csv, \
    results_csv, run_scenario, split_sample

ENV_PREFIX = "STAGEKDE_"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTEGRITY = 3

# option name -> (type, default)
_OPTIONS = {
    "beta": (str, "1.0"),
    "theta": (float, 2.0),
    "stages": (int, 100),
    "dict": (str, "b1"),
    "eta": (float, 1.0),
    "case": (str, "e"),
    "seed": (int, 0),
    "grid_res": (int, None),
    "threads": (int, None),
    "j_max": (int, None),
    "replicates": (int, None),
}


class CliError(Exception):
    pass


def _env(name):
    return os.environ.get(ENV_PREFIX + name.upper())


def resolve(args, name, fallback=None):
    typ, default = _OPTIONS[name]
    value = getattr(args, name, None)
    if value is not None:
        return value
    raw = _env(name)
    if raw is not None:
        try:
            return typ(raw)
        except ValueError:
            raise CliError(f"{ENV_PREFIX}{name.upper()}={raw!r} is not a valid {typ.__name__}")
    return fallback if fallback is not None else default


# ---------------------------------------------------------------------------
# io helpers


def read_csv_matrix(path, header=False):
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise CliError(f"{path}: line {lineno}: non-numeric value in {row!r}") from None
            if not all(np.isfinite(vals)):
                raise CliError(f"{path}: line {lineno}: non-finite value")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise CliError(f"{path}: line {lineno}: expected {width} columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise CliError(f"{path}: no data rows")
    return np.array(rows)


def _dumps(doc):
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True) + "\n"


def _sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


class _Outputs:
    def __init__(self, out_dir):
        self.dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.files = {}

    def write(self, name, text):
        path = os.path.join(self.dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.files[name] = _sha(path)

    def manifest(self, command, config, inputs):
        doc = {
            "tool": "stagekde",
            "version": __version__,
            "command": command,
            "config": config,
            "inputs": {p: _sha(p) for p in inputs},
            "outputs": dict(sorted(self.files.items())),
        }
        with open(os.path.join(self.dir, "manifest.json"), "w") as fh:
            fh.write(_dumps(doc))


def _family(token):
    try:
        return DivergenceFamily.parse(token)
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid --beta {token!r}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands; each takes a resolved config dict and an output directory


def fit_config_from(args):
    return {
        "data": os.path.abspath(args.data),
        "header": bool(args.header),
        "beta": resolve(args, "beta"),
        "theta": resolve(args, "theta"),
        "M": resolve(args, "stages"),
        "dict": resolve(args, "dict").lower(),
        "eta": resolve(args, "eta"),
        "case": resolve(args, "case").upper(),
        "seed": resolve(args, "seed"),
        "grid_res": resolve(args, "grid_res"),
        "j_max": resolve(args, "j_max"),
    }


def run_fit(cfg, out):
    X = read_csv_matrix(cfg["data"], header=cfg["header"])
    fam = _family(cfg["beta"])
    if cfg["dict"] not in ("b1", "b2"):
        raise CliError(f"unknown dictionary {cfg['dict']!r}")
    rng = np.random.default_rng(cfg["seed"])
    try:
        dpts, lpts = split_sample(X, cfg["case"], rng)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if cfg["dict"] == "b1":
        ladder = build_b1(dpts, j_max=cfg["j_max"] or 5)
    else:
        ladder = build_b2(dpts, eta=cfg["eta"], j_max=cfg["j_max"] or 10)
    dictionary = build_dictionary(dpts, ladder)
    integ = None
    if cfg["grid_res"]:
        from .fitter import _WordCloud
        integ = default_integrator(_WordCloud(dictionary), resolution=cfg["grid_res"])
    fc = FitConfig(M=cfg["M"], theta=cfg["theta"], family=fam, integ=integ)
    est = fit(dictionary, lpts, fc)
    gamma, _ = normalize(est)
    doc = est.to_json()
    doc["condensation"] = condensation_metrics(est, X.shape[0]).to_json()
    doc["gamma"] = gamma
    out.write("estimate.json", _dumps(doc))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "word", "point", "bandwidth", "loss", "integral_term", "sample_term"])
    for k, (s, lv) in enumerate(zip(est.chosen, est.loss_trace)):
        w.writerow([k, int(s), int(dictionary.point_of(s)), repr(float(dictionary.word_h[s])),
                    repr(lv.value), repr(lv.integral_term), repr(lv.sample_term)])
    out.write("loss_trace.csv", buf.getvalue())
    return [cfg["data"]]


def _scenario_from(args, path):
    try:
        spec = ScenarioSpec.load(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read scenario {path}: {exc}") from None
    over = {}
    beta = args.beta or _env("beta")
    if beta is not None:
        over["family"] = _family(beta)
    for name, key in (("theta", "theta"), ("stages", "M"), ("eta", "eta"), ("seed", "seed"),
                      ("grid_res", "grid_res"), ("j_max", "j_max"), ("replicates", "replicates")):
        v = getattr(args, name, None)
        if v is None and _env(name) is not None:
            v = resolve(args, name)
        if v is not None:
            over[key] = v
    for name, key in (("dict", "dict_variant"), ("case", "case")):
        v = getattr(args, name, None) or _env(name)
        if v is not None:
            over[key] = v.upper()
    if "M" in over:
        over["stages"] = tuple(s for s in spec.stages if s <= over["M"]) or (over["M"],)
    return spec.with_overrides(**over)


def _scenario_config(spec, path):
    doc = spec.to_json()
    if not isinstance(doc["target"], dict) and str(doc["target"]).lower() not in BUILTIN_TARGETS:
        doc["target"] = spec.target.to_json()
    return {"scenario_path": os.path.abspath(path), "scenario": doc}


def simulate_config_from(args):
    spec = _scenario_from(args, args.scenario)
    return _scenario_config(spec, args.scenario)


def _spec_from_config(cfg):
    return ScenarioSpec.from_json(cfg["scenario"], base_dir=os.path.dirname(cfg["scenario_path"]))


def run_simulate(cfg, out, workers):
    spec = _spec_from_config(cfg)
    res = run_scenario(spec, workers=workers)
    out.write("results.csv", results_csv(res))
    out.write("replicates.csv", replicates_csv(res))
    return [cfg["scenario_path"]]


def bounds_config_from(args):
    if args.scenario is None and args.estimate is None:
        raise CliError("bounds needs --scenario and/or --estimate")
    cfg = {"max_words": args.max_words}
    if args.scenario is not None:
        cfg.update(_scenario_config(_scenario_from(args, args.scenario), args.scenario))
    if args.estimate is not None:
        cfg["estimate"] = os.path.abspath(args.estimate)
    return cfg


def _triples_csv(dictionary, max_words):
    W = min(len(dictionary), max_words)
    C, H = dictionary.word_centers, dictionary.word_h
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["a", "b", "c", "C1", "C2_norm_sq", "C3", "J", "J_quadrature"])
    for a in range(W):
        for b in range(W):
            for c in range(W):
                k = log_ratio_constants(H[a], H[b], H[c], C[a], C[b], C[c])
                q = log_ratio_moment_quadrature(H[a], H[b], H[c], C[a], C[b], C[c])
                w.writerow([a, b, c, repr(k.c1), repr(k.c2_norm_sq), repr(k.c3), repr(k.j),
                            repr(q)])
    return buf.getvalue()


def run_bounds(cfg, out, workers):
    inputs = []
    report = {}
    dictionary = None
    if "scenario" in cfg:
        spec = _spec_from_config(cfg)
        rep = error_bound_check(spec, workers=workers)
        report["error_bound"] = rep.to_json()
        inputs.append(cfg["scenario_path"])
        from .simulation import fit_replicate
        dictionary = fit_replicate(spec, 0).dictionary
    if "estimate" in cfg:
        with open(cfg["estimate"]) as fh:
            est = StagewiseEstimate.from_json(json.load(fh))
        dictionary = est.dictionary
        inputs.append(cfg["estimate"])
    if dictionary.m >= 2:
        report["curvature_bound"] = kl_curvature_bound(dictionary.ladder, dictionary.points).to_json()
    out.write("bounds_report.json", _dumps(report))
    out.write("triples.csv", _triples_csv(dictionary, cfg["max_words"]))
    return inputs


def ise_config_from(args):
    target = args.target
    if os.path.exists(target):
        target = os.path.abspath(target)
    return {"estimate": os.path.abspath(args.estimate), "target": target,
            "grid_res": resolve(args, "grid_res")}


def run_ise(cfg, out):
    with open(cfg["estimate"]) as fh:
        est = StagewiseEstimate.from_json(json.load(fh))
    try:
        target = load_target(cfg["target"])
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load target {cfg['target']!r}: {exc}") from None
    comb = est.combination
    integ = None
    if cfg["grid_res"] or not (est.family.beta == 1.0 and not est.family.is_kl):
        integ = default_integrator(target, comb, resolution=cfg["grid_res"])
    val = ise(comb, target, integ)
    out.write("ise.json", _dumps({"ise": val, "method": "closed_form" if integ is None
                                  else "quadrature"}))
    inputs = [cfg["estimate"]]
    if os.path.isabs(str(cfg["target"])):
        inputs.append(cfg["target"])
    return inputs


_RUNNERS = {
    "fit": lambda cfg, out, workers: run_fit(cfg, out),
    "simulate": run_simulate,
    "bounds": run_bounds,
    "ise": lambda cfg, out, workers: run_ise(cfg, out),
}


def execute(command, cfg, out_dir, threads):
    """Run one resolved command, write its outputs and manifest."""
    K.set_threads(threads)
    out = _Outputs(out_dir)
    inputs = _RUNNERS[command](cfg, out, threads)
    out.manifest(command, cfg, inputs)


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, scenario=False):
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: all cores)")
    p.add_argument("--beta", default=None, help="beta in (0, 1], or 'kl' / 0 for KL")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--stages", type=int, default=None, help="number of stages M")
    p.add_argument("--dict", default=None, choices=["b1", "b2", "B1", "B2"])
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--case", default=None, choices=list("abcdeABCDE"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--grid-res", dest="grid_res", type=int, default=None)
    p.add_argument("--j-max", dest="j_max", type=int, default=None)
    if scenario:
        p.add_argument("--replicates", type=int, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="stagekde", description="Stagewise U-divergence KDE")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a CSV dataset")
    p.add_argument("data")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--header", dest="header", action="store_true", help="skip the first line")
    g.add_argument("--no-header", dest="header", action="store_false")
    p.set_defaults(header=False)
    _common(p)

    p = sub.add_parser("simulate", help="run a scenario JSON")
    p.add_argument("scenario")
    _common(p, scenario=True)

    p = sub.add_parser("bounds", help="error-bound report and log-ratio table")
    p.add_argument("--scenario", default=None)
    p.add_argument("--estimate", default=None, help="estimate.json from a fit run")
    p.add_argument("--max-words", dest="max_words", type=int, default=10,
                   help="words used for the per-triple table")
    _common(p, scenario=True)

    p = sub.add_parser("ise", help="ISE of a fitted estimate against a target mixture")
    p.add_argument("--estimate", required=True)
    p.add_argument("--target", required=True, help="type_c, type_j, type_l or a mixture JSON")
    _common(p)

    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=None)
    return ap


_CONFIG_BUILDERS = {
    "fit": fit_config_from,
    "simulate": simulate_config_from,
    "bounds": bounds_config_from,
    "ise": ise_config_from,
}


def _threads(args):
    n = resolve(args, "threads")
    return n if n else (os.cpu_count() or 1)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        out_dir = args.out or _env("out")
        if out_dir is None:
            raise CliError("--out is required (or set STAGEKDE_OUT)")
        if args.command == "replay":
            with open(args.manifest) as fh:
                man = json.load(fh)
            command, cfg = man["command"], man["config"]
            if command not in _RUNNERS:
                raise CliError(f"manifest names unknown command {command!r}")
        else:
            command = args.command
            cfg = _CONFIG_BUILDERS[command](args)
        execute(command, cfg, out_dir, _threads(args))
    except (CliError, SchemaError, DomainError, ValueError, OSError) as exc:
        print(f"stagekde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericIntegrityError, CoverageError, FitError, StageKDEError) as exc:
        print(f"stagekde: integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
