"""Replicated simulation runs: sample splits, targets, ISE/MISE and CSV output."""

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import jsonschema
import numpy as np

from .density import MixtureDensity, as_mixture, as_points, check_coverage, default_integrator, \
    integrate, mixture_inner
from .dictionary import build_b1, build_b2, build_dictionary
from .divergence import DivergenceFamily
from .errors import DegenerateDataError, NumericIntegrityError, SchemaError, StageKDEError
from .fitter import FitConfig, condensation_metrics, fit, normalize

CASES = ("A", "B", "C", "D", "E")
RECORDED_STAGES = (1, 25, 50, 75, 100)
BUILTIN_TARGETS = ("type_c", "type_j", "type_l")
ISE_GRID_RES = 512

# dictionary share of N for each case; D and E reuse the dictionary points as loss points
_SPLIT = {"A": (1, 4), "B": (1, 2), "C": (3, 4), "D": (1, 2), "E": (1, 1)}
_DIVISOR = {"A": 4, "B": 2, "C": 4, "D": 2, "E": 1}


def load_target(ref, base_dir=None):
    """Resolve a target: builtin name, path to a mixture JSON, or an inline mixture document."""
    if isinstance(ref, MixtureDensity):
        return ref
    if isinstance(ref, dict):
        return MixtureDensity.from_json(ref)
    key = str(ref).strip().lower().replace("-", "_")
    if key in ("c", "j", "l"):
        key = "type_" + key
    if key in BUILTIN_TARGETS:
        text = resources.files("stagekde").joinpath("targets", key + ".json").read_text()
        return MixtureDensity.from_json(json.loads(text))
    path = ref if base_dir is None or os.path.isabs(ref) else os.path.join(base_dir, ref)
    return MixtureDensity.load(path)


def split_sample(data, case, rng):
    """Split ``data`` into ``(dictionary points, loss points)`` for case A..E."""
    X = as_points(data)
    N = X.shape[0]
    case = str(case).upper()
    if case not in _SPLIT:
        raise ValueError(f"unknown case {case!r}")
    if N % _DIVISOR[case] or N < 2:
        raise ValueError(f"case {case} needs N divisible by {_DIVISOR[case]} (and N >= 2), got {N}")
    if case == "E":
        return X, X
    num, den = _SPLIT[case]
    m = N * num // den
    perm = rng.permutation(N)
    if case == "D":
        half = X[perm[:m]]
        return half, half
    return X[perm[:m]], X[perm[m:]]


def ise(estimate, target, integ=None):
    """Integrated squared error; Gaussian algebra when both sides are Gaussian mixtures."""
    a = as_mixture(estimate) if integ is None else None
    b = as_mixture(target) if integ is None else None
    if a is not None and b is not None:
        val = mixture_inner(a, a) - 2.0 * mixture_inner(a, b) + mixture_inner(b, b)
    else:
        if integ is None:
            integ = default_integrator(estimate, target, resolution=_ise_res(target.dim))
        check_coverage(target, integ)
        check_coverage(estimate, integ)
        val = integrate(lambda x: (estimate.pdf(x) - target.pdf(x)) ** 2, integ)
    if val < -1e-10:
        raise NumericIntegrityError(f"ISE came out negative ({val:.3e})")
    return max(float(val), 0.0)


def _ise_res(d):
    return {1: 2048, 2: ISE_GRID_RES, 3: 64}[d]


def kde_baseline(data, rule="normal_scale", h=None):
    """Equal-weight Gaussian KDE with diagonal normal-scale bandwidths or a fixed scalar ``h``."""
    X = as_points(data)
    N, d = X.shape
    if N < 2:
        raise DegenerateDataError("the baseline KDE needs at least 2 points")
    w = np.full(N, 1.0 / N)
    if rule == "explicit":
        if h is None or h <= 0:
            raise ValueError("explicit rule needs h > 0")
        return MixtureDensity.isotropic(w, X, np.full(N, float(h) ** 2), name="kde")
    if rule != "normal_scale":
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    sd = X.std(axis=0, ddof=1)
    if np.any(sd <= 0.0):
        raise DegenerateDataError("zero variance along an axis")
    hp = sd * N ** (-1.0 / (d + 4))
    return MixtureDensity.diagonal(w, X, hp ** 2, name="kde")


# ---------------------------------------------------------------------------
# scenarios

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["case", "N", "target"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "case": {"type": "string", "pattern": "^[A-Ea-e]$"},
        "N": {"type": "integer", "minimum": 2},
        "target": {"type": ["string", "object"]},
        "dict": {"type": "string", "pattern": "^[bB][12]$"},
        "eta": {"type": "number", "minimum": 0},
        "beta": {"type": ["number", "string"]},
        "M": {"type": "integer", "minimum": 1},
        "theta": {"type": "number", "minimum": 2},
        "replicates": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "grid_res": {"type": "integer", "minimum": 32},
        "stages": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "j_max": {"type": "integer", "minimum": 1},
        "epsilon": {"type": "number", "minimum": 0},
    },
}


def _schema_errors(doc):
    validator = jsonschema.Draft7Validator(SCENARIO_SCHEMA)
    problems = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.path)):
        if err.validator == "required":
            name = err.message.split("'")[1]
        elif err.validator == "additionalProperties":
            name = ",".join(sorted(set(doc) - set(SCENARIO_SCHEMA["properties"])))
        else:
            name = ".".join(str(p) for p in err.path) or "<root>"
        problems.append((name, err.message))
    return problems


@dataclass(frozen=True)
class ScenarioSpec:
    case: str
    N: int
    target: MixtureDensity
    target_ref: object = "type_c"
    name: str = "scenario"
    dict_variant: str = "B1"
    eta: float = 1.0
    family: DivergenceFamily = field(default_factory=DivergenceFamily)
    M: int = 100
    theta: float = 2.0
    replicates: int = 10
    seed: int = 0
    grid_res: int = None
    stages: tuple = RECORDED_STAGES
    j_max: int = None
    epsilon: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "case", str(self.case).upper())
        object.__setattr__(self, "dict_variant", str(self.dict_variant).upper())
        object.__setattr__(self, "stages", tuple(int(s) for s in self.stages))
        if self.case not in CASES:
            raise SchemaError(f"unknown case {self.case!r}", fields=("case",))
        if self.dict_variant not in ("B1", "B2"):
            raise SchemaError(f"unknown dictionary {self.dict_variant!r}", fields=("dict",))
        if self.N % _DIVISOR[self.case]:
            raise SchemaError(f"case {self.case} needs N divisible by {_DIVISOR[self.case]}",
                              fields=("N",))
        if max(self.stages) > self.M or list(self.stages) != sorted(set(self.stages)):
            raise SchemaError("stages must be increasing and at most M", fields=("stages",))

    @property
    def ladder_j_max(self):
        if self.j_max is not None:
            return self.j_max
        return 5 if self.dict_variant == "B1" else 10

    def fit_config(self):
        return FitConfig(M=self.M, theta=self.theta, epsilon=self.epsilon, family=self.family)

    @classmethod
    def from_json(cls, doc, base_dir=None):
        problems = _schema_errors(doc)
        if problems:
            names = tuple(n for n, _ in problems)
            detail = "; ".join(f"{n}: {msg}" for n, msg in problems)
            raise SchemaError(f"invalid scenario ({detail})", fields=names)
        try:
            family = DivergenceFamily.parse(doc.get("beta", 1.0))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"invalid beta: {exc}", fields=("beta",)) from None
        try:
            target = load_target(doc["target"], base_dir)
        except (OSError, ValueError, KeyError) as exc:
            raise SchemaError(f"cannot load target: {exc}", fields=("target",)) from None
        ref = doc["target"]
        if isinstance(ref, str) and base_dir is not None and ref.lower() not in BUILTIN_TARGETS \
                and os.path.exists(os.path.join(base_dir, ref)):
            ref = os.path.abspath(os.path.join(base_dir, ref))
        return cls(case=doc["case"], N=doc["N"], target=target, target_ref=ref,
                   name=doc.get("name", "scenario"), dict_variant=doc.get("dict", "b1"),
                   eta=doc.get("eta", 10.0 if ref == "type_j" else 1.0), family=family,
                   M=doc.get("M", 100), theta=doc.get("theta", 2.0),
                   replicates=doc.get("replicates", 10), seed=doc.get("seed", 0),
                   grid_res=doc.get("grid_res"), stages=tuple(doc.get("stages", RECORDED_STAGES)),
                   j_max=doc.get("j_max"), epsilon=doc.get("epsilon", 0.0))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        return cls.from_json(doc, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_json(self):
        doc = {"name": self.name, "case": self.case, "N": self.N, "target": self.target_ref,
               "dict": self.dict_variant.lower(), "eta": self.eta,
               "beta": "kl" if self.family.is_kl else self.family.beta, "M": self.M,
               "theta": self.theta, "replicates": self.replicates, "seed": self.seed,
               "stages": list(self.stages), "epsilon": self.epsilon}
        if self.grid_res is not None:
            doc["grid_res"] = self.grid_res
        if self.j_max is not None:
            doc["j_max"] = self.j_max
        return doc

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


@dataclass
class Replicate:
    """One replicate's sample split, dictionary and fitted estimate."""

    index: int
    data: np.ndarray
    dict_points: np.ndarray
    loss_points: np.ndarray
    dictionary: object
    estimate: object


def replicate_stream(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def fit_replicate(spec, index):
    rng = replicate_stream(spec.seed, index)
    data = spec.target.sample(spec.N, rng)
    dpts, lpts = split_sample(data, spec.case, rng)
    if spec.dict_variant == "B1":
        ladder = build_b1(dpts, j_max=spec.ladder_j_max)
    else:
        ladder = build_b2(dpts, eta=spec.eta, j_max=spec.ladder_j_max)
    dictionary = build_dictionary(dpts, ladder)
    est = fit(dictionary, lpts, spec.fit_config())
    return Replicate(index, data, dpts, lpts, dictionary, est)


def _stage_ise(spec, comb):
    if spec.family.beta == 1.0 and not spec.family.is_kl and spec.grid_res is None:
        return ise(comb, spec.target)
    res = spec.grid_res or _ise_res(spec.target.dim)
    integ = default_integrator(spec.target, comb, resolution=res)
    return ise(comb, spec.target, integ)


@dataclass(frozen=True)
class ReplicateRecord:
    index: int
    ise: tuple
    ratio_points: tuple
    ratio_words: tuple
    unique_points: int
    unique_words: int
    gamma: float
    final_loss: float


def _run_one(spec, index):
    try:
        rep = fit_replicate(spec, index)
        est = rep.estimate
        ises, rp, rw = [], [], []
        for s in spec.stages:
            comb = est.running(s - 1)
            ises.append(_stage_ise(spec, comb))
            sub = _Prefix(est, s)
            cm = condensation_metrics(sub, spec.N, rep.dictionary)
            rp.append(cm.ratio_points)
            rw.append(cm.ratio_words)
        final = condensation_metrics(est, spec.N, rep.dictionary)
        gamma, _ = normalize(est)
    except StageKDEError as exc:
        raise type(exc)(f"replicate {index} (seed {spec.seed}) failed: {exc}") from exc
    return ReplicateRecord(index, tuple(ises), tuple(rp), tuple(rw), final.unique_points,
                           final.unique_words, float(gamma), est.loss_trace[-1].value)


class _Prefix:
    """The first ``s`` stage choices of an estimate, for per-stage condensation."""

    def __init__(self, est, s):
        self.chosen = est.chosen[:s]
        self.dictionary = est.dictionary


@dataclass
class RunResult:
    spec: ScenarioSpec
    stages: tuple
    mise_by_stage: np.ndarray
    mise_sd: np.ndarray
    ratio_points: np.ndarray
    ratio_words: np.ndarray
    per_replicate_ise: np.ndarray
    records: list

    @property
    def condensation(self):
        return {"ratio_points": float(self.ratio_points[-1]),
                "ratio_words": float(self.ratio_words[-1]),
                "unique_points": [r.unique_points for r in self.records],
                "unique_words": [r.unique_words for r in self.records]}


def run_scenario(spec, workers=1):
    """Fit every replicate and aggregate ISE into MISE and its sample SD (n - 1 divisor)."""
    idx = range(spec.replicates)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda r: _run_one(spec, r), idx))
    else:
        records = [_run_one(spec, r) for r in idx]
    records.sort(key=lambda r: r.index)
    ise_mat = np.array([r.ise for r in records])
    sd = ise_mat.std(axis=0, ddof=1) if len(records) > 1 else np.full(len(spec.stages), np.nan)
    return RunResult(
        spec=spec, stages=spec.stages, mise_by_stage=ise_mat.mean(axis=0), mise_sd=sd,
        ratio_points=np.array([r.ratio_points for r in records]).mean(axis=0),
        ratio_words=np.array([r.ratio_words for r in records]).mean(axis=0),
        per_replicate_ise=ise_mat, records=records,
    )


# ---------------------------------------------------------------------------
# CSV output

RESULT_COLUMNS = ("scenario", "case", "N", "beta", "stage", "mise", "sd", "ratio_points",
                  "ratio_words", "seed")
REPLICATE_COLUMNS = ("scenario", "replicate", "seed", "stage", "ise")


def _fmt(x):
    return repr(float(x))


def results_csv(result):
    spec = result.spec
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for k, s in enumerate(result.stages):
        w.writerow([spec.name, spec.case, spec.N, spec.family.label, s,
                    _fmt(result.mise_by_stage[k]), _fmt(result.mise_sd[k]),
                    _fmt(result.ratio_points[k]), _fmt(result.ratio_words[k]), spec.seed])
    return buf.getvalue()


def replicates_csv(result):
    spec = result.spec
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLICATE_COLUMNS)
    for rec in result.records:
        for k, s in enumerate(result.stages):
            w.writerow([spec.name, rec.index, spec.seed, s, _fmt(rec.ise[k])])
    return buf.getvalue()
