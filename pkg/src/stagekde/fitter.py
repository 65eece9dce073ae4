"""Stagewise minimisation of the empirical U-loss over a word dictionary.

Stage 0 picks the single word with the lowest loss. Stage k mixes the running
estimate with one more word in the xi scale,

    f_k = u((1 - pi_k) xi(f_{k-1}) + pi_k xi(phi)),   pi_k = theta / (k + theta),

choosing the word that minimises the loss of f_k. After M stages the estimate
is ``u(sum_l q_l xi(phi_l))`` with ``q_l = pi_l prod_{t>l} (1 - pi_t)``.

The sample part of the loss is linear in the xi scale, so it is carried as a
running scalar. The integral part is evaluated by one of four engines:

* ``l2``    beta = 1, int g^2 / 2 through Gaussian cross integrals
* ``cubic`` beta = 1/2, int (sum q phi^(1/2))^3 / (3/2) through triple products
* ``kl``    KL, where the running estimate is one unnormalised Gaussian
* ``grid``  any family, tensor-grid quadrature (d <= 3)

The closed-form engines are exact rewrites of the quadrature, not
approximations; the test-suite checks each against ``grid``.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .density import (
    IntegratorSpec, ScaledDensity, XiCombination, _iso_logpdf, as_points, check_coverage,
    cross_integral_row, default_integrator, grid_nodes, integrate,
)
from .dictionary import Dictionary
from .divergence import DivergenceFamily, LossValue
from .errors import FitError, NumericIntegrityError

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# config and result types


@dataclass(frozen=True)
class FitConfig:
    M: int = 100
    theta: float = 2.0
    epsilon: float = 0.0
    family: DivergenceFamily = field(default_factory=DivergenceFamily)
    integ: IntegratorSpec = None
    tie_break: str = "lowest_index"
    engine: str = "auto"

    def __post_init__(self):
        if int(self.M) < 1:
            raise ValueError("M must be >= 1")
        object.__setattr__(self, "M", int(self.M))
        if self.theta < 2.0:
            raise ValueError("theta must be >= 2")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.tie_break != "lowest_index":
            raise ValueError("only the lowest_index tie break is supported")
        if self.engine not in ("auto", "closed", "grid"):
            raise ValueError(f"unknown engine {self.engine!r}")

    def to_json(self):
        return {"M": self.M, "theta": float(self.theta), "epsilon": float(self.epsilon),
                "family": self.family.to_json(),
                "integ": None if self.integ is None else self.integ.to_json(),
                "tie_break": self.tie_break, "engine": self.engine}

    @classmethod
    def from_json(cls, doc):
        integ = doc.get("integ")
        return cls(M=doc["M"], theta=doc["theta"], epsilon=doc.get("epsilon", 0.0),
                   family=DivergenceFamily.from_json(doc["family"]),
                   integ=None if integ is None else IntegratorSpec.from_json(integ),
                   tie_break=doc.get("tie_break", "lowest_index"),
                   engine=doc.get("engine", "auto"))


@dataclass(frozen=True)
class CondensationMetrics:
    ratio_points: float
    ratio_words: float
    unique_points: int
    unique_words: int

    def to_json(self):
        return {"ratio_points": self.ratio_points, "ratio_words": self.ratio_words,
                "unique_points": self.unique_points, "unique_words": self.unique_words}


def mixing_coefficients(M, theta):
    """Stage mixing rates ``pi`` and the final stage weights ``q`` (both length M)."""
    M = int(M)
    if M < 1:
        raise ValueError("M must be >= 1")
    if theta < 2.0:
        raise ValueError("theta must be >= 2")
    k = np.arange(M, dtype=float)
    pi = np.ones(M)
    pi[1:] = theta / (k[1:] + theta)
    keep = np.ones(M)
    keep[1:] = k[1:] / (k[1:] + theta)        # 1 - pi_k without cancellation
    tail = np.ones(M)
    for l in range(M - 2, -1, -1):
        tail[l] = tail[l + 1] * keep[l + 1]
    return pi, pi * tail


class StagewiseEstimate:
    """Fitted estimate: chosen word per stage, stage weights, merged combination, loss trace."""

    def __init__(self, dictionary, chosen, stage_weights, loss_trace, config, probe_history=None):
        self.dictionary = dictionary
        self.chosen = np.asarray(chosen, dtype=np.int64)
        self.stage_weights = np.asarray(stage_weights, dtype=float)
        self.loss_trace = list(loss_trace)
        self.config = config
        self.probe_history = probe_history
        self.combination = XiCombination(dictionary, self.chosen, self.stage_weights,
                                         config.family)

    @property
    def family(self):
        return self.config.family

    @property
    def dim(self):
        return self.dictionary.dim

    def pdf(self, x):
        return self.combination.pdf(x)

    __call__ = pdf

    def components(self):
        return self.combination.components()

    def running(self, stage):
        """The estimate after ``stage`` + 1 words (``stage`` is 0-based)."""
        n = int(stage) + 1
        if not 1 <= n <= len(self.chosen):
            raise IndexError(stage)
        _, q = mixing_coefficients(n, self.config.theta)
        return XiCombination(self.dictionary, self.chosen[:n], q, self.config.family)

    def to_json(self, include_dictionary=True):
        doc = {
            "chosen": self.chosen.tolist(),
            "stage_weights": self.stage_weights.tolist(),
            "combination": {"indices": self.combination.indices.tolist(),
                            "weights": self.combination.weights.tolist()},
            "loss_trace": [lv.to_json() for lv in self.loss_trace],
            "config": self.config.to_json(),
        }
        if include_dictionary:
            doc["dictionary"] = self.dictionary.to_json()
        return doc

    @classmethod
    def from_json(cls, doc, dictionary=None):
        if dictionary is None:
            dictionary = Dictionary.from_json(doc["dictionary"])
        trace = [LossValue(lv["value"], lv["integral_term"], lv["sample_term"])
                 for lv in doc["loss_trace"]]
        return cls(dictionary, doc["chosen"], doc["stage_weights"], trace,
                   FitConfig.from_json(doc["config"]))


# ---------------------------------------------------------------------------
# loss engines


class _Engine:
    """Running state of one fit. ``probe`` scores every word, ``commit`` takes one."""

    def __init__(self, words, family, samples):
        self.family = family
        self.centers = np.ascontiguousarray(words.word_centers, dtype=float)
        self.hs = np.ascontiguousarray(words.word_h, dtype=float)
        self.W, self.d = self.centers.shape
        X = as_points(samples, self.d)
        wts = np.full(X.shape[0], 1.0 / X.shape[0])
        mode = K.MODE_KL if family.is_kl else K.MODE_BETA
        self.word_sample = -K.word_xi_means(self.centers, self.hs, X, wts, mode, family.beta)
        self.sample_cur = 0.0
        self.terms = {}

    def probe(self, pi):
        sample = (1.0 - pi) * self.sample_cur + pi * self.word_sample
        return sample, self._probe_integral(pi)

    def commit(self, w, pi):
        self.sample_cur = (1.0 - pi) * self.sample_cur + pi * self.word_sample[w]
        self._commit_integral(w, pi)
        self.terms = {s: (1.0 - pi) * q for s, q in self.terms.items()}
        self.terms[w] = self.terms.get(w, 0.0) + pi

    def load(self, combination):
        """Rebuild the state of an arbitrary combination by sequential commits."""
        total = 0.0
        for q, s in combination.terms():
            total += q
            self.commit(int(s), q / total)


class _L2Engine(_Engine):
    name = "l2"

    def __init__(self, words, family, samples):
        super().__init__(words, family, samples)
        self.self_int = (4.0 * math.pi * self.hs ** 2) ** (-0.5 * self.d)
        self.gg = 0.0
        self.v = np.zeros(self.W)

    def _probe_integral(self, pi):
        keep = 1.0 - pi
        return 0.5 * (keep * keep * self.gg + 2.0 * pi * keep * self.v + pi * pi * self.self_int)

    def _commit_integral(self, w, pi):
        keep = 1.0 - pi
        self.gg = keep * keep * self.gg + 2.0 * pi * keep * self.v[w] + pi * pi * self.self_int[w]
        row = cross_integral_row(self.centers[w], self.hs[w], self.centers, self.hs)
        self.v = keep * self.v + pi * row


class _KLEngine(_Engine):
    name = "kl"

    def __init__(self, words, family, samples):
        super().__init__(words, family, samples)
        # exponent of the running estimate: -A |x|^2 / 2 + b.x + C, origin shifted to the word mean
        self.origin = self.centers.mean(axis=0)
        c = self.centers - self.origin
        h2 = self.hs ** 2
        self.wa = 1.0 / h2
        self.wb = c / h2[:, None]
        self.wc = -(c * c).sum(axis=1) / (2.0 * h2) - 0.5 * self.d * (_LOG_2PI + np.log(h2))
        self.A = 0.0
        self.b = np.zeros(self.d)
        self.C = 0.0

    def _log_mass(self, A, b, C):
        return C + (b * b).sum(axis=-1) / (2.0 * A) + 0.5 * self.d * np.log(2.0 * math.pi / A)

    def _probe_integral(self, pi):
        keep = 1.0 - pi
        A = keep * self.A + pi * self.wa
        b = keep * self.b[None, :] + pi * self.wb
        C = keep * self.C + pi * self.wc
        return np.exp(self._log_mass(A, b, C))

    def _commit_integral(self, w, pi):
        keep = 1.0 - pi
        self.A = keep * self.A + pi * self.wa[w]
        self.b = keep * self.b + pi * self.wb[w]
        self.C = keep * self.C + pi * self.wc[w]


class _CubicEngine(_Engine):
    """beta = 1/2: g = S^2 with S = sum q psi_l, psi = phi^(1/2) = a N(c, 2 h^2 I)."""

    name = "cubic"

    def __init__(self, words, family, samples):
        super().__init__(words, family, samples)
        b = family.beta
        d = self.d
        h2 = self.hs ** 2
        self.var = h2 / b
        self.amp = (2.0 * math.pi * h2) ** (0.5 * d * (1.0 - b)) * b ** (-0.5 * d)
        self.T3 = self.amp ** 3 * (2.0 * math.pi * self.var) ** (-d) * 3.0 ** (-0.5 * d)
        self.I3 = 0.0
        self.A2 = np.zeros(self.W)    # int S^2 psi_w
        self.B1 = np.zeros(self.W)    # int S psi_w^2

    def _probe_integral(self, pi):
        keep = 1.0 - pi
        raw = (keep ** 3 * self.I3 + 3.0 * keep * keep * pi * self.A2
               + 3.0 * keep * pi * pi * self.B1 + pi ** 3 * self.T3)
        return raw / (1.0 + self.family.beta)

    def _commit_integral(self, c, pi):
        keep = 1.0 - pi
        d = self.d
        cc, vc, ac = self.centers[c], self.var[c], self.amp[c]
        self.I3 = (keep ** 3 * self.I3 + 3.0 * keep * keep * pi * self.A2[c]
                   + 3.0 * keep * pi * pi * self.B1[c] + pi ** 3 * self.T3[c])
        # int psi_c psi_w^2: N_w^2 = (4 pi v_w)^(-d/2) N(x; c_w, v_w / 2)
        r2 = ((self.centers - cc) ** 2).sum(axis=1)
        v = vc + 0.5 * self.var
        tri_cww = (ac * self.amp ** 2 * (4.0 * math.pi * self.var) ** (-0.5 * d)
                   * np.exp(-r2 / (2.0 * v) - 0.5 * d * (_LOG_2PI + np.log(v))))
        tri_ccw = ac * ac * self.amp * K.weighted_triple_row(
            cc[None, :], np.array([vc]), np.ones(1), cc, vc, self.centers, self.var)
        if self.terms and keep > 0.0:
            idx = np.fromiter(self.terms.keys(), dtype=np.int64)
            q = np.fromiter(self.terms.values(), dtype=float)
            s_cw = ac * self.amp * K.weighted_triple_row(
                self.centers[idx], self.var[idx], q * self.amp[idx], cc, vc, self.centers, self.var)
        else:
            s_cw = 0.0
        self.A2 = keep * keep * self.A2 + 2.0 * pi * keep * s_cw + pi * pi * tri_ccw
        self.B1 = keep * self.B1 + pi * tri_cww


class _GridEngine(_Engine):
    name = "grid"

    def __init__(self, words, family, samples, integ):
        super().__init__(words, family, samples)
        self.integ = integ
        self.gx, self.gw = grid_nodes(integ)
        self.base = np.zeros(self.gx.shape[0])

    def _probe_integral(self, pi):
        mode = K.MODE_KL if self.family.is_kl else K.MODE_BETA
        return K.grid_probe(self.base, self.gx, self.gw, self.centers, self.hs, pi, mode,
                            self.family.beta)

    def _commit_integral(self, w, pi):
        lp = _iso_logpdf(self.gx, self.centers[w], self.hs[w] ** 2)
        add = lp if self.family.is_kl else np.exp(self.family.beta * lp)
        self.base = (1.0 - pi) * self.base + pi * add


class _WordCloud:
    """Words as an equal-weight Gaussian collection, for boxes and coverage checks."""

    def __init__(self, words):
        self.word_centers = words.word_centers
        self.word_h = words.word_h

    @property
    def dim(self):
        return self.word_centers.shape[1]

    def components(self):
        n = self.word_h.shape[0]
        return np.ones(n), self.word_centers, np.repeat(self.word_h[:, None], self.dim, axis=1)


def closed_engine_name(family):
    if family.is_kl:
        return "kl"
    if family.beta == 1.0:
        return "l2"
    if family.beta == 0.5:
        return "cubic"
    return None


def _make_engine(words, loss_samples, cfg):
    fam = cfg.family
    name = closed_engine_name(fam) if cfg.engine != "grid" else None
    if name is None and cfg.engine == "closed":
        raise ValueError(f"no closed-form engine for beta={fam.beta}")
    if name == "l2":
        return _L2Engine(words, fam, loss_samples)
    if name == "kl":
        return _KLEngine(words, fam, loss_samples)
    if name == "cubic":
        return _CubicEngine(words, fam, loss_samples)
    integ = cfg.integ or default_integrator(_WordCloud(words))
    check_coverage(_WordCloud(words), integ)
    return _GridEngine(words, fam, loss_samples, integ)


# ---------------------------------------------------------------------------
# public operations


def fit(dictionary, loss_samples, cfg=None, record_probes=False):
    """Run the M-stage algorithm and return a :class:`StagewiseEstimate`.

    The argmin at every stage is exact over the finite dictionary, so the
    ``epsilon`` slack in ``cfg`` is met with zero. Ties go to the lowest index.
    """
    cfg = cfg or FitConfig()
    if len(dictionary) == 0:
        raise ValueError("dictionary is empty")
    X = as_points(loss_samples, dictionary.dim)
    if X.shape[0] == 0:
        raise ValueError("need at least one loss sample")
    engine = _make_engine(dictionary, X, cfg)
    pi, q = mixing_coefficients(cfg.M, cfg.theta)
    chosen, trace, probes = [], [], []
    for k in range(cfg.M):
        sample, integral = engine.probe(pi[k])
        value = sample + integral
        value = np.where(np.isfinite(value), value, np.inf)
        if not np.isfinite(value).any():
            raise FitError(f"every word gives a non-finite loss at stage {k}", stage=k)
        w = int(np.argmin(value))
        chosen.append(w)
        trace.append(LossValue(float(value[w]), float(integral[w]), float(sample[w])))
        if record_probes:
            probes.append(value)
        engine.commit(w, pi[k])
    return StagewiseEstimate(dictionary, chosen, q, trace, cfg,
                             probe_history=np.array(probes) if record_probes else None)


def stage_loss_probe(dictionary, prev, pi, word_index, loss_samples, cfg=None):
    """Loss of ``u((1 - pi) xi(prev) + pi xi(phi_word))`` with the fit's own engine.

    ``prev`` may be ``None`` for the initial stage (then ``pi`` must be 1).
    Pass ``word_index=None`` to score every word at once (returns arrays).
    """
    cfg = cfg or FitConfig()
    X = as_points(loss_samples, dictionary.dim)
    engine = _make_engine(dictionary, X, cfg)
    if prev is None:
        if pi != 1.0:
            raise ValueError("without a previous combination only pi = 1 is meaningful")
    else:
        engine.load(prev)
    sample, integral = engine.probe(float(pi))
    if word_index is None:
        return sample + integral, sample, integral
    s = int(word_index)
    return LossValue.of(sample[s], integral[s])


def total_mass(combination):
    """Closed-form int of a combination for beta = 1, beta = 1/2 and KL; ``None`` otherwise."""
    fam = combination.family
    q = combination.weights
    c = combination.centers
    h2 = combination.bandwidths ** 2
    d = combination.dim
    if fam.is_kl:
        origin = c.mean(axis=0)
        cs = c - origin
        A = float((q / h2).sum())
        b = (q[:, None] * cs / h2[:, None]).sum(axis=0)
        C = float((q * (-(cs * cs).sum(axis=1) / (2.0 * h2)
                        - 0.5 * d * (_LOG_2PI + np.log(h2)))).sum())
        return math.exp(C + float(b @ b) / (2.0 * A) + 0.5 * d * math.log(2.0 * math.pi / A))
    if fam.beta == 1.0:
        return float(q.sum())
    if fam.beta == 0.5:
        var = 2.0 * h2
        amp = (2.0 * math.pi * h2) ** (0.25 * d) * 2.0 ** (0.5 * d)
        v = var[:, None] + var[None, :]
        r2 = ((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        pair = np.exp(-r2 / (2.0 * v) - 0.5 * d * (_LOG_2PI + np.log(v)))
        wa = q * amp
        return float(wa @ pair @ wa)
    return None


def normalize(est, integ=None):
    """Return ``(gamma, handle)`` with ``gamma = int f_hat`` and ``handle = f_hat / gamma``.

    Without ``integ`` the closed form is used where one exists, otherwise a
    default tensor grid around the estimate.
    """
    comb = est.combination if isinstance(est, StagewiseEstimate) else est
    if integ is None:
        gamma = total_mass(comb)
        if gamma is None:
            gamma = integrate(comb.pdf, default_integrator(comb))
    else:
        check_coverage(comb, integ)
        gamma = integrate(comb.pdf, integ)
    if not (np.isfinite(gamma) and gamma > 0.0):
        raise NumericIntegrityError(f"normalising constant is {gamma!r}")
    return gamma, ScaledDensity(comb, 1.0 / gamma)


def condensation_metrics(est, N, dictionary=None):
    dictionary = dictionary or est.dictionary
    words = np.unique(est.chosen)
    points = np.unique(dictionary.point_of(est.chosen))
    return CondensationMetrics(
        ratio_points=len(points) / float(N),
        ratio_words=len(words) / float(len(dictionary)),
        unique_points=int(len(points)),
        unique_words=int(len(words)),
    )


def with_family(cfg, family):
    return replace(cfg, family=family)
