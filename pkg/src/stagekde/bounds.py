"""Log-ratio moment constants, the KL curvature bound, sampling fluctuation,
and a Monte Carlo check of the stagewise error bound.

For Gaussian words ``phi_a = N(X_i, h_a^2 I)`` etc., the moment

    J = int phi_a(x) (log phi_b(x) - log phi_c(x))^2 dx

has the closed form ``2 d C1^2 + |C2|^2 + (d C1 + C3)^2`` in terms of three
shape constants, and the dictionary-wide maximum of J is bounded by a
quantity depending only on the bandwidth ratio and the point diameter.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from . import _kernels as K
from .density import IntegratorSpec, _iso_logpdf, as_points, check_coverage, default_integrator, \
    grid_nodes, integrate
from .dictionary import BandwidthLadder
from .errors import DegenerateDataError
from .fitter import normalize

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LogRatioConstants:
    c1: float
    c2_norm_sq: float
    c3: float
    j: float
    inputs: tuple

    def to_json(self):
        return {"C1": self.c1, "C2_norm_sq": self.c2_norm_sq, "C3": self.c3, "J": self.j}


def log_ratio_constants(h_a, h_b, h_c, xi, xj, xk):
    xi, xj, xk = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (xi, xj, xk))
    if not (xi.shape == xj.shape == xk.shape):
        raise ValueError("centers must share one dimension")
    if min(h_a, h_b, h_c) <= 0:
        raise ValueError("bandwidths must be positive")
    d = xi.shape[0]
    hab2 = (h_a / h_b) ** 2
    hac2 = (h_a / h_c) ** 2
    c1 = 0.5 * (hac2 - hab2)
    c2 = (hac2 * (xi - xk) - hab2 * (xi - xj)) / h_a
    c3 = (((xi - xk) ** 2).sum() / (2.0 * h_c * h_c) - ((xi - xj) ** 2).sum() / (2.0 * h_b * h_b)
          + d * math.log(h_c / h_b))
    c2sq = float(c2 @ c2)
    j = 2.0 * d * c1 * c1 + c2sq + (d * c1 + c3) ** 2
    return LogRatioConstants(float(c1), c2sq, float(c3), float(j),
                             (h_a, h_b, h_c, xi.tolist(), xj.tolist(), xk.tolist(), d))


_ORACLE_RES = {1: 2049, 2: 257, 3: 65}


def log_ratio_moment_quadrature(h_a, h_b, h_c, xi, xj, xk, integ=None):
    """Direct quadrature of ``int phi_a (log phi_b - log phi_c)^2``.

    The default grid spans ``xi +- 10 h_a`` on every axis.
    """
    xi, xj, xk = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (xi, xj, xk))
    d = xi.shape[0]
    if integ is None:
        if d > 3:
            raise ValueError("quadrature needs d <= 3")
        box = tuple((float(c - 10 * h_a), float(c + 10 * h_a)) for c in xi)
        integ = IntegratorSpec("grid", box, _ORACLE_RES[d])
    w = _Word(xi, h_a)
    check_coverage(w, integ)

    def integrand(x):
        diff = _iso_logpdf(x, xj, h_b * h_b) - _iso_logpdf(x, xk, h_c * h_c)
        return np.exp(_iso_logpdf(x, xi, h_a * h_a)) * diff * diff

    return integrate(integrand, integ)


class _Word:
    def __init__(self, c, h):
        self.c, self.h = c, h
        self.dim = c.shape[0]

    def components(self):
        return np.ones(1), self.c[None, :], np.full((1, self.dim), self.h)


@dataclass(frozen=True)
class CurvatureBound:
    h_ratio: float
    h_min: float
    r_sq: float
    bound: float
    dim: int

    def to_json(self):
        return {"h_ratio": self.h_ratio, "h_min": self.h_min, "r_sq": self.r_sq,
                "bound": self.bound, "dim": self.dim}


def kl_curvature_bound(ladder, points):
    """Upper bound on every log-ratio moment J over a dictionary built from ``ladder`` x ``points``."""
    X = as_points(points)
    m, d = X.shape
    if m < 2:
        raise DegenerateDataError("the curvature bound needs at least 2 points")
    values = ladder.values if isinstance(ladder, BandwidthLadder) else tuple(ladder)
    h_min, h_max = min(values), max(values)
    hr = h_max / h_min
    r2 = float(pdist(X, "sqeuclidean").max())
    bound = (2.0 * d * hr ** 4 + 4.0 * (hr * hr / h_min) ** 2 * r2
             + (d * hr * hr + r2 / h_min ** 2 + d * math.log(hr)) ** 2)
    return CurvatureBound(hr, h_min, r2, bound, d)


def log_ratio_table(centers, hs):
    """J for every ordered word triple ``(a, b, c)``, shape ``(W, W, W)``."""
    C = np.asarray(centers, dtype=float)
    h = np.asarray(hs, dtype=float)
    d = C.shape[1]
    ha = h[:, None, None]
    hb = h[None, :, None]
    hc = h[None, None, :]
    hab2 = (ha / hb) ** 2
    hac2 = (ha / hc) ** 2
    c1 = 0.5 * (hac2 - hab2)
    dij = C[:, None, :] - C[None, :, :]          # X_a - X_b
    lin = (hac2[..., None] * dij[:, None, :, :] - hab2[..., None] * dij[:, :, None, :]) / ha[..., None]
    c2sq = (lin * lin).sum(axis=-1)
    r2 = (dij * dij).sum(axis=-1)
    c3 = r2[:, None, :] / (2.0 * hc * hc) - r2[:, :, None] / (2.0 * hb * hb) + d * np.log(hc / hb)
    return 2.0 * d * c1 * c1 + c2sq + (d * c1 + c3) ** 2


def max_log_ratio_moment(dictionary):
    """Exhaustive ``max J`` over word triples; returns ``(value, (a, b, c))``."""
    table = log_ratio_table(dictionary.word_centers, dictionary.word_h)
    flat = int(np.argmax(table))
    return float(table.flat[flat]), tuple(int(i) for i in np.unravel_index(flat, table.shape))


# ---------------------------------------------------------------------------
# population moments of xi(phi) under a Gaussian mixture


def word_xi_expectation(centers, hs, family, target):
    """``int xi(phi_w) f`` for every word when ``f`` is a Gaussian mixture."""
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    h2 = np.asarray(hs, dtype=float) ** 2
    d = C.shape[1]
    if family.is_kl:
        return -0.5 * d * (_LOG_2PI + np.log(h2)) - target.second_moment_about(C) / (2.0 * h2)
    b = family.beta
    # phi^beta = a N(c, h^2 / beta I)
    log_a = 0.5 * d * (1.0 - b) * (_LOG_2PI + np.log(h2)) - 0.5 * d * math.log(b)
    s = h2 / b
    acc = np.zeros(C.shape[0])
    for w_k, mu, cov in zip(target.weights, target.means, target.covs):
        lam, V = np.linalg.eigh(cov)
        proj = (C - mu) @ V
        tot = lam[None, :] + s[:, None]
        logn = -0.5 * (proj * proj / tot).sum(axis=1) - 0.5 * (d * _LOG_2PI + np.log(tot).sum(axis=1))
        acc += w_k * np.exp(logn + log_a)
    return (acc - 1.0) / b


def word_u_integral(hs, family, d):
    """``int U(xi(phi_w))`` for every word."""
    h2 = np.asarray(hs, dtype=float) ** 2
    if family.is_kl:
        return np.ones_like(h2)
    b = family.beta
    return (2.0 * math.pi * h2) ** (-0.5 * d * b) * (1.0 + b) ** (-0.5 * d) / (1.0 + b)


def target_offset(family, target, integ=None):
    """``int U(xi(f)) - f xi(f)``, the target-only part of every divergence against ``f``."""
    integ = integ or default_integrator(target)
    check_coverage(target, integ)

    def fn(x):
        fx = target.pdf(x)
        return family.U_xi_of_density(fx) - fx * family.xi_of_density(fx)

    return integrate(fn, integ)


def empirical_fluctuation_sup(dictionary, family, true_f, samples, integ=None, sample_weights=None):
    """``max_w |mean xi(phi_w(X)) - int xi(phi_w) f|``.

    The sample mean uses ``sample_weights`` when given (they should sum to 1).
    The population term is closed form for Gaussian mixtures, or quadrature on
    ``integ`` when one is passed.
    """
    C, h = dictionary.word_centers, dictionary.word_h
    X = as_points(samples, dictionary.dim)
    wts = np.full(X.shape[0], 1.0 / X.shape[0]) if sample_weights is None \
        else np.asarray(sample_weights, dtype=float)
    mode = K.MODE_KL if family.is_kl else K.MODE_BETA
    emp = K.word_xi_means(C, h, X, wts, mode, family.beta)
    if integ is None:
        pop = word_xi_expectation(C, h, family, true_f)
    else:
        check_coverage(true_f, integ)
        gx, gw = grid_nodes(integ)
        pop = K.word_xi_means(C, h, gx, gw * true_f.pdf(gx), mode, family.beta)
    return float(np.abs(emp - pop).max())


# ---------------------------------------------------------------------------
# Monte Carlo check of the error bound


@dataclass(frozen=True)
class ErrorBoundReport:
    lhs: float
    hull_term: float
    nu_term: float
    b_term: float
    epsilon: float
    heuristic: bool
    replicates: int
    per_replicate: tuple
    gamma_mean: float
    gamma_gap_mean: float

    @property
    def rhs(self):
        return self.hull_term + self.nu_term + self.b_term + self.epsilon

    @property
    def passed(self):
        return bool(self.lhs <= self.rhs)

    def to_json(self):
        return {
            "lhs": self.lhs,
            "rhs_terms": {"hull_term": self.hull_term, "nu_term": self.nu_term,
                          "b_term": self.b_term, "epsilon": self.epsilon},
            "rhs": self.rhs,
            "pass": self.passed,
            "heuristic": self.heuristic,
            "replicates": self.replicates,
            "diagnostics": {"gamma_mean": self.gamma_mean,
                            "inverse_gamma_gap_mean": self.gamma_gap_mean,
                            "per_replicate": [dict(r) for r in self.per_replicate]},
            "notes": "hull_term uses the best single dictionary word in place of the infimum "
                     "over the whole hull; the b_term uses the KL curvature bound"
                     + (" and is only heuristic for this family" if self.heuristic else ""),
        }


def estimate_divergence(est, target, offset):
    """``D_U(f, f_hat)`` from the fit's own integral term and closed-form word moments."""
    comb = est.combination
    pop = word_xi_expectation(comb.centers, comb.bandwidths, est.family, target)
    return est.loss_trace[-1].integral_term - float(comb.weights @ pop) - offset


def _bound_replicate(spec, index, offset):
    from .simulation import fit_replicate

    rep = fit_replicate(spec, index)
    fam = spec.family
    D = rep.dictionary
    pop = word_xi_expectation(D.word_centers, D.word_h, fam, spec.target)
    hull = float((word_u_integral(D.word_h, fam, D.dim) - pop).min() - offset)
    nu = empirical_fluctuation_sup(D, fam, spec.target, rep.loss_points)
    curv = kl_curvature_bound(D.ladder, D.points).bound
    lhs = estimate_divergence(rep.estimate, spec.target, offset)
    gamma, _ = normalize(rep.estimate)
    return {"replicate": index, "lhs": lhs, "hull": hull, "nu": nu, "curvature_bound": curv,
            "gamma": gamma, "inverse_gamma_gap": abs(1.0 - 1.0 / gamma)}


def error_bound_check(spec, replicates=None, workers=1):
    """Compare the Monte Carlo mean of ``D_U(f, f_hat)`` with the computable bound.

    The bound is hull term + 2 E[sup fluctuation] + theta^2 / (M + theta - 1) E[curvature] + eps.
    """
    target = spec.target
    if not getattr(target, "finite_fourth_moment", False):
        raise ValueError("the error bound needs a target with a finite fourth moment")
    R = int(replicates or spec.replicates)
    offset = target_offset(spec.family, target)
    idx = range(R)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda r: _bound_replicate(spec, r, offset), idx))
    else:
        rows = [_bound_replicate(spec, r, offset) for r in idx]
    rows.sort(key=lambda r: r["replicate"])

    def mean(key):
        return math.fsum(r[key] for r in rows) / R

    th = spec.theta
    return ErrorBoundReport(
        lhs=mean("lhs"), hull_term=mean("hull"), nu_term=2.0 * mean("nu"),
        b_term=th * th / (spec.M + th - 1.0) * mean("curvature_bound"),
        epsilon=float(spec.epsilon), heuristic=not spec.family.is_kl, replicates=R,
        per_replicate=tuple(tuple(sorted(r.items())) for r in rows),
        gamma_mean=mean("gamma"), gamma_gap_mean=mean("inverse_gamma_gap"),
    )
