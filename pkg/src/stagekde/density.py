"""Gaussian words, Gaussian mixtures, xi-scale combinations of words, the
closed-form Gaussian integral algebra, and the shared deterministic integrator.

Every density object exposes ``dim``, ``pdf(X)`` for an ``(k, d)`` array and
``components()`` returning ``(weights, means, axis_sds)`` of the Gaussian pieces
it is built from (used for integration boxes and coverage checks).
"""

import functools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import CoverageError

_LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_RESOLUTION = {1: 2048, 2: 512, 3: 64}
DEFAULT_MARGIN = 5.0
MASS_TOLERANCE = 1e-3
_CHUNK = 1 << 18


def as_points(x, dim=None):
    """Coerce ``x`` to a float ``(k, d)`` array.

    A 1-d input is read as one point unless ``dim == 1``, where it is a column.
    """
    X = np.asarray(x, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1) if dim == 1 else X.reshape(1, -1)
    elif X.ndim != 2:
        raise ValueError(f"points must be 1-d or 2-d, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected d={dim}, got d={X.shape[1]}")
    return X


def _iso_logpdf(X, center, h2):
    d = X.shape[1]
    r2 = ((X - center) ** 2).sum(axis=1)
    return -r2 / (2.0 * h2) - 0.5 * d * (_LOG_2PI + math.log(h2))


# ---------------------------------------------------------------------------
# density types


class GaussianWord:
    """Isotropic normal density N(center, h^2 I)."""

    def __init__(self, center, h):
        self.center = np.atleast_1d(np.asarray(center, dtype=float)).copy()
        self.h = float(h)
        if not self.h > 0.0:
            raise ValueError(f"bandwidth must be positive, got {h}")
        self.center.flags.writeable = False

    @property
    def dim(self):
        return self.center.shape[0]

    def logpdf(self, x):
        return _iso_logpdf(as_points(x, self.dim), self.center, self.h * self.h)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    __call__ = pdf

    def components(self):
        return np.ones(1), self.center[None, :], np.full((1, self.dim), self.h)

    def __repr__(self):
        return f"GaussianWord(center={self.center.tolist()}, h={self.h!r})"


class WordTable:
    """Flat arrays of word centers and bandwidths (the minimal dictionary protocol)."""

    def __init__(self, centers, hs):
        self.word_centers = np.ascontiguousarray(np.atleast_2d(np.asarray(centers, dtype=float)))
        self.word_h = np.ascontiguousarray(np.asarray(hs, dtype=float).ravel())
        if self.word_centers.shape[0] != self.word_h.shape[0]:
            raise ValueError("one bandwidth per center is required")

    @classmethod
    def from_words(cls, words):
        words = list(words)
        return cls(np.stack([w.center for w in words]), [w.h for w in words])

    @property
    def dim(self):
        return self.word_centers.shape[1]

    def __len__(self):
        return self.word_h.shape[0]


class MixtureDensity:
    """Finite Gaussian mixture with full covariances."""

    # every Gaussian mixture has moments of all orders
    finite_fourth_moment = True

    def __init__(self, weights, means, covs, name=None):
        self.weights = np.asarray(weights, dtype=float).ravel()
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        covs = np.asarray(covs, dtype=float)
        K, d = self.means.shape
        if covs.ndim == 2 and K == 1:
            covs = covs[None]
        self.covs = covs
        self.name = name
        if self.weights.shape[0] != K or covs.shape != (K, d, d):
            raise ValueError("weights, means and covs disagree in shape")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2)):
            raise ValueError("covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError:
            raise ValueError("covariances must be positive definite") from None
        self._chol = chol
        self._logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        offdiag = covs - np.einsum("kii->ki", covs)[:, :, None] * np.eye(d)
        self.diag_vars = np.einsum("kii->ki", covs).copy() if not np.any(offdiag) else None
        for a in (self.weights, self.means, self.covs):
            a.flags.writeable = False

    @classmethod
    def isotropic(cls, weights, means, variances, name=None):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        v = np.asarray(variances, dtype=float).ravel()
        d = means.shape[1]
        return cls(weights, means, v[:, None, None] * np.eye(d), name=name)

    @classmethod
    def diagonal(cls, weights, means, axis_vars, name=None):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        v = np.broadcast_to(np.asarray(axis_vars, dtype=float), means.shape)
        covs = np.einsum("kp,pq->kpq", v, np.eye(means.shape[1]))
        return cls(weights, means, covs, name=name)

    @property
    def dim(self):
        return self.means.shape[1]

    def __len__(self):
        return self.weights.shape[0]

    def pdf(self, x):
        X = as_points(x, self.dim)
        d = self.dim
        out = np.zeros(X.shape[0])
        for k in range(len(self)):
            if self.weights[k] == 0.0:
                continue
            diff = X - self.means[k]
            z = np.linalg.solve(self._chol[k], diff.T)
            q = (z * z).sum(axis=0)
            out += self.weights[k] * np.exp(-0.5 * q - 0.5 * (d * _LOG_2PI + self._logdet[k]))
        return out

    __call__ = pdf

    def sample(self, n, rng):
        """Draw ``n`` points; component labels first, then all normals, both from ``rng``."""
        labels = rng.choice(len(self), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[labels] + np.einsum("nij,nj->ni", self._chol[labels], z)

    def components(self):
        sds = np.sqrt(np.einsum("kii->ki", self.covs))
        return self.weights, self.means, sds

    def second_moment_about(self, c):
        """E_f ||X - c||^2 for each row of ``c``."""
        c = np.atleast_2d(c)
        tr = np.einsum("kii->k", self.covs)
        r2 = ((self.means[None, :, :] - c[:, None, :]) ** 2).sum(axis=2)
        return ((r2 + tr[None, :]) * self.weights[None, :]).sum(axis=1)

    def to_json(self):
        doc = {"components": [
            {"weight": float(w), "mean": m.tolist(), "cov": c.tolist()}
            for w, m, c in zip(self.weights, self.means, self.covs)
        ]}
        if self.name:
            doc["name"] = self.name
        return doc

    @classmethod
    def from_json(cls, doc):
        comps = doc["components"]
        if not comps:
            raise ValueError("mixture needs at least one component")
        weights = [float(c["weight"]) for c in comps]
        means = [c["mean"] for c in comps]
        covs = [c["cov"] for c in comps]
        return cls(weights, means, covs, name=doc.get("name"))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


class XiCombination:
    """u(sum_l q_l xi(phi_l)) over words of a dictionary, stored by word index.

    Repeated indices are merged by adding their weights (value preserving,
    since the combination is linear in the xi scale).
    """

    def __init__(self, words, indices, weights, family):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        wts = np.asarray(weights, dtype=float).ravel()
        if idx.shape != wts.shape or idx.size == 0:
            raise ValueError("need one weight per index and at least one term")
        if np.any(wts < 0.0):
            raise ValueError("weights must be non-negative")
        if abs(wts.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {wts.sum()!r})")
        if idx.min() < 0 or idx.max() >= len(words):
            raise IndexError("word index outside the dictionary")
        uniq, first = np.unique(idx, return_index=True)
        order = uniq[np.argsort(first)]
        merged = np.zeros(order.shape[0])
        pos = {int(s): k for k, s in enumerate(order)}
        for s, w in zip(idx, wts):
            merged[pos[int(s)]] += w
        self.words = words
        self.indices = order
        self.weights = merged
        self.family = family
        self.indices.flags.writeable = False
        self.weights.flags.writeable = False

    @classmethod
    def from_words(cls, words, weights, family):
        table = WordTable.from_words(words)
        return cls(table, np.arange(len(table)), weights, family)

    @property
    def dim(self):
        return self.words.word_centers.shape[1]

    @property
    def centers(self):
        return self.words.word_centers[self.indices]

    @property
    def bandwidths(self):
        return self.words.word_h[self.indices]

    def terms(self):
        return list(zip(self.weights.tolist(), self.indices.tolist()))

    def xi_value(self, x):
        """sum_l q_l xi(phi_l(x)), computed from log densities (no underflow)."""
        X = as_points(x, self.dim)
        fam = self.family
        acc = np.zeros(X.shape[0])
        for q, c, h in zip(self.weights, self.centers, self.bandwidths):
            lp = _iso_logpdf(X, c, h * h)
            acc += q * (lp if fam.is_kl else np.expm1(fam.beta * lp) / fam.beta)
        return acc

    def pdf(self, x):
        X = as_points(x, self.dim)
        fam = self.family
        if fam.is_kl:
            return np.exp(self.xi_value(X))
        b = fam.beta
        S = np.zeros(X.shape[0])
        for q, c, h in zip(self.weights, self.centers, self.bandwidths):
            S += q * np.exp(b * _iso_logpdf(X, c, h * h))
        return S if b == 1.0 else S ** (1.0 / b)

    __call__ = pdf

    def to_mixture(self):
        if self.family.is_kl or self.family.beta != 1.0:
            raise ValueError("only beta = 1 combinations are Gaussian mixtures")
        w = self.weights / self.weights.sum()
        return MixtureDensity.isotropic(w, self.centers, self.bandwidths ** 2)

    def components(self):
        return self.weights, self.centers, np.repeat(self.bandwidths[:, None], self.dim, axis=1)


class ScaledDensity:
    """``scale * base(x)``; used for normalized estimates."""

    def __init__(self, base, scale):
        self.base = base
        self.scale = float(scale)

    @property
    def dim(self):
        return self.base.dim

    def pdf(self, x):
        return self.scale * self.base.pdf(x)

    __call__ = pdf

    def components(self):
        return self.base.components()


def eval_density(model, x):
    """Evaluate a density model at one point (returns float) or many (returns array)."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 0 or (X.ndim == 1 and (model.dim != 1 or X.shape[0] == 1))
    if X.ndim == 1 and model.dim != 1 and X.shape[0] != model.dim:
        raise ValueError(f"dimension mismatch: expected d={model.dim}, got d={X.shape[0]}")
    vals = model.pdf(as_points(X, model.dim))
    return float(vals[0]) if single else vals


# ---------------------------------------------------------------------------
# closed-form Gaussian integrals


def gaussian_cross_integral(a, b):
    """int phi_a phi_b dx for two isotropic words."""
    if a.dim != b.dim:
        raise ValueError("words have different dimensions")
    v = a.h * a.h + b.h * b.h
    r2 = float(((a.center - b.center) ** 2).sum())
    return math.exp(-r2 / (2.0 * v) - 0.5 * a.dim * (_LOG_2PI + math.log(v)))


def cross_integral_row(center, h, centers, hs):
    """int phi(.|center, h) phi_w for every word w in (centers, hs)."""
    d = centers.shape[1]
    v = h * h + hs * hs
    r2 = ((centers - center) ** 2).sum(axis=1)
    return np.exp(-r2 / (2.0 * v) - 0.5 * d * (_LOG_2PI + np.log(v)))


def as_mixture(model):
    """Return ``model`` as a :class:`MixtureDensity` when it is a Gaussian convex combination."""
    if isinstance(model, MixtureDensity):
        return model
    if isinstance(model, GaussianWord):
        return MixtureDensity.isotropic([1.0], model.center[None, :], [model.h ** 2])
    if isinstance(model, XiCombination) and not model.family.is_kl and model.family.beta == 1.0:
        return model.to_mixture()
    return None


def mixture_inner(a, b):
    """int f_a f_b dx for two Gaussian mixtures."""
    if a.dim != b.dim:
        raise ValueError("mixtures have different dimensions")
    d = a.dim
    if a.diag_vars is not None and b.diag_vars is not None:
        total = 0.0
        for i in range(len(a)):
            v = a.diag_vars[i][None, :] + b.diag_vars
            r = (a.means[i][None, :] - b.means) ** 2
            dens = np.exp(-(r / (2.0 * v)).sum(axis=1) - 0.5 * (d * _LOG_2PI + np.log(v).sum(axis=1)))
            total += a.weights[i] * float((dens * b.weights).sum())
        return total
    total = 0.0
    for i in range(len(a)):
        S = a.covs[i][None, :, :] + b.covs
        diff = a.means[i][None, :] - b.means
        L = np.linalg.cholesky(S)
        z = np.linalg.solve(L, diff[:, :, None])[:, :, 0]
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        dens = np.exp(-0.5 * (z * z).sum(axis=1) - 0.5 * (d * _LOG_2PI + logdet))
        total += a.weights[i] * float((dens * b.weights).sum())
    return total


def combine_stage(prev, word_index, pi):
    """One stagewise update: scale ``prev`` weights by (1 - pi), put ``pi`` on ``word_index``."""
    pi = float(pi)
    if not 0.0 <= pi <= 1.0:
        raise ValueError("pi must lie in [0, 1]")
    if pi == 0.0:
        return prev
    idx = list(prev.indices.tolist())
    wts = list(((1.0 - pi) * prev.weights).tolist())
    if pi == 1.0:
        idx, wts = [], []
    s = int(word_index)
    if s in idx:
        wts[idx.index(s)] += pi
    else:
        idx.append(s)
        wts.append(pi)
    keep = [k for k, w in enumerate(wts) if w > 0.0]
    return XiCombination(prev.words, [idx[k] for k in keep], [wts[k] for k in keep], prev.family)


# ---------------------------------------------------------------------------
# integration


@dataclass(frozen=True)
class IntegratorSpec:
    mode: str = "grid"
    bounds: tuple = ((-8.0, 8.0),)
    resolution: int = 1024
    seed: int = 0

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        if self.mode not in ("grid", "montecarlo"):
            raise ValueError(f"unknown integrator mode {self.mode!r}")
        if any(hi <= lo for lo, hi in bounds):
            raise ValueError("each axis needs lo < hi")
        if self.mode == "grid":
            if len(bounds) > 3:
                raise ValueError("tensor-grid quadrature is limited to d <= 3")
            if self.resolution < 32:
                raise ValueError("tensor-grid resolution must be >= 32 per axis")

    @property
    def dim(self):
        return len(self.bounds)

    def with_resolution(self, resolution):
        return IntegratorSpec(self.mode, self.bounds, int(resolution), self.seed)

    def to_json(self):
        return {"mode": self.mode, "bounds": [list(b) for b in self.bounds],
                "resolution": self.resolution, "seed": self.seed}

    @classmethod
    def from_json(cls, doc):
        return cls(doc["mode"], tuple(tuple(b) for b in doc["bounds"]), doc["resolution"],
                   doc.get("seed", 0))


@functools.lru_cache(maxsize=8)
def _grid_nodes(spec):
    """Flattened nodes and weights: trapezoid rule on each axis, tensor product."""
    if spec.mode == "grid":
        axes, axw = [], []
        for lo, hi in spec.bounds:
            t = np.linspace(lo, hi, spec.resolution)
            w = np.full(spec.resolution, (hi - lo) / (spec.resolution - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            axes.append(t)
            axw.append(w)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        wmesh = np.meshgrid(*axw, indexing="ij")
        wts = functools.reduce(np.multiply, [m.ravel() for m in wmesh])
    else:
        rng = np.random.default_rng(spec.seed)
        lo = np.array([b[0] for b in spec.bounds])
        hi = np.array([b[1] for b in spec.bounds])
        pts = lo + (hi - lo) * rng.random((spec.resolution, spec.dim))
        wts = np.full(spec.resolution, float(np.prod(hi - lo)) / spec.resolution)
    pts.flags.writeable = False
    wts.flags.writeable = False
    return pts, wts


def grid_nodes(spec):
    return _grid_nodes(spec)


def integrate(fn, integ, expect_density=False):
    """Integrate a vectorised scalar field ``fn((k, d)) -> (k,)`` over ``integ``.

    Chunks are summed pairwise by numpy and then combined with ``math.fsum``,
    so the result is fixed for a given spec. With ``expect_density`` a result
    below ``1 - 1e-3`` raises :class:`CoverageError`.
    """
    pts, wts = _grid_nodes(integ)
    parts = []
    for start in range(0, pts.shape[0], _CHUNK):
        vals = np.asarray(fn(pts[start:start + _CHUNK]), dtype=float)
        parts.append(float((vals * wts[start:start + _CHUNK]).sum()))
    total = math.fsum(parts)
    if expect_density and total < 1.0 - MASS_TOLERANCE:
        raise CoverageError(f"density integrates to {total:.6f} on the grid")
    return total


def support_box(*models, margin=DEFAULT_MARGIN):
    """Per-axis [min mean - margin*sd_max, max mean + margin*sd_max] over all components."""
    los, his = [], []
    for m in models:
        w, means, sds = m.components()
        keep = w > 0
        means, sds = means[keep], sds[keep]
        smax = sds.max()
        los.append(means.min(axis=0) - margin * smax)
        his.append(means.max(axis=0) + margin * smax)
    lo = np.min(los, axis=0)
    hi = np.max(his, axis=0)
    return tuple((float(a), float(b)) for a, b in zip(lo, hi))


def default_integrator(*models, resolution=None, margin=DEFAULT_MARGIN):
    box = support_box(*models, margin=margin)
    d = len(box)
    if d > 3:
        raise ValueError("quadrature paths support d <= 3 only")
    return IntegratorSpec("grid", box, resolution or DEFAULT_RESOLUTION[d])


def coverage_mass(model, bounds):
    """Gaussian mass of ``model``'s components inside the box (Bonferroni bound if correlated)."""
    w, means, sds = model.components()
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    inside = ndtr((hi - means) / sds) - ndtr((lo - means) / sds)
    correlated = isinstance(model, MixtureDensity) and model.diag_vars is None
    if correlated:
        per = np.clip(1.0 - (1.0 - inside).sum(axis=1), 0.0, 1.0)
    else:
        per = inside.prod(axis=1)
    return float((w * per).sum() / w.sum())


def check_coverage(model, integ):
    if not hasattr(model, "components"):
        return
    if len(integ.bounds) != model.dim:
        raise ValueError("integrator dimension differs from the model dimension")
    mass = coverage_mass(model, integ.bounds)
    if mass < 1.0 - MASS_TOLERANCE:
        raise CoverageError(f"integration box holds only {mass:.6f} of the model mass")
