"""U-divergence family: the convex generator U, its derivative u, the inverse
link xi = u^{-1}, the population divergence and the empirical U-loss.

Two families are supported. ``beta`` is the power family

    U(t) = (1 + beta t) ** ((beta + 1) / beta) / (beta + 1),   0 < beta <= 1,

and ``kl`` is its beta -> 0 limit with U = u = exp and xi = log. With beta = 1
the divergence is half the integrated squared error.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericIntegrityError

# Floor applied to density values before log in KL mode.
KL_FLOOR = 1e-300


@dataclass(frozen=True)
class DivergenceFamily:
    kind: str = "beta"
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("beta", "kl"):
            raise ValueError(f"unknown divergence kind {self.kind!r}")
        if self.kind == "beta":
            if not (0.0 < self.beta <= 1.0):
                raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        else:
            object.__setattr__(self, "beta", 0.0)

    @classmethod
    def kl(cls):
        return cls("kl", 0.0)

    @classmethod
    def power(cls, beta):
        return cls("beta", float(beta))

    @classmethod
    def parse(cls, token):
        """Build a family from a CLI/JSON token: ``"kl"``, ``0`` (KL) or a beta value."""
        if isinstance(token, DivergenceFamily):
            return token
        if isinstance(token, str) and token.strip().lower() == "kl":
            return cls.kl()
        value = float(token)
        return cls.kl() if value == 0.0 else cls.power(value)

    @property
    def is_kl(self):
        return self.kind == "kl"

    @property
    def label(self):
        return "kl" if self.is_kl else repr(float(self.beta))

    def to_json(self):
        return {"kind": self.kind, "beta": None if self.is_kl else float(self.beta)}

    @classmethod
    def from_json(cls, doc):
        return cls.kl() if doc["kind"] == "kl" else cls.power(doc["beta"])

    # -- maps ---------------------------------------------------------------

    def _check_link_arg(self, t):
        if self.is_kl:
            return
        if np.any(1.0 + self.beta * t < 0.0):
            raise DomainError(f"1 + beta*t must be >= 0 (beta={self.beta})")

    def U(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_kl:
            return np.exp(t)
        self._check_link_arg(t)
        b = self.beta
        with np.errstate(divide="ignore"):
            return np.exp((b + 1.0) / b * np.log1p(b * t)) / (b + 1.0)

    def u(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_kl:
            return np.exp(t)
        self._check_link_arg(t)
        b = self.beta
        with np.errstate(divide="ignore"):
            return np.exp(np.log1p(b * t) / b)

    def xi(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_kl:
            if np.any(s <= 0.0):
                raise DomainError("xi = log requires t > 0")
            return np.log(s)
        if np.any(s < 0.0):
            raise DomainError("xi requires t >= 0")
        b = self.beta
        with np.errstate(divide="ignore"):
            return np.expm1(b * np.log(s)) / b

    def U2(self, t):
        """Second derivative of U."""
        t = np.asarray(t, dtype=float)
        if self.is_kl:
            return np.exp(t)
        self._check_link_arg(t)
        b = self.beta
        return (1.0 + b * t) ** (1.0 / b - 1.0)

    # -- density-level shortcuts ---------------------------------------------

    def xi_of_density(self, g):
        """xi(g) for density values, flooring at KL_FLOOR in KL mode."""
        g = np.asarray(g, dtype=float)
        if self.is_kl:
            return np.log(np.maximum(g, KL_FLOOR))
        return self.xi(np.maximum(g, 0.0))

    def U_xi_of_density(self, g):
        """U(xi(g)) without the round trip: g in KL mode, g^(1+beta)/(1+beta) otherwise."""
        g = np.maximum(np.asarray(g, dtype=float), 0.0)
        if self.is_kl:
            return g
        b = self.beta
        return g ** (1.0 + b) / (1.0 + b)


def family_eval(fam, which, t):
    """Evaluate ``U``, ``u`` or ``xi`` of ``fam`` at ``t``."""
    maps = {"U": fam.U, "u": fam.u, "xi": fam.xi}
    try:
        f = maps[which]
    except KeyError:
        raise ValueError(f"which must be one of U, u, xi; got {which!r}") from None
    out = f(t)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LossValue:
    value: float
    integral_term: float
    sample_term: float

    @classmethod
    def of(cls, sample_term, integral_term):
        sample_term = float(sample_term)
        integral_term = float(integral_term)
        return cls(sample_term + integral_term, integral_term, sample_term)

    def to_json(self):
        return {"value": self.value, "integral_term": self.integral_term,
                "sample_term": self.sample_term}


def empirical_u_loss(fam, g, samples, integ=None, sample_weights=None):
    """Empirical U-loss ``-(1/n) sum xi(g(X_i)) + int U(xi(g))``.

    The integral uses the closed-form Gaussian algebra when ``fam`` is beta = 1
    and ``g`` is a Gaussian convex combination; otherwise it goes through
    :func:`stagekde.density.integrate` on ``integ`` (a default box around ``g``
    when omitted).
    """
    from . import density as dm

    X = dm.as_points(samples, dim=getattr(g, "dim", None))
    if X.shape[0] == 0:
        raise ValueError("samples must be non-empty")
    if sample_weights is None:
        wts = np.full(X.shape[0], 1.0 / X.shape[0])
    else:
        wts = np.asarray(sample_weights, dtype=float)
    sample_term = -float((fam.xi_of_density(g.pdf(X)) * wts).sum())

    mix = dm.as_mixture(g) if (not fam.is_kl and fam.beta == 1.0) else None
    if mix is not None:
        integral_term = 0.5 * dm.mixture_inner(mix, mix)
    else:
        if integ is None:
            integ = dm.default_integrator(g)
        dm.check_coverage(g, integ)
        integral_term = dm.integrate(lambda x: fam.U_xi_of_density(g.pdf(x)), integ)
    return LossValue.of(sample_term, integral_term)


def divergence_integrand(fam, fx, gx):
    """Pointwise integrand of D_U(f, g) given density values ``fx``, ``gx``."""
    xf = fam.xi_of_density(fx)
    xg = fam.xi_of_density(gx)
    return fam.U_xi_of_density(gx) - fam.U_xi_of_density(fx) - np.asarray(fx) * (xg - xf)


def u_divergence(fam, f, g, integ=None):
    """D_U(f, g), integrated in a single quadrature pass of the pointwise integrand."""
    from . import density as dm

    if integ is None:
        integ = dm.default_integrator(f, g)
    dm.check_coverage(f, integ)
    dm.check_coverage(g, integ)
    val = dm.integrate(lambda x: divergence_integrand(fam, f.pdf(x), g.pdf(x)), integ)
    if val < -1e-9:
        raise NumericIntegrityError(f"divergence came out negative ({val:.3e}); quadrature failed")
    return max(val, 0.0)
