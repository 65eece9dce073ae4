"""Bandwidth ladders and the word dictionary built from them.

A dictionary is the full cross product of ``m`` center points and a ladder of
scalar bandwidths. Word ``s`` pairs point ``i`` with ladder rung ``j`` via
``s = i * len(ladder) + j``.

The reference bandwidth behind the B1 ladder is the normal-scale diagonal rule
``SD_p * m ** (-1/(d+4))`` per axis, combined by geometric mean. It stands in for
a full two-stage plug-in selector; the ladder formula on top of it is unchanged.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .density import GaussianWord, as_points
from .errors import DegenerateDataError


def _default_exponent(d):
    return 1.0 / (d + 4)


def _axis_sd(points):
    X = as_points(points)
    m = X.shape[0]
    if m < 2:
        raise DegenerateDataError(f"need at least 2 points for a standard deviation, got {m}")
    sd = X.std(axis=0, ddof=1)
    if np.any(sd <= 0.0) or not np.all(np.isfinite(sd)):
        raise DegenerateDataError(f"zero variance on axis {int(np.argmin(sd))}")
    return X, sd


def _warn_extrapolation(d):
    if d != 2:
        warnings.warn(f"bandwidth ladder formulas are calibrated for d=2; d={d} uses exponent "
                      f"1/(d+4) as an extrapolation", stacklevel=3)


@dataclass(frozen=True)
class BandwidthLadder:
    variant: str
    values: tuple
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if self.variant not in ("B1", "B2", "Explicit"):
            raise ValueError(f"unknown ladder variant {self.variant!r}")
        if not vals or any(not v > 0.0 for v in vals):
            raise ValueError("ladder needs at least one positive bandwidth")

    def __len__(self):
        return len(self.values)

    @classmethod
    def explicit(cls, values):
        return cls("Explicit", tuple(values), {})

    @property
    def h_min(self):
        return min(self.values)

    @property
    def h_max(self):
        return max(self.values)

    def to_json(self):
        return {"variant": self.variant, "values": list(self.values), "params": dict(self.params)}

    @classmethod
    def from_json(cls, doc):
        return cls(doc["variant"], tuple(doc["values"]), dict(doc.get("params", {})))


def reference_bandwidth(points, exponent=None):
    """Normal-scale diagonal bandwidths and their geometric mean.

    Returns ``(h_ref, per_axis)`` with ``per_axis[p] = SD(X_p) * m ** -exponent``.
    """
    X, sd = _axis_sd(points)
    m, d = X.shape
    e = _default_exponent(d) if exponent is None else float(exponent)
    per_axis = sd * m ** (-e)
    h_ref = float(np.exp(np.log(per_axis).mean()))
    return h_ref, per_axis


def build_b1(points, j_max=5, exponent=None):
    """Ladder ``h_j = h_ref * (m / j) ** exponent``, ``j = 1..j_max`` (descending)."""
    X = as_points(points)
    m, d = X.shape
    _warn_extrapolation(d)
    e = _default_exponent(d) if exponent is None else float(exponent)
    h_ref, _ = reference_bandwidth(X, e)
    j = np.arange(1, int(j_max) + 1)
    values = h_ref * (m / j) ** e
    return BandwidthLadder("B1", tuple(values), {"j_max": int(j_max), "exponent": e,
                                                 "h_ref": h_ref, "m": m})


def build_b2(points, eta=1.0, j_max=10, exponent=None):
    """Ladder ``h_j = gmean(SD) * (2 / (1 + eta (j - 1))) ** exponent``, ``j = 1..j_max``."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    X, sd = _axis_sd(points)
    d = X.shape[1]
    _warn_extrapolation(d)
    e = _default_exponent(d) if exponent is None else float(exponent)
    base = float(np.exp(np.log(sd).mean()))
    j = np.arange(1, int(j_max) + 1)
    values = base * (2.0 / (1.0 + eta * (j - 1))) ** e
    return BandwidthLadder("B2", tuple(values), {"j_max": int(j_max), "exponent": e,
                                                 "eta": float(eta)})


class Dictionary:
    """Words ``N(points[i], ladder[j]^2 I)`` for every point/rung pair."""

    def __init__(self, points, ladder):
        self.points = np.ascontiguousarray(as_points(points))
        self.points.flags.writeable = False
        self.ladder = ladder
        J = len(ladder)
        self.word_centers = np.repeat(self.points, J, axis=0)
        self.word_h = np.tile(np.asarray(ladder.values), self.m)
        self.word_centers.flags.writeable = False
        self.word_h.flags.writeable = False

    @property
    def m(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.word_h.shape[0]

    def flat_index(self, i, j):
        J = len(self.ladder)
        if not (0 <= i < self.m and 0 <= j < J):
            raise IndexError((i, j))
        return i * J + j

    def pair_index(self, s):
        if not 0 <= s < len(self):
            raise IndexError(s)
        return divmod(int(s), len(self.ladder))

    def point_of(self, s):
        """Dictionary data index of each flat word index in ``s``."""
        return np.asarray(s) // len(self.ladder)

    def word(self, s):
        return GaussianWord(self.word_centers[s], self.word_h[s])

    @property
    def words(self):
        return [self.word(s) for s in range(len(self))]

    def to_json(self):
        J = len(self.ladder)
        return {
            "centers": self.points.tolist(),
            "ladder": self.ladder.to_json(),
            "index_map": [[s // J, s % J] for s in range(len(self))],
        }

    @classmethod
    def from_json(cls, doc):
        d = cls(np.asarray(doc["centers"], dtype=float), BandwidthLadder.from_json(doc["ladder"]))
        imap = doc.get("index_map")
        if imap is not None:
            J = len(d.ladder)
            if len(imap) != len(d) or any(s != i * J + j for s, (i, j) in enumerate(imap)):
                raise ValueError("index_map does not match the point-major layout")
        return d


def build_dictionary(points, ladder):
    return Dictionary(points, ladder)
