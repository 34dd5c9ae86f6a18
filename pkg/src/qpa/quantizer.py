"""Stepwise channel-space quantizer induced by a power codebook.

Given a strictly decreasing codebook (p_1, ..., p_L) and the dual pair
(lam, mu), the optimal partition of the (g0, g1) plane is stepwise:

    region j < L :  v_j <= g1 < v_{j+1}  and  0 <= g0 < s_j
    region L     :  the complementary staircase (all of it in outage)
                    plus the high-gain strip g1 >= v_L

with g1-thresholds v_j = c / p_j and g0-thresholds

    exact variant :  s_j = 1 / (mu (p_j - p_L)) - lam / mu
    zpiora variant:  s_j = 1 / (mu p_j)         - lam / mu

When mu == 0 every s_j is unbounded (stored as None) and the admissibility
condition lam < 1 / (p_j - p_L) (or lam < 1 / p_j for the zpiora variant)
must hold at every level.  Boundaries are left-closed / right-open on both
axes, so ties are deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from math import fsum
from typing import Literal

import numpy as np

from .model import Multipliers, PowerGainPair, SystemConfig

Variant = Literal["exact", "zpiora"]


class LayoutError(ValueError):
    """Structurally inconsistent (codebook, multipliers) pair."""

    def __init__(self, msg: str, level: int | None = None):
        super().__init__(msg)
        self.level = level


@dataclass(frozen=True)
class PowerCodebook:
    """Ordered power levels p_1 > p_2 > ... > p_L >= 0 (linear scale)."""

    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.levels) < 2:
            raise ValueError("codebook needs at least two levels")
        if any(not math.isfinite(p) for p in self.levels):
            raise ValueError("codebook levels must be finite")
        if self.levels[-1] < 0:
            raise ValueError(f"last level must be >= 0, got {self.levels[-1]!r}")
        for j in range(len(self.levels) - 1):
            if not self.levels[j] > self.levels[j + 1]:
                raise ValueError(
                    f"levels must be strictly decreasing, violated at index {j}"
                )

    def __len__(self) -> int:
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)


@dataclass(frozen=True)
class PerformanceReport:
    """Outage probability plus budget usage, closed form or Monte Carlo."""

    outage: float
    atp: float            # E[p], transmit power usage
    aip: float            # E[g0 p], interference power usage
    source: Literal["closed-form", "monte-carlo"]
    outage_se: float | None = None
    atp_se: float | None = None
    aip_se: float | None = None
    n_samples: int | None = None

    def __post_init__(self) -> None:
        if not (-1e-12 <= self.outage <= 1 + 1e-12):
            raise ValueError(f"outage out of [0, 1]: {self.outage!r}")
        has_se = self.outage_se is not None
        if (self.source == "monte-carlo") != has_se:
            raise ValueError("standard errors present iff source is monte-carlo")

    def to_dict(self) -> dict:
        d = {"outage": self.outage, "atp": self.atp, "aip": self.aip,
             "source": self.source}
        if self.source == "monte-carlo":
            d.update(outage_se=self.outage_se, atp_se=self.atp_se,
                     aip_se=self.aip_se, n_samples=self.n_samples)
        return d


@dataclass(frozen=True)
class QuantizerLayout:
    """Derived thresholds realizing the stepwise partition for a codebook."""

    codebook: PowerCodebook
    multipliers: Multipliers
    v: tuple[float, ...]             # g1 thresholds, strictly increasing
    s: tuple[float | None, ...]      # g0 thresholds; None marks +infinity
    variant: Variant

    @property
    def L(self) -> int:
        return len(self.codebook)

    def s_array(self) -> np.ndarray:
        """s as floats with None mapped to +inf (comparisons stay exact)."""
        return np.array([math.inf if x is None else x for x in self.s])

    def to_dict(self) -> dict:
        return {
            "levels": list(self.codebook.levels),
            "lambda": self.multipliers.lam,
            "mu": self.multipliers.mu,
            "v": [x if math.isfinite(x) else None for x in self.v],
            "s": list(self.s),
            "variant": self.variant,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerLayout":
        return cls(
            codebook=PowerCodebook(tuple(float(p) for p in d["levels"])),
            multipliers=Multipliers(float(d["lambda"]), float(d["mu"])),
            v=tuple(math.inf if x is None else float(x) for x in d["v"]),
            s=tuple(None if x is None else float(x) for x in d["s"]),
            variant=d["variant"],
        )

    @classmethod
    def from_json(cls, text: str) -> "QuantizerLayout":
        return cls.from_dict(json.loads(text))


def build_layout(
    cb: PowerCodebook,
    m: Multipliers,
    cfg: SystemConfig,
    variant: Variant = "exact",
) -> QuantizerLayout:
    """Derive the stepwise thresholds for (cb, m) and validate them.

    Raises LayoutError naming the first offending level when a g0
    threshold is nonpositive, the thresholds fail to increase, or a
    mu == 0 admissibility condition is violated.
    """
    if variant not in ("exact", "zpiora"):
        raise ValueError(f"unknown variant {variant!r}")
    c = cfg.c
    p = cb.levels
    L = len(p)
    v = tuple(c / pj if pj > 0 else math.inf for pj in p)
    pL = p[-1]

    s: list[float | None] = []
    if m.mu > 0:
        for j in range(L - 1):
            denom = (p[j] - pL) if variant == "exact" else p[j]
            sj = 1.0 / (m.mu * denom) - m.lam / m.mu
            if sj <= 0:
                raise LayoutError(
                    f"nonpositive g0 threshold s_{j + 1} = {sj:.6g} "
                    f"(inconsistent codebook/multipliers)", level=j + 1)
            s.append(sj)
        for j in range(L - 2):
            if not s[j] < s[j + 1]:  # guaranteed by decreasing levels; keep the check
                raise LayoutError(f"g0 thresholds not increasing at level {j + 1}",
                                  level=j + 1)
    else:
        for j in range(L - 1):
            denom = (p[j] - pL) if variant == "exact" else p[j]
            if denom > 0 and not m.lam < 1.0 / denom:
                raise LayoutError(
                    f"mu = 0 admissibility violated at level {j + 1}: "
                    f"lam = {m.lam:.6g} >= {1.0 / denom:.6g}", level=j + 1)
            s.append(None)

    for j in range(L - 1):
        if not v[j] < v[j + 1]:
            raise LayoutError(f"g1 thresholds not increasing at level {j + 1}",
                              level=j + 1)
    return QuantizerLayout(codebook=cb, multipliers=m, v=v, s=tuple(s),
                           variant=variant)


def quantize(pair: PowerGainPair, layout: QuantizerLayout) -> int:
    """Feedback index in 1..L of the unique region containing the pair."""
    g0, g1 = pair.g0, pair.g1
    v = layout.v
    L = layout.L
    # count of thresholds <= g1 (left-closed cells)
    k = int(np.searchsorted(v, g1, side="right"))
    if k == 0 or k == L:
        return L                      # below v_1 (staircase) or strip g1 >= v_L
    sk = layout.s[k - 1]
    if sk is None or g0 < sk:
        return k
    return L                          # staircase part of region L


def quantize_indices(
    g0: np.ndarray, g1: np.ndarray, layout: QuantizerLayout
) -> np.ndarray:
    """Vectorized :func:`quantize`; returns 1-based indices."""
    v = np.asarray(layout.v)
    L = layout.L
    k = np.searchsorted(v, g1, side="right")
    idx = np.full(g1.shape, L, dtype=np.int64)
    cell = (k >= 1) & (k < L)
    kc = k[cell]
    s = layout.s_array()
    inside = g0[cell] < s[kc - 1]
    vals = np.where(inside, kc, L)
    idx[cell] = vals
    return idx


def region_probabilities(layout: QuantizerLayout) -> np.ndarray:
    """Closed-form Pr(region j), j = 1..L, under unit-mean exponentials."""
    v = np.asarray(layout.v)
    s = layout.s_array()
    ev = np.exp(-v)                      # e^{-inf} -> 0 for an unbounded v_L
    delta = ev[:-1] - ev[1:]
    pr = delta * -np.expm1(-s)
    return np.append(pr, 1.0 - fsum(pr))


def evaluate_layout(layout: QuantizerLayout, cfg: SystemConfig) -> PerformanceReport:
    """Closed-form outage and budget usage of a stepwise layout.

    outage = 1 - e^{-v_1} + sum_j (e^{-v_j} - e^{-v_{j+1}}) e^{-s_j}
    atp    = p_L + sum_j (p_j - p_L) Pr_j,          Pr_j = Delta_j (1 - e^{-s_j})
    aip    = p_L + sum_j (p_j - p_L) Delta_j (1 - e^{-s_j} (1 + s_j))

    Unbounded s_j contribute via the limits e^{-s} -> 0 and
    e^{-s}(1 + s) -> 0.  Sums run in index order through math.fsum.
    """
    p = layout.codebook.levels
    L = len(p)
    if abs(layout.v[0] * p[0] / cfg.c - 1.0) > 1e-9:
        raise ValueError("layout thresholds inconsistent with cfg rate target")
    pL = p[-1]
    ev = [math.exp(-x) if math.isfinite(x) else 0.0 for x in layout.v]

    out_terms, atp_terms, aip_terms = [], [], []
    for j in range(L - 1):
        delta = ev[j] - ev[j + 1]
        sj = layout.s[j]
        if sj is None:
            es, es1 = 0.0, 0.0
        else:
            es = math.exp(-sj)
            es1 = es * (1.0 + sj)
        out_terms.append(delta * es)
        atp_terms.append((p[j] - pL) * delta * (1.0 - es))
        aip_terms.append((p[j] - pL) * delta * (1.0 - es1))

    outage = (1.0 - ev[0]) + fsum(out_terms)
    atp = pL + fsum(atp_terms)
    aip = pL + fsum(aip_terms)
    return PerformanceReport(outage=min(max(outage, 0.0), 1.0), atp=atp, aip=aip,
                             source="closed-form")
