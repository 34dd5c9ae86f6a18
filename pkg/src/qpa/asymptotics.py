"""High-resolution feedback asymptotics of the quantized outage.

With many feedback bits the quantizer thresholds become equispaced (on
the g0 axis when the interference budget binds, geometrically on the g1
axis otherwise), which collapses the outage into closed forms driven by
one scalar constant solved against the full-CSI duals:

  mu > 0 :  P_out(L) ~ 1 - e^{-c lam} [1 - (1 - e^{-a/L})
                        (1 - e^{-b}) / (1 - e^{-b/L})],  b = a (1 + 1/(c mu))
  mu = 0 :  P_out(L) ~ 1 - e^{-c lam (1 + beta/L)}

`a` solves
  (lam P_av + mu Q_av)(lam + a/(2c)) e^{c lam}
    = (lam + mu)(1 - r (1 - e^{-b})) - (c mu^2/(1+c mu)^2)(1 - e^{-b}(1+b)),
  r = c mu / (1 + c mu),
and `beta` solves e^{-c lam} = lam P_av (e^beta - 1)/beta, whose left side
always dominates at beta = 0 (x E1(x) < e^{-x}), so the root is positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

from .full_csi import FullCsiSolution
from .model import SystemConfig
from .rootfind import BracketError, bisect, refined_brackets


class BranchError(ValueError):
    """Constants requested or used on the wrong dual branch."""


@dataclass(frozen=True)
class AsymptoticConstants:
    """Scalar constants of the high-resolution outage approximation."""

    branch: Literal["mu-positive", "mu-zero"]
    lam_f: float                 # full-CSI duals the constants were solved at
    mu_f: float
    a: float | None = None       # mu > 0 branch
    b: float | None = None       # a (1 + 1/(c mu_f))
    beta: float | None = None    # mu = 0 branch
    multiple_roots: bool = False


def _mu_pos_residual(a: float, lam: float, mu: float, cfg: SystemConfig) -> float:
    c = cfg.c
    b = a * (1.0 + 1.0 / (c * mu))
    r = c * mu / (1.0 + c * mu)
    lhs = (lam * cfg.p_av + mu * cfg.q_av) * (lam + a / (2.0 * c))
    # multiply the right side by e^{-c lam} instead of the left by e^{c lam}
    rhs = ((lam + mu) * (1.0 - r * -math.expm1(-b))
           - (c * mu * mu / (1.0 + c * mu) ** 2)
           * (1.0 - math.exp(-b) * (1.0 + b)))
    return lhs - rhs * math.exp(-c * lam)


def _mu_zero_residual(beta: float, lam: float, cfg: SystemConfig) -> float:
    growth = 1.0 if beta == 0 else math.expm1(beta) / beta
    return lam * cfg.p_av * growth - math.exp(-cfg.c * lam)


def constant_a(lam: float, mu: float, cfg: SystemConfig) -> tuple[float, bool]:
    """Smallest positive root of the mu > 0 equation, with a multiplicity
    flag.  Also used to seed large-L codebook solves at arbitrary duals."""
    lo, hi = 1e-8, 50.0
    for _ in range(3):
        grid = [lo * (hi / lo) ** (k / 399) for k in range(400)]
        brackets, _ = refined_brackets(
            lambda x: _mu_pos_residual(x, lam, mu, cfg), grid)
        if brackets:
            a_root, fa, b_root, fb = brackets[0]
            a = bisect(lambda x: _mu_pos_residual(x, lam, mu, cfg),
                       a_root, fa, b_root, fb, xtol=1e-14, ftol=1e-10)
            return a, len(brackets) > 1
        lo, hi = lo * 1e-2, hi * 10.0
    raise BracketError(f"no root for the mu>0 constant (lam={lam}, mu={mu})")


def constant_beta(lam: float, cfg: SystemConfig) -> float:
    """Root of the mu = 0 equation; monotone increasing in beta."""
    g0 = _mu_zero_residual(0.0, lam, cfg)
    if abs(g0) < 1e-14:
        return 0.0
    if g0 > 0:
        raise BracketError(
            f"mu=0 constant has no nonnegative root (residual at 0: {g0:.3g})")
    lo, hi = 0.0, 50.0
    flo = g0
    for _ in range(6):
        fhi = _mu_zero_residual(hi, lam, cfg)
        if flo * fhi <= 0:
            return bisect(lambda x: _mu_zero_residual(x, lam, cfg),
                          lo, flo, hi, fhi, xtol=1e-14, ftol=1e-12)
        hi *= 4.0
    raise BracketError("mu=0 constant bracket expansion failed")


def solve_constants(full: FullCsiSolution, cfg: SystemConfig) -> AsymptoticConstants:
    """Solve the branch constant against the full-CSI duals.

    The mu > 0 equation is scanned on (0, 50] (expanded on failure) and
    the smallest positive root is kept, with a flag when several exist;
    the mu = 0 equation is monotone with the removable singularity at
    beta = 0 evaluated exactly.
    """
    lam, mu = full.multipliers.lam, full.multipliers.mu
    if mu > 0:
        a, multiple = constant_a(lam, mu, cfg)
        return AsymptoticConstants(
            branch="mu-positive", lam_f=lam, mu_f=mu, a=a,
            b=a * (1.0 + 1.0 / (cfg.c * mu)), multiple_roots=multiple)
    beta = constant_beta(lam, cfg)
    return AsymptoticConstants(branch="mu-zero", lam_f=lam, mu_f=mu, beta=beta)


def asymptotic_outage(
    consts: AsymptoticConstants, cfg: SystemConfig, L: int | float
) -> float:
    """Approximate outage at L regions, or the limit for L = math.inf."""
    lam = consts.lam_f
    c = cfg.c
    if consts.branch == "mu-positive":
        if consts.a is None:
            raise BranchError("constants lack `a` for the mu-positive branch")
        a, b = consts.a, consts.b
        scale = math.exp(-c * lam)
        if math.isinf(L):
            frac = -math.expm1(-b) / (1.0 + 1.0 / (c * consts.mu_f))
        else:
            frac = (-math.expm1(-a / L)) * (-math.expm1(-b)) / (-math.expm1(-b / L))
        return 1.0 - scale * (1.0 - frac)
    if consts.beta is None:
        raise BranchError("constants lack `beta` for the mu-zero branch")
    if math.isinf(L):
        return -math.expm1(-c * lam)
    return -math.expm1(-c * lam * (1.0 + consts.beta / L))
