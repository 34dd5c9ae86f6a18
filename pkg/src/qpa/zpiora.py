"""Zero-power-in-outage-region approximation (ZPiORA).

At high feedback resolution the last codebook level tends to zero, which
collapses the stationarity system to L-1 equations in p_1 .. p_{L-1} with
p_L = 0 and the simplified g0 thresholds s'_j = 1/(mu p_j) - lam/mu
(s'_0 = 0, so the j = 1 row keeps its unit anchor).  A forward recursion
chains p_2 .. p_{L-1} from p_1 and the last row becomes a scalar equation
in p_1 alone.  Orders of magnitude cheaper than the full solve; the
corner points (s'_j, v_j) of the resulting quantizer sit exactly on the
line g1 = c lam + c mu g0.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .kkt_solver import (
    ConvergenceError,
    QpaSolution,
    RecursionDomainError,
    run_dual_loop,
)
from .model import Multipliers, SolverSettings, SystemConfig
from .quantizer import PerformanceReport, PowerCodebook, build_layout, evaluate_layout
from .rootfind import BracketError, DomainError, bisect, log_grid, refined_brackets


@njit(cache=True)
def _zpiora_forward(p1, lam, mu, c, n_eqs, out):  # pragma: no cover
    out[0] = p1
    fh_prev = 1.0  # p_0 (lam + mu (1 - e^{-s'_0})) = 1 with s'_0 = 0
    for j in range(1, n_eqs + 1):
        pj = out[j - 1]
        if mu > 0.0:
            sj = 1.0 / (mu * pj) - lam / mu
            if sj <= 0.0:
                return j
            es = math.exp(-sj)
            den = lam * (1.0 - es) + mu * (1.0 - es * (1.0 + sj))
            fh = pj * (lam + mu * (1.0 - es))
        else:
            den = lam
            fh = pj * lam
        if den <= 0.0:
            return j
        ratio = (c / (pj * pj)) * (fh_prev - fh) / den
        if not (0.0 < ratio < 1.0):
            return j
        out[j] = c / (c / pj - math.log1p(-ratio))
        fh_prev = fh
    return 0


def _fhat(p: float, lam: float, mu: float) -> float:
    if mu > 0:
        es = math.exp(-(1.0 / (mu * p) - lam / mu))
        return p * (lam + mu * (1.0 - es))
    return p * lam


def _terminal_residual(levels: np.ndarray, lam: float, mu: float, c: float) -> float:
    """Last stationarity row with v_L unbounded (the e^{-v_{L-1}} factor
    cancels): bracket term minus the chained-difference term."""
    pm = float(levels[-1])
    fh_prev = 1.0 if len(levels) == 1 else _fhat(float(levels[-2]), lam, mu)
    if mu > 0:
        sm = 1.0 / (mu * pm) - lam / mu
        if sm <= 0:
            raise DomainError("nonpositive terminal threshold")
        es = math.exp(-sm)
        den = lam * (1.0 - es) + mu * (1.0 - es * (1.0 + sm))
    else:
        den = lam
    return den - (c / (pm * pm)) * (fh_prev - _fhat(pm, lam, mu))


def zpiora_forward(p1: float, m: Multipliers, cfg: SystemConfig) -> PowerCodebook:
    """Candidate codebook (p1, ..., p_{L-1}, 0) from the reduced rows."""
    if not p1 > 0:
        raise ValueError(f"need p1 > 0, got {p1!r}")
    if m.mu == 0 and m.lam == 0:
        raise ValueError("multipliers must not both be zero")
    L = cfg.L
    buf = np.empty(max(L - 1, 1), dtype=float)
    status = _zpiora_forward(p1, m.lam, m.mu, cfg.c, L - 2, buf)
    if status:
        raise RecursionDomainError(
            f"reduced recursion failed at equation {status} "
            f"(p1={p1:.6g}, lam={m.lam:.6g}, mu={m.mu:.6g})", level=status)
    return PowerCodebook(tuple(buf[: L - 1]) + (0.0,))


def _asymptotic_seed(m: Multipliers, cfg: SystemConfig) -> np.ndarray:
    """Levels implied by the high-resolution threshold structure at the
    given duals: equispaced g0 thresholds for mu > 0, geometric g1
    thresholds for mu = 0.  Rough, but inside Newton's basin."""
    from . import asymptotics

    L, c = cfg.L, cfg.c
    j = np.arange(1, L)
    if m.mu > 0:
        try:
            a, _ = asymptotics.constant_a(m.lam, m.mu, cfg)
        except BracketError:
            a = 1.0
        d = a / (c * m.mu * L)
        levels = 1.0 / (m.lam + m.mu * d * j)
    else:
        # geometric v_j = c lam y^j with y matched to the terminal row,
        # (y - 1) c lam y^{L-1} = 1 (monotone in y, solve by bisection)
        target = 1.0 / (c * m.lam)
        ylo, yhi = 1.0 + 1e-12, 2.0
        while (yhi - 1.0) * yhi ** (L - 1) < target:
            yhi *= 2.0
        for _ in range(200):
            ym = 0.5 * (ylo + yhi)
            if (ym - 1.0) * ym ** (L - 1) < target:
                ylo = ym
            else:
                yhi = ym
            if yhi - ylo < 1e-15 * yhi:
                break
        y = 0.5 * (ylo + yhi)
        levels = 1.0 / (m.lam * y**j)
    return np.concatenate([levels, [0.0]])


def solve_zpiora_codebook(
    m: Multipliers,
    cfg: SystemConfig,
    settings: SolverSettings | None = None,
    seed: PowerCodebook | None = None,
) -> PowerCodebook:
    """Codebook of the reduced (p_L = 0) system.

    Scalar shooting on p_1 (chain the recursion, zero the terminal row)
    while the chain is short enough to be stable; long chains, or a warm
    seed from a previous dual iterate, go to damped Newton on the reduced
    rows seeded from the asymptotic threshold structure.
    """
    from .kkt_solver import _newton_levels

    settings = settings or SolverSettings()
    lam, mu = m.lam, m.mu
    if lam == 0 and mu == 0:
        raise ValueError("multipliers must not both be zero")
    c, L = cfg.c, cfg.L
    buf = np.empty(max(L - 1, 1), dtype=float)

    if seed is not None and len(seed) == L and seed.levels[-1] == 0.0:
        try:
            levels = _newton_levels(seed.as_array(), lam, mu, c, True,
                                    settings.kkt_tol)
            levels = levels.copy()
            levels[-1] = 0.0
            return PowerCodebook(tuple(levels))
        except (DomainError, ValueError):
            pass

    def residual(p1: float) -> float:
        status = _zpiora_forward(p1, lam, mu, c, L - 2, buf)
        if status:
            raise DomainError(f"row {status}")
        return _terminal_residual(buf[: L - 1], lam, mu, c)

    base = 1.0 / (lam + mu)
    lo, hi = 1e-4 * base, max(1e2 * base, 100.0 * cfg.p_av)
    samples = []
    for _ in range(2 if L <= 64 else 1):
        brackets, scanned = refined_brackets(residual, log_grid(lo, hi, 61))
        samples.extend(scanned)
        if brackets:
            a, fa, b, fb = brackets[0]
            p1 = bisect(residual, a, fa, b, fb, xtol=1e-13 * max(1.0, a),
                        ftol=1e-10)
            status = _zpiora_forward(p1, lam, mu, c, L - 2, buf)
            if status:
                raise RecursionDomainError("terminal refit failed", level=status)
            return PowerCodebook(tuple(buf[: L - 1]) + (0.0,))
        lo, hi = lo / 100.0, hi * 100.0

    try:
        levels = _newton_levels(_asymptotic_seed(m, cfg), lam, mu, c, True,
                                settings.kkt_tol)
    except (DomainError, ValueError) as exc:
        raise BracketError(
            f"no p_1 bracket and Newton failed for lam={lam:.6g}, "
            f"mu={mu:.6g}: {exc}", samples) from exc
    levels = levels.copy()
    levels[-1] = 0.0
    return PowerCodebook(tuple(levels))


def solve_zpiora(
    cfg: SystemConfig, settings: SolverSettings | None = None
) -> QpaSolution:
    """ZPiORA solution: the usual dual loop around the reduced inner solve.

    Evaluation uses the zpiora-variant layout (p_L = 0, thresholds from
    1/(mu p_j)).  B = 1 is allowed but flagged: the p_L -> 0 reduction is
    a large-B approximation.
    """
    settings = settings or SolverSettings()
    warm: dict[str, PowerCodebook | None] = {"cb": None}

    def inner(m: Multipliers):
        cb = solve_zpiora_codebook(m, cfg, settings,
                                   seed=warm["cb"] if cfg.L > 64 else None)
        warm["cb"] = cb
        layout = build_layout(cb, m, cfg, "zpiora")
        return cb, evaluate_layout(layout, cfg)

    m, cb, rep, info = run_dual_loop(cfg, settings, inner)
    diag = dict(info, small_b_regime=cfg.feedback_bits < 2,
                terminal_residual=_terminal_residual(
                    cb.as_array()[:-1], m.lam, m.mu, cfg.c))
    return QpaSolution(solver="zpiora", codebook=cb, multipliers=m,
                       report=rep, variant="zpiora", diagnostics=diag)
