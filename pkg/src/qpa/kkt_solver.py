"""Locally optimal quantized power allocation.

For fixed duals the stationarity system of the quantized outage problem
is solved by a forward recursion nested inside a two-dimensional
bracketing search over (p_1, p_L); the duals themselves are driven by the
textbook projected-subgradient update on the budget residuals, with a
bracketing refinement once the residual has changed sign (the plain
harmonic-step iteration alone approaches the root too slowly to meet the
slackness tolerances).

The per-level stationarity conditions, with fhat(p_0) = 1 and
fhat(p_j) = (p_j - p_L)(lam + mu(1 - e^{-s_j})):

  j < L :  (e^{-v_j} - e^{-v_{j+1}}) [lam (1 - e^{-s_j})
            + mu (1 - e^{-s_j}(1 + s_j))]
            = e^{-v_j} (c/p_j^2) [fhat(p_{j-1}) - fhat(p_j)]
  j = L :  sum_j (e^{-v_j} - e^{-v_{j+1}}) [..] + e^{-v_L} (c/p_L^2)
            fhat(p_{L-1}) = lam + mu

Solved for p_{j+1}, the j < L rows chain p_2 .. p_{L-1} from (p_1, p_L);
the row at j = L-1 and the j = L row then close the system.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .model import Multipliers, SolverSettings, SystemConfig
from .quantizer import (
    PerformanceReport,
    PowerCodebook,
    QuantizerLayout,
    build_layout,
    evaluate_layout,
)
from .rootfind import BracketError, DomainError, bisect, log_grid, refined_brackets


class RecursionDomainError(DomainError):
    """Forward recursion left its domain (log argument outside (0, 1] or a
    monotonicity break); `level` is the first failing equation index."""

    def __init__(self, msg: str, level: int):
        super().__init__(msg)
        self.level = level


class ConvergenceError(RuntimeError):
    """Solver failed to converge; carries the iterate history."""

    def __init__(self, msg: str, history=None):
        super().__init__(msg)
        self.history = history or []


@dataclass(frozen=True)
class QpaSolution:
    """A converged quantized allocation: codebook, duals and performance."""

    solver: str
    codebook: PowerCodebook
    multipliers: Multipliers
    report: PerformanceReport
    variant: str
    diagnostics: dict

    def layout(self, cfg: SystemConfig) -> QuantizerLayout:
        return build_layout(self.codebook, self.multipliers, cfg, self.variant)

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "codebook": list(self.codebook.levels),
            "lambda": self.multipliers.lam,
            "mu": self.multipliers.mu,
            "variant": self.variant,
            "report": self.report.to_dict(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "QpaSolution":
        rep = d["report"]
        report = PerformanceReport(
            outage=rep["outage"], atp=rep["atp"], aip=rep["aip"],
            source=rep["source"], outage_se=rep.get("outage_se"),
            atp_se=rep.get("atp_se"), aip_se=rep.get("aip_se"),
            n_samples=rep.get("n_samples"))
        return cls(
            solver=d["solver"],
            codebook=PowerCodebook(tuple(float(p) for p in d["codebook"])),
            multipliers=Multipliers(float(d["lambda"]), float(d["mu"])),
            report=report, variant=d["variant"],
            diagnostics=d.get("diagnostics", {}))


# ---------------------------------------------------------------------------
# forward recursion
# ---------------------------------------------------------------------------

@njit(cache=True)
def _kkt_forward(p1, pL, lam, mu, c, n_eqs, enforce_last, out):  # pragma: no cover
    """Chain the stationarity rows; returns 0 or the first failing row."""
    out[0] = p1
    fh_prev = 1.0
    for j in range(1, n_eqs + 1):
        pj = out[j - 1]
        dj = pj - pL
        if dj <= 0.0:
            return j
        if mu > 0.0:
            sj = 1.0 / (mu * dj) - lam / mu
            if sj <= 0.0:
                return j
            es = math.exp(-sj)
            den = lam * (1.0 - es) + mu * (1.0 - es * (1.0 + sj))
            fh = dj * (lam + mu * (1.0 - es))
        else:
            den = lam
            fh = dj * lam
        if den <= 0.0:
            return j
        ratio = (c / (pj * pj)) * (fh_prev - fh) / den
        if not (0.0 < ratio < 1.0):
            return j
        v_next = c / pj - math.log1p(-ratio)
        p_next = c / v_next
        if (j < n_eqs or enforce_last) and p_next <= pL:
            return j
        out[j] = p_next
        fh_prev = fh
    return 0


def forward_recursion(
    p1: float, pL: float, m: Multipliers, cfg: SystemConfig
) -> PowerCodebook:
    """Candidate codebook (p1, p2, ..., p_{L-1}, pL) from the chained rows.

    Raises RecursionDomainError at the first row whose log argument leaves
    (0, 1] or whose output breaks strict monotonicity — the (p1, pL) guess
    is outside the bracket of any stationary codebook.
    """
    if not (p1 > pL >= 0):
        raise ValueError(f"need p1 > pL >= 0, got {p1!r}, {pL!r}")
    L = cfg.L
    buf = np.empty(L, dtype=float)
    status = _kkt_forward(p1, pL, m.lam, m.mu, cfg.c, L - 2, True, buf)
    if status:
        raise RecursionDomainError(
            f"forward recursion failed at equation {status} "
            f"(p1={p1:.6g}, pL={pL:.6g}, lam={m.lam:.6g}, mu={m.mu:.6g})",
            level=status)
    return PowerCodebook(tuple(buf[: L - 1]) + (pL,))


def _residual_rows(p: np.ndarray, lam: float, mu: float, c: float) -> np.ndarray:
    """Stationarity defects on a raw level array (no codebook validation)."""
    L = len(p)
    pL = p[-1]
    d = p[:-1] - pL
    with np.errstate(divide="ignore"):
        v = np.where(p > 0, c / np.maximum(p, 1e-300), np.inf)
    ev = np.exp(-v)
    delta = ev[:-1] - ev[1:]
    if mu > 0:
        s = 1.0 / (mu * d) - lam / mu
        es = np.exp(-s)
        den = lam * (1.0 - es) + mu * (1.0 - es * (1.0 + s))
        fh = d * (lam + mu * (1.0 - es))
    else:
        den = np.full(L - 1, lam)
        fh = d * lam
    fh_prev = np.concatenate(([1.0], fh[:-1]))
    res = np.empty(L)
    res[:-1] = delta * den - ev[:-1] * (c / p[:-1] ** 2) * (fh_prev - fh)
    tail = ev[-1] * (c / pL**2) * fh[-1] if pL > 0 else 0.0
    res[-1] = float(np.sum(delta * den)) + tail - (lam + mu)
    return res


def kkt_residuals(
    cb: PowerCodebook, m: Multipliers, cfg: SystemConfig
) -> np.ndarray:
    """Stationarity defects: rows 1..L-1 are the per-level conditions
    (left minus right), row L is the p_L condition."""
    return _residual_rows(cb.as_array(), m.lam, m.mu, cfg.c)


def _newton_levels(
    seed: np.ndarray,
    lam: float,
    mu: float,
    c: float,
    pin_last_zero: bool,
    tol: float,
    max_iter: int = 140,
) -> np.ndarray:
    """Damped Newton on the stationarity rows, used where the forward
    recursion is too ill-conditioned to shoot (hundreds of chained rows).

    With `pin_last_zero` the last level is held at 0 and only rows
    1..L-1 are solved (the boundary system); otherwise all L rows over
    all L levels.  The Jacobian is finite-difference and refreshed every
    few steps; steps are halved until the level ordering stays valid and
    the residual norm decreases.
    """
    x = seed.astype(float).copy()
    n_var = len(x) - 1 if pin_last_zero else len(x)

    def rows(levels: np.ndarray) -> np.ndarray:
        r = _residual_rows(levels, lam, mu, c)
        return r[:-1] if pin_last_zero else r

    def valid(levels: np.ndarray) -> bool:
        if not np.all(np.diff(levels) < 0):
            return False
        floor = 0.0 if pin_last_zero else -1.0
        return bool(np.all(levels[:n_var] > 0) and levels[-1] >= floor
                    and (pin_last_zero or levels[-1] > 0))

    if not valid(x):
        raise DomainError("invalid Newton seed")
    F = rows(x)
    norm = float(np.max(np.abs(F)))
    J: np.ndarray | None = None
    scale: np.ndarray | None = None
    since_refresh = 99

    def try_step(dx: np.ndarray) -> bool:
        nonlocal x, F, norm
        t = 1.0
        while t > 1e-8:
            xn = x.copy()
            xn[:n_var] = x[:n_var] + t * dx
            if valid(xn):
                Fn = rows(xn)
                nn = float(np.max(np.abs(Fn)))
                if nn < norm or nn < tol:
                    x, F, norm = xn, Fn, nn
                    return True
            t *= 0.5
        return False

    for _ in range(max_iter):
        if norm < tol:
            return x
        if since_refresh >= 3:
            J = np.empty((n_var, n_var))
            for i in range(n_var):
                h = 1e-7 * max(abs(x[i]), 1e-9)
                xp = x.copy()
                xp[i] += h
                J[:, i] = (rows(xp) - F) / h
            # equilibrate: the tail rows live on an e^{-v_j} scale
            scale = 1.0 / np.maximum(np.max(np.abs(J), axis=1), 1e-300)
            since_refresh = 0
        Js = J * scale[:, None]
        Fs = F * scale
        try:
            dx = np.linalg.solve(Js, -Fs)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(Js, -Fs, rcond=None)[0]
        moved = try_step(dx)
        if not moved:
            if since_refresh != 0:  # stale Jacobian: refresh and retry
                since_refresh = 99
                continue
            JtJ = Js.T @ Js
            JtF = Js.T @ Fs
            diag = float(np.trace(JtJ)) / n_var
            for damp in (1e-10, 1e-7, 1e-4, 1e-1):
                dx = np.linalg.solve(JtJ + damp * diag * np.eye(n_var), -JtF)
                if try_step(dx):
                    moved = True
                    break
            if not moved:
                raise DomainError(f"Newton stalled at residual {norm:.3g}")
        since_refresh += 1
    if norm < tol:
        return x
    raise DomainError(f"Newton did not reach tolerance ({norm:.3g} > {tol:.3g})")


# ---------------------------------------------------------------------------
# codebook solve at fixed duals
# ---------------------------------------------------------------------------

def _pL_grid(p1: float) -> list[float]:
    """Trial p_L values: log-spaced for the tiny-p_L regime plus a linear
    sweep of the upper range, where roots crowd the domain edge."""
    coarse = log_grid(p1 * 1e-12, p1 * 0.02, 21)
    fine = list(np.linspace(p1 * 0.02, p1 * (1.0 - 1e-9), 40))
    return coarse + fine


_NESTED_MAX_L = 256  # beyond this the chained recursion cannot be shot reliably


def solve_codebook(
    m: Multipliers,
    cfg: SystemConfig,
    settings: SolverSettings | None = None,
    bracket_scale: float = 1.0,
    seed: PowerCodebook | None = None,
) -> PowerCodebook:
    """Stationary codebook for fixed duals.

    Nested bracketing: for each trial p_1 the recursion-consistency
    residual (row L-1 read as a prediction of p_L) is solved for p_L on a
    log grid; the enclosing search drives the p_L condition (row L) to
    zero over p_1.  Domain failures of the recursion are treated as
    bracket exclusions.  When several p_1 roots exist, the codebook with
    the smallest Lagrangian value is returned.

    Two departures from the plain nested search:

    * The p_L row can lack an interior root (its residual stays negative
      along the whole consistency branch): the Lagrangian then decreases
      all the way to p_L = 0 and the minimizer sits on the boundary,
      where the rows reduce exactly to the p_L = 0 system.  That system
      is solved instead and complementarity replaces the row-L equality.
    * Chaining hundreds of rows amplifies guesses exponentially, so for
      large L (or when a warm seed is available) the rows are solved by
      damped Newton instead of shooting.
    """
    settings = settings or SolverSettings()
    lam, mu = m.lam, m.mu
    if lam == 0 and mu == 0:
        raise ValueError("multipliers must not both be zero")
    c, L = cfg.c, cfg.L
    buf = np.empty(L, dtype=float)

    # warm start: polish the previous dual iterate's codebook
    if seed is not None and len(seed) == L:
        arr = seed.as_array()
        try:
            if arr[-1] == 0.0:
                cb = _boundary_or_interior(m, cfg, settings, arr)
            else:
                levels = _newton_levels(arr, lam, mu, c, False, settings.kkt_tol)
                cb = PowerCodebook(tuple(levels))
            return cb
        except (DomainError, ValueError, BracketError):
            pass

    if L <= _NESTED_MAX_L:
        try:
            return _solve_codebook_nested(m, cfg, settings, bracket_scale, buf)
        except BracketError:
            pass
    from .zpiora import solve_zpiora_codebook

    cbz = solve_zpiora_codebook(m, cfg, settings)
    return _boundary_or_interior(m, cfg, settings, cbz.as_array())


def _boundary_or_interior(
    m: Multipliers, cfg: SystemConfig, settings: SolverSettings, arr: np.ndarray
) -> PowerCodebook:
    """Classify a p_L = 0 iterate: keep the boundary solution when the
    row-L residual pushes downhill there, otherwise lift p_L and solve
    the interior rows by Newton."""
    lam, mu = m.lam, m.mu
    c = cfg.c
    levels = _newton_levels(arr, lam, mu, c, True, settings.kkt_tol)
    levels = levels.copy()
    levels[-1] = 0.0
    res_L = float(_residual_rows(levels, lam, mu, c)[-1])
    if res_L <= settings.kkt_tol:
        return PowerCodebook(tuple(levels))
    interior = levels.copy()
    interior[-1] = levels[-2] / 4.0
    interior = _newton_levels(interior, lam, mu, c, False, settings.kkt_tol)
    return PowerCodebook(tuple(interior))


def _solve_codebook_nested(
    m: Multipliers,
    cfg: SystemConfig,
    settings: SolverSettings,
    bracket_scale: float,
    buf: np.ndarray,
) -> PowerCodebook:
    lam, mu = m.lam, m.mu
    c, L = cfg.c, cfg.L

    def pred_residual(p1: float, pL: float) -> float:
        status = _kkt_forward(p1, pL, lam, mu, c, L - 1, False, buf)
        if status:
            raise DomainError(f"row {status}")
        return buf[L - 1] - pL

    def solve_pL(p1: float) -> float:
        brackets, _ = refined_brackets(lambda x: pred_residual(p1, x),
                                       _pL_grid(p1))
        if not brackets:
            raise DomainError("no p_L bracket")
        a, fa, b, fb = brackets[-1]  # largest-p_L branch
        return bisect(lambda x: pred_residual(p1, x), a, fa, b, fb,
                      xtol=settings.root_tol * max(p1, 1.0) * 1e-2)

    def codebook_at(p1: float) -> PowerCodebook:
        pL = solve_pL(p1)
        status = _kkt_forward(p1, pL, lam, mu, c, L - 2, True, buf)
        if status:
            raise DomainError(f"row {status}")
        return PowerCodebook(tuple(buf[: L - 1]) + (pL,))

    def outer_residual(p1: float) -> float:
        return float(_residual_rows(codebook_at(p1).as_array(), lam, mu, c)[-1])

    base = bracket_scale / (lam + mu)
    lo, hi = 1e-4 * base, 1e4 * base
    roots: list[float] = []
    samples = []
    for _ in range(3):
        brackets, scanned = refined_brackets(outer_residual, log_grid(lo, hi, 49))
        samples.extend(scanned)
        for a, fa, b, fb in brackets[:4]:
            roots.append(bisect(outer_residual, a, fa, b, fb,
                                xtol=settings.root_tol))
        if roots:
            break
        lo, hi = lo / 100.0, hi * 100.0

    best, best_val = None, math.inf
    for p1 in roots:
        try:
            cb = codebook_at(p1)
            layout = build_layout(cb, m, cfg, "exact")
        except (DomainError, ValueError):
            continue
        rep = evaluate_layout(layout, cfg)
        val = rep.outage + lam * rep.atp + mu * rep.aip  # Lagrangian value
        if val < best_val:
            best, best_val = cb, val
    if best is None:
        raise BracketError(
            f"no interior stationary codebook for lam={lam:.6g}, mu={mu:.6g} "
            f"(residual sampled on the search box)", samples)
    return best


# ---------------------------------------------------------------------------
# dual loop shared by the optimal solver and its approximations
# ---------------------------------------------------------------------------

InnerSolver = Callable[[Multipliers], tuple[PowerCodebook, PerformanceReport]]


@dataclass
class _Tighten:
    x: float
    usage: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _tighten_scalar(
    usage_fn: Callable[[float], float],
    budget: float,
    x0: float,
    step_fn: Callable[[int], float],
    settings: SolverSettings,
    atol: float = 0.0,
    streak_needed: int = 5,
) -> _Tighten:
    """Drive usage(x) to the budget over a nonnegative dual.

    Projected subgradient steps with the harmonic schedule until the
    residual changes sign, then bisection of the bracket; convergence is
    declared after `streak_needed` consecutive iterates with the residual
    inside tolerance and the dual movement below settings.dual_move_tol.
    """
    tol = max(settings.budget_rtol * budget, atol)
    x = x0
    x_pos = x_neg = None  # largest x with usage>budget / smallest with usage<budget
    history: list[tuple[float, float]] = []
    streak = 0
    last_usage = math.nan
    for it in range(1, settings.max_iterations + 1):
        try:
            u = usage_fn(x)
        except (DomainError, BracketError):
            if history:
                x = 0.5 * (x + history[-1][0])
                continue
            # initial dual may sit outside the solvable range: probe inward
            for cand in [x * 0.5**k for k in range(1, 8)] + [x * 2.0**k
                                                             for k in range(1, 4)]:
                try:
                    u = usage_fn(cand)
                except (DomainError, BracketError):
                    continue
                x = cand
                break
            else:
                raise
        r = u - budget
        history.append((x, u))
        last_usage = u
        if r > 0:
            if x_pos is None or x > x_pos:
                x_pos = x
        else:
            if x_neg is None or x < x_neg:
                x_neg = x
        if x_pos is not None and x_neg is not None and x_pos < x_neg:
            ratio = x_neg / max(x_pos, 1e-300)
            x_new = math.sqrt(x_pos * x_neg) if ratio > 10 else 0.5 * (x_pos + x_neg)
        else:
            x_new = max(x + step_fn(it) * r, 0.0)
            if x_new == 0.0 and x == 0.0 and r <= 0:
                # inactive constraint: zero dual already satisfies the budget
                return _Tighten(0.0, u, it, True, history)
            if abs(r) > 10 * tol and abs(x_new - x) < 0.25 * x:
                # harmonic steps stall far from the root: hunt the bracket
                # geometrically (usage decreases in the dual)
                x_new = 2.0 * x if r > 0 else 0.5 * x
        if abs(r) <= tol and abs(x_new - x) <= settings.dual_move_tol:
            streak += 1
            if streak >= streak_needed:
                return _Tighten(x, u, it, True, history)
        else:
            streak = 0
        x = x_new
    if history and abs(last_usage - budget) <= tol:
        return _Tighten(history[-1][0], last_usage, settings.max_iterations,
                        True, history)
    raise ConvergenceError(
        f"dual iteration did not converge (last residual "
        f"{last_usage - budget:.3g} against tolerance {tol:.3g})", history)


def run_dual_loop(
    cfg: SystemConfig,
    settings: SolverSettings,
    inner: InnerSolver,
    atol: float = 0.0,
    x_jitter: float = 1.0,
) -> tuple[Multipliers, PowerCodebook, PerformanceReport, dict]:
    """Case-split dual solve around an inner codebook solver.

    a) p_av <= q_av: mu = 0 and a scalar solve of atp(lam) = p_av.
    b) otherwise first try lam = 0 with aip(mu) = q_av; if the transmit
       budget is violated there, both constraints are tight and mu is
       bracketed with lam re-tightened at every trial mu.
    """
    cache: dict[tuple[float, float], tuple[PowerCodebook, PerformanceReport]] = {}

    def solve_at(lam: float, mu: float) -> tuple[PowerCodebook, PerformanceReport]:
        key = (lam, mu)
        if key not in cache:
            cache.clear()  # only the latest iterate is ever re-read
            cache[key] = inner(Multipliers(lam, mu))
        return cache[key]

    iterations = 0
    if cfg.p_av <= cfg.q_av:
        out = _tighten_scalar(lambda x: solve_at(x, 0.0)[1].atp, cfg.p_av,
                              x0=x_jitter / cfg.p_av,
                              step_fn=lambda l: settings.alpha(cfg, l),
                              settings=settings, atol=atol)
        iterations += out.iterations
        m = Multipliers(out.x, 0.0)
        case = "atp-only"
    else:
        out = _tighten_scalar(lambda x: solve_at(0.0, x)[1].aip, cfg.q_av,
                              x0=x_jitter / cfg.q_av,
                              step_fn=lambda l: settings.beta(cfg, l),
                              settings=settings, atol=atol)
        iterations += out.iterations
        _, rep = solve_at(0.0, out.x)
        if rep.atp <= cfg.p_av * (1 + 1e-9) + atol:
            m = Multipliers(0.0, out.x)
            case = "aip-only"
        else:
            m, extra = _run_joint(cfg, settings, solve_at, atol, x_jitter)
            iterations += extra
            case = "joint"

    cb, rep = solve_at(m.lam, m.mu)
    m, cb, rep = _nudge_feasible(cfg, solve_at, m, cb, rep, atol)
    info = {"iterations": iterations, "case": case,
            "budget_residuals": [rep.atp - cfg.p_av, rep.aip - cfg.q_av]}
    return m, cb, rep, info


def _nudge_feasible(cfg, solve_at, m, cb, rep, atol):
    """Land the converged iterate on the feasible side of its budgets.

    The dual solve stops inside a symmetric residual tolerance, which can
    leave a hair of overshoot; scaling the offending dual up by the
    smallest factor that restores feasibility keeps slackness intact.
    """
    slack = max(5e-7, atol)

    def violated(r):
        return r.atp > cfg.p_av + slack or r.aip > cfg.q_av + slack

    if not violated(rep):
        return m, cb, rep
    delta = 1e-7
    base_lam, base_mu = m.lam, m.mu
    for _ in range(45):
        lam = base_lam * (1 + delta) + (delta if base_lam == 0 and
                                        rep.atp > cfg.p_av + slack else 0.0)
        mu = base_mu * (1 + delta) + (delta if base_mu == 0 and
                                      rep.aip > cfg.q_av + slack else 0.0)
        try:
            cb2, rep2 = solve_at(lam, mu)
        except (DomainError, BracketError):
            delta *= 2.0
            continue
        if not violated(rep2):
            return Multipliers(lam, mu), cb2, rep2
        delta *= 2.0
    return m, cb, rep  # caller's feasibility check will reject if still off


def _run_joint(cfg, settings, solve_at, atol, x_jitter):
    """Both budgets tight: subgradient warm-up per the harmonic schedule,
    then mu bracketed with lam re-solved at each trial."""
    lam, mu = x_jitter / cfg.p_av, x_jitter / cfg.q_av
    count = 0
    for it in range(1, 11):
        try:
            _, rep = solve_at(lam, mu)
        except (DomainError, BracketError):
            lam, mu = lam * 0.5, mu * 0.5
            continue
        count += 1
        lam = max(lam - settings.alpha(cfg, it) * (cfg.p_av - rep.atp), 0.0)
        mu = max(mu - settings.beta(cfg, it) * (cfg.q_av - rep.aip), 0.0)

    lam_state = {"x": max(lam, 1e-8 / cfg.p_av)}

    def lam_for(mu_x: float) -> float:
        try:
            _, rep0 = solve_at(0.0, mu_x)
            if rep0.atp <= cfg.p_av * (1 + 1e-12) + atol:
                return 0.0
        except (DomainError, BracketError):
            pass
        out = _tighten_scalar(lambda x: solve_at(x, mu_x)[1].atp, cfg.p_av,
                              x0=lam_state["x"],
                              step_fn=lambda l: settings.alpha(cfg, l),
                              settings=settings, atol=atol, streak_needed=3)
        lam_state["x"] = out.x if out.x > 0 else lam_state["x"]
        return out.x

    def outer(mu_x: float) -> float:
        return solve_at(lam_for(mu_x), mu_x)[1].aip

    out = _tighten_scalar(outer, cfg.q_av, x0=max(mu, 1e-8 / cfg.q_av),
                          step_fn=lambda l: settings.beta(cfg, l),
                          settings=settings, atol=atol)
    return Multipliers(lam_for(out.x), out.x), out.iterations + count


# ---------------------------------------------------------------------------
# optimal QPA
# ---------------------------------------------------------------------------

def _feasible(rep: PerformanceReport, cfg: SystemConfig, slack: float = 1e-6) -> bool:
    return rep.atp <= cfg.p_av + slack and rep.aip <= cfg.q_av + slack


def solve_optimal_qpa(
    cfg: SystemConfig, settings: SolverSettings | None = None
) -> QpaSolution:
    """Locally optimal codebook and duals for the quantized problem.

    Runs `settings.restarts` dual loops from perturbed initial duals and
    search boxes (the problem is nonconvex) and keeps the best feasible
    outage.
    """
    settings = settings or SolverSettings()
    rng = np.random.default_rng(settings.rng_seed)
    best: QpaSolution | None = None
    failures: list[str] = []
    for attempt in range(settings.restarts):
        scale = 1.0 if attempt == 0 else float(10.0 ** rng.uniform(-1.0, 1.0))
        jitter = 1.0 if attempt == 0 else float(np.exp(rng.uniform(-0.7, 0.7)))
        warm: dict[str, PowerCodebook | None] = {"cb": None}

        def inner(m: Multipliers) -> tuple[PowerCodebook, PerformanceReport]:
            cb = solve_codebook(m, cfg, settings, bracket_scale=scale,
                                seed=warm["cb"] if cfg.L > 64 else None)
            warm["cb"] = cb
            layout = build_layout(cb, m, cfg, "exact")
            return cb, evaluate_layout(layout, cfg)

        try:
            m, cb, rep, info = run_dual_loop(cfg, settings, inner,
                                             x_jitter=jitter)
        except (ConvergenceError, BracketError, DomainError, ValueError) as exc:
            failures.append(f"restart {attempt}: {exc}")
            continue
        res = kkt_residuals(cb, m, cfg)
        diag = dict(info, kkt_residual=float(np.max(np.abs(res))),
                    restart=attempt)
        sol = QpaSolution(solver="optimal", codebook=cb, multipliers=m,
                          report=rep, variant="exact", diagnostics=diag)
        if _feasible(rep, cfg) and (best is None
                                    or rep.outage < best.report.outage):
            best = sol
    if best is None:
        raise ConvergenceError(
            f"no feasible locally optimal solution found "
            f"({len(failures)} failed restarts)", failures)
    return best
