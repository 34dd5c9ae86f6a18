"""Bracketing scalar root finds tolerant of domain failures.

The codebook stationarity systems are only defined on part of the search
range (the forward recursions fail outside it), so every solve here scans
a grid first, treats undefined points as bracket exclusions, and bisects
inside a clean sign change.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence


class DomainError(ValueError):
    """Residual undefined at the queried point."""


class BracketError(RuntimeError):
    """No sign change found; carries the scanned residual field."""

    def __init__(self, msg: str, samples: Sequence[tuple[float, float | None]] = ()):
        super().__init__(msg)
        self.samples = list(samples)


def log_grid(lo: float, hi: float, n: int) -> list[float]:
    if not (0 < lo < hi):
        raise ValueError(f"need 0 < lo < hi, got {lo!r}, {hi!r}")
    step = (math.log(hi) - math.log(lo)) / (n - 1)
    return [math.exp(math.log(lo) + k * step) for k in range(n)]


def _try(f: Callable[[float], float], x: float) -> float | None:
    try:
        val = f(x)
    except DomainError:
        return None
    return val if math.isfinite(val) else None


def scan_sign_changes(
    f: Callable[[float], float], grid: Sequence[float]
) -> tuple[list[tuple[float, float, float, float]], list[tuple[float, float | None]]]:
    """Evaluate f over the grid; return sign-change intervals and all samples.

    Invalid points (DomainError / non-finite) break the chain: a bracket is
    only formed between two consecutive *valid* evaluations.
    """
    brackets = []
    samples: list[tuple[float, float | None]] = []
    prev = None
    for x in grid:
        fx = _try(f, x)
        samples.append((x, fx))
        if fx is not None:
            if fx == 0.0:
                brackets.append((x, fx, x, fx))
            elif prev is not None and prev[1] * fx < 0:
                brackets.append((prev[0], prev[1], x, fx))
            prev = (x, fx)
        else:
            prev = None
    return brackets, samples


def refined_brackets(
    f: Callable[[float], float],
    grid: Sequence[float],
    edge_iters: int = 60,
) -> tuple[list[tuple[float, float, float, float]], list[tuple[float, float | None]]]:
    """Sign-change brackets including those hiding against a domain edge.

    Roots of the stationarity residuals frequently sit just inside the
    recursion's validity region, between the last valid grid point and the
    first invalid one; a plain scan never sees the sign flip.  For every
    valid/invalid adjacency this walks the edge inward, extending the
    known-sign side until the residual flips or the gap collapses.
    """
    brackets, samples = scan_sign_changes(f, grid)
    for i in range(len(samples) - 1):
        (xa, fa), (xb, fb) = samples[i], samples[i + 1]
        if (fa is None) == (fb is None):
            continue
        if fa is None:
            known_x, known_f, bad_x = xb, fb, xa
        else:
            known_x, known_f, bad_x = xa, fa, xb
        for _ in range(edge_iters):
            mid = 0.5 * (known_x + bad_x)
            if mid == known_x or mid == bad_x:
                break
            fm = _try(f, mid)
            if fm is None:
                bad_x = mid
            elif fm == 0.0 or fm * known_f < 0:
                lo, hi = sorted((known_x, mid))
                flo = known_f if lo == known_x else fm
                fhi = fm if hi == mid else known_f
                brackets.append((lo, flo, hi, fhi))
                break
            else:
                known_x, known_f = mid, fm
    brackets.sort(key=lambda br: br[0])
    return brackets, samples


def bisect(
    f: Callable[[float], float],
    a: float,
    fa: float,
    b: float,
    fb: float,
    xtol: float,
    ftol: float = 0.0,
    max_iter: int = 200,
) -> float:
    """Bisection inside a verified bracket; midpoint domain failures are
    retried toward each endpoint a few times before giving up."""
    if a == b:
        return a
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if fa * fb > 0:
        raise ValueError("not a bracket")
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        fm = _try(f, mid)
        if fm is None:
            for frac in (0.25, 0.75, 0.1, 0.9):
                x = a + frac * (b - a)
                fm = _try(f, x)
                if fm is not None:
                    mid = x
                    break
            else:
                # undefined across the interior: return the best endpoint
                return a if abs(fa) <= abs(fb) else b
        if fm == 0.0 or abs(b - a) < xtol or (ftol > 0 and abs(fm) < ftol):
            return mid
        if fa * fm < 0:
            b, fb = mid, fm
        else:
            a, fa = mid, fm
    return 0.5 * (a + b)


def find_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float,
    n_grid: int = 40,
    ftol: float = 0.0,
    expansions: int = 3,
    expand_factor: float = 10.0,
) -> float:
    """Scan a log grid on [lo, hi] for a sign change and bisect it.

    The range is expanded geometrically on both sides up to `expansions`
    times if no bracket is found.
    """
    all_samples: list[tuple[float, float | None]] = []
    for _ in range(expansions + 1):
        brackets, samples = refined_brackets(f, log_grid(lo, hi, n_grid))
        all_samples.extend(samples)
        if brackets:
            a, fa, b, fb = brackets[0]
            return bisect(f, a, fa, b, fb, xtol=xtol, ftol=ftol)
        lo /= expand_factor
        hi *= expand_factor
    raise BracketError(
        f"no sign change in [{lo:.3g}, {hi:.3g}] after expansion", all_samples
    )


def find_all_roots(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float,
    n_grid: int = 40,
    max_roots: int = 4,
) -> list[float]:
    """All bracketed roots on a log grid scan of [lo, hi] (no expansion)."""
    brackets, _ = refined_brackets(f, log_grid(lo, hi, n_grid))
    roots = []
    for a, fa, b, fb in brackets[:max_roots]:
        roots.append(bisect(f, a, fa, b, fb, xtol=xtol))
    return roots
