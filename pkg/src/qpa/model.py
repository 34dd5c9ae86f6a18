"""Problem instances, channel statistics and reproducible channel sampling.

All powers are linear-scale and noise-normalized (unit noise variance at
both receivers).  The two channel power gains are independent unit-mean
exponentials: g1 on the secondary link, g0 on the interfering link to the
primary receiver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


def db_to_linear(x_db: float) -> float:
    """Convert a dB value to linear scale, 10**(x/10)."""
    if not math.isfinite(x_db):
        raise ValueError(f"dB value must be finite, got {x_db!r}")
    return 10.0 ** (x_db / 10.0)


class PowerGainPair(NamedTuple):
    """One realization of the (interfering, secondary) channel power gains."""

    g0: float
    g1: float


@dataclass(frozen=True)
class SystemConfig:
    """One problem instance.

    The rate target is in nats per channel use; both budgets are linear
    (use :func:`db_to_linear` at the boundary).  A codebook has L = 2**B
    levels; B = 0 is rejected because a single-level codebook has no
    non-outage level distinct from the last one.
    """

    r0: float            # rate target, nats per channel use
    p_av: float          # average transmit power budget (linear)
    q_av: float          # average interference power budget (linear)
    feedback_bits: int   # B >= 1

    def __post_init__(self) -> None:
        if not (self.r0 > 0 and math.isfinite(self.r0)):
            raise ValueError(f"r0 must be positive and finite, got {self.r0!r}")
        if not (self.p_av > 0 and math.isfinite(self.p_av)):
            raise ValueError(f"p_av must be positive and finite, got {self.p_av!r}")
        if not (self.q_av > 0 and math.isfinite(self.q_av)):
            raise ValueError(f"q_av must be positive and finite, got {self.q_av!r}")
        if not isinstance(self.feedback_bits, int) or self.feedback_bits < 1:
            raise ValueError(
                f"feedback_bits must be an integer >= 1, got {self.feedback_bits!r}"
            )

    @property
    def c(self) -> float:
        """SNR gap e^{2 r0} - 1: power c/g1 meets the rate target exactly."""
        return math.expm1(2.0 * self.r0)

    @property
    def L(self) -> int:
        """Number of quantization regions, 2**feedback_bits."""
        return 2 ** self.feedback_bits


@dataclass(frozen=True)
class Multipliers:
    """Dual pair for the transmit-power (lam) and interference (mu) budgets.

    mu == 0 is meaningful: the interference budget is inactive and the
    quantizer degenerates to a scalar quantizer on g1.
    """

    lam: float
    mu: float

    def __post_init__(self) -> None:
        if self.lam < 0 or self.mu < 0:
            raise ValueError(f"multipliers must be nonnegative, got {self}")


@dataclass(frozen=True)
class SolverSettings:
    """Knobs of the dual loops and scalar root finds.

    The subgradient step schedule is harmonic, alpha_l = alpha0 / l, which
    is square-summable but not summable.  alpha0/beta0 default to
    0.1 / p_av and 0.1 / q_av when left as None.
    """

    alpha0: float | None = None   # transmit-power dual step scale
    beta0: float | None = None    # interference dual step scale
    max_iterations: int = 400
    budget_rtol: float = 1e-6     # relative tightness required of an active budget
    dual_move_tol: float = 1e-7   # dual movement considered converged
    root_tol: float = 1e-10       # absolute tolerance of power root finds
    kkt_tol: float = 1e-8         # residual norm required of a stationary codebook
    restarts: int = 5             # perturbed re-runs, best feasible outage kept
    rng_seed: int = 20240817

    def __post_init__(self) -> None:
        for name in ("alpha0", "beta0"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive, got {val!r}")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValueError("max_iterations and restarts must be >= 1")

    def alpha(self, cfg: SystemConfig, iteration: int) -> float:
        a0 = self.alpha0 if self.alpha0 is not None else 0.1 / cfg.p_av
        return a0 / iteration

    def beta(self, cfg: SystemConfig, iteration: int) -> float:
        b0 = self.beta0 if self.beta0 is not None else 0.1 / cfg.q_av
        return b0 / iteration


def sample_channel(rng: np.random.Generator) -> PowerGainPair:
    """Draw one independent (g0, g1) pair.

    Inverse-CDF transform of the uniform stream, so a given seed yields a
    bit-reproducible sequence; consumes two uniforms per call in (g0, g1)
    order, matching :func:`sample_channels`.
    """
    u0, u1 = rng.random(2)
    return PowerGainPair(-math.log1p(-u0), -math.log1p(-u1))


def sample_channels(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`sample_channel`: n draws as (g0, g1) arrays."""
    u = rng.random(2 * n)
    return -np.log1p(-u[0::2]), -np.log1p(-u[1::2])
