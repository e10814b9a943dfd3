"""Ensemble parameters and exact rate algebra.

The ensemble is a parallel concatenation of two rate-1/2 recursive systematic
codes (mother rate R0 = 1/3) in which a fraction of the information bits is
repeated ``rep_factor`` times before encoding, encoder inputs are spread over
``coupling_memory + 1`` consecutive positions, and parity bits are randomly
punctured down to a surviving fraction ``parity_fraction``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction


def rate_uncoupled(q: int, lam: float, rho: float = 1.0, r0=Fraction(1, 3)) -> float:
    """Rate of the uncoupled ensemble with puncturing (reduces to the
    unpunctured form at rho = 1)."""
    a = 1.0 - (q - 1) * lam
    return a / ((1.0 / float(r0) - 1.0) * rho + a)


def rate_coupled(q: int, lam: float, m: int, L: int, r0=Fraction(1, 3)) -> float:
    """Rate of the coupled chain (unpunctured); tends to the uncoupled rate
    as the coupling length grows."""
    if L <= 0:
        raise ValueError("coupling length must be positive")
    inv_r0 = 1.0 / float(r0)
    a = 1.0 - (q - 1) * lam
    return L * a / (L * (inv_r0 - (q - 1) * lam) + m * (inv_r0 - 1.0))


def solve_rho(rate, q: int, lam: float, r0=Fraction(1, 3)) -> float:
    """Surviving-parity fraction that hits a target rate; unique given
    (rate, q, lam)."""
    r = float(rate)
    a = 1.0 - (q - 1) * lam
    rho = a * (1.0 - r) / (r * (1.0 / float(r0) - 1.0))
    if rho > 1.0 + 1e-12:
        raise ValueError(
            f"rho = {rho:.6f} > 1: repetition ratio {lam} too large for rate {rate}"
        )
    if rho < -1e-12:
        raise ValueError(f"rho = {rho:.6f} < 0")
    return min(max(rho, 0.0), 1.0)


def punctured_erasure(eps: float, rho: float) -> float:
    """Erasure probability seen by parity bits after random puncturing."""
    if not (0 <= eps <= 1 and 0 <= rho <= 1):
        raise ValueError("eps and rho must lie in [0, 1]")
    return 1.0 - (1.0 - eps) * rho


@dataclass(frozen=True)
class EnsembleParams:
    """Every ensemble-level knob in one place."""

    rep_factor: int                      # q >= 1 copies of each repeated bit
    rep_ratio: float                     # lambda in [0, 1/q]
    parity_fraction: float = 1.0         # rho in [0, 1]
    coupling_memory: int = 0             # m >= 0
    coupling_length: int | None = None   # L, None = uncoupled / L -> infinity
    mother_rate: Fraction = Fraction(1, 3)
    target_rate: Fraction | None = None

    def __post_init__(self):
        q, lam = self.rep_factor, self.rep_ratio
        if q < 1:
            raise ValueError("repetition factor must be >= 1")
        if not -1e-12 <= lam <= 1.0 / q + 1e-12:
            raise ValueError(f"repetition ratio {lam} outside [0, 1/{q}]")
        if not 0 <= self.parity_fraction <= 1:
            raise ValueError("parity fraction outside [0, 1]")
        if self.coupling_memory < 0:
            raise ValueError("coupling memory must be >= 0")
        if self.target_rate is not None:
            implied = rate_uncoupled(q, lam, self.parity_fraction, self.mother_rate)
            if abs(implied - float(self.target_rate)) > 1e-9:
                raise ValueError(
                    f"inconsistent parameters: rate from (q, lambda, rho) is "
                    f"{implied:.6f}, target is {float(self.target_rate):.6f}"
                )

    @classmethod
    def for_rate(cls, rate, q, lam, m=0, L=None, r0=Fraction(1, 3)):
        """Resolve rho from a target rate."""
        rate = Fraction(rate) if not isinstance(rate, Fraction) else rate
        rho = solve_rho(rate, q, lam, r0)
        return cls(
            rep_factor=q,
            rep_ratio=lam,
            parity_fraction=rho,
            coupling_memory=m,
            coupling_length=L,
            mother_rate=r0,
            target_rate=rate,
        )

    @property
    def rate(self) -> float:
        if self.target_rate is not None:
            return float(self.target_rate)
        return rate_uncoupled(
            self.rep_factor, self.rep_ratio, self.parity_fraction, self.mother_rate
        )

    def with_memory(self, m, L=None) -> "EnsembleParams":
        return replace(self, coupling_memory=m, coupling_length=L)
