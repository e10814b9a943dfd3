"""Single-system potential function, potential threshold, and area-theorem
MAP threshold for the uncoupled ensemble with identical component encoders.

The scalar recursion is x <- f(g(x); eps) with g(x) = q*lam*x^(2q-1) +
(1-q*lam)*x and f(x; eps) = f_s(eps*x, 1-(1-eps)*rho).  Its potential is
U(x; eps) = x g(x) - G(x) - F(g(x); eps); the potential threshold is the
largest eps keeping min_{x in (0,1]} U positive.  The area-theorem MAP
threshold integrates the BP-EXIT curve h(eps) of transmitted bits down from
eps = 1 until the enclosed area equals the code rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .de import _BatchDE, CONVERGED, INCONCLUSIVE, TransferPair, bp_threshold
from .ensemble import EnsembleParams, punctured_erasure, solve_rho
from .transfer import TransferFn, TransferTable, simpson_panels


@dataclass
class ScalarSystem:
    """Uncoupled ensemble folded into the scalar fixed-point recursion."""

    transfer: TransferFn
    rep_factor: int
    rep_ratio: float
    parity_fraction: float
    rate: Fraction
    mother_rate: Fraction = Fraction(1, 3)
    _tables: dict = field(default_factory=dict, repr=False)

    @property
    def params(self) -> EnsembleParams:
        return EnsembleParams(
            rep_factor=self.rep_factor,
            rep_ratio=self.rep_ratio,
            parity_fraction=self.parity_fraction,
            mother_rate=self.mother_rate,
            target_rate=self.rate,
        )

    def table(self, eps) -> TransferTable:
        key = round(float(eps) * 1e12)
        tab = self._tables.get(key)
        if tab is None:
            tab = TransferTable(
                self.transfer, punctured_erasure(eps, self.parity_fraction), kind="fs"
            )
            self._tables[key] = tab
            if len(self._tables) > 64:
                self._tables.pop(next(iter(self._tables)))
        return tab


def make_scalar_system(rate, rep_factor, transfer: TransferFn, rep_ratio=None,
                       r0=Fraction(1, 3)) -> ScalarSystem:
    """The repetition ratio defaults to 1/q, the choice that maximizes the
    saturated threshold."""
    rate = Fraction(rate) if not isinstance(rate, Fraction) else rate
    lam = 1.0 / rep_factor if rep_ratio is None else rep_ratio
    rho = solve_rho(rate, rep_factor, lam, r0)
    return ScalarSystem(
        transfer=transfer,
        rep_factor=rep_factor,
        rep_ratio=lam,
        parity_fraction=rho,
        rate=rate,
        mother_rate=r0,
    )


def g_eval(x, q, lam):
    x = np.asarray(x, dtype=float)
    return q * lam * x ** (2 * q - 1) + (1 - q * lam) * x


def G_eval(x, q, lam):
    x = np.asarray(x, dtype=float)
    return 0.5 * lam * x ** (2 * q) + 0.5 * (1 - q * lam) * x**2


def integrate_F(x, eps, system: ScalarSystem, method="cheb", panels=2000):
    """F(x; eps) = integral of f_s(eps*z, eps_rho) over z in [0, x].

    The default path integrates the certified Chebyshev table analytically;
    ``method="simpson"`` is the composite-Simpson reference (2000 panels).
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    eps = float(eps)
    if eps == 0.0:
        out = np.zeros_like(xs)
        return out if np.ndim(x) else float(out[0])
    if method == "cheb":
        out = system.table(eps).integral(eps * xs) / eps
    elif method == "simpson":
        y = punctured_erasure(eps, system.parity_fraction)
        tf = system.transfer

        def fvec(z):
            return tf.fs_batch(eps * z, np.full_like(z, y))

        out = np.array([simpson_panels(fvec, 0.0, float(w), panels) for w in xs])
    else:
        raise ValueError(f"unknown method {method!r}")
    return out if np.ndim(x) else float(out[0])


def potential_U(x, eps, system: ScalarSystem, method="cheb"):
    """U(x; eps) in expanded form; U(0; eps) = 0 identically."""
    q, lam = system.rep_factor, system.rep_ratio
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    head = (q - 0.5) * lam * xs ** (2 * q) + 0.5 * (1 - q * lam) * xs**2
    out = head - integrate_F(g_eval(xs, q, lam), eps, system, method=method)
    out[xs == 0.0] = 0.0
    return out if np.ndim(x) else float(out[0])


def min_potential(eps, system: ScalarSystem, grid=10_000):
    """min over x in (0, 1] of U(x; eps), grid search plus two refinements."""
    xs = np.linspace(0.0, 1.0, grid + 1)[1:]
    u = potential_U(xs, eps, system)
    i = int(np.argmin(u))
    best_x, best_u = xs[i], u[i]
    lo = xs[max(0, i - 2)]
    hi = xs[min(len(xs) - 1, i + 2)]
    for _ in range(2):
        xs_f = np.linspace(lo, hi, 201)
        xs_f = xs_f[xs_f > 0]
        u_f = potential_U(xs_f, eps, system)
        j = int(np.argmin(u_f))
        if u_f[j] < best_u:
            best_u, best_x = u_f[j], xs_f[j]
        step = (hi - lo) / 200
        lo, hi = max(0.0, best_x - 2 * step), min(1.0, best_x + 2 * step)
    return float(best_u), float(best_x)


def potential_threshold(system: ScalarSystem, tol=1e-5, noise_floor=1e-9) -> float:
    """Largest eps with min_x U(x; eps) > 0, by bisection on [0, 1].

    ``noise_floor`` absorbs the ~1e-11 quadrature error: near x = 0 both
    potential terms vanish like x^(2q) and the computed minimum can dip a
    hair below zero while the true minimum is positive.  A genuinely negative
    minimum passes -1e-9 within eps-steps far smaller than the bisection
    resolution.
    """
    lo, hi = 0.0, 1.0
    u_hi, _ = min_potential(hi, system)
    if u_hi > -noise_floor:
        raise RuntimeError(f"potential predicate not bracketed: U_min(1)={u_hi:.3e}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        u_mid, _ = min_potential(mid, system)
        if u_mid > -noise_floor:
            lo = mid
        else:
            hi = mid
    return lo


# -- BP-EXIT curve and area-theorem MAP threshold -----------------------------


@dataclass
class MapResult:
    eps_map: float
    eps_bp: float
    rate: float
    grid: np.ndarray
    exit_curve: np.ndarray
    inconclusive_points: int


def _exit_combine(pu, pl, qu, ql, system: ScalarSystem):
    q, lam, rho = system.rep_factor, system.rep_ratio, system.parity_fraction
    par_edges = rho * (1.0 / float(system.mother_rate) - 1.0)
    num = (
        lam * (pu * pl) ** q
        + (1 - q * lam) * (pu * pl)
        + par_edges * (qu + ql) / 2.0
    )
    return num / (1.0 - (q - 1) * lam + par_edges)


def _fixed_points_batch(system: ScalarSystem, eps, cap, stall=1e-12):
    runner = _BatchDE(
        TransferPair.identical(system.transfer),
        system.rep_factor,
        np.array([system.rep_factor * system.rep_ratio]),
        np.array([system.parity_fraction]),
    )
    return runner.fixed_point(np.asarray(eps, dtype=float), cap=cap, stall=stall)


def bp_exit(eps, system: ScalarSystem, cap=50_000, on_inconclusive="raise"):
    """Average extrinsic erasure probability per transmitted bit at the BP
    fixed point.  Repeated info bits combine their 2q trellis edges, plain
    info bits 2, and surviving parity bits contribute their own extrinsic."""
    res = _fixed_points_batch(system, [float(eps)], cap=cap)
    if res["status"][0] == INCONCLUSIVE and on_inconclusive == "raise":
        raise RuntimeError(f"DE inconclusive at eps={eps}")
    h = _exit_combine(
        res["p_upper"][:, 0], res["p_lower"][:, 0], res["q_upper"], res["q_lower"], system
    )
    return float(h[0])


def map_threshold_area(system: ScalarSystem, panels=2000, grid_cap=20_000) -> MapResult:
    """Solve integral_{eps_map}^{1} h(eps) d eps = R.

    h vanishes below the uncoupled BP threshold, so the quadrature runs on
    [eps_BP, 1] (composite Simpson, ``panels`` panels).  Grid points whose DE
    is still crossing its critical window at the iteration cap use the capped
    trajectory value; the affected strip is one panel wide.
    """
    base = bp_threshold(system.params, TransferPair.identical(system.transfer), tol=1e-6)
    ebp = base.eps_bp
    if panels % 2:
        panels += 1
    grid = np.linspace(ebp, 1.0, panels + 1)
    res = _fixed_points_batch(system, grid, cap=grid_cap)
    n_inc = int(np.sum(res["status"] == INCONCLUSIVE))
    h = _exit_combine(
        res["p_upper"][:, 0], res["p_lower"][:, 0], res["q_upper"], res["q_lower"], system
    )

    rate = float(system.rate)
    width = grid[1] - grid[0]
    total = simpson_from_samples(h, width)
    if total < rate - 1e-9:
        raise RuntimeError(
            f"EXIT area {total:.6f} below the code rate {rate:.6f}: "
            "extrinsic composition inconsistent"
        )

    # Right-to-left cumulative integral on the sample grid.
    C = cumulative_right(h, width)
    k = int(np.searchsorted(-C, -rate))          # C[k] >= rate > C[k+1]
    k = min(max(k, 1), len(grid) - 1)
    lo, hi = grid[k - 1], grid[k]
    C_hi = C[k]
    tf = system.transfer
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if hi - lo < 1e-7:
            break
        zs = np.linspace(mid, grid[k], 5)
        rr = _fixed_points_batch(system, zs, cap=grid_cap)
        hh = _exit_combine(
            rr["p_upper"][:, 0], rr["p_lower"][:, 0], rr["q_upper"], rr["q_lower"], system
        )
        c_mid = C_hi + simpson_from_samples(hh, zs[1] - zs[0])
        if c_mid >= rate:
            lo = mid
        else:
            hi = mid
    return MapResult(
        eps_map=0.5 * (lo + hi),
        eps_bp=ebp,
        rate=rate,
        grid=grid,
        exit_curve=h,
        inconclusive_points=n_inc,
    )


def simpson_from_samples(v, width):
    n = len(v) - 1
    if n % 2:
        # fall back to trapezoid on the last interval
        core = simpson_from_samples(v[:-1], width)
        return core + 0.5 * width * (v[-2] + v[-1])
    return float(width / 3.0 * (v[0] + v[-1] + 4 * v[1:-1:2].sum() + 2 * v[2:-2:2].sum()))


def cumulative_right(v, width):
    """C[i] = integral from grid point i to the right end (quadratic rule)."""
    n = len(v)
    C = np.zeros(n)
    for i in range(n - 2, -1, -1):
        if i + 2 < n:
            seg = width / 12.0 * (5 * v[i] + 8 * v[i + 1] - v[i + 2])
        else:
            seg = width / 2.0 * (v[i] + v[i + 1])
        C[i] = C[i + 1] + seg
    return C
