"""Exact density evolution, BP thresholds, and repetition-ratio optimization.

Uncoupled ensembles follow the serial two-decoder schedule (lower update from
the previous upper value, upper update from the fresh lower value); coupled
chains follow the parallel schedule in which every position-t update reads
iteration i-1 values.  Schedules change iteration counts, never fixed points.

The hot loops evaluate f_s through verified Chebyshev tables of the exact
subset-chain evaluator (see transfer.TableBank); public single-step functions
evaluate exactly.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleParams, punctured_erasure, solve_rho
from .transfer import TableBank, TransferFn

DEFAULT_TOL = 1e-8
DEFAULT_STALL = 1e-12
DEFAULT_CAP = 50_000

CONVERGED, STALLED, INCONCLUSIVE = 1, 0, -1


@dataclass
class TransferPair:
    upper: TransferFn
    lower: TransferFn

    @classmethod
    def identical(cls, tf: TransferFn) -> "TransferPair":
        return cls(upper=tf, lower=tf)


@dataclass
class DEState:
    """Erasure-probability state: scalars when uncoupled, arrays of length
    L+m (positions t=1..L+m) when coupled.  Parity outputs may be None when
    a caller only tracks convergence."""

    p_upper: np.ndarray | float
    p_lower: np.ndarray | float
    q_upper: np.ndarray | float | None = None
    q_lower: np.ndarray | float | None = None
    iteration: int = 0


@dataclass
class DEConvergence:
    converged: bool | None          # None = inconclusive at the iteration cap
    iterations: int
    residual: float


@dataclass
class ThresholdResult:
    eps_bp: float
    bracket: tuple
    lam: float
    rho: float
    iterations: int                 # iterations of the last converged run
    residual: float
    inconclusive: bool = False

    def __post_init__(self):
        assert 0.0 <= self.eps_bp <= 1.0


def all_ones_state(params: EnsembleParams) -> DEState:
    if params.coupling_length is None:
        return DEState(1.0, 1.0)
    T = params.coupling_length + params.coupling_memory
    return DEState(np.ones(T), np.ones(T))


# -- public single-step operations (exact transfer evaluations) --------------

def de_step_uncoupled(state: DEState, eps, params: EnsembleParams,
                      transfer: TransferPair, include_parity=True) -> DEState:
    q, lam, rho = params.rep_factor, params.rep_ratio, params.parity_fraction
    qlam = q * lam
    y = punctured_erasure(eps, rho)
    pu, pl = float(state.p_upper), float(state.p_lower)

    arg_l = eps * (qlam * pl ** (q - 1) * pu ** q + (1 - qlam) * pu)
    pl_new = transfer.lower.fs(arg_l, y)
    arg_u = eps * (qlam * pu ** (q - 1) * pl_new ** q + (1 - qlam) * pl_new)
    pu_new = transfer.upper.fs(arg_u, y)
    qu = ql = None
    if include_parity:
        ql = transfer.lower.fp(arg_l, y)
        qu = transfer.upper.fp(arg_u, y)
    return DEState(pu_new, pl_new, qu, ql, state.iteration + 1)


def de_step_coupled(state: DEState, eps, params: EnsembleParams,
                    transfer: TransferPair, include_parity=False) -> DEState:
    q, lam, rho = params.rep_factor, params.rep_ratio, params.parity_fraction
    m, L = params.coupling_memory, params.coupling_length
    if L is None:
        raise ValueError("coupled step needs a finite coupling length")
    qlam = q * lam
    y = punctured_erasure(eps, rho)
    pu = np.asarray(state.p_upper, dtype=float)
    pl = np.asarray(state.p_lower, dtype=float)
    if pu.shape != (L + m,):
        raise ValueError(f"state must cover L+m = {L + m} positions")

    pu_bar = _window_mean_ahead(pu[None], m, L)[0]
    pl_bar = _window_mean_ahead(pl[None], m, L)[0]
    w_for_u = qlam * pl_bar ** q * pu_bar ** (q - 1) + (1 - qlam) * pl_bar
    w_for_l = qlam * pu_bar ** q * pl_bar ** (q - 1) + (1 - qlam) * pu_bar
    arg_u = eps * _window_mean_behind(w_for_u[None], m)[0]
    arg_l = eps * _window_mean_behind(w_for_l[None], m)[0]

    pu_new = transfer.upper.fs_batch(arg_u, np.full_like(arg_u, y))
    pl_new = transfer.lower.fs_batch(arg_l, np.full_like(arg_l, y))
    qu = ql = None
    if include_parity:
        qu = transfer.upper.fp_batch(arg_u, np.full_like(arg_u, y))
        ql = transfer.lower.fp_batch(arg_l, np.full_like(arg_l, y))
    return DEState(pu_new, pl_new, qu, ql, state.iteration + 1)


def _window_mean_ahead(p, m, L):
    """mean of p[:, t..t+m] for t = 0..L-1 (incoming averages at positions)."""
    if m == 0:
        return p[:, :L]
    c = np.zeros((p.shape[0], p.shape[1] + 1))
    np.cumsum(p, axis=1, out=c[:, 1:])
    return (c[:, m + 1 : m + 1 + L] - c[:, :L]) / (m + 1)


def _window_mean_behind(w, m):
    """mean of w[:, tau-m..tau] with zeros outside, for tau = 0..L+m-1."""
    if m == 0:
        return w
    B, L = w.shape
    wp = np.zeros((B, L + 2 * m))
    wp[:, m : m + L] = w
    c = np.zeros((B, L + 2 * m + 1))
    np.cumsum(wp, axis=1, out=c[:, 1:])
    return (c[:, m + 1 :] - c[:, : L + m]) / (m + 1)


# -- lockstep batch engine ----------------------------------------------------

class _BatchDE:
    """Lockstep DE runs for a batch of (eps, lambda, rho) points sharing
    (q, m, L) and the component transfer functions."""

    def __init__(self, transfer: TransferPair, q, qlam, rho, m=0, L=None):
        self.transfer = transfer
        self.q = q
        self.qlam = np.asarray(qlam, dtype=float)
        self.rho = np.asarray(rho, dtype=float)
        self.m = m
        self.L = L
        self.coupled = L is not None

    def run(self, eps, tol=DEFAULT_TOL, stall=DEFAULT_STALL, cap=DEFAULT_CAP,
            keep_state=False, trace_hook=None):
        eps = np.asarray(eps, dtype=float)
        B = eps.shape[0]
        qlam = np.broadcast_to(self.qlam, (B,)).copy()
        rho = np.broadcast_to(self.rho, (B,)).copy()
        ys = 1.0 - (1.0 - eps) * rho
        bank_u = TableBank(self.transfer.upper, ys, kind="fs")
        bank_l = (
            bank_u
            if self.transfer.lower is self.transfer.upper
            else TableBank(self.transfer.lower, ys, kind="fs")
        )

        shared = bank_l is bank_u
        T = (self.L + self.m) if self.coupled else 1
        pu = np.ones((B, T))
        pl = np.ones((B, T))
        status = np.full(B, INCONCLUSIVE, dtype=np.int8)
        iters = np.zeros(B, dtype=np.int64)
        resid = np.ones(B)
        active = np.arange(B)
        prev_mean = np.full(B, np.inf)
        q = self.q
        it = 0
        while active.size and it < cap:
            it += 1
            e = eps[active, None]
            ql_ = qlam[active, None]
            au, al = pu[active], pl[active]
            if self.coupled:
                pu_bar = _window_mean_ahead(au, self.m, self.L)
                pl_bar = _window_mean_ahead(al, self.m, self.L)
                w_u = ql_ * pl_bar**q * pu_bar ** (q - 1) + (1 - ql_) * pl_bar
                w_l = ql_ * pu_bar**q * pl_bar ** (q - 1) + (1 - ql_) * pu_bar
                arg_u = e * _window_mean_behind(w_u, self.m)
                arg_l = e * _window_mean_behind(w_l, self.m)
                if shared:
                    both = bank_u.eval(np.concatenate([arg_u, arg_l], axis=1), rows=active)
                    nu, nl = both[:, :T], both[:, T:]
                else:
                    nu = bank_u.eval(arg_u, rows=active)
                    nl = bank_l.eval(arg_l, rows=active)
            else:
                arg_l = e * (ql_ * al ** (q - 1) * au**q + (1 - ql_) * au)
                nl = bank_l.eval(arg_l, rows=active)
                arg_u = e * (ql_ * au ** (q - 1) * nl**q + (1 - ql_) * nl)
                nu = bank_u.eval(arg_u, rows=active)
            pu[active] = nu
            pl[active] = nl
            if trace_hook is not None:
                trace_hook(it, pu.copy(), pl.copy())

            cur_max = np.maximum(nu.max(axis=1), nl.max(axis=1))
            cur_mean = 0.5 * (nu.mean(axis=1) + nl.mean(axis=1))
            done_ok = cur_max < tol
            done_stall = (~done_ok) & (prev_mean[active] - cur_mean < stall)
            finished = done_ok | done_stall
            if np.any(finished):
                rows = active[finished]
                status[rows] = np.where(done_ok[finished], CONVERGED, STALLED)
                iters[rows] = it
                resid[rows] = cur_max[finished]
            prev_mean[active] = cur_mean
            active = active[~finished]
        if active.size:
            iters[active] = it
            resid[active] = np.maximum(pu[active].max(axis=1), pl[active].max(axis=1))
        out = {"status": status, "iterations": iters, "residual": resid}
        if keep_state:
            out.update({"p_upper": pu, "p_lower": pl, "ys": ys})
        return out

    def fixed_point(self, eps, tol=DEFAULT_TOL, stall=DEFAULT_STALL, cap=DEFAULT_CAP):
        """Run to the fixed point and return p*, parity outputs and args."""
        res = self.run(eps, tol=tol, stall=stall, cap=cap, keep_state=True)
        eps = np.asarray(eps, dtype=float)
        pu, pl = res["p_upper"][:, 0], res["p_lower"][:, 0]
        qlam = np.broadcast_to(self.qlam, eps.shape)
        q = self.q
        arg_l = eps * (qlam * pl ** (q - 1) * pu**q + (1 - qlam) * pu)
        arg_u = eps * (qlam * pu ** (q - 1) * pl**q + (1 - qlam) * pl)
        qu = self.transfer.upper.fp_batch(arg_u, res["ys"])
        ql = self.transfer.lower.fp_batch(arg_l, res["ys"])
        res.update({"q_upper": qu, "q_lower": ql, "arg_upper": arg_u, "arg_lower": arg_l})
        return res


def _runner_for(params: EnsembleParams, transfer: TransferPair) -> _BatchDE:
    return _BatchDE(
        transfer,
        params.rep_factor,
        np.array([params.rep_factor * params.rep_ratio]),
        np.array([params.parity_fraction]),
        params.coupling_memory if params.coupling_length is not None else 0,
        params.coupling_length,
    )


def de_converges(eps, params: EnsembleParams, transfer: TransferPair,
                 schedule="auto", tol=DEFAULT_TOL, stall=DEFAULT_STALL,
                 cap=DEFAULT_CAP) -> DEConvergence:
    """Run DE from the all-ones state; converged means every erasure
    probability fell below ``tol``."""
    if schedule == "uncoupled" or (schedule == "auto" and params.coupling_length is None):
        runner = _BatchDE(transfer, params.rep_factor,
                          np.array([params.rep_factor * params.rep_ratio]),
                          np.array([params.parity_fraction]))
    elif schedule in ("auto", "coupled"):
        runner = _runner_for(params, transfer)
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    res = runner.run(np.array([float(eps)]), tol=tol, stall=stall, cap=cap)
    st = int(res["status"][0])
    return DEConvergence(
        converged=True if st == CONVERGED else (False if st == STALLED else None),
        iterations=int(res["iterations"][0]),
        residual=float(res["residual"][0]),
    )


def _auto_cap(base: EnsembleParams):
    """Iteration budget for threshold bisection.

    Near the threshold the decoding wave needs about 0.2/sqrt(gap) * (T/1000)
    iterations to cross a length-T chain (measured for the 4-state rate-1/2
    ensembles), so a flat 5e4 cap leaves L = 1000 bisections stuck at ~1e-3
    brackets.  Scaling the cap with T keeps final brackets near 1e-4 at a
    bounded cost; runs that still hit it are reported inconclusive with the
    bracket.
    """
    if base.coupling_length is None:
        return DEFAULT_CAP
    return max(DEFAULT_CAP, 200 * (base.coupling_length + base.coupling_memory))


def bp_threshold(params: EnsembleParams, transfer: TransferPair, tol=1e-5,
                 cap="auto") -> ThresholdResult:
    """Bisection of the convergence boundary over [0, 1-R]."""
    res = bp_threshold_batch(
        np.array([params.rep_ratio]), params, transfer, tol=tol, cap=cap
    )
    return res[0]


def bp_threshold_batch(lams, base: EnsembleParams, transfer: TransferPair,
                       tol=1e-5, cap="auto", hi_cap=None) -> list[ThresholdResult]:
    """Lockstep bisection across a grid of repetition ratios sharing the
    target rate and coupling of ``base``."""
    if cap == "auto":
        cap = _auto_cap(base)
    lams = np.asarray(lams, dtype=float)
    B = lams.size
    q = base.rep_factor
    if base.target_rate is not None:
        rhos = np.array([solve_rho(base.target_rate, q, l) for l in lams])
        rate = float(base.target_rate)
    else:
        rhos = np.full(B, base.parity_fraction)
        rate = base.rate
    runner = _BatchDE(transfer, q, q * lams, rhos,
                      base.coupling_memory if base.coupling_length is not None else 0,
                      base.coupling_length)

    lo = np.zeros(B)
    hi = np.full(B, min(1.0 - rate, 1.0) if hi_cap is None else hi_cap)
    frozen = np.zeros(B, dtype=bool)
    last_conv_iters = np.ones(B, dtype=np.int64)
    last_conv_resid = np.zeros(B)
    while True:
        open_rows = np.flatnonzero(~frozen & (hi - lo > tol))
        if open_rows.size == 0:
            break
        mids = 0.5 * (lo[open_rows] + hi[open_rows])
        sub = _BatchDE(transfer, q, q * lams[open_rows], rhos[open_rows],
                       runner.m, runner.L)
        res = sub.run(mids, cap=cap)
        st = res["status"]
        conv = st == CONVERGED
        stall = st == STALLED
        inc = st == INCONCLUSIVE
        lo[open_rows[conv]] = mids[conv]
        last_conv_iters[open_rows[conv]] = res["iterations"][conv]
        last_conv_resid[open_rows[conv]] = res["residual"][conv]
        hi[open_rows[stall]] = mids[stall]
        frozen[open_rows[inc]] = True

    return [
        ThresholdResult(
            eps_bp=float(lo[i]),
            bracket=(float(lo[i]), float(hi[i])),
            lam=float(lams[i]),
            rho=float(rhos[i]),
            iterations=int(last_conv_iters[i]),
            residual=float(last_conv_resid[i]),
            inconclusive=bool(frozen[i]),
        )
        for i in range(B)
    ]


@dataclass
class LambdaOpt:
    lam_interval: tuple
    best: ThresholdResult
    scan: list                       # (lam, ThresholdResult) pairs, lam-sorted


def _scan_chunk(args):
    lams, rate, q, m, L, states, tol, cap = args
    from .trellis import GENERATORS_BY_STATES, build_trellis
    from .transfer import transfer_for

    tf = transfer_for(build_trellis(GENERATORS_BY_STATES[states]))
    base = EnsembleParams.for_rate(rate, q, max(lams), m=m, L=L)
    return bp_threshold_batch(lams, base, TransferPair.identical(tf), tol=tol, cap=cap)


def optimize_lambda(rate, q, m, L, transfer: TransferPair, grid_step=0.001,
                    refine_step=0.0005, coarse_step=None, tol=1e-5,
                    cap="auto", workers=1, states=None) -> LambdaOpt:
    """Maximize the BP threshold over the repetition ratio.

    Coupled rows default to a 0.004 coarse scan refined at ``grid_step`` in a
    window around the coarse argmax (thresholds are continuous in lambda and
    the reported optima are plateaus, so the window cannot skip the maximum);
    uncoupled rows scan the full grid.  Ties within the bisection tolerance
    are reported as a contiguous interval.
    """
    from fractions import Fraction

    rate = Fraction(rate) if not isinstance(rate, Fraction) else rate
    coupled = L is not None and m > 0
    if coarse_step is None:
        coarse_step = 0.004 if coupled else grid_step

    def feasible(lams):
        out = []
        for lam in lams:
            try:
                solve_rho(rate, q, lam)
            except ValueError:
                continue
            out.append(round(float(lam), 10))
        return out

    lam_max = 1.0 / q
    grid = feasible(np.arange(0.0, lam_max + 1e-12, coarse_step))
    if not grid:
        raise ValueError("no feasible repetition ratio for this rate")
    if abs(grid[-1] - lam_max) > 1e-12:
        grid.append(round(lam_max, 10))

    results: dict[float, ThresholdResult] = {}

    def scan(lams):
        todo = [l for l in lams if l not in results]
        if not todo:
            return
        if workers > 1 and states is not None and len(todo) > 2 * workers:
            chunks = np.array_split(np.array(todo), workers)
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outs = list(
                    pool.map(
                        _scan_chunk,
                        [(c.tolist(), rate, q, m, L, states, tol, cap) for c in chunks if c.size],
                    )
                )
            flat = [r for out in outs for r in out]
        else:
            base = EnsembleParams.for_rate(rate, q, todo[0], m=m, L=L)
            flat = bp_threshold_batch(np.array(todo), base, transfer, tol=tol, cap=cap)
        for lam, r in zip(todo, flat):
            results[lam] = r

    scan(grid)
    if coarse_step > grid_step:
        best_lam = max(results, key=lambda l: results[l].eps_bp)
        lo = max(0.0, best_lam - 4 * coarse_step)
        hi = min(lam_max, best_lam + 4 * coarse_step)
        scan(feasible(np.arange(lo, hi + 1e-12, grid_step)))

    best_lam = max(results, key=lambda l: results[l].eps_bp)
    tie_tol = tol
    interval = _tied_interval(results, best_lam, tie_tol, grid_step)
    if refine_step < grid_step:
        scan(feasible(np.arange(max(0.0, interval[0] - grid_step),
                                min(lam_max, interval[1] + grid_step) + 1e-12,
                                refine_step)))
        best_lam = max(results, key=lambda l: results[l].eps_bp)
        interval = _tied_interval(results, best_lam, tie_tol, refine_step)

    scan_sorted = sorted(results.items())
    return LambdaOpt(
        lam_interval=interval,
        best=results[best_lam],
        scan=scan_sorted,
    )


def _tied_interval(results, best_lam, tie_tol, step):
    best = results[best_lam].eps_bp
    lams = sorted(results)
    i = lams.index(best_lam)
    lo = hi = best_lam
    j = i - 1
    while j >= 0 and results[lams[j]].eps_bp >= best - tie_tol and lams[j + 1] - lams[j] <= step + 1e-12:
        lo = lams[j]
        j -= 1
    j = i + 1
    while j < len(lams) and results[lams[j]].eps_bp >= best - tie_tol and lams[j] - lams[j - 1] <= step + 1e-12:
        hi = lams[j]
        j += 1
    return (lo, hi)
