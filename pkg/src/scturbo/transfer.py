"""Decoder transfer functions f_s(x, y) and f_p(x, y) on the BEC.

f_s / f_p are the extrinsic erasure probabilities of the infinite-length
erasure BCJR for information / parity bits when info bits are erased i.i.d.
with probability x and parity bits with probability y.  Under the all-zero
codeword assumption the forward (and backward) state-knowledge sets form a
Markov chain over nonempty subsets of trellis states; the transfer functions
are exact functionals of the two limiting subset distributions.

The limiting distribution is the process limit from the all-states subset.
The default solver squares the lazy transition matrix (I+P)/2, which reaches
the same limit as plain power iteration wherever that converges and the
positional-average (Cesaro) limit at degenerate parameter corners where it
does not.  ``method="power"`` gives the plain iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as _cheb

from .bcjr import ERASED, ObservedBlock, decode_block, _tables
from .trellis import Trellis, encode

# Observation events per step: (info erased?, parity erased?).
# Event e = 2*ie + pe; probabilities [(1-x)(1-y), (1-x)y, x(1-y), xy].
_EVENT_COMBOS = (0, 2, 6, 8)   # bcjr combo = info_obs*3 + parity_obs with obs 0/ERASED


class ChainConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class SubsetChain:
    """State-subset chain evaluated at one (x, y) point.

    ``subsets`` are bitmasks over trellis states (index 0 = all states);
    ``transitions[e, i]`` is the subset reached from subset i under event e.
    """

    subsets: list
    transitions: np.ndarray
    x: float
    y: float
    limiting: np.ndarray
    iterations: int
    residual: float

    def transition_matrix(self) -> np.ndarray:
        return _dense_matrix(self.transitions, self.x, self.y)


class _ChainStruct:
    """Reachable subsets and event-indexed transitions (parameter free)."""

    def __init__(self, trellis: Trellis):
        tab = _tables(trellis)
        full = (1 << trellis.num_states) - 1
        index = {full: 0}
        subsets = [full]
        trans_rows = []
        frontier = [full]
        while frontier:
            nxt_frontier = []
            for m in frontier:
                row = []
                for combo in _EVENT_COMBOS:
                    m2 = int(tab.fwd[combo][m])
                    if m2 not in index:
                        index[m2] = len(subsets)
                        subsets.append(m2)
                        nxt_frontier.append(m2)
                    row.append(index[m2])
                trans_rows.append(row)
            frontier = nxt_frontier
        self.subsets = subsets
        self.transitions = np.array(trans_rows, dtype=np.int64).T.copy()  # (4, n)
        self.n = len(subsets)


def _dense_matrix(transitions, x, y):
    n = transitions.shape[1]
    probs = _event_probs(x, y)
    P = np.zeros((n, n))
    rows = np.arange(n)
    for e in range(4):
        P[rows, transitions[e]] += probs[e]
    return P


def _event_probs(x, y):
    return np.array([(1 - x) * (1 - y), (1 - x) * y, x * (1 - y), x * y])


def _batch_matrices(transitions, xs, ys):
    """Dense transition matrices for a batch of (x, y) points: (B, n, n)."""
    n = transitions.shape[1]
    B = xs.shape[0]
    P = np.zeros((B, n, n))
    rows = np.arange(n)
    probs = np.stack(
        [(1 - xs) * (1 - ys), (1 - xs) * ys, xs * (1 - ys), xs * ys], axis=0
    )
    for e in range(4):
        P[:, rows, transitions[e]] += probs[e][:, None]
    return P


def _limits_doubling(P, max_squarings=60, tol=1e-13):
    """Limit of the lazy chain from the all-states row, batched over axis 0.

    Rows are renormalized after every squaring: squaring amplifies row-sum
    rounding drift as (1+eps)^(2^k), which explodes by k ~ 55 otherwise.
    """
    n = P.shape[-1]
    M = 0.5 * P
    idx = np.arange(n)
    M[..., idx, idx] += 0.5
    for _ in range(max_squarings):
        M2 = np.matmul(M, M)
        M2 /= M2.sum(axis=-1, keepdims=True)
        diff = np.abs(M2 - M).max()
        M = M2
        if diff < tol:
            break
    return M[..., 0, :]


def _limit_power(P, fall_idx=0, tol=1e-12, cap=100000):
    v = np.zeros(P.shape[0])
    v[fall_idx] = 1.0
    for it in range(cap):
        v2 = v @ P
        resid = np.abs(v2 - v).max()
        v = v2
        if resid < tol:
            return v, it + 1, resid
    raise ChainConvergenceError("limiting-distribution iteration did not converge", resid)


class TransferFn:
    """Exact transfer-function evaluator for one trellis.

    Evaluations are pure functions of (x, y); results are cached at 1e-12
    argument resolution (plain dict inserts, safe under the GIL).
    """

    def __init__(self, trellis: Trellis):
        self.trellis = trellis
        self._rev = trellis.reversed()
        self.fwd = _ChainStruct(trellis)
        self.bwd = _ChainStruct(self._rev)
        self._build_indicators()
        self._cache: dict = {}

    def _build_indicators(self):
        tr = self.trellis
        nxt, par = tr.next_state, tr.parity
        S = tr.num_states
        m_fs_any, m_fs_p0, m_fp_any, m_fp_u0 = [], [], [], []
        for F in self.fwd.subsets:
            a = b = c = d = 0
            for s in range(S):
                if not (F >> s) & 1:
                    continue
                a |= 1 << nxt[1][s]
                if par[1][s] == 0:
                    b |= 1 << nxt[1][s]
                for u in (0, 1):
                    if par[u][s] == 1:
                        c |= 1 << nxt[u][s]
                if par[0][s] == 1:
                    d |= 1 << nxt[0][s]
            m_fs_any.append(a)
            m_fs_p0.append(b)
            m_fp_any.append(c)
            m_fp_u0.append(d)

        bmasks = self.bwd.subsets

        def table(masks):
            return np.array(
                [[1.0 if m & bm else 0.0 for bm in bmasks] for m in masks]
            )

        self.A_fs_any = table(m_fs_any)
        self.A_fs_p0 = table(m_fs_p0)
        self.A_fp_any = table(m_fp_any)
        self.A_fp_u0 = table(m_fp_u0)

    # -- exact evaluation ---------------------------------------------------
    def both(self, x, y):
        """(f_s, f_p) at one point, cached."""
        key = (round(x * 1e12), round(y * 1e12))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        fs, fp = self.both_batch(np.array([x]), np.array([y]))
        out = (float(fs[0]), float(fp[0]))
        self._cache[key] = out
        return out

    def fs(self, x, y):
        return self.both(x, y)[0]

    def fp(self, x, y):
        return self.both(x, y)[1]

    def limits_batch(self, xs, ys, chunk=200_000):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        nf, nb = self.fwd.n, self.bwd.n
        chunk = max(1, chunk // (nf * nf))
        piF = np.empty((xs.shape[0], nf))
        piB = np.empty((xs.shape[0], nb))
        for i in range(0, xs.shape[0], chunk):
            sl = slice(i, i + chunk)
            piF[sl] = _limits_doubling(_batch_matrices(self.fwd.transitions, xs[sl], ys[sl]))
            piB[sl] = _limits_doubling(_batch_matrices(self.bwd.transitions, xs[sl], ys[sl]))
        return piF, piB

    def both_batch(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if np.any((xs < 0) | (xs > 1) | (ys < 0) | (ys > 1)):
            raise ValueError("transfer arguments must lie in [0, 1]")
        piF, piB = self.limits_batch(xs, ys)
        fs = ys * np.einsum("bi,ij,bj->b", piF, self.A_fs_any, piB) + (
            1 - ys
        ) * np.einsum("bi,ij,bj->b", piF, self.A_fs_p0, piB)
        fp = xs * np.einsum("bi,ij,bj->b", piF, self.A_fp_any, piB) + (
            1 - xs
        ) * np.einsum("bi,ij,bj->b", piF, self.A_fp_u0, piB)
        # Fully known info with any parity pruning (y < 1) pins the state
        # path: the extrinsics are exactly zero, not merely ~1e-16.
        pinned = (xs == 0.0) & (ys < 1.0)
        fs[pinned] = 0.0
        fp[pinned] = 0.0
        return np.clip(fs, 0.0, 1.0), np.clip(fp, 0.0, 1.0)

    def fs_batch(self, xs, ys):
        return self.both_batch(xs, ys)[0]

    def fp_batch(self, xs, ys):
        return self.both_batch(xs, ys)[1]


_TRANSFER_CACHE: dict[int, TransferFn] = {}


def transfer_for(trellis: Trellis) -> TransferFn:
    tf = _TRANSFER_CACHE.get(id(trellis))
    if tf is None:
        tf = TransferFn(trellis)
        _TRANSFER_CACHE[id(trellis)] = tf
    return tf


def forward_chain(trellis: Trellis, x, y, method="doubling") -> SubsetChain:
    """Forward subset chain at (x, y) with its limiting distribution."""
    if not (0 <= x <= 1 and 0 <= y <= 1):
        raise ValueError("x, y must lie in [0, 1]")
    struct = transfer_for(trellis).fwd
    P = _dense_matrix(struct.transitions, x, y)
    if method == "power":
        pi, iterations, resid = _limit_power(P)
    elif method == "doubling":
        pi = _limits_doubling(P[None])[0]
        iterations = 0
        resid = float(np.abs(pi @ P - pi).max())
    else:
        raise ValueError(f"unknown method {method!r}")
    return SubsetChain(
        subsets=struct.subsets,
        transitions=struct.transitions,
        x=float(x),
        y=float(y),
        limiting=pi,
        iterations=iterations,
        residual=float(resid),
    )


def eval_fs(trellis: Trellis, x, y) -> float:
    return transfer_for(trellis).fs(x, y)


def eval_fp(trellis: Trellis, x, y) -> float:
    return transfer_for(trellis).fp(x, y)


# -- verified Chebyshev acceleration ----------------------------------------

_NODE_MATRICES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _node_matrix(n):
    """First-kind Chebyshev nodes on [-1,1] and the values->coefficients map."""
    cached = _NODE_MATRICES.get(n)
    if cached is None:
        k = np.arange(n)
        t = np.cos(np.pi * (k + 0.5) / n)
        j = np.arange(n)
        M = np.cos(np.pi * np.outer(k + 0.5, j) / n) * (2.0 / n)
        M[:, 0] *= 0.5
        cached = (t, M)
        _NODE_MATRICES[n] = cached
    return cached


class TableBank:
    """Chebyshev tables of x -> f(x, y_b) for a batch of y values.

    Built from exact evaluations; certified by the coefficient tail (the
    interpolants of an analytic function converge geometrically) plus exact
    spot checks.  Falls back to direct exact evaluation if certification
    fails.
    """

    TAIL_TOL = 5e-11

    def __init__(self, tf: TransferFn, ys, kind="fs", deg=128, spot_rows=4, rng=None):
        self.tf = tf
        self.kind = kind
        self.ys = np.asarray(ys, dtype=float)
        self.exact_fallback = False
        B = self.ys.shape[0]
        batch = tf.fs_batch if kind == "fs" else tf.fp_batch
        while True:
            n = deg + 1
            t, M = _node_matrix(n)
            xs = 0.5 * (t + 1.0)
            X = np.broadcast_to(xs, (B, n)).ravel()
            Y = np.repeat(self.ys, n)
            vals = batch(X, Y).reshape(B, n)
            coeffs = vals @ M
            tail = np.abs(coeffs[:, -8:]).sum(axis=1).max() if n >= 8 else np.inf
            if tail < self.TAIL_TOL:
                break
            if deg >= 512:
                self.exact_fallback = True
                self.coeffs = None
                return
            deg *= 2
        keep = np.nonzero(np.abs(coeffs).max(axis=0) > 1e-14)[0]
        d_eff = int(keep[-1]) + 1 if keep.size else 1
        self.coeffs = np.ascontiguousarray(coeffs[:, :d_eff])

        # Spot verification against the exact evaluator.
        rng = np.random.default_rng(0) if rng is None else rng
        rows = rng.choice(B, size=min(spot_rows, B), replace=False)
        xs_chk = np.linspace(0.0, 1.0, 33)
        approx = self.eval(np.broadcast_to(xs_chk, (rows.size, 33)), rows=rows)
        exact = batch(
            np.tile(xs_chk, rows.size), np.repeat(self.ys[rows], xs_chk.size)
        ).reshape(rows.size, 33)
        err = np.abs(approx - exact).max()
        if err > 1e-9:
            self.exact_fallback = True
            self.coeffs = None

    def eval(self, xs, rows=None):
        """Per-row evaluation: xs has shape (B, ...) matching the y batch."""
        xs = np.asarray(xs, dtype=float)
        if self.exact_fallback:
            ys = self.ys if rows is None else self.ys[rows]
            Y = np.broadcast_to(ys[:, None], xs.shape).ravel()
            batch = self.tf.fs_batch if self.kind == "fs" else self.tf.fp_batch
            return batch(xs.ravel(), Y).reshape(xs.shape)
        c = self.coeffs if rows is None else self.coeffs[rows]
        t = 2.0 * xs - 1.0
        D = c.shape[1]
        shape_tail = (1,) * (xs.ndim - 1)
        b1 = np.zeros_like(t)
        b2 = np.zeros_like(t)
        for j in range(D - 1, 0, -1):
            b1, b2 = c[:, j].reshape(-1, *shape_tail) + 2.0 * t * b1 - b2, b1
        out = c[:, 0].reshape(-1, *shape_tail) + t * b1 - b2
        return np.clip(out, 0.0, 1.0)


class TransferTable:
    """Single-y Chebyshev table with an exact antiderivative."""

    def __init__(self, tf: TransferFn, y, kind="fs", deg=128):
        self.bank = TableBank(tf, np.array([float(y)]), kind=kind, deg=deg, spot_rows=1)
        self.y = float(y)
        if not self.bank.exact_fallback:
            c = self.bank.coeffs[0]
            ci = _cheb.chebint(c, lbnd=-1) * 0.5   # d x = d t / 2 on [0,1]
            self._ci = ci
        else:
            self._ci = None

    def eval(self, xs):
        xs = np.asarray(xs, dtype=float)
        return self.bank.eval(xs[None])[0]

    def integral(self, ws):
        """Antiderivative from 0: returns the integral of f over [0, w]."""
        ws = np.asarray(ws, dtype=float)
        if self._ci is None:
            return _simpson_integral_scan(self, ws)
        return _cheb.chebval(2.0 * ws - 1.0, self._ci)


def _simpson_integral_scan(table, ws, panels=2000):
    ws = np.atleast_1d(np.asarray(ws, dtype=float))
    out = np.empty_like(ws)
    for i, w in enumerate(ws):
        out[i] = simpson_panels(lambda z: table.eval(z), 0.0, float(w), panels)
    return out


def simpson_panels(fvec, a, b, panels):
    """Composite Simpson with an even panel count; fvec maps arrays to arrays."""
    if panels % 2:
        panels += 1
    if b <= a:
        return 0.0
    z = np.linspace(a, b, panels + 1)
    v = fvec(z)
    h = (b - a) / panels
    return float(h / 3.0 * (v[0] + v[-1] + 4.0 * v[1:-1:2].sum() + 2.0 * v[2:-2:2].sum()))


# -- Monte Carlo oracle ------------------------------------------------------


@dataclass
class MCEstimate:
    fs_hat: float
    fp_hat: float
    fs_se: float
    fp_se: float
    samples: int


def mc_estimate(trellis: Trellis, x, y, n, seed) -> MCEstimate:
    """Empirical extrinsic erasure rates of a length-n decode.

    Encodes random data from state zero, erases info/parity i.i.d. with
    probabilities (x, y), decodes, and reports interior erasure rates
    (n/100 positions discarded at each end) with binomial standard errors.
    """
    if n < 10_000:
        raise ValueError("need n >= 1e4 for a stable interior estimate")
    rng = np.random.default_rng(seed)
    info = rng.integers(0, 2, size=n, dtype=np.int8)
    parity, _ = encode(trellis, info.tolist())
    parity = np.array(parity, dtype=np.int8)

    info_obs = info.copy()
    info_obs[rng.random(n) < x] = ERASED
    par_obs = parity.copy()
    par_obs[rng.random(n) < y] = ERASED

    obs = ObservedBlock(
        info=info_obs,
        parity=par_obs,
        start_states=1,
        end_states=(1 << trellis.num_states) - 1,
    )
    ext = decode_block(trellis, obs)
    margin = n // 100
    core = slice(margin, n - margin)
    fs_err = (ext.info[core] == ERASED).astype(float)
    fp_err = (ext.parity[core] == ERASED).astype(float)
    m = fs_err.size
    fs_hat = float(fs_err.mean())
    fp_hat = float(fp_err.mean())
    return MCEstimate(
        fs_hat=fs_hat,
        fp_hat=fp_hat,
        fs_se=_corr_se(fs_err),
        fp_se=_corr_se(fp_err),
        samples=m,
    )


def _corr_se(ind, blocks=200):
    """Batch-means standard error of the mean.

    Successive extrinsic-erasure indicators are correlated through the state
    sets (integrated autocorrelation time ~5-10 steps), so the i.i.d. binomial
    standard error understates the uncertainty; block means over long blocks
    are effectively independent.  The binomial value serves as a floor.
    """
    m = ind.size
    binom = float(np.sqrt(ind.mean() * (1 - ind.mean()) / m))
    k = min(blocks, m)
    bm = ind[: (m // k) * k].reshape(k, -1).mean(axis=1)
    return max(binom, float(bm.std(ddof=1) / np.sqrt(k)))
