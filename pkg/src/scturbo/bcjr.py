"""Exact per-bit MAP decoding of a convolutional block over the BEC.

Observations are ternary (0 / 1 / ERASED).  State knowledge propagates as
bitmask subsets of trellis states; because the channel never flips bits this
set propagation is exactly the per-bit MAP decision rule.  All passes are
linear in the block length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trellis import Trellis

ERASED = 2

_TABLE_CACHE: dict[int, "_MaskTables"] = {}


class InconsistentObservations(Exception):
    """A forward/backward state set became empty: the observations cannot all
    come from one codeword (impossible on a true erasure channel)."""


@dataclass
class ObservedBlock:
    """Channel view of one component block plus boundary state knowledge."""

    info: np.ndarray        # int8, values in {0, 1, ERASED}
    parity: np.ndarray      # int8, same length
    start_states: int       # bitmask over trellis states, nonzero
    end_states: int         # bitmask, nonzero

    def __post_init__(self):
        if len(self.info) != len(self.parity):
            raise ValueError("info and parity must have equal length")
        if self.start_states == 0 or self.end_states == 0:
            raise ValueError("state knowledge masks must be nonempty")


@dataclass
class ExtrinsicBlock:
    info: np.ndarray
    parity: np.ndarray


class _MaskTables:
    """Per-trellis lookup tables driving the mask recursions.

    combo = info_obs * 3 + parity_obs indexes the 9 observation cases.
    ``fwd[combo][mask]`` is the reachable-set image of ``mask`` one step
    forward; ``bwd`` the mirror image backward.  ``tgt[u][pc][mask]`` is the
    set of next states reachable from ``mask`` via input-u branches whose
    parity label is consistent with parity observation pc.
    """

    def __init__(self, trellis: Trellis):
        S = trellis.num_states
        if S > 16:
            raise NotImplementedError("mask tables cover up to 16 trellis states")
        n_masks = 1 << S
        nxt = trellis.next_state
        par = trellis.parity

        # Single-state images per observation combo.
        step = [[0] * S for _ in range(9)]
        back = [[0] * S for _ in range(9)]
        for s in range(S):
            for iv in (0, 1, ERASED):
                for pv in (0, 1, ERASED):
                    combo = iv * 3 + pv
                    m = 0
                    for u in (0, 1):
                        if iv != ERASED and u != iv:
                            continue
                        if pv != ERASED and par[u][s] != pv:
                            continue
                        m |= 1 << nxt[u][s]
                    step[combo][s] = m
        for sp in range(S):
            for iv in (0, 1, ERASED):
                for pv in (0, 1, ERASED):
                    combo = iv * 3 + pv
                    m = 0
                    for u in (0, 1):
                        if iv != ERASED and u != iv:
                            continue
                        s = trellis.prev_state[u][sp]
                        if pv != ERASED and par[u][s] != pv:
                            continue
                        m |= 1 << s
                    back[combo][sp] = m

        self.fwd = [self._lift(step[c], S, n_masks) for c in range(9)]
        self.bwd = [self._lift(back[c], S, n_masks) for c in range(9)]

        # Branch-target tables for the extrinsic decisions.
        tgt = np.zeros((2, 3, n_masks), dtype=np.int64)
        ptgt = np.zeros((2, 3, n_masks), dtype=np.int64)
        for u in (0, 1):
            for pc_i, pc in enumerate((0, 1, ERASED)):
                single = [0] * S
                for s in range(S):
                    if pc == ERASED or par[u][s] == pc:
                        single[s] = 1 << nxt[u][s]
                tgt[u, pc_i] = self._lift(single, S, n_masks)
        for pl in (0, 1):
            for ic_i, ic in enumerate((0, 1, ERASED)):
                single = [0] * S
                for s in range(S):
                    m = 0
                    for u in (0, 1):
                        if ic != ERASED and u != ic:
                            continue
                        if par[u][s] == pl:
                            m |= 1 << nxt[u][s]
                    single[s] = m
                ptgt[pl, ic_i] = self._lift(single, S, n_masks)
        self.tgt = tgt
        self.ptgt = ptgt

    @staticmethod
    def _lift(single, S, n_masks):
        """Lift a per-state image table to all 2^S masks by OR-combining."""
        out = np.zeros(n_masks, dtype=np.int64)
        for mask in range(1, n_masks):
            low = mask & -mask
            out[mask] = out[mask ^ low] | single[low.bit_length() - 1]
        return out


def _tables(trellis: Trellis) -> _MaskTables:
    key = id(trellis)
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        tab = _MaskTables(trellis)
        _TABLE_CACHE[key] = tab
    return tab


def forward_masks(trellis: Trellis, obs: ObservedBlock) -> list[int]:
    """F_t for t = 0..n: states reachable using observations before time t."""
    tab = _tables(trellis)
    combos = (obs.info.astype(np.int64) * 3 + obs.parity).tolist()
    fwd_tabs = tab.fwd
    masks = [0] * (len(combos) + 1)
    m = obs.start_states
    masks[0] = m
    for t, c in enumerate(combos):
        m = int(fwd_tabs[c][m])
        if m == 0:
            raise InconsistentObservations(f"empty forward set after time {t}")
        masks[t + 1] = m
    return masks


def backward_masks(trellis: Trellis, obs: ObservedBlock) -> list[int]:
    """B_t for t = 0..n: states admitting a consistent suffix from time t on."""
    tab = _tables(trellis)
    combos = (obs.info.astype(np.int64) * 3 + obs.parity).tolist()
    bwd_tabs = tab.bwd
    n = len(combos)
    masks = [0] * (n + 1)
    m = obs.end_states
    masks[n] = m
    for t in range(n - 1, -1, -1):
        m = int(bwd_tabs[combos[t]][m])
        if m == 0:
            raise InconsistentObservations(f"empty backward set at time {t}")
        masks[t] = m
    return masks


def decode_block(trellis: Trellis, obs: ObservedBlock) -> ExtrinsicBlock:
    """Extrinsic ternary decisions for every info and parity position.

    The info decision at t uses all observations except the info observation
    at t; the parity decision excludes its own parity observation.  Equals
    brute-force per-bit MAP on the BEC.
    """
    tab = _tables(trellis)
    n = len(obs.info)
    F = np.array(forward_masks(trellis, obs)[:-1], dtype=np.int64)
    B = np.array(backward_masks(trellis, obs)[1:], dtype=np.int64)

    pc = obs.parity.astype(np.int64)   # parity obs index: 0,1,2(=ERASED)
    ic = obs.info.astype(np.int64)

    s0 = (tab.tgt[0][pc, F] & B) != 0   # input-0 branch survives
    s1 = (tab.tgt[1][pc, F] & B) != 0
    if not np.all(s0 | s1):
        raise InconsistentObservations("no surviving branch at some position")
    ext_info = np.full(n, ERASED, dtype=np.int8)
    ext_info[s0 & ~s1] = 0
    ext_info[s1 & ~s0] = 1

    p0 = (tab.ptgt[0][ic, F] & B) != 0  # parity-0 branch survives
    p1 = (tab.ptgt[1][ic, F] & B) != 0
    if not np.all(p0 | p1):
        raise InconsistentObservations("no surviving branch at some position")
    ext_par = np.full(n, ERASED, dtype=np.int8)
    ext_par[p0 & ~p1] = 0
    ext_par[p1 & ~p0] = 1

    return ExtrinsicBlock(info=ext_info, parity=ext_par)


def aposteriori(obs: ObservedBlock, ext: ExtrinsicBlock):
    """Combine observations with extrinsics into final ternary decisions."""
    info = _merge(obs.info, ext.info)
    parity = _merge(obs.parity, ext.parity)
    return info, parity


def _merge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    conflict = (a != ERASED) & (b != ERASED) & (a != b)
    if np.any(conflict):
        raise ValueError("conflicting known values (caller bug: not a BEC run)")
    out = a.copy()
    take = (a == ERASED) & (b != ERASED)
    out[take] = b[take]
    return out
