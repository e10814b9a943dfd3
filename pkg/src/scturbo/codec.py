"""Finite-length coupled encoder, BEC transmission, full-chain iterative
erasure decoding, and the Monte Carlo BER harness.

Per position t, a length-K info block is split into a repeated part (q copies)
and a plain part; the resulting length-K' block is permuted and scattered over
encoder times t..t+m for the upper and (independently) the lower encoder.
Each encoder time applies its own input permutation, encodes from state zero
without termination, and randomly punctures its parity down to round(rho*K')
bits.  Decoding propagates ternary knowledge through per-block exact erasure
BCJR until a fixed point.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bcjr import ERASED, ObservedBlock, decode_block
from .ensemble import rate_uncoupled
from .trellis import GEN_4STATE, GeneratorSpec, Trellis, build_trellis


@dataclass(frozen=True)
class CodeConfig:
    kprime: int
    rep_factor: int
    rep_ratio: float
    coupling_memory: int
    coupling_length: int
    parity_fraction: float = 1.0
    gen_upper: GeneratorSpec = GEN_4STATE
    gen_lower: GeneratorSpec = GEN_4STATE

    def __post_init__(self):
        q, lam, kp = self.rep_factor, self.rep_ratio, self.kprime
        if abs(lam * kp - round(lam * kp)) > 1e-9:
            raise ValueError(f"lambda*K' = {lam * kp} is not an integer")
        if kp % (self.coupling_memory + 1):
            raise ValueError(f"K' = {kp} not divisible by m+1 = {self.coupling_memory + 1}")
        k = kp * (1 - (q - 1) * lam)
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"K = K'(1-(q-1)lambda) = {k} is not an integer")
        if not 0 <= self.parity_fraction <= 1:
            raise ValueError("parity fraction outside [0, 1]")

    @property
    def rep_len(self) -> int:
        return round(self.rep_ratio * self.kprime)

    @property
    def plain_len(self) -> int:
        return self.kprime - self.rep_factor * self.rep_len

    @property
    def k_per_pos(self) -> int:
        return self.rep_len + self.plain_len

    @property
    def seg_len(self) -> int:
        return self.kprime // (self.coupling_memory + 1)

    @property
    def num_times(self) -> int:
        return self.coupling_length + self.coupling_memory

    @property
    def kept_parity(self) -> int:
        return round(self.parity_fraction * self.kprime)

    @property
    def info_bits_total(self) -> int:
        return self.k_per_pos * self.coupling_length

    @property
    def transmitted_bits(self) -> int:
        return self.info_bits_total + 2 * self.num_times * self.kept_parity


@dataclass
class Schedule:
    """Bijection from (encoder, time, trellis slot) to info bits.

    ``src[e, tau, s]`` is the flat info-bit index feeding that slot, or -1
    for the known-zero boundary filler.  ``slots_of_bit`` lists each bit's
    slots in CSR form (q slots per repeated bit per encoder side, 1 otherwise).
    """

    src: np.ndarray
    bit_ptr: np.ndarray
    bit_slots: np.ndarray

    def copies_per_bit(self):
        return np.diff(self.bit_ptr)


def build_schedule(config: CodeConfig, rng: np.random.Generator) -> Schedule:
    q, kp = config.rep_factor, config.kprime
    m, L = config.coupling_memory, config.coupling_length
    K, seg = config.k_per_pos, config.seg_len
    T = config.num_times

    # chunks[e][tau] collects (source position, j) segments, oldest first.
    chunks = [[[None] * (m + 1) for _ in range(T)] for _ in range(2)]
    for t in range(L):
        base = t * K
        rep_local = rng.choice(K, size=config.rep_len, replace=False)
        mask = np.zeros(K, dtype=bool)
        mask[rep_local] = True
        plain_local = np.flatnonzero(~mask)
        w = np.concatenate([np.tile(base + rep_local, q), base + plain_local])
        for e in range(2):
            w_perm = w[rng.permutation(kp)]
            for j in range(m + 1):
                # segment j of position t's block feeds encoder time t+j;
                # at time tau it sits at depth tau - t = j from the oldest end.
                chunks[e][t + j][m - j] = w_perm[j * seg : (j + 1) * seg]

    filler = np.full(seg, -1, dtype=np.int64)
    src = np.empty((2, T, kp), dtype=np.int64)
    for e in range(2):
        for tau in range(T):
            parts = [c if c is not None else filler for c in chunks[e][tau]]
            block = np.concatenate(parts)
            src[e, tau] = block[rng.permutation(kp)]

    flat = src.reshape(-1)
    real = flat >= 0
    order = np.argsort(flat[real], kind="stable")
    bit_slots = np.flatnonzero(real)[order].astype(np.int64)
    counts = np.bincount(flat[real], minlength=K * L)
    bit_ptr = np.zeros(K * L + 1, dtype=np.int64)
    np.cumsum(counts, out=bit_ptr[1:])
    return Schedule(src=src, bit_ptr=bit_ptr, bit_slots=bit_slots)


@dataclass
class CodedFrame:
    config: CodeConfig
    schedule: Schedule
    info: np.ndarray              # (K*L,) uint8
    parity: np.ndarray            # (2, T, K') uint8
    keep: np.ndarray              # (2, T, K') bool


def _encoder_tables(spec: GeneratorSpec, _cache={}):
    tab = _cache.get(spec)
    if tab is None:
        tab = build_trellis(spec)
        _cache[spec] = tab
    return tab


def encode_chain(config: CodeConfig, info: np.ndarray, rng: np.random.Generator) -> CodedFrame:
    if info.shape != (config.info_bits_total,):
        raise ValueError(f"need {config.info_bits_total} info bits, got {info.shape}")
    schedule = build_schedule(config, rng)
    trellises = (_encoder_tables(config.gen_upper), _encoder_tables(config.gen_lower))
    T, kp = config.num_times, config.kprime
    parity = np.empty((2, T, kp), dtype=np.uint8)
    ext_info = np.concatenate([info.astype(np.int64), [0]])   # src -1 -> 0
    for e in range(2):
        nxt, par = trellises[e].next_state, trellises[e].parity
        for tau in range(T):
            bits = ext_info[schedule.src[e, tau]]
            out = np.empty(kp, dtype=np.uint8)
            s = 0
            blist = bits.tolist()
            n0, n1 = nxt
            p0, p1 = par
            for i, u in enumerate(blist):
                if u:
                    out[i] = p1[s]
                    s = n1[s]
                else:
                    out[i] = p0[s]
                    s = n0[s]
            parity[e, tau] = out
    keep = np.zeros((2, T, kp), dtype=bool)
    kept = config.kept_parity
    for e in range(2):
        for tau in range(T):
            keep[e, tau, rng.choice(kp, size=kept, replace=False)] = True
    return CodedFrame(config=config, schedule=schedule, info=info.astype(np.uint8),
                      parity=parity, keep=keep)


@dataclass
class ObservedFrame:
    info: np.ndarray              # (K*L,) int8 ternary
    parity: np.ndarray            # (2, T, K') int8 ternary; punctured = ERASED


def transmit(frame: CodedFrame, eps: float, rng: np.random.Generator) -> ObservedFrame:
    if not 0 <= eps <= 1:
        raise ValueError("erasure probability outside [0, 1]")
    info_obs = frame.info.astype(np.int8)
    info_obs[rng.random(info_obs.shape) < eps] = ERASED
    par_obs = frame.parity.astype(np.int8)
    par_obs[rng.random(par_obs.shape) < eps] = ERASED
    par_obs[~frame.keep] = ERASED
    return ObservedFrame(info=info_obs, parity=par_obs)


@dataclass
class DecodeResult:
    info: np.ndarray              # ternary decisions per info bit
    rounds: int
    residual_erasures: int
    trace: list = field(default_factory=list)


def decode_full(frame: CodedFrame, observed: ObservedFrame, max_rounds=200,
                mode="serial") -> DecodeResult:
    """Iterative full-chain decoding until no sweep recovers a new bit.

    ``serial`` collapses extrinsics into global bit knowledge and sweeps
    times forward then backward (fast fixed point).  ``parallel`` keeps
    per-slot extrinsics and updates every block from the previous round's
    messages, mirroring the parallel DE schedule; both modes reach the same
    fixed point on the BEC.
    """
    if mode == "serial":
        return _decode_serial(frame, observed, max_rounds)
    if mode == "parallel":
        return _decode_parallel(frame, observed, max_rounds)
    raise ValueError(f"unknown mode {mode!r}")


def _block_obs(slot_know, par_know, n_states):
    return ObservedBlock(
        info=slot_know, parity=par_know, start_states=1,
        end_states=(1 << n_states) - 1,
    )


def _decode_serial(frame, observed, max_rounds):
    config = frame.config
    sched = frame.schedule
    trellises = (_encoder_tables(config.gen_upper), _encoder_tables(config.gen_lower))
    T = config.num_times
    know = np.concatenate([observed.info.astype(np.int8), [np.int8(0)]])  # slot -1 = known 0
    par_know = observed.parity.copy()
    src = sched.src

    # Input-knowledge count at each block's last decode.  A block must be
    # re-decoded whenever its inputs grew since then - including growth from
    # its own previous outputs: a derived info or parity value at slot s
    # prunes paths that the extrinsic decisions at other slots (which exclude
    # only their own observation) still admitted.
    last_used = np.full((2, T), -1, dtype=np.int64)
    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        changed = False
        order = list(range(T)) + list(range(T - 1, -1, -1))
        for tau in order:
            for e in range(2):
                idx = src[e, tau]
                slot_know = know[idx]
                pk = par_know[e, tau]
                version = int((slot_know != ERASED).sum()) + int((pk != ERASED).sum())
                if last_used[e, tau] == version:
                    continue   # inputs unchanged since this block last decoded
                ext = decode_block(trellises[e], _block_obs(slot_know, pk,
                                                            trellises[e].num_states))
                new = (ext.info != ERASED) & (slot_know == ERASED) & (idx >= 0)
                if np.any(new):
                    know[idx[new]] = ext.info[new]
                    changed = True
                newp = (ext.parity != ERASED) & (pk == ERASED)
                if np.any(newp):
                    pk[newp] = ext.parity[newp]
                    changed = True
                last_used[e, tau] = version
        if not changed:
            break
        if np.all(know[:-1] != ERASED):
            break
    info = know[:-1]
    return DecodeResult(info=info, rounds=rounds,
                        residual_erasures=int((info == ERASED).sum()))


def _decode_parallel(frame, observed, max_rounds):
    config = frame.config
    sched = frame.schedule
    trellises = (_encoder_tables(config.gen_upper), _encoder_tables(config.gen_lower))
    T, kp = config.num_times, config.kprime
    nbits = config.info_bits_total
    src = sched.src
    flat_src = src.reshape(-1)
    real = flat_src >= 0

    bit_value = np.concatenate([observed.info.astype(np.int8), [np.int8(0)]])
    ext = np.full(2 * T * kp, ERASED, dtype=np.int8)
    trace = []
    for rounds in range(1, max_rounds + 1):
        known_ext = (ext != ERASED) & real
        cnt = np.bincount(flat_src[known_ext], minlength=nbits + 1)
        vals = bit_value.copy()
        upd = np.flatnonzero(known_ext)
        vals[flat_src[upd]] = ext[upd]            # consistent on a BEC
        # slot input: channel obs, or >=1 sibling extrinsic besides its own
        obs_known = np.concatenate([observed.info != ERASED, [True]])
        own = known_ext.astype(np.int64)
        in_known = obs_known[flat_src] | ((cnt[flat_src] - own) >= 1)
        slot_in = np.where(in_known, vals[flat_src], ERASED).astype(np.int8)
        slot_in[~real & (flat_src == -1)] = 0     # boundary zeros
        slot_in = slot_in.reshape(2, T, kp)

        new_ext = np.empty_like(ext).reshape(2, T, kp)
        for e in range(2):
            for tau in range(T):
                out = decode_block(trellises[e],
                                   _block_obs(slot_in[e, tau], observed.parity[e, tau],
                                              trellises[e].num_states))
                new_ext[e, tau] = out.info
        new_ext = new_ext.reshape(-1)
        trace.append(_ext_stats(new_ext, real, src.shape))
        if np.array_equal(new_ext, ext):
            break
        ext = new_ext

    known_ext = (ext != ERASED) & real
    vals = bit_value.copy()
    upd = np.flatnonzero(known_ext)
    vals[flat_src[upd]] = ext[upd]
    decided = np.where(
        (np.concatenate([observed.info != ERASED, [True]])
         | (np.bincount(flat_src[known_ext], minlength=nbits + 1) >= 1)),
        vals, ERASED,
    )[:nbits].astype(np.int8)
    return DecodeResult(info=decided, rounds=rounds,
                        residual_erasures=int((decided == ERASED).sum()), trace=trace)


def _ext_stats(ext, real, shape):
    """Per-side, per-time extrinsic erasure fraction over real slots."""
    e3 = (ext == ERASED).reshape(shape)
    r3 = real.reshape(shape)
    with np.errstate(invalid="ignore"):
        frac = (e3 & r3).sum(axis=2) / r3.sum(axis=2)
    return frac, r3.sum(axis=2)


# -- Monte Carlo BER harness ---------------------------------------------------


@dataclass
class BerPoint:
    eps: float
    ber: float
    frames: int
    bit_erasures: int
    total_bits: int
    ci_low: float
    ci_high: float


def _wilson(k, n, z=1.96):
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z**2 / n
    center = (p + z**2 / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / den
    return (max(0.0, center - half), min(1.0, center + half))


def simulate_frame(config: CodeConfig, eps: float, seed, max_rounds=200):
    """One independent frame: returns (erased info bits, total info bits)."""
    rng = np.random.default_rng(seed)
    info = rng.integers(0, 2, size=config.info_bits_total, dtype=np.uint8)
    frame = encode_chain(config, info, rng)
    obs = transmit(frame, eps, rng)
    res = decode_full(frame, obs, max_rounds=max_rounds)
    known = res.info != ERASED
    if np.any(res.info[known] != info[known]):
        raise AssertionError("decoder produced a false bit value")
    return res.residual_erasures, config.info_bits_total


def _frame_batch(args):
    config, eps, seeds, max_rounds = args
    return [simulate_frame(config, eps, s, max_rounds) for s in seeds]


def ber_run(config: CodeConfig, eps_list, min_events=50, max_frames=100, seed=0,
            workers=1, max_rounds=200) -> list[BerPoint]:
    """Frame-parallel BER sweep.

    Per-frame seeds derive from (master seed, eps index, frame index), so
    results are independent of scheduling and of the worker count.
    """
    points = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for ei, eps in enumerate(eps_list):
            erased = total = frames = 0
            fi = 0
            while frames < max_frames and erased < min_events:
                batch = min(max(2 * (workers or 1), 4), max_frames - frames)
                seq = [np.random.SeedSequence(seed, spawn_key=(ei, f)) for f in range(fi, fi + batch)]
                fi += batch
                if pool is not None:
                    chunks = np.array_split(np.arange(len(seq)), workers)
                    futs = [
                        pool.submit(_frame_batch,
                                    (config, eps, [seq[i] for i in c], max_rounds))
                        for c in chunks if c.size
                    ]
                    results = [r for f in futs for r in f.result()]
                else:
                    results = _frame_batch((config, eps, seq, max_rounds))
                for e_bits, t_bits in results:
                    erased += e_bits
                    total += t_bits
                    frames += 1
            ber = erased / total if total else 0.0
            lo, hi = _wilson(erased, total)
            points.append(BerPoint(eps=float(eps), ber=ber, frames=frames,
                                   bit_erasures=erased, total_bits=total,
                                   ci_low=lo, ci_high=hi))
    finally:
        if pool is not None:
            pool.shutdown()
    return points


def rate_actual(config: CodeConfig) -> float:
    """Realized rate of one frame; approaches the ensemble rate as L grows."""
    return config.info_bits_total / config.transmitted_bits


def rate_nominal(config: CodeConfig) -> float:
    return rate_uncoupled(config.rep_factor, config.rep_ratio, config.parity_fraction)
