import numpy as np
import pytest

from scturbo.bcjr import (
    ERASED,
    InconsistentObservations,
    ObservedBlock,
    aposteriori,
    decode_block,
)
from scturbo.trellis import GEN_2STATE, GEN_4STATE, GEN_8STATE, build_trellis, encode

TRELLISES = {s.octal_str(): build_trellis(s) for s in (GEN_2STATE, GEN_4STATE, GEN_8STATE)}


def enumerate_oracle(trellis, obs):
    """Brute-force per-bit MAP: enumerate every (start state, input sequence),
    keep those consistent with all observations, and mark a bit known iff all
    survivors agree on it."""
    n = len(obs.info)
    surv_info, surv_par = [], []
    for s0 in range(trellis.num_states):
        if not (obs.start_states >> s0) & 1:
            continue
        for bits in range(1 << n):
            info = [(bits >> t) & 1 for t in range(n)]
            parity, end = encode(trellis, info, s0)
            if not (obs.end_states >> end) & 1:
                continue
            ok = True
            for t in range(n):
                if obs.info[t] != ERASED and obs.info[t] != info[t]:
                    ok = False
                    break
                if obs.parity[t] != ERASED and obs.parity[t] != parity[t]:
                    ok = False
                    break
            if ok:
                surv_info.append(info)
                surv_par.append(parity)
    assert surv_info, "oracle found no consistent path"
    surv_info = np.array(surv_info)
    surv_par = np.array(surv_par)

    def decide(cols, exclude_obs):
        out = np.full(n, ERASED, dtype=np.int8)
        for t in range(n):
            vals = set(cols[:, t].tolist())
            if len(vals) == 1:
                out[t] = vals.pop()
        return out

    # Extrinsic: re-run survivors with the position's own observation lifted.
    ext_info = np.full(n, ERASED, dtype=np.int8)
    ext_par = np.full(n, ERASED, dtype=np.int8)
    for t in range(n):
        o2 = ObservedBlock(obs.info.copy(), obs.parity.copy(), obs.start_states, obs.end_states)
        o2.info[t] = ERASED
        vals = _oracle_survivor_values(trellis, o2, t, "info")
        if len(vals) == 1:
            ext_info[t] = vals.pop()
        o3 = ObservedBlock(obs.info.copy(), obs.parity.copy(), obs.start_states, obs.end_states)
        o3.parity[t] = ERASED
        vals = _oracle_survivor_values(trellis, o3, t, "parity")
        if len(vals) == 1:
            ext_par[t] = vals.pop()
    return ext_info, ext_par


def _oracle_survivor_values(trellis, obs, t, which):
    n = len(obs.info)
    vals = set()
    for s0 in range(trellis.num_states):
        if not (obs.start_states >> s0) & 1:
            continue
        for bits in range(1 << n):
            info = [(bits >> k) & 1 for k in range(n)]
            parity, end = encode(trellis, info, s0)
            if not (obs.end_states >> end) & 1:
                continue
            ok = all(
                (obs.info[k] == ERASED or obs.info[k] == info[k])
                and (obs.parity[k] == ERASED or obs.parity[k] == parity[k])
                for k in range(n)
            )
            if ok:
                vals.add(info[t] if which == "info" else parity[t])
    return vals


def random_observation(trellis, n, rng, p_info=0.5, p_par=0.5, known_start=True):
    info = rng.integers(0, 2, n, dtype=np.int8)
    parity, _ = encode(trellis, info.tolist())
    parity = np.array(parity, dtype=np.int8)
    info_obs = info.copy()
    info_obs[rng.random(n) < p_info] = ERASED
    par_obs = parity.copy()
    par_obs[rng.random(n) < p_par] = ERASED
    full = (1 << trellis.num_states) - 1
    return (
        ObservedBlock(info_obs, par_obs, 1 if known_start else full, full),
        info,
        parity,
    )


def test_all_known_returns_input():
    tr = TRELLISES["1,5/7"]
    rng = np.random.default_rng(0)
    info = rng.integers(0, 2, 16, dtype=np.int8)
    parity, _ = encode(tr, info.tolist())
    obs = ObservedBlock(info.copy(), np.array(parity, dtype=np.int8), 1, 0b1111)
    ext = decode_block(tr, obs)
    # start state known + all info known pins the path: every extrinsic known.
    assert np.all(ext.info == info)
    assert np.all(ext.parity == np.array(parity))


def test_all_erased_unconstrained_gives_all_erased():
    tr = TRELLISES["1,5/7"]
    n = 10
    obs = ObservedBlock(
        np.full(n, ERASED, dtype=np.int8), np.full(n, ERASED, dtype=np.int8), 0b1111, 0b1111
    )
    ext = decode_block(tr, obs)
    assert np.all(ext.info == ERASED)
    assert np.all(ext.parity == ERASED)


@pytest.mark.parametrize("name", list(TRELLISES))
def test_matches_exhaustive_oracle_small(name):
    tr = TRELLISES[name]
    rng = np.random.default_rng(42)
    for trial in range(12):
        n = int(rng.integers(4, 9))
        obs, _, _ = random_observation(
            tr, n, rng, p_info=rng.uniform(0.2, 0.9), p_par=rng.uniform(0.2, 0.9),
            known_start=bool(rng.integers(0, 2)),
        )
        ext = decode_block(tr, obs)
        oi, op = enumerate_oracle(tr, obs)
        assert np.array_equal(ext.info, oi), f"{name} trial {trial} info"
        assert np.array_equal(ext.parity, op), f"{name} trial {trial} parity"


def test_oracle_case_n8_spec_example():
    tr = TRELLISES["1,5/7"]
    rng = np.random.default_rng(2024)
    obs, _, _ = random_observation(tr, 8, rng)
    ext = decode_block(tr, obs)
    oi, op = enumerate_oracle(tr, obs)
    assert np.array_equal(ext.info, oi)
    assert np.array_equal(ext.parity, op)


def test_no_false_information():
    tr = TRELLISES["1,15/13"]
    rng = np.random.default_rng(5)
    for _ in range(40):
        obs, info, parity = random_observation(tr, 60, rng, 0.6, 0.6)
        ext = decode_block(tr, obs)
        known = ext.info != ERASED
        assert np.all(ext.info[known] == info[known])
        knownp = ext.parity != ERASED
        assert np.all(ext.parity[knownp] == parity[knownp])


def test_monotone_in_observations():
    # Revealing one extra observation never erases or flips a known extrinsic.
    tr = TRELLISES["1,5/7"]
    rng = np.random.default_rng(9)
    for _ in range(25):
        obs, info, parity = random_observation(tr, 24, rng, 0.7, 0.7)
        base = decode_block(tr, obs)
        hidden = np.flatnonzero(obs.info == ERASED)
        if hidden.size == 0:
            continue
        t = int(rng.choice(hidden))
        obs2 = ObservedBlock(obs.info.copy(), obs.parity.copy(), obs.start_states, obs.end_states)
        obs2.info[t] = info[t]
        ext2 = decode_block(tr, obs2)
        for arr_old, arr_new in ((base.info, ext2.info), (base.parity, ext2.parity)):
            was_known = arr_old != ERASED
            assert np.all(arr_new[was_known] == arr_old[was_known])


def test_idempotent_fixed_point():
    tr = TRELLISES["1,5/7"]
    rng = np.random.default_rng(11)
    for _ in range(10):
        obs, _, _ = random_observation(tr, 40, rng, 0.6, 0.6)
        cur = obs
        for _ in range(6):
            ext = decode_block(tr, cur)
            info2, par2 = aposteriori(cur, ext)
            if np.array_equal(info2, cur.info) and np.array_equal(par2, cur.parity):
                break
            cur = ObservedBlock(info2, par2, cur.start_states, cur.end_states)
        else:
            raise AssertionError("no fixed point within 6 rounds")


def test_aposteriori_merge_rules():
    a = np.array([0, ERASED, ERASED, 1], dtype=np.int8)
    b = np.array([ERASED, 1, ERASED, 1], dtype=np.int8)
    obs = ObservedBlock(a, a.copy(), 1, 1)
    ext = type("E", (), {"info": b, "parity": b.copy()})
    info, parity = aposteriori(obs, ext)
    assert info.tolist() == [0, 1, ERASED, 1]


def test_inconsistent_observations_raise():
    tr = TRELLISES["1,5/7"]
    n = 4
    info = np.zeros(n, dtype=np.int8)
    parity = np.array([1, 0, 0, 0], dtype=np.int8)  # impossible from state 0 with zero input
    obs = ObservedBlock(info, parity, 1, 0b1111)
    with pytest.raises(InconsistentObservations):
        decode_block(tr, obs)
