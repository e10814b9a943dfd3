import numpy as np
import pytest

from scturbo.bcjr import ERASED, ObservedBlock, forward_masks
from scturbo.transfer import (
    TableBank,
    TransferTable,
    eval_fp,
    eval_fs,
    forward_chain,
    mc_estimate,
    simpson_panels,
    transfer_for,
)
from scturbo.trellis import GEN_2STATE, GEN_4STATE, GEN_8STATE, build_trellis, encode

T2 = build_trellis(GEN_2STATE)
T4 = build_trellis(GEN_4STATE)
T8 = build_trellis(GEN_8STATE)
ALL = {"1,1/3": T2, "1,5/7": T4, "1,15/13": T8}


@pytest.mark.parametrize("name", list(ALL))
def test_corner_values(name):
    tr = ALL[name]
    assert eval_fs(tr, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert eval_fp(tr, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    for y in (0.0, 0.3, 0.9):    # y < 1: parity observations pin the state
        assert eval_fs(tr, 0.0, y) == pytest.approx(0.0, abs=1e-12)
        assert eval_fp(tr, 0.0, y) == pytest.approx(0.0, abs=1e-12)


def test_no_parity_observations_leave_info_unknown():
    # With y = 1 the chain never prunes: every info extrinsic stays erased.
    for tr in (T2, T4):
        assert eval_fs(tr, 0.0, 1.0) == pytest.approx(1.0)
        assert eval_fs(tr, 0.5, 1.0) == pytest.approx(1.0)


@pytest.mark.parametrize("name", list(ALL))
def test_monotone_in_each_argument(name):
    tr = ALL[name]
    grid = np.round(np.arange(0.0, 1.01, 0.1), 10)
    tf = transfer_for(tr)
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    fs, fp = tf.both_batch(X.ravel(), Y.ravel())
    fs = fs.reshape(X.shape)
    fp = fp.reshape(X.shape)
    eps = 1e-10
    assert np.all(np.diff(fs, axis=0) >= -eps)
    assert np.all(np.diff(fs, axis=1) >= -eps)
    assert np.all(np.diff(fp, axis=0) >= -eps)
    assert np.all(np.diff(fp, axis=1) >= -eps)
    assert np.all((fs >= -eps) & (fs <= 1 + eps))
    assert np.all((fp >= -eps) & (fp <= 1 + eps))


def test_continuity_on_fine_grid():
    tf = transfer_for(T4)
    xs = np.linspace(0.3, 0.7, 81)
    fs = tf.fs_batch(xs, np.full_like(xs, 0.5))
    assert np.abs(np.diff(fs)).max() < 0.02   # Lipschitz-style sanity at dx=5e-3


def test_forward_chain_absorbs_at_all_states():
    chain = forward_chain(T4, 1.0, 1.0)
    assert chain.limiting[0] == pytest.approx(1.0)
    assert chain.subsets[0] == 0b1111


def test_forward_chain_concentrates_when_info_known():
    chain = forward_chain(T4, 0.0, 0.3)
    idx = chain.subsets.index(1)   # the {state 0} subset
    assert chain.limiting[idx] == pytest.approx(1.0, abs=1e-9)


def test_forward_chain_reachable_subsets_bounded():
    chain = forward_chain(T4, 0.5, 0.5)
    assert len(chain.subsets) <= 15
    assert all(m & 1 for m in chain.subsets)   # every subset holds the zero state
    P = chain.transition_matrix()
    assert np.allclose(P.sum(axis=1), 1.0)
    assert chain.limiting.sum() == pytest.approx(1.0)
    assert chain.residual < 1e-10


def test_power_iteration_agrees_with_doubling():
    for x, y in [(0.5, 0.5), (0.2, 0.8), (0.9, 0.1), (0.7, 0.3)]:
        a = forward_chain(T4, x, y, method="power")
        b = forward_chain(T4, x, y, method="doubling")
        assert np.abs(a.limiting - b.limiting).max() < 1e-9


def test_chain_matches_simulated_forward_set_frequencies():
    # Empirical frequencies of forward subsets in a long decode, mapped into
    # the all-zero-codeword frame by XOR-shifting with the true state path.
    tr = T4
    n = 200_000
    x, y = 0.5, 0.5
    rng = np.random.default_rng(123)
    info = rng.integers(0, 2, n, dtype=np.int8)
    parity, _ = encode(tr, info.tolist())
    parity = np.array(parity, dtype=np.int8)
    info_obs = info.copy()
    info_obs[rng.random(n) < x] = ERASED
    par_obs = parity.copy()
    par_obs[rng.random(n) < y] = ERASED
    obs = ObservedBlock(info_obs, par_obs, 1, 0b1111)
    masks = forward_masks(tr, obs)

    # True state path for the shift.
    states = np.zeros(n + 1, dtype=np.int64)
    s = 0
    for t in range(n):
        states[t] = s
        s = tr.next_state[info[t]][s]
    states[n] = s

    def shift(mask, sigma):
        out = 0
        for st in range(tr.num_states):
            if (mask >> st) & 1:
                out |= 1 << (st ^ sigma)
        return out

    chain = forward_chain(tr, x, y)
    index = {m: i for i, m in enumerate(chain.subsets)}
    counts = np.zeros(len(chain.subsets))
    burn = 1000
    for t in range(burn, n):
        counts[index[shift(masks[t], int(states[t]))]] += 1
    freq = counts / counts.sum()
    se = np.sqrt(chain.limiting * (1 - chain.limiting) / counts.sum())
    assert np.all(np.abs(freq - chain.limiting) <= 5 * se + 1e-4)


@pytest.mark.parametrize("name", list(ALL))
def test_exact_vs_monte_carlo_smoke(name):
    tr = ALL[name]
    tf = transfer_for(tr)
    for x, y, seed in [(0.5, 0.5, 1), (0.3, 0.8, 2), (0.8, 0.3, 3)]:
        est = mc_estimate(tr, x, y, 100_000, seed)
        fs, fp = tf.both(x, y)
        assert abs(est.fs_hat - fs) <= 3 * est.fs_se + 1e-4, (name, x, y)
        assert abs(est.fp_hat - fp) <= 3 * est.fp_se + 1e-4, (name, x, y)


def test_mc_trivial_points():
    est = mc_estimate(T4, 0.0, 0.5, 20_000, 0)
    assert est.fs_hat == 0.0
    est = mc_estimate(T4, 1.0, 1.0, 20_000, 0)
    assert est.fs_hat == 1.0 and est.fp_hat == 1.0


def test_mc_seed_consistency():
    a = mc_estimate(T4, 0.5, 0.5, 50_000, 10)
    b = mc_estimate(T4, 0.5, 0.5, 50_000, 11)
    tol = 3 * (a.fs_se + b.fs_se)
    assert abs(a.fs_hat - b.fs_hat) <= tol
    assert mc_estimate(T4, 0.5, 0.5, 50_000, 10).fs_hat == a.fs_hat   # reproducible


def test_mc_requires_long_blocks():
    with pytest.raises(ValueError):
        mc_estimate(T4, 0.5, 0.5, 100, 0)


def test_cache_hit_returns_same_object_values():
    tf = transfer_for(T4)
    v1 = tf.fs(0.123456, 0.654321)
    v2 = tf.fs(0.123456, 0.654321)
    assert v1 == v2


def test_table_bank_matches_exact():
    tf = transfer_for(T4)
    ys = np.array([0.2, 0.55, 0.9, 0.999])
    bank = TableBank(tf, ys, kind="fs")
    assert not bank.exact_fallback
    xs = np.linspace(0, 1, 257)
    approx = bank.eval(np.broadcast_to(xs, (4, 257)))
    exact = tf.fs_batch(np.tile(xs, 4), np.repeat(ys, 257)).reshape(4, 257)
    assert np.abs(approx - exact).max() < 1e-9


def test_transfer_table_integral_matches_simpson():
    tf = transfer_for(T4)
    table = TransferTable(tf, 0.5, kind="fs")
    for w in (0.25, 0.6, 1.0):
        direct = simpson_panels(lambda z: table.eval(z), 0.0, w, 2000)
        assert table.integral(np.array([w]))[0] == pytest.approx(direct, abs=1e-8)


def test_eight_state_bank_also_certifies():
    tf = transfer_for(T8)
    bank = TableBank(tf, np.array([0.5]), kind="fp")
    assert not bank.exact_fallback
    xs = np.linspace(0, 1, 64)
    approx = bank.eval(xs[None])
    exact = tf.fp_batch(xs, np.full_like(xs, 0.5))
    assert np.abs(approx[0] - exact).max() < 1e-9
