import numpy as np
import pytest
from scipy import stats

import chains
from rwre import branching, envmodel
from rwre._rng import derive_rng
from rwre.errors import ModelError, NumericalError


def test_offspring_mean_matches_geometric():
    rng = derive_rng(1, 0)
    total = branching._offspring_sum(rng, 1_000_000, 1 / 3)
    mean = total / 1_000_000
    se = np.sqrt(6.0) / 1000  # Var of geometric(1/3) is 6
    assert abs(mean - 2.0) < 4 * se


def test_offspring_negative_binomial_branch_matches():
    rng = derive_rng(2, 0)
    count = 12_000  # above the individual-draw cutoff
    om = 0.4
    draws = np.array([branching._offspring_sum(rng, count, om) for _ in range(300)])
    mean_expected = count * (1 - om) / om
    se = draws.std(ddof=1) / np.sqrt(len(draws))
    assert abs(draws.mean() - mean_expected) < 4 * se


def test_quiet_environment_stays_small():
    spec = envmodel.EnvironmentSpec(states=("q",), H=np.array([[1.0]]),
                                    omega=np.array([0.99]), epsilon=0.005)
    path = branching.sample_branching(spec, 20_000, derive_rng(3, 0))
    mean_off = (1 - 0.99) / 0.99
    assert path.populations.max() < 20
    assert abs(path.populations.mean() - mean_off / (1 - mean_off)) < 0.01


def test_extinction_times_definitions():
    assert list(branching.extinction_times(np.zeros(5, dtype=int))) == [0, 1, 2, 3, 4]
    assert list(branching.extinction_times(np.array([0, 2, 1, 0, 3, 0]))) == [0, 3, 5]


def test_chain_regenerations_full_coin_single_state():
    states = np.zeros(10, dtype=int)
    N = branching.chain_regenerations(states, 0, 1.0, derive_rng(4, 0))
    assert list(N) == list(range(10))


def test_chain_regeneration_gap_renewal_oracle():
    spec = chains.chain_mk_k2()
    rng = derive_rng(5, 0)
    states = branching.sample_chain_path(spec, 400_000, rng)
    N = branching.chain_regenerations(states, 1, 0.8, rng)
    gaps = np.diff(N)
    pi = envmodel.stationary_distribution(spec.H)
    expected = 1.0 / (pi[1] * 0.8)
    se = gaps.std(ddof=1) / np.sqrt(gaps.size)
    assert abs(gaps.mean() - expected) < 4 * se
    assert np.all(states[N[1:]] == 1)


def test_common_regenerations_frozen_examples():
    nu = np.array([0, 2, 5, 9])
    N = np.array([0, 3, 5, 8, 9])
    assert list(branching.common_regenerations(nu, N)) == [0, 5, 9]
    assert list(branching.common_regenerations(nu, nu)) == list(nu)


def test_block_products_frozen_examples():
    # single-length block at the rough state of K1: M = rho = 2, Q = 1
    logr = np.log(np.array([2.0, 2.0]))
    bs = branching.block_products(logr, np.array([0, 1]))
    assert bs.products[0] == pytest.approx(2.0, rel=1e-14)
    assert bs.prefix_sums[0] == pytest.approx(1.0, rel=1e-14)
    # block (calm, rough) with odds (1/2, 2): M = 1, Q = 1 + 1/2
    logr = np.log(np.array([0.5, 2.0]))
    bs = branching.block_products(logr, np.array([0, 2]))
    assert bs.products[0] == pytest.approx(1.0, rel=1e-14)
    assert bs.prefix_sums[0] == pytest.approx(1.5, rel=1e-14)


def test_block_products_brute_force_oracle():
    rng = np.random.default_rng(6)
    logr = np.log(rng.uniform(0.3, 3.0, 60))
    bounds = np.array([0, 7, 8, 20, 41, 60])
    bs = branching.block_products(logr, bounds)
    rho = np.exp(logr)
    for j in range(len(bounds) - 1):
        a, b = bounds[j], bounds[j + 1]
        assert bs.products[j] == pytest.approx(np.prod(rho[a:b]), rel=1e-12)
        q = 1.0 + sum(np.prod(rho[a:a + i + 1]) for i in range(b - a - 1))
        assert bs.prefix_sums[j] == pytest.approx(q, rel=1e-12)


def test_block_moment_identity_k1():
    # mean of the block odds product at the tail index is one
    spec = chains.chain_mk_k1()
    rng = derive_rng(7, 0)
    states = branching.sample_chain_path(spec, 300_000, rng)
    N = branching.chain_regenerations(states, 1, 0.5, rng)
    bs = branching.block_products(np.log(spec.rho)[states], N)
    m = bs.products  # kappa = 1
    se = m.std(ddof=1) / np.sqrt(m.size)
    assert abs(m.mean() - 1.0) < 4 * se


def test_split_construction_matches_two_step_kernel():
    spec = chains.chain_mk_k1()
    split = envmodel.minorization_split(spec, m=2)
    rng = derive_rng(8, 0)
    states, N = branching.split_chain_with_regenerations(spec, split, 150_000, rng)
    assert np.all(N % 2 == 0)
    # skeleton transition frequencies against H^2
    H2 = np.linalg.matrix_power(spec.H, 2)
    skel = states[::2]
    for x in (0, 1):
        idx = np.flatnonzero(skel[:-1] == x)
        freq = np.mean(skel[idx + 1] == 0)
        se = np.sqrt(H2[x, 0] * (1 - H2[x, 0]) / idx.size)
        assert abs(freq - H2[x, 0]) < 4 * se
    # regenerated states follow the split measure
    hits = states[N[1:]]
    freq = np.mean(hits == 0)
    se = np.sqrt(split.psi[0] * (1 - split.psi[0]) / hits.size)
    assert abs(freq - split.psi[0]) < 4 * se


def test_split_bridge_conditional_law():
    spec = chains.chain_mk_k1()
    split = envmodel.minorization_split(spec, m=2)
    rng = derive_rng(9, 0)
    states, _ = branching.split_chain_with_regenerations(spec, split, 150_000, rng)
    x0, x2 = 0, 1
    idx = np.flatnonzero((states[:-2:2] == x0) & (states[2::2] == x2)) * 2
    mids = states[idx + 1]
    H = spec.H
    target = H[x0, 0] * H[0, x2] / (H[x0, 0] * H[0, x2] + H[x0, 1] * H[1, x2])
    freq = np.mean(mids == 0)
    se = np.sqrt(target * (1 - target) / mids.size)
    assert abs(freq - target) < 4 * se


def test_regen_trace_block_partition():
    spec = chains.chain_mk_k2()
    rng = derive_rng(10, 0)
    path = branching.sample_branching(spec, 50_000, rng)
    tr = branching.regen_trace(path, regen_state=0, coin=0.5, rng=rng)
    assert np.all(path.populations[tr.extinctions] == 0)
    assert set(tr.joint[1:]).issubset(set(tr.extinctions[1:]) & set(tr.chain_regens[1:]))
    last = tr.joint[-1]
    assert tr.joint_blocks.sum() == path.populations[:last].sum()


def test_one_dependence_and_stationarity_proxies():
    spec = chains.chain_mk_k2()
    rng = derive_rng(11, 0)
    path = branching.sample_branching(spec, 400_000, rng)
    tr = branching.regen_trace(path, regen_state=0, coin=0.5, rng=rng)
    W = tr.joint_blocks[1:].astype(float)
    B = len(W)
    assert B > 10_000
    Wc = W - W.mean()
    denom = float((Wc**2).sum())
    for lag in (1, 2):
        ac = float((Wc[:-lag] * Wc[lag:]).sum() / denom)
        assert abs(ac) < 4 / np.sqrt(B)
    half = B // 2
    m1, m2 = W[:half].mean(), W[half:].mean()
    pooled_se = np.sqrt(W[:half].var(ddof=1) / half + W[half:].var(ddof=1) / (B - half))
    assert abs(m1 - m2) < 4 * pooled_se


def test_joint_gap_lln_stabilizes():
    spec = chains.chain_mk_k2()
    rng = derive_rng(12, 0)
    path = branching.sample_branching(spec, 80_000, rng)
    tr = branching.regen_trace(path, regen_state=0, coin=0.5, rng=rng)
    gaps = np.diff(tr.joint)[:10_000]
    assert gaps.size == 10_000
    half_mean = gaps[: gaps.size // 2].mean()
    full_mean = gaps.mean()
    assert abs(half_mean - full_mean) / full_mean < 0.01


def test_joint_gap_clt_shape():
    spec = chains.chain_mk_k1()
    rng = derive_rng(13, 0)
    path = branching.sample_branching(spec, 120_000, rng)
    tr = branching.regen_trace(path, regen_state=0, coin=0.5, rng=rng)
    gaps = np.diff(tr.joint).astype(float)
    g = 100
    batches = gaps[: (gaps.size // g) * g].reshape(-1, g).sum(axis=1)
    z = (batches - batches.mean()) / batches.std(ddof=1)
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_ledger_reconstructs_immigrant_progeny():
    spec = chains.chain_mk_k1()
    path = branching.sample_branching(spec, 3000, derive_rng(14, 0), track_lineages=True)
    Y = branching.immigrant_progeny(path)
    nu = branching.extinction_times(path.populations)
    cz = np.concatenate([[0], np.cumsum(path.populations)])
    for j in range(len(nu) - 1):
        assert cz[nu[j + 1]] - cz[nu[j]] == Y[nu[j]:nu[j + 1]].sum()


def test_ledger_requires_tracking():
    path = branching.sample_branching(chains.chain_mk_k1(), 100, derive_rng(15, 0))
    with pytest.raises(ModelError):
        branching.immigrant_progeny(path)


def test_population_explosion_aborts():
    spec = envmodel.EnvironmentSpec(states=("hot",), H=np.array([[1.0]]),
                                    omega=np.array([0.25]), epsilon=0.1)
    with pytest.raises(NumericalError, match="explosion"):
        branching.sample_branching(spec, 5000, derive_rng(16, 0))


def test_branching_vs_walk_single_site_trivial():
    # at target 1 both sides are identically zero
    spec = chains.single_state(0.5)
    import rwre.walksim as walksim
    env = walksim.sample_environment(spec, 8, 0, derive_rng(17, 0))
    rec = walksim.run_to_hit(env, 1, derive_rng(17, 1))
    assert rec.left_moves_at(1) == 0
    sums = branching.branch_population_sums(spec, 1, 50, derive_rng(18, 0))
    assert np.all(sums == 0)


def test_branching_vs_walk_mean_agreement():
    spec = chains.single_state(1 / 9)  # omega = 0.9
    import rwre.walksim as walksim
    walk = np.empty(2000)
    for i in range(2000):
        env = walksim.sample_environment(spec, 8, 99, derive_rng(19, i, 0))
        rec = walksim.run_to_hit(env, 100, derive_rng(19, i, 1))
        walk[i] = rec.left_moves[max(1, rec.deepest_site) - rec.deepest_site:].sum()
    branch = branching.branch_population_sums(spec, 100, 2000, derive_rng(19, 1))
    se = np.sqrt(walk.var(ddof=1) / 2000 + branch.var(ddof=1) / 2000)
    assert abs(walk.mean() - branch.mean()) < 4 * se


def test_branching_vs_walk_ks_check():
    verdict = branching.branching_vs_walk_check(chains.chain_mk_k2(), 100, 2500, seed=21)
    assert not verdict.rejected, verdict
