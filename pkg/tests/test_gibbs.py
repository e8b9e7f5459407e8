import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from hslg.environment import RngState
from hslg.gibbs import (
    ChainConfig,
    ContractError,
    DegenerateSampleError,
    GibbsSpec,
    ResampleConfig,
    SoftBarrierSpec,
    coupled_glauber_softbarrier,
    gibbs_resample_invariance,
    glauber_case,
    importance_sample_gibbs,
    lg_increment_means,
    log_W_continuum,
    log_W_discrete,
    log_W_softbarrier,
    metropolis_chain,
    sample_lg_bridge,
    sample_lg_walk,
    sample_softbarrier_chain,
    walk_parameter,
)
from hslg.stats import DomainError, digamma, ks_dominance, ks_one_sample, trigamma


def cont(side="one-sided", **kw):
    base = dict(kind="continuum", side=side, k=1, l=1, A1=-1.0, a=(0.0,), L=1.0, n_grid=64)
    if side == "two-sided":
        base["b"] = (0.0,)
    base.update(kw)
    return GibbsSpec(**base)


# --------------------------------------------------------------------------
# specs


def test_spec_validation():
    with pytest.raises(DomainError):
        cont(A2=-0.5)
    with pytest.raises(DomainError):
        cont(b=(1.0,))
    with pytest.raises(DomainError):
        GibbsSpec("continuum", "two-sided", 1, 1, -1.0, (0.0,), L=1.0)
    with pytest.raises(DomainError):
        GibbsSpec("discrete", "one-sided", 1, 1, -0.3, (0.0,), N=4)
    with pytest.raises(DomainError):
        GibbsSpec("discrete", "one-sided", 2, 1, -1.0, (0.0,), N=4)
    with pytest.raises(DomainError):
        cont(a=(0.0, 1.0))
    with pytest.raises(DomainError):
        cont(L=0.0)
    with pytest.raises(DomainError):
        SoftBarrierSpec(beta=1.0, L=4.0, a=1.0, A=0.0)


def test_spec_grid_and_drifts():
    s = GibbsSpec("discrete", "one-sided", 1, 2, -1.0, (0.0, -1.0), N=4)
    assert np.allclose(s.grid(), [-1.0, -0.5, 0.0])
    c = cont(k=1, l=2, a=(0.0, -1.0), mu=2.0, L=4.0)
    assert c.alpha_eff == 1.0
    assert np.allclose(c.drifts(), [-2.0, 2.0])
    assert np.all(cont("two-sided").drifts() == 0.0)


def test_walk_parameter_sign():
    assert walk_parameter(1, 0.3) == 0.3
    assert walk_parameter(2, 0.3) == -0.3


# --------------------------------------------------------------------------
# log-gamma walks and bridges


def test_lg_walk_start_and_domain():
    p = sample_lg_walk(RngState(1), 4, (-2.0, 0.0), 1.5, 0.5, size=10)
    assert p.shape == (10, 5)
    assert np.all(p[:, 0] == 1.5)
    with pytest.raises(DomainError):
        sample_lg_walk(RngState(1), 4, (-0.3, 0.0), 0.0, 0.5)
    with pytest.raises(DomainError):
        sample_lg_walk(RngState(1), 1, (-2.0, 0.0), 0.0, 2.0)


def test_lg_increment_means_leading_order():
    N = 400
    m = lg_increment_means(N, (-1.0, 0.0), 0.5)
    sn = math.sqrt(N)
    # first increment lands on an odd point and carries shape 1/2 + alpha + sqrt(N)
    assert m[0] == pytest.approx(-(digamma(1.0 + sn) - 0.5 * math.log(N)), abs=1e-14)
    # both parities give -alpha / sqrt(N) to leading order
    assert np.max(np.abs(m + 0.5 / sn)) < 1.0 / N


def test_lg_walk_increment_moments():
    N, n = 16, 10**5
    p = sample_lg_walk(RngState(2), N, (-1.0, 0.0), 0.0, 0.5, size=n)
    inc = np.diff(p, axis=1)
    exact = lg_increment_means(N, (-1.0, 0.0), 0.5)
    shape = 0.5 + np.array([0.5, -0.5, 0.5, -0.5]) + 4.0
    se = np.sqrt(trigamma(shape) / n)
    assert np.all(np.abs(inc.mean(0) - exact) < 4 * se)
    assert np.allclose(inc.var(0), trigamma(shape), rtol=0.02)
    # variance per step is 1/sqrt(N) to leading order
    assert np.allclose(trigamma(shape), 1 / math.sqrt(N), rtol=0.15)


def test_lg_bridge_endpoints():
    for r in range(5):
        p = sample_lg_bridge(RngState(3).child(r), 9, (-1.0, 0.0), 0.7, -0.4, 0.5)
        assert p[0] == 0.7 and p[-1] == -0.4
    assert list(sample_lg_bridge(RngState(3), 1, (-1.0, 0.0), 0.2, 0.9, 0.1)) == [0.2, 0.9]
    with pytest.raises(DomainError):
        sample_lg_bridge(RngState(3), 1, (0.0, 0.0), 0.2, 0.9, 0.1)


def test_lg_bridge_reversal_symmetry():
    # reversing time swaps (a, b) and flips the parity of each increment
    N, M = 16, 4000
    fwd = np.array([sample_lg_bridge(RngState(4).child(r), N, (-1.0, 0.0), 0.5, -0.5, 0.5)[2]
                    for r in range(M)])
    rev = np.array([sample_lg_bridge(RngState(5).child(r), N, (-1.0, 0.0), -0.5, 0.5, -0.5)[2]
                    for r in range(M)])
    assert abs(fwd.mean() - rev.mean()) < 4 * math.sqrt((fwd.var() + rev.var()) / M)


def test_lg_bridge_midpoint_gaussian_limit():
    N, M = 400, 10_000
    paths = np.array([sample_lg_bridge(RngState(5).child(r), N, (-1.0, 0.0), 0.3, -0.2, 0.5)
                      for r in range(M)])
    # Gaussian conditioning of independent increments with exact moments
    shape = 0.5 + np.where(np.arange(1, 21) % 2 == 0, 0.5, -0.5) + 20.0
    m, v = lg_increment_means(N, (-1.0, 0.0), 0.5), trigamma(shape)
    m1, m2, v1, v2 = m[:10].sum(), m[10:].sum(), v[:10].sum(), v[10:].sum()
    mean = 0.3 + m1 + v1 / (v1 + v2) * (-0.5 - m1 - m2)
    sd = math.sqrt(v1 * v2 / (v1 + v2))
    assert ks_one_sample(paths[:, 10], sps.norm(mean, sd).cdf).statistic < 0.05


# --------------------------------------------------------------------------
# RN weights


def test_log_W_discrete_free_is_zero():
    s = GibbsSpec("discrete", "one-sided", 1, 1, -2.0, (0.0,), N=1)
    assert log_W_discrete([[0.3, -0.2, 0.5]], s) == 0.0


def test_log_W_discrete_hand_example():
    # N = 1 on [-2, 0]; only x = -1 is odd
    S = [0.3, -0.2, 0.5]
    s = GibbsSpec("discrete", "one-sided", 1, 1, -2.0, (0.3,), N=1, f=[1.0, 2.0, 3.0], g=[-1.0, -0.7, -2.0])
    by_hand = -(math.exp(-0.2 - 1.0) + math.exp(-0.2 - 3.0) + math.exp(-0.7 - 0.3) + math.exp(-0.7 - 0.5))
    assert log_W_discrete([S], s) == pytest.approx(by_hand, abs=1e-15)


def test_log_W_discrete_ceiling_violation_negative():
    s = GibbsSpec("discrete", "one-sided", 1, 1, -2.0, (0.0,), N=1, f=0.0)
    assert log_W_discrete([[0.0, 5.0, 0.0]], s) < -100
    with pytest.raises(ContractError):
        log_W_discrete([[0.0, 1.0]], s)
    with pytest.raises(ContractError):
        log_W_discrete([[0.0, 1.0, 0.0]], cont())


def test_log_W_discrete_batch():
    s = GibbsSpec("discrete", "one-sided", 1, 2, -1.0, (0.0, -1.0), N=4, g=-3.0)
    paths = RngState(6).gen.normal(size=(7, 2, 3))
    batch = log_W_discrete(paths, s)
    assert batch.shape == (7,)
    assert np.allclose(batch, [log_W_discrete(p, s) for p in paths])


def test_log_W_continuum_examples():
    assert log_W_continuum([np.linspace(0, 1, 65)], cont(), include_drift=False) == 0.0
    c, L = 0.7, 4.0
    s = cont("two-sided", k=1, l=2, a=(0.0, -c), b=(0.0, -c), L=L)
    paths = np.array([np.zeros(65), np.full(65, -c)])
    assert log_W_continuum(paths, s) == pytest.approx(-L * math.exp(-math.sqrt(L) * c), rel=1e-13)
    # drift term alone: (-1)^1 alpha sqrt(L) B_1(0)
    d = cont(alpha=0.5, L=4.0)
    assert log_W_continuum([np.full(65, 2.0)], d) == pytest.approx(-2.0, abs=1e-15)
    with pytest.raises(ContractError):
        log_W_continuum([np.zeros(10)], cont())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 50.0), st.integers(1, 3))
def test_rn_exponents_nonpositive(seed, L, curves):
    gen = RngState(seed).gen
    s = cont("two-sided", k=1, l=curves, a=(0.0,) * curves, b=(0.0,) * curves, L=L, n_grid=16,
             f=2.0, g=-2.0)
    assert log_W_continuum(gen.normal(size=(curves, 17)), s) <= 0.0
    d = GibbsSpec("discrete", "one-sided", 1, curves, -2.0, (0.0,) * curves, N=4, f=1.0, g=-1.0)
    assert log_W_discrete(gen.normal(size=(curves, 5)), d) <= 0.0


def test_log_W_softbarrier():
    s = SoftBarrierSpec(beta=2.0, L=1.0, a=1.0, kappa=0.0)
    path = np.full(5, 1.0)
    assert log_W_softbarrier(path, s, n_grid=4) == pytest.approx(-2.0 - math.exp(-1.0), rel=1e-13)
    t = SoftBarrierSpec(beta=2.0, L=1.0, a=1.0, epsilon=0.5)
    assert log_W_softbarrier(np.full(5, -1.0), t, n_grid=4) == pytest.approx(-math.e, rel=1e-13)
    with pytest.raises(ContractError):
        log_W_softbarrier(path, s, n_grid=8)


# --------------------------------------------------------------------------
# importance sampling and Metropolis


def test_importance_free_weights():
    ws = importance_sample_gibbs(RngState(7), cont(), 50)
    assert np.all(ws.log_weights == 0.0)
    assert ws.ess == pytest.approx(50.0)
    assert ws.mean(lambda p: 3.0) == pytest.approx(3.0)
    with pytest.raises(DomainError):
        importance_sample_gibbs(RngState(7), cont(), 0)


def test_importance_degenerate_error():
    s = GibbsSpec("discrete", "one-sided", 1, 1, -1.0, (0.0,), N=4, f=-np.inf)
    with pytest.raises(DegenerateSampleError):
        importance_sample_gibbs(RngState(8), s, 5)


def test_sample_set_csv(tmp_path):
    ws = importance_sample_gibbs(RngState(9), cont(n_grid=2), 2)
    rows = (tmp_path / "s.csv")
    ws.to_csv(rows)
    lines = rows.read_text().splitlines()
    assert lines[0] == "replica,curve,x,value,log_weight"
    assert len(lines) == 1 + 2 * 3


def _is_mean(spec, seed, M=20_000):
    ws = importance_sample_gibbs(RngState(seed), spec, M)
    w, x = ws.weights(), ws.samples[:, 0, -1]
    m = float(w @ x)
    return m, math.sqrt(float(w @ (x - m) ** 2) / ws.ess), ws.ess


def test_folded_and_drifted_forms_agree():
    m1, s1, _ = _is_mean(cont(g=-10.0, alpha=0.5), 10)
    m2, s2, _ = _is_mean(cont(g=-10.0, alpha=0.5, drift_mode="drifted"), 11)
    assert abs(m1 - m2) < 3 * math.hypot(s1, s2)


def test_importance_vs_metropolis():
    spec = cont(g=-10.0, alpha=0.5)
    m_is, se_is, e = _is_mean(spec, 6)
    assert e >= 100
    ch = metropolis_chain(RngState(7), spec, proposal=ChainConfig(samples=20_000, thin=200, burn=10_000),
                          record=[64])
    y = ch.samples[:, 0, 0]
    se_mh = y.reshape(50, -1).mean(1).std(ddof=1) / math.sqrt(50)
    assert abs(m_is - y.mean()) < 3 * math.hypot(se_is, se_mh)


def test_metropolis_free_bridge_midpoint():
    ws = metropolis_chain(RngState(4), cont("two-sided"),
                          proposal=ChainConfig(samples=10_000, thin=200, burn=10_000), record=[32])
    assert ks_one_sample(ws.samples[:, 0, 0], sps.norm(0.0, 0.5).cdf).statistic < 0.05
    for r in ws.diagnostics["acceptance"].values():
        assert r is None or 0.0 < r <= 1.0


def test_metropolis_detailed_balance_two_points():
    # two interior points; quadrature of the target on a 50 x 50 value grid
    spec = cont("two-sided", g=-0.3, n_grid=3)
    ws = metropolis_chain(RngState(3), spec, proposal=ChainConfig(samples=1_000_000, thin=5, burn=10_000),
                          record=[1, 2])
    xy = ws.samples[:, 0, :]
    edges = np.linspace(-1.5, 2.5, 51)
    mid = 0.5 * (edges[1:] + edges[:-1])
    X1, X2 = np.meshgrid(mid, mid, indexing="ij")
    h = 1.0 / 3.0
    log_free = -(X1 ** 2 + (X2 - X1) ** 2 + X2 ** 2) / (2 * h)
    log_rn = np.vectorize(lambda u, v: log_W_continuum([[0.0, u, v, 0.0]], spec))(X1, X2)
    p = np.exp(log_free + log_rn)
    p /= p.sum()
    q = np.histogram2d(xy[:, 0], xy[:, 1], bins=[edges, edges])[0] / len(xy)
    tv = 0.5 * (np.abs(p - q).sum() + (1.0 - q.sum()))
    assert tv < 0.02


def test_metropolis_contracts():
    with pytest.raises(ContractError):
        metropolis_chain(RngState(1), GibbsSpec("discrete", "one-sided", 1, 1, -1.0, (0.0,), N=4))
    with pytest.raises(ContractError):
        metropolis_chain(RngState(1), cont(drift_mode="drifted"))
    with pytest.raises(ContractError):
        metropolis_chain(RngState(1), cont(g=1.0))
    with pytest.raises(DomainError):
        metropolis_chain(RngState(1), cont(), steps=0)


def test_metropolis_steps_argument():
    ws = metropolis_chain(RngState(2), cont(), steps=5000, proposal=ChainConfig(thin=10, burn=1000))
    assert ws.samples.shape == (400, 1, 65)
    assert ws.ess == pytest.approx(400.0)


def test_floor_monotonicity():
    def sir(g, seed):
        ws = importance_sample_gibbs(RngState(seed), cont(g=g, L=4.0), 20_000)
        assert ws.ess >= 100
        idx = RngState(seed + 100).gen.choice(20_000, size=4000, p=ws.weights())
        return ws.samples[idx, 0, :]

    lo, hi = sir(-1.0, 9), sir(-0.3, 10)
    for col in (16, 32, 64):
        assert ks_dominance(lo[:, col], hi[:, col]).verdict == "pass"


def test_softbarrier_chain_shapes():
    s = SoftBarrierSpec(beta=1.0, L=4.0, a=0.5)
    vals, grid, rates = sample_softbarrier_chain(RngState(3), s, ChainConfig(samples=20, thin=50, burn=100),
                                                 n_grid=16, record=[0, 16])
    assert vals.shape == (20, 2) and np.all(vals[:, 0] == 0.5)
    assert list(grid) == [-1.0, 0.0]
    assert rates["pair"] is None


# --------------------------------------------------------------------------
# Glauber coupling


def test_glauber_identical_specs():
    s = SoftBarrierSpec(beta=1.0, L=4.0, a=1.0, epsilon=0.1, kappa=0.2)
    r = coupled_glauber_softbarrier(RngState(1), s, s, 20_000, return_paths=True)
    assert r["case"] == "identical" and r["violations"] == 0
    assert np.array_equal(*r["paths"])


@pytest.mark.parametrize("pair", [
    (dict(beta=1.0, epsilon=0.1, kappa=0.0), dict(beta=1.0, epsilon=0.1, kappa=0.5)),
    (dict(beta=1.0), dict(beta=2.0)),
    (dict(beta=1.0, a=1.0), dict(beta=1.0, a=0.5)),
])
def test_glauber_monotone_cases(pair):
    s1 = SoftBarrierSpec(L=4.0, **{"a": 1.0, **pair[0]})
    s2 = SoftBarrierSpec(L=4.0, **{"a": 1.0, **pair[1]})
    r = coupled_glauber_softbarrier(RngState(2), s1, s2, 100_000)
    assert r["violations"] == 0
    assert min(r["acceptance"]) > 0.0


def test_glauber_case_contract():
    base = SoftBarrierSpec(beta=1.0, L=4.0, a=1.0, epsilon=0.1)
    with pytest.raises(ContractError):
        glauber_case(base, SoftBarrierSpec(beta=2.0, L=4.0, a=0.5, epsilon=0.1))
    with pytest.raises(ContractError):
        glauber_case(SoftBarrierSpec(beta=2.0, L=4.0, a=1.0), SoftBarrierSpec(beta=1.0, L=4.0, a=1.0))
    assert glauber_case(base, SoftBarrierSpec(beta=1.0, L=4.0, a=1.0, epsilon=0.1, kappa=1.0)) == "kappa"


# --------------------------------------------------------------------------
# resampling invariance


def test_resample_identity_kernel():
    out = gibbs_resample_invariance(RngState(1), ResampleConfig(replicas=50, gibbs_steps=0))
    assert out["ks"].statistic == 0.0


def test_resample_small_run_and_determinism():
    cfg = ResampleConfig(replicas=200, proposals=200)
    a = gibbs_resample_invariance(RngState(2), cfg, return_samples=True)
    b = gibbs_resample_invariance(RngState(2), cfg, return_samples=True)
    assert np.array_equal(a["redrawn"], b["redrawn"])
    assert a["median_ess"] >= 100
    assert a["ks"].verdict == "pass"
    assert a["midpoint"] == -0.5


def test_resample_contracts():
    with pytest.raises(DomainError):
        gibbs_resample_invariance(RngState(1), ResampleConfig(k=3))
    with pytest.raises(DomainError):
        gibbs_resample_invariance(RngState(1), ResampleConfig(n=7))
    with pytest.raises(DomainError):
        gibbs_resample_invariance(RngState(1), ResampleConfig(window=(-0.5, 0.0)))


def test_mixing_warning_category():
    from hslg.gibbs import MixingWarning

    assert issubclass(MixingWarning, RuntimeWarning)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        metropolis_chain(RngState(5), cont(), steps=200, proposal=ChainConfig(thin=10, burn=100))
