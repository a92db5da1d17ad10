import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dtebounds.chain import InfeasibleStartError
from dtebounds.distributions import ChiSquare, Chi2NormalConvolution, Normal, Uniform
from dtebounds.makarov import makarov_lower, makarov_upper
from dtebounds.mtr import (DominanceWarning, MtrOptions, TriangleSequence, _es_terms, _k_range, equal_spacing_value,
                           mtr_curve, mtr_lower, mtr_problem, mtr_upper, refine_sequence, truncation_K)
from dtebounds.oracle import aligned_window, build_mask, discretize_pair, solve_transport_lp, support_window
from dtebounds.restrictions import RestrictionSpec

FAST = MtrOptions(multistarts=5)
U01, U_SHIFT = Uniform(0, 1), Uniform(0.5, 1.5)


def es_scan(F0, F1, delta, n=20001):
    """Independent oracle: brute-force the equally spaced sum on a fine y grid."""
    ks = np.arange(-60, 60)
    best = 0.0
    for y in np.linspace(0, delta, n, endpoint=False):
        a = y + ks * delta
        best = max(best, float(np.maximum(F1.cdf(a + delta) - F0.cdf(a), 0).sum()))
    return best


def test_equal_spacing_examples():
    v, _ = equal_spacing_value(Normal(0, 1), Normal(0, 1), 1.0)
    assert v == pytest.approx(1.0, abs=1e-9)
    v, y = equal_spacing_value(U01, U_SHIFT, 0.75)
    assert v == pytest.approx(0.5, abs=1e-6)
    assert y == pytest.approx(0.0, abs=1e-9)
    assert es_scan(U01, U_SHIFT, 0.75, 3001) == pytest.approx(0.5, abs=1e-6)
    v, _ = equal_spacing_value(U01, U_SHIFT, 0.5)
    assert v == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        equal_spacing_value(U01, U_SHIFT, 0.0)


def best_window_sums(F0, F1, delta, y):
    ks = _k_range(F0, F1, delta)
    t = np.maximum(_es_terms(F0, F1, delta, np.array([y]), ks)[0], 0.0)
    c = np.r_[0.0, np.cumsum(t)]
    out = []
    for K in range(t.size):
        w = min(2 * K + 1, t.size)
        out.append(float(np.max(c[w:] - c[:-w])))
    return np.array(out), float(t.sum())


def test_truncation_examples():
    assert truncation_K(Normal(0, 1), Normal(0, 1), 1.0, 0.0, 1e-5) == 5
    assert 2 * stats.norm.cdf(-5) < 1e-5 < 2 * stats.norm.cdf(-4)
    assert truncation_K(Normal(0, 1), Normal(0, 2), 0.7, 0.1, 1.0) == 0
    # the nonzero terms sit at k in {0, 1}; the rule picks the smallest window that covers them
    V_K, V = best_window_sums(U01, U_SHIFT, 0.75, 0.0)
    K = truncation_K(U01, U_SHIFT, 0.75, 0.0)
    assert V - V_K[K] < 1e-5 and (K == 0 or V - V_K[K - 1] >= 1e-5)
    with pytest.raises(ValueError):
        truncation_K(U01, U_SHIFT, 0.75, 0.0, 0.0)


@pytest.mark.parametrize("F0,F1,delta", [(Normal(0, 1), Normal(0.5, 1), 0.7), (Normal(0, 1), Chi2NormalConvolution(1, 1), 1.3)])
def test_truncation_ladder_monotone(F0, F1, delta):
    y = equal_spacing_value(F0, F1, delta)[1]
    V_K, V = best_window_sums(F0, F1, delta, y)
    assert np.all(np.diff(V_K) >= -1e-15)
    assert V_K[-1] == pytest.approx(V, abs=1e-12)


def test_refine_sequence_examples():
    F = Normal(0, 1)
    K = truncation_K(F, F, 1.0, 0.0)
    start = TriangleSequence(1.0, tuple(np.arange(-K, K + 2, dtype=float)), K)
    v, seq = refine_sequence(F, F, 1.0, K, K, start, FAST, 0.0)
    # the window holds 2K+2 points, so the telescoped sum misses mass below epsilon_K
    assert v == pytest.approx(1.0, abs=FAST.epsilon_K)
    assert v >= F.cdf(K + 1.0) - F.cdf(-K) - 1e-15
    K = truncation_K(U01, U_SHIFT, 0.75, 0.0)
    start = TriangleSequence(0.75, tuple(0.75 * np.arange(-K, K + 2)), K)
    v, _ = refine_sequence(U01, U_SHIFT, 0.75, K, K, start, FAST, 0.0)
    assert v == pytest.approx(0.5, abs=1e-9)


def test_refine_sequence_rejects_infeasible_start():
    with pytest.raises(InfeasibleStartError):
        TriangleSequence(0.5, (0.0, 1.0, 1.2, 1.6), 1)
    start = TriangleSequence(0.5, (0.0, 0.1, 0.2, 0.6), 1)
    with pytest.raises(InfeasibleStartError):
        refine_sequence(U01, U_SHIFT, 0.5, 1, 1, start, FAST)
    with pytest.raises(ValueError):
        refine_sequence(U01, U_SHIFT, 0.5, 1, 3, start, FAST)


def test_uniform_lower_matches_lp():
    v, _ = mtr_lower(U01, U_SHIFT, 0.75, FAST)
    assert v == pytest.approx(0.5, abs=1e-6)
    lo, hi = aligned_window(*support_window(U01, U_SHIFT), [0.75], 200)
    mu0, mu1 = discretize_pair(U01, U_SHIFT, 200, lo, hi)
    lp, _ = solve_transport_lp(mu0, mu1, build_mask(mu0.points, mu1.points, RestrictionSpec.mtr()), 0.75)
    assert lp == pytest.approx(0.5, abs=0.01)


def test_mtr_lower_examples():
    assert mtr_lower(Normal(0, 1), Normal(1, 1), -0.5)[0] == 0.0
    assert mtr_lower(Normal(0, 1), Normal(0, 1), 0.3, FAST)[0] == pytest.approx(1.0, abs=1e-6)


def test_section4_pair_at_two():
    F0, F1 = Normal(0, 1), Chi2NormalConvolution(1, 1.0)
    v, _ = mtr_lower(F0, F1, 2.0, FAST)
    truth = ChiSquare(1).cdf(2.0)
    assert truth == pytest.approx(0.8427, abs=1e-4)
    assert makarov_lower(F0, F1, 2.0)[0] - 1e-9 <= v <= truth + 1e-9
    lo, hi = aligned_window(*support_window(F0, F1), [2.0], 300)
    mu0, mu1 = discretize_pair(F0, F1, 300, lo, hi)
    lp, _ = solve_transport_lp(mu0, mu1, build_mask(mu0.points, mu1.points, RestrictionSpec.mtr()), 2.0)
    assert v == pytest.approx(lp, abs=0.01)


def test_mtr_upper_examples():
    assert mtr_upper(U01, U_SHIFT, -1.0) == 0.0
    assert mtr_upper(U01, U01, 0.1) == pytest.approx(1.0, abs=1e-12)
    assert mtr_upper(U01, U_SHIFT, 0.25) == pytest.approx(0.75, abs=1e-6)


def test_zero_delta_is_makarov():
    F0, F1 = Normal(0, 1), Normal(0.5, 1)
    assert mtr_lower(F0, F1, 0.0)[0] == pytest.approx(makarov_lower(F0, F1, 0.0)[0], abs=1e-15)


def test_dominance_warning():
    with pytest.warns(DominanceWarning):
        mtr_lower(Normal(1, 1), Normal(0, 1), 0.5, FAST)


def test_options_validation():
    for kw in ({"epsilon_K": 0.0}, {"smoothing_h": -1.0}, {"multistarts": 0}, {"method": "other"}):
        with pytest.raises(ValueError):
            MtrOptions(**kw)


dominated = st.tuples(st.floats(0.0, 2.0), st.floats(0.3, 3.0))


@settings(max_examples=12, deadline=None)
@given(dominated, st.floats(0.05, 3.0))
def test_improvement_witness_and_upper(params, delta):
    shift, var = params
    F0, F1 = Normal(0.0, var), Normal(shift, var)
    v, seq = mtr_lower(F0, F1, delta, FAST)
    assert v >= makarov_lower(F0, F1, delta)[0] - 1e-9
    assert v <= makarov_upper(F0, F1, delta)[0] + 1e-9
    pts = seq.points
    gaps = np.diff(pts)
    assert np.all(gaps >= -1e-9) and np.all(gaps <= delta + 1e-9)
    assert mtr_problem(F0, F1, delta).value(pts) == pytest.approx(seq.info["raw"], abs=1e-9)
    assert min(seq.info["raw"], 1.0) == pytest.approx(v, abs=1e-9)


@settings(max_examples=6, deadline=None)
@given(st.sampled_from([Normal(0, 1), Uniform(0, 1), ChiSquare(3)]), st.sampled_from([0.1, 0.5, 2.0]))
def test_telescoping(F, delta):
    assert mtr_lower(F, F, delta, FAST)[0] == pytest.approx(1.0, abs=1e-6)


def test_mtr_curve():
    c = mtr_curve(Normal(0, 1), Normal(1, 1), np.linspace(-1, 3, 5), FAST)
    assert c.method == "mtr"
    assert c.lower[0] == 0.0 and c.upper[0] == 0.0
    assert np.all(np.diff(c.lower) >= 0)
