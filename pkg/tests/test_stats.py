import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from notefactor.stats import (
    PanelCell,
    bimodality_coefficient,
    jeffreys_proportion,
    permutation_test,
    spearman,
    two_way_fe_did,
    weekly_gap_did,
)


def midrank_oracle(values):
    """Average ranks with ties, by explicit enumeration."""
    values = list(values)
    ranks = []
    for v in values:
        less = sum(1 for x in values if x < v)
        equal = sum(1 for x in values if x == v)
        # ranks occupied: less+1 .. less+equal; average them
        ranks.append(less + (equal + 1) / 2.0)
    return ranks


def pearson_oracle(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    den = (sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y)) ** 0.5
    return num / den


# ---------------------------------------------------------------------------
# spearman
# ---------------------------------------------------------------------------

def test_spearman_monotone_extremes():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [5, 4, 3, 2]) == pytest.approx(-1.0)


def test_spearman_ties_match_midrank_oracle():
    x = [1.0, 2.0, 2.0, 3.0]
    y = [1.0, 3.0, 2.0, 4.0]
    expected = pearson_oracle(midrank_oracle(x), midrank_oracle(y))
    assert spearman(x, y) == pytest.approx(expected, abs=1e-12)


def test_spearman_random_matches_oracle(rng):
    x = rng.integers(0, 5, 30).astype(float)
    y = rng.integers(0, 5, 30).astype(float)
    if np.ptp(midrank_oracle(x)) == 0 or np.ptp(midrank_oracle(y)) == 0:
        pytest.skip("degenerate draw")
    expected = pearson_oracle(midrank_oracle(x), midrank_oracle(y))
    assert spearman(x, y) == pytest.approx(expected, abs=1e-12)


def test_spearman_degenerate_ranks():
    with pytest.raises(ValueError, match="degenerate ranks"):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_spearman_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=20)
    y = rng.normal(size=20)
    base = spearman(x, y)
    assert spearman(np.exp(x), y) == pytest.approx(base, abs=1e-10)
    assert spearman(x, 3.0 * y + 1.0) == pytest.approx(base, abs=1e-10)


# ---------------------------------------------------------------------------
# bimodality coefficient
# ---------------------------------------------------------------------------

def test_bc_gaussian_large_sample():
    rng = np.random.default_rng(5)
    draws = rng.standard_normal(1_000_000)
    assert bimodality_coefficient(draws) == pytest.approx(1.0 / 3.0, abs=0.01)


def test_bc_symmetric_two_point_mass():
    samples = np.array([-1.0, 1.0] * 10)
    # skewness 0, raw kurtosis 1 -> BC = 1
    assert bimodality_coefficient(samples) == pytest.approx(1.0, abs=1e-12)


def test_bc_degenerate():
    with pytest.raises(ValueError, match="zero variance"):
        bimodality_coefficient(np.ones(10))
    with pytest.raises(ValueError, match="at least four"):
        bimodality_coefficient(np.array([1.0, 2.0, 3.0]))


def test_bc_corrected_close_to_raw_large_n():
    rng = np.random.default_rng(6)
    draws = rng.standard_normal(50_000)
    raw = bimodality_coefficient(draws)
    corr = bimodality_coefficient(draws, corrected=True)
    assert corr == pytest.approx(raw, abs=0.001)


# ---------------------------------------------------------------------------
# jeffreys proportion
# ---------------------------------------------------------------------------

def test_jeffreys_values():
    assert jeffreys_proportion(0, 0) == pytest.approx(0.5, abs=1e-15)
    assert jeffreys_proportion(5, 9) == pytest.approx(0.55, abs=1e-15)
    assert jeffreys_proportion(9, 9) == pytest.approx(9.5 / 10.0, abs=1e-15)


def test_jeffreys_contract():
    with pytest.raises(ValueError):
        jeffreys_proportion(5, 4)
    with pytest.raises(ValueError):
        jeffreys_proportion(-1, 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 500), st.integers(0, 500))
def test_jeffreys_strictly_interior(a, b):
    k, n = min(a, b), max(a, b)
    p = jeffreys_proportion(k, n)
    assert 0.0 < p < 1.0


# ---------------------------------------------------------------------------
# weekly gap DiD
# ---------------------------------------------------------------------------

def test_did_clean_level_shift():
    gaps = np.array([0.0] * 10 + [0.1] * 10)
    post = np.array([False] * 10 + [True] * 10)
    res = weekly_gap_did(gaps, post)
    assert res.beta == pytest.approx(0.1, abs=1e-12)
    assert res.se <= 1e-8
    assert res.ci_low <= 0.1 <= res.ci_high


def test_did_weight_scale_invariance(rng):
    gaps = rng.normal(0, 1, 30)
    post = np.arange(30) >= 15
    w = rng.uniform(0.5, 2.0, 30)
    a = weekly_gap_did(gaps, post, weights=w)
    b = weekly_gap_did(gaps, post, weights=2.0 * w)
    assert a.beta == pytest.approx(b.beta, abs=1e-12)
    assert a.se == pytest.approx(b.se, abs=1e-12)


def test_did_shift_invariance(rng):
    gaps = rng.normal(0, 1, 40)
    post = np.arange(40) >= 20
    a = weekly_gap_did(gaps, post)
    b = weekly_gap_did(gaps + 5.0, post)
    assert a.beta == pytest.approx(b.beta, abs=1e-10)


def test_did_requires_both_periods():
    with pytest.raises(ValueError, match="pre and post"):
        weekly_gap_did([1.0, 2.0], [True, True])


def test_did_local_linear_running_variable():
    """Slope change plus jump: the Post coefficient isolates the jump."""
    r = np.arange(-10, 10, dtype=float)
    post = r >= 0
    jump = 0.5
    y = 0.02 * r + jump * post + 0.03 * r * post
    res = weekly_gap_did(y, post, running_var=r)
    assert res.beta == pytest.approx(jump, abs=1e-10)


def test_did_null_calibration():
    rng = np.random.default_rng(11)
    rejections = 0
    reps = 400
    post = np.arange(60) >= 30
    for _ in range(reps):
        gaps = rng.normal(0, 1, 60)
        res = weekly_gap_did(gaps, post)
        rejections += res.p_value < 0.05
    rate = rejections / reps
    assert 0.02 <= rate <= 0.10


# ---------------------------------------------------------------------------
# two-way fixed effects
# ---------------------------------------------------------------------------

def _panel(n_units=40, n_weeks=12, beta=0.0, seed=0):
    rng = np.random.default_rng(seed)
    alpha = rng.normal(0, 0.5, n_units)
    gamma = rng.normal(0, 0.3, n_weeks)
    minority = np.arange(n_units) < n_units // 3
    cells = []
    for u in range(n_units):
        for w in range(n_weeks):
            post = w >= n_weeks // 2
            y = alpha[u] + gamma[w] + beta * (minority[u] and post) + rng.normal(0, 0.1)
            cells.append(PanelCell(f"u{u}", w, y, bool(minority[u]), bool(post)))
    return cells


def test_twfe_recovers_planted_effect():
    planted = -0.075
    est, se = two_way_fe_did(_panel(beta=planted, seed=3))
    assert abs(est - planted) <= 2 * se
    assert se < 0.05


def test_twfe_zero_effect():
    est, se = two_way_fe_did(_panel(beta=0.0, seed=4))
    assert abs(est) <= 2 * se


def test_twfe_single_week_errors():
    cells = [PanelCell(f"u{u}", 0, float(u), u % 2 == 0, False) for u in range(4)]
    with pytest.raises(ValueError, match="two units and two weeks"):
        two_way_fe_did(cells)


def test_twfe_collinear_design_errors():
    # no minority users at all: interaction has no variation
    cells = [
        PanelCell(f"u{u}", w, float(u + w), False, w >= 1)
        for u in range(3)
        for w in range(3)
    ]
    with pytest.raises(ValueError, match="collinear"):
        two_way_fe_did(cells)


# ---------------------------------------------------------------------------
# permutation test
# ---------------------------------------------------------------------------

def mean_diff(data, labels):
    labels = np.asarray(labels, dtype=bool)
    return float(np.mean(data[labels]) - np.mean(data[~labels]))


def test_permutation_extreme_separation():
    data = np.array([10.0] * 8 + [0.0] * 8)
    labels = np.array([True] * 8 + [False] * 8)
    p = permutation_test(mean_diff, data, labels, n_perm=500, seed=0)
    assert p == pytest.approx(1.0 / 501.0, abs=2e-2)


def test_permutation_deterministic():
    rng = np.random.default_rng(3)
    data = rng.normal(size=40)
    labels = np.arange(40) < 20
    p1 = permutation_test(mean_diff, data, labels, n_perm=300, seed=7)
    p2 = permutation_test(mean_diff, data, labels, n_perm=300, seed=7)
    assert p1 == p2


def test_permutation_preserves_group_sizes():
    sizes = []

    def counting_stat(data, labels):
        sizes.append(int(np.sum(labels)))
        return 0.0

    data = np.zeros(30)
    labels = np.arange(30) < 12
    with pytest.warns(UserWarning, match="degenerate"):
        permutation_test(counting_stat, data, labels, n_perm=100, seed=1)
    assert set(sizes) == {12}


def test_permutation_degenerate_statistic_warns():
    data = np.ones(20)
    labels = np.arange(20) < 10
    with pytest.warns(UserWarning, match="degenerate"):
        p = permutation_test(mean_diff, data, labels, n_perm=200, seed=2)
    assert p == 1.0


def test_permutation_p_bounds(rng):
    data = rng.normal(size=30)
    labels = np.arange(30) < 15
    p = permutation_test(mean_diff, data, labels, n_perm=200, seed=5)
    assert 1.0 / 201.0 <= p <= 1.0


def test_permutation_requires_min_iterations():
    with pytest.raises(ValueError):
        permutation_test(mean_diff, np.zeros(4), np.array([True, True, False, False]), n_perm=50)
