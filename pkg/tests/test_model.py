import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from notefactor.model import (
    HELPFUL_THRESHOLD,
    NOT_HELPFUL_THRESHOLD,
    LatentParams,
    NoteStatus,
    ObservationSet,
    RatingEvent,
    canonical_center,
    classify_all,
    classify_note,
    decenter_note_intercept,
    discretize_report,
    discretize_reports,
    predict,
    predict_entries,
)

from conftest import dense_reconstruction_oracle, random_theta


# ---------------------------------------------------------------------------
# rating events and observation sets
# ---------------------------------------------------------------------------

def test_rating_event_discrete_levels():
    for value in (0.0, 0.5, 1.0):
        ev = RatingEvent("u1", "n1", 0, value)
        assert ev.is_discrete
    assert not RatingEvent("u1", "n1", 0, 0.3).is_discrete


def test_rating_event_rejects_bad_values():
    with pytest.raises(ValueError):
        RatingEvent("u1", "n1", 0, 1.5)
    with pytest.raises(ValueError):
        RatingEvent("u1", "n1", 0, float("nan"))
    with pytest.raises(ValueError):
        RatingEvent("u1", "n1", -1, 0.5)


def test_observation_set_dedupes_latest():
    events = [
        RatingEvent("u1", "n1", 100, 0.0),
        RatingEvent("u1", "n1", 200, 1.0),
        RatingEvent("u2", "n1", 50, 0.5),
    ]
    obs = ObservationSet.from_events(events, duplicate_policy="latest")
    assert obs.n_entries == 2
    mat, mask = obs.dense_matrix()
    u1 = obs.user_ids.index("u1")
    n1 = obs.note_ids.index("n1")
    assert mat[u1, n1] == 1.0
    earliest = ObservationSet.from_events(events, duplicate_policy="earliest")
    mat_e, _ = earliest.dense_matrix()
    assert mat_e[u1, n1] == 0.0
    with pytest.raises(ValueError):
        ObservationSet.from_events(events, duplicate_policy="error")


def test_observation_set_compacts_indices():
    obs = ObservationSet.from_entries([("b", "y", 1.0), ("a", "x", 0.0)])
    assert obs.user_ids == ("a", "b")
    assert obs.note_ids == ("x", "y")
    assert obs.n_users == 2 and obs.n_notes == 2
    # every index referenced
    assert set(obs.u_idx) == {0, 1}
    assert set(obs.n_idx) == {0, 1}


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def test_predict_constant_model():
    theta = LatentParams.zeros(3, 4, mu=0.5)
    assert predict(theta, 0, 0) == 0.5
    assert predict(theta, 2, 3) == 0.5


def test_predict_direct_arithmetic():
    theta = LatentParams(0.0, np.array([0.1]), np.array([0.2]), np.array([2.0]), np.array([-0.5]))
    assert predict(theta, 0, 0) == pytest.approx(-0.7, abs=1e-15)


def test_predict_matches_dense_oracle(rng):
    theta = random_theta(rng, 7, 5)
    dense = dense_reconstruction_oracle(theta)
    for u in range(7):
        for n in range(5):
            assert predict(theta, u, n) == pytest.approx(dense[u, n], abs=1e-14)
    u_idx = np.array([0, 3, 6])
    n_idx = np.array([1, 4, 2])
    np.testing.assert_allclose(predict_entries(theta, u_idx, n_idx), dense[u_idx, n_idx])


def test_predict_bounds_checked():
    theta = LatentParams.zeros(2, 2)
    with pytest.raises(IndexError):
        predict(theta, 2, 0)
    with pytest.raises(IndexError):
        predict(theta, 0, -1)


# ---------------------------------------------------------------------------
# canonical centering
# ---------------------------------------------------------------------------

def test_center_constant_vectors_collapse():
    c1, c2, c3, c4 = 0.3, -0.2, 0.7, 1.1
    theta = LatentParams(
        1.0, np.full(5, c1), np.full(6, c2), np.full(5, c3), np.full(6, c4)
    )
    out = canonical_center(theta)
    assert out.mu == pytest.approx(1.0 + c1 + c2 + c3 * c4, abs=1e-12)
    for arr in (out.h, out.i, out.f, out.g):
        np.testing.assert_allclose(arr, 0.0, atol=1e-12)


def test_center_idempotent(rng):
    theta = random_theta(rng, 12, 9)
    once = canonical_center(theta)
    twice = canonical_center(once)
    assert abs(once.mu - twice.mu) <= 1e-12
    for a, b in zip((once.h, once.i, once.f, once.g), (twice.h, twice.i, twice.f, twice.g)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_center_preserves_reconstruction_20x20(rng):
    theta = random_theta(rng, 20, 20)
    out = canonical_center(theta)
    assert out.is_canonical()
    err = np.max(np.abs(out.reconstruct() - dense_reconstruction_oracle(theta)))
    assert err <= 1e-10


def test_center_degenerate_factor():
    theta = LatentParams(0.0, np.array([1.0, -1.0]), np.array([0.5, 0.5]),
                         np.array([2.0, 2.0]), np.array([1.0, -1.0]))
    out = canonical_center(theta)
    np.testing.assert_allclose(out.f, 0.0)
    np.testing.assert_allclose(out.g, 0.0)
    np.testing.assert_allclose(out.reconstruct(), theta.reconstruct(), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_center_roundtrip_property(n_users, n_notes, seed):
    rng = np.random.default_rng(seed)
    theta = random_theta(rng, n_users, n_notes, scale=2.0)
    out = canonical_center(theta)
    assert out.is_canonical()
    assert np.max(np.abs(out.reconstruct() - theta.reconstruct())) <= 1e-10
    again = canonical_center(out)
    assert abs(again.mu - out.mu) <= 1e-12
    assert np.max(np.abs(again.f - out.f)) <= 1e-12
    assert np.max(np.abs(again.g - out.g)) <= 1e-12


# ---------------------------------------------------------------------------
# decentering
# ---------------------------------------------------------------------------

def test_decenter_zero_mean_factor_is_identity():
    i_hat = np.array([0.3, -0.1])
    out = decenter_note_intercept(i_hat, np.array([5.0, -2.0]), c=0.0)
    np.testing.assert_array_equal(out, i_hat)


def test_decenter_direct_arithmetic():
    out = decenter_note_intercept(np.array([0.1]), np.array([0.2]), c=0.5)
    assert out[0] == pytest.approx(0.2, abs=1e-15)


def test_decenter_length_mismatch():
    with pytest.raises(ValueError):
        decenter_note_intercept(np.zeros(3), np.zeros(2), 0.5)


# ---------------------------------------------------------------------------
# discretization and classification
# ---------------------------------------------------------------------------

def test_discretize_mapping_exact():
    assert discretize_report(-0.3) == 0.0
    assert discretize_report(0.0) == 0.5
    assert discretize_report(1e-12) == 1.0
    with pytest.raises(ValueError):
        discretize_report(float("inf"))


def test_discretize_vectorized_matches_scalar(rng):
    a = rng.uniform(-2, 2, 500)
    a[:3] = [0.0, -0.0, 1e-300]
    vec = discretize_reports(a)
    for k, x in enumerate(a):
        assert vec[k] == discretize_report(float(x))


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-1e100, max_value=1e100))
def test_discretize_range_and_monotone(a):
    out = discretize_report(a)
    assert out in (0.0, 0.5, 1.0)
    step = abs(a) * 1e-6 + 1e-9
    assert discretize_report(a + step) >= out


def test_classify_boundary_table():
    assert classify_note(0.4) is NoteStatus.HELPFUL
    assert classify_note(-0.05) is NoteStatus.NEEDS_MORE_RATINGS
    assert classify_note(-0.06) is NoteStatus.NOT_HELPFUL
    assert classify_note(0.39999999) is NoteStatus.NEEDS_MORE_RATINGS
    assert classify_note(1e9) is NoteStatus.HELPFUL
    assert classify_note(-1e9) is NoteStatus.NOT_HELPFUL


@settings(max_examples=100, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_classify_partitions_real_line(x):
    status = classify_note(x)
    if x >= HELPFUL_THRESHOLD:
        assert status is NoteStatus.HELPFUL
    elif x < NOT_HELPFUL_THRESHOLD:
        assert status is NoteStatus.NOT_HELPFUL
    else:
        assert status is NoteStatus.NEEDS_MORE_RATINGS


def test_classify_all_matches_scalar(rng):
    theta = LatentParams(
        0.0, np.zeros(2), rng.uniform(-1, 1, 1000), np.zeros(2), np.zeros(1000)
    )
    statuses = classify_all(theta)
    for k, val in enumerate(theta.i):
        assert statuses[k] is classify_note(float(val))


def test_classify_all_examples():
    theta = LatentParams(0.0, np.zeros(1), np.array([0.5, 0.0, -0.1]), np.zeros(1), np.zeros(3))
    assert classify_all(theta) == [
        NoteStatus.HELPFUL,
        NoteStatus.NEEDS_MORE_RATINGS,
        NoteStatus.NOT_HELPFUL,
    ]
    empty = LatentParams.zeros(1, 0)
    assert classify_all(empty) == []


# ---------------------------------------------------------------------------
# predict linearity invariant
# ---------------------------------------------------------------------------

def test_predict_linear_in_each_block(rng):
    theta = random_theta(rng, 4, 4)
    u, n = 1, 2
    base = predict(theta, u, n)
    for attr in ("mu", "h", "i"):
        bumped = _bump(theta, attr, u, n, 0.25)
        assert predict(bumped, u, n) == pytest.approx(base + 0.25, abs=1e-12)
    bumped_f = _bump(theta, "f", u, n, 0.25)
    assert predict(bumped_f, u, n) == pytest.approx(base + 0.25 * theta.g[n], abs=1e-12)


def _bump(theta, attr, u, n, eps):
    mu, h, i, f, g = theta.mu, theta.h.copy(), theta.i.copy(), theta.f.copy(), theta.g.copy()
    if attr == "mu":
        mu += eps
    elif attr == "h":
        h[u] += eps
    elif attr == "i":
        i[n] += eps
    elif attr == "f":
        f[u] += eps
    return LatentParams(mu, h, i, f, g)
