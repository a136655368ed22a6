"""Metrics tests: worked examples, independent oracles, invariances."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bandcm.errors import DataError
from bandcm.metrics import (
    LabeledScores,
    ScoreRow,
    TdcfCosts,
    bhattacharyya,
    det_curve,
    eer,
    fit_score_gaussians,
    labeled_scores,
    min_tdcf,
    pav,
    read_score_file,
    write_score_file,
)


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------

def staircase_points(bona, spoof):
    """All deterministic operating points (p_fa, p_miss) at midpoint thresholds."""
    pooled = np.unique(np.concatenate([bona, spoof]))
    thresholds = np.concatenate([[-np.inf], (pooled[:-1] + pooled[1:]) / 2, [np.inf]])
    points = []
    for t in thresholds:
        p_miss = float(np.mean(bona < t))
        p_fa = float(np.mean(spoof >= t))
        points.append((p_fa, p_miss))
    return sorted(set(points))


def lower_hull(points):
    """Gift-wrapping walk along the lower convex boundary, left to right."""
    xs = [p[0] for p in points]
    x_left, x_right = min(xs), max(xs)
    cur = min(p for p in points if p[0] == x_left)
    target = min((p for p in points if p[0] == x_right), key=lambda p: p[1])
    hull = [cur]
    while cur != target:
        candidates = [p for p in points if p[0] > cur[0]]
        slopes = [(p[1] - cur[1]) / (p[0] - cur[0]) for p in candidates]
        best_slope = min(slopes)
        cur = max(
            (p for p, s in zip(candidates, slopes) if s == best_slope),
            key=lambda p: p[0],
        )
        hull.append(cur)
    return hull


def eer_oracle(bona, spoof):
    """EER from the hull walk: g = p_miss - p_fa decreases along the hull."""
    hull = lower_hull(staircase_points(bona, spoof))
    g = [y - x for x, y in hull]
    if g[0] <= 0:
        return hull[0][0]
    for i in range(len(hull) - 1):
        if g[i] >= 0 >= g[i + 1]:
            if g[i] == g[i + 1]:
                return hull[i][0]
            t = g[i] / (g[i] - g[i + 1])
            return hull[i][0] + t * (hull[i + 1][0] - hull[i][0])
    raise AssertionError("no diagonal crossing found")


def min_tdcf_oracle(bona, spoof, c_miss, c_fa):
    """Exhaustive sweep with explicit per-trial counting."""
    pooled = np.unique(np.concatenate([bona, spoof]))
    thresholds = np.concatenate([[-np.inf], (pooled[:-1] + pooled[1:]) / 2, [np.inf]])
    best = np.inf
    for t in thresholds:
        misses = sum(1 for b in bona if b < t)
        false_alarms = sum(1 for s in spoof if s >= t)
        cost = c_miss * (misses / len(bona)) + c_fa * (false_alarms / len(spoof))
        best = min(best, cost / min(c_miss, c_fa))
    return best


def random_scores(rng, max_n=100):
    nb = int(rng.integers(1, max_n + 1))
    ns = int(rng.integers(1, max_n + 1))
    if rng.random() < 0.3:
        # quantized scores exercise ties across and within classes
        bona = rng.integers(-5, 6, nb).astype(float)
        spoof = rng.integers(-5, 6, ns).astype(float)
    else:
        bona = rng.normal(1.0, 1.5, nb)
        spoof = rng.normal(-1.0, 1.5, ns)
    return bona, spoof


# ---------------------------------------------------------------------------
# EER
# ---------------------------------------------------------------------------

class TestEer:
    def test_perfectly_separated(self):
        assert eer(LabeledScores([1.0, 2.0, 3.0], [-1.0, 0.0])) == 0.0

    def test_identical_multisets(self):
        scores = LabeledScores([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
        assert eer(scores) == pytest.approx(0.5, abs=1e-12)

    def test_worked_example(self):
        scores = LabeledScores([1.0, 3.0], [0.0, 2.0])
        assert eer(scores) == pytest.approx(0.25, abs=1e-12)

    def test_matches_hull_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            bona, spoof = random_scores(rng)
            got = eer(LabeledScores(bona, spoof))
            want = eer_oracle(bona, spoof)
            assert got == pytest.approx(want, abs=1e-10)

    @given(
        bona=st.lists(st.integers(-40, 40), min_size=1, max_size=30),
        spoof=st.lists(st.integers(-40, 40), min_size=1, max_size=30),
        scale=st.floats(0.1, 10.0),
        shift=st.floats(-5.0, 5.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_invariant_under_increasing_transforms(self, bona, spoof, scale, shift):
        base = LabeledScores(np.array(bona, float), np.array(spoof, float))
        affine = LabeledScores(scale * base.bona + shift, scale * base.spoof + shift)
        cubed = LabeledScores(base.bona**3, base.spoof**3)
        assert eer(affine) == pytest.approx(eer(base), abs=1e-12)
        assert eer(cubed) == pytest.approx(eer(base), abs=1e-12)

    def test_empty_class_rejected(self):
        with pytest.raises(DataError):
            LabeledScores(np.array([]), np.array([1.0]))


def test_pav_is_nondecreasing_best_fit():
    rng = np.random.default_rng(3)
    y = rng.normal(size=50)
    fitted, widths = pav(y)
    assert widths.sum() == y.size
    assert np.all(np.diff(fitted) >= 0)
    # block means match the data they cover
    start = 0
    for w in widths:
        assert fitted[start] == pytest.approx(np.mean(y[start:start + w]))
        start += w


# ---------------------------------------------------------------------------
# min t-DCF
# ---------------------------------------------------------------------------

class TestMinTdcf:
    def test_perfect_cm(self):
        assert min_tdcf(LabeledScores([1.0, 2.0], [-1.0, -2.0])) == 0.0

    def test_worked_example(self):
        scores = LabeledScores([1.0, 3.0], [0.0, 2.0])
        assert min_tdcf(scores, TdcfCosts(1.0, 1.0)) == 0.5

    def test_bounded_by_one(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            bona, spoof = random_scores(rng, max_n=30)
            for costs in (TdcfCosts(1, 10), TdcfCosts(5, 0.5), TdcfCosts(2, 2)):
                assert min_tdcf(LabeledScores(bona, spoof), costs) <= 1.0 + 1e-15

    def test_matches_exhaustive_sweep_exactly(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            bona, spoof = random_scores(rng, max_n=40)
            costs = TdcfCosts(float(rng.uniform(0.2, 5)), float(rng.uniform(0.2, 5)))
            got = min_tdcf(LabeledScores(bona, spoof), costs)
            assert got == min_tdcf_oracle(bona, spoof, costs.c_miss, costs.c_fa)

    @given(
        bona=st.lists(st.integers(-40, 40), min_size=1, max_size=25),
        spoof=st.lists(st.integers(-40, 40), min_size=1, max_size=25),
        factor=st.floats(0.01, 100.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_invariances(self, bona, spoof, factor):
        base = LabeledScores(np.array(bona, float), np.array(spoof, float))
        costs = TdcfCosts(1.0, 10.0)
        value = min_tdcf(base, costs)
        transformed = LabeledScores(base.bona**3, base.spoof**3)
        assert min_tdcf(transformed, costs) == value
        scaled = TdcfCosts(factor * costs.c_miss, factor * costs.c_fa)
        assert min_tdcf(base, scaled) == pytest.approx(value, abs=1e-12)


# ---------------------------------------------------------------------------
# Bhattacharyya distance and score Gaussians
# ---------------------------------------------------------------------------

class TestBhattacharyya:
    def test_identical_distributions(self):
        assert bhattacharyya(0.3, 1.2, 0.3, 1.2) == pytest.approx(0.0, abs=1e-12)

    def test_unit_mean_gap(self):
        assert bhattacharyya(1.0, 1.0, -1.0, 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_variance_ratio_only(self):
        want = 0.25 * np.log(25.0 / 16.0)
        assert bhattacharyya(0.7, 2.0, 0.7, 1.0) == pytest.approx(want, abs=1e-12)

    @given(
        mu_b=st.floats(-5, 5), mu_s=st.floats(-5, 5),
        sigma_b=st.floats(0.1, 5), sigma_s=st.floats(0.1, 5),
    )
    @settings(max_examples=60, deadline=None)
    def test_symmetric_and_zero_iff_equal(self, mu_b, mu_s, sigma_b, sigma_s):
        d = bhattacharyya(mu_b, sigma_b, mu_s, sigma_s)
        assert d == pytest.approx(bhattacharyya(mu_s, sigma_s, mu_b, sigma_b), abs=1e-12)
        assert d >= -1e-15
        if abs(mu_b - mu_s) > 1e-9 or abs(sigma_b - sigma_s) > 1e-9:
            assert d > 0

    def test_rejects_bad_sigma(self):
        with pytest.raises(DataError):
            bhattacharyya(0, 0.0, 1, 1.0)


class TestFitScoreGaussians:
    def test_two_point_class(self):
        scores = LabeledScores([0.0, 2.0], [5.0, 6.0, 7.0])
        mu_b, sigma_b, _, _ = fit_score_gaussians(scores)
        assert mu_b == pytest.approx(1.0)
        assert sigma_b == pytest.approx(np.sqrt(2.0))

    def test_constant_class_flagged(self):
        with pytest.raises(DataError):
            fit_score_gaussians(LabeledScores([1.0, 1.0], [0.0, 2.0]))

    def test_symmetric_class_zero_mean(self):
        scores = LabeledScores([-3.5, 3.5], [0.0, 1.0])
        mu_b, _, _, _ = fit_score_gaussians(scores)
        assert mu_b == 0.0


# ---------------------------------------------------------------------------
# DET points and score files
# ---------------------------------------------------------------------------

def test_det_curve_endpoints_and_monotonicity():
    rng = np.random.default_rng(5)
    bona, spoof = random_scores(rng, max_n=40)
    p_fa, p_miss = det_curve(LabeledScores(bona, spoof))
    assert p_fa[0] == 1.0 and p_miss[0] == 0.0
    assert p_fa[-1] == 0.0 and p_miss[-1] == 1.0
    assert np.all(np.diff(p_fa) <= 0)
    assert np.all(np.diff(p_miss) >= 0)


def test_score_file_round_trip(tmp_path):
    rows = [
        ScoreRow("utt_0001", "-", "bonafide", 1.25),
        ScoreRow("utt_0002", "A01", "spoof", -0.5),
    ]
    path = tmp_path / "scores.txt"
    write_score_file(path, rows, header_comment="config deadbeef")
    back = read_score_file(path)
    assert back == rows
    pooled = labeled_scores(back)
    assert pooled.bona.tolist() == [1.25]
    assert pooled.spoof.tolist() == [-0.5]


def test_score_file_rejects_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("utt - bonafide\n")
    with pytest.raises(DataError, match="expected 4 fields"):
        read_score_file(path)
    path.write_text("utt - wrongkey 0.5\n")
    with pytest.raises(DataError, match="bad key"):
        read_score_file(path)


def test_labeled_scores_per_attack_shares_bona():
    rows = [
        ScoreRow("u1", "-", "bonafide", 2.0),
        ScoreRow("u2", "A01", "spoof", -1.0),
        ScoreRow("u3", "A02", "spoof", 0.5),
    ]
    per = labeled_scores(rows, attack_id="A01")
    assert per.bona.tolist() == [2.0]
    assert per.spoof.tolist() == [-1.0]
    with pytest.raises(DataError):
        labeled_scores(rows, attack_id="A99")
