from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densityfusion.core import BScore
from densityfusion.errors import DegenerateLabelsError, NonFiniteFeatureError, RangeError, SchemaMismatchError
from densityfusion.radiomics import RadiomicFeatureVector
from densityfusion.risk import (
    BScoreBins,
    EnsembleModel,
    Group,
    LinearModel,
    ensemble_score,
    format_model,
    load_model,
    logistic_loss_grad,
    mammo_positive,
    parse_model,
    save_model,
    score_group,
    select_threshold_youden,
    sigmoid,
    thermalytix_positive,
    to_bscore,
    train_ensemble,
    train_logistic,
    train_thermal_model,
    youden_candidates,
)


def _numeric_grad(w, b, Z, y, lam, h=1e-5):
    gw = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        gw[i] = (logistic_loss_grad(w + e, b, Z, y, lam)[0] - logistic_loss_grad(w - e, b, Z, y, lam)[0]) / (2 * h)
    gb = (logistic_loss_grad(w, b + h, Z, y, lam)[0] - logistic_loss_grad(w, b - h, Z, y, lam)[0]) / (2 * h)
    return gw, gb


def _youden_brute(scores, labels):
    """Exact J at every candidate, scored by direct comparison; largest best threshold."""
    s = np.asarray(scores, float)
    y = np.asarray(labels, bool)
    P, N = int(y.sum()), int((~y).sum())
    js = []
    for t in youden_candidates(s):
        pred = s > t
        js.append((Fraction(int((pred & y).sum()), P) + Fraction(int((~pred & ~y).sum()), N), t))
    best = max(j for j, _ in js)
    return max(t for j, t in js if j == best)


class TestSigmoid:
    def test_extremes_stable(self):
        np.testing.assert_array_equal(sigmoid(np.array([-1000.0, 0.0, 1000.0])), [0.0, 0.5, 1.0])

    def test_scalar(self):
        assert sigmoid(0.0) == 0.5


class TestLogistic:
    def test_separable_one_d(self):
        x = np.r_[np.linspace(-3, -0.5, 20), np.linspace(0.5, 3, 20)]
        y = (x > 0).astype(float)
        m = train_logistic(x[:, None], y, lam=0.1)
        pred = np.array([score_group(m, [v]) for v in x]) > 0.5
        assert np.all(pred == (y > 0))

    def test_single_class(self):
        with pytest.raises(DegenerateLabelsError):
            train_logistic(np.ones((5, 2)), np.ones(5))

    def test_non_finite(self):
        X = np.ones((4, 2))
        X[0, 0] = np.inf
        with pytest.raises(NonFiniteFeatureError):
            train_logistic(X, [0, 1, 0, 1])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    def test_gradient_matches_finite_difference(self, seed, lam):
        rng = np.random.default_rng(seed)
        Z = rng.normal(size=(30, 4))
        y = (rng.random(30) < 0.5).astype(float)
        w, b = rng.normal(size=4), float(rng.normal())
        _, gw, gb = logistic_loss_grad(w, b, Z, y, lam)
        nw, nb = _numeric_grad(w, b, Z, y, lam)
        assert np.all(np.abs(gw - nw) <= 1e-5 * (1 + np.abs(gw)))
        assert abs(gb - nb) <= 1e-5 * (1 + abs(gb))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_loss_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 3))
        y = (X[:, 0] + rng.normal(0, 1, 40) > 0).astype(float)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        h = np.array(train_logistic(X, y, lr=5.0, iters=200).loss_history)
        assert np.all(np.diff(h) <= 0)

    def test_bias_not_penalised(self):
        w = np.zeros(2)
        Z = np.zeros((4, 2))
        y = np.array([1.0, 1.0, 1.0, 0.0])
        a = logistic_loss_grad(w, 3.0, Z, y, 0.0)[0]
        b = logistic_loss_grad(w, 3.0, Z, y, 10.0)[0]
        assert a == b

    def test_zero_variance_feature(self):
        X = np.c_[np.ones(6), np.arange(6.0)]
        m = train_logistic(X, [0, 0, 0, 1, 1, 1])
        assert m.std[0] == 1.0
        assert np.all(np.isfinite(m.weights))

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3))
        y = (X[:, 1] > 0).astype(float)
        assert train_logistic(X, y) == train_logistic(X, y)


class TestScoreGroup:
    def test_zero_model_is_half(self):
        m = LinearModel(np.zeros(3), 0.0, np.zeros(3), np.ones(3))
        assert score_group(m, [5.0, -2.0, 1.0]) == 0.5

    def test_known_value(self):
        m = LinearModel([1.0, 0.0], -1.0, [1.0, 0.0], [2.0, 1.0])
        # (5 - 1)/2 * 1 - 1 = 1
        assert score_group(m, [5.0, 9.0]) == pytest.approx(1 / (1 + np.exp(-1.0)), rel=1e-12)

    def test_group_slice_from_vector(self):
        v = np.zeros(20)
        v[16:20] = [1.0, 2.0, 3.0, 4.0]
        m = LinearModel([0, 0, 1.0, 0], 0.0, np.zeros(4), np.ones(4), Group.AREOLAR)
        assert score_group(m, RadiomicFeatureVector(v)) == pytest.approx(float(sigmoid(3.0)))

    def test_dimension_checked(self):
        m = LinearModel(np.zeros(3), 0.0, np.zeros(3), np.ones(3))
        with pytest.raises(SchemaMismatchError):
            score_group(m, [1.0, 2.0])


class TestEnsemble:
    def test_zero_model(self):
        assert ensemble_score(EnsembleModel(), 0.9, 0.9, 0.9, 50, True) == 0.5

    def test_known_value(self):
        e = EnsembleModel(1.0, 1.0, 1.0, 1.0, 0.5, -2.0)
        # 0.5 + 0.5 + 0.5 + 0.6 + 0.5 - 2 = 0.6
        assert ensemble_score(e, 0.5, 0.5, 0.5, 60, True) == pytest.approx(float(sigmoid(0.6)), rel=1e-12)

    def test_fold_back_matches_standardised_model(self):
        rng = np.random.default_rng(2)
        S = rng.random((50, 3))
        ages = rng.integers(30, 75, 50)
        meno = ages >= 50
        y = (S.sum(1) + rng.normal(0, 0.3, 50) > 1.5).astype(float)
        e, _ = train_ensemble(S, ages, meno, y)
        X = np.c_[S, ages / 100.0, meno.astype(float)]
        m = train_logistic(X, y, lam=0.01)
        for i in range(50):
            assert ensemble_score(e, *S[i], ages[i], meno[i]) == pytest.approx(
                float(sigmoid(m.decision(X[i]))), rel=1e-9)


class TestBScore:
    @pytest.mark.parametrize("p,grade", [(0.0, 1), (0.1499, 1), (0.15, 2), (0.34, 2), (0.35, 3),
                                         (0.59, 3), (0.60, 4), (0.85, 5), (1.0, 5)])
    def test_default_bins(self, p, grade):
        assert to_bscore(p).grade == grade

    def test_tie_goes_up(self):
        assert to_bscore(0.4, BScoreBins((0.2, 0.4, 0.6, 0.8))).grade == 3

    @pytest.mark.parametrize("cuts", [(0.1, 0.2, 0.3), (0.3, 0.2, 0.5, 0.6), (0.0, 0.2, 0.5, 0.6)])
    def test_bad_bins(self, cuts):
        with pytest.raises(RangeError):
            BScoreBins(cuts)

    @pytest.mark.parametrize("grade,pos", [(1, False), (2, False), (3, True), (4, True), (5, True)])
    def test_thermal_call(self, grade, pos):
        assert thermalytix_positive(BScore(grade)) is pos

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert to_bscore(lo).grade <= to_bscore(hi).grade


class TestMammoThreshold:
    @pytest.mark.parametrize("p,pos", [(0.43, False), (0.4300001, True), (0.42, False), (0.9, True)])
    def test_strict(self, p, pos):
        assert mammo_positive(p) is pos


class TestYouden:
    def test_perfect_split(self):
        t = select_threshold_youden([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert t == pytest.approx(0.5)

    def test_candidates(self):
        np.testing.assert_array_equal(youden_candidates([0.3, 0.1, 0.3]), [-np.inf, 0.2, np.inf])

    def test_single_class(self):
        with pytest.raises(DegenerateLabelsError):
            select_threshold_youden([0.1, 0.2], [1, 1])

    def test_all_tied_scores(self):
        # every candidate gives J = 0; the largest wins
        assert select_threshold_youden([0.5] * 4, [0, 1, 0, 1]) == np.inf

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=40))
    def test_matches_brute_force(self, pairs):
        scores = [s / 20 for s, _ in pairs]
        labels = [l for _, l in pairs]
        if all(labels) or not any(labels):
            labels[0] = not labels[0]
        assert select_threshold_youden(scores, labels) == _youden_brute(scores, labels)


def _toy_model(seed=0):
    rng = np.random.default_rng(seed)
    n = 30
    y = np.r_[np.ones(n // 2), np.zeros(n - n // 2)]
    vecs = [RadiomicFeatureVector(rng.normal(size=20) + 1.5 * y[i]) for i in range(n)]
    ages = rng.integers(30, 75, n)
    return train_thermal_model(vecs, ages, ages >= 50, y, iters=200), vecs, ages


class TestModelFile:
    def test_round_trip_exact(self, tmp_path):
        (model, _), _, _ = _toy_model()
        p = tmp_path / "m.txt"
        save_model(model, p)
        back = load_model(p)
        assert back == model
        assert format_model(back) == p.read_text()

    def test_training_bytes_reproducible(self):
        (a, la), _, _ = _toy_model(3)
        (b, lb), _, _ = _toy_model(3)
        assert format_model(a) == format_model(b)
        assert la == lb

    def test_wrong_schema(self):
        (model, _), _, _ = _toy_model()
        text = format_model(model).replace("feature_schema=radiomics-v1", "feature_schema=radiomics-v2")
        with pytest.raises(SchemaMismatchError):
            parse_model(text)

    def test_missing_key(self):
        (model, _), _, _ = _toy_model()
        text = "\n".join(l for l in format_model(model).splitlines() if not l.startswith("ensemble.bias"))
        with pytest.raises(SchemaMismatchError):
            parse_model(text)

    def test_vector_version_checked(self):
        (model, _), vecs, _ = _toy_model()
        with pytest.raises(SchemaMismatchError):
            model.score(RadiomicFeatureVector(vecs[0].values, "radiomics-v0"), 50, True)

    def test_score_fields(self):
        (model, _), vecs, ages = _toy_model()
        s = model.score(vecs[0], ages[0], True)
        assert 0 < s["ensemble"] < 1
        assert s["thermal_positive"] is thermalytix_positive(s["bscore"])
