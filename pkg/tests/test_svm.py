import numpy as np
import pytest
from sklearn.svm import SVC

from activeauth.data import ChannelId
from activeauth.svm import (
    ConvergenceError,
    DegenerateDataError,
    HyperGrid,
    Scaler,
    TrainedVerifier,
    balanced_accuracy,
    kkt_residuals,
    rbf,
    score_vector,
    session_channel_score,
    solve_dual,
    sq_dists,
    stratified_folds,
    train_verifier,
)


def problem(seed, n=40, d=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    return X, y


def test_sq_dists_matches_naive():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
    naive = [[float(np.sum((a - b) ** 2)) for b in B] for a in A]
    assert np.allclose(sq_dists(A, B, block=2), naive, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_dual_matches_sklearn(seed):
    X, y = problem(seed)
    sigma, C = 1.3, 2.0
    K = rbf(X, X, sigma)
    alpha, b, _ = solve_dual(K, y, C)
    ref = SVC(C=C, kernel="rbf", gamma=1 / (2 * sigma**2), tol=1e-6).fit(X, y)
    ours = K @ (alpha * y) + b
    assert np.max(np.abs(ours - ref.decision_function(X))) < 1e-2
    assert np.isclose(np.sum(alpha * y), 0.0, atol=1e-9)
    assert np.all((alpha >= 0) & (alpha <= C))


def test_kkt_on_random_problems():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(6, 61)), int(rng.integers(2, 11))
        X = rng.normal(size=(n, d))
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        y[:2] = [1, -1]
        C = float(2.0 ** rng.integers(-3, 6))
        K = rbf(X, X, float(rng.uniform(0.5, 4)))
        alpha, b, _ = solve_dual(K, y, C)
        assert kkt_residuals(K, y, alpha, b, C).max() <= 1e-3


def test_iteration_cap_raises():
    X, y = problem(1)
    with pytest.raises(ConvergenceError):
        solve_dual(rbf(X, X, 1.0), y, 8.0, max_iter=1)


def test_xor_fits_perfectly():
    X = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    X = np.vstack([X + 0.01 * k for k in range(5)])
    y = np.tile([1.0, 1.0, -1.0, -1.0], 5)
    grid = HyperGrid(C_values=(32.0,), sigma_values=(0.5,))
    m = train_verifier(X[y > 0], X[y < 0], grid)
    assert np.all(np.sign(m.decision(X[y > 0])) > 0) and np.all(np.sign(m.decision(X[y < 0])) < 0)


def test_input_order_does_not_matter():
    rng = np.random.default_rng(3)
    G, I = rng.normal(1, 1, (20, 3)), rng.normal(-1, 1, (30, 3))
    a = train_verifier(G, I, seed=5)
    pg, pi = rng.permutation(20), rng.permutation(30)
    b = train_verifier(G[pg], I[pi], seed=5)
    probe = rng.normal(size=(10, 3))
    assert np.array_equal(a.decision(probe), b.decision(probe))
    assert (a.C, a.sigma) == (b.C, b.sigma)
    assert np.array_equal(a.oof_scores[:20][pg], b.oof_scores[:20])


def test_degenerate_and_shape_errors():
    same = np.ones((5, 3))
    with pytest.raises(DegenerateDataError):
        train_verifier(same, same)
    with pytest.raises(ValueError):
        train_verifier(np.ones((1, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        HyperGrid(C_values=())
    with pytest.raises(ValueError):
        HyperGrid(folds=1)


def test_constant_dimension_is_harmless():
    rng = np.random.default_rng(4)
    G = np.column_stack([rng.normal(2, 1, 15), np.zeros(15)])
    I = np.column_stack([rng.normal(-2, 1, 25), np.zeros(25)])
    m = train_verifier(G, I)
    assert np.all(m.scaler.scale > 0)
    assert m.cv_accuracy > 0.9


def test_model_json_roundtrip_and_scoring():
    rng = np.random.default_rng(5)
    m = train_verifier(rng.normal(1, 1, (12, 4)), rng.normal(-1, 1, (20, 4)), channel=ChannelId.GYROSCOPE, user_id="u")
    back = TrainedVerifier.from_json(m.to_json())
    probe = rng.normal(size=(6, 4))
    assert np.array_equal(back.decision(probe), m.decision(probe))
    assert score_vector(m, probe[0]) == m.decision(probe[:1])[0]
    assert session_channel_score(m, np.zeros((0, 4))) is None
    with pytest.raises(ValueError, match="4-dim"):
        m.decision(np.zeros((1, 3)))


def test_scaler_inverse():
    X = np.random.default_rng(6).normal(size=(9, 3))
    s = Scaler.fit(X)
    assert np.allclose(s.inverse(s.transform(X)), X)


def test_folds_are_stratified():
    y = np.array([1.0] * 7 + [-1.0] * 11)
    f = stratified_folds(y, 3, np.random.default_rng(0))
    for k in range(3):
        assert 2 <= np.sum((f == k) & (y > 0)) <= 3


def test_balanced_accuracy():
    y = np.array([1, 1, 1, -1.0])
    assert balanced_accuracy(y, np.array([1, 1, 1, 1.0])) == 0.5
