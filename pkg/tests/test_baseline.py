import cvxpy as cp
import numpy as np
import pytest

from harnet.baseline import LinearOVAConfig, fit_linear_ova, hinge_losses, objectives, train_linear_ova
from harnet.errors import ConfigError


def toy(seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(0, 0.5, (20, 2)) + [2, 2], rng.normal(0, 0.5, (20, 2)) - [2, 2]])
    y = np.r_[np.zeros(20, int), np.ones(20, int)]
    return x, y


def cvx_optimum(x, y, lam):
    """Same objective solved exactly for the class-0 classifier."""
    s = np.where(y == 0, 1.0, -1.0)
    w, b = cp.Variable(x.shape[1]), cp.Variable()
    obj = lam / 2 * cp.sum_squares(w) + cp.sum(cp.pos(1 - cp.multiply(s, x @ w + b))) / len(y)
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve()
    return prob.value, w.value, b.value


def test_separable_toy_problem_against_convex_solver():
    x, y = toy()
    cfg = LinearOVAConfig(lam=1e-2, epochs=400, batch_size=8, eta0=0.5)
    model = fit_linear_ova(x, y, 2, cfg)
    assert np.mean(model.predict(x) == y) == 1.0
    assert np.all(hinge_losses(model, x, y) <= 1e-3)
    opt, w_opt, b_opt = cvx_optimum(x, y, cfg.lam)
    assert np.all(hinge_losses_of(x, y, w_opt, b_opt) <= 1e-6)
    ours = objectives(model, x, y, cfg.lam)[0]
    assert opt <= ours + 1e-9
    assert ours <= 1.05 * opt


def hinge_losses_of(x, y, w, b):
    s = np.where(y == 0, 1.0, -1.0)
    return np.maximum(0, 1 - s * (x @ w + b)).mean()


def test_fit_is_seeded():
    x, y = toy(1)
    a = fit_linear_ova(x, y, 2, LinearOVAConfig(seed=3, epochs=5))
    b = fit_linear_ova(x, y, 2, LinearOVAConfig(seed=3, epochs=5))
    c = fit_linear_ova(x, y, 2, LinearOVAConfig(seed=4, epochs=5))
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)


def test_multiclass_on_synthetic_release(synthetic):
    _, report = train_linear_ova(synthetic, LinearOVAConfig(epochs=20))
    assert report.total == len(synthetic.test)
    assert report.accuracy > 0.5
    assert report.meta["model"] == "linear-ova"


def test_config_validation():
    with pytest.raises(ConfigError):
        LinearOVAConfig(lam=0)
    with pytest.raises(ConfigError):
        LinearOVAConfig(epochs=0)
