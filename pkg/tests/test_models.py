import numpy as np
import pytest

import carlgd
from carlgd.errors import DivergenceError, InputError, ParseError

from conftest import IRIS_CSV


# ---------------------------------------------------------------- loss/grad

def test_loss_diag_quadratic(diag_spec):
    assert carlgd.loss(diag_spec, carlgd.ParamVector([1.0, 1.0])) == 2.5


def test_loss_scalar_cubic_minimum(cubic_spec):
    assert carlgd.loss(cubic_spec, carlgd.ParamVector([0.0])) == 0.0


def test_grad_diag_quadratic(diag_spec):
    g = carlgd.grad(diag_spec, carlgd.ParamVector([2.0, 1.0]))
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_grad_zero_at_stationary_points(diag_spec, cubic_spec):
    np.testing.assert_array_equal(
        carlgd.grad(diag_spec, carlgd.ParamVector([0.0, 0.0])), [0.0, 0.0])
    np.testing.assert_array_equal(
        carlgd.grad(cubic_spec, carlgd.ParamVector([0.0])), [0.0])


def test_mlp_loss_matches_reference_forward(mlp_spec, iris):
    # independent forward pass written out longhand
    params = carlgd.init_params(mlp_spec, 42)
    theta = params.values
    W1 = theta[:12].reshape(4, 3)
    b1 = theta[12:15]
    W2 = theta[15:24].reshape(3, 3)
    b2 = theta[24:27]
    total = 0.0
    for x, y in zip(iris.features, iris.one_hot):
        a1 = x @ W1 + b1
        h1 = a1 + 0.1 * a1 ** 2
        out = h1 @ W2 + b2
        total += 0.5 * np.sum((out - y) ** 2)
    expected = total / iris.n_samples
    assert abs(carlgd.loss(mlp_spec, params, iris) - expected) < 1e-12


def test_mlp_grad_matches_finite_differences(mlp_spec, iris):
    rng = np.random.default_rng(0)
    h = 1e-4
    worst = 0.0
    for _ in range(20):
        theta = rng.standard_normal(mlp_spec.n) * 0.5
        g = carlgd.grad(mlp_spec, theta, iris)
        fd = np.empty_like(g)
        for j in range(theta.size):
            tp = theta.copy(); tp[j] += h
            tm = theta.copy(); tm[j] -= h
            fd[j] = (carlgd.loss(mlp_spec, tp, iris)
                     - carlgd.loss(mlp_spec, tm, iris)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    assert worst < 1e-5


def test_dimension_mismatch_rejected(diag_spec):
    with pytest.raises(InputError):
        carlgd.loss(diag_spec, carlgd.ParamVector([1.0, 2.0, 3.0]))


# ------------------------------------------------------------- hessian/hvp

def test_hessian_diag_quadratic_constant(diag_spec):
    for theta in ([0.0, 0.0], [3.0, -2.0]):
        H = carlgd.hessian(diag_spec, carlgd.ParamVector(theta))
        np.testing.assert_array_equal(H, np.diag([1.0, 4.0]))


def test_hessian_scalar_cubic(cubic_spec):
    H = carlgd.hessian(cubic_spec, carlgd.ParamVector([1.0]))
    assert H.shape == (1, 1) and H[0, 0] == 4.0


def test_mlp_hessian_symmetric_and_hvp_consistent(mlp_spec, iris):
    rng = np.random.default_rng(1)
    theta = rng.standard_normal(mlp_spec.n) * 0.5
    H = carlgd.hessian(mlp_spec, theta, iris)
    assert np.abs(H - H.T).max() < 1e-10
    for _ in range(5):
        v = rng.standard_normal(mlp_spec.n)
        hv = carlgd.hvp(mlp_spec, theta, iris, v)
        assert np.linalg.norm(hv - H @ v) < 1e-8 * np.linalg.norm(H @ v)


def test_hvp_linear_in_direction(mlp_spec, iris):
    rng = np.random.default_rng(2)
    theta = rng.standard_normal(mlp_spec.n) * 0.5
    u = rng.standard_normal(mlp_spec.n)
    v = rng.standard_normal(mlp_spec.n)
    left = carlgd.hvp(mlp_spec, theta, iris, 2.0 * u + v)
    right = 2.0 * carlgd.hvp(mlp_spec, theta, iris, u) \
        + carlgd.hvp(mlp_spec, theta, iris, v)
    np.testing.assert_allclose(left, right, rtol=1e-12, atol=1e-14)


def test_mlp_hvp_vs_finite_difference_of_grad(iris):
    # includes a deeper net to exercise the layer recursion
    for widths in ((4, 3, 3), (4, 5, 4, 3)):
        spec = carlgd.ModelSpec(kind="mlp", layer_widths=widths,
                                activation="quadratic_poly", alpha=0.1)
        rng = np.random.default_rng(3)
        theta = rng.standard_normal(spec.n) * 0.4
        h = 1e-5
        for _ in range(5):
            v = rng.standard_normal(spec.n)
            fd = (carlgd.grad(spec, theta + h * v, iris)
                  - carlgd.grad(spec, theta - h * v, iris)) / (2 * h)
            hv = carlgd.hvp(spec, theta, iris, v)
            assert np.linalg.norm(hv - fd) < 1e-4 * np.linalg.norm(fd)


def test_dense_hessian_rejected_above_limit(mlp_spec, iris):
    with pytest.raises(InputError):
        carlgd.hessian(mlp_spec, carlgd.init_params(mlp_spec, 0), iris,
                       dense_limit=10)


# ------------------------------------------------------------------- sgd

def test_sgd_one_step_diag(diag_spec):
    traj = carlgd.sgd_reference(diag_spec, carlgd.ParamVector([1.0, 1.0]),
                                eta=0.1, steps=1)
    np.testing.assert_allclose(traj[1], [0.9, 0.6], rtol=0, atol=1e-15)


def test_sgd_eta_zero_is_identity(diag_spec):
    traj = carlgd.sgd_reference(diag_spec, carlgd.ParamVector([1.0, 1.0]),
                                eta=0.0, steps=7)
    assert np.array_equal(traj[-1], [1.0, 1.0])


def test_sgd_full_batch_bitwise_deterministic(mlp_spec, iris):
    p0 = carlgd.init_params(mlp_spec, 5)
    a = carlgd.sgd_reference(mlp_spec, p0, iris, eta=0.05, steps=30)
    b = carlgd.sgd_reference(mlp_spec, p0, iris, eta=0.05, steps=30)
    assert np.array_equal(a, b)


def test_sgd_minibatch_seeded(mlp_spec, iris):
    p0 = carlgd.init_params(mlp_spec, 5)
    a = carlgd.sgd_reference(mlp_spec, p0, iris, eta=0.05, steps=10,
                             batch=32, noise_seed=11)
    b = carlgd.sgd_reference(mlp_spec, p0, iris, eta=0.05, steps=10,
                             batch=32, noise_seed=11)
    c = carlgd.sgd_reference(mlp_spec, p0, iris, eta=0.05, steps=10,
                             batch=32, noise_seed=12)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sgd_masked_coordinates_stay_zero(mlp_spec, iris):
    mask = np.zeros(mlp_spec.n, dtype=bool)
    mask[[0, 5, 20, 26]] = True
    values = np.zeros(mlp_spec.n)
    values[mask] = [0.3, -0.2, 0.4, 0.1]
    traj = carlgd.sgd_reference(mlp_spec, carlgd.ParamVector(values, mask=mask),
                                iris, eta=0.05, steps=25)
    assert np.all(traj[:, ~mask] == 0.0)


def test_sgd_divergence_reports_step(diag_spec):
    with pytest.raises(DivergenceError) as err:
        carlgd.sgd_reference(diag_spec, carlgd.ParamVector([1.0, 1.0]),
                             eta=1.0, steps=100)
    assert err.value.step > 0


def test_iris_gd_loss_decreases_and_matches_independent_loop(mlp_spec, iris):
    p0 = carlgd.init_params(mlp_spec, 0)
    traj = carlgd.sgd_reference(mlp_spec, p0, iris, eta=0.05, steps=100)
    losses = [carlgd.loss(mlp_spec, traj[t], iris) for t in range(101)]
    assert all(losses[t + 1] < losses[t] for t in range(100))
    # independent update loop
    theta = p0.values.copy()
    for _ in range(100):
        theta = theta - 0.05 * carlgd.grad(mlp_spec, theta, iris)
    assert np.array_equal(theta, traj[-1])


# ------------------------------------------------------------------ data

def test_load_iris_canonical(iris):
    assert iris.features.shape == (150, 4)
    assert iris.n_classes == 3
    assert all((iris.labels == c).sum() == 50 for c in range(3))
    np.testing.assert_allclose(iris.features.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(iris.features.std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(iris.one_hot.sum(axis=1), 1.0)


def test_load_iris_without_header(tmp_path):
    src = IRIS_CSV.read_text().splitlines()[1:]
    path = tmp_path / "noheader.csv"
    path.write_text("\n".join(src) + "\n")
    data = carlgd.load_iris(path)
    assert data.features.shape == (150, 4)


def test_load_iris_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("5.1,3.5,1.4,0.2,setosa\n5.0,oops,1.4,0.2,setosa\n")
    with pytest.raises(ParseError, match="line 2"):
        carlgd.load_iris(path)


def test_load_iris_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ParseError):
        carlgd.load_iris(path)


def test_init_params_deterministic(mlp_spec):
    a = carlgd.init_params(mlp_spec, 9)
    b = carlgd.init_params(mlp_spec, 9)
    c = carlgd.init_params(mlp_spec, 10)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_param_vector_rejects_nonzero_masked():
    with pytest.raises(InputError):
        carlgd.ParamVector([1.0, 2.0], mask=[True, False])


def test_grad_degree(mlp_spec, diag_spec, cubic_spec):
    assert diag_spec.grad_degree() == 1
    assert cubic_spec.grad_degree() == 3
    assert mlp_spec.grad_degree() == 5
    linear = carlgd.ModelSpec(kind="mlp", layer_widths=(4, 3, 3),
                              activation="identity")
    assert linear.grad_degree() == 3
