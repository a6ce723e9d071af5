import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ices.nn import (
    Adam,
    CategoricalDist,
    DimensionError,
    LatentGaussian,
    NumericError,
    OptimizerState,
    ParamStore,
    Tape,
    Tensor,
    adam_step,
    categorical_entropy,
    categorical_sample,
    clip_grad_norm,
    gru_cell,
    init_gru,
    init_mlp,
    kl_diag_gaussian,
    mlp_forward,
    reparameterize,
)
from ices.nn import T
from ices.nn.gradcheck import check_gradients

TOL = 1e-4


def gaussian(mean, log_var):
    return LatentGaussian(Tensor(np.asarray(mean, float)), Tensor(np.asarray(log_var, float)))


# -- dense stacks -------------------------------------------------------------
def test_zero_mlp_outputs_zero():
    store = ParamStore()
    layers = init_mlp(store, "net", [5, 7, 3], np.random.default_rng(0))
    for t in store.tensors():
        t.data[...] = 0.0
    out = mlp_forward(store, layers, np.random.default_rng(1).normal(size=(4, 5)))
    assert np.array_equal(out.data, np.zeros((4, 3)))


def test_identity_layer_passes_input_through():
    store = ParamStore()
    store.add("id.0.w", np.eye(4))
    store.add("id.0.b", np.zeros(4))
    v = np.array([0.3, -1.2, 2.0, 5.5])
    assert np.array_equal(mlp_forward(store, ["id.0"], v).data, v)


def test_mlp_rejects_wrong_fan_in():
    store = ParamStore()
    layers = init_mlp(store, "net", [5, 3], np.random.default_rng(0))
    with pytest.raises(DimensionError):
        mlp_forward(store, layers, np.zeros((2, 4)))


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    store = ParamStore()
    layers = init_mlp(store, "net", [4, 6, 3], rng)
    x = rng.uniform(-1, 1, size=(5, 4))
    target = rng.uniform(-1, 1, size=(5, 3))

    def loss():
        out = mlp_forward(store, layers, x, activation="tanh")
        return T.mean(T.square(out - target))

    assert check_gradients(store, loss) <= TOL


# -- recurrent cell ------------------------------------------------------------
def make_gru(rng, input_dim=3, hidden=5, scale=1.0):
    store = ParamStore()
    init_gru(store, "gru", input_dim, hidden, rng)
    for t in store.tensors():
        t.data *= scale
    return store


def test_zero_gru_halves_hidden_state():
    store = make_gru(np.random.default_rng(0))
    for t in store.tensors():
        t.data[...] = 0.0
    h = np.array([0.4, -0.8, 0.1, 0.0, 0.9])
    out = gru_cell(store, "gru", np.ones(3), h)
    np.testing.assert_allclose(out.data, h / 2, atol=1e-15)


def test_gru_hidden_dim_mismatch():
    store = make_gru(np.random.default_rng(0))
    with pytest.raises(DimensionError):
        gru_cell(store, "gru", np.ones(3), np.zeros(4))


def test_gru_output_bounded():
    rng = np.random.default_rng(3)
    store = make_gru(rng, scale=3.0)
    h = np.zeros((8, 5))
    for _ in range(50):
        h = gru_cell(store, "gru", rng.normal(size=(8, 3)) * 4, h).data
        assert np.all(np.abs(h) < 1.0)


def test_gru_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    store = make_gru(rng)
    xs = rng.uniform(-1, 1, size=(3, 2, 3))
    h0 = rng.uniform(-1, 1, size=(2, 5))

    def loss():
        h = Tensor(h0)
        total = 0.0
        for x in xs:
            h = gru_cell(store, "gru", x, h)
            total = total + T.tsum(h * h) + T.tsum(h)
        return total

    assert check_gradients(store, loss) <= TOL


def test_gru_reaches_fixed_point_on_constant_input():
    rng = np.random.default_rng(5)
    store = make_gru(rng, scale=0.3)
    x = rng.uniform(-1, 1, size=3)
    h = np.zeros(5)
    for _ in range(200):
        prev, h = h, gru_cell(store, "gru", x, h).data
    assert np.max(np.abs(h - prev)) < 1e-6


# -- primitive op gradients -----------------------------------------------------
_W = np.random.default_rng(123).uniform(-1, 1, size=(4, 3, 9))


def _fused_gru(a, b):
    return T.gru(a, b, Tensor(_W[0]), Tensor(_W[1]), Tensor(_W[2, 0]), Tensor(_W[3, 0]))


OPS = {
    "affine": lambda a, b: T.tsum(T.affine(a, T.reshape(b, (3, 4)), Tensor(_W[0, 0, :4])) ** 2),
    "gru_inputs": lambda a, b: T.tsum(_fused_gru(a, b) ** 2 + _fused_gru(a, b)),
    "tanh": lambda a, b: T.tsum(T.tanh(a) * b),
    "sigmoid": lambda a, b: T.tsum(T.sigmoid(a) * b),
    "elu": lambda a, b: T.tsum(T.elu(a) * b),
    "exp_log": lambda a, b: T.tsum(T.log(T.exp(a) + 2.0) * b),
    "div": lambda a, b: T.tsum(a / (T.square(b) + 1.0)),
    "abs": lambda a, b: T.tsum(T.absolute(a) * b),
    "matmul": lambda a, b: T.tsum(T.matmul(a, T.reshape(b, (3, 4))) ** 2),
    "log_softmax": lambda a, b: T.tsum(T.log_softmax(a * b) * b),
    "concat_slice": lambda a, b: T.tsum(T.concat([a, b], axis=0)[1:4] ** 3),
    "take_along": lambda a, b: T.tsum(T.take_along(a * b, np.array([[0], [2], [2], [1]]), axis=-1)),
    "transpose": lambda a, b: T.tsum(T.transpose(T.reshape(a, (2, 2, 3)), (2, 0, 1)) * T.reshape(b, (3, 2, 2))),
    "mean_axis": lambda a, b: T.tsum(T.mean(a * b, axis=0) ** 2),
    "stack_where": lambda a, b: T.tsum(T.where(np.eye(4, 3) > 0, T.stack([a, b])[0], b * 2.0)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    store = ParamStore()
    store.add("a", rng.uniform(-1, 1, size=(4, 3)))
    store.add("b", rng.uniform(-1, 1, size=(4, 3)))
    fn = OPS[name]
    assert check_gradients(store, lambda: fn(store["a"], store["b"])) <= TOL


def test_no_tape_means_no_recording():
    store = ParamStore()
    store.add("a", np.ones(3))
    out = T.tanh(store["a"])
    assert not out.requires_grad


def test_backward_rejects_non_scalar_and_non_finite():
    store = ParamStore()
    store.add("a", np.ones(3))
    with Tape() as tape:
        with pytest.raises(DimensionError):
            tape.backward(store["a"] * 2.0)
        with np.errstate(divide="ignore"), pytest.raises(NumericError):
            tape.backward(T.tsum(T.log(store["a"] - 1.0)))


# -- Gaussian KL --------------------------------------------------------------
def test_kl_identity_is_zero():
    p = gaussian([0.3, -1.0, 2.0], [0.5, -2.0, 1.0])
    assert abs(kl_diag_gaussian(p, p).item()) <= 1e-12


def test_kl_unit_mean_shift():
    assert kl_diag_gaussian(gaussian([1.0], [0.0]), gaussian([0.0], [0.0])).item() == pytest.approx(0.5)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(6)
    for _ in range(3):
        p = gaussian(rng.normal(size=4), rng.uniform(-1, 1, size=4))
        q = gaussian(rng.normal(size=4), rng.uniform(-1, 1, size=4))
        z = p.mean.data + p.std * rng.standard_normal((10**6, 4))
        mc = np.mean(p.log_prob(z) - q.log_prob(z))
        closed = kl_diag_gaussian(p, q).item()
        assert abs(closed - mc) <= 0.01 * closed


def test_kl_rejects_non_finite():
    with pytest.raises(NumericError):
        kl_diag_gaussian(gaussian([np.nan], [0.0]), gaussian([0.0], [0.0]))


def test_kl_latent_dim_mismatch():
    with pytest.raises(DimensionError):
        kl_diag_gaussian(gaussian([0.0], [0.0]), gaussian([0.0, 1.0], [0.0, 0.0]))


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 6, elements=finite), arrays(float, 6, elements=finite))
def test_kl_non_negative(a, b):
    p = gaussian(a[:3], a[3:])
    q = gaussian(b[:3], b[3:])
    assert kl_diag_gaussian(p, q).item() >= -1e-12


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    store = ParamStore()
    for n in ("mp", "lp", "mq", "lq"):
        store.add(n, rng.uniform(-1, 1, size=(3, 4)))

    def loss():
        p = LatentGaussian(store["mp"], store["lp"])
        q = LatentGaussian(store["mq"], store["lq"])
        return T.tsum(kl_diag_gaussian(p, q))

    assert check_gradients(store, loss) <= TOL


def test_log_var_is_clamped_by_head():
    head = Tensor(np.array([0.0, 0.0, -50.0, 50.0]))
    dist = LatentGaussian.from_head(head)
    assert list(dist.log_var.data) == [-10.0, 10.0]


# -- reparameterization ---------------------------------------------------------
def test_reparameterize_zero_noise_is_mean():
    d = gaussian([1.0, -2.0], [0.3, 0.7])
    assert np.array_equal(reparameterize(d, np.zeros(2)).data, d.mean.data)


def test_reparameterize_vanishing_scale():
    d = LatentGaussian.from_head(Tensor(np.array([2.0, -1.0, -1e6, -1e6])))
    noise = np.array([3.0, -4.0])
    out = reparameterize(d, noise).data
    assert np.all(np.abs(out - d.mean.data) <= np.exp(-5) * np.abs(noise) * (1 + 1e-12))


def test_reparameterize_law_of_large_numbers():
    rng = np.random.default_rng(8)
    d = gaussian([0.5, -1.5, 2.0], [0.2, -0.4, 1.0])
    draws = reparameterize(d, rng.standard_normal((10**5, 3))).data
    stderr = d.std / np.sqrt(10**5)
    assert np.all(np.abs(draws.mean(axis=0) - d.mean.data) <= 3 * stderr)


def test_reparameterize_noise_shape():
    with pytest.raises(DimensionError):
        reparameterize(gaussian([0.0, 0.0], [0.0, 0.0]), np.zeros(3))


# -- categorical ------------------------------------------------------------------
def test_one_hot_categorical():
    logits = np.full(5, -50.0)
    logits[3] = 50.0
    dist = CategoricalDist(Tensor(logits))
    assert categorical_entropy(dist).item() == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(0)
    assert all(categorical_sample(dist, rng) == 3 for _ in range(1000))


def test_uniform_categorical_entropy():
    dist = CategoricalDist(Tensor(np.zeros(4)))
    assert categorical_entropy(dist).item() == pytest.approx(np.log(4), abs=1e-12)


def test_categorical_frequencies_within_multinomial_bounds():
    rng = np.random.default_rng(9)
    logits = np.array([0.5, -1.0, 1.2, 0.0])
    dist = CategoricalDist(Tensor(np.tile(logits, (10**5, 1))))
    samples = dist.sample(rng)
    p = dist.probs()[0]
    freq = np.bincount(samples, minlength=4) / 10**5
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / 10**5))


def test_degenerate_categorical():
    with pytest.raises(NumericError):
        CategoricalDist(Tensor(np.full(3, -np.inf)))


@settings(max_examples=100, deadline=None)
@given(arrays(float, 5, elements=st.floats(-20, 20)))
def test_entropy_bounds(logits):
    h = categorical_entropy(CategoricalDist(Tensor(logits))).item()
    assert -1e-12 <= h <= np.log(5) + 1e-12


# -- clipping and Adam ----------------------------------------------------------
def test_clip_small_norm_unchanged():
    g = [np.array([0.03, 0.04])]
    clipped, norm = clip_grad_norm(g, 0.1)
    assert norm == pytest.approx(0.05)
    assert np.array_equal(clipped[0], g[0])


def test_clip_large_norm_scaled():
    g = [np.array([0.6]), np.array([0.8])]
    clipped, _ = clip_grad_norm(g, 0.1)
    np.testing.assert_allclose(np.concatenate(clipped), [0.06, 0.08], rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 7, elements=st.floats(-100, 100)), st.floats(1e-3, 10))
def test_clip_preserves_direction(g, max_norm):
    clipped, _ = clip_grad_norm([g[:3], g[3:]], max_norm)
    c = np.concatenate(clipped)
    assert np.linalg.norm(c) <= max_norm * (1 + 1e-12)
    if np.linalg.norm(g) > 0:
        cos = c @ g / (np.linalg.norm(c) * np.linalg.norm(g))
        assert abs(cos - 1.0) <= 1e-12


def test_clip_rejects_non_finite():
    with pytest.raises(NumericError):
        clip_grad_norm([np.array([np.inf])], 1.0)


def test_adam_minimizes_quadratic():
    x = np.array([1.0])
    state = OptimizerState([np.zeros(1)], [np.zeros(1)])
    for step in range(500):
        adam_step([x], [2 * x], state, lr=0.1)
        if abs(x[0]) < 1e-3:
            break
    assert abs(x[0]) < 1e-3


def test_adam_zero_lr_leaves_params():
    store = ParamStore()
    store.add("w", np.array([1.0, 2.0]))
    opt = Adam(store, lr=0.0)
    store["w"].grad = np.array([0.5, -0.5])
    opt.step()
    assert np.array_equal(store["w"].data, [1.0, 2.0])


def test_forward_is_deterministic():
    rng = np.random.default_rng(10)
    store = ParamStore()
    layers = init_mlp(store, "net", [3, 4, 2], rng)
    x = rng.normal(size=(2, 3))
    assert np.array_equal(mlp_forward(store, layers, x).data, mlp_forward(store, layers, x).data)
