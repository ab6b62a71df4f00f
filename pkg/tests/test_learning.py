import numpy as np
import pytest

from mdca.checkpoint import encode
from mdca.io import preprocess
from mdca.lca import LcaParams
from mdca.learning import TrainConfig, apply_update, dict_gradient, pathway_gradients, train_pathway
from mdca.network import NetworkConfig, Pathway, compose_synthesize, infer
from mdca.synthetic import face_like, oriented_bars
from mdca.tensor import DictionaryLayer, GeometryError, synthesize


def half_sq_error(x, acts, pathway):
    r = x - sum(compose_synthesize(a, pathway, k) for k, a in enumerate(acts))
    return 0.5 * float(np.sum(r * r))


def fd_gradient(x, acts, pathway, layer, idx, h=1e-3):
    """Central difference of -0.5||x - xhat||^2 with respect to one weight."""
    out = []
    for i in idx:
        vals = []
        for sign in (1, -1):
            layers = [d.copy() for d in pathway.layers]
            layers[layer].weights[i] += sign * h
            vals.append(half_sq_error(x, acts, Pathway("p", layers)))
        out.append(-(vals[0] - vals[1]) / (2 * h))
    return np.array(out)


def test_zero_activations_give_zero_gradient(rng):
    d = DictionaryLayer.random(3, 4, 2, 2, rng)
    assert not dict_gradient(rng.standard_normal((8, 8, 2)), np.zeros((4, 4, 3)), d).any()


def test_single_unit_gradient_is_scaled_patch(rng):
    d = DictionaryLayer.random(2, 4, 1, 4, rng, dtype=np.float64)
    patch = rng.standard_normal((4, 4, 1))
    r = np.zeros((8, 8, 1))
    r[4:8, 0:4] = patch
    a = np.zeros((2, 2, 2))
    a[1, 0, 1] = 2.5
    g = dict_gradient(r, a, d)
    np.testing.assert_allclose(g[1], 2.5 * patch)
    assert not g[0].any()


@pytest.mark.parametrize("f,k,c,s", [(3, 4, 2, 2), (2, 8, 3, 4), (4, 6, 1, 4), (3, 3, 2, 1)])
def test_dict_gradient_finite_difference(rng, f, k, c, s):
    d = DictionaryLayer.random(f, k, c, s, rng, dtype=np.float64)
    x = rng.standard_normal((4 * s, 4 * s, c))
    a = np.abs(rng.standard_normal((4, 4, f)))
    pw = Pathway("p", [d])
    g = dict_gradient(x - synthesize(a, d), a, d)
    idx = [tuple(int(rng.integers(n)) for n in d.weights.shape) for _ in range(20)]
    fd = fd_gradient(x, [a], pw, 0, idx)
    np.testing.assert_allclose([g[i] for i in idx], fd, rtol=1e-4, atol=1e-8)


def test_hierarchical_gradient_finite_difference(rng):
    spec = [(3, 4, 1, 2), (4, 4, 3, 2), (5, 4, 4, 2)]
    pw = Pathway("p", [DictionaryLayer.random(f, k, c, s, rng, dtype=np.float64) for f, k, c, s in spec])
    x = rng.standard_normal((16, 16, 1))
    acts = [np.abs(rng.standard_normal(shp)) for shp in [(8, 8, 3), (4, 4, 4), (2, 2, 5)]]
    r = x - sum(compose_synthesize(a, pw, k) for k, a in enumerate(acts))
    grads = pathway_gradients(r, acts, pw)
    for layer, g in enumerate(grads):
        idx = [tuple(int(rng.integers(n)) for n in g.shape) for _ in range(15)]
        np.testing.assert_allclose([g[i] for i in idx], fd_gradient(x, acts, pw, layer, idx),
                                   rtol=1e-4, atol=1e-8)


def test_gradient_shape_errors(rng):
    d = DictionaryLayer.random(3, 4, 2, 2, rng)
    with pytest.raises(GeometryError):
        dict_gradient(np.zeros((8, 8, 1)), np.zeros((4, 4, 3)), d)
    with pytest.raises(GeometryError):
        dict_gradient(np.zeros((8, 8, 2)), np.zeros((4, 4, 2)), d)


def test_update_keeps_unit_norm(rng):
    d = DictionaryLayer.random(6, 4, 2, 2, rng)
    new = apply_update(d, 10 * rng.standard_normal(d.weights.shape), 0.5)
    np.testing.assert_allclose(new.kernel_norms(), 1.0, atol=1e-6)
    assert new.weights.dtype == d.weights.dtype


def test_zero_gradient_keeps_weights(rng):
    d = DictionaryLayer.random(4, 4, 1, 2, rng, dtype=np.float64)
    np.testing.assert_allclose(apply_update(d, np.zeros_like(d.weights), 0.1).weights, d.weights, atol=1e-12)


def test_dead_kernel_resampled(rng, caplog):
    d = DictionaryLayer.random(3, 4, 1, 2, rng)
    grad = np.zeros_like(d.weights)
    grad[1] = -d.weights[1]
    with caplog.at_level("WARNING"):
        new = apply_update(d, grad, 1.0, rng=0)
    assert "resampling 1" in caplog.text
    np.testing.assert_allclose(new.kernel_norms(), 1.0, atol=1e-6)
    assert np.all(np.isfinite(new.weights))


def test_update_requires_positive_rate(rng):
    d = DictionaryLayer.random(2, 1, 1, 1, rng)
    with pytest.raises(ValueError):
        apply_update(d, np.zeros_like(d.weights), 0.0)


def test_small_step_descends(rng):
    d = DictionaryLayer.random(4, 4, 1, 2, rng, dtype=np.float64)
    x = rng.standard_normal((8, 8, 1))
    a = np.abs(rng.standard_normal((4, 4, 4)))
    before = half_sq_error(x, [a], Pathway("p", [d]))
    g = dict_gradient(x - synthesize(a, d), a, d)
    new = apply_update(d, g, 1e-4)
    assert half_sq_error(x, [a], Pathway("p", [new])) < before


def _tiny_pathway(seed):
    r = np.random.default_rng(seed)
    return Pathway("face", [DictionaryLayer.random(8, 8, 1, 4, r), DictionaryLayer.random(8, 4, 8, 2, r),
                            DictionaryLayer.random(16, 4, 8, 4, r)])


def test_lr_zero_is_bit_identical():
    imgs = preprocess(np.stack([face_like(np.random.default_rng(i)) for i in range(4)]))
    pw = _tiny_pathway(0)
    out, hist = train_pathway(imgs, pw, TrainConfig(learning_rate=0.0, infer_timesteps=10, epochs=2))
    for a, b in zip(pw.layers, out.layers):
        np.testing.assert_array_equal(a.weights, b.weights)
    assert len(hist) == 2


def test_overfit_one_image_monotone():
    img = preprocess(face_like(np.random.default_rng(5)))
    _, hist = train_pathway(img, _tiny_pathway(1), TrainConfig(learning_rate=0.01, infer_timesteps=100, epochs=12),
                            LcaParams(lam=0.1), lambdas=(0.3, 0.25, 0.02), taus=(3.0, 2.0, 1.0))
    errs = [h.recon_mse for h in hist]
    assert all(b <= a + 1e-6 for a, b in zip(errs, errs[1:])), errs
    assert errs[-1] < errs[0]


def test_training_reproducible():
    imgs = preprocess(np.stack([face_like(np.random.default_rng(i)) for i in range(6)]))
    tc = TrainConfig(learning_rate=0.05, infer_timesteps=20, batch_size=2, epochs=2, seed=3)
    a, ha = train_pathway(imgs, _tiny_pathway(2), tc)
    b, hb = train_pathway(imgs, _tiny_pathway(2), tc)
    assert encode(a) == encode(b)
    assert [h.recon_mse for h in ha] == [h.recon_mse for h in hb]


def test_timestep_budget_stops_early():
    imgs = preprocess(np.stack([face_like(np.random.default_rng(i)) for i in range(6)]))
    tc = TrainConfig(learning_rate=0.05, infer_timesteps=10, epochs=5, timestep_budget=40)
    _, hist = train_pathway(imgs, _tiny_pathway(2), tc)
    assert sum(h.images for h in hist) == 4


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_pathway(np.zeros((0, 32, 32, 1)), _tiny_pathway(0), TrainConfig())


@pytest.fixture(scope="module")
def bar_run():
    x, gens = oriented_bars(200, rng=0)
    pw = Pathway("bars", [DictionaryLayer.random(16, 8, 1, 8, 1)])
    trained, hist = train_pathway(x, pw, TrainConfig(learning_rate=0.1, infer_timesteps=100, epochs=10),
                                  LcaParams(lam=0.1, threshold_kind="soft"))
    return trained, hist, gens


def test_bar_corpus_error_halves(bar_run):
    _, hist, _ = bar_run
    assert hist[4].recon_mse < 0.5 * hist[0].recon_mse


def test_bar_corpus_kernels_align(bar_run):
    trained, _, gens = bar_run
    w = trained.layers[0].weights.reshape(16, -1)
    g = gens.reshape(len(gens), -1)
    best = (g @ w.T).max(axis=1)
    assert np.all(best >= 0.8), best
