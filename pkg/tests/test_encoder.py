import numpy as np
import pytest

from tlhash import encoder as enc
from tlhash.codes import sign_quantize, unpack
from tlhash.errors import DataError, DimensionError, InvalidInputError


def naive_forward(params, x):
    """Explicit loops over rows and columns."""
    h = list(x)
    for depth, (W, c) in enumerate(params.layers):
        out = []
        for i in range(W.shape[0]):
            acc = c[i]
            for j in range(W.shape[1]):
                acc += W[i, j] * h[j]
            out.append(acc)
        last = depth == len(params.layers) - 1
        h = out if last else [np.tanh(v) for v in out]
    return np.array(h)


def random_params(arch, D=5, H=4, L=3, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    p = enc.init(arch, D, L, hidden_dim=H, seed=seed)
    return p.with_layers([(rng.normal(0, scale, W.shape), rng.normal(0, scale, c.shape)) for W, c in p.layers])


class TestInit:
    def test_deterministic(self):
        assert enc.init("linear", 4, 2, seed=7) == enc.init("linear", 4, 2, seed=7)

    def test_seed_matters(self):
        assert enc.init("linear", 4, 2, seed=7) != enc.init("linear", 4, 2, seed=8)

    def test_linear_shapes(self):
        (W, c), = enc.init("linear", 4, 2, seed=7).layers
        assert W.shape == (2, 4) and c.shape == (2,)
        np.testing.assert_array_equal(c, 0.0)

    def test_mlp_shapes(self):
        (W1, c1), (W2, c2) = enc.init("mlp1", 6, 3, hidden_dim=5, seed=0).layers
        assert W1.shape == (5, 6) and W2.shape == (3, 5)
        assert not c1.any() and not c2.any()

    def test_weight_variance(self):
        (W, _), = enc.init("linear", 1000, 1000, seed=1).layers
        assert W.var() == pytest.approx(1e-4, rel=0.05)

    @pytest.mark.parametrize("args", [("linear", 0, 2), ("linear", 3, 0), ("mlp1", 3, 2)])
    def test_invalid_dims(self, args):
        with pytest.raises(DimensionError):
            enc.init(*args)

    def test_unknown_arch(self):
        with pytest.raises(InvalidInputError):
            enc.init("relu", 3, 2)


class TestForward:
    def test_zero_params(self):
        p = enc.init("linear", 4, 3).with_layers([(np.zeros((3, 4)), np.zeros(3))])
        np.testing.assert_array_equal(enc.forward(p, np.arange(4.0)), 0.0)

    def test_identity(self):
        p = enc.init("linear", 3, 3).with_layers([(np.eye(3), np.zeros(3))])
        x = np.array([0.5, -2.0, 3.0])
        np.testing.assert_array_equal(enc.forward(p, x), x)

    @pytest.mark.parametrize("arch", ["linear", "mlp1"])
    def test_matches_naive(self, arch):
        rng = np.random.default_rng(2)
        for seed in range(10):
            p = random_params(arch, seed=seed)
            x = rng.normal(size=5)
            np.testing.assert_allclose(enc.forward(p, x), naive_forward(p, x), rtol=1e-12)

    def test_batch_matches_rows(self):
        p = random_params("mlp1")
        X = np.random.default_rng(3).normal(size=(7, 5))
        np.testing.assert_array_equal(enc.forward(p, X)[4], enc.forward(p, X[4]))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            enc.forward(enc.init("linear", 4, 2), np.ones(3))

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            enc.forward(enc.init("linear", 2, 2), np.array([1.0, np.nan]))

    def test_positive_homogeneity(self):
        p = random_params("linear")
        p = p.with_layers([(p.layers[0][0], np.zeros(3))])
        x = np.random.default_rng(4).normal(size=5)
        for t in (0.5, 2.0, 8.0):
            scaled = p.with_layers([(t * p.layers[0][0], np.zeros(3))])
            np.testing.assert_allclose(enc.forward(scaled, x), t * enc.forward(p, x), rtol=1e-15)
            assert enc.encode(scaled, x) == enc.encode(p, x)


def _fd_param_grads(params, x, v, h=1e-6):
    """Central differences of f(params) = <v, forward(params, x)>."""
    out = []
    for li, (W, c) in enumerate(params.layers):
        grads = []
        for arr_idx, arr in enumerate((W, c)):
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                vals = []
                for sign in (1, -1):
                    bumped = arr.copy()
                    bumped[idx] += sign * h
                    layers = list(params.layers)
                    layers[li] = (bumped, c) if arr_idx == 0 else (W, bumped)
                    vals.append(float(v @ enc.forward(params.with_layers(layers), x)))
                g[idx] = (vals[0] - vals[1]) / (2 * h)
            grads.append(g)
        out.append(tuple(grads))
    return out


class TestBackward:
    def test_zero_upstream(self):
        p = random_params("mlp1")
        for dW, dc in enc.backward(p, np.ones(5), np.zeros(3)):
            assert not dW.any() and not dc.any()

    def test_one_hot_input(self):
        p = random_params("linear")
        g = np.array([1.0, -2.0, 0.5])
        x = np.zeros(5)
        x[2] = 1.0
        (dW, dc), = enc.backward(p, x, g)
        np.testing.assert_array_equal(dW[:, 2], g)
        np.testing.assert_array_equal(np.delete(dW, 2, axis=1), 0.0)
        np.testing.assert_array_equal(dc, g)

    @pytest.mark.parametrize("arch", ["linear", "mlp1"])
    def test_finite_differences(self, arch):
        rng = np.random.default_rng(5)
        for seed in range(3):
            p = random_params(arch, seed=seed)
            x = rng.normal(size=5)
            v = rng.normal(size=3)
            analytic = enc.backward(p, x, v)
            numeric = _fd_param_grads(p, x, v)
            for (aW, ac), (nW, nc) in zip(analytic, numeric):
                for a, n in ((aW, nW), (ac, nc)):
                    rel = np.abs(a - n) / np.maximum(np.abs(n), 1e-6)
                    assert rel.max() < 1e-4

    def test_batch_sums_rows(self):
        p = random_params("mlp1")
        rng = np.random.default_rng(6)
        X, G = rng.normal(size=(4, 5)), rng.normal(size=(4, 3))
        total = enc.backward(p, X, G)
        parts = [enc.backward(p, X[i], G[i]) for i in range(4)]
        for li in range(2):
            np.testing.assert_allclose(total[li][0], sum(part[li][0] for part in parts), rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            enc.backward(random_params("linear"), np.ones(5), np.ones(4))


class TestEncode:
    def test_sign_convention(self):
        p = enc.init("linear", 3, 3).with_layers([(np.diag([0.3, -0.2, 0.0]), np.zeros(3))])
        np.testing.assert_array_equal(unpack(enc.encode(p, np.ones(3))), [1, -1, -1])

    def test_deterministic(self):
        p = random_params("mlp1")
        x = np.ones(5)
        assert enc.encode(p, x) == enc.encode(p, x)

    def test_composition(self):
        p = random_params("mlp1", seed=9)
        X = np.random.default_rng(7).normal(size=(200, 5))
        rows = enc.encode_rows(p, X)
        for i in range(200):
            assert enc.encode(p, X[i]) == sign_quantize(enc.forward(p, X[i]))
            np.testing.assert_array_equal(rows[i], enc.encode(p, X[i]).words)


class TestCheckpoint:
    @pytest.mark.parametrize("arch", ["linear", "mlp1"])
    def test_round_trip(self, tmp_path, arch):
        p = random_params(arch)
        enc.save(p, tmp_path / "m.enc")
        assert enc.load(tmp_path / "m.enc") == p

    def test_layout(self, tmp_path):
        p = enc.init("linear", 2, 1).with_layers([(np.array([[1.0, 2.0]]), np.array([3.0]))])
        enc.save(p, tmp_path / "m.enc")
        raw = (tmp_path / "m.enc").read_bytes()
        assert raw[:4] == b"ENC1" and raw[4] == 0
        assert raw[5:17] == (2).to_bytes(4, "little") + (0).to_bytes(4, "little") + (1).to_bytes(4, "little")
        np.testing.assert_array_equal(np.frombuffer(raw[17:], "<f8"), [1.0, 2.0, 3.0])

    def test_corrupt(self, tmp_path):
        (tmp_path / "m.enc").write_bytes(b"ENC1" + bytes(20))
        with pytest.raises(DataError):
            enc.load(tmp_path / "m.enc")

    def test_params_immutable(self):
        p = random_params("linear")
        with pytest.raises(ValueError):
            p.layers[0][0][0, 0] = 1.0


def test_sgd_step_zero_lr_is_identity():
    p = random_params("mlp1")
    grads = enc.backward(p, np.ones(5), np.ones(3))
    assert enc.sgd_step(p, grads, 0.0) is p
