import math

import numpy as np
import pytest

from aligntrain.encoder import DualEncoderParams, backward, embed, init_params


def fd_weight_gradient(params, raw_img, raw_txt, upstream_img, upstream_txt, step=1e-5):
    """Central finite differences of L = sum(U_img * E_img) + sum(U_txt * E_txt)
    with respect to both weight matrices."""

    def loss_at(w_img, w_txt):
        e_i, e_t = embed(DualEncoderParams(w_img, w_txt), raw_img, raw_txt)
        return float((upstream_img * e_i).sum() + (upstream_txt * e_t).sum())

    grads = []
    for which in ("img", "txt"):
        base = params.w_img if which == "img" else params.w_txt
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            bumped_up = base.copy()
            bumped_dn = base.copy()
            bumped_up[idx] += step
            bumped_dn[idx] -= step
            if which == "img":
                up = loss_at(bumped_up, params.w_txt)
                dn = loss_at(bumped_dn, params.w_txt)
            else:
                up = loss_at(params.w_img, bumped_up)
                dn = loss_at(params.w_img, bumped_dn)
            g[idx] = (up - dn) / (2 * step)
        grads.append(g)
    return grads[0], grads[1]


class TestInitParams:
    def test_same_seed_bit_identical(self):
        a = init_params(8, 12, 10, seed=42)
        b = init_params(8, 12, 10, seed=42)
        assert np.array_equal(a.w_img, b.w_img)
        assert np.array_equal(a.w_txt, b.w_txt)

    def test_different_seed_differs(self):
        a = init_params(8, 12, 10, seed=1)
        b = init_params(8, 12, 10, seed=2)
        assert not np.array_equal(a.w_img, b.w_img)

    def test_bound_closed_form(self):
        params = init_params(256, 2048, 300, seed=0)
        bound = math.sqrt(6.0 / 2304.0)
        assert np.abs(params.w_img).max() <= bound
        assert np.abs(params.w_img).max() > 0.99 * bound  # the band is actually filled

    def test_sample_mean_within_monte_carlo_bound(self):
        d, d_img = 100, 1000  # 1e5 draws
        params = init_params(d, d_img, 4, seed=9)
        bound = math.sqrt(6.0 / (d_img + d))
        sigma = bound / math.sqrt(3.0)  # std of U[-b, b]
        n = d * d_img
        assert abs(params.w_img.mean()) <= 3.0 * sigma / math.sqrt(n)

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            init_params(1, 4, 4, seed=0)
        with pytest.raises(ValueError):
            init_params(4, 0, 4, seed=0)


class TestEmbed:
    def test_identity_projection_keeps_unit_inputs(self):
        eye = np.eye(4)
        raw = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
        params = DualEncoderParams(eye, eye)
        e_i, e_t = embed(params, raw, raw)
        np.testing.assert_allclose(e_i, raw, atol=1e-15)
        np.testing.assert_allclose(e_t, raw, atol=1e-15)

    def test_scale_invariance_of_raw_rows(self):
        rng = np.random.default_rng(13)
        params = init_params(6, 9, 9, seed=13)
        raw_i = rng.standard_normal((3, 9))
        raw_t = rng.standard_normal((3, 9))
        e_i, _ = embed(params, raw_i, raw_t)
        scaled = raw_i.copy()
        scaled[1] *= 5.0
        e_i_scaled, _ = embed(params, scaled, raw_t)
        np.testing.assert_allclose(e_i_scaled, e_i, atol=1e-12)

    def test_matches_per_row_oracle(self):
        rng = np.random.default_rng(17)
        params = init_params(5, 7, 6, seed=17)
        raw_i = rng.standard_normal((4, 7))
        raw_t = rng.standard_normal((4, 6))
        e_i, e_t = embed(params, raw_i, raw_t)
        for r in range(4):
            z = np.array([params.w_img[k] @ raw_i[r] for k in range(5)])
            z = z / math.sqrt(float(z @ z))
            assert np.abs(e_i[r] - z).max() <= 1e-12
            z = np.array([params.w_txt[k] @ raw_t[r] for k in range(5)])
            z = z / math.sqrt(float(z @ z))
            assert np.abs(e_t[r] - z).max() <= 1e-12

    def test_rows_always_unit_norm(self):
        rng = np.random.default_rng(19)
        params = init_params(8, 10, 12, seed=19)
        e_i, e_t = embed(params, rng.standard_normal((16, 10)), rng.standard_normal((16, 12)))
        for block in (e_i, e_t):
            norms = np.sqrt((block * block).sum(axis=1))
            assert np.abs(norms - 1.0).max() <= 1e-12

    def test_zero_projection_names_row(self):
        params = init_params(4, 5, 5, seed=0)
        raw = np.ones((3, 5))
        raw[2] = 0.0
        with pytest.raises(ValueError, match="image row 2"):
            embed(params, raw, np.ones((3, 5)))


class TestBackward:
    def test_zero_upstream_gives_zero_gradient(self):
        rng = np.random.default_rng(23)
        params = init_params(4, 5, 5, seed=23)
        raw_i = rng.standard_normal((3, 5))
        raw_t = rng.standard_normal((3, 5))
        zeros = np.zeros((3, 4))
        grads = backward(params, raw_i, raw_t, zeros, zeros)
        assert np.abs(grads.g_img).max() == 0.0
        assert np.abs(grads.g_txt).max() == 0.0

    def test_radial_upstream_vanishes_through_normalization(self):
        rng = np.random.default_rng(29)
        params = init_params(4, 6, 6, seed=29)
        raw_i = rng.standard_normal((3, 6))
        raw_t = rng.standard_normal((3, 6))
        e_i, e_t = embed(params, raw_i, raw_t)
        # upstream parallel to each embedding lies in the normal direction
        grads = backward(params, raw_i, raw_t, 2.5 * e_i, -1.25 * e_t)
        assert np.abs(grads.g_img).max() <= 1e-12
        assert np.abs(grads.g_txt).max() <= 1e-12

    def test_matches_central_differences(self):
        rng = np.random.default_rng(31)
        params = init_params(4, 5, 5, seed=31)
        raw_i = rng.standard_normal((3, 5))
        raw_t = rng.standard_normal((3, 5))
        up_i = rng.standard_normal((3, 4))
        up_t = rng.standard_normal((3, 4))
        grads = backward(params, raw_i, raw_t, up_i, up_t)
        fd_img, fd_txt = fd_weight_gradient(params, raw_i, raw_t, up_i, up_t)
        for got, want in ((grads.g_img, fd_img), (grads.g_txt, fd_txt)):
            rel = np.abs(got - want) / np.maximum.reduce(
                [np.abs(got), np.abs(want), np.full_like(want, 1e-7)]
            )
            assert rel.max() < 1e-6
