"""GRU cell, bivariate normal head, Adam, and the gradient checker."""

import numpy as np
import pytest
from scipy.special import expit

from mfp import autodiff as ad
from mfp import diffcore as dc
from mfp.autodiff import Tape, Var

from conftest import fd_gradient


def scalar_gru_oracle(x, h, wx, wh_ru, wh_c, b):
    """Step-by-step per-unit reference for one GRU row."""
    hid = wh_c.shape[0]
    out = np.zeros(hid)
    xg = x @ wx + b
    hg = h @ wh_ru
    for i in range(hid):
        r = expit(xg[i] + hg[i])
        u = expit(xg[hid + i] + hg[hid + i])
        c = np.tanh(xg[2 * hid + i] + sum((r_j * h_j) * wh_c[j, i]
                    for j, (r_j, h_j) in enumerate(
                        zip(expit(xg[:hid] + hg[:hid]), h))))
        out[i] = (1.0 - u) * h[i] + u * c
    return out


def make_gru(rng, input_dim=4, hidden=3):
    return dc.gru_init(rng, input_dim, hidden)


class TestGruStep:
    def test_zero_params_halve_the_state(self):
        """All-zero weights force r = u = 1/2 and a zero candidate, so the
        new state is h/2."""
        p = dc.GruParams(wx=ad.param(np.zeros((4, 9))),
                         wh_ru=ad.param(np.zeros((3, 6))),
                         wh_c=ad.param(np.zeros((3, 3))),
                         b=ad.param(np.zeros(9)))
        h = np.array([[2.0, -4.0, 1.0]])
        with Tape():
            out = dc.gru_step(Var(np.zeros((1, 4))), Var(h), p)
        np.testing.assert_allclose(out.v, h / 2.0, atol=1e-14)

    def test_zero_state_zero_input_zero_params_stay_zero(self):
        p = dc.GruParams(wx=ad.param(np.zeros((4, 9))),
                         wh_ru=ad.param(np.zeros((3, 6))),
                         wh_c=ad.param(np.zeros((3, 3))),
                         b=ad.param(np.zeros(9)))
        with Tape():
            out = dc.gru_step(Var(np.zeros((2, 4))), Var(np.zeros((2, 3))), p)
        np.testing.assert_array_equal(out.v, np.zeros((2, 3)))

    def test_matches_scalar_oracle(self, rng):
        p = make_gru(rng)
        x = rng.normal(size=(5, 4))
        h = rng.normal(size=(5, 3))
        with Tape():
            out = dc.gru_step(Var(x), Var(h), p)
        for row in range(5):
            want = scalar_gru_oracle(x[row], h[row], p.wx.v, p.wh_ru.v,
                                     p.wh_c.v, p.b.v)
            np.testing.assert_allclose(out.v[row], want, atol=1e-12)

    def test_gradients_through_two_steps(self, rng):
        p = make_gru(rng)
        arrays = {"wx": p.wx.v, "wh_ru": p.wh_ru.v, "wh_c": p.wh_c.v,
                  "b": p.b.v}
        x1 = rng.normal(size=(2, 4))
        x2 = rng.normal(size=(2, 4))
        h0 = rng.normal(size=(2, 3))

        def run(a):
            with Tape() as tape:
                q = dc.GruParams(**{k: ad.param(v) for k, v in a.items()})
                h = dc.gru_step(Var(x1), Var(h0), q)
                h = dc.gru_step(Var(x2), h, q)
                loss = ad.vsum(ad.mul(h, h))
                g = tape.gradients(loss, {k: getattr(q, k) for k in a})
            return float(loss.v), g

        _, got = run(arrays)
        want = fd_gradient(lambda a: run(a)[0], arrays)
        for k in arrays:
            np.testing.assert_allclose(got[k], want[k], atol=1e-6, rtol=1e-5,
                                       err_msg=k)


class TestBivariateNormal:
    def test_standard_normal_at_mode(self):
        p = dc.BivariateNormalParams(np.zeros(2), np.ones(2), 0.0)
        np.testing.assert_allclose(dc.bivariate_nll(p, [0.0, 0.0]),
                                   np.log(2.0 * np.pi), atol=1e-12)

    def test_unit_offset_adds_half(self):
        p = dc.BivariateNormalParams(np.zeros(2), np.ones(2), 0.0)
        np.testing.assert_allclose(dc.bivariate_nll(p, [1.0, 0.0]),
                                   np.log(2.0 * np.pi) + 0.5, atol=1e-12)

    def test_correlated_case_matches_formula_oracle(self):
        """sigma=(2,0.5), rho=0.5, d=(0.3,-0.2): value frozen from a direct
        high-precision evaluation of the density formula."""
        p = dc.BivariateNormalParams(np.zeros(2), np.array([2.0, 0.5]), 0.5)
        got = dc.bivariate_nll(p, [0.3, -0.2])
        # log(2 pi sx sy sqrt(1-rho^2)) + quad/(2(1-rho^2)) evaluated exactly
        om = 0.75
        dx, dy = 0.15, -0.4
        want = np.log(2.0 * np.pi * 1.0 * np.sqrt(om)) \
            + (dx * dx - 2 * 0.5 * dx * dy + dy * dy) / (2 * om)
        np.testing.assert_allclose(got, want, atol=1e-12)
        np.testing.assert_allclose(got, 1.8557026968501216, atol=1e-12)

    def test_covariance_matrix_positive_definite(self, rng):
        for _ in range(50):
            raw = rng.normal(scale=4.0, size=5)
            p = dc.constrain_output(raw)
            eig = np.linalg.eigvalsh(p.cov())
            assert np.all(eig > 0.0)

    def test_nll_rows_agrees_with_scalar_version(self, rng):
        raw = rng.normal(size=(6, 5))
        tgt = rng.normal(size=(6, 2))
        with Tape():
            mu, sigma, rho = dc.constrain_columns(ad.param(raw))
            out = dc.nll_rows(mu, sigma, rho, Var(tgt))
        for i in range(6):
            want = dc.bivariate_nll(dc.constrain_output(raw[i]), tgt[i])
            np.testing.assert_allclose(out.v[i, 0], want, atol=1e-12)


class TestConstrainOutput:
    def test_zeros_give_standard_parameters(self):
        p = dc.constrain_output(np.zeros(5))
        np.testing.assert_array_equal(p.mu, [0.0, 0.0])
        np.testing.assert_array_equal(p.sigma, [1.0, 1.0])
        assert p.rho == 0.0

    def test_log_sigma_clamps_at_minus_eight(self):
        p = dc.constrain_output(np.array([0.0, 0.0, -20.0, 0.0, 0.0]))
        np.testing.assert_allclose(p.sigma[0], np.exp(-8.0))

    def test_any_raw_satisfies_invariants(self, rng):
        for _ in range(100):
            p = dc.constrain_output(rng.normal(scale=30.0, size=5))
            assert p.sigma[0] > 0 and p.sigma[1] > 0
            assert abs(p.rho) < 1.0


class TestAdam:
    def make_state(self, params):
        return dc.AdamState.for_params(params)

    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": ad.param(np.array([1.0, -2.0]))}
        state = self.make_state(params)
        before = params["w"].v.copy()
        dc.adam_update(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"].v, before)

    def test_first_step_moves_by_lr_times_sign(self):
        params = {"w": ad.param(np.array([0.0, 0.0]))}
        state = self.make_state(params)
        dc.adam_update(params, {"w": np.array([3.0, -0.5])}, state, lr=0.01)
        np.testing.assert_allclose(params["w"].v, [-0.01, 0.01], rtol=1e-6)

    def test_ten_steps_match_reference_sequence(self):
        """Quadratic bowl 0.5*w^2: compare against an independently coded
        Adam recursion."""
        w = np.array([1.0, -3.0])
        params = {"w": ad.param(w.copy())}
        state = self.make_state(params)
        ref = w.copy()
        m = np.zeros(2)
        v = np.zeros(2)
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
        for t in range(1, 11):
            dc.adam_update(params, {"w": params["w"].v.copy()}, state, lr)
            g = ref.copy()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mh = m / (1 - b1 ** t)
            vh = v / (1 - b2 ** t)
            ref = ref - lr * mh / (np.sqrt(vh) + eps)
            np.testing.assert_allclose(params["w"].v, ref, atol=1e-12,
                                       err_msg=f"step {t}")


class TestClipGradNorm:
    def test_small_gradients_untouched(self):
        grads = {"a": np.array([0.3, 0.4])}
        norm = dc.clip_grad_norm(grads, 10.0)
        np.testing.assert_allclose(norm, 0.5)
        np.testing.assert_allclose(grads["a"], [0.3, 0.4])

    def test_large_gradients_scaled_to_max_norm(self):
        grads = {"a": np.array([30.0, 40.0])}
        norm = dc.clip_grad_norm(grads, 5.0)
        np.testing.assert_allclose(norm, 50.0)
        np.testing.assert_allclose(np.sqrt((grads["a"] ** 2).sum()), 5.0)


class TestGradCheck:
    def test_linear_quadratic_case_is_exact(self, rng):
        w = ad.param(rng.normal(size=(3,)))
        x = rng.normal(size=(5, 3))
        y = rng.normal(size=(5,))
        params = {"w": w}

        def loss():
            pred = ad.matmul(Var(x), ad.reshape(w, (3, 1)))
            err = ad.sub(pred, Var(y.reshape(-1, 1)))
            return ad.vsum(ad.mul(err, err))

        report = dc.grad_check(loss, params, tolerance=1e-9)
        assert report["__all__"]["ok"]
        assert report["w"]["max_rel_err"] < 1e-9

    def test_corrupted_gradient_is_flagged_on_its_block(self, rng):
        p_good = ad.param(rng.normal(size=(4,)))
        p_bad = ad.param(rng.normal(size=(4,)))
        params = {"good": p_good, "bad": p_bad}

        def loss():
            return ad.add(ad.vsum(ad.mul(p_good, p_good)),
                          ad.vsum(ad.mul(p_bad, p_bad)))

        with ad.Tape() as tape:
            analytic = tape.gradients(loss(), params)
        analytic["bad"] = analytic["bad"] + 1.0

        def value():
            return float(loss().v)

        report = dc.grad_check_report(analytic, value, params,
                                      tolerance=1e-4)
        assert not report["__all__"]["ok"]
        assert not report["bad"]["ok"]
        assert report["good"]["ok"]


class TestUniformInit:
    def test_bounds_follow_fan_in(self, rng):
        w = dc.uniform_init(rng, 16, (200, 40))
        assert np.all(np.abs(w) <= 0.25)
        assert np.abs(w).max() > 0.2
