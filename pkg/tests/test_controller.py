import numpy as np
import pytest

from cnnadapt import (
    ConfigError,
    ControllerParams,
    adaptation_rate,
    adaptation_step,
    control_input,
    gain_certificate,
    gamma_vector,
    projection,
)
from cnnadapt.presets import conv_network


def make_params(**overrides):
    fields = dict(k_s=1.0, A_c=-10.0 * np.eye(2), gamma_fc=100.0,
                  gamma_conv=100.0, rho=1.0, theta_bar=10.0)
    fields.update(overrides)
    return ControllerParams(**fields)


class TestParams:
    def test_rejects_non_hurwitz(self):
        with pytest.raises(ConfigError):
            make_params(A_c=np.array([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(ConfigError):
            make_params(A_c=np.zeros((2, 2)))

    def test_rejects_bad_scalars(self):
        with pytest.raises(ConfigError):
            make_params(k_s=0.0)
        with pytest.raises(ConfigError):
            make_params(rho=-1.0)
        with pytest.raises(ConfigError):
            make_params(gamma_fc=0.0)
        with pytest.raises(ConfigError):
            make_params(sgn_mode="bang")

    def test_gamma_vector_segments(self):
        spec = conv_network()
        params = make_params(gamma_fc=3.0, gamma_conv=7.0)
        g = gamma_vector(params, spec)
        assert g.size == 238
        assert np.all(g[: spec.fc_weight_count()] == 3.0)
        assert np.all(g[spec.fc_weight_count():] == 7.0)


class TestControlInput:
    def test_equilibrium(self):
        params = make_params()
        np.testing.assert_array_equal(
            control_input(np.zeros(2), np.zeros(2), params), np.zeros(2)
        )

    def test_direct_formula(self):
        params = make_params()
        u = control_input(np.array([1.0, -2.0]), np.array([0.5, -0.5]), params)
        np.testing.assert_array_equal(u, [-2.0, 3.0])

    def test_smoothed_tends_to_exact(self):
        e = np.array([0.3, -0.05])
        phi = np.array([0.1, 0.2])
        exact = control_input(phi, e, make_params())
        for eps in (1e-2, 1e-4, 1e-6):
            smoothed = control_input(
                phi, e, make_params(sgn_mode="smoothed", sgn_eps=eps)
            )
            gap = np.abs(smoothed - exact)
            assert gap.max() < np.abs(np.tanh(0.05 / eps) - 1.0) + 1e-12
        assert gap.max() < 1e-12


class TestProjection:
    def test_interior_pass_through(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            theta = rng.normal(size=8)
            theta *= 0.5 * 10.0 / np.linalg.norm(theta)
            tau = rng.normal(size=8)
            np.testing.assert_array_equal(projection(theta, tau, 10.0), tau)

    def test_boundary_outward_removed(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            theta = rng.normal(size=8)
            theta *= 10.0 / np.linalg.norm(theta)
            tau = rng.normal(size=8)
            out = projection(theta, tau, 10.0)
            assert theta @ out <= 1e-10 * np.linalg.norm(tau) * 10.0

    def test_boundary_tangent_preserved(self):
        rng = np.random.default_rng(2)
        theta = rng.normal(size=8)
        theta *= 10.0 / np.linalg.norm(theta)
        tau = rng.normal(size=8)
        tau -= (theta @ tau) / (theta @ theta) * theta  # tangent
        np.testing.assert_allclose(projection(theta, tau, 10.0), tau,
                                   atol=1e-12)

    def test_inward_pass_through_anywhere(self):
        rng = np.random.default_rng(3)
        theta = rng.normal(size=8)
        theta *= 10.0 / np.linalg.norm(theta)
        tau = -theta  # strictly inward
        np.testing.assert_array_equal(projection(theta, tau, 10.0), tau)

    def test_lipschitz_blend_across_annulus(self):
        # outward component removal ramps continuously near the boundary
        rng = np.random.default_rng(4)
        direction = rng.normal(size=8)
        direction /= np.linalg.norm(direction)
        tau = direction.copy()  # radially outward everywhere on this ray
        prev = None
        for r in np.linspace(9.98, 10.0, 401):
            out = projection(r * direction, tau, 10.0)
            radial = direction @ out
            if prev is not None:
                assert abs(radial - prev) < 0.05
            prev = radial
        assert abs(prev) < 1e-12  # fully removed at the boundary


class TestAdaptation:
    def test_zero_error_freezes_weights(self):
        spec = conv_network()
        params = make_params()
        gvec = gamma_vector(params, spec)
        theta = np.random.default_rng(5).normal(size=238)
        theta *= 0.8 * params.theta_bar / np.linalg.norm(theta)
        jac = np.random.default_rng(6).normal(size=(2, 238))
        rate = adaptation_rate(theta, jac, np.zeros(2), params, gvec)
        np.testing.assert_array_equal(rate, np.zeros(238))
        new = adaptation_step(theta, jac, np.zeros(2), params, 1e-3, gvec)
        np.testing.assert_array_equal(new, theta)

    def test_damping_only_euler_decay(self):
        # zero Jacobian, interior weights: exactly theta * (1 - dt*rho*|e|)
        spec = conv_network()
        params = make_params(rho=2.0)
        gvec = gamma_vector(params, spec)
        rng = np.random.default_rng(7)
        theta = rng.normal(size=238)
        theta *= 3.0 / np.linalg.norm(theta)
        e = np.array([0.3, -0.4])
        new = adaptation_step(theta, np.zeros((2, 238)), e, params, 1e-3, gvec)
        np.testing.assert_allclose(new, theta * (1.0 - 1e-3 * 2.0 * 0.5),
                                   rtol=1e-12)

    def test_gradient_term_sign_and_scale(self):
        # with A_c = -a I the gradient term is +gamma/a * J^T e before
        # projection; doubling gamma doubles it
        spec = conv_network()
        rng = np.random.default_rng(8)
        jac = rng.normal(size=(2, 238))
        e = np.array([0.2, -0.1])
        theta = np.zeros(238)
        p1 = make_params(gamma_fc=100.0, gamma_conv=100.0, rho=0.0)
        p2 = make_params(gamma_fc=200.0, gamma_conv=200.0, rho=0.0)
        r1 = adaptation_rate(theta, jac, e, p1, gamma_vector(p1, spec))
        r2 = adaptation_rate(theta, jac, e, p2, gamma_vector(p2, spec))
        np.testing.assert_allclose(r1, 100.0 / 10.0 * (jac.T @ e), rtol=1e-12)
        np.testing.assert_allclose(r2, 2.0 * r1, rtol=1e-12)

    def test_boundary_steps_never_leave_ball(self):
        # many random aggressive steps from boundary states stay inside
        spec = conv_network()
        params = make_params(gamma_fc=1e5, gamma_conv=1e5, rho=1e5)
        gvec = gamma_vector(params, spec)
        rng = np.random.default_rng(9)
        bound = params.theta_bar * (1.0 + 1e-3)
        for _ in range(200):
            theta = rng.normal(size=238)
            theta *= params.theta_bar / np.linalg.norm(theta)
            jac = rng.normal(size=(2, 238)) * rng.uniform(0.1, 50.0)
            e = rng.normal(size=2) * rng.uniform(0.0, 5.0)
            dt = rng.uniform(1e-6, 1e-2)
            new = adaptation_step(theta, jac, e, params, dt, gvec)
            assert np.linalg.norm(new) <= bound

    def test_sequence_from_interior_respects_ball(self):
        spec = conv_network()
        params = make_params(gamma_fc=1e4, gamma_conv=1e4, rho=10.0)
        gvec = gamma_vector(params, spec)
        rng = np.random.default_rng(10)
        theta = np.zeros(238)
        for _ in range(500):
            jac = rng.normal(size=(2, 238))
            e = rng.normal(size=2)
            theta = adaptation_step(theta, jac, e, params, 1e-3, gvec)
            assert np.linalg.norm(theta) <= params.theta_bar * (1.0 + 1e-3)


class TestGainCertificate:
    def test_scalar_reduction(self):
        params = make_params(gamma_fc=50.0, gamma_conv=50.0, rho=5.0,
                             theta_bar=2.0)
        cert = gain_certificate(params, phi_prime_bound=3.0, delta_bar=0.25)
        beta1 = 5.0 / 50.0
        a_inv_norm = 0.1
        beta2 = (3.0 * (a_inv_norm + 1.0) + beta1 * 2.0) / (2.0 * beta1)
        assert cert.computable
        assert cert.beta1 == pytest.approx(beta1)
        assert cert.beta2 == pytest.approx(beta2)
        assert cert.k_s_min == pytest.approx(beta1 * beta2**2 + 0.25)
        assert cert.satisfied == (params.k_s >= cert.k_s_min)

    def test_delta_bar_additive(self):
        params = make_params(rho=5.0)
        c1 = gain_certificate(params, 3.0, delta_bar=0.5)
        c2 = gain_certificate(params, 3.0, delta_bar=1.0)
        assert c2.k_s_min - c1.k_s_min == pytest.approx(0.5)

    def test_gamma_scaling_divides_beta1(self):
        p1 = make_params(gamma_fc=50.0, gamma_conv=50.0, rho=5.0)
        p2 = make_params(gamma_fc=150.0, gamma_conv=150.0, rho=5.0)
        c1 = gain_certificate(p1, 3.0, 0.0)
        c2 = gain_certificate(p2, 3.0, 0.0)
        assert c2.beta1 == pytest.approx(c1.beta1 / 3.0)

    def test_rho_zero_not_computable(self):
        cert = gain_certificate(make_params(rho=0.0), 3.0, 0.0)
        assert not cert.computable
        assert cert.satisfied is None
        assert "not-computable" in cert.status

    def test_mixed_gamma_uses_smallest(self):
        params = make_params(gamma_fc=20.0, gamma_conv=80.0, rho=4.0)
        cert = gain_certificate(params, 1.0, 0.0)
        assert cert.beta1 == pytest.approx(4.0 / 20.0)
