import json
import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import exp1

from levypassage.errors import NoJumpPart, SchemaError
from levypassage.models import (
    KIND_BROWNIAN,
    KIND_PERTURBED_GAMMA,
    KIND_PH,
    KIND_PURE_GAMMA,
    ModelSpec,
    PhaseType,
    cp_approximation,
    levy_measure,
    model_from_dict,
    model_from_json,
    model_to_dict,
)


class TestPhiD:
    def test_bm_at_zero(self, bm_model):
        assert bm_model.phi_d(0.0) == 0.0

    def test_bm_closed_form(self, bm_model):
        # -mu u + u^2 sigma^2 / 2 with mu = sigma = 1 vanishes at u = 2
        assert bm_model.phi_d(2.0) == pytest.approx(0.0, abs=1e-15)

    def test_perturbed_gamma_value(self, pgamma_model):
        assert pgamma_model.phi_d(1.0) == pytest.approx(-math.log(2.0) + 0.5, rel=1e-14)

    def test_phi_is_exponent_of_levy_measure(self, pgamma_model_wide, ph2_model):
        # phi_jump(u) must equal int (e^{-ux} - 1) q(x) dx for the same q
        for model in (pgamma_model_wide, ph2_model):
            view = model.levy_measure()
            for u in (0.5, 1.0, 2.0):
                jump_exact = float(model.phi_d(u)) - (
                    -model.mu * u + 0.5 * (model.sigma * u) ** 2
                )
                jump_quad, _ = quad(
                    lambda x: (math.exp(-u * x) - 1.0) * float(view.density(x)),
                    0.0,
                    80.0,
                    limit=400,
                    epsabs=1e-12,
                )
                assert jump_exact == pytest.approx(jump_quad, abs=5e-9)

    def test_ph_resolvent_form(self, ph_model):
        # exponential jumps: phi = u^2/2 + lam (1/(1+u) - 1)
        u = 0.7
        expect = 0.5 * u * u + (1.0 / (1.0 + u) - 1.0)
        assert ph_model.phi_d(u) == pytest.approx(expect, rel=1e-14)

    def test_derivatives_by_finite_differences(self, pgamma_model_wide, ph2_model, bm_model):
        eps = 1e-6
        for model in (bm_model, pgamma_model_wide, ph2_model):
            for u in (0.3, 1.1):
                fd1 = (model.phi_d(u + eps) - model.phi_d(u - eps)) / (2 * eps)
                assert float(model.phi_d_prime(u)) == pytest.approx(fd1, abs=5e-7)
                fd2 = (model.phi_d(u + eps) - 2 * model.phi_d(u) + model.phi_d(u - eps)) / eps**2
                assert float(model.phi_d_second(u)) == pytest.approx(fd2, rel=1e-3)

    def test_convexity_and_negative_initial_slope(self, pgamma_model, ph2_model, bm_model):
        us = np.linspace(0.0, 4.0, 41)
        for model in (bm_model, pgamma_model, ph2_model):
            vals = np.asarray(model.phi_d(us))
            second_diff = vals[2:] - 2 * vals[1:-1] + vals[:-2]
            assert np.all(second_diff > 0)
            eps = 1e-6
            slope = (float(model.phi_d(eps)) - float(model.phi_d(0.0))) / eps
            assert slope == pytest.approx(-model.mean_d1, abs=1e-4)
            assert slope < 0

    def test_mean_identity(self, pgamma_model_wide, ph2_model):
        # -phi'(0) = mu + int x q(x) dx; gamma: alpha*xi, PH: lam * E[J]
        pg = pgamma_model_wide
        assert -float(pg.phi_d_prime(0.0)) == pytest.approx(
            pg.mu + pg.alpha * pg.xi, rel=1e-14
        )
        ph = ph2_model
        jump_quad, _ = quad(
            lambda x: x * float(ph.levy_measure().density(x)), 0.0, 120.0, limit=400
        )
        assert -float(ph.phi_d_prime(0.0)) == pytest.approx(ph.mu + jump_quad, rel=1e-9)


class TestLevyMeasure:
    def test_gamma_density_value(self, pgamma_model):
        view = levy_measure(pgamma_model)
        assert float(view.density(1.0)) == pytest.approx(math.exp(-1.0), rel=1e-14)

    def test_ph_exponential_density(self, ph_model):
        view = levy_measure(ph_model)
        assert float(view.density(0.5)) == pytest.approx(math.exp(-0.5), rel=1e-12)

    def test_tail_derivative_consistency(self):
        # -Qbar'(x) = q(x) by the fundamental theorem of calculus
        model = ModelSpec(kind=KIND_PERTURBED_GAMMA, sigma=1.0, alpha=2.0, xi=1.0)
        view = levy_measure(model)
        eps = 1e-5
        fd = -(float(view.tail(1.0 + eps)) - float(view.tail(1.0 - eps))) / (2 * eps)
        assert fd == pytest.approx(float(view.density(1.0)), abs=1e-8)

    def test_tail_nonincreasing_and_nonnegative(self, pgamma_model_wide, ph2_model):
        xs = np.linspace(0.01, 10.0, 200)
        for model in (pgamma_model_wide, ph2_model):
            view = model.levy_measure()
            tail = np.asarray(view.tail(xs))
            assert np.all(np.asarray(view.density(xs)) >= 0)
            assert np.all(np.diff(tail) <= 1e-14)

    def test_gamma_tail_is_e1(self, pgamma_model_wide):
        view = levy_measure(pgamma_model_wide)
        x = 0.63
        expect = pgamma_model_wide.alpha * exp1(x / pgamma_model_wide.xi)
        assert float(view.tail(x)) == pytest.approx(expect, rel=1e-13)

    @pytest.mark.parametrize("rho", [0.5, 2.0])
    @pytest.mark.parametrize("x", [0.05, 1.0, 4.0])
    def test_exp_tails_against_quadrature(self, pgamma_model_wide, ph2_model, rho, x):
        for model in (pgamma_model_wide, ph2_model):
            view = model.levy_measure()
            oracle, _ = quad(
                lambda u: math.exp(-rho * (u - x)) * float(view.density(u)),
                x,
                x + 200.0,
                limit=500,
            )
            assert float(view.exp_tail(rho, x)) == pytest.approx(oracle, rel=1e-8)
            oracle2, _ = quad(
                lambda u: math.exp(-rho * (u - x)) * float(view.tail(u)),
                x,
                x + 200.0,
                limit=500,
            )
            assert float(view.exp_tail_tail(rho, x)) == pytest.approx(oracle2, rel=1e-7)

    def test_partial_moment(self, pgamma_model_wide, ph2_model):
        for model in (pgamma_model_wide, ph2_model):
            view = model.levy_measure()
            oracle, _ = quad(lambda u: u * float(view.density(u)), 0.0, 2.0, limit=300)
            assert float(view.partial_moment(2.0)) == pytest.approx(oracle, rel=1e-9)

    def test_no_jump_part(self, bm_model):
        with pytest.raises(NoJumpPart):
            levy_measure(bm_model)


class TestCPApproximation:
    def test_lambda_n_is_exponential_integral(self, pgamma_model):
        approx = cp_approximation(pgamma_model, 10)
        assert approx.lambda_n == pytest.approx(float(exp1(0.1)), rel=1e-12)
        # frozen oracle value for E1(0.1)
        assert approx.lambda_n == pytest.approx(1.8229239584193906, rel=1e-12)

    def test_cdf_endpoints(self, pgamma_model, ph_model):
        for model in (pgamma_model, ph_model):
            approx = cp_approximation(model, 16)
            cdf = approx.jump_cdf
            assert cdf(cdf.x0) == pytest.approx(0.0, abs=1e-12)
            assert cdf(cdf.x_max) == pytest.approx(1.0, abs=1e-9)
            assert np.all(np.diff(cdf.values) >= -1e-14)

    def test_ph_intensity_converges_to_lambda(self, ph_model):
        lam_256 = cp_approximation(ph_model, 256).lambda_n
        lam_4096 = cp_approximation(ph_model, 4096).lambda_n
        assert lam_256 < lam_4096 < ph_model.lam
        assert lam_4096 == pytest.approx(ph_model.lam, abs=3e-4)

    @pytest.mark.parametrize("u", [0.5, 1.0, 2.0])
    def test_monotone_convergence_of_exponent(self, pgamma_model, u):
        phis = [
            float(cp_approximation(pgamma_model, n).phi(pgamma_model, u)[0])
            for n in (4, 16, 64, 256)
        ]
        target = float(pgamma_model.phi_d(u))
        assert all(a >= b - 1e-12 for a, b in zip(phis, phis[1:]))  # decreasing to phi
        assert phis[-1] == pytest.approx(target, abs=2e-2)
        assert all(p >= target for p in phis)


class TestModelValidation:
    def test_negative_mean_rejected(self):
        with pytest.raises(ValueError, match="E\\[D_1\\]"):
            ModelSpec(kind=KIND_BROWNIAN, mu=0.0, sigma=1.0)

    def test_pure_gamma_needs_zero_sigma(self):
        with pytest.raises(ValueError):
            ModelSpec(kind=KIND_PURE_GAMMA, sigma=0.5, alpha=1.0, xi=1.0)

    def test_perturbed_needs_positive_sigma(self):
        with pytest.raises(ValueError):
            ModelSpec(kind=KIND_PERTURBED_GAMMA, sigma=0.0, alpha=1.0, xi=1.0)

    def test_subgenerator_validation(self):
        with pytest.raises(ValueError):
            PhaseType([1.0], [[1.0]])  # positive diagonal
        with pytest.raises(ValueError):
            PhaseType([0.5, 0.6], [[-1.0, 0.0], [0.0, -1.0]])  # alpha sums above 1
        with pytest.raises(ValueError):
            PhaseType([1.0, 0.0], [[-1.0, 2.0], [0.0, -1.0]])  # positive row sum

    def test_ph_moments(self):
        ph = PhaseType([1.0], [[-2.0]])  # Exp(2)
        assert ph.moment(1) == pytest.approx(0.5)
        assert ph.moment(2) == pytest.approx(0.5)  # 2/rate^2

    def test_mean_and_variance(self, ph2_model):
        ph = ph2_model
        assert ph.mean_d1 == pytest.approx(ph.mu + ph.lam * ph.ph.moment(1), rel=1e-12)
        assert ph.var_d1 == pytest.approx(
            ph.sigma**2 + ph.lam * ph.ph.moment(2), rel=1e-12
        )


class TestJsonIngest:
    def test_round_trip(self, pgamma_model_wide, ph2_model):
        for model in (pgamma_model_wide, ph2_model):
            doc = model_to_dict(model)
            again = model_from_dict(doc)
            assert again.kind == model.kind
            assert float(again.phi_d(1.3)) == pytest.approx(float(model.phi_d(1.3)), rel=1e-14)

    def test_parse_example(self):
        text = '{"kind": "perturbed_gamma", "mu": 0, "sigma": 1.0, "alpha": 1.0, "xi": 1.0}'
        model = model_from_json(text)
        assert model.kind == KIND_PERTURBED_GAMMA

    def test_error_positions(self):
        with pytest.raises(SchemaError, match=r"\$\.sigma"):
            model_from_dict({"kind": "perturbed_gamma", "alpha": 1.0, "xi": 1.0})
        with pytest.raises(SchemaError, match=r"\$\.ph\.T\[0\]\[1\]"):
            model_from_dict(
                {
                    "kind": "perturbed_cp_ph",
                    "sigma": 1.0,
                    "lambda": 1.0,
                    "ph": {"alpha": [1.0], "T": [[-1.0, "x"]]},
                }
            )
        with pytest.raises(SchemaError, match="kind"):
            model_from_dict({"kind": "levy_flight", "sigma": 1.0})
        with pytest.raises(SchemaError, match="invalid JSON"):
            model_from_json("{not json")

    def test_ph_matrix_rows(self):
        doc = {
            "kind": "perturbed_cp_ph",
            "sigma": 1.0,
            "lambda": 2.0,
            "ph": {"alpha": [0.5, 0.5], "T": [[-3.0, 1.0], [0.5, -2.0]]},
        }
        model = model_from_dict(doc)
        assert model.ph.order == 2
        assert model.ph.t_mat[1, 0] == 0.5
