import json
import math
import warnings

import numpy as np
import pytest

from kernattn.binarykm import (
    BinaryDataset,
    BinaryKernelModel,
    DegenerateSubproblemWarning,
    ExistenceError,
    NotPositiveSemidefinite,
    default_kernel,
    distill,
    fit_rank1,
    fit_regularized,
    gram_matrix,
    independence_check,
    interpolate,
    objective,
)
from kernattn.kernels import L2, QUADRATIC, RBF, KernelSpec
from kernattn.nets import FitOptions
from kernattn.numcore import NonFiniteError, Rng

from .oracles import edp_gram, gd_objective_minimum, regularized_objective


def random_data(rng, nx, ny, dx=2, dy=2):
    return BinaryDataset(rng.normal(size=(nx, dx)), rng.normal(size=(ny, dy)), rng.normal(size=(nx, ny)))


def grams(data):
    return edp_gram(data.xs, data.xs), edp_gram(data.ys, data.ys)


class TestDataset:
    def test_response_for_every_pair(self):
        with pytest.raises(ValueError, match="every pair"):
            BinaryDataset(np.zeros((2, 1)), np.zeros((3, 1)), np.zeros((3, 2)))

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            BinaryDataset(np.zeros((1, 1)), np.zeros((1, 1)), [[np.nan]])

    def test_arrays_read_only(self, rng):
        data = random_data(rng, 2, 2)
        with pytest.raises(ValueError):
            data.Z[0, 0] = 1.0

    def test_json_round_trip(self, rng, tmp_path):
        data = random_data(rng, 3, 2)
        data.save(tmp_path / "d.json")
        back = BinaryDataset.load(tmp_path / "d.json")
        np.testing.assert_array_equal(back.Z, data.Z)
        assert set(json.loads((tmp_path / "d.json").read_text())) == {"xs", "ys", "Z"}

    def test_exact_fields(self):
        with pytest.raises(ValueError, match="exactly"):
            BinaryDataset.from_dict({"xs": [[0]], "ys": [[0]], "Z": [[1]], "w": 1})


class TestIndependenceCheck:
    def test_duplicate_point(self):
        xs = np.array([[0.3, 1.0], [0.3, 1.0], [-1.0, 0.5]])
        assert not independence_check(edp_gram(xs, xs))["full_rank"]

    def test_identity(self):
        out = independence_check(np.eye(4))
        assert out["full_rank"] and out["min_singular_value"] == 1.0

    def test_random_points(self, rng):
        xs = rng.normal(size=(6, 3))
        out = independence_check(edp_gram(xs, xs))
        assert out["full_rank"]
        assert out["min_singular_value"] == pytest.approx(np.linalg.svd(edp_gram(xs, xs), compute_uv=False)[-1])

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            independence_check([[1.0, np.inf], [np.inf, 1.0]])


class TestInterpolate:
    def test_single_pair(self):
        data = BinaryDataset([[0.5]], [[2.0]], [[3.0]])
        model = interpolate(data)
        kxx, kyy = math.exp(0.25), math.exp(4.0)
        assert model.C[0, 0] == pytest.approx(3.0 / (kxx * kyy), rel=1e-14)
        assert model.predict()[0, 0] == pytest.approx(3.0, rel=1e-14)

    def test_zero_responses(self, rng):
        data = BinaryDataset(rng.normal(size=(3, 2)), rng.normal(size=(2, 2)), np.zeros((3, 2)))
        assert not interpolate(data).C.any()

    def test_random_residuals(self, rng):
        for _ in range(20):
            data = random_data(rng, 5, 4)
            resid = np.abs(interpolate(data).predict() - data.Z)
            assert np.all(resid <= 1e-8 * np.maximum(1.0, np.abs(data.Z)))

    def test_solution_matches_linear_solve(self, rng):
        data = random_data(rng, 4, 3)
        Kx, Ky = grams(data)
        C = np.linalg.solve(Kx, data.Z) @ np.linalg.inv(Ky)
        np.testing.assert_allclose(interpolate(data).C, C, rtol=1e-8, atol=1e-10)

    @pytest.mark.parametrize("side", ["x", "y"])
    def test_rank_deficient_side_named(self, side, rng):
        pts = np.array([[1.0, 0.0], [1.0, 0.0]])
        data = (
            BinaryDataset(pts, rng.normal(size=(2, 2)), np.ones((2, 2)))
            if side == "x"
            else BinaryDataset(rng.normal(size=(2, 2)), pts, np.ones((2, 2)))
        )
        with pytest.raises(ExistenceError, match=f"{side} side"):
            interpolate(data)

    def test_cross_points_prediction(self, rng):
        data = random_data(rng, 3, 3)
        model = interpolate(data)
        x, y = rng.normal(size=(2, 2)), rng.normal(size=(4, 2))
        expected = edp_gram(x, data.xs) @ model.C @ edp_gram(y, data.ys).T
        np.testing.assert_allclose(model.predict(x, y), expected, rtol=1e-12)


class TestFitRegularized:
    def test_vanishing_lambda_matches_interpolation(self, rng):
        data = random_data(rng, 4, 5)
        resid = np.abs(fit_regularized(data, lambda_x=0.0).predict() - data.Z)
        assert resid.max() <= 1e-8

    def test_huge_lambda_shrinks_to_zero(self, rng):
        C = fit_regularized(random_data(rng, 3, 3), lambda_x=1e12).C
        assert np.abs(C).max() < 1e-9

    def test_matches_gradient_descent_oracle(self, rng):
        for _ in range(3):
            data = random_data(rng, 6, 7)
            Kx, Ky = grams(data)
            model = fit_regularized(data, lambda_x=5e-4, lambda_y=5e-4)
            closed = regularized_objective(Kx, Ky, data.Z, model.C, 1e-3)
            assert abs(closed - gd_objective_minimum(Kx, Ky, data.Z, 1e-3)) <= 1e-6
            assert model.info["objective"] == pytest.approx(closed, rel=1e-10)

    def test_perturbations_never_improve(self, rng):
        data = random_data(rng, 5, 4)
        Kx, Ky = grams(data)
        model = fit_regularized(data, lambda_x=1e-2, lambda_y=1e-2)
        best = regularized_objective(Kx, Ky, data.Z, model.C, 2e-2)
        for _ in range(50):
            delta = rng.normal(size=model.C.shape)
            assert regularized_objective(Kx, Ky, data.Z, model.C + 1e-3 * delta, 2e-2) >= best

    def test_unique_under_point_reordering(self, rng):
        data = random_data(rng, 5, 6)
        px, py = rng.permutation(5), rng.permutation(6)
        shuffled = BinaryDataset(data.xs[px], data.ys[py], data.Z[np.ix_(px, py)])
        x, y = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
        a = fit_regularized(data, lambda_x=1e-2).predict(x, y)
        b = fit_regularized(shuffled, lambda_x=1e-2).predict(x, y)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)

    def test_lambdas_enter_as_sum(self, rng):
        data = random_data(rng, 3, 4)
        np.testing.assert_allclose(
            fit_regularized(data, lambda_x=0.3, lambda_y=0.1).C, fit_regularized(data, lambda_x=0.4).C, rtol=1e-12
        )

    def test_negative_lambda(self, rng):
        with pytest.raises(ValueError):
            fit_regularized(random_data(rng, 2, 2), lambda_y=-1.0)

    def test_other_loss(self, rng):
        with pytest.raises(ValueError, match="square"):
            fit_regularized(random_data(rng, 2, 2), loss="hinge")

    def test_non_psd_gram(self, rng):
        # the l2 "kernel" has a zero diagonal and positive off-diagonal, so an indefinite Gram
        data = random_data(rng, 3, 3)
        with pytest.raises(NotPositiveSemidefinite, match="x side"):
            fit_regularized(data, kx=KernelSpec.make(L2, 2), lambda_x=1e-2)

    def test_objective_helper(self, rng):
        data = random_data(rng, 2, 3)
        Kx, Ky = grams(data)
        C = rng.normal(size=(2, 3))
        assert objective(Kx, Ky, data.Z, C, 0.1) == pytest.approx(regularized_objective(Kx, Ky, data.Z, C, 0.1))


class TestFitRank1:
    def test_recovers_rank_one_data(self, rng):
        data = random_data(rng, 5, 4)
        Kx, Ky = grams(data)
        xi, zeta = rng.normal(size=5), rng.normal(size=4)
        Z = np.outer(Kx @ xi, Ky @ zeta)
        model = fit_rank1(BinaryDataset(data.xs, data.ys, Z))
        assert np.max(np.abs(model.predict() - Z)) <= 1e-6

    def test_zero_data(self, rng):
        data = BinaryDataset(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), np.zeros((3, 3)))
        model = fit_rank1(data)
        assert not model.xi.any() or not model.zeta.any()
        assert model.info["objective"] == 0.0

    @pytest.mark.parametrize("lam", [0.0, 1e-3, 0.1])
    def test_monotone_objective(self, lam, rng):
        model = fit_rank1(random_data(rng, 6, 6), lambda_x=lam, max_iters=50, tol=0.0)
        hist = np.asarray(model.info["history"])
        assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))

    def test_reports_iterations(self, rng):
        model = fit_rank1(random_data(rng, 3, 3), max_iters=7, tol=0.0)
        assert model.info["iterations"] == 7 and len(model.info["history"]) == 15

    def test_not_better_than_full_solution(self, rng):
        data = random_data(rng, 4, 4)
        full = fit_regularized(data, lambda_x=1e-2).info["objective"]
        assert fit_rank1(data, lambda_x=1e-2).info["objective"] >= full - 1e-12

    def test_degenerate_subproblem_warns(self):
        pts = np.array([[0.0], [0.0], [1.0]])
        data = BinaryDataset(pts, np.array([[0.5], [1.5]]), np.arange(6.0).reshape(3, 2) + 1)
        with pytest.warns(DegenerateSubproblemWarning, match="x update"):
            model = fit_rank1(data, max_iters=3)
        assert np.all(np.isfinite(model.xi))


class TestModel:
    def test_json_round_trip(self, rng):
        model = fit_rank1(random_data(rng, 3, 2), kx=KernelSpec.make(RBF, 2, theta_tau=0.3), lambda_y=0.5)
        back = BinaryKernelModel.from_dict(json.loads(model.to_json()))
        x = rng.normal(size=(2, 2))
        np.testing.assert_array_equal(back.predict(x, x), model.predict(x, x))
        assert back.lambda_y == 0.5 and back.mode == "rank1"

    def test_rank1_prediction_is_outer_product(self, rng):
        model = fit_rank1(random_data(rng, 3, 4))
        np.testing.assert_allclose(model.predict(), gram_matrix(model.kernel_x, model.xs) @ model.coefficients @ gram_matrix(model.kernel_y, model.ys), rtol=1e-12)
        np.testing.assert_array_equal(model.coefficients, np.outer(model.xi, model.zeta))

    def test_shape_checked(self, rng):
        with pytest.raises(ValueError):
            BinaryKernelModel(default_kernel(1), default_kernel(1), np.zeros((2, 1)), np.zeros((2, 1)), "full", C=np.zeros((2, 3)))


class ExpProduct:
    """Stand-in predictor with output exp(x y) on the unit square."""

    def predict(self, x, y):
        return np.exp(np.asarray(x) @ np.asarray(y).T)


class TestDistill:
    grid = np.linspace(0.0, 1.0, 32)[:, None]

    def test_constant_model(self):
        model = BinaryKernelModel(
            KernelSpec.make(QUADRATIC, 1, gamma=1.0), KernelSpec.make(QUADRATIC, 1, gamma=1.0),
            np.zeros((1, 1)), np.zeros((1, 1)), "full", C=np.array([[2.5]]),
        )
        res = distill(model, self.grid, self.grid, dh=1, m=8, seed=0)
        assert res.sup_error <= 1e-3

    def test_exp_product_dh1(self):
        assert distill(ExpProduct(), self.grid, self.grid, dh=1, m=8).sup_error <= 1e-2

    def test_random_fitted_model(self, rng):
        xs, ys = rng.uniform(size=(6, 1)), rng.uniform(size=(6, 1))
        data = BinaryDataset(xs, ys, rng.uniform(0.5, 2.0, size=(6, 6)))
        kern = KernelSpec.make(RBF, 1)
        model = fit_regularized(data, kern, kern, lambda_x=1e-3)
        held_x, held_y = rng.uniform(size=(64, 1)), rng.uniform(size=(64, 1))
        res = distill(model, self.grid, self.grid, dh=8, m=64, x_eval=held_x, y_eval=held_y, normalize=True)
        assert res.sup_error <= 0.05

    def test_non_positive_output(self):
        model = BinaryKernelModel(default_kernel(1), default_kernel(1), np.zeros((1, 1)), np.zeros((1, 1)), "full", C=np.array([[-1.0]]))
        with pytest.raises(ValueError, match="not positive"):
            distill(model, self.grid, self.grid, dh=1, m=4)

    def test_seeded(self):
        opts = FitOptions(steps=200)
        a = distill(ExpProduct(), self.grid, self.grid, dh=2, m=4, opts=opts, seed=3)
        b = distill(ExpProduct(), self.grid, self.grid, dh=2, m=4, opts=opts, seed=3)
        assert a.sup_error == b.sup_error and a.train_loss == b.train_loss
