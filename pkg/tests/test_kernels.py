import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kernattn.experiments import kernel_as_function
from kernattn.kernels import (
    EDP,
    EXP_INTERSECTION,
    KINDS,
    L2,
    QUADRATIC,
    RBF,
    KernelConfigError,
    KernelContractError,
    KernelSpec,
    cross_gram,
    gram,
    kernel_eval,
    normalize_rows,
)
from kernattn.kernels._backend import BACKENDS
from kernattn.kernels.spec import KIND_CODES
from kernattn.numcore import DimensionError, Tensor, grad_check, reduce

from .oracles import softmax_rows


def value(kind, q, k, d=None, **kw):
    q, k = np.atleast_1d(np.asarray(q, float)), np.atleast_1d(np.asarray(k, float))
    return kernel_eval(KernelSpec.make(kind, d or len(q), **kw), q, k).item()


class TestKernelSpec:
    def test_scalars_attached_by_kind(self):
        assert KernelSpec.make(EDP, 4).theta_tau is None
        assert KernelSpec.make(RBF, 4).theta_tau is not None
        assert KernelSpec.make(L2, 4).gamma is None
        assert KernelSpec.make(QUADRATIC, 4).gamma is not None

    def test_tau_is_positive_for_any_theta(self):
        for theta in (-30.0, 0.0, 5.0):
            assert KernelSpec.make(RBF, 2, theta_tau=theta).tau > 0

    def test_default_tau_is_one(self):
        assert KernelSpec.make(L2, 2).tau == 1.0

    def test_missing_scalar_rejected(self):
        with pytest.raises(KernelConfigError):
            KernelSpec(RBF, 4, None, None)

    def test_extra_scalar_rejected(self):
        with pytest.raises(KernelConfigError):
            KernelSpec(EDP, 4, None, Tensor(0.0))

    def test_unknown_kind(self):
        with pytest.raises(KernelConfigError):
            KernelSpec.make("laplace", 4)

    @pytest.mark.parametrize("kind", KINDS)
    def test_dict_round_trip(self, kind):
        spec = KernelSpec.make(kind, 3, theta_tau=0.25, gamma=-0.5)
        back = KernelSpec.from_dict(spec.to_dict())
        assert back.to_dict() == spec.to_dict()

    def test_from_dict_is_strict(self):
        with pytest.raises(KernelConfigError):
            KernelSpec.from_dict({"kind": "edp", "head_dim": 2, "tau": 1.0})


class TestKernelValues:
    def test_edp_closed_form(self):
        assert value(EDP, [1.0], [1.0]) == pytest.approx(math.e, rel=1e-15)

    def test_rbf_identity(self, rng):
        q = rng.normal(size=5)
        assert value(RBF, q, q, theta_tau=0.7) == 1.0

    def test_rbf_closed_form(self):
        assert value(RBF, [0.0], [2.0]) == pytest.approx(math.exp(-4.0), rel=1e-15)

    def test_l2_closed_form(self):
        assert value(L2, np.zeros(4), np.ones(4)) == pytest.approx(1.0, rel=1e-15)

    def test_exp_intersection_closed_form(self):
        assert value(EXP_INTERSECTION, [1.0, 2.0], [2.0, 1.0]) == pytest.approx(math.exp(2.0), rel=1e-15)

    def test_quadratic_closed_form(self):
        # q.k = 2, d = 4 -> (2/2 + 0)^2
        assert value(QUADRATIC, [1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]) == pytest.approx(1.0, rel=1e-15)

    def test_quadratic_gamma(self):
        assert value(QUADRATIC, [0.0], [0.0], gamma=-1.5) == pytest.approx(2.25)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            kernel_eval(KernelSpec.make(EDP, 3), np.ones(3), np.ones(2))

    def test_rbf_is_normalized_edp(self, rng):
        # tau = 1/2: exp(-|q-k|^2/(2 sqrt d)) = edp(q,k) exp(-|q|^2/(2 sqrt d)) exp(-|k|^2/(2 sqrt d))
        d = 6
        for _ in range(20):
            q, k = rng.normal(size=d), rng.normal(size=d)
            lhs = value(RBF, q, k, theta_tau=math.log(0.5))
            c = 2.0 * math.sqrt(d)
            rhs = value(EDP, q, k) * math.exp(-(q @ q) / c) * math.exp(-(k @ k) / c)
            assert lhs == pytest.approx(rhs, rel=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_symmetric(self, kind, rng):
        for _ in range(20):
            q, k = rng.normal(size=4), rng.normal(size=4)
            assert value(kind, q, k, gamma=0.3, theta_tau=-0.2) == value(kind, k, q, gamma=0.3, theta_tau=-0.2)

    @pytest.mark.parametrize("kind", KINDS)
    @settings(max_examples=60, deadline=None)
    @given(
        q=arrays(np.float64, 3, elements=st.floats(-5, 5)),
        k=arrays(np.float64, 3, elements=st.floats(-5, 5)),
        theta=st.floats(-3, 3),
        gamma=st.floats(-3, 3),
    )
    def test_non_negative_and_finite(self, kind, q, k, theta, gamma):
        v = value(kind, q, k, theta_tau=theta, gamma=gamma)
        assert math.isfinite(v) and v >= 0.0


class TestGradients:
    @pytest.mark.parametrize("kind", KINDS)
    def test_twenty_random_points(self, kind, rng):
        d = 4
        f = kernel_as_function(kind, d)
        for _ in range(20):
            at = [rng.normal(size=d), rng.normal(size=d)]
            if kind in (RBF, L2):
                at.append(np.asarray(rng.uniform(-1, 1)))
            if kind == QUADRATIC:
                at.append(np.asarray(rng.uniform(-1, 1)))
            rep = grad_check(f, at, step=1e-5, tol=1e-5)
            assert rep.passed, rep.max_rel_errors

    def test_edp_wrt_q_and_k(self, rng):
        rep = grad_check(kernel_as_function(EDP, 5), [rng.normal(size=5), rng.normal(size=5)])
        assert rep.max_error <= 1e-6

    @pytest.mark.parametrize("kind", KINDS)
    def test_cross_gram_gradients(self, kind, rng):
        d = 3
        w = Tensor(rng.normal(size=(4, 5)))

        def f(Q, K, *scalars):
            spec = KernelSpec(kind, d, scalars[0] if kind in (RBF, L2) else None, scalars[0] if kind == QUADRATIC else None)
            return reduce("sum", cross_gram(spec, Q, K) * w)

        at = [rng.normal(size=(4, d)), rng.normal(size=(5, d))]
        if kind in (RBF, L2, QUADRATIC):
            at.append(np.asarray(0.3))
        assert grad_check(f, at, tol=1e-5).passed

    def test_l2_gradient_at_coincident_points_is_zero(self):
        q = Tensor(np.ones(3), requires_grad=True)
        kernel_eval(KernelSpec.make(L2, 3), q, np.ones(3)).backward()
        np.testing.assert_array_equal(q.grad, np.zeros(3))


class TestCrossGram:
    def test_single_pair_reduces_to_kernel_eval(self, rng):
        spec = KernelSpec.make(RBF, 3, theta_tau=0.4)
        q, k = rng.normal(size=3), rng.normal(size=3)
        assert cross_gram(spec, q[None], k[None]).data[0, 0] == pytest.approx(kernel_eval(spec, q, k).item(), rel=1e-15)

    def test_edp_zero_inputs(self):
        np.testing.assert_array_equal(cross_gram(KernelSpec.make(EDP, 2), np.zeros((3, 2)), np.zeros((4, 2))).data, np.ones((3, 4)))

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_loop(self, kind, rng):
        spec = KernelSpec.make(kind, 4, theta_tau=-0.3, gamma=0.6)
        Q, K = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
        loop = np.array([[kernel_eval(spec, q, k).item() for k in K] for q in Q])
        np.testing.assert_allclose(cross_gram(spec, Q, K).data, loop, rtol=1e-13, atol=0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            cross_gram(KernelSpec.make(EDP, 3), np.ones((2, 3)), np.ones((2, 4)))

    def test_batched_param_per_group(self, rng):
        Q, K = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 5, 4))
        theta = np.array([-0.5, 0.5])
        out = gram(RBF, Q, K, 4, theta).data
        for g in range(2):
            spec = KernelSpec.make(RBF, 4, theta_tau=theta[g])
            np.testing.assert_allclose(out[g], cross_gram(spec, Q[g], K[g]).data, rtol=1e-14)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled extension not built")
class TestBackends:
    @pytest.mark.parametrize("kind", KINDS)
    def test_forward_and_backward_agree(self, kind, nprng):
        G, T, S, d = 3, 4, 5, 6
        Q, K = nprng.normal(size=(G, T, d)), nprng.normal(size=(G, S, d))
        Q[0, 0] = K[0, 0]  # coincident pair exercises the L2 zero-distance branch
        param = nprng.uniform(0.2, 2.0, size=G)
        scale = 1 / math.sqrt(d)
        code = KIND_CODES[kind]
        results = {}
        for name, (fwd, bwd) in BACKENDS.items():
            out = np.asarray(fwd(code, Q, K, param, scale))
            gout = np.ascontiguousarray(nprng.normal(size=out.shape)) if not results else results["gout"]
            grads = [np.asarray(x) for x in bwd(code, Q, K, param, scale, out, gout)]
            results.setdefault("gout", gout)
            results[name] = (out, grads)
        out_p, g_p = results["python"]
        out_c, g_c = results["compiled"]
        np.testing.assert_allclose(out_c, out_p, rtol=1e-13, atol=1e-15)
        for a, b in zip(g_c, g_p):
            np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)


_ATTEND_SCRIPT = """
import sys
import numpy as np
from kernattn.attention import AttentionLayerParams, attend
from kernattn.kernels import KINDS, _backend
from kernattn.numcore import Rng
rng = Rng(11)
outs = [attend(AttentionLayerParams.init(rng, k, 2, 3, 5, theta_tau=0.2, gamma=0.4),
               rng.normal(size=(4, 5)), rng.normal(size=(6, 5))).data for k in KINDS]
np.save(sys.argv[1], np.stack(outs))
print(_backend.NAME)
"""


class TestBackendSelection:
    def run(self, tmp_path, choice):
        env = {**os.environ, "KERNATTN_BACKEND": choice}
        path = tmp_path / f"{choice}.npy"
        proc = subprocess.run([sys.executable, "-c", _ATTEND_SCRIPT, str(path)], env=env, capture_output=True, text=True)
        return proc, path

    def test_forced_fallback_matches_default(self, tmp_path):
        fallback, p_path = self.run(tmp_path, "python")
        default, d_path = self.run(tmp_path, "auto")
        assert fallback.returncode == 0 and fallback.stdout.strip() == "python"
        assert default.returncode == 0
        np.testing.assert_allclose(np.load(d_path), np.load(p_path), rtol=1e-12, atol=1e-14)

    def test_invalid_choice(self, tmp_path):
        proc, _ = self.run(tmp_path, "gpu")
        assert proc.returncode != 0 and "KERNATTN_BACKEND" in proc.stderr


class TestNormalizeRows:
    def test_uniform_row(self):
        np.testing.assert_allclose(normalize_rows(Tensor([[1.0, 1, 1, 1]])).data, [[0.25] * 4])

    def test_single_nonzero(self):
        np.testing.assert_array_equal(normalize_rows(Tensor([[2.0, 0, 0]])).data, [[1, 0, 0]])

    def test_softmax_identity(self):
        a = 0.37
        row = np.exp([a, a + math.log(2.0)])
        np.testing.assert_allclose(normalize_rows(Tensor([row])).data, [[1 / 3, 2 / 3]], rtol=1e-15)

    def test_mask_zeroes_and_renormalizes(self):
        out = normalize_rows(Tensor([[1.0, 2.0, 3.0]]), np.array([[True, False, True]])).data
        np.testing.assert_allclose(out, [[0.25, 0.0, 0.75]])

    def test_degenerate_row_falls_back_to_uniform(self):
        out = normalize_rows(Tensor([[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]]), np.array([[True, True, False], [True] * 3])).data
        np.testing.assert_array_equal(out, [[0.5, 0.5, 0.0], [0.5, 0.0, 0.5]])

    def test_negative_entry(self):
        with pytest.raises(KernelContractError):
            normalize_rows(Tensor([[1.0, -0.1]]))

    def test_fully_masked_row(self):
        with pytest.raises(KernelContractError):
            normalize_rows(Tensor([[1.0, 2.0]]), np.array([[False, False]]))

    def test_gradient(self, rng):
        mask = np.array([[True, False, True, True], [True, True, True, False]])
        w = Tensor(rng.normal(size=(2, 4)))
        f = lambda k: reduce("sum", normalize_rows(k, mask) * w)  # noqa: E731
        assert grad_check(f, [rng.uniform(0.5, 2.0, size=(2, 4))]).passed

    def test_edp_gram_is_softmax(self, rng):
        d = 8
        Q, K = rng.normal(size=(5, d)), rng.normal(size=(7, d))
        got = normalize_rows(cross_gram(KernelSpec.make(EDP, d), Q, K)).data
        ref = softmax_rows(Q @ K.T / math.sqrt(d))
        assert np.max(np.abs(got - ref) / np.abs(ref)) <= 1e-12
