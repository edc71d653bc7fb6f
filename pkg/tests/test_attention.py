import numpy as np
import pytest

from kernattn.attention import AttentionLayerParams, attend, attention_weights, projections_full_rank
from kernattn.kernels import EDP, KINDS, L2, QUADRATIC, RBF
from kernattn.numcore import DimensionError, NonFiniteError, Tensor, grad_check, reduce

from .oracles import softmax_attention, softmax_rows


def layer(rng, kind, H=2, d=4, D=6, **kw):
    kw.setdefault("theta_tau", float(rng.uniform(-0.5, 0.5)))
    kw.setdefault("gamma", float(rng.uniform(0.1, 1.0)))
    return AttentionLayerParams.init(rng, kind, H, d, D, **kw)


def raw(p):
    return [p.w_q.data, p.w_k.data, p.w_v.data, p.w_o.data]


class TestParams:
    def test_scalars_follow_kind(self, rng):
        assert layer(rng, RBF).theta_tau.shape == (2,) and layer(rng, RBF).gamma is None
        assert layer(rng, QUADRATIC).gamma.shape == (2,)
        assert layer(rng, EDP).kernel_param() is None

    def test_init_bounds(self, rng):
        p = layer(rng, EDP, D=16)
        assert np.all(np.abs(p.w_q.data) <= 0.25)

    def test_rank_requirement(self, rng):
        with pytest.raises(ValueError, match="rank"):
            AttentionLayerParams.init(rng, EDP, 1, 8, 4)

    def test_rank_check_detects_deficient_projection(self, rng):
        p = layer(rng, EDP)
        w = p.w_q.data.copy()
        w[0, 1] = w[0, 0]
        p.w_q = Tensor(w)
        assert not projections_full_rank(p)

    def test_shape_mismatch(self, rng):
        p = layer(rng, EDP)
        with pytest.raises(DimensionError):
            AttentionLayerParams(EDP, p.w_q, p.w_k, p.w_v, Tensor(np.zeros((6, 5))))

    def test_scalar_for_wrong_kind(self, rng):
        p = layer(rng, EDP)
        with pytest.raises(ValueError):
            AttentionLayerParams(EDP, p.w_q, p.w_k, p.w_v, p.w_o, theta_tau=Tensor(np.zeros(2)))

    def test_non_finite_parameter(self, rng):
        p = layer(rng, EDP)
        bad = p.w_v.data.copy()
        bad[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            AttentionLayerParams(EDP, p.w_q, p.w_k, Tensor(bad), p.w_o)


class TestSoftmaxEquivalence:
    def test_fifty_random_cases(self, rng):
        H, T, S, d, D = 2, 3, 4, 8, 8
        for _ in range(50):
            p = AttentionLayerParams.init(rng, EDP, H, d, D)
            t, s = rng.normal(size=(T, D)), rng.normal(size=(S, D))
            got = attend(p, t, s).data
            ref = softmax_attention(*raw(p), t, s)
            assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) <= 1e-12

    def test_weights_are_softmax(self, rng):
        p = AttentionLayerParams.init(rng, EDP, 2, 3, 5)
        t, s = rng.normal(size=(3, 5)), rng.normal(size=(4, 5))
        a = attention_weights(p, t, s).data
        for h in range(2):
            logits = (t @ p.w_q.data[h].T) @ (s @ p.w_k.data[h].T).T / np.sqrt(3)
            np.testing.assert_allclose(a[h], softmax_rows(logits), rtol=1e-12)

    def test_masked_matches_masked_softmax(self, rng):
        p = AttentionLayerParams.init(rng, EDP, 2, 4, 6)
        t, s = rng.normal(size=(3, 6)), rng.normal(size=(5, 6))
        mask = np.array([True, False, True, True, False])
        np.testing.assert_allclose(attend(p, t, s, mask).data, softmax_attention(*raw(p), t, s, mask), rtol=1e-12)


class TestBehaviour:
    @pytest.mark.parametrize("kind", KINDS)
    def test_single_source(self, kind, rng):
        p = layer(rng, kind)
        t, s = rng.normal(size=(3, 6)), rng.normal(size=(1, 6))
        heads = np.concatenate([p.w_v.data[h] @ s[0] for h in range(2)])
        expected = np.tile(p.w_o.data @ heads, (3, 1))
        np.testing.assert_allclose(attend(p, t, s).data, expected, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("kind", KINDS)
    def test_identical_sources_independent_of_count(self, kind, rng):
        p = layer(rng, kind)
        t, s = rng.normal(size=(2, 6)), rng.normal(size=6)
        one = attend(p, t, s[None]).data
        many = attend(p, t, np.tile(s, (5, 1))).data
        np.testing.assert_allclose(many, one, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("kind", KINDS)
    def test_source_permutation_equivariance(self, kind, rng):
        p = layer(rng, kind)
        t, s = rng.normal(size=(3, 6)), rng.normal(size=(5, 6))
        mask = np.array([True, True, False, True, True])
        perm = rng.permutation(5)
        np.testing.assert_allclose(
            attend(p, t, s[perm], mask[perm]).data, attend(p, t, s, mask).data, rtol=1e-11, atol=1e-13
        )

    def test_kernel_swap_keeps_shape(self, rng):
        t, s = rng.normal(size=(3, 6)), rng.normal(size=(4, 6))
        assert {attend(layer(rng, k), t, s).shape for k in KINDS} == {(3, 6)}

    def test_equal_kernel_values_give_uniform_weights(self, rng):
        p = layer(rng, RBF)
        t = rng.normal(size=(2, 6))
        a = attention_weights(p, t, np.zeros((4, 6))).data
        np.testing.assert_allclose(a, 0.25, rtol=1e-14)

    def test_masked_column_renormalizes(self, rng):
        p = layer(rng, EDP)
        t, s = rng.normal(size=(2, 6)), rng.normal(size=(3, 6))
        full = attention_weights(p, t, s).data
        a = attention_weights(p, t, s, np.array([True, False, True])).data
        assert not a[..., 1].any()
        expected = full[..., [0, 2]] / full[..., [0, 2]].sum(axis=-1, keepdims=True)
        np.testing.assert_allclose(a[..., [0, 2]], expected, rtol=1e-13)

    @pytest.mark.parametrize("kind", KINDS)
    def test_rows_stochastic(self, kind, rng):
        for _ in range(20):
            p = layer(rng, kind)
            S = int(rng.integers(1, 7))
            mask = rng.uniform(size=S) < 0.7
            mask[0] = True
            a = attention_weights(p, rng.normal(size=(3, 6)), rng.normal(size=(S, 6)), mask).data
            assert np.max(np.abs(a[..., mask].sum(-1) - 1)) <= 1e-12
            assert not a[..., ~mask].any()

    def test_l2_single_coincident_source_falls_back_to_uniform(self, rng):
        # q == k in every head gives an all-zero l2 row
        p = layer(rng, L2, D=4)
        p.w_k = p.w_q
        x = rng.normal(size=(1, 4))
        a = attention_weights(p, x, x).data
        np.testing.assert_array_equal(a, np.ones((2, 1, 1)))

    def test_self_attention(self, rng):
        p = layer(rng, RBF)
        x = rng.normal(size=(4, 6))
        np.testing.assert_array_equal(attend(p, x, x).data, attend(p, x, x.copy()).data)

    def test_batched_matches_unbatched(self, rng):
        p = layer(rng, QUADRATIC)
        t, s = rng.normal(size=(3, 2, 6)), rng.normal(size=(3, 4, 6))
        mask = np.array([[True, True, False, True], [True] * 4, [False, True, True, True]])
        batched = attend(p, t, s, mask).data
        for b in range(3):
            np.testing.assert_allclose(batched[b], attend(p, t[b], s[b], mask[b]).data, rtol=1e-13)


class TestErrors:
    def test_all_masked(self, rng):
        with pytest.raises(ValueError, match="masked"):
            attend(layer(rng, EDP), rng.normal(size=(2, 6)), rng.normal(size=(3, 6)), np.zeros(3, bool))

    def test_wrong_width(self, rng):
        with pytest.raises(DimensionError):
            attend(layer(rng, EDP), rng.normal(size=(2, 5)), rng.normal(size=(3, 6)))

    def test_mask_shape(self, rng):
        with pytest.raises(DimensionError):
            attend(layer(rng, EDP), rng.normal(size=(2, 6)), rng.normal(size=(3, 6)), np.ones(4, bool))

    def test_overflow_names_head_and_pair(self, rng):
        p = layer(rng, EDP)
        p.w_k = p.w_q  # q.k = |q|^2 > 0, so exp overflows
        x = np.full((1, 6), 1e3)
        with pytest.raises(NonFiniteError, match="head 0, target 0, source 0"):
            attend(p, x, x)


class TestGradients:
    @pytest.mark.parametrize("kind", KINDS)
    def test_layer_gradients(self, kind, rng):
        p = layer(rng, kind, H=2, d=2, D=3)
        t, s = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
        mask = np.array([True, False, True])
        w = Tensor(rng.normal(size=(2, 3)))
        names = list(p.parameters())

        def loss(tt, ss, *leaves):
            q = AttentionLayerParams(kind, **dict(zip(names, leaves)))
            return reduce("sum", attend(q, tt, ss, mask) * w)

        at = [t, s, *(x.data for x in p.parameters().values())]
        rep = grad_check(loss, at, step=1e-5, tol=1e-4)
        assert rep.passed, rep.max_rel_errors
