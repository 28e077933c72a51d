import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pampose import tensor as T
from pampose.pam import (
    PamConfig,
    PamParams,
    apply_attention,
    attention_map,
    cap_forward,
    combine_paths,
    gap_forward,
    init_pam_params,
    pam_forward,
    pam_param_count,
)
from pampose.tensor import DimensionError, Tensor

from oracles import central_difference, gradient_mismatch

seeds = st.integers(0, 2**31 - 1)


def np_relu(x):
    return np.maximum(x, 0.0)


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def straight_cap(F, params):
    (w1, b1), (w2, b2) = [(w.data, b.data) for w, b in params.cap]
    return w2 @ np_relu(w1 @ F.mean(axis=1) + b1) + b2


def column_gap(F, params):
    """GAP evaluated one point at a time as plain dense layers."""
    out = []
    for n in range(F.shape[1]):
        h = F[:, n]
        for i, (w, b) in enumerate(params.gap):
            h = w.data @ h + b.data
            if i < len(params.gap) - 1:
                h = np_relu(h)
        out.append(h[0])
    return np.array(out)[None, :]


def zero_params(cfg):
    p = init_pam_params(cfg, 0)
    for w, b in p.cap + p.gap:
        w.data[...] = 0.0
        b.data[...] = 0.0
    return p


def test_config_validation():
    with pytest.raises(ValueError):
        PamConfig(channels=64, reduction_ratio=0)
    with pytest.raises(ValueError):
        PamConfig(channels=64, reduction_ratio=5)
    with pytest.raises(ValueError):
        PamConfig(gap_conv_count=1)


def test_zero_params_give_zero_logits():
    cfg = PamConfig(channels=8, reduction_ratio=2)
    p = zero_params(cfg)
    F = Tensor(np.random.default_rng(0).normal(size=(8, 5)))
    np.testing.assert_array_equal(cap_forward(F, p).data, np.zeros(8))
    gap = gap_forward(F, p)
    assert gap.shape == (1, 5)
    np.testing.assert_array_equal(gap.data, np.zeros((1, 5)))


def test_cap_identity_mlp_passes_pool_through():
    cfg = PamConfig(channels=2, reduction_ratio=1)
    eye = lambda: (Tensor(np.eye(2)), Tensor(np.zeros(2)))
    p = PamParams(cfg, cap=[eye(), eye()])
    logits = cap_forward(Tensor([[1.0, 2, 3], [4, 5, 6]]), p)
    np.testing.assert_array_equal(logits.data, [2, 5])


def test_cap_matches_straight_line_oracle():
    rng = np.random.default_rng(1)
    for seed in range(10):
        p = init_pam_params(PamConfig(channels=32, reduction_ratio=4), seed)
        F = rng.normal(size=(32, 17))
        np.testing.assert_allclose(cap_forward(Tensor(F), p).data, straight_cap(F, p), atol=1e-12, rtol=0)


def test_gap_single_point_equals_dense_stack():
    p = init_pam_params(PamConfig(channels=16, reduction_ratio=4), 3)
    F = np.random.default_rng(2).normal(size=(16, 1))
    np.testing.assert_allclose(gap_forward(Tensor(F), p).data, column_gap(F, p), atol=1e-12, rtol=0)


def test_gap_matches_column_oracle():
    rng = np.random.default_rng(4)
    for seed in range(10):
        p = init_pam_params(PamConfig(channels=16, reduction_ratio=2, gap_conv_count=4), seed)
        F = rng.normal(size=(16, 23))
        np.testing.assert_allclose(gap_forward(Tensor(F), p).data, column_gap(F, p), atol=1e-12, rtol=0)


def test_channel_mismatch():
    p = init_pam_params(PamConfig(channels=16, reduction_ratio=4), 0)
    F = Tensor(np.zeros((8, 5)))
    with pytest.raises(DimensionError):
        cap_forward(F, p)
    with pytest.raises(DimensionError):
        gap_forward(F, p)


def test_combine_zero_logits_half():
    A = combine_paths(Tensor(np.zeros(3)), Tensor(np.zeros((1, 4))))
    np.testing.assert_array_equal(A.data, np.full((3, 4), 0.5))


def test_combine_saturates():
    A = combine_paths(Tensor(np.full(3, 50.0)), Tensor(np.zeros((1, 4))))
    assert np.abs(A.data - 1.0).max() <= 1e-15


def test_combine_matches_tiled_oracle():
    rng = np.random.default_rng(5)
    cap, gap = rng.normal(size=6), rng.normal(size=(1, 9))
    expected = np_sigmoid(np.tile(cap[:, None], (1, 9)) + np.tile(gap, (6, 1)))
    np.testing.assert_allclose(combine_paths(Tensor(cap), Tensor(gap)).data, expected, atol=1e-15, rtol=0)


def test_combine_single_path_needs_shape():
    with pytest.raises(ValueError):
        combine_paths(Tensor(np.zeros(3)), None)
    with pytest.raises(ValueError):
        combine_paths(None, None, shape=(3, 4))
    A = combine_paths(None, Tensor(np.zeros((1, 4))), shape=(3, 4))
    np.testing.assert_array_equal(A.data, np.full((3, 4), 0.5))


def test_apply_attention_examples():
    F = Tensor(np.random.default_rng(6).normal(size=(4, 5)))
    np.testing.assert_array_equal(apply_attention(F, Tensor(np.zeros((4, 5)))).data, F.data)
    np.testing.assert_array_equal(apply_attention(F, Tensor(np.ones((4, 5)))).data, 2 * F.data)
    A = np.random.default_rng(7).uniform(size=(4, 5))
    np.testing.assert_allclose(apply_attention(F, Tensor(A)).data, F.data * (1 + A), atol=1e-15, rtol=0)
    with pytest.raises(DimensionError):
        apply_attention(F, Tensor(np.zeros((4, 4))))


def test_param_count_hand_example():
    assert pam_param_count(PamConfig(channels=128, reduction_ratio=128, gap_conv_count=3)) == 518


def test_param_count_matches_initialized_tensors():
    for r in (1, 2, 4, 8, 16):
        for gc in (2, 3, 5):
            cfg = PamConfig(channels=64, reduction_ratio=r, gap_conv_count=gc)
            p = init_pam_params(cfg, 0)
            assert sum(w.data.size + b.data.size for w, b in p.cap + p.gap) == pam_param_count(cfg)


def test_param_count_monotone_in_ratio():
    counts = [pam_param_count(PamConfig(channels=128, reduction_ratio=r)) for r in (4, 8, 16, 32, 64, 128)]
    assert all(a > b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == min(counts)


def test_param_count_respects_disabled_paths():
    full = PamConfig(channels=64, reduction_ratio=16)
    cap_only = PamConfig(channels=64, reduction_ratio=16, enable_gap=False)
    gap_only = PamConfig(channels=64, reduction_ratio=16, enable_cap=False)
    none = PamConfig(channels=64, reduction_ratio=16, enable_cap=False, enable_gap=False)
    assert pam_param_count(cap_only) + pam_param_count(gap_only) == pam_param_count(full)
    assert pam_param_count(none) == 0


def test_disabled_module_is_identity():
    cfg = PamConfig(channels=8, reduction_ratio=2, enable_cap=False, enable_gap=False)
    F = Tensor(np.random.default_rng(8).normal(size=(8, 3)))
    assert pam_forward(F, init_pam_params(cfg, 0)) is F


@pytest.mark.parametrize("cap,gap", [(True, False), (False, True), (True, True)])
def test_single_path_ablations_run(cap, gap):
    cfg = PamConfig(channels=8, reduction_ratio=2, enable_cap=cap, enable_gap=gap)
    F = Tensor(np.random.default_rng(9).normal(size=(8, 6)))
    out = pam_forward(F, init_pam_params(cfg, 0))
    assert out.shape == (8, 6)


def _random_case(seed, c=16, r=4):
    rng = np.random.default_rng(seed)
    p = init_pam_params(PamConfig(channels=c, reduction_ratio=r), int(rng.integers(2**31)))
    n = int(rng.integers(1, 40))
    F = rng.normal(scale=float(rng.uniform(0.1, 20)), size=(c, n))
    return p, F, rng


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_attention_strictly_inside_unit_interval(seed):
    p, F, _ = _random_case(seed)
    A = attention_map(Tensor(F), p).data
    assert np.all(A > 0) and np.all(A < 1)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_output_bounded_by_twice_input(seed):
    p, F, _ = _random_case(seed)
    out = pam_forward(Tensor(F), p).data
    assert np.all(np.abs(out) <= 2 * np.abs(F))


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_permutation_symmetries_exact(seed):
    p, F, rng = _random_case(seed)
    perm = rng.permutation(F.shape[1])
    cap, cap_p = cap_forward(Tensor(F), p).data, cap_forward(Tensor(F[:, perm]), p).data
    gap, gap_p = gap_forward(Tensor(F), p).data, gap_forward(Tensor(F[:, perm]), p).data
    np.testing.assert_array_equal(cap_p, cap)
    np.testing.assert_array_equal(gap_p, gap[:, perm])


def test_pam_gradient_check():
    cfg = PamConfig(channels=8, reduction_ratio=2)
    for seed in range(20):
        rng = np.random.default_rng([seed, 31])
        p = init_pam_params(cfg, seed)
        leaves = [t for pair in p.cap + p.gap for t in pair]
        F = rng.normal(size=(8, 5))
        x = Tensor(F.copy(), requires_grad=True)
        for t in leaves:
            t.requires_grad = True
        weights = rng.normal(size=(8, 5))
        loss = lambda inp: T.tsum(T.mul(pam_forward(inp, p), Tensor(weights)))
        T.backward(loss(x))
        arrays = [F] + [t.data for t in leaves]
        analytic = [x.grad] + [t.grad for t in leaves]
        numeric = central_difference(lambda: loss(Tensor(F)).item(), arrays)
        for a, n in zip(analytic, numeric):
            assert gradient_mismatch(a, n) <= 1e-4
