import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import bilinear_oracle
from tryon.warp import loss_tv, resize_flow, upsample_flow, warp


def ramp(w=8, h=3):
    return torch.arange(w, dtype=torch.float64).expand(1, h, w).clone()


def const_flow(dx, dy, h=3, w=8):
    f = torch.zeros(2, h, w, dtype=torch.float64)
    f[0], f[1] = dx, dy
    return f


def test_zero_flow_is_identity():
    x = torch.randn(3, 5, 7, dtype=torch.float64)
    assert torch.equal(warp(x, torch.zeros(2, 5, 7, dtype=torch.float64)), x)


def test_ramp_shift_by_one_pads_with_zero():
    out = warp(ramp(), const_flow(1.0, 0.0))
    expected = bilinear_oracle(ramp().numpy(), const_flow(1.0, 0.0).numpy())
    np.testing.assert_allclose(out.numpy(), expected, atol=1e-12)
    np.testing.assert_allclose(out[0, :, :7].numpy(), np.arange(1, 8)[None].repeat(3, 0))
    assert (out[0, :, 7] == 0).all()


def test_ramp_half_pixel_shift():
    out = warp(ramp(), const_flow(0.5, 0.0))
    expected = bilinear_oracle(ramp().numpy(), const_flow(0.5, 0.0).numpy())
    np.testing.assert_allclose(out.numpy(), expected, atol=1e-12)
    np.testing.assert_allclose(out[0, :, :7].numpy(), (np.arange(7) + 0.5)[None].repeat(3, 0))


def test_matches_oracle_on_random_inputs(rng):
    for _ in range(50):
        x = rng.normal(size=(2, 8, 8))
        f = rng.uniform(-3, 3, size=(2, 8, 8))
        out = warp(torch.from_numpy(x), torch.from_numpy(f)).numpy()
        np.testing.assert_allclose(out, bilinear_oracle(x, f), atol=1e-6)


def test_batched_and_unbatched_agree(rng):
    x = torch.from_numpy(rng.normal(size=(2, 3, 6, 5)))
    f = torch.from_numpy(rng.uniform(-2, 2, size=(2, 2, 6, 5)))
    b = warp(x, f)
    for k in range(2):
        assert torch.allclose(b[k], warp(x[k], f[k]))


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        warp(torch.zeros(1, 4, 4), torch.zeros(2, 4, 5))
    with pytest.raises(ValueError):
        warp(torch.zeros(1, 4, 4), torch.zeros(3, 4, 4))


def test_gradients_match_finite_differences(rng):
    # non-integer sample points keep the bilinear weights differentiable
    x = torch.from_numpy(rng.normal(size=(1, 2, 6, 6))).requires_grad_()
    f = torch.from_numpy(rng.uniform(-2, 2, size=(1, 2, 6, 6)))
    f = (f.floor() + 0.2 + 0.6 * (f - f.floor())).requires_grad_()
    r = torch.from_numpy(rng.normal(size=(1, 2, 6, 6)))
    assert torch.autograd.gradcheck(lambda a, b: (warp(a, b) * r).sum(), (x, f), eps=1e-4,
                                    atol=1e-6, rtol=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_linear_in_input(a, b, seed):
    g = np.random.default_rng(seed)
    x, y = (torch.from_numpy(g.normal(size=(2, 5, 5))) for _ in range(2))
    f = torch.from_numpy(g.uniform(-3, 3, size=(2, 5, 5)))
    lhs = warp(a * x + b * y, f)
    rhs = a * warp(x, f) + b * warp(y, f)
    assert torch.allclose(lhs, rhs, atol=1e-9)


def test_upsample_flow_identity_and_scaling():
    f = torch.randn(2, 3, 4)
    assert torch.equal(upsample_flow(f, 1), f)
    one = torch.tensor([2.0, 3.0]).view(2, 1, 1)
    up = upsample_flow(one, 4)
    assert up.shape == (2, 4, 4)
    assert torch.allclose(up[0], torch.full((4, 4), 8.0))
    assert torch.allclose(up[1], torch.full((4, 4), 12.0))


@pytest.mark.parametrize("factor", [1, 2, 3, 5])
def test_upsample_keeps_constant_fields_constant(factor):
    f = torch.tensor([-1.5, 0.25]).view(2, 1, 1).expand(2, 3, 2).clone()
    up = upsample_flow(f, factor)
    assert torch.allclose(up[0], torch.full_like(up[0], -1.5 * factor))
    assert torch.allclose(up[1], torch.full_like(up[1], 0.25 * factor))


def test_upsample_rejects_bad_factor():
    with pytest.raises(ValueError):
        upsample_flow(torch.zeros(2, 2, 2), 0)


def test_resize_flow_scales_axes_independently():
    f = torch.tensor([1.0, 1.0]).view(1, 2, 1, 1).expand(1, 2, 4, 3).clone()
    up = resize_flow(f, (8, 9))
    assert torch.allclose(up[0, 0], torch.full((8, 9), 3.0))
    assert torch.allclose(up[0, 1], torch.full((8, 9), 2.0))


def test_tv_examples():
    assert loss_tv(torch.full((2, 4, 4), 3.0)) == 0
    f = torch.zeros(2, 1, 2)
    f[0, 0] = torch.tensor([0.0, 1.0])
    assert loss_tv(f) == 1
    f = torch.zeros(2, 2, 2)
    f[0] = torch.tensor([[0.0, 1.0], [0.0, 1.0]])
    assert loss_tv(f) == 2


flows = arrays(np.float64, (2, 4, 5), elements=st.floats(-5, 5))


@settings(max_examples=50, deadline=None)
@given(flows, st.floats(-10, 10))
def test_tv_shift_invariant(f, c):
    f = torch.from_numpy(f)
    assert torch.isclose(loss_tv(f + c), loss_tv(f), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(flows)
def test_tv_zero_iff_constant_per_channel(f):
    f = torch.from_numpy(f)
    constant = all(bool((f[k] == f[k, 0, 0]).all()) for k in range(2))
    assert (loss_tv(f) == 0) == constant


def test_tv_gradient(rng):
    f = torch.from_numpy(rng.normal(size=(2, 4, 4))).requires_grad_()
    assert torch.autograd.gradcheck(loss_tv, (f,), eps=1e-4, atol=1e-6, rtol=1e-3)
