import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tryon.data import DEFAULT_PALETTE, to_one_hot
from tryon.losses import (
    LossWeights, RandomFeatureExtractor, identity_extractor, loss_ce, loss_feature_matching,
    loss_hinge, loss_l1_multiscale, loss_lsgan, loss_perceptual_multiscale, loss_tocg_total,
    loss_toig_total, multiscale_terms,
)
from tryon.warp import loss_tv

D = torch.float64


def one_hot(h, w, seed=0):
    labels = np.random.default_rng(seed).integers(0, 7, size=(h, w))
    return to_one_hot(labels, DEFAULT_PALETTE).to(D).unsqueeze(0)


def soft(h, w, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.softmax(torch.randn(1, 7, h, w, generator=g, dtype=D), 1)


def flows(seed=0, dtype=D):
    g = torch.Generator().manual_seed(seed)
    return [torch.rand(1, 2, 2 ** k, 2 ** k, generator=g, dtype=dtype) * 2 - 1 for k in (1, 2, 3, 4)]


def test_weight_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda_ce, w.lambda_l1, w.lambda_vgg, w.lambda_tv) == (10, 10, 1, 2)
    assert w.w == (0.25,) * 4 and w.lambda_vgg_toig == 10 and w.lambda_fm_toig == 10
    with pytest.raises(ValueError):
        LossWeights(lambda_tv=-1)
    with pytest.raises(ValueError):
        LossWeights(w=(0.25, -0.1, 0.25, 0.25))


def test_ce_examples():
    s = one_hot(5, 4)
    assert loss_ce(s, s) <= 1e-7
    uniform = torch.full((1, 7, 5, 4), 1 / 7, dtype=D)
    assert math.isclose(float(loss_ce(uniform, s)), math.log(7), rel_tol=1e-7)
    assert abs(math.log(7) - 1.9459) < 1e-4
    pred = soft(3, 3)
    tgt = one_hot(3, 3)
    big_p = pred.repeat_interleave(2, -1).repeat_interleave(2, -2)
    big_t = tgt.repeat_interleave(2, -1).repeat_interleave(2, -2)
    assert torch.isclose(loss_ce(big_p, big_t), loss_ce(pred, tgt))


@pytest.mark.parametrize("seed", range(10))
def test_ce_decreases_toward_target(seed):
    pred, tgt = soft(4, 4, seed), one_hot(4, 4, seed)
    prev = loss_ce(pred, tgt)
    for t in (0.25, 0.5, 0.75, 0.99):
        cur = loss_ce((1 - t) * pred + t * tgt, tgt)
        assert cur < prev
        prev = cur


def test_l1_multiscale_examples():
    mask = torch.zeros(1, 1, 16, 16, dtype=D)
    mask[..., 4:12, 3:10] = 1
    zero = [torch.zeros(1, 2, 2 ** k, 2 ** k, dtype=D) for k in (1, 2, 3, 4)]
    w = (0.25,) * 4
    assert loss_l1_multiscale(zero, mask, mask, mask, w) == 0
    off = mask.clone()
    off[..., 0, 0] = 1
    assert torch.isclose(loss_l1_multiscale(zero, off, mask, mask, w),
                         torch.tensor(1 / 256, dtype=D))


def test_l1_multiscale_weight_linearity():
    g = torch.Generator().manual_seed(0)
    m, t, wm = (torch.rand(1, 1, 16, 16, generator=g, dtype=D) for _ in range(3))
    fl = flows()
    base = loss_l1_multiscale(fl, wm, m, t, (0, 0, 0, 0))
    inter = loss_l1_multiscale(fl, wm, m, t, (0.1, 0.2, 0.3, 0.4)) - base
    inter3 = loss_l1_multiscale(fl, wm, m, t, (0.3, 0.6, 0.9, 1.2)) - base
    assert torch.isclose(inter3, 3 * inter)
    with pytest.raises(ValueError):
        loss_l1_multiscale(fl, wm, m, t, (1, 1))


def test_perceptual_examples():
    g = torch.Generator().manual_seed(1)
    c = torch.rand(1, 3, 16, 16, generator=g, dtype=D) * 2 - 1
    zero = [torch.zeros(1, 2, 2 ** k, 2 ** k, dtype=D) for k in (1, 2, 3, 4)]
    ext = RandomFeatureExtractor().double()
    assert loss_perceptual_multiscale(zero, c, c, c, (0.25,) * 4, ext) == 0

    wc, tgt = (torch.rand(1, 3, 16, 16, generator=g, dtype=D) * 2 - 1 for _ in range(2))
    fl = flows(2)
    plain = loss_perceptual_multiscale(fl, wc, c, tgt, (0.25,) * 4, identity_extractor)
    terms = multiscale_terms(fl, c, tgt, lambda a, b: (a - b).abs().mean(), -1, 1)
    l1 = (wc - tgt).abs().mean() + sum(0.25 * t for t in terms)
    assert torch.isclose(plain, l1)


def test_perceptual_doubling_one_weight():
    g = torch.Generator().manual_seed(3)
    c, wc, tgt = (torch.rand(1, 3, 16, 16, generator=g, dtype=D) * 2 - 1 for _ in range(3))
    fl = flows(3)
    ext = RandomFeatureExtractor().double()
    w = (0.1, 0.2, 0.3, 0.4)
    base = loss_perceptual_multiscale(fl, wc, c, tgt, w, ext)
    term2 = loss_perceptual_multiscale(fl[2:3], torch.zeros_like(tgt), c, tgt, (1.0,),
                                       lambda x: [torch.zeros(1, dtype=D)] if x.shape[-1] == 16
                                       else ext(x))
    doubled = loss_perceptual_multiscale(fl, wc, c, tgt, (0.1, 0.2, 0.6, 0.4), ext)
    assert torch.isclose(doubled - base, 0.3 * term2)


def test_random_extractor_is_seed_deterministic_and_frozen():
    a, b = RandomFeatureExtractor(seed=5), RandomFeatureExtractor(seed=5)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert not any(p.requires_grad for p in a.parameters())
    c = RandomFeatureExtractor(seed=6)
    assert not torch.equal(a.convs[0].weight, c.convs[0].weight)


def test_lsgan_examples():
    one, zero, half = torch.ones(4), torch.zeros(4), torch.full((4,), 0.5)
    assert loss_lsgan(one, zero, "discriminator") == 0
    assert loss_lsgan(None, one, "generator") == 0
    assert loss_lsgan(half, half, "discriminator") == 0.5
    assert loss_lsgan([half, half], [half, half], "discriminator") == 0.5
    with pytest.raises(ValueError):
        loss_lsgan(one, one, "critic")


def test_hinge_examples():
    assert loss_hinge(torch.full((3,), 2.0), torch.full((3,), -2.0), "discriminator") == 0
    assert loss_hinge(torch.zeros(3), torch.zeros(3), "discriminator") == 2
    assert loss_hinge(None, torch.full((3,), 3.0), "generator") == -3


def test_feature_matching_examples():
    f = [torch.randn(2, 3), torch.randn(4)]
    assert loss_feature_matching(f, [x.clone() for x in f]) == 0
    assert loss_feature_matching([torch.tensor(3.0)], [torch.tensor(1.0)]) == 2
    extra = torch.randn(5)
    assert loss_feature_matching([torch.tensor(3.0), extra], [torch.tensor(1.0), extra]) == 2
    nested = loss_feature_matching([[torch.tensor(3.0)], [torch.tensor(0.0)]],
                                   [[torch.tensor(1.0)], [torch.tensor(1.0)]])
    assert nested == 3
    with pytest.raises(ValueError):
        loss_feature_matching([extra], [])


def test_totals():
    comps = {k: torch.tensor(0.0) for k in ("ce", "gan", "l1", "vgg", "tv")}
    assert loss_tocg_total(comps) == 0
    comps = {k: torch.tensor(1.0) for k in comps}
    assert loss_tocg_total(comps) == 24
    only_tv = LossWeights(0, 0, 0, 2.0)
    comps = {"ce": torch.tensor(3.0), "gan": torch.tensor(0.0), "l1": torch.tensor(5.0),
             "vgg": torch.tensor(7.0), "tv": torch.tensor(1.5)}
    assert loss_tocg_total(comps, only_tv) == 3.0
    toig = {"gan": torch.tensor(1.0), "vgg": torch.tensor(1.0), "fm": torch.tensor(1.0)}
    assert loss_toig_total(toig, LossWeights()) == 21


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_losses_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(6, generator=g, dtype=D), torch.randn(6, generator=g, dtype=D)
    assert loss_lsgan(a, b, "discriminator") >= 0
    assert loss_lsgan(a, b, "generator") >= 0
    assert loss_hinge(a, b, "discriminator") >= 0
    assert loss_feature_matching([a], [b]) >= 0
    assert loss_ce(soft(3, 3, seed % 1000), one_hot(3, 3, seed % 1000)) >= 0
    m = torch.rand(1, 1, 16, 16, generator=g, dtype=D)
    assert loss_l1_multiscale(flows(seed % 1000), m, m, m.flip(-1), (0.25,) * 4) >= 0


GC = dict(eps=1e-6, atol=1e-6, rtol=1e-3)


def test_gradcheck_ce():
    g = torch.Generator().manual_seed(0)
    p = torch.rand(1, 7, 3, 3, generator=g, dtype=D).add(0.1).requires_grad_()
    assert torch.autograd.gradcheck(lambda x: loss_ce(x, one_hot(3, 3)), (p,), **GC)


def test_gradcheck_tv():
    f = torch.randn(1, 2, 4, 5, dtype=D, requires_grad=True)
    assert torch.autograd.gradcheck(loss_tv, (f,), **GC)


def test_gradcheck_l1_multiscale():
    g = torch.Generator().manual_seed(4)
    m, t = (torch.rand(1, 1, 16, 16, generator=g, dtype=D) for _ in range(2))
    wm = torch.rand(1, 1, 16, 16, generator=g, dtype=D).requires_grad_()
    fl = [f.requires_grad_() for f in flows(4)]
    fn = lambda a, b, c, d, e: loss_l1_multiscale([a, b, c, d], e, m, t, (0.1, 0.2, 0.3, 0.4))
    assert torch.autograd.gradcheck(fn, (*fl, wm), **GC)


def test_gradcheck_perceptual_multiscale():
    g = torch.Generator().manual_seed(5)
    c, t = (torch.rand(1, 3, 16, 16, generator=g, dtype=D) * 2 - 1 for _ in range(2))
    wc = (torch.rand(1, 3, 16, 16, generator=g, dtype=D) * 2 - 1).requires_grad_()
    fl = [f.requires_grad_() for f in flows(5)]
    ext = RandomFeatureExtractor().double()
    fn = lambda a, b, cc, d, e: loss_perceptual_multiscale([a, b, cc, d], e, c, t, (0.25,) * 4, ext)
    assert torch.autograd.gradcheck(fn, (*fl, wc), **GC)


def test_gradcheck_adversarial():
    r = torch.randn(2, 1, 3, 3, dtype=D, requires_grad=True)
    f = torch.randn(2, 1, 3, 3, dtype=D, requires_grad=True)
    for role in ("discriminator", "generator"):
        assert torch.autograd.gradcheck(lambda a, b: loss_lsgan(a, b, role), (r, f), **GC)
        assert torch.autograd.gradcheck(lambda a, b: loss_hinge(a, b, role), (r, f), **GC)
    assert torch.autograd.gradcheck(lambda b: loss_feature_matching([r.detach()], [b]), (f,), **GC)
