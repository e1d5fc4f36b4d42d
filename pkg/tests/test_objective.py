import math

import numpy as np
import pytest
import torch

from oracles import central_fd, relative_error, two_pass_stats
from pgstyle.codec import LOSS_TAGS, LossNetwork, build_loss_network, he_init_, tiny_layout
from pgstyle.config import ModelConfig
from pgstyle.objective import LossBreakdown, content_loss, style_loss, total_loss
from pgstyle.refine import channel_stats


@pytest.fixture(scope="module")
def net():
    return build_loss_network(ModelConfig()).double()


def _img(seed, size=16):
    return torch.rand(3, size, size, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def _rms_np(a):
    return math.sqrt(float(np.mean(np.square(a))))


def test_identities(net):
    x, s = _img(0), _img(1)
    assert content_loss(x, x, net).item() <= 1e-7
    assert style_loss(s, s, net).item() <= 1e-7
    assert total_loss(x, x, x, net).total.item() <= 1e-7


def test_content_symmetric(net):
    a, b = _img(2), _img(3)
    assert content_loss(a, b, net).item() == pytest.approx(content_loss(b, a, net).item(), rel=1e-12)


def test_content_matches_feature_norm_oracle(net):
    a, b = _img(4), _img(5)
    fa = net(a, ("relu4_1",))["relu4_1"].numpy()
    fb = net(b, ("relu4_1",))["relu4_1"].numpy()
    assert content_loss(a, b, net).item() == pytest.approx(_rms_np(fa - fb), abs=1e-6)


def test_style_matches_stats_oracle(net):
    a, b = _img(6), _img(7)
    fa, fb = net(a), net(b)
    ref = 0.0
    for tag in LOSS_TAGS:
        ma, sa = two_pass_stats(fa[tag][0].numpy())
        mb, sb = two_pass_stats(fb[tag][0].numpy())
        ref += _rms_np(ma - mb) + _rms_np(sa - sb)
    assert style_loss(a, b, net).item() == pytest.approx(ref, abs=1e-6)


def test_losses_non_negative(net):
    out = total_loss(_img(8), _img(9), _img(10), net)
    assert out.content.item() >= 0 and out.style.item() >= 0


def test_total_is_exact_weighted_sum(net):
    out = total_loss(_img(8), _img(9), _img(10), net, lam=10.0)
    assert torch.equal(out.total, out.content + 10.0 * out.style)


def test_lambda_zero_is_content_only(net):
    out = total_loss(_img(8), _img(9), _img(10), net, lam=0.0)
    assert out.total.item() == out.content.item()


def test_breakdown_arithmetic():
    b = LossBreakdown(torch.tensor(0.5), torch.tensor(0.2), torch.tensor(0.5) + 10 * torch.tensor(0.2), 10.0)
    assert b.as_floats()[2] == pytest.approx(2.5)


def test_batch_is_mean_of_per_image(net):
    outs, cs, ss = torch.stack([_img(11), _img(12)]), torch.stack([_img(13), _img(14)]), _img(15)
    batched = total_loss(outs, cs, ss[None].expand(2, -1, -1, -1), net).total.item()
    single = [total_loss(outs[i], cs[i], ss, net).total.item() for i in range(2)]
    assert batched == pytest.approx(sum(single) / 2, rel=1e-12)


def test_spatial_shuffle_keeps_first_layer_stats():
    torch.manual_seed(0)
    net = he_init_(LossNetwork(tiny_layout(first_kernel=1))).double()
    s = _img(16)
    perm = torch.randperm(16 * 16)
    shuffled = s.reshape(3, -1)[:, perm].reshape(3, 16, 16)
    a, b = channel_stats(net(s)["relu1_1"]), channel_stats(net(shuffled)["relu1_1"])
    assert torch.allclose(a.mean, b.mean, atol=1e-12) and torch.allclose(a.std, b.std, atol=1e-12)
    # the deeper layers mix neighbourhoods, so the full loss is not zero
    assert style_loss(shuffled, s, net).item() > 0


def test_total_loss_gradient_finite_differences(net):
    out = _img(17, size=8).requires_grad_(True)
    content, style = _img(18, size=8), _img(19, size=8)

    def f():
        return total_loss(out, content, style, net, lam=10.0).total

    (grad,) = torch.autograd.grad(f(), [out])
    fd = central_fd(f, [out.detach()])
    assert relative_error([grad], fd) <= 1e-3
