import numpy as np
import pytest
import torch

from oracles import (central_fd, edgeconv_ref, gat_ref, gcn_ref, gin_ref, relative_error, sage_ref)
from pgstyle.errors import ParameterError
from pgstyle.graph import build_graph
from pgstyle.message import (AttentionParams, aggregate, alt_aggregate, attention_coefficients,
                             content_to_content_pass, make_aggregator, style_to_content_pass)

C, P = 3, 4  # channels, positions per patch (2x2)


def _np(t):
    return t.detach().numpy()


def _gat(heads=2, head_dim=5, seed=0):
    torch.manual_seed(seed)
    return AttentionParams(C, heads, head_dim).double()


def _layers(seq):
    return [(_np(seq[0].weight), _np(seq[0].bias)), (_np(seq[2].weight), _np(seq[2].bias))]


def _gat_oracle(params, center, neighbors):
    return gat_ref(_np(center), [_np(n) for n in neighbors], _np(params.W_b), _np(params.W_a),
                   _np(params.out.weight), _np(params.out.bias), params.negative_slope)


def test_single_neighbor_weight_is_one():
    params = _gat()
    w = attention_coefficients(torch.randn(C * P, dtype=torch.float64), [torch.randn(C * P, dtype=torch.float64)],
                               params)
    assert w.tolist() == [1.0]


def test_weights_and_output_match_dense_oracle():
    params = _gat()
    center = torch.randn(C * P, dtype=torch.float64)
    nbs = [torch.randn(C * P, dtype=torch.float64) for _ in range(5)]
    w_ref, out_ref = _gat_oracle(params, center, nbs)
    for h in range(params.heads):
        np.testing.assert_allclose(_np(attention_coefficients(center, nbs, params, h)), w_ref[h], atol=1e-12)
    np.testing.assert_allclose(_np(aggregate(center, nbs, params)), out_ref, atol=1e-10)


def test_identical_neighbors_get_equal_weights():
    params = _gat()
    nb = torch.randn(C * P, dtype=torch.float64)
    w = attention_coefficients(torch.randn(C * P, dtype=torch.float64), [nb] * 4, params)
    assert torch.allclose(w, torch.full((4,), 0.25, dtype=torch.float64))


def test_permutation_invariance():
    params = _gat()
    center = torch.randn(C * P, dtype=torch.float64)
    nbs = [torch.randn(C * P, dtype=torch.float64) for _ in range(6)]
    perm = [4, 0, 5, 2, 1, 3]
    w = attention_coefficients(center, nbs, params, 1)
    wp = attention_coefficients(center, [nbs[i] for i in perm], params, 1)
    assert torch.allclose(wp, w[perm], atol=1e-14)
    assert torch.allclose(aggregate(center, nbs, params), aggregate(center, [nbs[i] for i in perm], params),
                          atol=1e-12)


@pytest.mark.parametrize("n", [2, 17, 200])
def test_attention_rows_sum_to_one(n):
    params = AttentionParams(C, 4)
    nodes = torch.randn(n, C * P)
    idx = torch.randint(0, n, (n, min(7, n)))
    w = params.attention(nodes, nodes, idx)
    assert torch.allclose(w.sum(1), torch.ones(n, 4), atol=1e-6)


def test_empty_neighbors_rejected():
    params = _gat()
    with pytest.raises(ParameterError):
        aggregate(torch.randn(C * P, dtype=torch.float64), torch.zeros(0, C * P, dtype=torch.float64), params)


@pytest.mark.parametrize("bad", [dict(heads=0), dict(negative_slope=0.0), dict(negative_slope=1.0)])
def test_attention_param_validation(bad):
    with pytest.raises(ParameterError):
        AttentionParams(C, **bad)


def test_unknown_aggregator():
    with pytest.raises(ParameterError):
        make_aggregator("transformer", C)
    with pytest.raises(ParameterError):
        alt_aggregate("gat", _gat(), torch.zeros(C * P), [torch.zeros(C * P)])


def _alt(kind):
    torch.manual_seed(1)
    return make_aggregator(kind, C).double()


def test_alt_aggregators_match_oracles():
    center = torch.randn(C * P, dtype=torch.float64)
    nbs = torch.randn(4, C * P, dtype=torch.float64)
    c_np, n_np = _np(center), _np(nbs)

    m = _alt("gcn")
    ref = gcn_ref(c_np, n_np, _np(m.lin.weight), _np(m.lin.bias))
    np.testing.assert_allclose(_np(alt_aggregate("gcn", m, center, nbs)), ref, atol=1e-10)

    m = _alt("gin")
    with torch.no_grad():
        m.eps.fill_(0.3)
    ref = gin_ref(c_np, n_np, 0.3, _layers(m.mlp))
    np.testing.assert_allclose(_np(alt_aggregate("gin", m, center, nbs)), ref, atol=1e-10)

    m = _alt("sage")
    ref = sage_ref(c_np, n_np, _np(m.lin.weight), _np(m.lin.bias))
    np.testing.assert_allclose(_np(alt_aggregate("sage", m, center, nbs)), ref, atol=1e-10)

    m = _alt("edgeconv")
    ref = edgeconv_ref(c_np, n_np, _layers(m.mlp))
    np.testing.assert_allclose(_np(alt_aggregate("edgeconv", m, center, nbs)), ref, atol=1e-10)


def test_gcn_identical_neighbors():
    m = _alt("gcn")
    nb = torch.randn(C * P, dtype=torch.float64)
    out = alt_aggregate("gcn", m, torch.randn(C * P, dtype=torch.float64), nb.repeat(3, 1))
    assert torch.allclose(out, alt_aggregate("gcn", m, torch.zeros(C * P, dtype=torch.float64), nb[None]))


def test_gin_zero_neighbors_is_mlp_of_center():
    m = _alt("gin")
    center = torch.randn(C * P, dtype=torch.float64)
    out = alt_aggregate("gin", m, center, torch.zeros(2, C * P, dtype=torch.float64))
    direct = m.mlp(center.view(C, P).t()).t().reshape(-1)
    assert torch.allclose(out, direct)


def test_alt_forward_adds_residual():
    for kind in ("gcn", "gin", "sage", "edgeconv"):
        m = _alt(kind)
        centers = torch.randn(3, C * P, dtype=torch.float64)
        idx = torch.tensor([[1, 2], [0, 2], [0, 1]])
        assert torch.allclose(m(centers, centers, idx) - centers, m.message(centers, centers, idx))


def _toy_graph(n_c=6, n_s=8, k=3, seed=2):
    g = torch.Generator().manual_seed(seed)
    return build_graph(torch.randn(n_c, C * P, generator=g, dtype=torch.float64),
                       torch.randn(n_s, C * P, generator=g, dtype=torch.float64), k)


def test_style_to_content_pass_matches_loop_oracle():
    graph = _toy_graph()
    params = _gat()
    out = style_to_content_pass(graph, params)
    for i in range(graph.content_nodes.shape[0]):
        nbs = [graph.style_nodes[j] for j in graph.inter[i].tolist()]
        _, ref = _gat_oracle(params, graph.content_nodes[i], nbs)
        np.testing.assert_allclose(_np(out[i]), ref, atol=1e-10)


def test_content_to_content_pass_matches_loop_oracle():
    graph = _toy_graph()
    params = _gat(seed=4)
    feats = torch.randn_like(graph.content_nodes)
    out = content_to_content_pass(feats, graph.intra, params)
    for i in range(feats.shape[0]):
        _, ref = _gat_oracle(params, feats[i], [feats[j] for j in graph.intra[i].tolist()])
        np.testing.assert_allclose(_np(out[i]), ref, atol=1e-10)


def test_intra_disabled_is_identity():
    graph = _toy_graph()
    feats = torch.randn_like(graph.content_nodes)
    assert content_to_content_pass(feats, graph.intra, _gat(), enabled=False) is feats


def test_identical_content_nodes_get_identical_updates():
    params = _gat()
    feats = torch.randn(1, C * P, dtype=torch.float64).repeat(4, 1)
    idx = torch.tensor([[1, 2], [0, 3], [3, 0], [2, 1]])
    out = content_to_content_pass(feats, idx, params)
    assert torch.allclose(out, out[:1].expand_as(out), atol=1e-14)


def test_style_nodes_unchanged():
    graph = _toy_graph()
    before = graph.style_nodes.clone()
    style_to_content_pass(graph, _gat())
    assert torch.equal(graph.style_nodes, before)


def test_attention_gradient_finite_differences():
    graph = _toy_graph(n_c=5, n_s=7, k=3)
    params = _gat(heads=2, head_dim=3, seed=7)
    weights = torch.randn(5, C * P, dtype=torch.float64)

    def f():
        return (style_to_content_pass(graph, params) * weights).sum()

    plist = [params.W_a, params.W_b, params.out.weight, params.out.bias]
    grads = torch.autograd.grad(f(), plist)
    assert relative_error(grads, central_fd(f, plist)) <= 1e-3


def test_exact_duplicates_reduce_to_patch_swap_plus_residual():
    # every content patch has an exact scaled copy among the style nodes
    g = torch.Generator().manual_seed(9)
    style = torch.randn(6, C * P, generator=g, dtype=torch.float64)
    perm = [3, 0, 5, 1]
    content = style[perm] * 2.0
    graph = build_graph(content, style, 1, intra=False)
    assert graph.inter[:, 0].tolist() == perm
    params = _gat()
    out = content_to_content_pass(style_to_content_pass(graph, params), graph.intra, params, enabled=False)
    # heads averaged, one neighbour with weight 1: x_i + T(mean_h W_h s_nn(i))
    xs = style[perm].view(4, C, P).transpose(1, 2)
    u = torch.einsum("hec,npc->npe", params.W_b, xs) / params.heads
    swapped = params.out(u).transpose(1, 2).reshape(4, -1)
    assert torch.allclose(out, content + swapped, atol=1e-12)
