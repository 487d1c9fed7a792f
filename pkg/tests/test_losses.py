import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from wscswap import losses as L
from wscswap.errors import ShapeError


def rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


def randn(g, *shape):
    return torch.randn(*shape, generator=g, dtype=torch.float64)


@pytest.mark.parametrize("trial", range(20))
def test_each_loss_matches_loop_oracle(trial):
    g = torch.Generator().manual_seed(trial)
    b = 2 + trial % 3
    pred, tgt = randn(g, b, 7), randn(g, b, 7)
    assert rel(float(L.loss_reg_fnid(pred, tgt)), oracles.reg_fnid(pred, tgt)) <= 1e-10
    out, ident = randn(g, b, 5), randn(g, b, 5)
    adv, ah = L.loss_adv_fnid(out, ident)
    o_adv, o_ah = oracles.adv_fnid(out, ident)
    assert rel(float(adv), o_adv) <= 1e-10 and rel(float(ah), o_ah) <= 1e-10
    z, t = randn(g, b, 3, 4, 4), randn(g, b, 3, 4, 4)
    assert rel(float(L.loss_nfa(z, t)), oracles.nfa(z, t)) <= 1e-10
    assert rel(float(L.loss_id(out, ident)), oracles.id_loss(out, ident)) <= 1e-10
    flags = torch.rand(b, generator=g) < 0.5
    flags[0] = True
    x, y = randn(g, b, 3, 4, 4), randn(g, b, 3, 4, 4)
    assert rel(float(L.loss_rec(x, y, flags)), oracles.rec(x, y, flags)) <= 1e-10
    pt = [randn(g, b, 2, s, s) for s in (8, 4)]
    py = [randn(g, b, 2, s, s) for s in (8, 4)]
    assert rel(float(L.loss_attr(pt[:1], pt[1:], py[:1], py[1:])), oracles.attr(pt, py)) <= 1e-10
    real = [randn(g, b, 1, s, s) for s in (4, 2)]
    fake = [randn(g, b, 1, s, s) for s in (4, 2)]
    d, gen = L.hinge_gan(real, fake)
    od, og = oracles.hinge(real, fake)
    assert rel(float(d), od) <= 1e-10 and rel(float(gen), og) <= 1e-10


def test_rec_is_zero_without_self_swaps():
    x = torch.randn(3, 3, 4, 4, dtype=torch.float64)
    y = torch.randn(3, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    out = L.loss_rec(x, y, torch.zeros(3, dtype=torch.bool))
    assert float(out.detach()) == 0.0
    out.backward()
    assert torch.count_nonzero(y.grad) == 0


def test_rec_ignores_cross_identity_items():
    x = torch.zeros(2, 3, 4, 4, dtype=torch.float64)
    y = torch.zeros_like(x)
    y[1] = 5.0
    assert float(L.loss_rec(x, y, torch.tensor([True, False]))) == 0.0


def test_attr_treats_target_branch_as_constant():
    t = torch.randn(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    y = torch.randn(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    L.loss_attr([t], None, [y], None).backward()
    assert t.grad is None and y.grad is not None


def test_hinge_margins():
    real = [torch.full((1, 1, 2, 2), 2.0)]
    fake = [torch.full((1, 1, 2, 2), -3.0)]
    d, g = L.hinge_gan(real, fake)
    assert float(d) == 0.0 and float(g) == 3.0
    d, _ = L.hinge_gan([torch.zeros(1, 1, 2, 2)], [torch.zeros(1, 1, 2, 2)])
    assert float(d) == 2.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 16), st.integers(0, 10_000))
def test_adv_pair_sums_to_one(b, d, seed):
    g = torch.Generator().manual_seed(seed)
    adv, ah = L.loss_adv_fnid(randn(g, b, d), randn(g, b, d))
    assert abs(float(adv + ah) - 1.0) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 10_000))
def test_id_loss_is_scale_invariant(scale, seed):
    g = torch.Generator().manual_seed(seed)
    a, b = randn(g, 3, 6), randn(g, 3, 6)
    assert math.isclose(float(L.loss_id(a, b)), float(L.loss_id(a * scale, b)), rel_tol=1e-12, abs_tol=1e-12)


def test_identical_embeddings_give_zero_id_loss():
    a = torch.randn(4, 9, dtype=torch.float64)
    assert abs(float(L.loss_id(a, a))) <= 1e-15


def test_zero_vector_rejected():
    with pytest.raises(ValueError):
        L.cosine_similarity(torch.zeros(1, 3), torch.ones(1, 3))


def test_shape_mismatches_rejected():
    with pytest.raises(ShapeError):
        L.loss_reg_fnid(torch.zeros(2, 67), torch.zeros(2, 66))
    with pytest.raises(ShapeError):
        L.loss_nfa(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 8, 8))
    with pytest.raises(ShapeError):
        L.loss_attr([torch.zeros(1, 1, 2, 2)], None, [], None)
    with pytest.raises(ShapeError):
        L.hinge_gan([torch.zeros(1)], [])


def test_compose_and_report_consistency():
    w = L.LossWeights()
    terms = dict(l_r_fnid=1.5, l_adv_fnid=0.3, l_id=0.4, l_rec=0.2, l_attr=0.6, l_adv_gan=0.7, l_nfa=0.01)
    rep = L.total_loss(terms, w, step=3)
    assert rep.l_fnid == pytest.approx(1.5 + 0.1 * 0.3)
    assert rep.l_glb == pytest.approx(0.4 + 0.2 * 0.2 + 0.5 * 0.6)
    assert rep.l_total == pytest.approx(0.7 + 5 * rep.l_glb + 2 * rep.l_fnid + 100 * 0.01)
    assert max(rep.consistency_errors(w).values()) <= 1e-12
    assert rep.l_ah_fnid == pytest.approx(0.7)


def test_combined_terms_accepted():
    w = L.LossWeights()
    rep = L.total_loss(dict(l_fnid=1.0, l_glb=2.0, l_adv_gan=0.5, l_nfa=0.0), w)
    assert rep.l_total == pytest.approx(0.5 + 10.0 + 2.0)


def test_nonfinite_terms_rejected():
    with pytest.raises(ValueError):
        L.total_loss(dict(l_fnid=float("nan"), l_glb=1.0, l_adv_gan=0.0, l_nfa=0.0), L.LossWeights())


def test_weight_defaults_and_validation():
    w = L.LossWeights()
    assert (w.beta_adv_fnid, w.beta_rec, w.beta_attr, w.beta_glb, w.beta_fnid, w.beta_nfa) == (
        0.1, 0.2, 0.5, 5.0, 2.0, 100.0)
    with pytest.raises(ValueError):
        L.LossWeights(beta_rec=-1.0)
