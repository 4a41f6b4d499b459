"""Vectorised ops vs scalar-loop oracles on small float64 inputs (tol 1e-6)."""
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dmnet.cprm import (CPRM, aggregate, channel_mining, positional_activation_map,
                        position_mining)
from dmnet.csrm import (PrototypePair, RegionPartition, confusion_mining, cosine_predict,
                        final_predict, merge_prototypes)
from dmnet.kshot import appearance_factors, fuse_prototypes

TOL = 1e-6
dims = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
seeds = st.integers(0, 2**31 - 1)


def _rand(rng, *shape, scale=1.0):
    return torch.as_tensor(rng.normal(size=shape) * scale, dtype=torch.float64)


def _close(actual, expected):
    if isinstance(actual, torch.Tensor):
        actual = actual.detach().numpy()
    np.testing.assert_allclose(np.asarray(actual, dtype=np.float64), np.asarray(expected), rtol=TOL, atol=TOL)


@settings(max_examples=25, deadline=None)
@given(dims, seeds)
def test_position_mining_matches_loop(shape, seed):
    c, h, w = shape
    rng = np.random.default_rng(seed)
    q, s, w_p = _rand(rng, c, h, w), _rand(rng, c, h, w), _rand(rng, c, c, scale=0.5)
    alpha, beta, lam = rng.uniform(-1, 1, 3)
    q_out, s_out, aff = position_mining(q, s, w_p, alpha, beta, lam)
    eq, es, el = oracles.position_mining(oracles.flat(q), oracles.flat(s), w_p.tolist(), alpha, beta, lam)
    _close(aff, el)
    _close(q_out.reshape(c, -1), eq)
    _close(s_out.reshape(c, -1), es)


@settings(max_examples=25, deadline=None)
@given(dims, st.integers(1, 2), seeds)
def test_channel_mining_matches_loop(shape, grid, seed):
    c, h, w = shape
    rng = np.random.default_rng(seed)
    q, s = _rand(rng, c, h, w), _rand(rng, c, h, w)
    w_c = _rand(rng, grid * grid, grid * grid)
    alpha, beta, lam = rng.uniform(-1, 1, 3)
    q_out, s_out, aff = channel_mining(q, s, w_c, alpha, beta, lam)
    eq, es, el = oracles.channel_mining(oracles.flat(q), oracles.flat(s), h, w, w_c.tolist(), alpha, beta, lam)
    _close(aff, el)
    _close(q_out.reshape(c, -1), eq)
    _close(s_out.reshape(c, -1), es)


@settings(max_examples=20, deadline=None)
@given(dims, seeds)
def test_aggregate_and_prototype_match_loop(shape, seed):
    c, h, w = shape
    rng = np.random.default_rng(seed)
    qp, qc, sp, sc = (_rand(rng, c, h, w) for _ in range(4))
    mask = torch.as_tensor(rng.integers(0, 2, (h, w)), dtype=torch.float64)
    mask.view(-1)[rng.integers(h * w)] = 1.0
    fuse = torch.nn.Conv2d(c, c, 1, bias=False).double()
    with torch.no_grad():
        fuse.weight.copy_(_rand(rng, c, c, 1, 1))
    q, s, proto = aggregate(qp, qc, sp, sc, mask, fuse)
    wt = fuse.weight[:, :, 0, 0].detach().tolist()
    add = lambda a, b: [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]
    eq = oracles.conv1x1(wt, add(oracles.flat(qp), oracles.flat(qc)))
    es = oracles.conv1x1(wt, add(oracles.flat(sp), oracles.flat(sc)))
    _close(q.reshape(c, -1), eq)
    _close(s.reshape(c, -1), es)
    _close(proto, oracles.masked_mean(es, mask.flatten().tolist()))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), seeds)
def test_positional_activation_matches_loop(h, w, seed):
    rng = np.random.default_rng(seed)
    L = _rand(rng, h * w, h * w)
    act = positional_activation_map(L, (h, w))
    _close(act.flatten(), oracles.row_mean_activation(L.tolist()))


def test_cprm_module_matches_composed_oracles():
    rng = np.random.default_rng(3)
    c, h, w = 4, 4, 4
    cprm = CPRM(c, lambda_fuse=0.5, channel_rank=4).double()
    with torch.no_grad():
        for p in (cprm.w_p, cprm.w_c):
            p.add_(_rand(rng, *p.shape, scale=0.1))
        cprm.fuse.weight.add_(_rand(rng, c, c, 1, 1, scale=0.1))
    q, s = _rand(rng, c, h, w), _rand(rng, c, h, w)
    mask = torch.as_tensor(rng.integers(0, 2, (h, w)), dtype=torch.float64)
    mask[0, 0] = 1
    out = cprm(q, s, mask)
    sm = [[v * m for v, m in zip(row, mask.flatten().tolist())] for row in oracles.flat(s)]
    a = lambda t: t.item()
    pq, ps, L = oracles.position_mining(oracles.flat(q), sm, cprm.w_p.detach().tolist(), a(cprm.alpha1), a(cprm.beta1), 0.5)
    cq, cs, _ = oracles.channel_mining(oracles.flat(q), sm, h, w, cprm.w_c.detach().tolist(), a(cprm.alpha2), a(cprm.beta2), 0.5)
    wt = cprm.fuse.weight[:, :, 0, 0].detach().tolist()
    add = lambda x, y: [[u + v for u, v in zip(rx, ry)] for rx, ry in zip(x, y)]
    eq, es = oracles.conv1x1(wt, add(pq, cq)), oracles.conv1x1(wt, add(ps, cs))
    _close(out.query.reshape(c, -1), eq)
    _close(out.prototype, oracles.masked_mean(es, mask.flatten().tolist()))
    _close(out.activation.flatten(), oracles.row_mean_activation(L))


@settings(max_examples=25, deadline=None)
@given(dims, st.integers(2, 3), st.floats(1.0, 20.0), seeds)
def test_cosine_prediction_matches_loop(shape, n_protos, tau, seed):
    c, h, w = shape
    rng = np.random.default_rng(seed)
    x = _rand(rng, c, h, w)
    protos = [_rand(rng, c) for _ in range(n_protos)]
    probs = cosine_predict(x, protos, tau)
    _close(probs.reshape(n_protos, -1), oracles.cosine_scores(oracles.flat(x), [p.tolist() for p in protos], tau))


def test_final_prediction_channel_order_matches_loop():
    rng = np.random.default_rng(0)
    x, pf, pb = _rand(rng, 3, 4, 4), _rand(rng, 3), _rand(rng, 3)
    pred = final_predict(x, PrototypePair(pf, pb, "merged"), 10.0)
    expected = oracles.cosine_scores(oracles.flat(x), [pb.tolist(), pf.tolist()], 10.0)
    _close(pred.probs.reshape(2, -1), expected)


@settings(max_examples=30, deadline=None)
@given(dims, st.integers(1, 4), seeds)
def test_confusion_mining_matches_scripted_walk(shape, iters, seed):
    c, h, w = shape
    rng = np.random.default_rng(seed)
    x = _rand(rng, c, h, w)
    label = rng.integers(0, 3, (h, w))  # 0 bg, 1 fg, 2 confusion
    fg, bg = torch.as_tensor(label == 1), torch.as_tensor(label == 0)
    conf = torch.as_tensor(label == 2)
    pf, pb = _rand(rng, c), _rand(rng, c)
    partition = RegionPartition(fg, bg, conf, (0.7, 0.6))
    pair, traces = confusion_mining(x, partition, iters, 0.05, 0.02, 10.0, PrototypePair(pf, pb, "filtered"))
    ef, eb, etrace = oracles.confusion_mining(
        oracles.flat(x), fg.flatten().tolist(), bg.flatten().tolist(), conf.flatten().tolist(),
        pf.tolist(), pb.tolist(), 0.7, 0.6, iters, 0.05, 0.02, 10.0)
    _close(pair.foreground, ef)
    _close(pair.background, eb)
    assert len(traces) == len(etrace)
    for got, (efg, ebg, econf, th) in zip(traces, etrace):
        assert got.fg.flatten().tolist() == efg
        assert got.bg.flatten().tolist() == ebg
        assert got.conf.flatten().tolist() == econf
        assert got.thresholds == pytest.approx(th)


def test_confusion_mining_hand_built_4x4():
    # channels: fg-like direction e0, bg-like e1; confusion pixels lean one way or are ambiguous
    x = torch.zeros(2, 4, 4, dtype=torch.float64)
    x[0, :2, :2] = 1.0                       # confident fg block
    x[1, 2:, :] = 1.0                        # confident bg rows
    x[:, 0, 2] = torch.tensor([1.0, 0.1])    # confusion, fg-like
    x[:, 1, 3] = torch.tensor([0.1, 1.0])    # confusion, bg-like
    x[:, 0, 3] = torch.tensor([1.0, 1.0])    # confusion, ambiguous
    fg = torch.zeros(4, 4, dtype=torch.bool)
    fg[:2, :2] = True
    bg = torch.zeros(4, 4, dtype=torch.bool)
    bg[2:, :] = True
    conf = ~fg & ~bg
    pf, pb = torch.tensor([1.0, 0.0], dtype=torch.float64), torch.tensor([0.0, 1.0], dtype=torch.float64)
    pair, traces = confusion_mining(x, RegionPartition(fg, bg, conf, (0.7, 0.6)), 3, 0.05, 0.02, 10.0,
                                    PrototypePair(pf, pb, "filtered"))
    ef, eb, etrace = oracles.confusion_mining(
        oracles.flat(x), fg.flatten().tolist(), bg.flatten().tolist(), conf.flatten().tolist(),
        pf.tolist(), pb.tolist(), 0.7, 0.6, 3, 0.05, 0.02, 10.0)
    _close(pair.foreground, ef)
    _close(pair.background, eb)
    assert traces[1].fg[0, 2] and traces[1].bg[1, 3]
    # the ambiguous pixel scores (0.5, 0.5) and never clears a threshold
    _close([t.thresholds for t in traces[1:]], [(0.7, 0.6), (0.65, 0.58), (0.6, 0.56)])
    assert [bool(t.conf[0, 3]) for t in traces] == [tr[2][3] for tr in etrace]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.floats(0, 1), st.floats(0, 1), seeds)
def test_merge_matches_loop(c, g1, g2, seed):
    rng = np.random.default_rng(seed)
    rf, rb, ff, fb = (_rand(rng, c) for _ in range(4))
    out = merge_prototypes(PrototypePair(rf, rb, "cpm_refined"), PrototypePair(ff, fb, "filtered"), g1, g2)
    _close(out.foreground, oracles.merge(rf.tolist(), ff.tolist(), g1, g2))
    _close(out.background, oracles.merge(rb.tolist(), fb.tolist(), g1, g2))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 4), seeds)
def test_kshot_fusion_matches_loop(k, c, n, seed):
    rng = np.random.default_rng(seed)
    affinities = [_rand(rng, n, n) for _ in range(k)]
    fgs, bgs = [_rand(rng, c) for _ in range(k)], [_rand(rng, c) for _ in range(k)]
    phi = appearance_factors(affinities)
    fused = fuse_prototypes([PrototypePair(f, b, "merged") for f, b in zip(fgs, bgs)], phi)
    ephi, ef, eb = oracles.kshot_fuse([oracles.mean_of(a.tolist()) for a in affinities],
                                      [f.tolist() for f in fgs], [b.tolist() for b in bgs])
    _close(phi, ephi)
    _close(fused.foreground, ef)
    _close(fused.background, eb)


def test_appearance_factor_closed_form():
    phi = appearance_factors([torch.ones(2, 2, dtype=torch.float64), torch.zeros(2, 2, dtype=torch.float64)])
    e = math.e
    _close(phi, [e / (e + 1), 1 / (e + 1)])
