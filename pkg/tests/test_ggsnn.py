import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ubergnn import autodiff as ad
from ubergnn.autodiff import Tensor
from ubergnn.errors import ConfigurationError, InvalidArgumentError, LookupFailure
from ubergnn.ggsnn import GGSNNParams, init_states, propagate, propagate_step
from ubergnn.numeric import finite_diff_grad, relative_error
from ubergnn.session_graph import build_graph

LOOPY = [1, 2, 3, 2, 3, 2, 4]


def random_params(rng, d, scale=0.5, tied=False):
    return GGSNNParams(rng.normal(size=(d, 2 * d)) * scale, rng.normal(size=(1, 2 * d)) * scale,
                       rng.normal(size=(d, 2 * d)) * scale, rng.normal(size=(d, d)) * scale,
                       None if tied else rng.normal(size=(d, 2 * d)) * scale,
                       rng.normal(size=(d, d)) * scale, rng.normal(size=(d, 2 * d)) * scale,
                       rng.normal(size=(d, d)) * scale)


def zero_params(d):
    z = lambda *s: np.zeros(s)
    return GGSNNParams(z(d, 2 * d), z(1, 2 * d), z(d, 2 * d), z(d, d), z(d, 2 * d), z(d, d),
                       z(d, 2 * d), z(d, d))


def test_init_single_node(rng):
    table = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(init_states(build_graph([4]), table).value, table[[4]])


def test_init_first_occurrence_order(rng):
    table = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(init_states(build_graph(LOOPY), table).value, table[[1, 2, 3, 4]])


def test_init_copies(rng):
    table = rng.normal(size=(6, 3))
    before = table.copy()
    states = init_states(build_graph([1, 2]), table)
    states.value[:] = 99.0
    np.testing.assert_array_equal(table, before)


def test_init_out_of_vocabulary(rng):
    with pytest.raises(LookupFailure, match="7"):
        init_states(build_graph([1, 7]), rng.normal(size=(6, 3)))


def test_zero_params_halve_states(rng):
    g = build_graph(LOOPY)
    v = rng.normal(size=(4, 5))
    out = propagate_step(g.a_out, g.a_in, v, zero_params(5)).value
    np.testing.assert_array_equal(out, 0.5 * v)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_step(a_out, a_in, v, p, tied=False):
    """Per-coordinate loops over the propagation equations."""
    n, d = v.shape
    H, b = p.H, p.b[0]
    W_r = p.W_z if tied else p.W_r
    out = np.zeros_like(v)
    for i in range(n):
        a = [0.0] * (2 * d)
        for k in range(2 * d):
            half = 0 if k < d else 1
            mat = a_out if half == 0 else a_in
            acc = 0.0
            for j in range(n):
                for c in range(d):
                    acc += mat[i][j] * v[j][c] * H[c][k]
            a[k] = acc + b[k]
        z = [_sig(sum(p.W_z[q][k] * a[k] for k in range(2 * d)) + sum(p.U_z[q][c] * v[i][c] for c in range(d)))
             for q in range(d)]
        r = [_sig(sum(W_r[q][k] * a[k] for k in range(2 * d)) + sum(p.U_r[q][c] * v[i][c] for c in range(d)))
             for q in range(d)]
        cand = [math.tanh(sum(p.W_o[q][k] * a[k] for k in range(2 * d))
                          + sum(p.U_o[q][c] * r[c] * v[i][c] for c in range(d))) for q in range(d)]
        for q in range(d):
            out[i][q] = (1 - z[q]) * v[i][q] + z[q] * cand[q]
    return out


def test_isolated_node_sees_bias(rng):
    from ubergnn.ggsnn import neighbourhood
    p = random_params(rng, 3)
    g = build_graph([2])
    a = neighbourhood(g.a_out, g.a_in, rng.normal(size=(1, 3)), p).value
    np.testing.assert_array_equal(a, p.b)


@pytest.mark.parametrize("tied", [False, True])
def test_scalar_reference(rng, tied):
    g = build_graph([0, 1, 0])
    p = random_params(rng, 3, tied=tied)
    v = rng.normal(size=(2, 3))
    out = propagate_step(g.a_out, g.a_in, v, p).value
    np.testing.assert_allclose(out, scalar_step(g.a_out, g.a_in, v, p, tied), rtol=0, atol=1e-12)


def test_scalar_reference_loopy(rng):
    g = build_graph(LOOPY)
    p = random_params(rng, 3)
    v = rng.normal(size=(4, 3))
    np.testing.assert_allclose(propagate_step(g.a_out, g.a_in, v, p).value,
                               scalar_step(g.a_out, g.a_in, v, p), rtol=0, atol=1e-12)


def test_composition(rng):
    g = build_graph(LOOPY)
    table = rng.normal(size=(6, 3))
    p = random_params(rng, 3)
    v0 = table[list(g.nodes)]
    one = propagate_step(g.a_out, g.a_in, v0, p).value
    two = propagate_step(g.a_out, g.a_in, one, p).value
    np.testing.assert_array_equal(propagate(g, table, p, 1).value, one)
    np.testing.assert_array_equal(propagate(g, table, p, 2).value, two)
    with pytest.raises(InvalidArgumentError):
        propagate(g, table, p, 0)


def test_bptt_gradient(rng):
    g = build_graph(LOOPY)
    d = 3
    p = random_params(rng, d)
    vals = {name: np.array(getattr(p, name)) for name in ("H", "b", "W_z", "U_z", "W_r", "U_r", "W_o", "U_o")}
    vals["table"] = rng.normal(size=(6, d))
    weight = rng.normal(size=(4, d))

    def run(track):
        t = {k: Tensor(v, requires_grad=track) for k, v in vals.items()}
        params = GGSNNParams(*(t[k] for k in ("H", "b", "W_z", "U_z", "W_r", "U_r", "W_o", "U_o")))
        states = propagate(g, t["table"], params, steps=2)
        return ad.total(states * weight), t

    out, leaves = run(True)
    out.backward()
    numeric = finite_diff_grad(lambda: float(run(False)[0].value), vals)
    for name in vals:
        assert relative_error(leaves[name].grad, numeric[name]) <= 1e-4, name


def test_shape_errors(rng):
    g = build_graph([0, 1])
    p = random_params(rng, 3)
    with pytest.raises(ConfigurationError):
        propagate_step(g.a_out, g.a_in, rng.normal(size=(2, 4)), p)
    with pytest.raises(ConfigurationError):
        propagate_step(g.a_out, g.a_in, rng.normal(size=(3, 3)), p)
    bad = random_params(rng, 3)
    bad.H = np.zeros((3, 3))
    with pytest.raises(ConfigurationError, match="H"):
        propagate_step(g.a_out, g.a_in, rng.normal(size=(2, 3)), bad)


seqs = st.lists(st.integers(0, 5), min_size=1, max_size=8)


@settings(max_examples=40, deadline=None)
@given(seqs, st.integers(0, 2**31))
def test_gates_and_convexity(seq, seed):
    rng = np.random.default_rng(seed)
    g = build_graph(seq)
    p = random_params(rng, 3, scale=2.0)
    v = rng.normal(size=(g.n, 3))
    a = np.concatenate([g.a_out @ (v @ p.H[:, :3]), g.a_in @ (v @ p.H[:, 3:])], axis=1) + p.b
    z = 1 / (1 + np.exp(-(a @ p.W_z.T + v @ p.U_z.T)))
    r = 1 / (1 + np.exp(-(a @ p.W_r.T + v @ p.U_r.T)))
    cand = np.tanh(a @ p.W_o.T + (r * v) @ p.U_o.T)
    assert np.all((z >= 0) & (z <= 1) & (r >= 0) & (r <= 1))
    assert np.all(np.abs(cand) <= 1)
    out = propagate_step(g.a_out, g.a_in, v, p).value
    lo, hi = np.minimum(v, cand), np.maximum(v, cand)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seqs, st.integers(0, 2**31))
def test_node_permutation(seq, seed):
    rng = np.random.default_rng(seed)
    g = build_graph(seq)
    p = random_params(rng, 3)
    v = rng.normal(size=(g.n, 3))
    perm = rng.permutation(g.n)
    P = np.eye(g.n)[perm]
    out = propagate_step(g.a_out, g.a_in, v, p).value
    moved = propagate_step(P @ g.a_out @ P.T, P @ g.a_in @ P.T, P @ v, p).value
    np.testing.assert_allclose(moved, P @ out, rtol=0, atol=1e-12)


def test_isomorphic_graphs_same_states(rng):
    # different sequences, same multiset of transitions in the same node order
    a, b = build_graph([0, 1, 2, 0, 2]), build_graph([0, 1, 2, 0, 2])
    c = build_graph([0, 2, 0, 1, 2])
    table = rng.normal(size=(3, 3))
    p = random_params(rng, 3)
    np.testing.assert_array_equal(propagate(a, table, p).value, propagate(b, table, p).value)
    # c has edges 0->2, 2->0, 0->1, 1->2 vs a's 0->1, 1->2, 2->0, 0->2: same graph, other node order
    pos = [c.nodes.index(v) for v in a.nodes]
    np.testing.assert_allclose(propagate(c, table, p).value[pos], propagate(a, table, p).value,
                               rtol=0, atol=1e-13)


def test_batched_matches_single(rng):
    p = random_params(rng, 3)
    table = rng.normal(size=(6, 3))
    graphs = [build_graph(LOOPY), build_graph([5, 0])]
    n = 4
    a_out = np.zeros((2, n, n))
    a_in = np.zeros((2, n, n))
    v = np.zeros((2, n, 3))
    for k, g in enumerate(graphs):
        a_out[k, :g.n, :g.n], a_in[k, :g.n, :g.n] = g.a_out, g.a_in
        v[k, :g.n] = table[list(g.nodes)]
    out = propagate_step(a_out, a_in, v, p).value
    for k, g in enumerate(graphs):
        np.testing.assert_allclose(out[k, :g.n], propagate(g, table, p).value, rtol=0, atol=1e-14)
