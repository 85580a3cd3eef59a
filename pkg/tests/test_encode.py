import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitmol.encode import (PairDomainClass, capped_degrees, edge_path_features, encode_complex, encode_graph,
                           pair_distances, pair_domain_classes, spd_matrix, unreachable_bucket)
from bitmol.molgraph import Domain

from conftest import make_graph, random_rotation


def floyd_warshall(n, bonds):
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for i, j, _ in bonds:
        d[i, j] = d[j, i] = 1
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return d


@st.composite
def random_graphs(draw, max_atoms=12):
    n = draw(st.integers(1, max_atoms))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    orders = draw(st.lists(st.integers(1, 4), min_size=len(chosen), max_size=len(chosen)))
    return n, [(i, j, o) for (i, j), o in zip(chosen, orders)]


def test_triangle_all_ones():
    g = make_graph([6, 6, 6], [(0, 1, 1), (1, 2, 1), (0, 2, 1)])
    spd = spd_matrix(g)
    assert (spd[~np.eye(3, dtype=bool)] == 1).all()
    assert (np.diag(spd) == 0).all()


def test_path_and_unreachable():
    g = make_graph([6, 6, 6, 8, 8], [(0, 1, 2), (1, 2, 1), (3, 4, 1)])
    spd = spd_matrix(g, d_max=20)
    assert spd[0, 2] == 2
    assert spd[0, 3] == unreachable_bucket(20) == 21
    paths = edge_path_features(g)
    assert paths[0][1] == (2,)
    assert paths[0][2] == (2, 1)
    assert paths[2][0] == (1, 2)
    assert paths[0][3] == ()
    assert paths[1][1] == ()


def test_clamped_pairs_have_empty_paths():
    n = 8
    g = make_graph([6] * n, [(i, i + 1, 1) for i in range(n - 1)])
    spd = spd_matrix(g, d_max=3)
    assert spd[0, 7] == 3
    paths = edge_path_features(g, d_max=3)
    assert paths[0][3] == (1, 1, 1)
    assert paths[0][4] == ()


def test_four_cycle_tie_uses_smaller_intermediate():
    # 0-1-2-3-0 with distinct orders; opposite corners 0 and 2 have two shortest paths
    bonds = [(0, 1, 2), (1, 2, 3), (2, 3, 1), (3, 0, 4)]
    g = make_graph([6] * 4, bonds)
    paths = edge_path_features(g)
    via1, via3 = (2, 3), (4, 1)
    assert {via1, via3} == {(2, 3), (4, 1)}
    assert paths[0][2] == via1
    # from 1 to 3 the intermediates are 0 and 2; 0 is smaller
    assert paths[1][3] == (2, 4)


@settings(max_examples=60, deadline=None)
@given(random_graphs())
def test_spd_matches_floyd_warshall(graph):
    n, bonds = graph
    g = make_graph([6] * n, bonds)
    spd = spd_matrix(g, d_max=20)
    ref = floyd_warshall(n, bonds)
    reach = np.isfinite(ref)
    assert (spd[reach] == ref[reach]).all()
    assert (spd[~reach] == unreachable_bucket(20)).all()
    assert (spd == spd.T).all()


@settings(max_examples=60, deadline=None)
@given(random_graphs(), st.integers(1, 6))
def test_path_length_equals_bucket(graph, d_max):
    n, bonds = graph
    g = make_graph([6] * n, bonds)
    spd = spd_matrix(g, d_max)
    ref = floyd_warshall(n, bonds)
    paths = edge_path_features(g, d_max)
    orders = {frozenset((i, j)): o for i, j, o in bonds}
    for i, j in itertools.product(range(n), repeat=2):
        if i != j and np.isfinite(ref[i, j]) and ref[i, j] <= d_max:
            assert len(paths[i][j]) == spd[i, j]
            assert all(o in orders.values() for o in paths[i][j])
        else:
            assert paths[i][j] == ()


@settings(max_examples=40, deadline=None)
@given(random_graphs(), st.integers(1, 16))
def test_degrees_capped(graph, cap):
    n, bonds = graph
    g = make_graph([6] * n, bonds)
    raw = np.zeros(n, dtype=int)
    for i, j, _ in bonds:
        raw[i] += 1
        raw[j] += 1
    assert (capped_degrees(g, cap) == np.minimum(raw, cap)).all()


def test_distance_examples():
    assert pair_distances(np.zeros((2, 3)))[0, 1] == 0.0
    assert pair_distances(np.array([[0, 0, 0], [3, 4, 0]]))[0, 1] == 5.0
    g = make_graph([6, 6], [(0, 1, 1)])
    with pytest.raises(ValueError):
        pair_distances(g)


def axis_rotations():
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product([1, -1], repeat=3):
            m = np.zeros((3, 3))
            for r, (c, s) in enumerate(zip(perm, signs)):
                m[r, c] = s
            if np.isclose(np.linalg.det(m), 1):
                mats.append(m)
    return mats


def test_axis_rotations_exact():
    rng = np.random.default_rng(0)
    x = rng.integers(-5, 6, size=(9, 3)).astype(float)
    base = pair_distances(x)
    mats = axis_rotations()
    assert len(mats) == 24
    for m in mats:
        assert np.array_equal(pair_distances(x @ m.T), base)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_distance_matrix_properties(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(10, 3)) * 3
    d = pair_distances(x)
    assert np.array_equal(d, d.T)
    assert (np.diag(d) == 0).all()
    assert (d[:, :, None] <= d[:, None, :] + d.T[None, :, :] + 1e-6).all()
    r = random_rotation(rng)
    moved = x @ r.T + rng.normal(size=3) * 10
    assert np.abs(pair_distances(moved) - d).max() < 1e-9


def test_pair_domain_classes():
    cls = pair_domain_classes(2, 2)
    assert (cls == PairDomainClass.INTER).sum() == 8
    assert (cls[:2, 2:] == PairDomainClass.INTER).sum() == 4
    assert (pair_domain_classes(5, 0) == PairDomainClass.INTRA_MOL).all()
    cls = pair_domain_classes(3, 4, virtual_slots=2)
    assert np.array_equal(cls, cls.T)
    assert (cls[:2] == PairDomainClass.VIRTUAL).all()
    assert (cls[2:5, 2:5] == PairDomainClass.INTRA_MOL).all()
    assert (cls[5:, 5:] == PairDomainClass.INTRA_PROT).all()
    with pytest.raises(ValueError):
        pair_domain_classes(-1, 2)


def test_encode_complex_layout(small_corpus):
    rec = next(e.payload for e in small_corpus if e.kind == "complex")
    enc = encode_complex(rec)
    nl = len(rec.ligand)
    assert (enc.spd[:nl, nl:] == unreachable_bucket(20)).all()
    assert enc.edge_paths[0][nl] == ()
    assert (enc.pair_class[:nl, nl:] == PairDomainClass.INTER).all()
    assert enc.distances.shape == enc.spd.shape


def test_encode_graph_without_coords():
    g = make_graph([6, 7], [(0, 1, 1)], domain=Domain.POCKET)
    enc = encode_graph(g)
    assert enc.distances is None
    assert (enc.pair_class == PairDomainClass.INTRA_PROT).all()
