import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import Delaunay

from gnnoma.errors import ConfigError
from gnnoma.population import (BoundarySpec, PopulationConfig, SupportKind, apply_supports,
                               assign_materials, generate_population, mesh_truss,
                               triangulation_edges)
from gnnoma.structural import assemble


def circumcircle(p):
    (ax, ay), (bx, by), (cx, cy) = p
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay)
          + (cx**2 + cy**2) * (ay - by)) / d
    uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx)
          + (cx**2 + cy**2) * (bx - ax)) / d
    return np.array([ux, uy]), np.hypot(ax - ux, ay - uy)


def test_trapezoid_corners_give_two_triangles_five_edges():
    b = BoundarySpec(30.0, 4.0, 15.0)
    tri = Delaunay(b.corners)
    assert len(tri.simplices) == 2
    assert len(triangulation_edges(tri.simplices)) == 5


@pytest.mark.parametrize("target", [8, 20, 40])
def test_mesh_is_delaunay(target):
    b = BoundarySpec(30.0, 4.5, 18.0)
    t = mesh_truss(b, target, np.random.default_rng(target))
    tri = Delaunay(t.nodes)
    for simp in tri.simplices:
        c, r = circumcircle(t.nodes[simp])
        others = np.setdiff1d(np.arange(t.n_nodes), simp)
        d = np.hypot(*(t.nodes[others] - c).T)
        assert np.all(d >= r * (1 - 1e-9))
    assert b.contains(t.nodes).all()


def test_mesh_deterministic():
    b = BoundarySpec(25.0, 5.0, 12.0)
    a = mesh_truss(b, 20, np.random.default_rng(3))
    c = mesh_truss(b, 20, np.random.default_rng(3))
    assert np.array_equal(a.nodes, c.nodes) and np.array_equal(a.edges, c.edges)


def test_material_range_bounds_and_degenerate():
    t = mesh_truss(BoundarySpec(30.0, 4.0, 15.0), 20, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    e = assign_materials(t, (100e9, 300e9), rng).youngs_modulus
    assert e.min() >= 100e9 and e.max() <= 300e9
    assert np.all(assign_materials(t, (200e9, 200e9), rng).youngs_modulus == 200e9)


def test_material_mean_law_of_large_numbers():
    t = mesh_truss(BoundarySpec(30.0, 4.0, 15.0), 20, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    draws = np.concatenate([assign_materials(t, (100e9, 300e9), rng).youngs_modulus
                            for _ in range(10_000 // t.n_edges + 1)])[:10_000]
    assert abs(draws.mean() / 200e9 - 1) < 0.01


def test_simply_supported_three_constraints(small_population):
    for t in small_population:
        assert t.supports.sum() == 3


def test_cantilever_two_per_left_node():
    b = BoundarySpec(30.0, 4.0, 15.0, SupportKind.CANTILEVERED)
    t = mesh_truss(b, 25, np.random.default_rng(5))
    c = apply_supports(t, SupportKind.CANTILEVERED)
    n_left = int(b.on_left(t.nodes).sum())
    assert c.supports.sum() == 2 * n_left
    assert n_left >= 2


@pytest.mark.parametrize("kind", list(SupportKind))
def test_supported_stiffness_has_no_rigid_mode(kind):
    cfg = PopulationConfig(count=4, seed=2, kind=kind)
    for t in generate_population(cfg):
        sysm, _ = assemble(t)
        assert np.linalg.eigvalsh(sysm.K).min() > 0


def test_split_tags():
    pop = generate_population(PopulationConfig(count=10, seed=1, train_fraction=0.8))
    assert [t.split for t in pop] == ["train"] * 8 + ["test"] * 2


def test_singleton_and_determinism():
    assert len(generate_population(PopulationConfig(count=1))) == 1
    a = generate_population(PopulationConfig(count=3, seed=4))
    b = generate_population(PopulationConfig(count=3, seed=4))
    for x, y in zip(a, b):
        assert np.array_equal(x.nodes, y.nodes)
        assert np.array_equal(x.youngs_modulus, y.youngs_modulus)


def test_population_invariants(small_population):
    for t in small_population:
        t.validate()
        assert 0.8 * 8 <= t.n_nodes <= 1.2 * 40


def test_bad_configs():
    with pytest.raises(ConfigError):
        PopulationConfig(count=0)
    with pytest.raises(ConfigError):
        PopulationConfig(node_count_range=(10, 5))
    with pytest.raises(ConfigError):
        BoundarySpec(10.0, 3.0, 12.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_permuted_truss_same_structure(seed):
    t = generate_population(PopulationConfig(count=1, seed=seed))[0]
    perm = np.random.default_rng(seed).permutation(t.n_nodes)
    p = t.permuted(perm)
    p.validate()
    assert np.array_equal(p.nodes, t.nodes[perm])
    back = np.sort(perm[p.edges], axis=1)
    assert sorted(map(tuple, back.tolist())) == sorted(map(tuple, t.edges.tolist()))
