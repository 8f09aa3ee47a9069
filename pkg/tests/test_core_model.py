import numpy as np
import pytest

from m3dm.core_model import (
    DimensionMismatchError,
    FaceParams,
    eval_shape,
    eval_texture,
    icosphere,
    synth_basis,
    vertex_normals,
)


@pytest.fixture(scope="module")
def basis():
    return synth_basis(seed=3, n_vertices=162, k_id=6, k_expr=4, k_tex=5)


def test_zero_params_give_mean_face_exactly(basis):
    shape = eval_shape(basis, np.zeros(basis.k_id), np.zeros(basis.k_expr))
    assert np.array_equal(shape, basis.mean_shape_id + basis.mean_shape_expr)


def test_paper_scale_dims_accepted():
    b = synth_basis(seed=1, n_vertices=162, k_id=80, k_expr=64, k_tex=80)
    rng = np.random.default_rng(0)
    shape = eval_shape(b, rng.standard_normal(80), rng.standard_normal(64))
    tex = eval_texture(b, rng.standard_normal(80))
    assert shape.shape == (3 * 162,) and tex.shape == (3 * 162,)


def test_eval_shape_linearity(basis):
    rng = np.random.default_rng(7)
    p_id = rng.standard_normal(basis.k_id)
    p_expr = rng.standard_normal(basis.k_expr)
    mean = basis.mean_shape_id + basis.mean_shape_expr
    lhs = eval_shape(basis, 2 * p_id, 2 * p_expr) - mean
    rhs = 2 * (eval_shape(basis, p_id, p_expr) - mean)
    assert np.abs(lhs - rhs).max() < 1e-10


def test_eval_shape_affine_combination(basis):
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = rng.standard_normal(basis.k_id), rng.standard_normal(basis.k_expr)
        q = rng.standard_normal(basis.k_id), rng.standard_normal(basis.k_expr)
        alpha = rng.uniform(-2, 2)
        mix = eval_shape(basis, alpha * p[0] + (1 - alpha) * q[0], alpha * p[1] + (1 - alpha) * q[1])
        direct = alpha * eval_shape(basis, *p) + (1 - alpha) * eval_shape(basis, *q)
        assert np.abs(mix - direct).max() < 1e-9


def test_eval_shape_dimension_mismatch_names_vector(basis):
    with pytest.raises(DimensionMismatchError, match="p_id"):
        eval_shape(basis, np.zeros(basis.k_id + 1), np.zeros(basis.k_expr))
    with pytest.raises(DimensionMismatchError, match="p_expr"):
        eval_shape(basis, np.zeros(basis.k_id), np.zeros(basis.k_expr - 1))


def test_eval_texture_zero_and_single_mode(basis):
    assert np.array_equal(eval_texture(basis, np.zeros(basis.k_tex)), basis.mean_texture)
    e1 = np.zeros(basis.k_tex)
    e1[2] = 1.0
    assert np.array_equal(eval_texture(basis, e1), basis.mean_texture + basis.E_tex[:, 2])


def test_eval_texture_linearity(basis):
    rng = np.random.default_rng(8)
    p = rng.standard_normal(basis.k_tex)
    lhs = eval_texture(basis, 2 * p) - basis.mean_texture
    rhs = 2 * (eval_texture(basis, p) - basis.mean_texture)
    assert np.abs(lhs - rhs).max() < 1e-10


def test_purity_repeated_calls_identical(basis):
    rng = np.random.default_rng(9)
    p_id = rng.standard_normal(basis.k_id)
    p_expr = rng.standard_normal(basis.k_expr)
    assert np.array_equal(eval_shape(basis, p_id, p_expr), eval_shape(basis, p_id, p_expr))


def test_synth_basis_deterministic_per_seed():
    a = synth_basis(seed=42, n_vertices=162, k_id=5, k_expr=3, k_tex=4)
    b = synth_basis(seed=42, n_vertices=162, k_id=5, k_expr=3, k_tex=4)
    for name in ("mean_shape_id", "mean_texture", "E_id", "E_expr", "E_tex",
                 "triangles", "landmark_indices"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    c = synth_basis(seed=43, n_vertices=162, k_id=5, k_expr=3, k_tex=4)
    assert not np.array_equal(a.E_id, c.E_id)


def test_synth_basis_column_orthogonality(basis):
    for mat in (basis.E_id, basis.E_expr, basis.E_tex):
        q = mat / np.linalg.norm(mat, axis=0)
        gram = q.T @ q
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).max() < 1e-9


def test_synth_basis_sigma_spectrum(basis):
    assert np.allclose(basis.sigma_id, 0.9 ** np.arange(basis.k_id))
    assert np.allclose(np.linalg.norm(basis.E_id, axis=0), basis.sigma_id)


def test_synth_basis_default_desk_scale_dims():
    b = synth_basis(seed=0)
    assert b.n_vertices == 642  # icosphere subdivision 3
    assert b.k_dims == (16, 8, 16)
    assert len(b.landmark_indices) == 68
    assert len(np.unique(b.landmark_indices)) == 68


def test_synth_basis_degenerate_vertex_count_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        synth_basis(seed=0, n_vertices=20)
    with pytest.raises(ValueError):
        synth_basis(seed=0, n_vertices=162, k_id=0)


def test_synth_basis_arbitrary_vertex_count_closed_mesh():
    b = synth_basis(seed=2, n_vertices=333, k_id=3, k_expr=2, k_tex=3)
    # closed orientable triangulation: every edge shared by exactly two faces
    edges = np.concatenate(
        [b.triangles[:, [0, 1]], b.triangles[:, [1, 2]], b.triangles[:, [2, 0]]]
    )
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert np.all(counts == 2)


def test_vertex_normals_sphere_matches_radial_directions():
    verts, tris = icosphere(7)
    normals = vertex_normals(verts.ravel(), tris).reshape(-1, 3)
    assert np.linalg.norm(normals - verts, axis=1).max() < 1e-3


def test_vertex_normals_flip_winding_negates():
    verts, tris = icosphere(2)
    n1 = vertex_normals(verts.ravel(), tris)
    n2 = vertex_normals(verts.ravel(), tris[:, [0, 2, 1]])
    assert np.abs(n1 + n2).max() < 1e-12


def test_vertex_normals_single_triangle_in_plane():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    tris = np.array([[0, 1, 2]])
    normals = vertex_normals(verts.ravel(), tris).reshape(-1, 3)
    assert np.allclose(normals, [[0, 0, 1]] * 3)
    flipped = vertex_normals(verts.ravel(), tris[:, [0, 2, 1]]).reshape(-1, 3)
    assert np.allclose(flipped, [[0, 0, -1]] * 3)


def test_vertex_normals_isolated_vertex_warns_and_points_up():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]])
    tris = np.array([[0, 1, 2]])
    with pytest.warns(RuntimeWarning, match="degenerate"):
        normals = vertex_normals(verts.ravel(), tris).reshape(-1, 3)
    assert np.allclose(normals[3], [0, 0, 1])


def test_vertex_normals_degenerate_face_contributes_nothing():
    # second face has zero area and must not perturb the first triangle's normals
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    tris_good = np.array([[0, 1, 2]])
    tris_with_sliver = np.array([[0, 1, 2], [0, 1, 1]])
    a = vertex_normals(verts.ravel(), tris_good)
    b = vertex_normals(verts.ravel(), tris_with_sliver)
    assert np.array_equal(a, b)


def test_vertex_normals_accepts_basis(basis):
    direct = vertex_normals(basis.mean_shape_id + basis.mean_shape_expr, basis.triangles)
    assert np.array_equal(vertex_normals(basis), direct)


def test_face_params_flat_order():
    p = FaceParams(p_id=np.array([1.0, 2.0]), p_expr=np.array([3.0]), p_tex=np.array([4.0, 5.0]))
    assert np.array_equal(p.flat(), [1, 2, 3, 4, 5])
    q = FaceParams.from_flat(p.flat(), (2, 1, 2))
    assert np.array_equal(q.p_expr, [3.0])
    with pytest.raises(DimensionMismatchError):
        FaceParams.from_flat(np.zeros(4), (2, 1, 2))
