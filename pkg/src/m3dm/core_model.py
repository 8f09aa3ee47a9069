"""Linear morphable face model: geometry/color evaluation and a synthetic basis.

A face is ``mean + basis @ coefficients`` three times over: an identity shape
basis, an expression shape basis (both producing stacked xyz coordinates), and
a per-vertex RGB texture basis.  Real scan-derived bases are licensed assets,
so :func:`synth_basis` builds a statistically equivalent stand-in: a smooth
closed head-blob mesh plus random orthonormal eigenvectors with a decaying
sigma spectrum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

# vertex counts of an icosphere by subdivision level: 10 * 4**s + 2
_ICOSPHERE_COUNTS = {10 * 4**s + 2: s for s in range(7)}

# sigma spectrum of the synthetic bases: sigma_j = SIGMA0 * SIGMA_DECAY**j
SIGMA0 = 1.0
SIGMA_DECAY = 0.9

N_LANDMARKS = 68


class DimensionMismatchError(ValueError):
    """A parameter or field does not match the dimensions of the owning basis."""


def _check_vector(name: str, vec: np.ndarray, length: int) -> FloatArray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (length,):
        raise DimensionMismatchError(
            f"{name} has shape {arr.shape}, expected ({length},)"
        )
    return arr


@dataclass(frozen=True)
class MorphableBasis:
    """Immutable bundle of means, eigenvector matrices and mesh topology.

    Shapes: means are length 3n, eigenvector matrices are (3n, k) with
    mutually orthogonal columns, sigmas are the per-mode standard deviations
    (column j of each E matrix has norm sigma[j]).  Safe to share read-only
    across workers; every operation on it is a pure function.
    """

    n_vertices: int
    mean_shape_id: FloatArray
    mean_shape_expr: FloatArray
    mean_texture: FloatArray
    E_id: FloatArray
    E_expr: FloatArray
    E_tex: FloatArray
    sigma_id: FloatArray
    sigma_expr: FloatArray
    sigma_tex: FloatArray
    triangles: IntArray
    landmark_indices: IntArray

    def __post_init__(self) -> None:
        n3 = 3 * self.n_vertices
        for name in ("mean_shape_id", "mean_shape_expr", "mean_texture"):
            if getattr(self, name).shape != (n3,):
                raise DimensionMismatchError(
                    f"{name} has shape {getattr(self, name).shape}, expected ({n3},)"
                )
        for name in ("E_id", "E_expr", "E_tex"):
            mat = getattr(self, name)
            if mat.ndim != 2 or mat.shape[0] != n3:
                raise DimensionMismatchError(
                    f"{name} has shape {mat.shape}, expected ({n3}, k)"
                )
        for e_name, s_name in (
            ("E_id", "sigma_id"),
            ("E_expr", "sigma_expr"),
            ("E_tex", "sigma_tex"),
        ):
            k = getattr(self, e_name).shape[1]
            sig = getattr(self, s_name)
            if sig.shape != (k,):
                raise DimensionMismatchError(
                    f"{s_name} has shape {sig.shape}, expected ({k},)"
                )
            if not np.all(sig > 0):
                raise ValueError(f"{s_name} must be strictly positive")
        if self.triangles.size and self.triangles.max() >= self.n_vertices:
            raise ValueError("triangle index out of range")
        if self.landmark_indices.max() >= self.n_vertices:
            raise ValueError("landmark index out of range")

    @property
    def k_id(self) -> int:
        return self.E_id.shape[1]

    @property
    def k_expr(self) -> int:
        return self.E_expr.shape[1]

    @property
    def k_tex(self) -> int:
        return self.E_tex.shape[1]

    @property
    def k_flat(self) -> int:
        """Dimension of the flat statistical parameter [p_id | p_expr | p_tex]."""
        return self.k_id + self.k_expr + self.k_tex

    @property
    def k_dims(self) -> tuple[int, int, int]:
        return (self.k_id, self.k_expr, self.k_tex)


@dataclass
class FaceParams:
    """Full parameter set: statistical coefficients plus camera and light.

    ``p_cam`` is [x_R, y_R, z_R, x_T, y_T, z_T] (rotation in radians, then
    translation in model units); ``p_light`` is [x_l, y_l, z_l, r_a, g_a, b_a]
    (point-light position, then ambient color).
    """

    p_id: FloatArray
    p_expr: FloatArray
    p_tex: FloatArray
    p_cam: FloatArray = field(default_factory=lambda: np.zeros(6))
    p_light: FloatArray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self) -> None:
        self.p_id = np.asarray(self.p_id, dtype=np.float64)
        self.p_expr = np.asarray(self.p_expr, dtype=np.float64)
        self.p_tex = np.asarray(self.p_tex, dtype=np.float64)
        self.p_cam = _check_vector("p_cam", self.p_cam, 6)
        self.p_light = _check_vector("p_light", self.p_light, 6)

    def flat(self) -> FloatArray:
        """Concatenated statistical parameter, fixed order [p_id | p_expr | p_tex]."""
        return np.concatenate([self.p_id, self.p_expr, self.p_tex])

    @classmethod
    def from_flat(
        cls,
        flat: np.ndarray,
        k_dims: tuple[int, int, int],
        p_cam: Optional[np.ndarray] = None,
        p_light: Optional[np.ndarray] = None,
    ) -> "FaceParams":
        k_i, k_e, k_t = k_dims
        flat = _check_vector("flat params", flat, k_i + k_e + k_t)
        return cls(
            p_id=flat[:k_i].copy(),
            p_expr=flat[k_i : k_i + k_e].copy(),
            p_tex=flat[k_i + k_e :].copy(),
            p_cam=np.zeros(6) if p_cam is None else np.asarray(p_cam, dtype=np.float64),
            p_light=np.zeros(6) if p_light is None else np.asarray(p_light, dtype=np.float64),
        )

    @classmethod
    def zeros(cls, basis: MorphableBasis) -> "FaceParams":
        return cls(
            p_id=np.zeros(basis.k_id),
            p_expr=np.zeros(basis.k_expr),
            p_tex=np.zeros(basis.k_tex),
        )


def eval_shape(basis: MorphableBasis, p_id: np.ndarray, p_expr: np.ndarray) -> FloatArray:
    """Vertex coordinates (length 3n) for the given id and expression coefficients."""
    p_id = _check_vector("p_id", p_id, basis.k_id)
    p_expr = _check_vector("p_expr", p_expr, basis.k_expr)
    return (
        basis.mean_shape_id
        + basis.mean_shape_expr
        + basis.E_id @ p_id
        + basis.E_expr @ p_expr
    )


def eval_texture(basis: MorphableBasis, p_tex: np.ndarray) -> FloatArray:
    """Per-vertex RGB (length 3n) for the given texture coefficients.

    Values are not clamped here; clamping is a rendering concern.
    """
    p_tex = _check_vector("p_tex", p_tex, basis.k_tex)
    return basis.mean_texture + basis.E_tex @ p_tex


def icosphere(subdivisions: int) -> tuple[FloatArray, IntArray]:
    """Unit icosphere with outward-wound triangles.

    Returns (vertices (n, 3), triangles (m, 3)); n = 10 * 4**subdivisions + 2.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    tris = np.asarray(faces, dtype=np.int64)
    for _ in range(subdivisions):
        # unique midpoint per undirected edge, computed vectorized
        edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
        mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        mid_idx = inverse.reshape(3, -1).T + len(verts)  # (m, 3): ab, bc, ca
        verts = np.concatenate([verts, mids])
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = mid_idx[:, 0], mid_idx[:, 1], mid_idx[:, 2]
        tris = np.concatenate(
            [
                np.stack([a, ab, ca], axis=1),
                np.stack([b, bc, ab], axis=1),
                np.stack([c, ca, bc], axis=1),
                np.stack([ab, bc, ca], axis=1),
            ]
        )
    return verts, tris


def _fibonacci_sphere_mesh(n: int) -> tuple[FloatArray, IntArray]:
    """Closed sphere mesh with exactly n vertices: Fibonacci lattice + convex hull."""
    from scipy.spatial import ConvexHull

    idx = np.arange(n, dtype=np.float64)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    z = 1.0 - 2.0 * (idx + 0.5) / n
    theta = 2.0 * np.pi * idx / golden
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    verts = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    hull = ConvexHull(verts)
    faces = hull.simplices.astype(np.int64)
    # orient every face outward (positive volume with the centroid at origin)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    outward = np.einsum("ij,ij->i", np.cross(b - a, c - a), (a + b + c) / 3.0)
    flip = outward < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return verts, faces


def _sphere_mesh(n_vertices: int) -> tuple[FloatArray, IntArray]:
    if n_vertices in _ICOSPHERE_COUNTS:
        return icosphere(_ICOSPHERE_COUNTS[n_vertices])
    return _fibonacci_sphere_mesh(n_vertices)


def farthest_point_sample(points: FloatArray, count: int, start: int) -> IntArray:
    """Greedy farthest-point subset of `count` row indices, starting at `start`."""
    n = points.shape[0]
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))  # argmax ties resolve to lowest index
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> FloatArray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # fix the sign convention so the construction is deterministic across BLAS builds
    q *= np.sign(np.diag(r))[np.newaxis, :]
    return q


def _sigma_spectrum(k: int) -> FloatArray:
    return SIGMA0 * SIGMA_DECAY ** np.arange(k, dtype=np.float64)


def synth_basis(
    seed: int,
    n_vertices: int = 642,
    k_id: int = 16,
    k_expr: int = 8,
    k_tex: int = 16,
) -> MorphableBasis:
    """Deterministic synthetic morphable basis.

    The mean shape is a smoothly deformed unit sphere (a head-like blob); the
    eigenvector matrices are random orthonormal columns scaled by the decaying
    sigma spectrum sigma_j = 0.9**j; 68 landmark indices are chosen by seeded
    farthest-point sampling.  The expression mean defaults to zero (expression
    offsets are differences from neutral).
    """
    if n_vertices < N_LANDMARKS:
        raise ValueError(
            f"n_vertices={n_vertices} is degenerate; need at least {N_LANDMARKS}"
        )
    if min(k_id, k_expr, k_tex) < 1:
        raise ValueError("every basis dimension must be >= 1")

    verts, tris = _sphere_mesh(n_vertices)
    rng_blob = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))

    # mild anisotropic scaling plus a few smooth radial lobes
    axes = 1.0 + 0.12 * rng_blob.uniform(-1.0, 1.0, 3)
    radial = np.ones(n_vertices)
    for _ in range(4):
        lobe_dir = rng_blob.standard_normal(3)
        lobe_dir /= np.linalg.norm(lobe_dir)
        width = rng_blob.uniform(2.0, 6.0)
        amp = rng_blob.uniform(-0.08, 0.08)
        radial += amp * np.exp(width * (verts @ lobe_dir - 1.0))
    mean_shape = (verts * radial[:, None] * axes[None, :]).ravel()

    n3 = 3 * n_vertices
    rng_id = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    rng_expr = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    rng_tex = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    sig_id, sig_expr, sig_tex = map(_sigma_spectrum, (k_id, k_expr, k_tex))
    E_id = _orthonormal_columns(rng_id, n3, k_id) * sig_id[None, :]
    E_expr = _orthonormal_columns(rng_expr, n3, k_expr) * sig_expr[None, :]
    E_tex = _orthonormal_columns(rng_tex, n3, k_tex) * sig_tex[None, :]

    # mid-gray texture with smooth seeded color variation, kept well inside [0, 1]
    rng_col = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))
    mean_texture = np.full((n_vertices, 3), 0.5)
    for ch in range(3):
        direction = rng_col.standard_normal(3)
        direction /= np.linalg.norm(direction)
        mean_texture[:, ch] += 0.08 * np.sin(2.0 * verts @ direction + rng_col.uniform(0, 2 * np.pi))
    mean_texture = mean_texture.ravel()

    rng_lm = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    start = int(rng_lm.integers(n_vertices))
    landmarks = farthest_point_sample(verts, N_LANDMARKS, start)

    return MorphableBasis(
        n_vertices=n_vertices,
        mean_shape_id=mean_shape,
        mean_shape_expr=np.zeros(n3),
        mean_texture=mean_texture,
        E_id=E_id,
        E_expr=E_expr,
        E_tex=E_tex,
        sigma_id=sig_id,
        sigma_expr=sig_expr,
        sigma_tex=sig_tex,
        triangles=tris,
        landmark_indices=landmarks,
    )


def vertex_normals(
    shape_or_basis: MorphableBasis | np.ndarray,
    triangles: Optional[np.ndarray] = None,
) -> FloatArray:
    """Area-weighted unit vertex normals, flattened to length 3n.

    Accepts either a basis (normals of its mean shape) or a flat coordinate
    vector plus a triangle array.  Zero-area faces contribute nothing; a
    vertex with no incident area gets the +z axis and a RuntimeWarning.
    """
    if isinstance(shape_or_basis, MorphableBasis):
        shape = shape_or_basis.mean_shape_id + shape_or_basis.mean_shape_expr
        triangles = shape_or_basis.triangles
    else:
        shape = np.asarray(shape_or_basis, dtype=np.float64)
        if triangles is None:
            raise ValueError("triangles required when passing a raw shape vector")
    verts = shape.reshape(-1, 3)
    tris = np.asarray(triangles, dtype=np.int64)
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    face_n = np.cross(b - a, c - a)  # norm = 2 * area, so accumulation is area-weighted
    accum = np.zeros_like(verts)
    for col in range(3):
        np.add.at(accum, tris[:, col], face_n)
    norms = np.linalg.norm(accum, axis=1)
    degenerate = norms < 1e-12
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} vertex normals degenerate; set to +z",
            RuntimeWarning,
            stacklevel=2,
        )
        accum[degenerate] = (0.0, 0.0, 1.0)
        norms[degenerate] = 1.0
    return (accum / norms[:, None]).ravel()
