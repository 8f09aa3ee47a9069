"""Synthetic latent world: attribute hyperplanes, generator, paired sampling.

Stands in for a pretrained GAN latent space.  Each attribute owns a
ground-truth unit hyperplane normal; a deterministic generator maps latents
to flat face parameters (linearly, or through a squashing nonlinearity that
makes the true attribute transformation input-dependent).  Paired samples
share one projected identity latent and differ only by a shift along the
estimated hyperplane normal.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core_model import FloatArray, IntArray

DEFAULT_S_MAX = 2.0
DEFAULT_MIN_ANGLE_DEG = 30.0

# generator scale constants (tuned so the nonlinear component of an attribute
# shift is a substantial fraction of the total shift; see make_world)
GEN_LINEAR_SCALE = 1.0
GEN_SQUASH_BASE = 0.6
GEN_SQUASH_ATTR = 0.5
GEN_MIX_SCALE = 1.4
GEN_BIAS_SCALE = 0.1


class UnknownAttributeError(KeyError):
    """Raised when an attribute name is not defined in the world."""


@dataclass(frozen=True)
class AttributeDef:
    """Ground-truth attribute geometry: unit normal, bias, valid score range."""

    name: str
    u_true: FloatArray
    bias: float = 0.0
    s_max: float = DEFAULT_S_MAX

    def __post_init__(self) -> None:
        norm = np.linalg.norm(self.u_true)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"u_true must be unit length, got norm {norm!r}")
        if self.s_max <= 0:
            raise ValueError("s_max must be positive")


@dataclass(frozen=True)
class GeneratorSpec:
    """Deterministic map from latents to flat face parameters.

    linear mode:    p = C @ w + bias
    nonlinear mode: p = A @ tanh(B @ w) + C @ w + bias
    """

    mode: str
    C: FloatArray
    bias: FloatArray
    A: Optional[FloatArray] = None
    B: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        if self.mode not in ("linear", "nonlinear"):
            raise ValueError(f"unknown generator mode {self.mode!r}")
        if self.mode == "nonlinear" and (self.A is None or self.B is None):
            raise ValueError("nonlinear mode requires A and B")

    @property
    def k(self) -> int:
        return self.C.shape[0]

    @property
    def d(self) -> int:
        return self.C.shape[1]


@dataclass(frozen=True)
class AttributeHyperplane:
    """Estimated hyperplane: unit normal, bias, and training accuracy."""

    u_hat: FloatArray
    b_hat: float
    train_accuracy: float

    def __post_init__(self) -> None:
        norm = np.linalg.norm(self.u_hat)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"u_hat must be unit length, got norm {norm!r}")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.u_hat).tobytes())
        h.update(np.float64(self.b_hat).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class LatentWorld:
    """Latent dimension, attribute definitions, generator, and base seed."""

    d: int
    attributes: tuple[AttributeDef, ...]
    generator: GeneratorSpec
    seed: int

    def __post_init__(self) -> None:
        if self.generator.d != self.d:
            raise ValueError("generator latent dimension does not match world")

    def attribute(self, name: str) -> AttributeDef:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        raise UnknownAttributeError(name)

    @property
    def attribute_names(self) -> list[str]:
        return [a.name for a in self.attributes]


@dataclass
class PairedSample:
    """One attribute-paired draw: shared identity latent, opposing scores."""

    attribute: str
    w_proj: FloatArray
    s_pos: float
    s_neg: float
    p_pos: FloatArray
    p_neg: FloatArray


@dataclass
class PairedDataset:
    """Column arrays of paired samples for one attribute.

    ``ids`` give each sample a stable identity: seeded per-sample draws and
    the evaluation swap coins are functions of (seed, id), so permuting or
    subsetting rows never changes what any individual sample contains.
    """

    attribute: str
    seed: int
    s_max: float
    k_dims: tuple[int, int, int]
    hyperplane_fingerprint: str
    w_proj: FloatArray  # (n, d)
    s_pos: FloatArray  # (n,)
    s_neg: FloatArray  # (n,)
    p_pos: FloatArray  # (n, k)
    p_neg: FloatArray  # (n, k)
    ids: IntArray = field(default=None)  # type: ignore[assignment]
    mode: str = "direct"

    def __post_init__(self) -> None:
        if self.ids is None:
            self.ids = np.arange(len(self.s_pos), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.s_pos)

    @property
    def d(self) -> int:
        return self.w_proj.shape[1]

    @property
    def k(self) -> int:
        return self.p_pos.shape[1]

    def subset(self, indices: np.ndarray) -> "PairedDataset":
        return PairedDataset(
            attribute=self.attribute,
            seed=self.seed,
            s_max=self.s_max,
            k_dims=self.k_dims,
            hyperplane_fingerprint=self.hyperplane_fingerprint,
            w_proj=self.w_proj[indices],
            s_pos=self.s_pos[indices],
            s_neg=self.s_neg[indices],
            p_pos=self.p_pos[indices],
            p_neg=self.p_neg[indices],
            ids=self.ids[indices],
            mode=self.mode,
        )


def label(world: LatentWorld, attribute: str, w: np.ndarray) -> int:
    """Oracle classifier: sign of the signed distance; exact zero resolves to +1."""
    attr = world.attribute(attribute)
    return 1 if float(w @ attr.u_true - attr.bias) >= 0.0 else -1


def project_to_hyperplane(w_tilde: np.ndarray, h: AttributeHyperplane) -> FloatArray:
    """Orthogonal projection onto the hyperplane: w - (w.u - b) u."""
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    return w_tilde - (w_tilde @ h.u_hat - h.b_hat) * h.u_hat


def semantic_score(w: np.ndarray, h: AttributeHyperplane) -> float:
    """Signed distance from the hyperplane; the sign encodes the class side."""
    return float(np.asarray(w, dtype=np.float64) @ h.u_hat - h.b_hat)


def generate(world: LatentWorld, w: np.ndarray) -> FloatArray:
    """Map a latent (d,) or a batch (m, d) through the generator."""
    gen = world.generator
    w = np.asarray(w, dtype=np.float64)
    single = w.ndim == 1
    W = w[None, :] if single else w
    if W.shape[1] != world.d:
        raise ValueError(f"latent has dimension {W.shape[1]}, world expects {world.d}")
    P = W @ gen.C.T + gen.bias[None, :]
    if gen.mode == "nonlinear":
        P = P + np.tanh(W @ gen.B.T) @ gen.A.T
    return P[0] if single else P


@dataclass(frozen=True)
class SvmConfig:
    """Full-batch hinge-loss subgradient schedule (Pegasos step sizes)."""

    iterations: int = 4000
    lam: float = 1e-3
    average_tail: bool = True


def fit_hyperplane(
    samples: tuple[np.ndarray, np.ndarray] | Iterable[tuple[np.ndarray, int]],
    config: SvmConfig = SvmConfig(),
) -> AttributeHyperplane:
    """Linear SVM from labeled latents by deterministic subgradient descent.

    Full-batch steps on the mean hinge loss with L2 regularization and the
    1/(lam*t) step schedule; bias learned through an appended constant
    feature.  Duplicating every sample leaves the trajectory unchanged.
    """
    if isinstance(samples, tuple) and len(samples) == 2 and not isinstance(samples[0], tuple):
        W = np.asarray(samples[0], dtype=np.float64)
        y = np.asarray(samples[1], dtype=np.float64)
    else:
        pairs = list(samples)
        W = np.asarray([p[0] for p in pairs], dtype=np.float64)
        y = np.asarray([p[1] for p in pairs], dtype=np.float64)
    if W.ndim != 2 or len(W) != len(y):
        raise ValueError("samples must be (n, d) latents with n labels")
    if len(W) < 2:
        raise ValueError("need at least 2 samples")
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite features or labels")
    if np.all(y > 0) or np.all(y < 0):
        raise ValueError("both classes must be present")

    n, d = W.shape
    X = np.concatenate([W, np.ones((n, 1))], axis=1)
    v = np.zeros(d + 1)
    acc = np.zeros(d + 1)
    tail_start = config.iterations // 2
    for t in range(1, config.iterations + 1):
        eta = 1.0 / (config.lam * t)
        margin_violation = y * (X @ v) < 1.0
        grad = config.lam * v - (y[margin_violation, None] * X[margin_violation]).sum(axis=0) / n
        v = v - eta * grad
        if config.average_tail and t > tail_start:
            acc += v
    if config.average_tail:
        v = acc / (config.iterations - tail_start)

    norm = np.linalg.norm(v[:d])
    if norm < 1e-30:
        raise ValueError("SVM collapsed to the zero vector")
    u_hat = v[:d] / norm
    b_hat = -v[d] / norm
    predictions = np.where(W @ u_hat - b_hat >= 0.0, 1.0, -1.0)
    accuracy = float(np.mean(predictions == y))
    return AttributeHyperplane(u_hat=u_hat, b_hat=float(b_hat), train_accuracy=accuracy)


def sample_labeled(
    world: LatentWorld,
    attribute: str,
    n: int,
    rng: np.random.Generator,
    min_margin: float = 0.0,
) -> tuple[FloatArray, FloatArray]:
    """Draw standard-Gaussian latents with oracle labels.

    With ``min_margin`` > 0, rejection-samples until every latent sits at
    least that far from the ground-truth hyperplane (a separable set).
    """
    attr = world.attribute(attribute)
    collected: list[np.ndarray] = []
    total = 0
    while total < n:
        batch = rng.standard_normal((max(n, 256), world.d))
        if min_margin > 0.0:
            keep = np.abs(batch @ attr.u_true - attr.bias) >= min_margin
            batch = batch[keep]
        collected.append(batch)
        total += len(batch)
    W = np.concatenate(collected)[:n]
    y = np.where(W @ attr.u_true - attr.bias >= 0.0, 1.0, -1.0)
    return W, y


def sample_pair(
    world: LatentWorld,
    h: AttributeHyperplane,
    attribute: str,
    rng: np.random.Generator,
) -> PairedSample:
    """One paired draw: project a Gaussian latent, shift both ways along u_hat.

    s+ ~ Uniform(0, s_max], s- ~ Uniform[-s_max, 0); the recorded scores are
    the signed distances of the shifted latents (equal to the drawn shifts up
    to roundoff).
    """
    attr = world.attribute(attribute)
    w_tilde = rng.standard_normal(world.d)
    w = project_to_hyperplane(w_tilde, h)
    s_pos = attr.s_max * (1.0 - rng.random())  # in (0, s_max]
    s_neg = -attr.s_max * (1.0 - rng.random())  # in [-s_max, 0)
    w_pos = w + s_pos * h.u_hat
    w_neg = w + s_neg * h.u_hat
    return PairedSample(
        attribute=attribute,
        w_proj=w,
        s_pos=semantic_score(w_pos, h),
        s_neg=semantic_score(w_neg, h),
        p_pos=generate(world, w_pos),
        p_neg=generate(world, w_neg),
    )


def _pair_rng(dataset_seed: int, sample_id: int) -> np.random.Generator:
    # the per-sample seed contract: seed = dataset_seed XOR sample_index
    return np.random.default_rng(dataset_seed ^ int(sample_id))


def eval_swap_flags(dataset_seed: int, ids: np.ndarray) -> np.ndarray:
    """Fixed per-sample source/target coins used by the evaluation protocols.

    A flag of True means the negative sample is the source.  Each coin comes
    from an independent child stream of the sample's seed, so it can be
    recomputed after a round trip through the on-disk container.
    """
    flags = np.empty(len(ids), dtype=bool)
    for row, sample_id in enumerate(np.asarray(ids, dtype=np.int64)):
        ss = np.random.SeedSequence(dataset_seed ^ int(sample_id), spawn_key=(1,))
        flags[row] = np.random.default_rng(ss).random() < 0.5
    return flags


def generate_pairs(
    world: LatentWorld,
    h: AttributeHyperplane,
    attribute: str,
    n: int,
    seed: int,
    k_dims: tuple[int, int, int],
) -> PairedDataset:
    """Seeded dataset of n paired samples for one attribute.

    Each pair derives from its own stream seeded by ``seed XOR index``, so
    parallel and serial generation are bit-identical.  Generator evaluation
    is batched after the draws.
    """
    attr = world.attribute(attribute)
    d = world.d
    W = np.empty((n, d))
    S_pos = np.empty(n)
    S_neg = np.empty(n)
    for i in range(n):
        rng = _pair_rng(seed, i)
        w = project_to_hyperplane(rng.standard_normal(d), h)
        W[i] = w
        S_pos[i] = attr.s_max * (1.0 - rng.random())
        S_neg[i] = -attr.s_max * (1.0 - rng.random())
    W_pos = W + S_pos[:, None] * h.u_hat[None, :]
    W_neg = W + S_neg[:, None] * h.u_hat[None, :]
    return PairedDataset(
        attribute=attribute,
        seed=seed,
        s_max=attr.s_max,
        k_dims=k_dims,
        hyperplane_fingerprint=h.fingerprint(),
        w_proj=W,
        s_pos=W_pos @ h.u_hat - h.b_hat,
        s_neg=W_neg @ h.u_hat - h.b_hat,
        p_pos=generate(world, W_pos),
        p_neg=generate(world, W_neg),
    )


def _sample_separated_normals(
    rng: np.random.Generator, d: int, count: int, min_angle_deg: float
) -> list[FloatArray]:
    """Random unit normals whose pairwise line angles stay above the minimum."""
    max_cos = np.cos(np.deg2rad(min_angle_deg))
    normals: list[FloatArray] = []
    attempts = 0
    while len(normals) < count:
        attempts += 1
        if attempts > 10000 * count:
            raise ValueError(
                f"cannot place {count} normals with pairwise angle >= {min_angle_deg} deg in d={d}"
            )
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        if all(abs(u @ v) <= max_cos for v in normals):
            normals.append(u)
    return normals


def make_world(
    seed: int,
    d: int = 32,
    attributes: Sequence[str | tuple[str, float]] = tuple(f"attr{i}" for i in range(8)),
    mode: str = "nonlinear",
    k: int = 40,
    gen_hidden: int = 64,
    min_angle_deg: float = DEFAULT_MIN_ANGLE_DEG,
) -> LatentWorld:
    """Deterministic world with well-separated attribute normals.

    The nonlinear generator's squash layer mixes a base random map with extra
    sensitivity along every attribute normal, so the true transformation for
    an attribute genuinely depends on the identity latent.
    """
    specs = [(a, DEFAULT_S_MAX) if isinstance(a, str) else (a[0], float(a[1])) for a in attributes]
    names = [s[0] for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("attribute names must be unique")

    rng_u = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    normals = _sample_separated_normals(rng_u, d, len(specs), min_angle_deg)
    attrs = tuple(
        AttributeDef(name=name, u_true=u, bias=0.0, s_max=s_max)
        for (name, s_max), u in zip(specs, normals)
    )

    rng_g = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    C = rng_g.standard_normal((k, d)) * (GEN_LINEAR_SCALE / np.sqrt(d))
    bias = rng_g.standard_normal(k) * GEN_BIAS_SCALE
    if mode == "nonlinear":
        B = rng_g.standard_normal((gen_hidden, d)) * (GEN_SQUASH_BASE / np.sqrt(d))
        for attr in attrs:
            B = B + np.outer(rng_g.standard_normal(gen_hidden) * GEN_SQUASH_ATTR, attr.u_true)
        A = rng_g.standard_normal((k, gen_hidden)) * (GEN_MIX_SCALE / np.sqrt(gen_hidden))
        gen = GeneratorSpec(mode="nonlinear", C=C, bias=bias, A=A, B=B)
    else:
        gen = GeneratorSpec(mode="linear", C=C, bias=bias)
    return LatentWorld(d=d, attributes=attrs, generator=gen, seed=seed)
