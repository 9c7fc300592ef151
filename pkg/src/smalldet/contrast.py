"""InfoNCE alignment losses over pyramid embeddings, with analytic gradients.

Two losses operate on a batch of four embedding families indexed by pyramid
level and image: a spatial loss pulling each fused embedding toward its own
lateral embedding, and a semantic loss pulling each fused semantic embedding
toward the one a level above it. Negatives come from other images in the
batch (and optionally, for the spatial loss, from other levels of the same
image). Both losses are plain means over their terms, reduced in a fixed
level-major, image-minor order so results are bit-reproducible.

Batches can be round-tripped through a small binary container (magic
"NTFB") for exchange with other tools.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "EmbeddingBatch",
    "ContrastConfig",
    "LossComponents",
    "ContrastGradients",
    "GradientCheckResult",
    "spatial_negatives",
    "semantic_negatives",
    "info_nce",
    "info_nce_grad",
    "spatial_loss",
    "semantic_loss",
    "contrast_grad",
    "total_loss",
    "gradient_check",
    "save_embedding_batch",
    "load_embedding_batch",
]

_MAGIC = b"NTFB"

# Families of the two embedding kinds, in (lateral, fused) order; used to
# tag rows when enumerating negative sets.
_LATERAL = 0
_FUSED = 1


def _as_embedding_array(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (levels, images, dim), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class EmbeddingBatch:
    """Four embedding families over a pyramid batch.

    Each array has shape (L, N, D): pyramid level, image, embedding
    dimension. Spatial and semantic embeddings each come in a lateral
    (pre-fusion) and fused (post-fusion) variant.

    Attributes:
        spatial_lateral: Spatial embeddings of the lateral features.
        semantic_lateral: Semantic embeddings of the lateral features.
        spatial_fused: Spatial embeddings of the fused features.
        semantic_fused: Semantic embeddings of the fused features.
    """

    spatial_lateral: np.ndarray
    semantic_lateral: np.ndarray
    spatial_fused: np.ndarray
    semantic_fused: np.ndarray

    def __post_init__(self) -> None:
        arrays = {}
        for name in ("spatial_lateral", "semantic_lateral", "spatial_fused", "semantic_fused"):
            arrays[name] = _as_embedding_array(name, getattr(self, name))
            object.__setattr__(self, name, arrays[name])
        shapes = {a.shape for a in arrays.values()}
        if len(shapes) != 1:
            raise ValueError(f"embedding arrays disagree on shape: {sorted(shapes)}")
        levels, images, dim = self.spatial_lateral.shape
        if levels < 2:
            raise ValueError(f"an embedding batch needs at least 2 levels, got {levels}")
        if images < 1 or dim < 1:
            raise ValueError(f"batch and dim must be at least 1, got N={images}, D={dim}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.spatial_lateral.shape

    @property
    def num_levels(self) -> int:
        return int(self.shape[0])

    @property
    def num_images(self) -> int:
        return int(self.shape[1])

    @property
    def dim(self) -> int:
        return int(self.shape[2])


@dataclass(frozen=True)
class ContrastConfig:
    """Knobs of the contrastive losses.

    Attributes:
        tau: Softmax temperature, > 0. The default 0.07 is the customary
            contrastive-learning setting; tune freely.
        include_same_image_other_levels: When true, the spatial negative
            set additionally contains the same image's embeddings at every
            other level. Off by default: the default set draws negatives
            from other images only.
        l2_normalize: When true, every embedding is scaled to unit length
            before entering the losses. Off by default; raw dot products
            are the logits.
    """

    tau: float = 0.07
    include_same_image_other_levels: bool = False
    l2_normalize: bool = False

    def __post_init__(self) -> None:
        if not (isinstance(self.tau, (int, float)) and math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive and finite, got {self.tau!r}")


@dataclass(frozen=True)
class LossComponents:
    """Scalar pieces of the combined training objective.

    Attributes:
        spatial_loss: Spatial contrast loss value.
        semantic_loss: Semantic contrast loss value.
        detector_loss: Externally supplied detection loss (classification
            plus regression); its internals live outside this library.
        alpha: Weight of the two contrast terms. Defaults to 0.1, the
            operating value used throughout the demos.
    """

    spatial_loss: float
    semantic_loss: float
    detector_loss: float
    alpha: float = 0.1

    def __post_init__(self) -> None:
        for name in ("spatial_loss", "semantic_loss", "detector_loss", "alpha"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"{name} must be finite, got {v!r}")
            if v < 0:
                raise ValueError(f"{name} must be non-negative, got {v!r}")


def total_loss(c: LossComponents) -> float:
    """Combined objective alpha * (spatial + semantic) + detector loss."""
    return c.alpha * (c.spatial_loss + c.semantic_loss) + c.detector_loss


def _check_level_image(batch: EmbeddingBatch, x: int, y: int, max_level: int) -> None:
    if not 0 <= x < max_level:
        raise IndexError(f"level index {x} out of range [0, {max_level})")
    if not 0 <= y < batch.num_images:
        raise IndexError(f"image index {y} out of range [0, {batch.num_images})")


def _spatial_negative_index(levels: int, images: int, x: int, y: int, include_same_image: bool):
    """Row index of the spatial negative set for term (x, y).

    Returns (family, level, image) int arrays. Order: levels ascending,
    images ascending skipping y, lateral before fused; with the flag on,
    the same-image rows at levels other than x follow, in the same
    lateral-then-fused order.
    """
    fam, lvl, img = [], [], []
    for i in range(levels):
        for j in range(images):
            if j == y:
                continue
            fam += [_LATERAL, _FUSED]
            lvl += [i, i]
            img += [j, j]
    if include_same_image:
        for i in range(levels):
            if i == x:
                continue
            fam += [_LATERAL, _FUSED]
            lvl += [i, i]
            img += [y, y]
    return (
        np.asarray(fam, dtype=np.int64),
        np.asarray(lvl, dtype=np.int64),
        np.asarray(img, dtype=np.int64),
    )


def _semantic_negative_index(levels: int, images: int, y: int):
    """Row index of the semantic negative set: all levels, other images."""
    fam, lvl, img = [], [], []
    for i in range(levels):
        for j in range(images):
            if j == y:
                continue
            fam += [_LATERAL, _FUSED]
            lvl += [i, i]
            img += [j, j]
    return (
        np.asarray(fam, dtype=np.int64),
        np.asarray(lvl, dtype=np.int64),
        np.asarray(img, dtype=np.int64),
    )


def _gather(lateral: np.ndarray, fused: np.ndarray, fam, lvl, img) -> np.ndarray:
    out = np.empty((fam.size, lateral.shape[-1]), dtype=np.float64)
    is_lateral = fam == _LATERAL
    out[is_lateral] = lateral[lvl[is_lateral], img[is_lateral]]
    out[~is_lateral] = fused[lvl[~is_lateral], img[~is_lateral]]
    return out


def spatial_negatives(batch: EmbeddingBatch, x: int, y: int, cfg: ContrastConfig) -> np.ndarray:
    """Negative embeddings for the spatial term at level x, image y.

    By default these are the spatial embeddings (lateral and fused) of
    every other image at every level: 2 * L * (N - 1) rows. With
    cfg.include_same_image_other_levels, image y's own embeddings at the
    other L - 1 levels are appended.

    Returns:
        Array of shape (num_negatives, D), one negative per row.
    """
    _check_level_image(batch, x, y, batch.num_levels)
    fam, lvl, img = _spatial_negative_index(
        batch.num_levels, batch.num_images, x, y, cfg.include_same_image_other_levels
    )
    return _gather(batch.spatial_lateral, batch.spatial_fused, fam, lvl, img)


def semantic_negatives(batch: EmbeddingBatch, x: int, y: int) -> np.ndarray:
    """Negative embeddings for the semantic term at level x, image y.

    These are the semantic embeddings (lateral and fused) of every other
    image at every level: 2 * L * (N - 1) rows. Valid levels run to L - 2
    because the positive pair reaches one level up.

    Returns:
        Array of shape (num_negatives, D), one negative per row.
    """
    _check_level_image(batch, x, y, batch.num_levels - 1)
    fam, lvl, img = _semantic_negative_index(batch.num_levels, batch.num_images, y)
    return _gather(batch.semantic_lateral, batch.semantic_fused, fam, lvl, img)


def _check_vectors(q, k_pos, negatives):
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k_pos, dtype=np.float64)
    if q.ndim != 1 or k.shape != q.shape:
        raise ValueError(f"q and k_pos must be equal-length vectors, got {q.shape} and {k.shape}")
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.size == 0:
        negs = negs.reshape(0, q.shape[0])
    if negs.ndim != 2 or negs.shape[1] != q.shape[0]:
        raise ValueError(f"negatives must have shape (K, {q.shape[0]}), got {negs.shape}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k)) and np.all(np.isfinite(negs))):
        raise ValueError("embeddings contain non-finite values")
    return q, k, negs


def _logits(q, k, negs, tau) -> np.ndarray:
    logits = np.empty(negs.shape[0] + 1, dtype=np.float64)
    logits[0] = q @ k
    if negs.shape[0]:
        logits[1:] = negs @ q
    logits /= tau
    return logits


def info_nce(q, k_pos, negatives, tau: float) -> float:
    """Contrastive loss of one (query, positive key, negatives) term.

    Computes -log(exp(q.k/tau) / (exp(q.k/tau) + sum_s exp(q.s/tau)))
    through a max-shifted log-sum-exp, so large logits stay finite. An
    empty negative set gives exactly 0.

    Args:
        q: Query vector.
        k_pos: Positive key vector, same length as q.
        negatives: Array-like of negative vectors, shape (K, D); may be
            empty.
        tau: Temperature, > 0.

    Returns:
        Non-negative loss value.
    """
    if not (isinstance(tau, (int, float)) and math.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be positive and finite, got {tau!r}")
    q, k, negs = _check_vectors(q, k_pos, negatives)
    logits = _logits(q, k, negs, tau)
    top = logits.max()
    lse = top + math.log(np.exp(logits - top).sum())
    return float(lse - logits[0])


def info_nce_grad(q, k_pos, negatives, tau: float):
    """Analytic gradients of info_nce with respect to all inputs.

    With p the softmax of the logits (index 0 the positive pair), the
    gradients are (p_0 - 1) * k / tau + sum_i p_i * s_i / tau for q,
    (p_0 - 1) * q / tau for k_pos, and p_i * q / tau for negative i.

    Returns:
        Tuple (grad_q, grad_k, grad_negatives) with grad_negatives of
        shape (K, D).
    """
    if not (isinstance(tau, (int, float)) and math.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be positive and finite, got {tau!r}")
    q, k, negs = _check_vectors(q, k_pos, negatives)
    logits = _logits(q, k, negs, tau)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    grad_q = (p[0] - 1.0) * k
    if negs.shape[0]:
        grad_q = grad_q + p[1:] @ negs
    grad_q /= tau
    grad_k = ((p[0] - 1.0) / tau) * q
    grad_negs = (p[1:, None] / tau) * q[None, :]
    return grad_q, grad_k, grad_negs


def _loss_views(batch: EmbeddingBatch, cfg: ContrastConfig):
    """The four embedding arrays as the losses see them.

    Identity by default; unit-normalized copies under cfg.l2_normalize.
    """
    arrays = (
        batch.spatial_lateral,
        batch.semantic_lateral,
        batch.spatial_fused,
        batch.semantic_fused,
    )
    if not cfg.l2_normalize:
        return arrays
    out = []
    for arr in arrays:
        norms = np.sqrt((arr * arr).sum(axis=-1, keepdims=True))
        if np.any(norms == 0.0):
            raise ValueError("cannot l2-normalize a zero embedding")
        out.append(arr / norms)
    return tuple(out)


def spatial_loss(batch: EmbeddingBatch, cfg: ContrastConfig = ContrastConfig()) -> float:
    """Mean spatial contrast over all (level, image) terms.

    Term (x, y) is info_nce with query spatial_fused[x, y], positive key
    spatial_lateral[x, y], and negatives from spatial_negatives. The mean
    runs over all L * N terms in level-major, image-minor order.
    """
    sp_lat, _, sp_fus, _ = _loss_views(batch, cfg)
    levels, images, _ = batch.shape
    total = 0.0
    for x in range(levels):
        for y in range(images):
            fam, lvl, img = _spatial_negative_index(
                levels, images, x, y, cfg.include_same_image_other_levels
            )
            negs = _gather(sp_lat, sp_fus, fam, lvl, img)
            total += info_nce(sp_fus[x, y], sp_lat[x, y], negs, cfg.tau)
    return total / (levels * images)


def semantic_loss(batch: EmbeddingBatch, cfg: ContrastConfig = ContrastConfig()) -> float:
    """Mean semantic contrast over levels 0..L-2 and all images.

    Term (x, y) is info_nce with query semantic_fused[x, y], positive key
    semantic_fused[x + 1, y] (the fused embedding one level up), and
    negatives from semantic_negatives. The mean runs over (L - 1) * N
    terms in level-major, image-minor order.
    """
    _, se_lat, _, se_fus = _loss_views(batch, cfg)
    levels, images, _ = batch.shape
    total = 0.0
    for x in range(levels - 1):
        for y in range(images):
            fam, lvl, img = _semantic_negative_index(levels, images, y)
            negs = _gather(se_lat, se_fus, fam, lvl, img)
            total += info_nce(se_fus[x, y], se_fus[x + 1, y], negs, cfg.tau)
    return total / ((levels - 1) * images)


@dataclass(frozen=True)
class ContrastGradients:
    """Gradient of spatial_loss + semantic_loss, shaped like the batch."""

    spatial_lateral: np.ndarray
    semantic_lateral: np.ndarray
    spatial_fused: np.ndarray
    semantic_fused: np.ndarray

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            self.spatial_lateral,
            self.semantic_lateral,
            self.spatial_fused,
            self.semantic_fused,
        )


def contrast_grad(batch: EmbeddingBatch, cfg: ContrastConfig = ContrastConfig()) -> ContrastGradients:
    """Exact gradients of spatial_loss(batch) + semantic_loss(batch).

    Each embedding accumulates contributions from every term it enters as
    query, positive key, or negative, scaled by the loss means' 1/(L*N)
    and 1/((L-1)*N) weights. Under cfg.l2_normalize the gradient is taken
    through the normalization.
    """
    sp_lat, se_lat, sp_fus, se_fus = _loss_views(batch, cfg)
    levels, images, dim = batch.shape
    g_sp_lat = np.zeros_like(sp_lat)
    g_se_lat = np.zeros_like(se_lat)
    g_sp_fus = np.zeros_like(sp_fus)
    g_se_fus = np.zeros_like(se_fus)

    weight = 1.0 / (levels * images)
    for x in range(levels):
        for y in range(images):
            fam, lvl, img = _spatial_negative_index(
                levels, images, x, y, cfg.include_same_image_other_levels
            )
            q = sp_fus[x, y]
            negs = _gather(sp_lat, sp_fus, fam, lvl, img)
            grad_q, grad_k, grad_negs = info_nce_grad(q, sp_lat[x, y], negs, cfg.tau)
            g_sp_fus[x, y] += weight * grad_q
            g_sp_lat[x, y] += weight * grad_k
            is_lateral = fam == _LATERAL
            np.add.at(
                g_sp_lat,
                (lvl[is_lateral], img[is_lateral]),
                weight * grad_negs[is_lateral],
            )
            np.add.at(
                g_sp_fus,
                (lvl[~is_lateral], img[~is_lateral]),
                weight * grad_negs[~is_lateral],
            )

    weight = 1.0 / ((levels - 1) * images)
    for x in range(levels - 1):
        for y in range(images):
            fam, lvl, img = _semantic_negative_index(levels, images, y)
            q = se_fus[x, y]
            negs = _gather(se_lat, se_fus, fam, lvl, img)
            grad_q, grad_k, grad_negs = info_nce_grad(q, se_fus[x + 1, y], negs, cfg.tau)
            g_se_fus[x, y] += weight * grad_q
            g_se_fus[x + 1, y] += weight * grad_k
            is_lateral = fam == _LATERAL
            np.add.at(
                g_se_lat,
                (lvl[is_lateral], img[is_lateral]),
                weight * grad_negs[is_lateral],
            )
            np.add.at(
                g_se_fus,
                (lvl[~is_lateral], img[~is_lateral]),
                weight * grad_negs[~is_lateral],
            )

    if cfg.l2_normalize:
        g_sp_lat = _chain_through_normalize(batch.spatial_lateral, g_sp_lat)
        g_se_lat = _chain_through_normalize(batch.semantic_lateral, g_se_lat)
        g_sp_fus = _chain_through_normalize(batch.spatial_fused, g_sp_fus)
        g_se_fus = _chain_through_normalize(batch.semantic_fused, g_se_fus)

    return ContrastGradients(
        spatial_lateral=g_sp_lat,
        semantic_lateral=g_se_lat,
        spatial_fused=g_sp_fus,
        semantic_fused=g_se_fus,
    )


def _chain_through_normalize(raw: np.ndarray, grad_normalized: np.ndarray) -> np.ndarray:
    """Pull a gradient taken at x/||x|| back to x."""
    norms = np.sqrt((raw * raw).sum(axis=-1, keepdims=True))
    unit = raw / norms
    radial = (grad_normalized * unit).sum(axis=-1, keepdims=True)
    return (grad_normalized - radial * unit) / norms


@dataclass(frozen=True)
class GradientCheckResult:
    """Outcome of comparing analytic gradients to finite differences.

    The per-coordinate error is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-4); the guard keeps near-zero gradients
    measured on an absolute scale instead of blowing up the quotient.
    """

    max_rel_error: float
    max_abs_error: float
    num_coordinates: int

    def passed(self, tolerance: float = 1e-5) -> bool:
        return self.max_rel_error <= tolerance


def gradient_check(
    batch: EmbeddingBatch, cfg: ContrastConfig = ContrastConfig(), step: float = 1e-4
) -> GradientCheckResult:
    """Compare contrast_grad against central finite differences.

    Every coordinate of every embedding array is perturbed by +/- step and
    the total loss re-evaluated, so the cost is two loss sweeps per
    coordinate; intended for small demo batches.

    The discrepancy reported here includes the O(step^2) truncation error of
    the central difference itself. With l2_normalize enabled that term is
    amplified by the curvature of the normalization map, which grows like
    1 / norm^2, so batches whose embeddings have small norms need a smaller
    step before the comparison says anything about the analytic gradient.
    """
    if not (math.isfinite(step) and step > 0):
        raise ValueError(f"step must be positive and finite, got {step!r}")
    analytic = contrast_grad(batch, cfg)
    names = ("spatial_lateral", "semantic_lateral", "spatial_fused", "semantic_fused")
    arrays = {name: getattr(batch, name).copy() for name in names}

    def loss_at() -> float:
        candidate = EmbeddingBatch(**arrays)
        return spatial_loss(candidate, cfg) + semantic_loss(candidate, cfg)

    max_rel = 0.0
    max_abs = 0.0
    count = 0
    for name in names:
        flat = arrays[name].reshape(-1)
        grad_flat = getattr(analytic, name).reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            upper = loss_at()
            flat[idx] = original - step
            lower = loss_at()
            flat[idx] = original
            numeric = (upper - lower) / (2.0 * step)
            a = grad_flat[idx]
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), 1e-4)
            max_abs = max(max_abs, abs_err)
            max_rel = max(max_rel, rel_err)
            count += 1
    return GradientCheckResult(max_rel_error=max_rel, max_abs_error=max_abs, num_coordinates=count)


def save_embedding_batch(path, batch: EmbeddingBatch) -> None:
    """Write a batch to the flat binary container.

    Layout: magic "NTFB", then u32 L, N, D (little endian), then the four
    arrays in declaration order (spatial_lateral, semantic_lateral,
    spatial_fused, semantic_fused) as little-endian float64 in C order.
    """
    levels, images, dim = batch.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", levels, images, dim))
        for arr in (
            batch.spatial_lateral,
            batch.semantic_lateral,
            batch.spatial_fused,
            batch.semantic_fused,
        ):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_embedding_batch(path) -> EmbeddingBatch:
    """Read a batch written by save_embedding_batch.

    Raises:
        ValueError: On a bad magic, truncated data, or trailing bytes.
    """
    blob = Path(path).read_bytes()
    header_size = len(_MAGIC) + 12
    if len(blob) < header_size:
        raise ValueError(f"{path} is too short to be an embedding batch file")
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path} does not start with the {_MAGIC!r} magic")
    levels, images, dim = struct.unpack_from("<III", blob, len(_MAGIC))
    per_array = levels * images * dim
    expected = header_size + 4 * per_array * 8
    if len(blob) != expected:
        raise ValueError(
            f"{path} holds {len(blob)} bytes but L={levels} N={images} D={dim} needs {expected}"
        )
    payload = np.frombuffer(blob, dtype="<f8", offset=header_size)
    parts = [
        payload[i * per_array : (i + 1) * per_array].reshape(levels, images, dim)
        for i in range(4)
    ]
    return EmbeddingBatch(
        spatial_lateral=parts[0],
        semantic_lateral=parts[1],
        spatial_fused=parts[2],
        semantic_fused=parts[3],
    )
