"""Projection of visual and language parts into the joint space.

Language parts go through a per-modality linear map, a shared bias and a
ReLU, so language embeddings are coordinate-wise non-negative. Visual
parts are mapped affinely with no nonlinearity. The compatibility score
averages the positive part of every pairwise dot product; pairs scoring
at or below zero count as non-assignments and contribute nothing.
"""

from __future__ import annotations

import numpy as np

from .core import (
    ConfigError,
    DataError,
    Dataset,
    LanguagePart,
    LanguagePartSet,
    ModelParams,
    UsageError,
    VisualPartSet,
)


def language_preactivation(part: LanguagePart, m: ModelParams) -> np.ndarray:
    """Sum of per-modality projections plus bias, before the ReLU."""
    z = m.lang_bias.copy()
    for mod in sorted(part.tokens):
        proj = m.lang_proj.get(mod)
        if proj is None:
            raise ConfigError(
                f"no language projection configured for modality '{mod}'"
            )
        token = part.tokens[mod]
        if proj.shape[1] != token.size:
            raise DataError(
                f"modality '{mod}' token has dim {token.size}, projection expects "
                f"{proj.shape[1]}"
            )
        z += proj @ token
    return z


def embed_language_part(part: LanguagePart, m: ModelParams) -> np.ndarray:
    """ReLU(sum_m lang_proj[m] @ token_m + lang_bias); coordinates >= 0."""
    return np.maximum(language_preactivation(part, m), 0.0)


def embed_visual_part(f: np.ndarray, m: ModelParams) -> np.ndarray:
    """vis_proj @ f + vis_bias, with no nonlinearity."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (m.visual_dim,):
        raise DataError(
            f"visual feature has shape {f.shape}, expected ({m.visual_dim},)"
        )
    return m.vis_proj @ f + m.vis_bias


def embed_visual_set(x: VisualPartSet, m: ModelParams) -> np.ndarray:
    """All parts of one image, as a (n_parts, embed_dim) matrix."""
    if x.dim != m.visual_dim:
        raise DataError(
            f"image '{x.image_id}' has visual dim {x.dim}, model expects {m.visual_dim}"
        )
    return x.parts @ m.vis_proj.T + m.vis_bias


def embed_language_set(y: LanguagePartSet, m: ModelParams) -> np.ndarray:
    """All parts of one class, as a (n_parts, embed_dim) matrix."""
    return np.stack([embed_language_part(p, m) for p in y.parts])


def _as_embedding_matrix(vectors, side: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError(f"{side} part set must contain at least one embedded vector")
    return arr


def compatibility(x, y) -> float:
    """Mean truncated dot product over all (visual, language) part pairs.

    Accepts anything arrayable to (n_parts, embed_dim); a single vector is
    treated as a one-part set. The result is always >= 0.
    """
    vx = _as_embedding_matrix(x, "visual")
    vy = _as_embedding_matrix(y, "language")
    if vx.shape[1] != vy.shape[1]:
        raise DataError(
            f"embedding dims differ: visual {vx.shape[1]} vs language {vy.shape[1]}"
        )
    scores = vx @ vy.T
    return float(np.maximum(scores, 0.0).sum() / scores.size)


def class_scores(
    x: VisualPartSet,
    candidates,
    d: Dataset,
    m: ModelParams,
    _class_cache: dict | None = None,
) -> list[tuple[str, float]]:
    """Compatibility of one image with each candidate class, sorted by class id.

    ``_class_cache`` may map class_id -> embedded (n_parts, embed_dim)
    matrix; passing one only avoids re-embedding, it never changes results.
    """
    ordered = sorted(candidates)
    if not ordered:
        raise UsageError("candidate class set is empty")
    missing = [c for c in ordered if c not in d.classes]
    if missing:
        raise UsageError(f"candidate classes missing from dataset: {missing}")
    vx = embed_visual_set(x, m)
    out = []
    for cid in ordered:
        if _class_cache is not None and cid in _class_cache:
            sy = _class_cache[cid]
        else:
            sy = embed_language_set(d.classes[cid], m)
            if _class_cache is not None:
                _class_cache[cid] = sy
        out.append((cid, compatibility(vx, sy)))
    return out


def predict(x: VisualPartSet, candidates, d: Dataset, m: ModelParams) -> str:
    """Candidate class with the maximum compatibility score.

    Exact ties go to the byte-wise smallest class id, so evaluation is
    reproducible no matter how the candidate set was produced.
    """
    scored = class_scores(x, candidates, d, m)
    best_id, best_score = scored[0]
    for cid, score in scored[1:]:
        if score > best_score:
            best_id, best_score = cid, score
    return best_id
