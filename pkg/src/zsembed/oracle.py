"""Desk-scale verification machinery.

``generate`` builds a synthetic zero-shot dataset from latent binary
attribute codes: language parts are noiseless linear images of a class's
code, visual parts are linear images of per-part code blocks plus
Gaussian noise. Block patterns all carry the same number of set bits,
which guarantees that with zero noise a hand-built parameter setting
(stored as the hidden ground truth "witness") separates every class
with a strict compatibility margin.

``naive_compatibility`` recomputes the compatibility score with scalar
loops only, and ``fd_gradient`` differentiates the training objective by
central differences; both exist to cross-check the fast paths and are
deliberately independent of them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    Dataset,
    LanguagePart,
    LanguagePartSet,
    ModelParams,
    VisualPartSet,
    ZeroShotSplit,
)
from .objective import LossConfig, ParamGradients, kink_margins, total_objective

SYNTH_MODALITY = "latent"


@dataclass(frozen=True)
class SynthSpec:
    n_train_classes: int
    n_val_classes: int
    n_test_classes: int
    parts_per_image: int
    images_per_class: int
    visual_dim: int = 32
    token_dim: int = 32
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.n_train_classes,
            self.n_val_classes,
            self.n_test_classes,
            self.parts_per_image,
            self.images_per_class,
            self.visual_dim,
            self.token_dim,
        )
        if any(c < 1 for c in counts):
            raise ConfigError("all SynthSpec counts must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        bits = latent_code_bits(self)
        if bits > self.token_dim:
            raise ConfigError(
                f"token_dim={self.token_dim} is too small for {self.n_classes} "
                f"classes with {self.parts_per_image} parts (needs >= {bits})"
            )
        if bits > self.visual_dim:
            raise ConfigError(
                f"visual_dim={self.visual_dim} is too small for {self.n_classes} "
                f"classes with {self.parts_per_image} parts (needs >= {bits})"
            )

    @property
    def n_classes(self) -> int:
        return self.n_train_classes + self.n_val_classes + self.n_test_classes


def _block_bits(n_classes: int) -> int:
    """Smallest even block width with enough constant-weight patterns to
    give every class its own pattern within one block."""
    b = 2
    while math.comb(b, b // 2) < n_classes:
        b += 2
    return b


def _assign_block_patterns(rng, patterns, n_train: int, n_total: int, parts: int):
    """Per-class, per-block pattern indices.

    Training classes get a pattern unique to the class in every block
    after the first, so alignment constraints between training classes
    never contradict each other. Unseen (val/test) classes recombine
    patterns already used by training classes, mirroring how real unseen
    classes share attributes with seen ones; a fallback to arbitrary
    patterns keeps degenerate configurations (too few combinations)
    well-defined. The first block draws from a small shared pool for all
    classes, which keeps single-part testing genuinely ambiguous.
    """
    n_pat = len(patterns)
    if parts == 1:
        order = rng.permutation(n_pat)[:n_total]
        return [[int(i)] for i in order]
    pool_size = max(2, math.isqrt(n_total - 1) + 1)
    pool = [int(i) for i in rng.permutation(n_pat)[:pool_size]]
    train_choices = [rng.permutation(n_pat)[:n_train] for _ in range(parts - 1)]
    assignment: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    for i in range(n_train):
        combo = (pool[int(rng.integers(pool_size))],) + tuple(
            int(train_choices[p][i]) for p in range(parts - 1)
        )
        assignment.append(combo)
        seen.add(combo)
    for _ in range(n_train, n_total):
        combo = None
        for attempt in range(200):
            head = pool[int(rng.integers(pool_size))]
            if attempt < 100:
                tail = tuple(
                    int(train_choices[p][int(rng.integers(n_train))])
                    for p in range(parts - 1)
                )
            else:
                tail = tuple(int(rng.integers(n_pat)) for _ in range(parts - 1))
            candidate = (head, *tail)
            if candidate not in seen:
                combo = candidate
                break
        if combo is None:
            combo = next(
                c
                for c in itertools.product(pool, *[range(n_pat)] * (parts - 1))
                if c not in seen
            )
        assignment.append(combo)
        seen.add(combo)
    return [list(c) for c in assignment]


def latent_code_bits(spec: SynthSpec) -> int:
    """Length of the latent binary code a spec implies."""
    return spec.parts_per_image * _block_bits(spec.n_classes)


@dataclass(frozen=True)
class SynthTruth:
    """Hidden ground truth: never handed to the trainer, only to tests."""

    codes: dict[str, np.ndarray]
    token_mixer: np.ndarray
    visual_mixer: np.ndarray
    witness: ModelParams
    block_bits: int
    code_bits: int


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q[:, :cols]


def generate(spec: SynthSpec) -> tuple[Dataset, SynthTruth]:
    """Deterministic synthetic dataset plus its hidden ground truth.

    With ``noise_sigma = 0`` the witness parameters achieve 100% zero-shot
    Top-1 and a strictly positive ranking margin by construction.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_classes
    parts = spec.parts_per_image
    b = _block_bits(n)
    code_bits = parts * b

    patterns = [
        np.array([1.0 if i in ones else 0.0 for i in range(b)])
        for ones in itertools.combinations(range(b), b // 2)
    ]
    assignment = _assign_block_patterns(
        rng, patterns, spec.n_train_classes, n, parts
    )
    codes = [
        np.concatenate([patterns[j] for j in assignment[i]]) for i in range(n)
    ]

    token_mixer = _orthonormal_columns(rng, spec.token_dim, code_bits)
    visual_mixer = _orthonormal_columns(rng, spec.visual_dim, code_bits)

    class_ids = [f"c{i:03d}" for i in range(n)]
    split = ZeroShotSplit(
        train_classes=frozenset(class_ids[: spec.n_train_classes]),
        val_classes=frozenset(
            class_ids[spec.n_train_classes : spec.n_train_classes + spec.n_val_classes]
        ),
        test_classes=frozenset(class_ids[spec.n_train_classes + spec.n_val_classes :]),
    )

    # One language part per code block. Unseen classes recombine blocks of
    # seen ones, so every language part a test class carries was already
    # embedded and aligned during training; mean-pooled compatibility then
    # composes the per-part scores. This is what makes zero-shot transfer
    # possible for the part-based learner.
    classes = {}
    code_of = {}
    for cid, code in zip(class_ids, codes):
        code_of[cid] = code
        parts_list = []
        for p in range(parts):
            block = code[p * b : (p + 1) * b]
            token = token_mixer[:, p * b : (p + 1) * b] @ block
            parts_list.append(LanguagePart(tokens={SYNTH_MODALITY: token}))
        classes[cid] = LanguagePartSet(class_id=cid, parts=tuple(parts_list))

    images = []
    for cid in class_ids:
        code = code_of[cid]
        signed = 2.0 * code - 1.0
        for j in range(spec.images_per_class):
            feats = np.empty((parts, spec.visual_dim))
            for p in range(parts):
                mixer = visual_mixer[:, p * b : (p + 1) * b]
                block = signed[p * b : (p + 1) * b]
                noise = spec.noise_sigma * rng.standard_normal(spec.visual_dim)
                feats[p] = mixer @ block + noise
            images.append((VisualPartSet(image_id=f"{cid}_i{j:03d}", parts=feats), cid))

    witness = ModelParams(
        lang_proj={SYNTH_MODALITY: token_mixer.T},
        lang_bias=np.zeros(code_bits),
        vis_proj=visual_mixer.T,
        vis_bias=np.zeros(code_bits),
    )
    dataset = Dataset(images=tuple(images), classes=classes, split=split)
    truth = SynthTruth(
        codes=code_of,
        token_mixer=token_mixer,
        visual_mixer=visual_mixer,
        witness=witness,
        block_bits=b,
        code_bits=code_bits,
    )
    return dataset, truth


def _scalar_matvec(mat: np.ndarray, vec) -> list[float]:
    rows, cols = mat.shape
    out = []
    for r in range(rows):
        acc = 0.0
        for c in range(cols):
            acc += float(mat[r, c]) * float(vec[c])
        out.append(acc)
    return out


def naive_compatibility(x: VisualPartSet, y: LanguagePartSet, m: ModelParams) -> float:
    """Compatibility recomputed with scalar loops; no vectorized path."""
    embedded_lang = []
    for part in y.parts:
        z = [float(v) for v in m.lang_bias]
        for mod in sorted(part.tokens):
            contrib = _scalar_matvec(m.lang_proj[mod], part.tokens[mod])
            z = [a + c for a, c in zip(z, contrib)]
        embedded_lang.append([v if v > 0.0 else 0.0 for v in z])

    total = 0.0
    for i in range(x.n_parts):
        v = _scalar_matvec(m.vis_proj, x.parts[i])
        v = [a + float(c) for a, c in zip(v, m.vis_bias)]
        for s in embedded_lang:
            dot = 0.0
            for a, c in zip(v, s):
                dot += a * c
            if dot > 0.0:
                total += dot
    return total / (x.n_parts * len(embedded_lang))


def fd_gradient(
    batch, d: Dataset, m: ModelParams, cfg: LossConfig, h: float = 1e-5
) -> tuple[ParamGradients, dict[str, bool]]:
    """Central-difference gradient of the training objective.

    Returns the gradient plus a per-field ``skipped`` map: a field is
    flagged when some hinge/ReLU argument it can move sits within 10h of
    its kink, where a one-sided difference stops being trustworthy.
    Visual fields cannot move language pre-activations, so only the
    post-embedding margins apply to them.
    """
    margins = kink_margins(batch, d, m, cfg)
    skipped = {}
    for key in m.arrays():
        if key in ("vis_proj", "vis_bias"):
            margin = margins["post"]
        else:
            margin = min(margins["relu"], margins["post"])
        skipped[key] = bool(margin <= 10.0 * h)

    work = {key: arr.copy() for key, arr in m.arrays().items()}
    grads = ParamGradients.zeros_like(m)
    grad_arrays = grads.arrays()
    for key, arr in work.items():
        flat = arr.reshape(-1)
        out = grad_arrays[key].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = total_objective(batch, d, ModelParams.from_arrays(work), cfg)
            flat[idx] = orig - h
            f_minus = total_objective(batch, d, ModelParams.from_arrays(work), cfg)
            flat[idx] = orig
            out[idx] = (f_plus - f_minus) / (2.0 * h)
    return grads, skipped


def random_instance(seed: int):
    """Small random (batch, dataset, params, cfg) tuple for cross-checks.

    Dimensions stay tiny (embed_dim <= 8, <= 4 classes, <= 3 parts) so
    scalar oracles and per-coordinate differencing stay fast.
    """
    rng = np.random.default_rng(seed)
    embed_dim = int(rng.integers(2, 9))
    vis_dim = int(rng.integers(2, 9))
    n_mods = int(rng.integers(1, 3))
    mod_dims = {f"mod{k}": int(rng.integers(2, 9)) for k in range(n_mods)}
    n_classes = int(rng.integers(2, 5))
    class_ids = [f"k{i}" for i in range(n_classes)]

    classes = {}
    for cid in class_ids:
        parts = []
        for _ in range(int(rng.integers(1, 4))):
            tokens = {mod: rng.standard_normal(dim) for mod, dim in mod_dims.items()}
            parts.append(LanguagePart(tokens=tokens))
        classes[cid] = LanguagePartSet(class_id=cid, parts=tuple(parts))

    images = []
    for cid in class_ids:
        for j in range(int(rng.integers(1, 3))):
            feats = rng.standard_normal((int(rng.integers(1, 4)), vis_dim))
            images.append((VisualPartSet(image_id=f"{cid}_i{j}", parts=feats), cid))

    split = ZeroShotSplit(
        train_classes=frozenset(class_ids), val_classes=frozenset(), test_classes=frozenset()
    )
    d = Dataset(images=tuple(images), classes=classes, split=split)

    params = ModelParams(
        lang_proj={mod: 0.6 * rng.standard_normal((embed_dim, dim)) for mod, dim in mod_dims.items()},
        lang_bias=0.3 * rng.standard_normal(embed_dim),
        vis_proj=0.6 * rng.standard_normal((embed_dim, vis_dim)),
        vis_bias=0.3 * rng.standard_normal(embed_dim),
    )
    cfg = LossConfig(
        margin_delta=float(rng.uniform(0.2, 1.0)),
        reg_alpha=float(rng.choice([0.0, rng.uniform(1e-4, 1e-2)])),
        rank_beta=float(rng.uniform(0.3, 1.5)),
        full_negatives=bool(rng.integers(2)),
    )
    batch = list(images)
    return batch, d, params, cfg


@dataclass
class GradCheckInstance:
    seed: int
    max_rel_err: float
    n_checked: int
    n_skipped_fields: int


@dataclass
class GradCheckResult:
    instances: list[GradCheckInstance]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(i.max_rel_err <= self.tolerance for i in self.instances)

    @property
    def n_checked(self) -> int:
        return sum(i.n_checked for i in self.instances)


def relative_error(a: float, f: float, floor: float = 1e-8) -> float:
    """|a - f| scaled by the larger magnitude; exact-zero pairs and
    differences below ``floor`` count as agreement."""
    diff = abs(a - f)
    scale = max(abs(a), abs(f))
    if diff <= floor:
        return 0.0
    return diff / scale


def gradient_check(
    n_instances: int = 20, h: float = 1e-5, tolerance: float = 1e-4, seed0: int = 0
) -> GradCheckResult:
    """Analytic vs central-difference gradients on random small instances."""
    from .objective import gradient

    instances = []
    for k in range(n_instances):
        seed = seed0 + k
        batch, d, params, cfg = random_instance(seed)
        analytic = gradient(batch, d, params, cfg).arrays()
        numeric, skipped = fd_gradient(batch, d, params, cfg, h=h)
        numeric = numeric.arrays()
        max_err = 0.0
        n_checked = 0
        n_skipped = 0
        for key in analytic:
            if skipped[key]:
                n_skipped += 1
                continue
            a, f = analytic[key].ravel(), numeric[key].ravel()
            for idx in range(a.size):
                max_err = max(max_err, relative_error(float(a[idx]), float(f[idx])))
                n_checked += 1
        instances.append(
            GradCheckInstance(
                seed=seed, max_rel_err=max_err, n_checked=n_checked, n_skipped_fields=n_skipped
            )
        )
    return GradCheckResult(instances=instances, tolerance=tolerance)


def compatibility_agreement(n_instances: int = 100, seed0: int = 0) -> float:
    """Max |batched - scalar-loop| compatibility over random instances."""
    from .embedder import embed_language_set, embed_visual_set, compatibility

    worst = 0.0
    for k in range(n_instances):
        _, d, params, _ = random_instance(seed0 + k)
        x, _ = d.images[k % len(d.images)]
        cid = sorted(d.classes)[k % len(d.classes)]
        fast = compatibility(
            embed_visual_set(x, params), embed_language_set(d.classes[cid], params)
        )
        slow = naive_compatibility(x, d.classes[cid], params)
        worst = max(worst, abs(fast - slow))
    return worst
