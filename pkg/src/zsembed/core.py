"""Core domain types: part sets, model parameters, datasets and splits.

Everything here is immutable after construction (arrays are frozen), so
instances can be shared freely across threads. Feature and token vectors
are held as float64 regardless of how they were stored on disk, which
keeps finite-difference checks against the training objective meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ZsError(Exception):
    """Base class for errors raised by this package."""


class DataError(ZsError):
    """The input data violates a documented contract."""


class UsageError(ZsError):
    """The caller violated an operation precondition."""


class ConfigError(ZsError):
    """A configuration value is missing, unknown or inconsistent."""


class FormatError(DataError):
    """A file does not conform to its declared on-disk format."""


def _frozen_f64(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VisualPartSet:
    """An image's bag of precomputed part feature vectors.

    ``parts`` is a (n_parts, visual_dim) array; row order carries no
    meaning. Part index 0 is, by file convention, the whole-image crop.
    """

    image_id: str
    parts: np.ndarray

    def __post_init__(self):
        arr = _frozen_f64(self.parts, f"parts of image '{self.image_id}'")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(
                f"image '{self.image_id}' needs a (n_parts, dim) array with "
                f"n_parts >= 1 and dim >= 1, got shape {arr.shape}"
            )
        object.__setattr__(self, "parts", arr)

    @property
    def n_parts(self) -> int:
        return self.parts.shape[0]

    @property
    def dim(self) -> int:
        return self.parts.shape[1]

    def first_part_only(self) -> "VisualPartSet":
        """Copy of this part set restricted to the whole-image part."""
        return VisualPartSet(self.image_id, self.parts[:1])


@dataclass(frozen=True)
class LanguagePart:
    """One language part: a token vector per language modality."""

    tokens: dict[str, np.ndarray]

    def __post_init__(self):
        if not self.tokens:
            raise DataError("a language part must carry at least one modality token")
        frozen = {}
        for mod, vec in self.tokens.items():
            arr = _frozen_f64(vec, f"token for modality '{mod}'")
            if arr.ndim != 1 or arr.size < 1:
                raise DataError(f"token for modality '{mod}' must be a non-empty vector")
            frozen[mod] = arr
        object.__setattr__(self, "tokens", frozen)

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(sorted(self.tokens))


@dataclass(frozen=True)
class LanguagePartSet:
    """A class's bag of language parts."""

    class_id: str
    parts: tuple[LanguagePart, ...]

    def __post_init__(self):
        parts = tuple(self.parts)
        if len(parts) < 1:
            raise DataError(f"class '{self.class_id}' has no language parts")
        object.__setattr__(self, "parts", parts)

    @property
    def n_parts(self) -> int:
        return len(self.parts)


@dataclass(frozen=True)
class ModelParams:
    """All learnable encoders of the joint embedding.

    ``lang_proj[mod]`` has shape (embed_dim, dim_of_modality); ``vis_proj``
    has shape (embed_dim, visual_dim); both biases have shape (embed_dim,).
    """

    lang_proj: dict[str, np.ndarray]
    lang_bias: np.ndarray
    vis_proj: np.ndarray
    vis_bias: np.ndarray

    def __post_init__(self):
        vis_proj = _frozen_f64(self.vis_proj, "vis_proj")
        vis_bias = _frozen_f64(self.vis_bias, "vis_bias")
        lang_bias = _frozen_f64(self.lang_bias, "lang_bias")
        if vis_proj.ndim != 2:
            raise DataError("vis_proj must be a (embed_dim, visual_dim) matrix")
        embed_dim = vis_proj.shape[0]
        if lang_bias.shape != (embed_dim,) or vis_bias.shape != (embed_dim,):
            raise DataError("bias dimensions must equal embed_dim of vis_proj")
        frozen = {}
        for mod, mat in self.lang_proj.items():
            arr = _frozen_f64(mat, f"lang_proj['{mod}']")
            if arr.ndim != 2 or arr.shape[0] != embed_dim:
                raise DataError(
                    f"lang_proj['{mod}'] must have {embed_dim} rows, got shape {arr.shape}"
                )
            frozen[mod] = arr
        object.__setattr__(self, "lang_proj", frozen)
        object.__setattr__(self, "lang_bias", lang_bias)
        object.__setattr__(self, "vis_proj", vis_proj)
        object.__setattr__(self, "vis_bias", vis_bias)

    @property
    def embed_dim(self) -> int:
        return self.vis_proj.shape[0]

    @property
    def visual_dim(self) -> int:
        return self.vis_proj.shape[1]

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(sorted(self.lang_proj))

    def arrays(self) -> dict[str, np.ndarray]:
        """Flat, deterministically ordered view of every parameter array.

        Keys: ``lang_proj:<modality>`` (sorted), ``lang_bias``, ``vis_proj``,
        ``vis_bias``. Used by the optimizer and the gradient checker.
        """
        out: dict[str, np.ndarray] = {}
        for mod in sorted(self.lang_proj):
            out[f"lang_proj:{mod}"] = self.lang_proj[mod]
        out["lang_bias"] = self.lang_bias
        out["vis_proj"] = self.vis_proj
        out["vis_bias"] = self.vis_bias
        return out

    @staticmethod
    def from_arrays(arrays: dict[str, np.ndarray]) -> "ModelParams":
        """Inverse of :meth:`arrays`."""
        lang = {
            key.split(":", 1)[1]: arr
            for key, arr in arrays.items()
            if key.startswith("lang_proj:")
        }
        return ModelParams(
            lang_proj=lang,
            lang_bias=arrays["lang_bias"],
            vis_proj=arrays["vis_proj"],
            vis_bias=arrays["vis_bias"],
        )


@dataclass(frozen=True)
class ZeroShotSplit:
    """Disjoint train / validation / test class partitions."""

    train_classes: frozenset[str]
    val_classes: frozenset[str]
    test_classes: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "train_classes", frozenset(self.train_classes))
        object.__setattr__(self, "val_classes", frozenset(self.val_classes))
        object.__setattr__(self, "test_classes", frozenset(self.test_classes))

    def partition_of(self, class_id: str) -> str | None:
        if class_id in self.train_classes:
            return "train"
        if class_id in self.val_classes:
            return "val"
        if class_id in self.test_classes:
            return "test"
        return None

    @property
    def all_classes(self) -> frozenset[str]:
        return self.train_classes | self.val_classes | self.test_classes


@dataclass(frozen=True)
class Dataset:
    """Images with labels, per-class language parts, and the zero-shot split."""

    images: tuple[tuple[VisualPartSet, str], ...]
    classes: dict[str, LanguagePartSet]
    split: ZeroShotSplit

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(tuple(entry) for entry in self.images))
        object.__setattr__(self, "classes", dict(self.classes))

    def images_for(self, class_ids) -> list[tuple[VisualPartSet, str]]:
        wanted = set(class_ids)
        return [(x, c) for (x, c) in self.images if c in wanted]

    def restrict_to_first_part(self) -> "Dataset":
        """Same dataset with every image reduced to its whole-image part."""
        return Dataset(
            images=tuple((x.first_part_only(), c) for (x, c) in self.images),
            classes=self.classes,
            split=self.split,
        )


def validate_dataset(d: Dataset) -> list[str]:
    """Check every domain invariant; return one message per violation.

    Violations are data, not failures: the function never raises on bad
    content, it names the offending entity instead.
    """
    violations: list[str] = []
    split = d.split

    for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
        overlap = getattr(split, f"{a}_classes") & getattr(split, f"{b}_classes")
        for cid in sorted(overlap):
            violations.append(f"class '{cid}' appears in both {a} and {b} splits")
    for name in ("train", "val", "test"):
        if not getattr(split, f"{name}_classes"):
            violations.append(f"{name} split is empty")

    dims = {}
    for x, cid in d.images:
        if split.partition_of(cid) is None:
            violations.append(
                f"image '{x.image_id}' is labeled '{cid}' which is absent from all splits"
            )
        if cid not in d.classes:
            violations.append(
                f"image '{x.image_id}' is labeled '{cid}' which has no language parts"
            )
        dims.setdefault(x.dim, x.image_id)
    if len(dims) > 1:
        named = ", ".join(
            f"'{img}' (dim {dim})" for dim, img in sorted(dims.items())
        )
        violations.append(f"visual part dimensions differ across images: {named}")

    for cid in sorted(split.all_classes):
        if cid not in d.classes:
            violations.append(f"class '{cid}' is in the split but has no language parts")

    mod_dims: dict[str, tuple[int, str]] = {}
    for cid in sorted(d.classes):
        lps = d.classes[cid]
        for part in lps.parts:
            for mod, vec in part.tokens.items():
                seen = mod_dims.get(mod)
                if seen is None:
                    mod_dims[mod] = (vec.size, cid)
                elif seen[0] != vec.size:
                    violations.append(
                        f"modality '{mod}' has dim {seen[0]} in class '{seen[1]}' "
                        f"but dim {vec.size} in class '{cid}'"
                    )
                    mod_dims[mod] = (vec.size, cid)
    return violations


def modality_dims(d: Dataset) -> dict[str, int]:
    """Declared dimension of each language modality present in the dataset."""
    dims: dict[str, int] = {}
    for lps in d.classes.values():
        for part in lps.parts:
            for mod, vec in part.tokens.items():
                dims.setdefault(mod, vec.size)
    return dims


def visual_dim(d: Dataset) -> int:
    if not d.images:
        raise DataError("dataset has no images")
    return d.images[0][0].dim
