"""Language-part builders: bag-of-words histograms, article partitions,
and noun-attribute constructions over a word-vector table.

Tokenization everywhere: lowercase, then split on runs of
non-alphanumeric characters. Histograms are L1-normalized (an article
twice as long should not weigh twice as much); a document without a
single vocabulary term yields the zero vector.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DataError, LanguagePart, UsageError

_TOKEN_RE = re.compile(r"[0-9a-z]+")

MBOW2_GROUP_COUNTS = (2, 3, 4, 5)
NAD2_PART_COUNTS = (5, 10, 25, 50, 75, 100)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Byte-wise sorted unique terms with their document frequencies."""

    terms: tuple[str, ...]
    doc_freq: tuple[int, ...]

    def __post_init__(self):
        terms = tuple(self.terms)
        freq = tuple(int(n) for n in self.doc_freq)
        if len(terms) != len(freq):
            raise DataError("terms and doc_freq lengths differ")
        if list(terms) != sorted(set(terms)):
            raise DataError("vocabulary terms must be unique and sorted")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "doc_freq", freq)
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(terms)})

    def __len__(self) -> int:
        return len(self.terms)

    def index_of(self, term: str) -> int | None:
        return self._index.get(term)


@dataclass(frozen=True)
class AttributeTable:
    """Class x attribute strength matrix, strengths on a 0-100 scale."""

    classes: tuple[str, ...]
    attributes: tuple[str, ...]
    strengths: np.ndarray

    def __post_init__(self):
        classes = tuple(self.classes)
        attributes = tuple(self.attributes)
        strengths = np.array(self.strengths, dtype=np.float64)
        if strengths.shape != (len(classes), len(attributes)):
            raise DataError(
                f"strengths shape {strengths.shape} does not match "
                f"{len(classes)} classes x {len(attributes)} attributes"
            )
        if strengths.size and (strengths.min() < 0.0 or strengths.max() > 100.0):
            raise DataError("attribute strengths must lie in [0, 100]")
        if len(set(classes)) != len(classes):
            raise DataError("duplicate class ids in attribute table")
        strengths.setflags(write=False)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "attributes", attributes)
        object.__setattr__(self, "strengths", strengths)
        object.__setattr__(self, "_row", {c: i for i, c in enumerate(classes)})

    def row(self, class_id: str) -> np.ndarray:
        idx = self._row.get(class_id)
        if idx is None:
            raise DataError(f"class '{class_id}' not present in attribute table")
        return self.strengths[idx]

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)


class WordVectorTable:
    """token -> dense vector map with one shared dimension."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        if not vectors:
            raise DataError("word vector table is empty")
        self._vectors: dict[str, np.ndarray] = {}
        self.dim = None
        for token, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1:
                raise DataError(f"vector for '{token}' is not one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"vector for '{token}' has non-finite entries")
            if self.dim is None:
                self.dim = arr.size
            elif arr.size != self.dim:
                raise DataError(
                    f"vector for '{token}' has dim {arr.size}, table dim is {self.dim}"
                )
            arr.setflags(write=False)
            self._vectors[token] = arr

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def get(self, token: str) -> np.ndarray | None:
        return self._vectors.get(token)

    def tokens(self) -> list[str]:
        return sorted(self._vectors)


def build_vocabulary(corpus, min_df: int, max_df_fraction: float) -> Vocabulary:
    """Terms whose document frequency is in [min_df, max_df_fraction * |corpus|].

    Pruning both tails removes words too rare to transfer and words too
    common to discriminate.
    """
    docs = list(corpus)
    if not docs:
        raise UsageError("corpus is empty")
    if not (0.0 < max_df_fraction <= 1.0):
        raise UsageError("max_df_fraction must be in (0, 1]")
    if min_df < 0:
        raise UsageError("min_df must be >= 0")
    counts: dict[str, int] = {}
    for doc in docs:
        for term in set(tokenize(doc)):
            counts[term] = counts.get(term, 0) + 1
    max_df = max_df_fraction * len(docs)
    kept = sorted(t for t, n in counts.items() if min_df <= n <= max_df)
    if not kept:
        raise ConfigError(
            f"vocabulary is empty after pruning (min_df={min_df}, "
            f"max_df_fraction={max_df_fraction}, {len(docs)} documents)"
        )
    return Vocabulary(terms=tuple(kept), doc_freq=tuple(counts[t] for t in kept))


def term_counts(doc: str, v: Vocabulary) -> np.ndarray:
    """Raw vocabulary-term counts, in vocabulary order."""
    counts = np.zeros(len(v))
    for term in tokenize(doc):
        idx = v.index_of(term)
        if idx is not None:
            counts[idx] += 1.0
    return counts


def bow_histogram(doc: str, v: Vocabulary) -> np.ndarray:
    """L1-normalized term histogram; zero vector if nothing matched."""
    if len(v) == 0:
        raise UsageError("vocabulary is empty")
    counts = term_counts(doc, v)
    total = counts.sum()
    return counts / total if total > 0 else counts


def split_paragraphs(article: str) -> list[str]:
    """Blank-line separated blocks, whitespace-trimmed, empties dropped."""
    blocks = re.split(r"\n\s*\n", article)
    return [b.strip() for b in blocks if b.strip()]


def _is_heading(paragraph: str) -> bool:
    first = paragraph.lstrip().splitlines()[0]
    return first.startswith("==") or first.startswith("#")


def contiguous_groups(n_items: int, n_groups: int) -> list[tuple[int, int]]:
    """[start, end) ranges splitting n_items into n_groups contiguous runs,
    sizes as equal as possible with earlier groups larger."""
    base, extra = divmod(n_items, n_groups)
    ranges = []
    start = 0
    for g in range(n_groups):
        size = base + (1 if g < extra else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


def mbow(article: str, mode: str, v: Vocabulary, groups: int | None = None) -> list[np.ndarray]:
    """Multiple bag-of-words histograms for one article.

    mbow1: one histogram over the whole article.
    mbow2: paragraphs split into ``groups`` contiguous runs (2..5).
    mbow3: one histogram per heading-delimited section; an article
    without headings is a single section.
    """
    paragraphs = split_paragraphs(article)
    if not paragraphs:
        raise DataError("article has no paragraphs")
    if mode == "mbow1":
        return [bow_histogram("\n\n".join(paragraphs), v)]
    if mode == "mbow2":
        if groups not in MBOW2_GROUP_COUNTS:
            raise UsageError(f"mbow2 group count must be one of {MBOW2_GROUP_COUNTS}")
        # Articles with fewer paragraphs than groups still yield ``groups``
        # histograms; the trailing ones are simply empty (zero vectors).
        return [
            bow_histogram("\n\n".join(paragraphs[a:b]), v)
            for a, b in contiguous_groups(len(paragraphs), groups)
        ]
    if mode == "mbow3":
        sections: list[list[str]] = []
        current: list[str] = []
        for p in paragraphs:
            if _is_heading(p) and current:
                sections.append(current)
                current = []
            current.append(p)
        sections.append(current)
        return [bow_histogram("\n\n".join(sec), v) for sec in sections]
    raise UsageError(f"unknown mbow mode '{mode}'")


def phrase_vector(name: str, w: WordVectorTable) -> np.ndarray:
    """Mean of the constituent word vectors; unknown words are skipped."""
    words = tokenize(name)
    found = [w.get(token) for token in words if token in w]
    if not found:
        raise DataError(f"no word vectors found for any word of '{name}'")
    return np.mean(found, axis=0)


def _class_and_attribute_vectors(c: str, t: AttributeTable, w: WordVectorTable):
    wc = phrase_vector(c, w)
    was = np.stack([phrase_vector(a, w) for a in t.attributes])
    return wc, was


def nad1(c: str, t: AttributeTable, w: WordVectorTable) -> LanguagePart:
    """Single part: per-attribute distances between the class-name vector
    and each attribute-name vector, in attribute-table order."""
    wc, was = _class_and_attribute_vectors(c, t, w)
    dists = np.linalg.norm(wc - was, axis=1)
    return LanguagePart(tokens={"nad1": dists})


def nad2(c: str, t: AttributeTable, w: WordVectorTable, top_n: int) -> list[LanguagePart]:
    """One difference-vector part per nearest attribute in word-vector space.

    Attributes are ranked by distance to the class-name vector (ties to
    the smaller attribute index) and the ``top_n`` closest are kept.
    """
    m = t.n_attributes
    if not (1 <= top_n <= m):
        raise UsageError(f"top_n must be in [1, {m}], got {top_n}")
    wc, was = _class_and_attribute_vectors(c, t, w)
    diffs = wc - was
    dists = np.linalg.norm(diffs, axis=1)
    order = sorted(range(m), key=lambda j: (dists[j], j))[:top_n]
    return [LanguagePart(tokens={"nad2": diffs[j]}) for j in order]


def nad3(c: str, t: AttributeTable, w: WordVectorTable, threshold: float = 50.0) -> list[LanguagePart]:
    """One difference-vector part per attribute whose strength for the
    class reaches the threshold; the count varies per class."""
    if not (0.0 <= threshold <= 100.0):
        raise UsageError("threshold must be in [0, 100]")
    wc, was = _class_and_attribute_vectors(c, t, w)
    row = t.row(c)
    selected = [j for j in range(t.n_attributes) if row[j] >= threshold]
    if not selected:
        raise DataError(
            f"class '{c}' has no attribute with strength >= {threshold}"
        )
    return [LanguagePart(tokens={"nad3": wc - was[j]}) for j in selected]
