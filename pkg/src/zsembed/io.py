"""File formats, dataset assembly, model persistence and run configuration.

Binary envelopes are little-endian throughout. Feature files ("ZSLF")
carry 32-bit floats which are widened to 64-bit on load; model files
("ZSLM") store parameters at full 64-bit precision. Both loaders verify
that the declared counts account for every byte and reject trailing
data.

Run configuration is a flat UTF-8 ``key = value`` file with ``#``
comments and dotted keys for nested values; ``--set key=value`` command
line overrides are applied on top.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ConfigError,
    DataError,
    Dataset,
    FormatError,
    LanguagePart,
    LanguagePartSet,
    ModelParams,
    UsageError,
    VisualPartSet,
    ZeroShotSplit,
)
from .langparts import (
    AttributeTable,
    Vocabulary,
    WordVectorTable,
    bow_histogram,
    mbow,
    nad1,
    nad2,
    nad3,
    phrase_vector,
)
from .metrics import MetricReport, PART_MODES
from .objective import LossConfig
from .trainer import TrainConfig, TrainReport

FEATURE_MAGIC = b"ZSLF"
MODEL_MAGIC = b"ZSLM"
FORMAT_VERSION = 1


class _Reader:
    """Cursor over a byte buffer that reports offsets in its errors."""

    def __init__(self, data: bytes, label: str):
        self.data = data
        self.off = 0
        self.label = label

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(
                f"{self.label}: truncated while reading {what} at byte offset {self.off}"
            )
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what: str) -> str:
        n = self.u32(f"{what} length")
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(
                f"{self.label}: invalid UTF-8 in {what} at byte offset {self.off - n}"
            ) from exc

    def floats(self, count: int, dtype, what: str) -> np.ndarray:
        nbytes = count * np.dtype(dtype).itemsize
        raw = self.take(nbytes, what)
        return np.frombuffer(raw, dtype=dtype, count=count)

    def finish(self):
        if self.off != len(self.data):
            raise FormatError(
                f"{self.label}: {len(self.data) - self.off} trailing bytes at offset {self.off}"
            )


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _u32(len(raw)) + raw


def save_features(path, images) -> None:
    """Persist (VisualPartSet, class_id) pairs; one part count per file."""
    images = list(images)
    if not images:
        raise UsageError("cannot save an empty feature file")
    parts = images[0][0].n_parts
    dim = images[0][0].dim
    for x, _ in images:
        if x.n_parts != parts or x.dim != dim:
            raise DataError(
                f"image '{x.image_id}' has shape ({x.n_parts}, {x.dim}), "
                f"file requires ({parts}, {dim})"
            )
    out = bytearray()
    out += FEATURE_MAGIC
    out += _u32(FORMAT_VERSION)
    out += _u32(len(images))
    out += _u32(parts)
    out += _u32(dim)
    for x, cid in images:
        out += _string(x.image_id)
        out += _string(cid)
        out += x.parts.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_features(path) -> list[tuple[VisualPartSet, str]]:
    """Load a feature file back into (VisualPartSet, class_id) pairs.

    The 32-bit payload is widened to float64.
    """
    r = _Reader(Path(path).read_bytes(), str(path))
    magic = r.take(4, "magic")
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    n_images = r.u32("image count")
    parts = r.u32("part count")
    dim = r.u32("feature dimension")
    if parts < 1 or dim < 1:
        raise FormatError(f"{path}: declared part count/dimension must be >= 1")
    images = []
    for _ in range(n_images):
        image_id = r.string("image id")
        class_id = r.string("class id")
        values = r.floats(parts * dim, "<f4", f"features of '{image_id}'")
        feats = values.astype(np.float64).reshape(parts, dim)
        images.append((VisualPartSet(image_id=image_id, parts=feats), class_id))
    r.finish()
    return images


def save_model(path, m: ModelParams) -> None:
    out = bytearray()
    out += MODEL_MAGIC
    out += _u32(FORMAT_VERSION)
    out += _u32(m.embed_dim)
    out += _u32(m.visual_dim)
    out += _u32(len(m.lang_proj))
    for mod in sorted(m.lang_proj):
        w = m.lang_proj[mod]
        out += _string(mod)
        out += _u32(w.shape[1])
        out += w.astype("<f8").tobytes(order="C")
    out += m.lang_bias.astype("<f8").tobytes(order="C")
    out += m.vis_proj.astype("<f8").tobytes(order="C")
    out += m.vis_bias.astype("<f8").tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_model(path) -> ModelParams:
    r = _Reader(Path(path).read_bytes(), str(path))
    magic = r.take(4, "magic")
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    embed_dim = r.u32("embedding dimension")
    visual_dim = r.u32("visual dimension")
    n_mod = r.u32("modality count")
    if embed_dim < 1 or visual_dim < 1:
        raise FormatError(f"{path}: declared dimensions must be >= 1")
    lang = {}
    for _ in range(n_mod):
        mod = r.string("modality id")
        dim = r.u32(f"dimension of '{mod}'")
        w = r.floats(embed_dim * dim, "<f8", f"projection of '{mod}'")
        lang[mod] = w.astype(np.float64).reshape(embed_dim, dim)
    lang_bias = r.floats(embed_dim, "<f8", "language bias").astype(np.float64)
    vis_proj = (
        r.floats(embed_dim * visual_dim, "<f8", "visual projection")
        .astype(np.float64)
        .reshape(embed_dim, visual_dim)
    )
    vis_bias = r.floats(embed_dim, "<f8", "visual bias").astype(np.float64)
    r.finish()
    return ModelParams(
        lang_proj=lang, lang_bias=lang_bias, vis_proj=vis_proj, vis_bias=vis_bias
    )


def save_attributes(path, table: AttributeTable) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", *table.attributes])
        for i, cid in enumerate(table.classes):
            writer.writerow([cid, *(f"{v:.17g}" for v in table.strengths[i])])


def load_attributes(path) -> AttributeTable:
    """CSV with a header row of attribute names and one row per class."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty attribute file")
    header = rows[0]
    if len(header) < 2:
        raise FormatError(f"{path}: header must name at least one attribute")
    attributes = tuple(header[1:])
    classes = []
    strengths = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(
                f"{path}: line {lineno} has {len(row)} cells, expected {len(header)}"
            )
        cid = row[0]
        if cid in seen:
            raise DataError(f"{path}: duplicate class '{cid}' at line {lineno}")
        seen.add(cid)
        values = []
        for col, cell in enumerate(row[1:], start=2):
            try:
                v = float(cell)
            except ValueError as exc:
                raise FormatError(
                    f"{path}: line {lineno} column {col}: '{cell}' is not a number"
                ) from exc
            if not (0.0 <= v <= 100.0):
                raise DataError(
                    f"{path}: line {lineno}: strength {v} outside [0, 100]"
                )
            values.append(v)
        classes.append(cid)
        strengths.append(values)
    return AttributeTable(
        classes=tuple(classes), attributes=attributes, strengths=np.array(strengths)
    )


def save_word_vectors(path, table: WordVectorTable) -> None:
    lines = [f"{len(table)} {table.dim}"]
    for token in table.tokens():
        vec = table.get(token)
        lines.append(token + " " + " ".join(f"{v:.17g}" for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_word_vectors(path) -> WordVectorTable:
    """Text table: one ``token v1 .. vd`` entry per line, optional
    ``count dim`` first line. Later duplicates win, with a warning."""
    text = Path(path).read_text(encoding="utf-8")
    vectors: dict[str, np.ndarray] = {}
    dim = None
    lines = text.splitlines()
    start = 0
    if lines:
        fields = lines[0].split()
        if len(fields) == 2:
            try:
                int(fields[0]), int(fields[1])
                start = 1
            except ValueError:
                pass
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        fields = line.split()
        token = fields[0]
        try:
            vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: malformed float") from exc
        if vec.size == 0:
            raise FormatError(f"{path}: line {lineno}: entry '{token}' has no values")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise FormatError(
                f"{path}: line {lineno}: entry '{token}' has {vec.size} values, "
                f"expected {dim}"
            )
        if token in vectors:
            warnings.warn(
                f"{path}: duplicate token '{token}' at line {lineno}; keeping the last",
                stacklevel=2,
            )
        vectors[token] = vec
    if not vectors:
        raise FormatError(f"{path}: no word vector entries found")
    return WordVectorTable(vectors)


def save_splits(path, split: ZeroShotSplit) -> None:
    lines = []
    for name in ("train", "val", "test"):
        for cid in sorted(getattr(split, f"{name}_classes")):
            lines.append(f"{cid}\t{name}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_splits(path) -> ZeroShotSplit:
    """Tab-separated ``class_id<TAB>train|val|test`` lines."""
    parts: dict[str, set[str]] = {"train": set(), "val": set(), "test": set()}
    seen = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(f"{path}: line {lineno}: expected 'class<TAB>partition'")
        cid, partition = fields[0], fields[1].strip()
        if partition not in parts:
            raise FormatError(
                f"{path}: line {lineno}: unknown partition '{partition}'"
            )
        if cid in seen:
            raise DataError(f"{path}: line {lineno}: class '{cid}' listed twice")
        seen.add(cid)
        parts[partition].add(cid)
    return ZeroShotSplit(
        train_classes=frozenset(parts["train"]),
        val_classes=frozenset(parts["val"]),
        test_classes=frozenset(parts["test"]),
    )


def save_vocabulary(path, v: Vocabulary) -> None:
    lines = [f"{term}\t{df}" for term, df in zip(v.terms, v.doc_freq)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocabulary(path) -> Vocabulary:
    terms = []
    freqs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(f"{path}: line {lineno}: expected 'term<TAB>doc_freq'")
        terms.append(fields[0])
        try:
            freqs.append(int(fields[1]))
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: bad document frequency") from exc
    return Vocabulary(terms=tuple(terms), doc_freq=tuple(freqs))


def save_language_parts(path, classes: dict[str, LanguagePartSet]) -> None:
    lines = ["#zsl-parts 1"]
    for cid in sorted(classes):
        for j, part in enumerate(classes[cid].parts):
            for mod in sorted(part.tokens):
                vec = part.tokens[mod]
                values = " ".join(f"{v:.17g}" for v in vec)
                lines.append(f"{cid}\t{j}\t{mod}\t{values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_language_parts(path) -> dict[str, LanguagePartSet]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != "#zsl-parts 1":
        raise FormatError(f"{path}: missing '#zsl-parts 1' header")
    staged: dict[str, dict[int, dict[str, np.ndarray]]] = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(
                f"{path}: line {lineno}: expected 'class<TAB>part<TAB>modality<TAB>values'"
            )
        cid, part_idx, mod, values = fields
        try:
            j = int(part_idx)
            vec = np.array([float(v) for v in values.split()], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: malformed record") from exc
        staged.setdefault(cid, {}).setdefault(j, {})[mod] = vec
    out = {}
    for cid, by_index in staged.items():
        parts = []
        for j in sorted(by_index):
            parts.append(LanguagePart(tokens=by_index[j]))
        out[cid] = LanguagePartSet(class_id=cid, parts=tuple(parts))
    return out


def load_corpus_dir(path) -> dict[str, str]:
    """One ``<class_id>.txt`` article per class."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"corpus directory '{path}' does not exist")
    articles = {}
    for entry in sorted(root.glob("*.txt")):
        articles[entry.stem] = entry.read_text(encoding="utf-8")
    if not articles:
        raise DataError(f"corpus directory '{path}' contains no .txt articles")
    return articles


# --- run configuration ------------------------------------------------------

@dataclass(frozen=True)
class CueSpec:
    """One language-cue selection, e.g. nad2(50) or bow."""

    name: str
    param: float | None = None

    def __str__(self) -> str:
        if self.param is None:
            return self.name
        if self.name in ("nad2", "mbow2"):
            return f"{self.name}({int(self.param)})"
        return f"{self.name}({self.param:g})"


CUE_NAMES = (
    "attributes",
    "word2vec-class",
    "bow",
    "nad1",
    "nad2",
    "nad3",
    "mbow1",
    "mbow2",
    "mbow3",
)
SINGLE_PART_CUES = {"attributes", "word2vec-class", "bow", "nad1", "mbow1"}


def parse_cue(text: str) -> CueSpec:
    text = text.strip()
    if "(" in text:
        if not text.endswith(")"):
            raise ConfigError(f"malformed cue '{text}'")
        name, arg = text[:-1].split("(", 1)
        name = name.strip()
        try:
            param = float(arg)
        except ValueError as exc:
            raise ConfigError(f"malformed cue parameter in '{text}'") from exc
    else:
        name, param = text, None
    if name not in CUE_NAMES:
        raise ConfigError(f"unknown cue '{name}' (known: {', '.join(CUE_NAMES)})")
    if name in ("nad2", "mbow2") and param is None:
        raise ConfigError(f"cue '{name}' requires a parameter, e.g. {name}(5)")
    return CueSpec(name=name, param=param)


def parse_cues(text: str) -> list[CueSpec]:
    cues = [parse_cue(part) for part in text.split(",") if part.strip()]
    if not cues:
        raise ConfigError("cue list is empty")
    return cues


CONFIG_DEFAULTS: dict[str, str] = {
    "features": "data/features.zslf",
    "splits": "data/splits.tsv",
    "word_vectors": "data/word_vectors.txt",
    "attributes": "data/attributes.csv",
    "corpus_dir": "data/corpus",
    "vocabulary": "data/vocabulary.txt",
    "parts": "",
    "model": "out/model.zslm",
    "report": "out/report.txt",
    "report_kv": "out/report.kv",
    "train_log": "out/train.log",
    "train_summary": "out/train.kv",
    "out_dir": "data",
    "cues": "word2vec-class",
    "combine": "union",
    "part_mode": "vp19",
    "retrieval": "labels",
    "grid": "false",
    "train.learning_rate": "0.01",
    "train.batch_size": "100",
    "train.momentum": "0.9",
    "train.epochs": "20",
    "train.embed_dim": "64",
    "train.seed": "0",
    "train.deterministic": "true",
    "loss.margin_delta": "1.0",
    "loss.reg_alpha": "0.0",
    "loss.rank_beta": "1.0",
    "loss.full_negatives": "false",
    "synth.n_train_classes": "15",
    "synth.n_val_classes": "5",
    "synth.n_test_classes": "5",
    "synth.parts_per_image": "4",
    "synth.images_per_class": "20",
    "synth.visual_dim": "32",
    "synth.token_dim": "32",
    "synth.noise_sigma": "0.5",
    "synth.seed": "0",
    "vocab.min_df": "2",
    "vocab.max_df_fraction": "0.5",
    "gradcheck.instances": "20",
    "gradcheck.step": "1e-5",
    "gradcheck.tolerance": "1e-4",
    "gradcheck.seed": "0",
}


def parse_config_text(text: str, label: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{label}: line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"{label}: line {lineno}: unknown key '{key}'")
        values[key] = value.strip()
    return values


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), label=str(path))


def apply_overrides(values: dict[str, str], overrides) -> dict[str, str]:
    merged = dict(values)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        merged[key] = value.strip()
    return merged


def _as_bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"config key '{key}' expects a boolean, got '{value}'")


@dataclass
class RunConfig:
    """Typed view over the flat configuration mapping."""

    values: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(CONFIG_DEFAULTS)
        merged.update(self.values)
        self.values = merged

    def path(self, key: str) -> str:
        return self.values[key]

    def _float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"config key '{key}' expects a number") from exc

    def _int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"config key '{key}' expects an integer") from exc

    @property
    def loss(self) -> LossConfig:
        return LossConfig(
            margin_delta=self._float("loss.margin_delta"),
            reg_alpha=self._float("loss.reg_alpha"),
            rank_beta=self._float("loss.rank_beta"),
            full_negatives=_as_bool(self.values["loss.full_negatives"], "loss.full_negatives"),
        )

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self._float("train.learning_rate"),
            batch_size=self._int("train.batch_size"),
            momentum=self._float("train.momentum"),
            epochs=self._int("train.epochs"),
            embed_dim=self._int("train.embed_dim"),
            loss=self.loss,
            seed=self._int("train.seed"),
            deterministic=_as_bool(self.values["train.deterministic"], "train.deterministic"),
        )

    @property
    def cues(self) -> list[CueSpec]:
        return parse_cues(self.values["cues"])

    @property
    def combine(self) -> str:
        mode = self.values["combine"]
        if mode not in ("fuse", "union"):
            raise ConfigError(f"combine must be 'fuse' or 'union', got '{mode}'")
        return mode

    @property
    def part_mode(self) -> str:
        mode = self.values["part_mode"]
        if mode not in PART_MODES:
            raise ConfigError(f"part_mode must be one of {PART_MODES}, got '{mode}'")
        return mode

    @property
    def retrieval(self) -> str:
        mode = self.values["retrieval"]
        if mode not in ("labels", "images"):
            raise ConfigError(f"retrieval must be 'labels' or 'images', got '{mode}'")
        return mode

    @property
    def grid(self) -> bool:
        return _as_bool(self.values["grid"], "grid")

    def synth_spec(self):
        from .oracle import SynthSpec

        return SynthSpec(
            n_train_classes=self._int("synth.n_train_classes"),
            n_val_classes=self._int("synth.n_val_classes"),
            n_test_classes=self._int("synth.n_test_classes"),
            parts_per_image=self._int("synth.parts_per_image"),
            images_per_class=self._int("synth.images_per_class"),
            visual_dim=self._int("synth.visual_dim"),
            token_dim=self._int("synth.token_dim"),
            noise_sigma=self._float("synth.noise_sigma"),
            seed=self._int("synth.seed"),
        )


# --- language cue assembly --------------------------------------------------

def _build_cue(
    cue: CueSpec,
    class_id: str,
    attributes: AttributeTable | None,
    word_vectors: WordVectorTable | None,
    vocabulary: Vocabulary | None,
    corpus: dict[str, str] | None,
) -> list[LanguagePart]:
    def need(value, what):
        if value is None:
            raise ConfigError(f"cue '{cue}' requires {what}")
        return value

    name = cue.name
    if name == "attributes":
        table = need(attributes, "an attribute table")
        return [LanguagePart(tokens={"attributes": table.row(class_id) / 100.0})]
    if name == "word2vec-class":
        wv = need(word_vectors, "a word vector table")
        return [LanguagePart(tokens={"word2vec": phrase_vector(class_id, wv)})]
    if name == "nad1":
        return [nad1(class_id, need(attributes, "an attribute table"), need(word_vectors, "a word vector table"))]
    if name == "nad2":
        return nad2(
            class_id,
            need(attributes, "an attribute table"),
            need(word_vectors, "a word vector table"),
            int(cue.param),
        )
    if name == "nad3":
        threshold = 50.0 if cue.param is None else float(cue.param)
        return nad3(
            class_id,
            need(attributes, "an attribute table"),
            need(word_vectors, "a word vector table"),
            threshold,
        )
    article = None
    if name in ("bow", "mbow1", "mbow2", "mbow3"):
        articles = need(corpus, "a corpus directory")
        article = articles.get(class_id)
        if article is None:
            raise DataError(f"no article for class '{class_id}' in the corpus")
        vocab = need(vocabulary, "a vocabulary")
        if name == "bow":
            return [LanguagePart(tokens={"bow": bow_histogram(article, vocab)})]
        groups = int(cue.param) if cue.param is not None else None
        histograms = mbow(article, name, vocab, groups=groups)
        return [LanguagePart(tokens={name: h}) for h in histograms]
    raise ConfigError(f"unknown cue '{name}'")


def assemble_language_parts(
    cfg: RunConfig,
    classes,
    attributes: AttributeTable | None = None,
    word_vectors: WordVectorTable | None = None,
    vocabulary: Vocabulary | None = None,
    corpus: dict[str, str] | None = None,
) -> dict[str, LanguagePartSet]:
    """Build per-class language parts for the configured cues.

    ``fuse`` merges single-part cues into one part carrying one token per
    modality; ``union`` concatenates the part lists, each part keeping
    its own modality. Cue order follows the configuration.
    """
    cues = cfg.cues
    mode = cfg.combine
    if mode == "fuse":
        multi = [str(c) for c in cues if c.name not in SINGLE_PART_CUES]
        if multi:
            raise UsageError(
                f"fuse is defined only for single-part cues; got {', '.join(multi)}"
            )
    out = {}
    for cid in sorted(classes):
        built: list[list[LanguagePart]] = [
            _build_cue(cue, cid, attributes, word_vectors, vocabulary, corpus)
            for cue in cues
        ]
        if mode == "fuse":
            tokens: dict[str, np.ndarray] = {}
            for parts in built:
                for mod, vec in parts[0].tokens.items():
                    if mod in tokens:
                        raise UsageError(f"modality '{mod}' selected twice for fuse")
                    tokens[mod] = vec
            out[cid] = LanguagePartSet(class_id=cid, parts=(LanguagePart(tokens=tokens),))
        else:
            flat = [p for parts in built for p in parts]
            out[cid] = LanguagePartSet(class_id=cid, parts=tuple(flat))
    return out


def load_cue_inputs(cfg: RunConfig):
    """Load whichever tables the configured cues require."""
    cues = cfg.cues
    needs_attr = any(c.name in ("attributes", "nad1", "nad2", "nad3") for c in cues)
    needs_wv = any(c.name in ("word2vec-class", "nad1", "nad2", "nad3") for c in cues)
    needs_corpus = any(c.name in ("bow", "mbow1", "mbow2", "mbow3") for c in cues)
    attributes = load_attributes(cfg.path("attributes")) if needs_attr else None
    word_vectors = load_word_vectors(cfg.path("word_vectors")) if needs_wv else None
    vocabulary = load_vocabulary(cfg.path("vocabulary")) if needs_corpus else None
    corpus = load_corpus_dir(cfg.path("corpus_dir")) if needs_corpus else None
    return attributes, word_vectors, vocabulary, corpus


def build_dataset(cfg: RunConfig) -> Dataset:
    """Assemble a Dataset from the configured files.

    A prebuilt parts file (``parts`` key) wins over cue assembly.
    """
    images = load_features(cfg.path("features"))
    split = load_splits(cfg.path("splits"))
    parts_path = cfg.path("parts")
    if parts_path:
        classes = load_language_parts(parts_path)
    else:
        attributes, word_vectors, vocabulary, corpus = load_cue_inputs(cfg)
        classes = assemble_language_parts(
            cfg,
            sorted(split.all_classes),
            attributes=attributes,
            word_vectors=word_vectors,
            vocabulary=vocabulary,
            corpus=corpus,
        )
    return Dataset(images=tuple(images), classes=classes, split=split)


# --- reports ----------------------------------------------------------------

def metric_report_kv(report: MetricReport, extras: dict[str, str] | None = None) -> str:
    lines = []
    for key, value in (extras or {}).items():
        lines.append(f"{key} = {value}")
    lines.append(f"top1_per_class = {report.top1_per_class:.6f}")
    for k in sorted(report.recall_at):
        lines.append(f"recall_at_{k} = {report.recall_at[k]:.6f}")
    for k in sorted(report.recall_at_per_image):
        lines.append(f"recall_at_{k}_per_image = {report.recall_at_per_image[k]:.6f}")
    lines.append(f"mauc = {report.mauc:.6f}")
    return "\n".join(lines) + "\n"


def metric_report_text(report: MetricReport, extras: dict[str, str] | None = None) -> str:
    rows: list[tuple[str, str]] = []
    for key, value in (extras or {}).items():
        rows.append((key, str(value)))
    rows.append(("top1_per_class (%)", f"{report.top1_per_class:.2f}"))
    for k in sorted(report.recall_at):
        rows.append((f"R@{k} per-class (%)", f"{report.recall_at[k]:.2f}"))
    for k in sorted(report.recall_at_per_image):
        rows.append((f"R@{k} per-image (%)", f"{report.recall_at_per_image[k]:.2f}"))
    rows.append(("mAUC", f"{report.mauc:.4f}"))
    width = max(len(name) for name, _ in rows)
    lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
    return "\n".join(lines) + "\n"


def read_kv(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def train_log_lines(report: TrainReport) -> list[str]:
    lines = []
    for i, (obj, val) in enumerate(zip(report.epoch_objectives, report.epoch_val_top1), 1):
        lines.append(
            f"epoch {i}/{len(report.epoch_objectives)} objective {obj:.6f} val_top1 {val:.2f}"
        )
    return lines


def train_summary_kv(report: TrainReport) -> str:
    lines = [
        f"epochs = {len(report.epoch_objectives)}",
        f"final_objective = {report.epoch_objectives[-1]:.6f}",
        f"final_val_top1 = {report.epoch_val_top1[-1]:.6f}",
        f"wall_clock_seconds = {report.wall_clock_seconds:.3f}",
    ]
    return "\n".join(lines) + "\n"
