"""Zero-shot classification and retrieval metrics over unseen classes.

Classification accuracy follows the per-class convention: accuracy is
computed within each class and the unweighted mean across classes is
reported, so rare classes count as much as populous ones. Recall@k uses
the same convention by default; a per-image average is reported
alongside because the two can differ on imbalanced test sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError, Dataset, ModelParams, UsageError
from .embedder import embed_language_set, embed_visual_set

PART_MODE_SINGLE = "vp1"
PART_MODE_ALL = "vp19"
PART_MODES = (PART_MODE_SINGLE, PART_MODE_ALL)

RETRIEVAL_LABELS_PER_IMAGE = "labels"
RETRIEVAL_IMAGES_PER_LABEL = "images"


@dataclass(frozen=True)
class RankedPrediction:
    """Classes ranked for one image, best first; ties broken by class id."""

    image_id: str
    ranking: tuple[tuple[str, float], ...]

    def __post_init__(self):
        ranking = tuple((cid, float(s)) for cid, s in self.ranking)
        for _, score in ranking:
            if not np.isfinite(score):
                raise DataError(f"non-finite score in ranking of '{self.image_id}'")
        keys = [(-score, cid) for cid, score in ranking]
        if keys != sorted(keys):
            ranking = tuple(
                (cid, score) for cid, score in sorted(ranking, key=lambda e: (-e[1], e[0]))
            )
        object.__setattr__(self, "ranking", ranking)

    def top(self) -> str:
        return self.ranking[0][0]

    def rank_of(self, class_id: str) -> int | None:
        """1-based rank of a class, None if absent."""
        for i, (cid, _) in enumerate(self.ranking):
            if cid == class_id:
                return i + 1
        return None


@dataclass(frozen=True)
class MetricReport:
    top1_per_class: float
    recall_at: dict[int, float]
    recall_at_per_image: dict[int, float]
    mauc: float


def top1_per_class(preds) -> float:
    """Mean over classes of within-class accuracy, as a percentage."""
    preds = list(preds)
    if not preds:
        raise UsageError("no predictions to score")
    totals: dict[str, int] = {}
    hits: dict[str, int] = {}
    for _, predicted, true_class in preds:
        totals[true_class] = totals.get(true_class, 0) + 1
        hits[true_class] = hits.get(true_class, 0) + (1 if predicted == true_class else 0)
    acc = [hits[c] / totals[c] for c in sorted(totals)]
    return 100.0 * float(np.mean(acc))


def recall_at_k(ranked, truths, k: int, per_class: bool = True) -> float:
    """Share of images whose true class sits in the top k, as a percentage.

    ``per_class`` averages within each true class first (the default
    convention); otherwise all images weigh equally.
    """
    ranked = list(ranked)
    if k < 1:
        raise UsageError("k must be >= 1")
    if not ranked:
        raise UsageError("no ranked predictions to score")
    per_image_hits: list[tuple[str, float]] = []
    for rp in ranked:
        true_class = truths.get(rp.image_id)
        if true_class is None:
            raise DataError(f"image '{rp.image_id}' has no truth entry")
        rank = rp.rank_of(true_class)
        per_image_hits.append((true_class, 1.0 if rank is not None and rank <= k else 0.0))
    if not per_class:
        return 100.0 * float(np.mean([hit for _, hit in per_image_hits]))
    totals: dict[str, list[float]] = {}
    for true_class, hit in per_image_hits:
        totals.setdefault(true_class, []).append(hit)
    return 100.0 * float(np.mean([np.mean(hits) for _, hits in sorted(totals.items())]))


def pr_auc(scored_images, positives) -> float:
    """Area under the precision-recall curve for one class.

    Images are ranked by descending score (ties by image id). The curve
    is sampled at every rank where recall increases, extended flat down
    to recall 0, and integrated with the trapezoidal rule over recall.
    A single positive ranked last among N therefore scores 1/N.
    """
    order = sorted(scored_images, key=lambda e: (-e[1], e[0]))
    pos = set(positives)
    if not pos:
        raise DataError("class has no positive images")
    n_pos = len(pos)
    recalls = [0.0]
    precisions: list[float] = []
    hits = 0
    for rank, (image_id, _) in enumerate(order, start=1):
        if image_id in pos:
            hits += 1
            recalls.append(hits / n_pos)
            precisions.append(hits / rank)
    if hits != n_pos:
        raise DataError("some positive images are missing from the ranking")
    precisions = [precisions[0]] + precisions  # flat extension to recall 0
    area = 0.0
    for i in range(1, len(recalls)):
        area += (recalls[i] - recalls[i - 1]) * (precisions[i] + precisions[i - 1]) / 2.0
    return area


def mean_auc(class_scores, truths) -> float:
    """Mean PR-curve area across classes.

    ``class_scores`` maps class_id -> [(image_id, score)] covering every
    test image; ``truths`` maps image_id -> class_id. Every class must
    own at least one positive image.
    """
    if not class_scores:
        raise UsageError("no classes to score")
    areas = []
    for cid in sorted(class_scores):
        positives = [img for img, true_class in truths.items() if true_class == cid]
        if not positives:
            raise DataError(f"class '{cid}' has no positive test images")
        areas.append(pr_auc(class_scores[cid], positives))
    return float(np.mean(areas))


def rank_candidates(image_id: str, scores: dict[str, float]) -> RankedPrediction:
    ordered = sorted(scores.items(), key=lambda e: (-e[1], e[0]))
    return RankedPrediction(image_id=image_id, ranking=tuple(ordered))


def evaluate(
    d: Dataset,
    m: ModelParams,
    part_mode: str = PART_MODE_ALL,
    ks=(1, 5, 10),
    retrieval: str = RETRIEVAL_LABELS_PER_IMAGE,
) -> MetricReport:
    """Score the test split against the unseen test classes.

    ``vp1`` restricts each image to its first (whole-image) part; ``vp19``
    uses every available part. ``retrieval`` picks the recall protocol:
    per-image label rankings (default) or per-class image rankings.
    """
    if part_mode not in PART_MODES:
        raise UsageError(f"part_mode must be one of {PART_MODES}")
    if retrieval not in (RETRIEVAL_LABELS_PER_IMAGE, RETRIEVAL_IMAGES_PER_LABEL):
        raise UsageError("retrieval must be 'labels' or 'images'")
    test_classes = sorted(d.split.test_classes)
    if not test_classes:
        raise UsageError("test split is empty")
    images = d.images_for(test_classes)
    if not images:
        raise DataError("no test images in dataset")

    class_emb = {cid: embed_language_set(d.classes[cid], m) for cid in test_classes}
    truths: dict[str, str] = {}
    ranked: list[RankedPrediction] = []
    preds: list[tuple[str, str, str]] = []
    per_class_scores: dict[str, list[tuple[str, float]]] = {cid: [] for cid in test_classes}

    for x, true_class in images:
        vps = x.first_part_only() if part_mode == PART_MODE_SINGLE else x
        vx = embed_visual_set(vps, m)
        scores = {}
        for cid in test_classes:
            sy = class_emb[cid]
            pair = vx @ sy.T
            score = float(np.maximum(pair, 0.0).sum() / pair.size)
            scores[cid] = score
            per_class_scores[cid].append((x.image_id, score))
        truths[x.image_id] = true_class
        rp = rank_candidates(x.image_id, scores)
        ranked.append(rp)
        preds.append((x.image_id, rp.top(), true_class))

    recall = {}
    recall_img = {}
    for k in ks:
        if retrieval == RETRIEVAL_LABELS_PER_IMAGE:
            recall[k] = recall_at_k(ranked, truths, k, per_class=True)
            recall_img[k] = recall_at_k(ranked, truths, k, per_class=False)
        else:
            recall[k] = _recall_images_per_label(per_class_scores, truths, k)
            recall_img[k] = recall[k]

    return MetricReport(
        top1_per_class=top1_per_class(preds),
        recall_at=recall,
        recall_at_per_image=recall_img,
        mauc=mean_auc(per_class_scores, truths),
    )


def _recall_images_per_label(per_class_scores, truths, k: int) -> float:
    """Alternate retrieval protocol: each class retrieves images; recall is
    the share of the class's images found in its top k, averaged over
    classes."""
    vals = []
    for cid in sorted(per_class_scores):
        order = sorted(per_class_scores[cid], key=lambda e: (-e[1], e[0]))
        pos = {img for img, true_class in truths.items() if true_class == cid}
        if not pos:
            raise DataError(f"class '{cid}' has no positive test images")
        found = sum(1 for image_id, _ in order[:k] if image_id in pos)
        vals.append(found / len(pos))
    return 100.0 * float(np.mean(vals))
