"""Training objective: part alignment + margin ranking + L2 penalty.

The alignment term scores every (visual part, language part) pair inside
each (image, class) pair formed within a batch. Labels come from the
sign of the current pair score for matching image-class pairs (sign(0)
counts as -1, and the best-scoring pair is forced positive if every sign
came out negative), and are all -1 for non-matching pairs. Labels are
constants: no gradient flows through the sign.

The ranking term is a soft hinge relaxation of the constraint that the
true class outscores every negative class by at least ``margin_delta``.
Negatives default to the other classes present in the minibatch;
``full_negatives`` widens them to the whole training-class set.

The L2 penalty covers projection matrices only, never biases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DataError, Dataset, ModelParams, UsageError
from .embedder import embed_language_set, embed_visual_set, language_preactivation


@dataclass(frozen=True)
class LossConfig:
    margin_delta: float = 1.0
    reg_alpha: float = 0.0
    rank_beta: float = 1.0
    full_negatives: bool = False

    def __post_init__(self):
        if not self.margin_delta > 0:
            raise UsageError("margin_delta must be > 0")
        if self.reg_alpha < 0:
            raise UsageError("reg_alpha must be >= 0")
        if self.rank_beta < 0:
            raise UsageError("rank_beta must be >= 0")


@dataclass
class ParamGradients:
    """Gradient arrays, one per ModelParams field, same shapes."""

    lang_proj: dict[str, np.ndarray]
    lang_bias: np.ndarray
    vis_proj: np.ndarray
    vis_bias: np.ndarray

    @staticmethod
    def zeros_like(m: ModelParams) -> "ParamGradients":
        return ParamGradients(
            lang_proj={mod: np.zeros_like(w) for mod, w in m.lang_proj.items()},
            lang_bias=np.zeros_like(m.lang_bias),
            vis_proj=np.zeros_like(m.vis_proj),
            vis_bias=np.zeros_like(m.vis_bias),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for mod in sorted(self.lang_proj):
            out[f"lang_proj:{mod}"] = self.lang_proj[mod]
        out["lang_bias"] = self.lang_bias
        out["vis_proj"] = self.vis_proj
        out["vis_bias"] = self.vis_bias
        return out


def _as_matrix(vectors, side: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise UsageError(f"{side} embedding list must be non-empty")
    return arr


def _sign_labels(dots: np.ndarray) -> np.ndarray:
    """Sign labels with forcing: sign(0) = -1; if the whole block is
    negative, the maximum entry (first in row-major order on ties) is
    forced to +1 so a matching pair always keeps one positive."""
    labels = np.where(dots > 0.0, 1.0, -1.0)
    if not (dots > 0.0).any():
        labels.flat[int(np.argmax(dots))] = 1.0
    return labels


def alignment_labels(v, s, matching: bool) -> np.ndarray:
    """(+1/-1) label matrix over (visual part i, language part j)."""
    vm = _as_matrix(v, "visual")
    sm = _as_matrix(s, "language")
    if not matching:
        return -np.ones((vm.shape[0], sm.shape[0]))
    return _sign_labels(vm @ sm.T)


def alignment_loss(v, s, labels) -> float:
    """Sum of hinge terms max(0, 1 - y_ij * <v_i, s_j>)."""
    vm = _as_matrix(v, "visual")
    sm = _as_matrix(s, "language")
    lab = np.asarray(labels, dtype=np.float64)
    if lab.shape != (vm.shape[0], sm.shape[0]):
        raise UsageError(
            f"label shape {lab.shape} does not match part counts "
            f"({vm.shape[0]}, {sm.shape[0]})"
        )
    hinge = 1.0 - lab * (vm @ sm.T)
    return float(np.maximum(hinge, 0.0).sum())


def ranking_penalty(batch, universe, d: Dataset, m: ModelParams, cfg: LossConfig) -> float:
    """Sum over images of hinge violations of the margin constraint.

    Reference implementation built directly on the embedder; the batched
    engine below must agree with it.
    """
    universe = sorted(set(universe))
    from .embedder import compatibility

    total = 0.0
    s_cache: dict[str, np.ndarray] = {}
    for x, true_class in batch:
        if true_class not in universe:
            raise UsageError(
                f"true class '{true_class}' of image '{x.image_id}' is not in the universe"
            )
        vx = embed_visual_set(x, m)
        scores = {}
        for cid in universe:
            if cid not in s_cache:
                s_cache[cid] = embed_language_set(d.classes[cid], m)
            scores[cid] = compatibility(vx, s_cache[cid])
        f_true = scores[true_class]
        for cid in universe:
            if cid == true_class:
                continue
            total += max(0.0, cfg.margin_delta + scores[cid] - f_true)
    return total


def l2_sq_projections(m: ModelParams) -> float:
    """Squared Frobenius norm of all projection matrices; biases excluded."""
    total = float(np.sum(m.vis_proj * m.vis_proj))
    for mod in sorted(m.lang_proj):
        w = m.lang_proj[mod]
        total += float(np.sum(w * w))
    return total


class _BatchState:
    """Embeddings and pair scores shared by loss, gradient and kink margins."""

    def __init__(self, batch, d: Dataset, m: ModelParams, cfg: LossConfig):
        self.batch = list(batch)
        self.d = d
        self.m = m
        self.cfg = cfg
        self.batch_classes = sorted({c for _, c in self.batch})
        if cfg.full_negatives:
            self.universe = sorted(set(self.batch_classes) | set(d.split.train_classes))
        else:
            self.universe = self.batch_classes
        self.all_classes = sorted(set(self.batch_classes) | set(self.universe))

        # Visual parts of the whole batch stacked into one matrix, with
        # [start, end) row ranges per image.
        self.starts: list[int] = []
        self.counts: list[int] = []
        feats = []
        pos = 0
        for x, _ in self.batch:
            self.starts.append(pos)
            self.counts.append(x.n_parts)
            feats.append(x.parts)
            pos += x.n_parts
        self.n_rows = pos
        if self.batch:
            self.features = np.vstack(feats)
            self.V = self.features @ m.vis_proj.T + m.vis_bias
        else:
            self.features = np.zeros((0, m.visual_dim))
            self.V = np.zeros((0, m.embed_dim))

        self.Z: dict[str, np.ndarray] = {}
        self.S: dict[str, np.ndarray] = {}
        self.dots: dict[str, np.ndarray] = {}
        for cid in self.all_classes:
            lps = d.classes.get(cid)
            if lps is None:
                raise DataError(f"class '{cid}' has no language parts")
            z = np.stack([language_preactivation(p, m) for p in lps.parts])
            self.Z[cid] = z
            self.S[cid] = np.maximum(z, 0.0)
            self.dots[cid] = self.V @ self.S[cid].T

        # Per (image, class) alignment labels; +1/-1, constants.
        self.labels: dict[str, np.ndarray] = {}
        for cid in self.batch_classes:
            dc = self.dots[cid]
            lab = -np.ones_like(dc)
            for n, (_, true_class) in enumerate(self.batch):
                if true_class != cid:
                    continue
                rows = slice(self.starts[n], self.starts[n] + self.counts[n])
                lab[rows] = _sign_labels(dc[rows])
            self.labels[cid] = lab

        # Compatibility of every image with every universe class.
        n_img = len(self.batch)
        self.counts_arr = np.asarray(self.counts, dtype=np.int64)
        self.F = np.zeros((n_img, len(self.universe)))
        if n_img:
            starts = np.asarray(self.starts, dtype=np.intp)
            for ci, cid in enumerate(self.universe):
                row_pos = np.maximum(self.dots[cid], 0.0).sum(axis=1)
                q = self.S[cid].shape[0]
                self.F[:, ci] = np.add.reduceat(row_pos, starts) / (self.counts_arr * q)

    def alignment_total(self) -> float:
        total = 0.0
        for cid in self.batch_classes:
            hinge = 1.0 - self.labels[cid] * self.dots[cid]
            total += float(np.maximum(hinge, 0.0).sum())
        return total

    def ranking_parts(self):
        """(penalty, coefficient matrix dR/dF) over (image, universe class)."""
        n_img = len(self.batch)
        coef = np.zeros_like(self.F)
        penalty = 0.0
        col = {cid: i for i, cid in enumerate(self.universe)}
        for n, (_, true_class) in enumerate(self.batch):
            ti = col[true_class]
            viol = self.cfg.margin_delta + self.F[n] - self.F[n, ti]
            active = viol > 0.0
            active[ti] = False
            n_active = int(active.sum())
            if n_active:
                penalty += float(viol[active].sum())
                coef[n, active] += 1.0
                coef[n, ti] -= n_active
        return penalty, coef

    def total(self) -> float:
        rank_pen, _ = self.ranking_parts()
        return (
            self.alignment_total()
            + self.cfg.rank_beta * rank_pen
            + self.cfg.reg_alpha * l2_sq_projections(self.m)
        )

    def gradients(self) -> "ParamGradients":
        m, cfg = self.m, self.cfg
        grads = ParamGradients.zeros_like(m)
        dV = np.zeros_like(self.V)
        dS: dict[str, np.ndarray] = {cid: np.zeros_like(self.S[cid]) for cid in self.all_classes}

        for cid in self.batch_classes:
            lab = self.labels[cid]
            active = (1.0 - lab * self.dots[cid]) > 0.0
            g = -lab * active
            dV += g @ self.S[cid]
            dS[cid] += g.T @ self.V

        _, coef = self.ranking_parts()
        if cfg.rank_beta > 0.0:
            for ci, cid in enumerate(self.universe):
                if not np.any(coef[:, ci]):
                    continue
                q = self.S[cid].shape[0]
                row_w = np.repeat(coef[:, ci] / (self.counts_arr * q), self.counts_arr)
                weighted = (self.dots[cid] > 0.0) * row_w[:, None]
                dV += cfg.rank_beta * (weighted @ self.S[cid])
                dS[cid] += cfg.rank_beta * (weighted.T @ self.V)

        if self.batch:
            grads.vis_proj += dV.T @ self.features
            grads.vis_bias += dV.sum(axis=0)

        for cid in self.all_classes:
            dz = dS[cid] * (self.Z[cid] > 0.0)
            if not np.any(dz):
                continue
            grads.lang_bias += dz.sum(axis=0)
            parts = self.d.classes[cid].parts
            for j, part in enumerate(parts):
                for mod in sorted(part.tokens):
                    grads.lang_proj[mod] += np.outer(dz[j], part.tokens[mod])

        grads.vis_proj += 2.0 * cfg.reg_alpha * m.vis_proj
        for mod in sorted(m.lang_proj):
            grads.lang_proj[mod] += 2.0 * cfg.reg_alpha * m.lang_proj[mod]
        return grads

    def kink_margins(self) -> dict[str, float]:
        """Distance of every hinge/ReLU/sign argument from its kink.

        ``relu`` covers language pre-activations; ``post`` covers pair
        dots (sign and truncation), alignment hinges, ranking hinges and
        the runner-up gap wherever the forcing rule picked a positive.
        Used by the finite-difference checker to flag unreliable
        coordinates.

        Dots against a fully ReLU-dead language part are pinned at an
        exact zero: they cannot move under a small perturbation as long
        as the ReLU margin holds, so they pose no sign/truncation risk
        and are excluded from the dot margin.
        """
        relu = np.inf
        for cid in self.all_classes:
            z = self.Z[cid]
            if z.size:
                relu = min(relu, float(np.abs(z).min()))
        post = np.inf
        movable_cols = {
            cid: self.S[cid].any(axis=1) for cid in self.all_classes
        }
        for cid in self.all_classes:
            dc = self.dots[cid][:, movable_cols[cid]]
            if dc.size:
                post = min(post, float(np.abs(dc).min()))
        for cid in self.batch_classes:
            hinge = 1.0 - self.labels[cid] * self.dots[cid]
            if hinge.size:
                post = min(post, float(np.abs(hinge).min()))
            movable = movable_cols[cid]
            for n, (_, true_class) in enumerate(self.batch):
                if true_class != cid:
                    continue
                rows = slice(self.starts[n], self.starts[n] + self.counts[n])
                block = self.dots[cid][rows]
                if (block > 0.0).any() or block.size <= 1:
                    continue
                # The forced argmax flips when another entry overtakes it;
                # entries in pinned columns cannot move.
                top = int(np.argmax(block))
                top_value = block.flat[top]
                top_movable = movable[top % block.shape[1]]
                rest = np.delete(block.ravel(), top)
                if top_movable:
                    challengers = rest
                else:
                    rest_movable = np.delete(
                        np.broadcast_to(movable, block.shape).ravel(), top
                    )
                    challengers = rest[rest_movable]
                if challengers.size:
                    post = min(post, float(top_value - challengers.max()))
        col = {cid: i for i, cid in enumerate(self.universe)}
        for n, (_, true_class) in enumerate(self.batch):
            ti = col[true_class]
            viol = self.cfg.margin_delta + self.F[n] - self.F[n, ti]
            for ci in range(len(self.universe)):
                if ci != ti:
                    post = min(post, float(abs(viol[ci])))
        return {"relu": relu, "post": post}


def total_objective(batch, d: Dataset, m: ModelParams, cfg: LossConfig) -> float:
    """Alignment + rank_beta * ranking + reg_alpha * ||projections||^2."""
    return _BatchState(batch, d, m, cfg).total()


def gradient(batch, d: Dataset, m: ModelParams, cfg: LossConfig) -> ParamGradients:
    """Exact subgradient of ``total_objective``.

    Alignment labels and every hinge/ReLU active set are held fixed at
    their current values; at a kink the inactive side (derivative 0) is
    taken.
    """
    return _BatchState(batch, d, m, cfg).gradients()


def objective_and_gradient(batch, d, m, cfg) -> tuple[float, ParamGradients]:
    """One-pass loss and gradient; what the trainer calls per step."""
    state = _BatchState(batch, d, m, cfg)
    return state.total(), state.gradients()


def kink_margins(batch, d, m, cfg) -> dict[str, float]:
    return _BatchState(batch, d, m, cfg).kink_margins()
