"""Relation proposals: asymmetric pair scoring, top-K selection, pair NMS.

The scorer projects every object's class distribution twice (a subject-role
projection and an object-role projection) and takes all pairwise inner
products in one matrix product, so the n x n score matrix never needs n^2
MLP invocations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_model import Box, RelationEdge, box_iou
from .numerics import (
    Mlp2,
    Mlp2Vars,
    Tape,
    Var,
    as_matrix,
    lift_mlp2,
    matmul,
    mlp2_forward,
)


@dataclass(frozen=True)
class RepnParams:
    """Subject-role and object-role projections with identical architecture."""

    phi: Mlp2
    psi: Mlp2

    def __post_init__(self):
        shapes = lambda m: (m.w1.shape, m.w2.shape)  # noqa: E731
        if shapes(self.phi) != shapes(self.psi):
            raise ValueError("RepnParams: phi and psi must share their architecture")

    @staticmethod
    def random(rng: np.random.Generator, n_classes: int, d_hidden: int, d_proj: int, scale: float = 0.1):
        return RepnParams(
            phi=Mlp2.random(rng, n_classes, d_hidden, d_proj, scale),
            psi=Mlp2.random(rng, n_classes, d_hidden, d_proj, scale),
        )


@dataclass(frozen=True)
class RepnConfig:
    top_k: int = 64
    nms_threshold: float = 0.7
    max_candidates: int = 64

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("RepnConfig: top_k must be >= 1")
        if not (0.0 < self.nms_threshold < 1.0):
            raise ValueError("RepnConfig: nms_threshold must lie in (0, 1)")
        if self.max_candidates < 1:
            raise ValueError("RepnConfig: max_candidates must be >= 1")


@dataclass(frozen=True)
class RepnVars:
    phi: Mlp2Vars
    psi: Mlp2Vars


def lift_repn(tape: Tape, params: RepnParams, trainable: bool = True) -> RepnVars:
    return RepnVars(
        phi=lift_mlp2(tape, params.phi, trainable, "repn.phi"),
        psi=lift_mlp2(tape, params.psi, trainable, "repn.psi"),
    )


def relatedness_on_tape(tape: Tape, params: RepnVars, class_dists: Var) -> Var:
    """Score matrix S with S[i][j] = sigmoid(<phi(p_i), psi(p_j)>), diagonal 0."""
    n = class_dists.shape[0]
    proj_subject = mlp2_forward(tape, class_dists, params.phi)
    proj_object = mlp2_forward(tape, class_dists, params.psi)
    raw = tape.matmul(proj_subject, tape.transpose(proj_object))
    squashed = tape.sigmoid(raw)
    off_diagonal = tape.constant(np.ones((n, n)) - np.eye(n))
    return tape.mul(squashed, off_diagonal)


def relatedness_matrix(params: RepnParams, class_dists) -> np.ndarray:
    """Pure ndarray wrapper over relatedness_on_tape."""
    class_dists = as_matrix(class_dists, "class_dists")
    if class_dists.shape[1] != params.phi.d_in:
        raise ValueError(
            f"relatedness_matrix: {class_dists.shape[1]} classes vs params expecting {params.phi.d_in}"
        )
    tape = Tape()
    lifted = lift_repn(tape, params, trainable=False)
    return relatedness_on_tape(tape, lifted, tape.constant(class_dists)).value


def _intersection(a: Box, b: Box) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return ix * iy if ix > 0 and iy > 0 else 0.0


def pair_iou(a: tuple, b: tuple) -> float:
    """Overlap of two ordered (subject box, object box) pairs.

    Subject compares to subject and object to object: the summed
    intersections over the summed unions.
    """
    (sa, oa), (sb, ob) = a, b
    inter = _intersection(sa, sb) + _intersection(oa, ob)
    union = (sa.area + sb.area - _intersection(sa, sb)) + (oa.area + ob.area - _intersection(oa, ob))
    return inter / union


def select_pairs(scores: np.ndarray, boxes, config: RepnConfig) -> list:
    """Top-K directed pairs by descending score, then greedy pair NMS.

    Ties break lexicographically on (subject, object). A pair is suppressed
    when its pair_iou with an already-kept higher-scored pair exceeds the
    threshold; at most max_candidates survive.
    """
    n = scores.shape[0]
    ranked = sorted(
        ((i, j) for i in range(n) for j in range(n) if i != j),
        key=lambda p: (-scores[p[0], p[1]], p[0], p[1]),
    )
    kept = []
    for i, j in ranked[: config.top_k]:
        candidate = (boxes[i], boxes[j])
        if any(pair_iou(candidate, (boxes[a], boxes[b])) > config.nms_threshold for a, b in kept):
            continue
        kept.append((i, j))
        if len(kept) == config.max_candidates:
            break
    return kept


def propose_relations(params: RepnParams, config: RepnConfig, proposals) -> list:
    """Score all directed pairs and emit the surviving unlabeled candidates."""
    if len(proposals) < 2:
        raise ValueError("propose_relations: at least 2 proposals required")
    class_dists = np.stack([p.class_dist for p in proposals])
    scores = relatedness_matrix(params, class_dists)
    boxes = [p.box for p in proposals]
    return [
        RelationEdge(subject_idx=i, object_idx=j, relatedness=float(scores[i, j]))
        for i, j in select_pairs(scores, boxes, config)
    ]


def union_box(a: Box, b: Box) -> Box:
    """Minimal axis-aligned box covering both."""
    x = min(a.x, b.x)
    y = min(a.y, b.y)
    return Box(x=x, y=y, w=max(a.x + a.w, b.x + b.w) - x, h=max(a.y + a.h, b.y + b.h) - y)


def union_feature_halves(fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Elementwise max of the endpoint features concatenated with their mean."""
    fa = np.asarray(fa, dtype=np.float64).reshape(-1)
    fb = np.asarray(fb, dtype=np.float64).reshape(-1)
    if fa.size != fb.size:
        raise ValueError("union_feature: endpoint feature lengths differ")
    return np.concatenate([np.maximum(fa, fb), (fa + fb) / 2.0])


def union_feature(fa, fb, projection) -> np.ndarray:
    """Surrogate relation feature: max-and-mean halves through a linear map."""
    halves = union_feature_halves(fa, fb)
    projection = as_matrix(projection, "projection")
    if projection.shape[0] != halves.size:
        raise ValueError("union_feature: projection rows must equal 2 * feature length")
    return matmul(halves[None, :], projection)[0]


def union_halves_matrix(features: np.ndarray, pairs) -> np.ndarray:
    """Stacked pre-projection halves for a list of (subject, object) pairs."""
    features = as_matrix(features, "features")
    rows = [union_feature_halves(features[i], features[j]) for i, j in pairs]
    if not rows:
        return np.zeros((0, 2 * features.shape[1]))
    return np.stack(rows)


def repn_loss_on_tape(tape: Tape, relatedness: Var, pairs, labels) -> Var:
    """Mean binary cross-entropy of the scores at the given directed pairs."""
    n = relatedness.shape[0]
    if relatedness.shape != (n, n):
        raise ValueError("repn_loss: relatedness must be square")
    if len(pairs) == 0:
        raise ValueError("repn_loss: no pairs sampled")
    flat_idx = [i * n + j for i, j in pairs]
    flat = tape.reshape(relatedness, n * n, 1)
    picked = tape.select_rows(flat, flat_idx)
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    return tape.bce_mean(picked, y)


def positive_pairs(boxes, gt, iou_threshold: float = 0.5) -> set:
    """Ordered proposal pairs whose boxes match a ground-truth triplet's pair."""
    gt_pairs = {(s, o) for s, _, o in gt.triplets}
    out = set()
    n = len(boxes)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for s, o in gt_pairs:
                if pair_iou((boxes[i], boxes[j]), (gt.objects[s].box, gt.objects[o].box)) >= iou_threshold:
                    out.add((i, j))
                    break
    return out


def sample_training_pairs(boxes, gt, rng: np.random.Generator, n_samples: int = 128):
    """Positive pairs plus uniformly drawn negatives, up to n_samples total."""
    n = len(boxes)
    pos = sorted(positive_pairs(boxes, gt))
    neg_pool = [(i, j) for i in range(n) for j in range(n) if i != j and (i, j) not in set(pos)]
    n_neg = min(len(neg_pool), max(0, n_samples - len(pos)))
    if n_neg:
        chosen = rng.choice(len(neg_pool), size=n_neg, replace=False)
        neg = [neg_pool[int(c)] for c in chosen]
    else:
        neg = []
    pairs = pos + neg
    labels = [1.0] * len(pos) + [0.0] * len(neg)
    return pairs, labels
