"""Scene graph recall metrics.

Four scores over a (predicted graph, ground truth) pair: triplet recall
(sggen), the augmented count-based recall (sggen_plus), and the two
given-boxes variants (predcls, phrcls). All matching is greedy and
one-to-one; endpoint grounding deliberately ignores class labels so that a
mislabeled but well-localized object still carries its predicates.
"""

from dataclasses import dataclass, field

import numpy as np

from .graph_model import GroundTruthGraph, SceneGraph, box_iou


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    ks: tuple = (50, 100)

    def __post_init__(self):
        t = float(self.iou_threshold)
        if not (0.0 < t <= 1.0):
            raise ValueError("MatchConfig.iou_threshold: must lie in (0, 1]")
        object.__setattr__(self, "iou_threshold", t)
        ks = tuple(int(k) for k in self.ks)
        if not ks or any(k <= 0 for k in ks):
            raise ValueError("MatchConfig.ks: needs at least one positive cutoff")
        object.__setattr__(self, "ks", ks)


@dataclass(frozen=True)
class RankedTriplet:
    subject_idx: int
    object_idx: int
    predicate: int
    score: float


def _score(graph: SceneGraph, edge, predicate_only: bool) -> float:
    if predicate_only:
        return float(edge.predicate_dist.max())
    subj = graph.objects[edge.subject_idx].confidence
    obj = graph.objects[edge.object_idx].confidence
    return subj * float(edge.predicate_dist.max()) * obj


def _ranked(graph: SceneGraph, predicate_only: bool) -> list:
    out = []
    for k, edge in enumerate(graph.edges):
        if edge.predicate_dist is None:
            raise ValueError(f"rank_triplets: edges[{k}] has no predicate distribution")
        out.append(
            RankedTriplet(
                subject_idx=edge.subject_idx,
                object_idx=edge.object_idx,
                predicate=edge.predicate_label,
                score=_score(graph, edge, predicate_only),
            )
        )
    out.sort(key=lambda t: (-t.score, t.subject_idx, t.object_idx, t.predicate))
    return out


def rank_triplets(graph: SceneGraph) -> list:
    """All labeled edges as (subject, object, predicate) triplets, best first.

    Score is the product of the three argmax probabilities; ties break by
    (subject_idx, object_idx, predicate).
    """
    return _ranked(graph, predicate_only=False)


def match_objects(pred_objects, gt_objects, config: MatchConfig, require_label: bool = True) -> dict:
    """Greedy one-to-one assignment, prediction index -> ground truth index.

    Predictions are visited by descending confidence (index breaks ties) and
    each takes the highest-overlap unmatched GT object with IoU strictly
    above the threshold. With require_label the argmax class must also equal
    the GT label; without it the assignment is localization-only.
    """
    order = sorted(range(len(pred_objects)), key=lambda i: (-pred_objects[i].confidence, i))
    taken = set()
    assign = {}
    for i in order:
        pred = pred_objects[i]
        candidates = []
        for g, gt_obj in enumerate(gt_objects):
            if g in taken:
                continue
            if require_label and pred.label != gt_obj.label:
                continue
            iou = box_iou(pred.box, gt_obj.box)
            if iou > config.iou_threshold:
                candidates.append((-iou, g))
        if candidates:
            g = min(candidates)[1]
            taken.add(g)
            assign[i] = g
    return assign


def _count_triplet_matches(pred, gt, ranked, k, loc_assign, require_labels) -> int:
    """GT triplets recalled by the top-k ranked predictions, each at most once."""
    pool = {}
    for t, trip in enumerate(gt.triplets):
        pool.setdefault(tuple(trip), []).append(t)
    used = set()
    count = 0
    for rt in ranked[:k]:
        gs = loc_assign.get(rt.subject_idx)
        go = loc_assign.get(rt.object_idx)
        if gs is None or go is None:
            continue
        if require_labels:
            if pred.objects[rt.subject_idx].label != gt.objects[gs].label:
                continue
            if pred.objects[rt.object_idx].label != gt.objects[go].label:
                continue
        for t in pool.get((gs, rt.predicate, go), ()):
            if t not in used:
                used.add(t)
                count += 1
                break
    return count


def sggen(pred: SceneGraph, gt: GroundTruthGraph, config: MatchConfig) -> dict:
    """Full-triplet recall per cutoff: labels and localization all correct."""
    if not gt.triplets:
        return {k: 1.0 for k in config.ks}
    ranked = _ranked(pred, predicate_only=False)
    loc = match_objects(pred.objects, gt.objects, config, require_label=False)
    return {
        k: _count_triplet_matches(pred, gt, ranked, k, loc, require_labels=True) / len(gt.triplets)
        for k in config.ks
    }


def _attribute_matches(pred, gt, loc_assign) -> int:
    by_gt = {g: i for i, g in loc_assign.items()}
    count = 0
    for g, attr in gt.attribute_pairs():
        i = by_gt.get(g)
        if i is not None and attr in (pred.objects[i].attributes or ()):
            count += 1
    return count


def sggen_plus(pred: SceneGraph, gt: GroundTruthGraph, config: MatchConfig):
    """Count-based recall (c_o + c_p + c_t [+ c_a]) / n per cutoff.

    Returns (recalls, counts) where counts maps each cutoff to its
    {"c_o", "c_p", "c_t", "n"} cell. Object singletons are counted over all
    predictions; only the predicate and triplet entries see the cutoff.
    """
    ranked = _ranked(pred, predicate_only=False)
    label_assign = match_objects(pred.objects, gt.objects, config, require_label=True)
    loc_assign = match_objects(pred.objects, gt.objects, config, require_label=False)
    c_o = len(label_assign)
    c_a = _attribute_matches(pred, gt, loc_assign)
    n_attr = len(gt.attribute_pairs())
    n = gt.n_objects + 2 * len(gt.triplets) + n_attr
    recalls, counts = {}, {}
    for k in config.ks:
        c_p = _count_triplet_matches(pred, gt, ranked, k, loc_assign, require_labels=False)
        c_t = _count_triplet_matches(pred, gt, ranked, k, loc_assign, require_labels=True)
        numerator = c_o + c_p + c_t + c_a
        recalls[k] = numerator / n if n else 1.0
        counts[k] = {"c_o": c_o, "c_p": c_p, "c_t": c_t, "n": n}
    return recalls, counts


def predcls(pred: SceneGraph, gt: GroundTruthGraph, config: MatchConfig) -> dict:
    """Predicate recall with boxes and object labels given.

    The prediction is expected to sit on ground-truth boxes; ranking uses the
    predicate score alone and object labels are not re-checked.
    """
    if not gt.triplets:
        return {k: 1.0 for k in config.ks}
    ranked = _ranked(pred, predicate_only=True)
    loc = match_objects(pred.objects, gt.objects, config, require_label=False)
    return {
        k: _count_triplet_matches(pred, gt, ranked, k, loc, require_labels=False) / len(gt.triplets)
        for k in config.ks
    }


def phrcls(pred: SceneGraph, gt: GroundTruthGraph, config: MatchConfig) -> dict:
    """Label-plus-predicate recall with boxes given; ranked by score product."""
    if not gt.triplets:
        return {k: 1.0 for k in config.ks}
    ranked = _ranked(pred, predicate_only=False)
    loc = match_objects(pred.objects, gt.objects, config, require_label=False)
    return {
        k: _count_triplet_matches(pred, gt, ranked, k, loc, require_labels=True) / len(gt.triplets)
        for k in config.ks
    }


@dataclass(frozen=True)
class MetricReport:
    sggen: dict
    sggen_plus: dict
    predcls: dict
    phrcls: dict
    counts: dict = field(default_factory=dict)
    triplet_applicable: bool = True
    plus_applicable: bool = True

    def __post_init__(self):
        for name in ("sggen", "sggen_plus", "predcls", "phrcls"):
            for k, v in getattr(self, name).items():
                if not (0.0 <= v <= 1.0):
                    raise ValueError(f"MetricReport.{name}[{k}]: recall outside [0, 1]")


def evaluate_graph(pred: SceneGraph, gt: GroundTruthGraph, config: MatchConfig = MatchConfig()) -> MetricReport:
    plus, counts = sggen_plus(pred, gt, config)
    return MetricReport(
        sggen=sggen(pred, gt, config),
        sggen_plus=plus,
        predcls=predcls(pred, gt, config),
        phrcls=phrcls(pred, gt, config),
        counts=counts[max(config.ks)],
        triplet_applicable=bool(gt.triplets),
        plus_applicable=(gt.n_objects + len(gt.triplets) + len(gt.attribute_pairs())) > 0,
    )


def evaluate_corpus(pairs, config: MatchConfig = MatchConfig()) -> MetricReport:
    """Mean per-graph recalls over the applicable graphs; counts summed.

    Graphs without triplets are skipped when averaging the triplet metrics,
    graphs with empty ground truth are skipped for sggen_plus. Counts are
    totals at the largest cutoff.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_corpus: empty corpus")
    reports = [evaluate_graph(p, g, config) for p, g in pairs]

    def mean(name, flag):
        per_k = {}
        for k in config.ks:
            vals = [getattr(r, name)[k] for r in reports if getattr(r, flag)]
            per_k[k] = sum(vals) / len(vals) if vals else 1.0
        return per_k

    totals = {key: sum(r.counts.get(key, 0) for r in reports) for key in ("c_o", "c_p", "c_t", "n")}
    return MetricReport(
        sggen=mean("sggen", "triplet_applicable"),
        sggen_plus=mean("sggen_plus", "plus_applicable"),
        predcls=mean("predcls", "triplet_applicable"),
        phrcls=mean("phrcls", "triplet_applicable"),
        counts=totals,
        triplet_applicable=any(r.triplet_applicable for r in reports),
        plus_applicable=any(r.plus_applicable for r in reports),
    )


def report_to_doc(report: MetricReport) -> dict:
    doc = {}
    for name in ("sggen", "sggen_plus", "predcls", "phrcls"):
        doc[name] = {str(k): float(v) for k, v in sorted(getattr(report, name).items())}
    doc["counts"] = {key: int(report.counts.get(key, 0)) for key in ("c_o", "c_p", "c_t", "n")}
    return doc


def format_report(report: MetricReport) -> str:
    """Aligned plain-text table, one metric per row, one cutoff per column."""
    ks = sorted(report.sggen)
    rows = [["metric"] + [f"R@{k}" for k in ks]]
    for name in ("sggen", "sggen_plus", "predcls", "phrcls"):
        vals = getattr(report, name)
        rows.append([name] + [f"{100.0 * vals[k]:.1f}" for k in ks])
    rows.append(["counts"] + [""] * len(ks))
    c = report.counts
    rows.append([f"  c_o={c.get('c_o', 0)} c_p={c.get('c_p', 0)} c_t={c.get('c_t', 0)} n={c.get('n', 0)}"])
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(lines)
