"""Label corruption studies over ground truth graphs.

Starting from a perfect one-hot prediction of a ground truth graph, corrupt
a seeded fraction of object labels (isolated objects, connected objects, or
all of them) and measure how the triplet recall and the count-based recall
respond. Corruption sets are nested across ratios for a fixed seed: a higher
ratio corrupts a superset of the objects a lower ratio does.
"""

from dataclasses import dataclass

import numpy as np

from .graph_model import GroundTruthGraph, ObjectProposal, RelationEdge, SceneGraph, Vocabulary
from .metrics import MatchConfig, sggen, sggen_plus

TARGETS = ("without_relationships", "with_relationships", "both")


def _one_hot(k: int, i: int) -> np.ndarray:
    v = np.zeros(k)
    v[i] = 1.0
    return v


@dataclass(frozen=True)
class PerturbSpec:
    target: str
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"PerturbSpec.target: unknown target {self.target!r}")
        r = float(self.ratio)
        if not (0.0 < r <= 1.0):
            raise ValueError("PerturbSpec.ratio: must lie in (0, 1]")
        object.__setattr__(self, "ratio", r)
        s = int(self.seed)
        if s < 0:
            raise ValueError("PerturbSpec.seed: must be nonnegative")
        object.__setattr__(self, "seed", s)


def target_indices(gt: GroundTruthGraph, target: str) -> tuple:
    connected = set(gt.connected_object_indices())
    if target == "without_relationships":
        return tuple(i for i in range(gt.n_objects) if i not in connected)
    if target == "with_relationships":
        return tuple(sorted(connected))
    if target == "both":
        return tuple(range(gt.n_objects))
    raise ValueError(f"target_indices: unknown target {target!r}")


def graph_from_ground_truth(gt: GroundTruthGraph, vocab: Vocabulary, label_override=None) -> SceneGraph:
    """Perfect one-hot prediction of a ground truth graph.

    Duplicate directed pairs in the triplet set cannot be encoded (a
    prediction edge carries one predicate distribution per pair) and are
    rejected by the graph constructor.
    """
    label_override = label_override or {}
    objects = tuple(
        ObjectProposal(
            box=o.box,
            feature=np.zeros(1),
            class_dist=_one_hot(vocab.n_object_classes, label_override.get(i, o.label)),
            attributes=o.attributes,
        )
        for i, o in enumerate(gt.objects)
    )
    edges = tuple(
        RelationEdge(subject_idx=s, object_idx=o, predicate_dist=_one_hot(vocab.n_predicate_classes, p))
        for s, p, o in gt.triplets
    )
    return SceneGraph(objects=objects, edges=edges)


@dataclass(frozen=True)
class PerturbResult:
    graph: SceneGraph
    corrupted: dict
    applicable: bool


def perturb(gt: GroundTruthGraph, vocab: Vocabulary, spec: PerturbSpec) -> PerturbResult:
    """Corrupt floor(ratio * |target set|) object labels of a one-hot prediction.

    The corrupted objects are a prefix of a seeded permutation of the target
    set, so ratios nest under a shared seed. Each corrupted object receives a
    uniformly random label different from its true one. An empty target set
    leaves the graph untouched and is flagged not applicable.
    """
    if vocab.n_object_classes < 2:
        raise ValueError("perturb: need at least two object classes to relabel")
    targets = target_indices(gt, spec.target)
    rng = np.random.default_rng(spec.seed)
    override = {}
    if targets:
        order = rng.permutation(len(targets))
        draws = rng.integers(0, vocab.n_object_classes - 1, size=len(targets))
        count = int(np.floor(spec.ratio * len(targets)))
        for pos in range(count):
            i = targets[order[pos]]
            true = gt.objects[i].label
            wrong = int(draws[pos])
            if wrong >= true:
                wrong += 1
            override[i] = wrong
    return PerturbResult(
        graph=graph_from_ground_truth(gt, vocab, label_override=override),
        corrupted=override,
        applicable=bool(targets),
    )


@dataclass(frozen=True)
class PerturbationStudy:
    """Mean recalls (x100) per perturbation cell, unperturbed column first."""

    columns: tuple  # (target, ratio) pairs; ("none", 0.0) leads
    sggen: tuple
    sggen_plus: tuple
    seed: int

    def to_doc(self) -> dict:
        return {
            "columns": [{"target": t, "ratio": float(r)} for t, r in self.columns],
            "sggen": [float(v) for v in self.sggen],
            "sggen_plus": [float(v) for v in self.sggen_plus],
            "seed": int(self.seed),
        }

    def format_table(self) -> str:
        header_target = ["metric"]
        header_ratio = [""]
        for t, r in self.columns:
            header_target.append(t if t == "none" or (t, r) == next((c for c in self.columns if c[0] == t)) else "")
            header_ratio.append("-" if t == "none" else f"{r:g}")
        rows = [
            header_target,
            header_ratio,
            ["sggen"] + [f"{v:.1f}" for v in self.sggen],
            ["sggen_plus"] + [f"{v:.1f}" for v in self.sggen_plus],
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows)


def perturbation_study(
    corpus,
    vocab: Vocabulary,
    targets=TARGETS,
    ratios=(0.2, 0.5, 1.0),
    seed: int = 0,
    config: MatchConfig = MatchConfig(),
) -> PerturbationStudy:
    """Mean sggen / sggen_plus (x100, largest cutoff) per (target, ratio).

    Each graph is perturbed under its own derived seed (study seed xor graph
    index) so corpora parallelize without coupling the draws.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("perturbation_study: empty corpus")
    for t in targets:
        if t not in TARGETS:
            raise ValueError(f"perturbation_study: unknown target {t!r}")
    max_k = max(config.ks)

    def cell(graphs):
        g_vals = [sggen(p, gt, config)[max_k] for p, gt in graphs]
        p_vals = [sggen_plus(p, gt, config)[0][max_k] for p, gt in graphs]
        return 100.0 * sum(g_vals) / len(graphs), 100.0 * sum(p_vals) / len(graphs)

    columns = [("none", 0.0)]
    base = [(graph_from_ground_truth(gt, vocab), gt) for gt in corpus]
    cells = [cell(base)]
    for target in targets:
        for ratio in ratios:
            columns.append((target, float(ratio)))
            perturbed = [
                (perturb(gt, vocab, PerturbSpec(target, ratio, seed ^ i)).graph, gt)
                for i, gt in enumerate(corpus)
            ]
            cells.append(cell(perturbed))
    return PerturbationStudy(
        columns=tuple(columns),
        sggen=tuple(c[0] for c in cells),
        sggen_plus=tuple(c[1] for c in cells),
        seed=int(seed),
    )
