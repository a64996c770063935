"""Scene-graph data model and its bit-exact JSON interchange format.

Predicted graphs carry per-object class distributions and per-edge predicate
distributions; ground-truth graphs carry hard labels and triplets. Reals are
serialized with up to 17 significant digits, which round-trips float64
exactly, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

_DIST_TOL = 1e-6


class GraphFormatError(ValueError):
    """Schema violation; the message names the offending field path."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Box:
    """Axis-aligned box as (left, top, width, height) in continuous pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"Box.{name}: non-finite")
            object.__setattr__(self, name, v)
        if self.w <= 0 or self.h <= 0:
            raise ValueError("Box: width and height must be positive")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; disjoint boxes score 0."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _check_dist(values: np.ndarray, where: str):
    if values.ndim != 1 or values.size == 0:
        raise GraphFormatError(f"{where}: must be a non-empty vector")
    if not np.isfinite(values).all():
        raise GraphFormatError(f"{where}: non-finite entries")
    if (values < 0).any():
        raise GraphFormatError(f"{where}: entries must be >= 0")
    if abs(float(values.sum()) - 1.0) > _DIST_TOL:
        raise GraphFormatError(f"{where}: does not sum to 1 (got {float(values.sum())!r})")


@dataclass(frozen=True, eq=False)
class ObjectProposal:
    """A detected region: box, pooled feature vector, class distribution."""

    box: Box
    feature: np.ndarray
    class_dist: np.ndarray
    attributes: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "feature", np.ascontiguousarray(self.feature, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "class_dist", np.ascontiguousarray(self.class_dist, dtype=np.float64).reshape(-1))
        if self.feature.size and not np.isfinite(self.feature).all():
            raise ValueError("ObjectProposal.feature: non-finite entries")
        _check_dist(self.class_dist, "ObjectProposal.class_dist")
        if self.attributes is not None:
            object.__setattr__(self, "attributes", tuple(int(a) for a in self.attributes))

    @property
    def label(self) -> int:
        return int(np.argmax(self.class_dist))

    @property
    def confidence(self) -> float:
        return float(self.class_dist.max())

    def __eq__(self, other):
        return (
            isinstance(other, ObjectProposal)
            and self.box == other.box
            and np.array_equal(self.feature, other.feature)
            and np.array_equal(self.class_dist, other.class_dist)
            and self.attributes == other.attributes
        )


@dataclass(frozen=True, eq=False)
class RelationEdge:
    """A directed subject -> object relationship candidate.

    predicate_dist is None for proposal-stage candidates that have not been
    labeled yet; such edges cannot be serialized.
    """

    subject_idx: int
    object_idx: int
    predicate_dist: np.ndarray | None = None
    relatedness: float | None = None
    union_feature: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "subject_idx", int(self.subject_idx))
        object.__setattr__(self, "object_idx", int(self.object_idx))
        if self.subject_idx == self.object_idx:
            raise ValueError("RelationEdge: self-relation (subject == object)")
        if self.predicate_dist is not None:
            object.__setattr__(
                self, "predicate_dist", np.ascontiguousarray(self.predicate_dist, dtype=np.float64).reshape(-1)
            )
            _check_dist(self.predicate_dist, "RelationEdge.predicate_dist")
        if self.relatedness is not None:
            r = float(self.relatedness)
            if not (0.0 <= r <= 1.0):
                raise ValueError("RelationEdge.relatedness: must lie in [0, 1]")
            object.__setattr__(self, "relatedness", r)
        if self.union_feature is not None:
            object.__setattr__(
                self, "union_feature", np.ascontiguousarray(self.union_feature, dtype=np.float64).reshape(-1)
            )

    @property
    def predicate_label(self) -> int:
        if self.predicate_dist is None:
            raise ValueError("RelationEdge: no predicate distribution")
        return int(np.argmax(self.predicate_dist))

    def __eq__(self, other):
        if not isinstance(other, RelationEdge):
            return NotImplemented
        if (self.predicate_dist is None) != (other.predicate_dist is None):
            return False
        dists_equal = self.predicate_dist is None or np.array_equal(self.predicate_dist, other.predicate_dist)
        return (
            self.subject_idx == other.subject_idx
            and self.object_idx == other.object_idx
            and dists_equal
            and self.relatedness == other.relatedness
        )


@dataclass(frozen=True, eq=False)
class SceneGraph:
    """Predicted graph: proposals plus directed labeled relationship edges."""

    objects: tuple
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "edges", tuple(self.edges))
        n = len(self.objects)
        seen = set()
        for k, e in enumerate(self.edges):
            if not (0 <= e.subject_idx < n and 0 <= e.object_idx < n):
                raise ValueError(f"edges[{k}]: object index out of range")
            pair = (e.subject_idx, e.object_idx)
            if pair in seen:
                raise ValueError(f"edges[{k}]: duplicate directed pair {pair}")
            seen.add(pair)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def __eq__(self, other):
        return (
            isinstance(other, SceneGraph)
            and self.objects == other.objects
            and self.edges == other.edges
        )


@dataclass(frozen=True)
class GtObject:
    box: Box
    label: int
    attributes: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "label", int(self.label))
        if self.label < 0:
            raise ValueError("GtObject.label: must be >= 0")
        if self.attributes is not None:
            object.__setattr__(self, "attributes", tuple(int(a) for a in self.attributes))


@dataclass(frozen=True)
class GroundTruthGraph:
    """Annotated graph: labeled boxes plus (subject, predicate, object) triplets."""

    objects: tuple = field(default_factory=tuple)
    triplets: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        trips = tuple((int(s), int(p), int(o)) for s, p, o in self.triplets)
        object.__setattr__(self, "triplets", trips)
        n = len(self.objects)
        seen = set()
        for k, (s, p, o) in enumerate(self.triplets):
            if not (0 <= s < n and 0 <= o < n):
                raise ValueError(f"triplets[{k}]: object index out of range")
            if p < 0:
                raise ValueError(f"triplets[{k}]: negative predicate label")
            if (s, p, o) in seen:
                raise ValueError(f"triplets[{k}]: duplicate triplet {(s, p, o)}")
            seen.add((s, p, o))

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def connected_object_indices(self) -> tuple:
        """Indices of objects participating in at least one triplet."""
        used = set()
        for s, _, o in self.triplets:
            used.add(s)
            used.add(o)
        return tuple(sorted(used))

    def attribute_pairs(self) -> tuple:
        """All (object index, attribute label) pairs present in the annotation."""
        pairs = []
        for i, obj in enumerate(self.objects):
            for a in obj.attributes or ():
                pairs.append((i, a))
        return tuple(pairs)


@dataclass(frozen=True)
class Vocabulary:
    object_classes: tuple
    predicate_classes: tuple

    def __post_init__(self):
        object.__setattr__(self, "object_classes", tuple(str(c) for c in self.object_classes))
        object.__setattr__(self, "predicate_classes", tuple(str(c) for c in self.predicate_classes))
        if not self.object_classes or not self.predicate_classes:
            raise ValueError("Vocabulary: class lists must be non-empty")

    @property
    def n_object_classes(self) -> int:
        return len(self.object_classes)

    @property
    def n_predicate_classes(self) -> int:
        return len(self.predicate_classes)


# ---------------------------------------------------------------------------
# canonical JSON emission (17 significant digits, fixed key order, no spaces)


def _emit(o, out: list):
    if o is None:
        out.append("null")
    elif o is True:
        out.append("true")
    elif o is False:
        out.append("false")
    elif isinstance(o, (int, np.integer)):
        out.append(str(int(o)))
    elif isinstance(o, (float, np.floating)):
        out.append(format(float(o), ".17g"))
    elif isinstance(o, str):
        out.append(json.dumps(o, ensure_ascii=True))
    elif isinstance(o, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(o):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    elif isinstance(o, dict):
        out.append("{")
        for i, (k, v) in enumerate(o.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k), ensure_ascii=True))
            out.append(":")
            _emit(v, out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps_canonical(doc) -> str:
    """Serialize to JSON with deterministic bytes and exact float round-trip."""
    out: list = []
    _emit(doc, out)
    return "".join(out)


# ---------------------------------------------------------------------------
# document conversion


def scene_graph_to_doc(g: SceneGraph) -> dict:
    objects = []
    for obj in g.objects:
        entry = {
            "box": obj.box.as_list(),
            "class_dist": [float(v) for v in obj.class_dist],
            "feature": [float(v) for v in obj.feature],
        }
        if obj.attributes is not None:
            entry["attributes"] = list(obj.attributes)
        objects.append(entry)
    edges = []
    for k, e in enumerate(g.edges):
        if e.predicate_dist is None:
            raise GraphFormatError(f"edges[{k}].predicate_dist: unlabeled edge cannot be serialized")
        entry = {
            "subject": e.subject_idx,
            "object": e.object_idx,
            "predicate_dist": [float(v) for v in e.predicate_dist],
        }
        if e.relatedness is not None:
            entry["relatedness"] = e.relatedness
        edges.append(entry)
    return {"objects": objects, "edges": edges}


def ground_truth_to_doc(g: GroundTruthGraph) -> dict:
    objects = []
    for obj in g.objects:
        entry = {"box": obj.box.as_list(), "label": obj.label}
        if obj.attributes is not None:
            entry["attributes"] = list(obj.attributes)
        objects.append(entry)
    return {"objects": objects, "triplets": [list(t) for t in g.triplets]}


def _require_dict(doc, where, allowed):
    if not isinstance(doc, dict):
        raise GraphFormatError(f"{where}: expected an object")
    extra = set(doc) - set(allowed)
    if extra:
        raise GraphFormatError(f"{where}: unknown field {sorted(extra)[0]!r}")


def _number(v, where) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise GraphFormatError(f"{where}: expected a number")
    return float(v)


def _integer(v, where) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise GraphFormatError(f"{where}: expected an integer")
    return v


def _vector(v, where) -> np.ndarray:
    if not isinstance(v, list):
        raise GraphFormatError(f"{where}: expected an array")
    return np.array([_number(x, f"{where}[{i}]") for i, x in enumerate(v)], dtype=np.float64)


def _box(v, where) -> Box:
    vec = _vector(v, where)
    if vec.size != 4:
        raise GraphFormatError(f"{where}: expected [x, y, w, h]")
    try:
        return Box(*vec)
    except ValueError as exc:
        raise GraphFormatError(f"{where}: {exc}") from exc


def _attributes(entry, where):
    if "attributes" not in entry:
        return None
    raw = entry["attributes"]
    if not isinstance(raw, list):
        raise GraphFormatError(f"{where}: expected an array")
    return tuple(_integer(a, f"{where}[{i}]") for i, a in enumerate(raw))


def _normalize(raw: np.ndarray, from_logits: bool, where: str) -> np.ndarray:
    if raw.size == 0:
        raise GraphFormatError(f"{where}: must be a non-empty vector")
    if not np.isfinite(raw).all():
        raise GraphFormatError(f"{where}: non-finite entries")
    if not from_logits:
        return raw
    shifted = np.exp(raw - raw.max())
    return shifted / shifted.sum()


def scene_graph_from_doc(doc, from_logits: bool = False) -> SceneGraph:
    _require_dict(doc, "graph", ("objects", "edges"))
    for key in ("objects", "edges"):
        if key not in doc:
            raise GraphFormatError(f"graph: missing field {key!r}")
        if not isinstance(doc[key], list):
            raise GraphFormatError(f"{key}: expected an array")

    objects = []
    dist_len = feat_len = None
    for i, entry in enumerate(doc["objects"]):
        where = f"objects[{i}]"
        _require_dict(entry, where, ("box", "class_dist", "feature", "attributes"))
        for key in ("box", "class_dist", "feature"):
            if key not in entry:
                raise GraphFormatError(f"{where}: missing field {key!r}")
        dist = _normalize(_vector(entry["class_dist"], f"{where}.class_dist"), from_logits, f"{where}.class_dist")
        _check_dist(dist, f"{where}.class_dist")
        feat = _vector(entry["feature"], f"{where}.feature")
        if dist_len is None:
            dist_len, feat_len = dist.size, feat.size
        elif dist.size != dist_len:
            raise GraphFormatError(f"{where}.class_dist: length differs from objects[0]")
        elif feat.size != feat_len:
            raise GraphFormatError(f"{where}.feature: length differs from objects[0]")
        try:
            objects.append(
                ObjectProposal(
                    box=_box(entry["box"], f"{where}.box"),
                    feature=feat,
                    class_dist=dist,
                    attributes=_attributes(entry, f"{where}.attributes"),
                )
            )
        except ValueError as exc:
            raise GraphFormatError(f"{where}: {exc}") from exc

    edges = []
    pred_len = None
    seen = set()
    for k, entry in enumerate(doc["edges"]):
        where = f"edges[{k}]"
        _require_dict(entry, where, ("subject", "object", "predicate_dist", "relatedness"))
        for key in ("subject", "object", "predicate_dist"):
            if key not in entry:
                raise GraphFormatError(f"{where}: missing field {key!r}")
        s = _integer(entry["subject"], f"{where}.subject")
        o = _integer(entry["object"], f"{where}.object")
        if not (0 <= s < len(objects)):
            raise GraphFormatError(f"{where}.subject: index out of range")
        if not (0 <= o < len(objects)):
            raise GraphFormatError(f"{where}.object: index out of range")
        if s == o:
            raise GraphFormatError(f"{where}: self-relation (subject == object)")
        if (s, o) in seen:
            raise GraphFormatError(f"{where}: duplicate directed pair ({s}, {o})")
        seen.add((s, o))
        dist = _normalize(
            _vector(entry["predicate_dist"], f"{where}.predicate_dist"), from_logits, f"{where}.predicate_dist"
        )
        _check_dist(dist, f"{where}.predicate_dist")
        if pred_len is None:
            pred_len = dist.size
        elif dist.size != pred_len:
            raise GraphFormatError(f"{where}.predicate_dist: length differs from edges[0]")
        relatedness = None
        if "relatedness" in entry:
            relatedness = _number(entry["relatedness"], f"{where}.relatedness")
        try:
            edges.append(
                RelationEdge(subject_idx=s, object_idx=o, predicate_dist=dist, relatedness=relatedness)
            )
        except ValueError as exc:
            raise GraphFormatError(f"{where}: {exc}") from exc
    return SceneGraph(objects=tuple(objects), edges=tuple(edges))


def ground_truth_from_doc(doc) -> GroundTruthGraph:
    _require_dict(doc, "graph", ("objects", "triplets"))
    for key in ("objects", "triplets"):
        if key not in doc:
            raise GraphFormatError(f"graph: missing field {key!r}")
        if not isinstance(doc[key], list):
            raise GraphFormatError(f"{key}: expected an array")
    objects = []
    for i, entry in enumerate(doc["objects"]):
        where = f"objects[{i}]"
        _require_dict(entry, where, ("box", "label", "attributes"))
        for key in ("box", "label"):
            if key not in entry:
                raise GraphFormatError(f"{where}: missing field {key!r}")
        label = _integer(entry["label"], f"{where}.label")
        if label < 0:
            raise GraphFormatError(f"{where}.label: must be >= 0")
        objects.append(
            GtObject(box=_box(entry["box"], f"{where}.box"), label=label, attributes=_attributes(entry, f"{where}.attributes"))
        )
    triplets = []
    seen = set()
    for k, entry in enumerate(doc["triplets"]):
        where = f"triplets[{k}]"
        if not isinstance(entry, list) or len(entry) != 3:
            raise GraphFormatError(f"{where}: expected [subject, predicate, object]")
        s = _integer(entry[0], f"{where}[0]")
        p = _integer(entry[1], f"{where}[1]")
        o = _integer(entry[2], f"{where}[2]")
        if not (0 <= s < len(objects)):
            raise GraphFormatError(f"{where}[0]: index out of range")
        if not (0 <= o < len(objects)):
            raise GraphFormatError(f"{where}[2]: index out of range")
        if p < 0:
            raise GraphFormatError(f"{where}[1]: must be >= 0")
        if (s, p, o) in seen:
            raise GraphFormatError(f"{where}: duplicate triplet")
        seen.add((s, p, o))
        triplets.append((s, p, o))
    return GroundTruthGraph(objects=tuple(objects), triplets=tuple(triplets))


def vocabulary_from_doc(doc) -> Vocabulary:
    _require_dict(doc, "vocabulary", ("object_classes", "predicate_classes"))
    for key in ("object_classes", "predicate_classes"):
        if key not in doc:
            raise GraphFormatError(f"vocabulary: missing field {key!r}")
        if not isinstance(doc[key], list) or not all(isinstance(c, str) for c in doc[key]):
            raise GraphFormatError(f"{key}: expected an array of strings")
        if not doc[key]:
            raise GraphFormatError(f"{key}: must be non-empty")
    return Vocabulary(object_classes=doc["object_classes"], predicate_classes=doc["predicate_classes"])


def vocabulary_to_doc(v: Vocabulary) -> dict:
    return {"object_classes": list(v.object_classes), "predicate_classes": list(v.predicate_classes)}


# ---------------------------------------------------------------------------
# file I/O


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{os.path.basename(str(path))}: invalid JSON ({exc})") from exc


def load_scene_graph(path, from_logits: bool = False) -> SceneGraph:
    return scene_graph_from_doc(_read_json(path), from_logits=from_logits)


def load_ground_truth(path) -> GroundTruthGraph:
    return ground_truth_from_doc(_read_json(path))


def load_graph(path, from_logits: bool = False):
    """Load either graph flavor, telling them apart by their fields."""
    doc = _read_json(path)
    if isinstance(doc, dict) and "triplets" in doc:
        return ground_truth_from_doc(doc)
    return scene_graph_from_doc(doc, from_logits=from_logits)


def load_vocabulary(path) -> Vocabulary:
    return vocabulary_from_doc(_read_json(path))


def save_graph(graph, path):
    if isinstance(graph, SceneGraph):
        doc = scene_graph_to_doc(graph)
    elif isinstance(graph, GroundTruthGraph):
        doc = ground_truth_to_doc(graph)
    else:
        raise TypeError("save_graph: expected SceneGraph or GroundTruthGraph")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(doc))
        fh.write("\n")


def save_vocabulary(vocab: Vocabulary, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(vocabulary_to_doc(vocab)))
        fh.write("\n")
