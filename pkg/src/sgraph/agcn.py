"""Attentional graph convolution over the heterogeneous object/relation graph.

Object nodes exchange messages with every other object (skip edges) and with
the relation nodes they participate in; relation nodes hear from their two
endpoints. Aggregation weights come from a learned attention head, normalized
separately per edge-type group, with each object's self weight pinned to 1
after the softmax. A parallel "semantic" pass over pre-softmax logits reuses
the attention computed from the visual features, layer by layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tape, Var, as_matrix, matmul

GROUPS = ("skip", "sr", "or", "rs", "ro")


@dataclass(frozen=True)
class HeteroGraph:
    """Structure only: object count plus each relation's (subject, object)."""

    n_objects: int
    subjects: np.ndarray
    objects: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n_objects", int(self.n_objects))
        object.__setattr__(self, "subjects", np.asarray(self.subjects, dtype=np.intp).reshape(-1))
        object.__setattr__(self, "objects", np.asarray(self.objects, dtype=np.intp).reshape(-1))
        if self.n_objects < 1:
            raise ValueError("HeteroGraph: at least one object required")
        if self.subjects.size != self.objects.size:
            raise ValueError("HeteroGraph: endpoint arrays differ in length")
        for arr in (self.subjects, self.objects):
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_objects):
                raise ValueError("HeteroGraph: endpoint index out of range")
        if (self.subjects == self.objects).any():
            raise ValueError("HeteroGraph: relation with identical endpoints")

    @property
    def n_relations(self) -> int:
        return int(self.subjects.size)

    @staticmethod
    def from_pairs(n_objects: int, pairs) -> "HeteroGraph":
        pairs = list(pairs)
        return HeteroGraph(
            n_objects=n_objects,
            subjects=np.array([p[0] for p in pairs], dtype=np.intp),
            objects=np.array([p[1] for p in pairs], dtype=np.intp),
        )


@dataclass(frozen=True)
class AgcnParams:
    """Typed transforms for one level, plus an optional attention head.

    Message conventions (features are rows, transforms right-multiply):
      w_skip: object -> object, (d_obj, d_obj)
      w_sr:   relation -> its subject object, (d_rel, d_obj)
      w_or:   relation -> its object object, (d_rel, d_obj)
      w_rs:   subject object -> relation, (d_obj, d_rel)
      w_ro:   object object -> relation, (d_obj, d_rel)
    The head (w_a, w_h) scores concatenated node-feature pairs; levels that
    reuse another level's attention have no head.
    """

    w_skip: np.ndarray
    w_sr: np.ndarray
    w_or: np.ndarray
    w_rs: np.ndarray
    w_ro: np.ndarray
    w_a: np.ndarray | None = None
    w_h: np.ndarray | None = None

    def __post_init__(self):
        for name in ("w_skip", "w_sr", "w_or", "w_rs", "w_ro"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        d_obj = self.w_skip.shape[0]
        d_rel = self.w_sr.shape[0]
        if self.w_skip.shape != (d_obj, d_obj):
            raise ValueError("AgcnParams: w_skip must be square")
        if self.w_sr.shape != (d_rel, d_obj) or self.w_or.shape != (d_rel, d_obj):
            raise ValueError("AgcnParams: relation-to-object transform shape mismatch")
        if self.w_rs.shape != (d_obj, d_rel) or self.w_ro.shape != (d_obj, d_rel):
            raise ValueError("AgcnParams: object-to-relation transform shape mismatch")
        if (self.w_a is None) != (self.w_h is None):
            raise ValueError("AgcnParams: attention head needs both w_a and w_h")
        if self.w_a is not None:
            object.__setattr__(self, "w_a", as_matrix(self.w_a, "w_a"))
            object.__setattr__(self, "w_h", as_matrix(self.w_h, "w_h"))
            if d_obj != d_rel:
                raise ValueError("AgcnParams: a shared attention head needs d_obj == d_rel")
            if self.w_a.shape[0] != 2 * d_obj:
                raise ValueError("AgcnParams: w_a must accept concatenated node pairs")
            if self.w_h.shape != (self.w_a.shape[1], 1):
                raise ValueError("AgcnParams: w_h must be a column over the attention width")

    @property
    def d_obj(self) -> int:
        return self.w_skip.shape[0]

    @property
    def d_rel(self) -> int:
        return self.w_sr.shape[0]

    @property
    def has_attention(self) -> bool:
        return self.w_a is not None

    @staticmethod
    def random(
        rng: np.random.Generator,
        d_obj: int,
        d_rel: int,
        d_att: int | None = None,
        scale: float = 0.1,
    ) -> "AgcnParams":
        head = {}
        if d_att is not None:
            if d_obj != d_rel:
                raise ValueError("AgcnParams.random: a shared head needs d_obj == d_rel")
            head = {
                "w_a": scale * rng.standard_normal((2 * d_obj, d_att)),
                "w_h": scale * rng.standard_normal((d_att, 1)),
            }
        return AgcnParams(
            w_skip=scale * rng.standard_normal((d_obj, d_obj)),
            w_sr=scale * rng.standard_normal((d_rel, d_obj)),
            w_or=scale * rng.standard_normal((d_rel, d_obj)),
            w_rs=scale * rng.standard_normal((d_obj, d_rel)),
            w_ro=scale * rng.standard_normal((d_obj, d_rel)),
            **head,
        )


@dataclass(frozen=True)
class AgcnVars:
    w_skip: Var
    w_sr: Var
    w_or: Var
    w_rs: Var
    w_ro: Var
    w_a: Var | None = None
    w_h: Var | None = None


def lift_agcn(tape: Tape, params: AgcnParams, trainable: bool = True, name: str = "agcn") -> AgcnVars:
    make = tape.param if trainable else tape.constant
    head = {}
    if params.has_attention:
        head = {"w_a": make(params.w_a, f"{name}.w_a"), "w_h": make(params.w_h, f"{name}.w_h")}
    return AgcnVars(
        w_skip=make(params.w_skip, f"{name}.w_skip"),
        w_sr=make(params.w_sr, f"{name}.w_sr"),
        w_or=make(params.w_or, f"{name}.w_or"),
        w_rs=make(params.w_rs, f"{name}.w_rs"),
        w_ro=make(params.w_ro, f"{name}.w_ro"),
        **head,
    )


# ---------------------------------------------------------------------------
# group structure


def group_structure(graph: HeteroGraph, group: str):
    """(target indices, source indices, n_targets, n_sources) for one edge group."""
    n, m = graph.n_objects, graph.n_relations
    if group == "skip":
        tgt = np.array([i for i in range(n) for j in range(n) if i != j], dtype=np.intp)
        src = np.array([j for i in range(n) for j in range(n) if i != j], dtype=np.intp)
        return tgt, src, n, n
    if group == "sr":
        return graph.subjects, np.arange(m, dtype=np.intp), n, m
    if group == "or":
        return graph.objects, np.arange(m, dtype=np.intp), n, m
    if group == "rs":
        return np.arange(m, dtype=np.intp), graph.subjects, m, n
    if group == "ro":
        return np.arange(m, dtype=np.intp), graph.objects, m, n
    raise ValueError(f"unknown edge group {group!r}")


def group_mask(graph: HeteroGraph, group: str) -> np.ndarray:
    tgt, src, n_tgt, n_src = group_structure(graph, group)
    mask = np.zeros((n_tgt, n_src), dtype=bool)
    mask[tgt, src] = True
    return mask


def uniform_attention(graph: HeteroGraph, group: str) -> np.ndarray:
    """Attention with equal weight per neighbor; skip self weights pinned to 1."""
    mask = group_mask(graph, group)
    counts = mask.sum(axis=1, keepdims=True)
    out = np.where(mask, 1.0 / np.maximum(counts, 1), 0.0)
    if group == "skip":
        out = out + np.eye(graph.n_objects)
    return out


# ---------------------------------------------------------------------------
# attention


def attention_on_tape(
    tape: Tape,
    params: AgcnVars,
    z_objects: Var,
    z_relations: Var,
    graph: HeteroGraph,
    group: str,
) -> Var:
    """Dense per-group attention; rows of targets without neighbors stay zero.

    Scores are a 2-layer MLP over [z_target, z_source]; the softmax runs per
    target within the group; for the skip group the self weight is then pinned
    to 1 on top.
    """
    if params.w_a is None:
        raise ValueError("attention_on_tape: this level has no attention head")
    tgt, src, n_tgt, n_src = group_structure(graph, group)
    z_tgt_all = z_objects if group in ("skip", "sr", "or") else z_relations
    z_src_all = z_objects if group in ("skip", "rs", "ro") else z_relations

    if tgt.size == 0:
        alpha = tape.constant(np.zeros((n_tgt, n_src)))
    else:
        zt = tape.select_rows(z_tgt_all, tgt)
        zs = tape.select_rows(z_src_all, src)
        h = tape.relu(tape.matmul(tape.concat_cols(zt, zs), params.w_a))
        u = tape.matmul(h, params.w_h)
        flat = tape.scatter_rows(u, tgt * n_src + src, n_tgt * n_src)
        dense = tape.reshape(flat, n_tgt, n_src)
        mask = group_mask(graph, group)
        live = np.flatnonzero(mask.any(axis=1))
        if live.size == n_tgt:
            alpha = tape.softmax_row(dense, mask)
        else:
            sub = tape.select_rows(dense, live)
            alpha_sub = tape.softmax_row(sub, mask[live])
            alpha = tape.scatter_rows(alpha_sub, live, n_tgt)
    if group == "skip":
        alpha = tape.add(alpha, tape.constant(np.eye(graph.n_objects)))
    return alpha


def attention_scores(params: AgcnParams, z_objects, z_relations, graph: HeteroGraph, group: str) -> np.ndarray:
    """Pure ndarray wrapper over attention_on_tape."""
    tape = Tape()
    lifted = lift_agcn(tape, params, trainable=False)
    z_o = tape.constant(as_matrix(z_objects, "z_objects"))
    z_r = tape.constant(as_matrix(z_relations, "z_relations"))
    return attention_on_tape(tape, lifted, z_o, z_r, graph, group).value


# ---------------------------------------------------------------------------
# layer updates


def gcn_layer(z, alpha, w) -> np.ndarray:
    """Plain graph convolution: z_i' = relu(z_i + sum_j alpha_ij W z_j)."""
    z = as_matrix(z, "z")
    alpha = as_matrix(alpha, "alpha")
    w = as_matrix(w, "w")
    if alpha.shape != (z.shape[0], z.shape[0]):
        raise ValueError("gcn_layer: alpha must be n x n")
    if w.shape != (z.shape[1], z.shape[1]):
        raise ValueError("gcn_layer: w must be d x d")
    return np.maximum(z + matmul(alpha, matmul(z, w)), 0.0)


def agcn_step_objects(
    tape: Tape,
    params: AgcnVars,
    z_objects: Var,
    z_relations: Var,
    graph: HeteroGraph,
    attn: dict,
) -> Var:
    """Object update: self and skip messages plus messages from both relation roles."""
    out = tape.matmul(attn["skip"], tape.matmul(z_objects, params.w_skip))
    if graph.n_relations:
        out = tape.add(out, tape.matmul(attn["sr"], tape.matmul(z_relations, params.w_sr)))
        out = tape.add(out, tape.matmul(attn["or"], tape.matmul(z_relations, params.w_or)))
    return tape.relu(out)


def agcn_step_relations(
    tape: Tape,
    params: AgcnVars,
    z_objects: Var,
    z_relations: Var,
    graph: HeteroGraph,
    attn: dict,
) -> Var:
    """Relation update: untransformed self plus messages from the two endpoints."""
    if graph.n_relations == 0:
        return tape.relu(z_relations)
    out = tape.add(z_relations, tape.matmul(attn["rs"], tape.matmul(z_objects, params.w_rs)))
    out = tape.add(out, tape.matmul(attn["ro"], tape.matmul(z_objects, params.w_ro)))
    return tape.relu(out)


def _layer_attention(tape, params, z_o, z_r, graph, mode):
    if mode == "uniform":
        return {g: tape.constant(uniform_attention(graph, g)) for g in GROUPS}
    attn = {"skip": attention_on_tape(tape, params, z_o, z_r, graph, "skip")}
    if graph.n_relations:
        for g in ("sr", "or", "rs", "ro"):
            attn[g] = attention_on_tape(tape, params, z_o, z_r, graph, g)
    return attn


@dataclass(frozen=True)
class TwoLevelResult:
    object_logits: Var
    relation_logits: Var
    visual_objects: Var
    visual_relations: Var
    visual_attention: tuple  # per layer: dict group -> Var, computed from visual features
    semantic_attention: tuple  # per layer: dict group -> Var, as consumed by the semantic pass


def run_two_level_on_tape(
    tape: Tape,
    visual: AgcnVars,
    semantic: AgcnVars,
    graph: HeteroGraph,
    x_objects: Var,
    x_relations: Var,
    logits_objects: Var,
    logits_relations: Var,
    n_layers: int = 2,
    attention: str = "learned",
) -> TwoLevelResult:
    """Visual pass refines features and records per-layer attention; the
    semantic pass applies the same attention, layer-matched, to the logits."""
    if n_layers < 1:
        raise ValueError("run_two_level: n_layers must be >= 1")
    if attention not in ("learned", "uniform"):
        raise ValueError("run_two_level: attention must be 'learned' or 'uniform'")
    z_o, z_r = x_objects, x_relations
    s_o, s_r = logits_objects, logits_relations
    recorded = []
    consumed = []
    for _ in range(n_layers):
        attn = _layer_attention(tape, visual, z_o, z_r, graph, attention)
        recorded.append(attn)
        z_o, z_r = (
            agcn_step_objects(tape, visual, z_o, z_r, graph, attn),
            agcn_step_relations(tape, visual, z_o, z_r, graph, attn),
        )
        consumed.append(attn)  # reused verbatim, no recomputation
        s_o, s_r = (
            agcn_step_objects(tape, semantic, s_o, s_r, graph, attn),
            agcn_step_relations(tape, semantic, s_o, s_r, graph, attn),
        )
    return TwoLevelResult(
        object_logits=s_o,
        relation_logits=s_r,
        visual_objects=z_o,
        visual_relations=z_r,
        visual_attention=tuple(recorded),
        semantic_attention=tuple(consumed),
    )


def run_two_level(
    params_visual: AgcnParams,
    params_semantic: AgcnParams,
    graph: HeteroGraph,
    x_objects,
    x_relations,
    logits_objects,
    logits_relations,
    n_layers: int = 2,
    attention: str = "learned",
):
    """Pure wrapper: returns (refined object logits, refined predicate logits)."""
    tape = Tape()
    result = run_two_level_on_tape(
        tape,
        lift_agcn(tape, params_visual, trainable=False),
        lift_agcn(tape, params_semantic, trainable=False),
        graph,
        tape.constant(as_matrix(x_objects, "x_objects")),
        tape.constant(as_matrix(x_relations, "x_relations")),
        tape.constant(as_matrix(logits_objects, "logits_objects")),
        tape.constant(as_matrix(logits_relations, "logits_relations")),
        n_layers=n_layers,
        attention=attention,
    )
    return result.object_logits.value, result.relation_logits.value


def classification_losses(
    tape: Tape,
    object_logits: Var,
    relation_logits: Var,
    object_idx,
    object_labels,
    relation_idx,
    relation_labels,
) -> Var:
    """Sum of mean cross-entropies over the assigned objects and predicates."""
    object_idx = np.asarray(object_idx, dtype=np.intp).reshape(-1)
    relation_idx = np.asarray(relation_idx, dtype=np.intp).reshape(-1)
    if object_idx.size == 0 and relation_idx.size == 0:
        raise ValueError("classification_losses: nothing is assigned")
    total = None
    if object_idx.size:
        picked = tape.select_rows(object_logits, object_idx)
        total = tape.cross_entropy_mean(picked, object_labels)
    if relation_idx.size:
        picked = tape.select_rows(relation_logits, relation_idx)
        term = tape.cross_entropy_mean(picked, relation_labels)
        total = term if total is None else tape.add(total, term)
    return total
