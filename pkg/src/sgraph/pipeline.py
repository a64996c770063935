"""End-to-end toy pipeline and trainer.

Proposals go through three stages: relatedness scoring with top-K plus pair
NMS pruning, union-feature construction, and two-level propagation that
refines object and predicate logits. A small SGD trainer fits all heads
jointly on instances drawn from a planted synthetic world, and an ablation
study compares the full model against uniform-attention, no-propagation, and
random-pruning variants.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .agcn import (
    AgcnParams,
    AgcnVars,
    HeteroGraph,
    classification_losses,
    run_two_level,
    run_two_level_on_tape,
)
from .graph_model import Box, GroundTruthGraph, GtObject, ObjectProposal, RelationEdge, SceneGraph, dumps_canonical
from .metrics import MatchConfig, sggen, sggen_plus
from .numerics import Mlp2, Mlp2Vars, NumericsError, Tape, matmul, softmax_rows
from .repn import (
    RepnConfig,
    RepnParams,
    RepnVars,
    relatedness_matrix,
    relatedness_on_tape,
    repn_loss_on_tape,
    sample_training_pairs,
    select_pairs,
    union_halves_matrix,
)

VARIANTS = ("full", "gcn", "no_gcn", "random_prune")

LOGIT_FLOOR = 1e-12


def class_logits(class_dists: np.ndarray) -> np.ndarray:
    """Row-centered log probabilities. Softmax is shift-invariant, so these
    encode the same distributions while keeping the winning entries positive
    for the relu inside the propagation steps."""
    logs = np.log(np.clip(class_dists, LOGIT_FLOOR, None))
    return logs - logs.mean(axis=1, keepdims=True)


@dataclass(frozen=True)
class PipelineConfig:
    n_classes: int
    n_predicates: int
    d: int = 16
    d_att: int = 16
    n_layers: int = 2
    repn: RepnConfig = field(default_factory=RepnConfig)
    repn_hidden: int = 16
    repn_proj: int = 8
    variant: str = "full"
    lr: float = 1e-2
    batch_size: int = 1
    epochs: int = 10
    train_instances: int = 24
    eval_instances: int = 8
    n_objects: int = 6
    pair_samples: int = 48
    init_scale: float = 0.1
    repn_init_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "n_predicates", "d", "d_att", "n_layers", "repn_hidden", "repn_proj",
                     "batch_size", "epochs", "train_instances", "eval_instances", "n_objects",
                     "pair_samples", "seed"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.n_classes < 2 or self.n_predicates < 2:
            raise ValueError("PipelineConfig: vocabulary sizes must be >= 2")
        for name in ("d", "d_att", "n_layers", "repn_hidden", "repn_proj", "batch_size",
                     "train_instances", "eval_instances", "pair_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"PipelineConfig.{name}: must be positive")
        if self.n_objects < 2:
            raise ValueError("PipelineConfig.n_objects: need at least 2 objects")
        if self.epochs < 0:
            raise ValueError("PipelineConfig.epochs: must be nonnegative")
        if self.seed < 0:
            raise ValueError("PipelineConfig.seed: must be nonnegative")
        if self.variant not in VARIANTS:
            raise ValueError(f"PipelineConfig.variant: unknown variant {self.variant!r}")
        lr = float(self.lr)
        if not (lr >= 0.0 and math.isfinite(lr)):
            raise ValueError("PipelineConfig.lr: must be finite and nonnegative")
        object.__setattr__(self, "lr", lr)
        object.__setattr__(self, "init_scale", float(self.init_scale))
        if not (0.0 < self.init_scale <= 10.0):
            raise ValueError("PipelineConfig.init_scale: must lie in (0, 10]")
        object.__setattr__(self, "repn_init_scale", float(self.repn_init_scale))
        if not (0.0 < self.repn_init_scale <= 10.0):
            raise ValueError("PipelineConfig.repn_init_scale: must lie in (0, 10]")


_CONFIG_FIELDS = (
    "n_classes", "n_predicates", "d", "d_att", "n_layers", "repn", "repn_hidden", "repn_proj",
    "variant", "lr", "batch_size", "epochs", "train_instances", "eval_instances", "n_objects",
    "pair_samples", "init_scale", "repn_init_scale", "seed",
)


def config_to_doc(config: PipelineConfig) -> dict:
    doc = {}
    for name in _CONFIG_FIELDS:
        if name == "repn":
            doc["repn"] = {
                "top_k": config.repn.top_k,
                "nms_threshold": config.repn.nms_threshold,
                "max_candidates": config.repn.max_candidates,
            }
        else:
            doc[name] = getattr(config, name)
    return doc


def config_from_doc(doc) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ValueError("config: expected an object")
    unknown = set(doc) - set(_CONFIG_FIELDS) - {"world"}
    if unknown:
        raise ValueError(f"config: unknown fields {sorted(unknown)}")
    if "n_classes" not in doc or "n_predicates" not in doc:
        raise ValueError("config: n_classes and n_predicates are required")
    kwargs = {k: v for k, v in doc.items() if k in _CONFIG_FIELDS and k != "repn"}
    if "repn" in doc:
        sub = doc["repn"]
        if not isinstance(sub, dict):
            raise ValueError("config.repn: expected an object")
        extra = set(sub) - {"top_k", "nms_threshold", "max_candidates"}
        if extra:
            raise ValueError(f"config.repn: unknown fields {sorted(extra)}")
        kwargs["repn"] = RepnConfig(**sub)
    return PipelineConfig(**kwargs)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class PipelineParams:
    """Every trainable array of the pipeline, grouped by stage."""

    repn: RepnParams
    w_union: np.ndarray  # (2d, d) linear projection of union-feature halves
    w_head: np.ndarray   # (d, |P|) initial predicate logits
    b_head: np.ndarray   # (1, |P|)
    visual: AgcnParams
    semantic: AgcnParams

    def __post_init__(self):
        object.__setattr__(self, "w_union", np.ascontiguousarray(self.w_union, dtype=np.float64))
        object.__setattr__(self, "w_head", np.ascontiguousarray(self.w_head, dtype=np.float64))
        object.__setattr__(self, "b_head", np.ascontiguousarray(self.b_head, dtype=np.float64))
        d = self.visual.d_obj
        if self.w_union.shape != (2 * d, d):
            raise ValueError("PipelineParams: w_union must map stacked halves to the feature width")
        if self.w_head.shape != (d, self.semantic.d_rel):
            raise ValueError("PipelineParams: w_head must map features to predicate logits")
        if self.b_head.shape != (1, self.semantic.d_rel):
            raise ValueError("PipelineParams: b_head shape mismatch")
        if not self.visual.has_attention:
            raise ValueError("PipelineParams: visual level needs an attention head")
        if self.semantic.has_attention:
            raise ValueError("PipelineParams: semantic level reuses visual attention, no head")
        if self.repn.phi.d_in != self.semantic.d_obj:
            raise ValueError("PipelineParams: relatedness input width must equal the class count")

    @staticmethod
    def random(rng: np.random.Generator, config: PipelineConfig) -> "PipelineParams":
        s = config.init_scale
        # identity-dominated skip: the semantic pass starts out passing the
        # incoming logits through, which keeps winner coordinates positive
        # across the relu and avoids dead rows early in training
        semantic = AgcnParams(
            w_skip=np.eye(config.n_classes) + s * rng.standard_normal((config.n_classes, config.n_classes)),
            w_sr=s * rng.standard_normal((config.n_predicates, config.n_classes)),
            w_or=s * rng.standard_normal((config.n_predicates, config.n_classes)),
            w_rs=s * rng.standard_normal((config.n_classes, config.n_predicates)),
            w_ro=s * rng.standard_normal((config.n_classes, config.n_predicates)),
        )
        # the relatedness kernel is a product of two projections, so its
        # effective scale is quadratic in the init scale; a larger start keeps
        # early score gradients out of the flat sigmoid center
        return PipelineParams(
            repn=RepnParams.random(rng, config.n_classes, config.repn_hidden, config.repn_proj,
                                   config.repn_init_scale),
            w_union=s * rng.standard_normal((2 * config.d, config.d)),
            w_head=s * rng.standard_normal((config.d, config.n_predicates)),
            b_head=np.zeros((1, config.n_predicates)),
            visual=AgcnParams.random(rng, config.d, config.d, config.d_att, s),
            semantic=semantic,
        )

    def flat(self) -> dict:
        """Name -> array, sorted by name. Names are stage.field paths."""
        out = {}
        for role, mlp in (("phi", self.repn.phi), ("psi", self.repn.psi)):
            for leaf in ("w1", "b1", "w2", "b2"):
                out[f"repn.{role}.{leaf}"] = getattr(mlp, leaf)
        out["union.w"] = self.w_union
        out["head.w"] = self.w_head
        out["head.b"] = self.b_head
        for level, p in (("visual", self.visual), ("semantic", self.semantic)):
            for leaf in ("w_skip", "w_sr", "w_or", "w_rs", "w_ro"):
                out[f"{level}.{leaf}"] = getattr(p, leaf)
        out["visual.w_a"] = self.visual.w_a
        out["visual.w_h"] = self.visual.w_h
        return dict(sorted(out.items()))

    @staticmethod
    def from_flat(flat: dict) -> "PipelineParams":
        def take(name):
            if name not in flat:
                raise ValueError(f"params: missing entry {name!r}")
            return flat[name]

        expected = set()
        for role in ("phi", "psi"):
            expected |= {f"repn.{role}.{leaf}" for leaf in ("w1", "b1", "w2", "b2")}
        expected |= {"union.w", "head.w", "head.b", "visual.w_a", "visual.w_h"}
        for level in ("visual", "semantic"):
            expected |= {f"{level}.{leaf}" for leaf in ("w_skip", "w_sr", "w_or", "w_rs", "w_ro")}
        extra = set(flat) - expected
        if extra:
            raise ValueError(f"params: unknown entries {sorted(extra)}")
        mlps = {
            role: Mlp2(**{leaf: take(f"repn.{role}.{leaf}") for leaf in ("w1", "b1", "w2", "b2")})
            for role in ("phi", "psi")
        }
        visual = AgcnParams(
            **{leaf: take(f"visual.{leaf}") for leaf in ("w_skip", "w_sr", "w_or", "w_rs", "w_ro")},
            w_a=take("visual.w_a"),
            w_h=take("visual.w_h"),
        )
        semantic = AgcnParams(
            **{leaf: take(f"semantic.{leaf}") for leaf in ("w_skip", "w_sr", "w_or", "w_rs", "w_ro")}
        )
        return PipelineParams(
            repn=RepnParams(phi=mlps["phi"], psi=mlps["psi"]),
            w_union=take("union.w"),
            w_head=take("head.w"),
            b_head=take("head.b"),
            visual=visual,
            semantic=semantic,
        )


def params_to_doc(params: PipelineParams) -> dict:
    doc = {}
    for name, a in params.flat().items():
        doc[name] = {"shape": [int(s) for s in a.shape], "data": [float(v) for v in a.reshape(-1)]}
    return doc


def params_from_doc(doc) -> PipelineParams:
    if not isinstance(doc, dict):
        raise ValueError("params: expected an object")
    flat = {}
    for name, entry in doc.items():
        where = f"params[{name!r}]"
        if not isinstance(entry, dict) or set(entry) != {"shape", "data"}:
            raise ValueError(f"{where}: expected shape and data")
        shape = entry["shape"]
        if (
            not isinstance(shape, list)
            or len(shape) != 2
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in shape)
        ):
            raise ValueError(f"{where}.shape: expected two nonnegative integers")
        data = entry["data"]
        if not isinstance(data, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in data):
            raise ValueError(f"{where}.data: expected a list of numbers")
        if len(data) != shape[0] * shape[1]:
            raise ValueError(f"{where}.data: length does not match shape")
        a = np.array(data, dtype=np.float64).reshape(shape[0], shape[1])
        if a.size and not np.isfinite(a).all():
            raise ValueError(f"{where}.data: non-finite entries")
        flat[name] = a
    return PipelineParams.from_flat(flat)


def save_params(path, params: PipelineParams):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_canonical(params_to_doc(params)))
        f.write("\n")


def load_params(path) -> PipelineParams:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"params: invalid JSON ({e})") from e
    return params_from_doc(doc)


# ---------------------------------------------------------------------------
# synthetic world


@dataclass(frozen=True)
class SyntheticWorld:
    """Planted regularities: which class pairs relate, and with which predicate.

    prior[a, b] is the probability that an object of class a relates to one
    of class b; predicate_table[a, b] is the predicate distribution for that
    ordered pair; features are class means plus isotropic noise. Proposal
    class distributions are one-hots softened by a per-object epsilon, with
    an optional probability of centering on a wrong class entirely.
    """

    prior: np.ndarray
    predicate_table: np.ndarray
    class_means: np.ndarray
    noise_scale: float = 1.0
    eps_range: tuple = (0.05, 0.4)
    flip_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "prior", np.ascontiguousarray(self.prior, dtype=np.float64))
        object.__setattr__(self, "predicate_table", np.ascontiguousarray(self.predicate_table, dtype=np.float64))
        object.__setattr__(self, "class_means", np.ascontiguousarray(self.class_means, dtype=np.float64))
        c = self.prior.shape[0]
        if self.prior.shape != (c, c) or c < 2:
            raise ValueError("SyntheticWorld.prior: expected a square matrix over >= 2 classes")
        if (self.prior < 0).any() or (self.prior > 1).any():
            raise ValueError("SyntheticWorld.prior: probabilities must lie in [0, 1]")
        if self.predicate_table.ndim != 3 or self.predicate_table.shape[:2] != (c, c):
            raise ValueError("SyntheticWorld.predicate_table: expected shape (C, C, P)")
        if self.predicate_table.shape[2] < 2:
            raise ValueError("SyntheticWorld.predicate_table: need >= 2 predicates")
        if (self.predicate_table < 0).any():
            raise ValueError("SyntheticWorld.predicate_table: negative probability")
        sums = self.predicate_table.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("SyntheticWorld.predicate_table: rows must sum to 1")
        if self.class_means.ndim != 2 or self.class_means.shape[0] != c:
            raise ValueError("SyntheticWorld.class_means: expected one mean per class")
        object.__setattr__(self, "noise_scale", float(self.noise_scale))
        if self.noise_scale < 0:
            raise ValueError("SyntheticWorld.noise_scale: must be nonnegative")
        lo, hi = (float(self.eps_range[0]), float(self.eps_range[1]))
        if not (0.0 <= lo <= hi < 1.0):
            raise ValueError("SyntheticWorld.eps_range: need 0 <= lo <= hi < 1")
        object.__setattr__(self, "eps_range", (lo, hi))
        object.__setattr__(self, "flip_prob", float(self.flip_prob))
        if not (0.0 <= self.flip_prob < 1.0):
            raise ValueError("SyntheticWorld.flip_prob: must lie in [0, 1)")

    @property
    def n_classes(self) -> int:
        return self.prior.shape[0]

    @property
    def n_predicates(self) -> int:
        return self.predicate_table.shape[2]

    @property
    def d(self) -> int:
        return self.class_means.shape[1]

    @staticmethod
    def planted(
        rng: np.random.Generator,
        n_classes: int,
        n_predicates: int,
        d: int,
        n_pairs: int | None = None,
        prior_strength: float = 0.9,
        predicate_sharpness: float = 0.9,
        mean_scale: float = 3.0,
        noise_scale: float = 1.0,
        eps_range=(0.05, 0.4),
        flip_prob: float = 0.0,
        mirrored: bool = False,
    ) -> "SyntheticWorld":
        """Sparse prior: a few ordered class pairs relate, each with its own
        dominant predicate; every other pair never relates.

        With mirrored, both directions of each chosen pair relate and their
        dominant predicates differ, so direction matters for the labels."""
        if n_pairs is None:
            n_pairs = n_classes
        if mirrored:
            if n_pairs % 2:
                raise ValueError("SyntheticWorld.planted: mirrored needs an even n_pairs")
            pool = [(a, b) for a in range(n_classes) for b in range(n_classes) if a < b]
            if not (2 <= n_pairs <= 2 * len(pool)):
                raise ValueError("SyntheticWorld.planted: n_pairs out of range")
            chosen = rng.choice(len(pool), size=n_pairs // 2, replace=False)
            planted = []
            for t, c in enumerate(sorted(int(x) for x in chosen)):
                a, b = pool[c]
                planted.append(((a, b), (2 * t) % n_predicates))
                planted.append(((b, a), (2 * t + 1) % n_predicates))
        else:
            pool = [(a, b) for a in range(n_classes) for b in range(n_classes) if a != b]
            if not (1 <= n_pairs <= len(pool)):
                raise ValueError("SyntheticWorld.planted: n_pairs out of range")
            chosen = rng.choice(len(pool), size=n_pairs, replace=False)
            planted = [
                (pool[c], t % n_predicates)
                for t, c in enumerate(sorted(int(x) for x in chosen))
            ]
        prior = np.zeros((n_classes, n_classes))
        table = np.full((n_classes, n_classes, n_predicates), 1.0 / n_predicates)
        for (a, b), dominant in planted:
            prior[a, b] = prior_strength
            row = np.full(n_predicates, (1.0 - predicate_sharpness) / (n_predicates - 1))
            row[dominant] = predicate_sharpness
            table[a, b] = row
        return SyntheticWorld(
            prior=prior,
            predicate_table=table,
            class_means=mean_scale * rng.standard_normal((n_classes, d)),
            noise_scale=noise_scale,
            eps_range=eps_range,
            flip_prob=flip_prob,
        )


def world_from_doc(doc, n_classes: int, n_predicates: int, d: int) -> SyntheticWorld:
    """Planted world from a config sub-document (seeded, all knobs optional)."""
    if not isinstance(doc, dict):
        raise ValueError("config.world: expected an object")
    allowed = {"seed", "n_pairs", "prior_strength", "predicate_sharpness", "mean_scale",
               "noise_scale", "eps_range", "flip_prob", "mirrored"}
    extra = set(doc) - allowed
    if extra:
        raise ValueError(f"config.world: unknown fields {sorted(extra)}")
    kwargs = {k: v for k, v in doc.items() if k != "seed"}
    if "n_pairs" in kwargs:
        kwargs["n_pairs"] = int(kwargs["n_pairs"])
    if "mirrored" in kwargs:
        kwargs["mirrored"] = bool(kwargs["mirrored"])
    if "eps_range" in kwargs:
        kwargs["eps_range"] = tuple(kwargs["eps_range"])
    rng = np.random.default_rng(int(doc.get("seed", 0)))
    return SyntheticWorld.planted(rng, n_classes, n_predicates, d, **kwargs)


def generate_instance(world: SyntheticWorld, n_objects: int, seed: int):
    """One sampled scene: proposals (features and softened distributions on
    the true boxes) plus its ground truth graph."""
    if n_objects < 2:
        raise ValueError("generate_instance: n_objects must be >= 2")
    rng = np.random.default_rng(seed)
    c = world.n_classes
    classes = [int(rng.integers(0, c)) for _ in range(n_objects)]
    grid = int(math.ceil(math.sqrt(n_objects)))
    boxes = []
    for i in range(n_objects):
        x = (i % grid) * 20.0 + float(rng.uniform(0, 5))
        y = (i // grid) * 20.0 + float(rng.uniform(0, 5))
        boxes.append(Box(x=x, y=y, w=float(rng.uniform(8, 14)), h=float(rng.uniform(8, 14))))
    triplets = []
    for i in range(n_objects):
        for j in range(n_objects):
            if i == j:
                continue
            if rng.random() < world.prior[classes[i], classes[j]]:
                p = int(rng.choice(world.n_predicates, p=world.predicate_table[classes[i], classes[j]]))
                triplets.append((i, p, j))
    proposals = []
    for i in range(n_objects):
        feature = world.class_means[classes[i]] + world.noise_scale * rng.standard_normal(world.d)
        center = classes[i]
        if world.flip_prob and rng.random() < world.flip_prob:
            wrong = int(rng.integers(0, c - 1))
            center = wrong if wrong < classes[i] else wrong + 1
        eps = float(rng.uniform(*world.eps_range))
        dist = np.full(c, eps / c)
        dist[center] += 1.0 - eps
        proposals.append(ObjectProposal(box=boxes[i], feature=feature, class_dist=dist))
    gt = GroundTruthGraph(
        objects=tuple(GtObject(box=b, label=l) for b, l in zip(boxes, classes)),
        triplets=tuple(triplets),
    )
    return tuple(proposals), gt


# ---------------------------------------------------------------------------
# forward


def select_candidate_pairs(config: PipelineConfig, params: PipelineParams, proposals, seed=None):
    """Stage one: directed pair selection. Returns (pairs, score matrix or None)."""
    n = len(proposals)
    if n < 2:
        raise ValueError("forward: at least 2 proposals required")
    if config.variant == "random_prune":
        all_pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        rng = np.random.default_rng(config.seed if seed is None else int(seed))
        k = min(config.repn.top_k, config.repn.max_candidates, len(all_pairs))
        chosen = rng.choice(len(all_pairs), size=k, replace=False)
        return [all_pairs[int(t)] for t in sorted(chosen)], None
    class_dists = np.stack([p.class_dist for p in proposals])
    scores = relatedness_matrix(params.repn, class_dists)
    boxes = [p.box for p in proposals]
    return select_pairs(scores, boxes, config.repn), scores


def label_candidate_graph(config: PipelineConfig, params: PipelineParams, proposals, pairs, scores=None) -> SceneGraph:
    """Stages two and three: union features, propagation, normalized output."""
    features = np.stack([p.feature for p in proposals])
    class_dists = np.stack([p.class_dist for p in proposals])
    obj_logits = class_logits(class_dists)
    halves = union_halves_matrix(features, pairs)
    z_r = matmul(halves, params.w_union)
    rel_logits = matmul(z_r, params.w_head) + params.b_head
    if config.variant in ("full", "gcn"):
        graph = HeteroGraph.from_pairs(len(proposals), pairs)
        obj_logits, rel_logits = run_two_level(
            params.visual,
            params.semantic,
            graph,
            features,
            z_r,
            obj_logits,
            rel_logits,
            n_layers=config.n_layers,
            attention="learned" if config.variant == "full" else "uniform",
        )
    obj_dists = softmax_rows(obj_logits)
    rel_dists = softmax_rows(rel_logits) if len(pairs) else np.zeros((0, config.n_predicates))
    objects = tuple(
        ObjectProposal(box=p.box, feature=p.feature, class_dist=obj_dists[i], attributes=p.attributes)
        for i, p in enumerate(proposals)
    )
    edges = tuple(
        RelationEdge(
            subject_idx=i,
            object_idx=j,
            predicate_dist=rel_dists[e],
            relatedness=float(scores[i, j]) if scores is not None else None,
        )
        for e, (i, j) in enumerate(pairs)
    )
    return SceneGraph(objects=objects, edges=edges)


def forward(config: PipelineConfig, params: PipelineParams, proposals, seed=None) -> SceneGraph:
    """Proposals to a ranked-ready scene graph under the configured variant."""
    proposals = tuple(proposals)
    pairs, scores = select_candidate_pairs(config, params, proposals, seed=seed)
    return label_candidate_graph(config, params, proposals, pairs, scores)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class LiftedPipeline:
    vars: dict
    repn: RepnVars
    visual: AgcnVars
    semantic: AgcnVars


def lift_pipeline(tape: Tape, params: PipelineParams, trainable: bool = True) -> LiftedPipeline:
    make = tape.param if trainable else tape.constant
    flat = params.flat()
    v = {name: make(a, name) for name, a in flat.items()}
    return LiftedPipeline(
        vars=v,
        repn=RepnVars(
            phi=Mlp2Vars(w1=v["repn.phi.w1"], b1=v["repn.phi.b1"], w2=v["repn.phi.w2"], b2=v["repn.phi.b2"]),
            psi=Mlp2Vars(w1=v["repn.psi.w1"], b1=v["repn.psi.b1"], w2=v["repn.psi.w2"], b2=v["repn.psi.b2"]),
        ),
        visual=AgcnVars(
            w_skip=v["visual.w_skip"], w_sr=v["visual.w_sr"], w_or=v["visual.w_or"],
            w_rs=v["visual.w_rs"], w_ro=v["visual.w_ro"], w_a=v["visual.w_a"], w_h=v["visual.w_h"],
        ),
        semantic=AgcnVars(
            w_skip=v["semantic.w_skip"], w_sr=v["semantic.w_sr"], w_or=v["semantic.w_or"],
            w_rs=v["semantic.w_rs"], w_ro=v["semantic.w_ro"],
        ),
    )


def training_loss(tape: Tape, config: PipelineConfig, lifted: LiftedPipeline, instance, pair_rng):
    """Relatedness BCE on sampled pairs plus classification CE through the
    variant's own candidate graph. Relations get a label only where a selected
    pair coincides with a ground-truth pair, so the attention sees the same
    mix of real and spurious candidates it will face at inference."""
    proposals, gt = instance
    n = len(proposals)
    class_dists = np.stack([p.class_dist for p in proposals])
    features = np.stack([p.feature for p in proposals])
    boxes = [p.box for p in proposals]
    selection_seed = int(pair_rng.integers(0, 2**31))

    rel_scores = relatedness_on_tape(tape, lifted.repn, tape.constant(class_dists, "class_dists"))
    sampled, labels = sample_training_pairs(boxes, gt, pair_rng, config.pair_samples)
    loss = repn_loss_on_tape(tape, rel_scores, sampled, labels)

    if config.variant == "random_prune":
        all_pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        rng = np.random.default_rng(selection_seed)
        k = min(config.repn.top_k, config.repn.max_candidates, len(all_pairs))
        pairs = [all_pairs[int(t)] for t in sorted(rng.choice(len(all_pairs), size=k, replace=False))]
    else:
        pairs = select_pairs(rel_scores.value, boxes, config.repn)
    predicate_of = {(int(s), int(o)): int(p) for s, p, o in gt.triplets}
    rel_idx = [k for k, pair in enumerate(pairs) if pair in predicate_of]
    rel_labels = [predicate_of[pairs[k]] for k in rel_idx]

    obj_logits = tape.constant(class_logits(class_dists), "object_logits")
    halves = tape.constant(union_halves_matrix(features, pairs), "union_halves")
    z_r = tape.matmul(halves, lifted.vars["union.w"])
    rel_logits = tape.add_bias(tape.matmul(z_r, lifted.vars["head.w"]), lifted.vars["head.b"])
    if config.variant in ("full", "gcn"):
        graph = HeteroGraph.from_pairs(n, pairs)
        result = run_two_level_on_tape(
            tape, lifted.visual, lifted.semantic, graph,
            tape.constant(features, "features"), z_r, obj_logits, rel_logits,
            n_layers=config.n_layers,
            attention="learned" if config.variant == "full" else "uniform",
        )
        obj_logits, rel_logits = result.object_logits, result.relation_logits
        cls = classification_losses(
            tape, obj_logits, rel_logits,
            list(range(n)), [o.label for o in gt.objects], rel_idx, rel_labels,
        )
    elif rel_idx:
        # without propagation the object logits are constants; only the
        # predicate head has a trainable path
        cls = classification_losses(tape, obj_logits, rel_logits, [], [], rel_idx, rel_labels)
    else:
        cls = None
    return loss if cls is None else tape.add(loss, cls)


def _instance_seeds(config: PipelineConfig):
    base = (config.seed + 1) * 1_000_003
    train = [base + i for i in range(config.train_instances)]
    held = [base + 500_000 + i for i in range(config.eval_instances)]
    return train, held


def evaluate_params(config: PipelineConfig, params: PipelineParams, instances, ks=(50,)) -> dict:
    """Mean sggen / sggen_plus over instances at each cutoff."""
    cfg = MatchConfig(ks=tuple(ks))
    out = {f"sggen@{k}": [] for k in cfg.ks}
    plus_out = {f"sggen_plus@{k}": [] for k in cfg.ks}
    for i, (proposals, gt) in enumerate(instances):
        pred = forward(config, params, proposals, seed=config.seed ^ (7_777 + i))
        if not gt.triplets:
            continue
        g = sggen(pred, gt, cfg)
        p, _ = sggen_plus(pred, gt, cfg)
        for k in cfg.ks:
            out[f"sggen@{k}"].append(g[k])
            plus_out[f"sggen_plus@{k}"].append(p[k])
    result = {}
    for name, vals in {**out, **plus_out}.items():
        result[name] = float(sum(vals) / len(vals)) if vals else 1.0
    return result


def train_toy(config: PipelineConfig, world: SyntheticWorld):
    """Plain SGD over generated instances; returns (params, per-epoch log).

    Aborts with a diagnostic if any step produces a non-finite value.
    """
    if world.n_classes != config.n_classes or world.n_predicates != config.n_predicates:
        raise ValueError("train_toy: world vocabulary does not match the config")
    if world.d != config.d:
        raise ValueError("train_toy: world feature width does not match the config")
    rng = np.random.default_rng(config.seed)
    params = PipelineParams.random(rng, config)
    train_seeds, held_seeds = _instance_seeds(config)
    train = [generate_instance(world, config.n_objects, s) for s in train_seeds]
    held = [generate_instance(world, config.n_objects, s) for s in held_seeds]
    trajectory = []
    step = 0
    for epoch in range(config.epochs):
        epoch_losses = []
        for start in range(0, len(train), config.batch_size):
            batch = train[start : start + config.batch_size]
            grad_sum = None
            batch_loss = 0.0
            for offset, instance in enumerate(batch):
                tape = Tape()
                lifted = lift_pipeline(tape, params, trainable=True)
                pair_rng = np.random.default_rng((config.seed + 13) * 999_983 + (start + offset))
                try:
                    loss = training_loss(tape, config, lifted, instance, pair_rng)
                    grads = tape.backward(loss)
                except NumericsError as e:
                    raise NumericsError(
                        f"training diverged at epoch {epoch}, step {step}: {e}"
                    ) from e
                batch_loss += float(loss.value[0, 0])
                contribution = {name: grads[var] for name, var in lifted.vars.items()}
                if grad_sum is None:
                    grad_sum = contribution
                else:
                    grad_sum = {name: grad_sum[name] + contribution[name] for name in grad_sum}
            flat = params.flat()
            scale = config.lr / len(batch)
            new_flat = {name: flat[name] - scale * grad_sum[name] for name in flat}
            if any(not np.isfinite(a).all() for a in new_flat.values()):
                raise NumericsError(
                    f"training diverged at epoch {epoch}, step {step}: parameter update is not finite"
                )
            params = PipelineParams.from_flat(new_flat)
            epoch_losses.append(batch_loss / len(batch))
            step += 1
        held_scores = evaluate_params(config, params, held, ks=(50,))
        trajectory.append({
            "epoch": epoch,
            "loss": float(sum(epoch_losses) / len(epoch_losses)),
            "sggen": held_scores["sggen@50"],
            "sggen_plus": held_scores["sggen_plus@50"],
        })
    return params, trajectory


# ---------------------------------------------------------------------------
# study helpers


def repn_pair_auc(repn_params: RepnParams, instances) -> float:
    """Probability a ground-truth pair outscores a non-pair (ties half)."""
    pos, neg = [], []
    for proposals, gt in instances:
        class_dists = np.stack([p.class_dist for p in proposals])
        scores = relatedness_matrix(repn_params, class_dists)
        gt_pairs = {(int(s), int(o)) for s, _, o in gt.triplets}
        n = len(proposals)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                (pos if (i, j) in gt_pairs else neg).append(float(scores[i, j]))
    if not pos or not neg:
        raise ValueError("repn_pair_auc: needs both positive and negative pairs")
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def ablation_study(config: PipelineConfig, world: SyntheticWorld, seeds=(0, 1, 2, 3, 4)) -> dict:
    """Train per variant per seed, evaluate on a shared corpus, mean sggen@50.

    The random-pruning variant reuses the no-propagation training (selection
    does not enter the training loss) and differs only at inference.
    """
    per_seed = {v: [] for v in VARIANTS}
    for seed in seeds:
        eval_base = (int(seed) + 1) * 7_000_003
        instances = [
            generate_instance(world, config.n_objects, eval_base + i)
            for i in range(config.eval_instances)
        ]
        trained = {}
        for mode in ("full", "gcn", "no_gcn"):
            cfg = replace(config, variant=mode, seed=int(seed))
            trained[mode], _ = train_toy(cfg, world)
        trained["random_prune"] = trained["no_gcn"]
        for variant in VARIANTS:
            cfg = replace(config, variant=variant, seed=int(seed))
            scores = evaluate_params(cfg, trained[variant], instances, ks=(50,))
            per_seed[variant].append(100.0 * scores["sggen@50"])
    return {
        "seeds": [int(s) for s in seeds],
        "variants": list(VARIANTS),
        "mean_sggen50": {v: float(sum(per_seed[v]) / len(per_seed[v])) for v in VARIANTS},
        "per_seed_sggen50": {v: [float(x) for x in per_seed[v]] for v in VARIANTS},
    }
