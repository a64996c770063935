"""HTTP service tests: endpoint contracts, error taxonomy, determinism."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

import sgraph
from sgraph.graph_model import (
    Vocabulary,
    dumps_canonical,
    ground_truth_to_doc,
    scene_graph_to_doc,
    vocabulary_to_doc,
)
from sgraph.perturb import graph_from_ground_truth
from sgraph.pipeline import (
    PipelineConfig,
    PipelineParams,
    config_from_doc,
    config_to_doc,
    forward,
    generate_instance,
    params_to_doc,
    world_from_doc,
)
from sgraph.repn import RepnConfig
from sgraph.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


def tiny_config(**overrides):
    base = dict(
        n_classes=4, n_predicates=3, d=6, d_att=6, n_layers=1,
        repn=RepnConfig(top_k=8, nms_threshold=0.7, max_candidates=8),
        repn_hidden=6, repn_proj=4, lr=0.05, epochs=1, train_instances=2,
        eval_instances=1, n_objects=3, pair_samples=6, seed=0,
    )
    base.update(overrides)
    return PipelineConfig(**base)


def tiny_world_doc():
    return {"seed": 3, "n_pairs": 3}


def corpus_docs(n_graphs=3, seed=11):
    config = tiny_config()
    world = world_from_doc(tiny_world_doc(), config.n_classes, config.n_predicates, config.d)
    vocab = Vocabulary(
        object_classes=tuple(f"c{i}" for i in range(config.n_classes)),
        predicate_classes=tuple(f"p{i}" for i in range(config.n_predicates)),
    )
    gts, preds = [], []
    for i in range(n_graphs):
        _, gt = generate_instance(world, config.n_objects, seed + i)
        gts.append(ground_truth_to_doc(gt))
        preds.append(scene_graph_to_doc(graph_from_ground_truth(gt, vocab)))
    return preds, gts, vocabulary_to_doc(vocab)


class TestHealth:
    def test_reports_ok_and_version(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "version": sgraph.__version__}


class TestEvaluate:
    def test_perfect_prediction_scores_one(self, client):
        preds, gts, vocab = corpus_docs()
        r = client.post(
            "/evaluate",
            json={"predicted": preds, "ground_truth": gts, "vocabulary": vocab},
        )
        assert r.status_code == 200
        body = r.json()
        assert set(body) == {"report", "table"}
        for name in ("sggen", "sggen_plus", "predcls", "phrcls"):
            assert body["report"][name] == {"50": 1.0, "100": 1.0}
        assert set(body["report"]["counts"]) == {"c_o", "c_p", "c_t", "n"}
        assert "sggen" in body["table"]

    def test_respects_cutoffs_and_iou(self, client):
        preds, gts, vocab = corpus_docs()
        r = client.post(
            "/evaluate",
            json={
                "predicted": preds, "ground_truth": gts, "vocabulary": vocab,
                "iou_threshold": 0.9, "ks": [1],
            },
        )
        assert r.status_code == 200
        assert list(r.json()["report"]["sggen"]) == ["1"]

    def test_count_mismatch_is_input_error(self, client):
        preds, gts, vocab = corpus_docs()
        r = client.post(
            "/evaluate",
            json={"predicted": preds[:1], "ground_truth": gts, "vocabulary": vocab},
        )
        assert r.status_code == 400
        assert r.json()["code"] == "input_error"

    def test_empty_corpus_is_input_error(self, client):
        r = client.post("/evaluate", json={"predicted": [], "ground_truth": []})
        assert r.status_code == 400
        assert r.json()["code"] == "input_error"

    def test_label_outside_vocabulary_is_input_error(self, client):
        preds, gts, vocab = corpus_docs()
        vocab["object_classes"] = vocab["object_classes"][:1] + ["z"]
        gts[0]["objects"][0]["label"] = 9
        r = client.post(
            "/evaluate",
            json={"predicted": preds, "ground_truth": gts, "vocabulary": vocab},
        )
        assert r.status_code == 400
        assert "vocabulary" in r.json()["detail"]

    def test_unknown_field_rejected(self, client):
        preds, gts, vocab = corpus_docs()
        r = client.post(
            "/evaluate",
            json={"predicted": preds, "ground_truth": gts, "vocabulary": vocab, "bogus": 1},
        )
        assert r.status_code == 400
        assert r.json()["code"] == "input_error"

    def test_malformed_graph_is_input_error(self, client):
        preds, gts, vocab = corpus_docs()
        preds[0]["objects"][0]["class_dist"] = [0.5, 0.5, 0.5, 0.5]
        r = client.post(
            "/evaluate",
            json={"predicted": preds, "ground_truth": gts, "vocabulary": vocab},
        )
        assert r.status_code == 400
        assert r.json()["code"] == "input_error"


class TestPerturb:
    def test_study_shape_and_unperturbed_column(self, client):
        _, gts, vocab = corpus_docs()
        r = client.post(
            "/perturb",
            json={"ground_truth": gts, "vocabulary": vocab, "seed": 5},
        )
        assert r.status_code == 200
        study = r.json()["study"]
        assert study["columns"][0] == {"target": "none", "ratio": 0.0}
        assert len(study["columns"]) == 1 + 3 * 3
        assert study["sggen"][0] == 100.0
        assert study["seed"] == 5

    def test_deterministic_given_seed(self, client):
        _, gts, vocab = corpus_docs()
        payload = {"ground_truth": gts, "vocabulary": vocab, "seed": 9}
        a = client.post("/perturb", json=payload)
        b = client.post("/perturb", json=payload)
        assert dumps_canonical(a.json()) == dumps_canonical(b.json())

    def test_unknown_target_is_input_error(self, client):
        _, gts, vocab = corpus_docs()
        r = client.post(
            "/perturb",
            json={"ground_truth": gts, "vocabulary": vocab, "targets": ["bogus"]},
        )
        assert r.status_code == 400
        assert r.json()["code"] == "input_error"


class TestPipeline:
    def payload(self, variant="full", **overrides):
        config = tiny_config(variant=variant, **overrides)
        world = world_from_doc(tiny_world_doc(), config.n_classes, config.n_predicates, config.d)
        params = PipelineParams.random(np.random.default_rng(7), config)
        proposals, _ = generate_instance(world, config.n_objects, 123)
        doc = config_to_doc(config)
        return {
            "proposals": {"objects": [
                {"box": p.box.as_list(), "class_dist": p.class_dist.tolist(), "feature": p.feature.tolist()}
                for p in proposals
            ], "edges": []},
            "params": params_to_doc(params),
            "config": doc,
        }, config, params, proposals

    def test_matches_library_forward(self, client):
        payload, config, params, proposals = self.payload()
        r = client.post("/pipeline", json=payload)
        assert r.status_code == 200
        want = scene_graph_to_doc(forward(config, params, proposals))
        assert dumps_canonical(r.json()["graph"]) == dumps_canonical(want)

    def test_seed_drives_random_prune(self, client):
        payload, config, params, proposals = self.payload(
            variant="random_prune",
            repn=RepnConfig(top_k=3, nms_threshold=0.7, max_candidates=8),
        )
        a = client.post("/pipeline", json=dict(payload, seed=1))
        b = client.post("/pipeline", json=dict(payload, seed=2))
        assert a.status_code == 200 and b.status_code == 200
        want = scene_graph_to_doc(forward(config, params, proposals, seed=1))
        assert dumps_canonical(a.json()["graph"]) == dumps_canonical(want)
        assert dumps_canonical(a.json()["graph"]) != dumps_canonical(b.json()["graph"])

    def test_params_config_mismatch_is_input_error(self, client):
        payload, *_ = self.payload()
        payload["config"]["n_predicates"] = 2
        r = client.post("/pipeline", json=payload)
        assert r.status_code == 400
        assert "config" in r.json()["detail"]

    def test_proposal_width_mismatch_is_input_error(self, client):
        payload, *_ = self.payload()
        for o in payload["proposals"]["objects"]:
            o["feature"] = o["feature"] + [0.0]
        r = client.post("/pipeline", json=payload)
        assert r.status_code == 400
        assert "feature" in r.json()["detail"]


class TestTrain:
    def config_doc(self, **overrides):
        doc = config_to_doc(tiny_config(**overrides))
        doc["world"] = tiny_world_doc()
        return doc

    def test_returns_params_and_trajectory(self, client):
        r = client.post("/train", json={"config": self.config_doc()})
        assert r.status_code == 200
        body = r.json()
        assert set(body) == {"params", "trajectory"}
        assert "union.w" in body["params"]
        assert [t["epoch"] for t in body["trajectory"]] == [0]
        assert set(body["trajectory"][0]) == {"epoch", "loss", "sggen", "sggen_plus"}

    def test_deterministic_and_seed_override(self, client):
        doc = self.config_doc()
        a = client.post("/train", json={"config": doc})
        b = client.post("/train", json={"config": doc})
        assert dumps_canonical(a.json()) == dumps_canonical(b.json())
        c = client.post("/train", json={"config": doc, "seed": 5})
        assert dumps_canonical(c.json()) != dumps_canonical(a.json())
        explicit = dict(doc, seed=5)
        d = client.post("/train", json={"config": explicit})
        assert dumps_canonical(d.json()["params"]) == dumps_canonical(c.json()["params"])

    def test_divergence_is_numerical_error(self, client):
        r = client.post("/train", json={"config": self.config_doc(lr=1e150, epochs=2)})
        assert r.status_code == 500
        body = r.json()
        assert body["code"] == "numerical_error"
        assert "diverged" in body["detail"]

    def test_bad_world_key_is_input_error(self, client):
        doc = self.config_doc()
        doc["world"]["bogus"] = 1
        r = client.post("/train", json={"config": doc})
        assert r.status_code == 400
        assert "world" in r.json()["detail"]

    def test_invalid_config_is_input_error(self, client):
        doc = self.config_doc()
        doc["n_classes"] = 0
        r = client.post("/train", json={"config": doc})
        assert r.status_code == 400
        assert r.json()["code"] == "input_error"
