"""FastAPI application: one endpoint per workflow.

Every handler parses its JSON payloads with the core parsers, so the HTTP
surface accepts exactly what the library accepts. Failures map to two error
bodies: 400 {"code": "input_error"} for anything wrong with the request and
500 {"code": "numerical_error"} for non-finite numerics or divergence.
"""

from dataclasses import replace

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..graph_model import (
    GraphFormatError,
    ground_truth_from_doc,
    scene_graph_from_doc,
    scene_graph_to_doc,
    vocabulary_from_doc,
)
from ..metrics import MatchConfig, evaluate_corpus, format_report, report_to_doc
from ..numerics import NumericsError
from ..perturb import perturbation_study
from ..pipeline import (
    config_from_doc,
    forward,
    params_from_doc,
    params_to_doc,
    train_toy,
    world_from_doc,
)
from .schemas import (
    EvaluateRequest,
    EvaluateResponse,
    HealthResponse,
    PerturbRequest,
    PerturbResponse,
    PipelineRequest,
    PipelineResponse,
    TrainRequest,
    TrainResponse,
)


def _check_vocab_fit(vocab, predicted, ground_truth):
    c, p = vocab.n_object_classes, vocab.n_predicate_classes
    for i, g in enumerate(ground_truth):
        for j, o in enumerate(g.objects):
            if not (0 <= o.label < c):
                raise GraphFormatError(f"ground_truth[{i}].objects[{j}]: label outside the vocabulary")
        for j, (_, pred, _) in enumerate(g.triplets):
            if not (0 <= pred < p):
                raise GraphFormatError(f"ground_truth[{i}].triplets[{j}]: predicate outside the vocabulary")
    for i, g in enumerate(predicted):
        for j, o in enumerate(g.objects):
            if o.class_dist.size != c:
                raise GraphFormatError(f"predicted[{i}].objects[{j}]: class_dist width != vocabulary size")
        for j, e in enumerate(g.edges):
            if e.predicate_dist is not None and e.predicate_dist.size != p:
                raise GraphFormatError(f"predicted[{i}].edges[{j}]: predicate_dist width != vocabulary size")


def _check_params_fit(config, params):
    checks = (
        ("repn.phi.w1 input width", params.repn.phi.w1.shape[0], config.n_classes),
        ("union.w shape", params.w_union.shape, (2 * config.d, config.d)),
        ("head.w output width", params.w_head.shape[1], config.n_predicates),
        ("visual.w_skip width", params.visual.w_skip.shape[0], config.d),
        ("semantic.w_skip width", params.semantic.w_skip.shape[0], config.n_classes),
    )
    for what, got, want in checks:
        if got != want:
            raise ValueError(f"params: {what} {got} does not match the config ({want})")


def _check_proposals_fit(config, proposals):
    for i, prop in enumerate(proposals):
        if prop.class_dist.size != config.n_classes:
            raise ValueError(f"proposals.objects[{i}]: class_dist width != config.n_classes")
        if prop.feature.size != config.d:
            raise ValueError(f"proposals.objects[{i}]: feature width != config.d")


def create_app() -> FastAPI:
    app = FastAPI(title="sgraph", version=__version__)

    def _input_error(request, exc):
        return JSONResponse(status_code=400, content={"code": "input_error", "detail": str(exc)})

    def _numerical_error(request, exc):
        return JSONResponse(status_code=500, content={"code": "numerical_error", "detail": str(exc)})

    app.add_exception_handler(RequestValidationError, _input_error)
    app.add_exception_handler(GraphFormatError, _input_error)
    app.add_exception_handler(ValueError, _input_error)
    app.add_exception_handler(NumericsError, _numerical_error)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        if not req.predicted:
            raise ValueError("evaluate: empty corpus")
        if len(req.predicted) != len(req.ground_truth):
            raise ValueError(
                f"evaluate: {len(req.predicted)} predicted graphs vs {len(req.ground_truth)} ground truths"
            )
        predicted = [scene_graph_from_doc(d) for d in req.predicted]
        ground_truth = [ground_truth_from_doc(d) for d in req.ground_truth]
        if req.vocabulary is not None:
            _check_vocab_fit(vocabulary_from_doc(req.vocabulary), predicted, ground_truth)
        config = MatchConfig(iou_threshold=req.iou_threshold, ks=tuple(req.ks))
        report = evaluate_corpus(zip(predicted, ground_truth), config)
        return EvaluateResponse(report=report_to_doc(report), table=format_report(report))

    @app.post("/perturb", response_model=PerturbResponse)
    def perturb(req: PerturbRequest) -> PerturbResponse:
        vocab = vocabulary_from_doc(req.vocabulary)
        corpus = [ground_truth_from_doc(d) for d in req.ground_truth]
        _check_vocab_fit(vocab, [], corpus)
        config = MatchConfig(iou_threshold=req.iou_threshold, ks=tuple(req.ks))
        study = perturbation_study(
            corpus, vocab, targets=tuple(req.targets), ratios=tuple(req.ratios),
            seed=req.seed, config=config,
        )
        return PerturbResponse(study=study.to_doc(), table=study.format_table())

    @app.post("/pipeline", response_model=PipelineResponse)
    def pipeline(req: PipelineRequest) -> PipelineResponse:
        config = config_from_doc(req.config)
        params = params_from_doc(req.params)
        _check_params_fit(config, params)
        proposals = scene_graph_from_doc(req.proposals).objects
        _check_proposals_fit(config, proposals)
        graph = forward(config, params, proposals, seed=req.seed)
        return PipelineResponse(graph=scene_graph_to_doc(graph))

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        config = config_from_doc(req.config)
        if req.seed is not None:
            config = replace(config, seed=int(req.seed))
        world = world_from_doc(req.config.get("world", {}), config.n_classes, config.n_predicates, config.d)
        params, trajectory = train_toy(config, world)
        return TrainResponse(params=params_to_doc(params), trajectory=trajectory)

    return app


app = create_app()
