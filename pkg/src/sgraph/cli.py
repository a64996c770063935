"""Command line interface.

Each subcommand builds a JSON payload, sends it to the HTTP service, and
prints the JSON result to stdout (canonically, so repeat runs are
byte-identical) with any human-readable table on stderr. By default the
service runs in-process; --server targets a remote instance instead.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

import argparse
import asyncio
import json
import os
import sys

import httpx

from .graph_model import dumps_canonical

_TARGET_SHORTHAND = {
    "without": "without_relationships",
    "with": "with_relationships",
    "both": "both",
    "without_relationships": "without_relationships",
    "with_relationships": "with_relationships",
}


class CliInputError(Exception):
    """Anything wrong with arguments or input files (exit 1)."""


class CliNumericalError(Exception):
    """Numerical failure reported by the service (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliInputError(message)


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise CliInputError(f"{path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise CliInputError(f"{path}: invalid JSON ({e})") from e


def _corpus_paths(path):
    """A .json file is a one-graph corpus; a directory holds one per file."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(".json"))
        if not names:
            raise CliInputError(f"{path}: no .json files in directory")
        return [os.path.join(path, n) for n in names]
    if not os.path.exists(path):
        raise CliInputError(f"{path}: no such file or directory")
    return [path]


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise CliInputError(f"{path}: {e.strerror or e}") from e


def _emit(doc) -> str:
    return dumps_canonical(doc) + "\n"


def _post(args, path, payload):
    async def go():
        if args.server:
            async with httpx.AsyncClient(base_url=args.server.rstrip("/"), timeout=600.0) as client:
                return await client.post(path, json=payload)
        from .service import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport, base_url="http://sgraph", timeout=600.0) as client:
            return await client.post(path, json=payload)

    try:
        response = asyncio.run(go())
    except httpx.HTTPError as e:
        raise CliInputError(f"cannot reach {args.server}: {e}") from e
    if response.status_code == 200:
        return response.json()
    try:
        body = response.json()
    except ValueError:
        body = {}
    detail = str(body.get("detail", response.text or response.status_code))
    if response.status_code == 400 or body.get("code") == "input_error":
        raise CliInputError(detail)
    raise CliNumericalError(detail)


def _parse_ks(text):
    try:
        ks = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise CliInputError(f"--k: expected comma-separated integers, got {text!r}") from None
    if not ks:
        raise CliInputError("--k: needs at least one cutoff")
    return ks


def _parse_ratios(text):
    try:
        ratios = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise CliInputError(f"--ratios: expected comma-separated numbers, got {text!r}") from None
    if not ratios:
        raise CliInputError("--ratios: needs at least one ratio")
    return ratios


def _parse_targets(text):
    targets = []
    for part in text.split(","):
        name = part.strip()
        if not name:
            continue
        if name not in _TARGET_SHORTHAND:
            raise CliInputError(f"--targets: unknown target {name!r}")
        targets.append(_TARGET_SHORTHAND[name])
    if not targets:
        raise CliInputError("--targets: needs at least one target")
    return targets


def cmd_evaluate(args) -> int:
    pred_paths = _corpus_paths(args.pred)
    gt_paths = _corpus_paths(args.gt)
    if len(pred_paths) != len(gt_paths):
        raise CliInputError(
            f"--pred has {len(pred_paths)} graphs but --gt has {len(gt_paths)}"
        )
    payload = {
        "predicted": [_read_json(p) for p in pred_paths],
        "ground_truth": [_read_json(p) for p in gt_paths],
        "vocabulary": _read_json(args.vocab),
        "iou_threshold": args.iou,
        "ks": _parse_ks(args.k),
    }
    result = _post(args, "/evaluate", payload)
    out = _emit(result["report"])
    sys.stdout.write(out)
    print(result["table"], file=sys.stderr)
    if args.json:
        _write_text(args.json, out)
    return 0


def cmd_perturb(args) -> int:
    payload = {
        "ground_truth": [_read_json(p) for p in _corpus_paths(args.gt)],
        "vocabulary": _read_json(args.vocab),
        "targets": _parse_targets(args.targets),
        "ratios": _parse_ratios(args.ratios),
        "seed": args.seed,
    }
    result = _post(args, "/perturb", payload)
    sys.stdout.write(_emit(result["study"]))
    print(result["table"], file=sys.stderr)
    return 0


def cmd_pipeline(args) -> int:
    payload = {
        "proposals": _read_json(args.proposals),
        "params": _read_json(args.params),
        "config": _read_json(args.config),
    }
    result = _post(args, "/pipeline", payload)
    out = _emit(result["graph"])
    sys.stdout.write(out)
    if args.out:
        _write_text(args.out, out)
    return 0


def cmd_train_toy(args) -> int:
    payload = {"config": _read_json(args.config), "seed": args.seed}
    result = _post(args, "/train", payload)
    _write_text(args.out, _emit(result["params"]))
    sys.stdout.write(_emit({"checkpoint": args.out, "trajectory": result["trajectory"]}))
    if result["trajectory"]:
        last = result["trajectory"][-1]
        print(
            f"epoch {last['epoch']}: loss {last['loss']:.4f}, "
            f"held-out sggen@50 {100.0 * last['sggen']:.1f}, "
            f"sggen_plus@50 {100.0 * last['sggen_plus']:.1f}",
            file=sys.stderr,
        )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgraph", description="Scene graph toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument("--server", default=None, help="base URL of a running service (default: in-process)")

    p = sub.add_parser("evaluate", parents=[common], help="score predicted graphs against ground truth")
    p.add_argument("--pred", required=True, help="predicted graph .json file or directory")
    p.add_argument("--gt", required=True, help="ground truth .json file or directory")
    p.add_argument("--vocab", required=True, help="vocabulary .json file")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold (default 0.5)")
    p.add_argument("--k", default="50,100", help="comma-separated recall cutoffs (default 50,100)")
    p.add_argument("--json", default=None, help="also write the JSON report to this path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("perturb", parents=[common], help="corruption sensitivity study on ground truth")
    p.add_argument("--gt", required=True, help="ground truth .json file or directory")
    p.add_argument("--vocab", required=True, help="vocabulary .json file")
    p.add_argument("--targets", default="without,with,both",
                   help="comma-separated: without, with, both (default all three)")
    p.add_argument("--ratios", default="0.2,0.5,1.0", help="comma-separated corruption ratios")
    p.add_argument("--seed", type=int, default=0, help="corruption seed (default 0)")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("pipeline", parents=[common], help="run proposals through the trained pipeline")
    p.add_argument("--proposals", required=True, help="proposal graph .json file")
    p.add_argument("--params", required=True, help="parameter checkpoint .json file")
    p.add_argument("--config", required=True, help="pipeline config .json file")
    p.add_argument("--out", default=None, help="also write the scene graph to this path")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train-toy", parents=[common], help="train on the synthetic world")
    p.add_argument("--config", required=True, help="pipeline config .json file (world under \"world\")")
    p.add_argument("--out", required=True, help="write the parameter checkpoint to this path")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except CliNumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
