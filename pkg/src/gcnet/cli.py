"""Thin command-line client.

All work happens in the service handlers; the CLI parses arguments, builds
the request models, dispatches them either in-process (default) or to a
running service (``--server URL``), writes nothing itself, and prints the
response as JSON.  Flags override the corresponding config-file fields.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error,
5 equivalence violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from pydantic import BaseModel, ValidationError

from .errors import ConfigError, GCNetError
from .service import handlers
from .service import schemas as S

_LOCAL_ROUTES = {
    "/train": (S.TrainRequest, handlers.handle_train),
    "/eval": (S.EvalRequest, handlers.handle_eval),
    "/roc": (S.RocRequest, handlers.handle_roc),
    "/sweep": (S.SweepRequest, handlers.handle_sweep),
    "/simulate": (S.SimulateRequest, handlers.handle_simulate),
    "/export-deploy": (S.ExportDeployRequest, handlers.handle_export_deploy),
    "/infer": (S.InferRequest, handlers.handle_infer),
}


def _dispatch(server: str | None, route: str, request: BaseModel) -> dict:
    if server is None:
        _, handler = _LOCAL_ROUTES[route]
        return handler(request).model_dump()
    import httpx

    resp = httpx.post(
        server.rstrip("/") + route,
        content=request.model_dump_json(),
        headers={"content-type": "application/json"},
        timeout=None,
    )
    body = resp.json()
    if resp.status_code >= 400:
        err = body.get("error", {})
        raise _remote_error(err)
    return body


def _remote_error(err: dict) -> GCNetError:
    exc = GCNetError(err.get("message", "remote error"))
    exc.exit_code = int(err.get("exit_code", 1))
    return exc


def _load_config(path: str, args: argparse.Namespace) -> S.ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    # flag overrides beat config-file values
    overrides = {
        "seed": ("train", "seed"),
        "epochs": ("train", "epochs"),
        "mode": ("train", "mode"),
        "threshold": ("policy", "threshold"),
    }
    for flag, (section, key) in overrides.items():
        value = getattr(args, flag, None)
        if value is not None:
            doc.setdefault(section, {})[key] = value
    if getattr(args, "output_dir", None) is not None:
        doc["output_dir"] = args.output_dir
    return S.ExperimentConfig.model_validate(doc)


def _default_out(cfg: S.ExperimentConfig, name: str, explicit: str | None) -> str:
    return explicit if explicit is not None else str(Path(cfg.output_dir) / name)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"bad numeric list {text!r}: {exc}") from None


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcnet",
        description="Gated-compression networks: train, evaluate, simulate.",
    )
    parser.add_argument(
        "--server",
        default=None,
        help="base URL of a running gcnet service; default runs in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("-c", "--config", required=True, help="experiment config JSON")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("train", help="train a model per the config")
    add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--mode", choices=["end_to_end", "two_stage", "gate_only", "compression_only"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--output-dir")

    p = sub.add_parser("eval", help="evaluate a saved model")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["all", "train", "val"], default="all")
    p.add_argument("--out", help="metrics JSON path (default <output_dir>/metrics.json)")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("roc", help="gate ROC curve and AUC")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--gate", type=int, default=0)
    p.add_argument("--split", choices=["all", "train", "val"], default="all")
    p.add_argument("--out", help="ROC CSV path (default <output_dir>/roc.csv)")

    p = sub.add_parser("sweep", help="alpha/beta grid of training runs")
    add_common(p)
    p.add_argument("--alphas", required=True, help="comma-separated, e.g. 0.2,0.5,0.8")
    p.add_argument("--betas", required=True, help="comma-separated, e.g. 0,0.1,0.4")
    p.add_argument("--seeds", default="0", help="comma-separated seeds (default 0)")
    p.add_argument("--out", help="sweep CSV path (default <output_dir>/sweep.csv)")

    p = sub.add_parser("simulate", help="cost-simulate a deployed split model")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--topology", help="topology JSON path (overrides config)")
    p.add_argument("--out", help="cost report path (default <output_dir>/cost_report.json)")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("export-deploy", help="export a 1-bit mask deploy model")
    add_common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _run_command(args: argparse.Namespace) -> dict:
    if args.command == "train":
        cfg = _load_config(args.config, args)
        return _dispatch(args.server, "/train", S.TrainRequest(config=cfg, force=args.force))
    if args.command == "eval":
        cfg = _load_config(args.config, args)
        req = S.EvalRequest(
            model_path=args.model,
            dataset=cfg.dataset,
            policy=cfg.policy,
            split=args.split,
            output_path=_default_out(cfg, "metrics.json", args.out),
            force=args.force,
        )
        return _dispatch(args.server, "/eval", req)
    if args.command == "roc":
        cfg = _load_config(args.config, args)
        req = S.RocRequest(
            model_path=args.model,
            dataset=cfg.dataset,
            gate_index=args.gate,
            split=args.split,
            output_path=_default_out(cfg, "roc.csv", args.out),
            force=args.force,
        )
        return _dispatch(args.server, "/roc", req)
    if args.command == "sweep":
        cfg = _load_config(args.config, args)
        req = S.SweepRequest(
            config=cfg,
            alphas=_parse_floats(args.alphas),
            betas=_parse_floats(args.betas),
            seeds=_parse_ints(args.seeds),
            output_path=_default_out(cfg, "sweep.csv", args.out),
            force=args.force,
        )
        return _dispatch(args.server, "/sweep", req)
    if args.command == "simulate":
        cfg = _load_config(args.config, args)
        topo = args.topology or cfg.topology_path
        if topo is None:
            raise ConfigError("simulate needs --topology or topology_path in the config")
        req = S.SimulateRequest(
            model_path=args.model,
            topology_path=topo,
            stream=cfg.stream or S.StreamSection(),
            dataset=cfg.dataset if (cfg.stream and cfg.stream.source == "dataset") else None,
            policy=cfg.policy,
            output_path=_default_out(cfg, "cost_report.json", args.out),
            force=args.force,
        )
        return _dispatch(args.server, "/simulate", req)
    if args.command == "export-deploy":
        req = S.ExportDeployRequest(
            model_path=args.model, output_path=args.out, force=args.force
        )
        return _dispatch(args.server, "/export-deploy", req)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    try:
        result = _run_command(args)
    except ValidationError as exc:
        err = ConfigError(str(exc))
        _print_error(err)
        return err.exit_code
    except GCNetError as exc:
        _print_error(exc)
        return exc.exit_code
    print(json.dumps(result, sort_keys=True, indent=2, default=str))
    return 0


def _print_error(exc: GCNetError) -> None:
    body = {
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": exc.exit_code,
        }
    }
    print(json.dumps(body, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
