"""Request handlers shared by the FastAPI app and the CLI's local mode.

Each handler is a pure function from a request model to a response model;
anything it writes to disk is listed in the response.  Output files are
timestamp-free and serialized with sorted keys, so a repeated request with
the same config and seed reproduces them byte for byte.  Existing outputs
are never overwritten unless the request sets ``force``.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .. import data as D
from .. import deploy as DP
from .. import distsim as DS
from .. import inference as I
from .. import metrics as M
from ..errors import ConfigError, DataError, UndefinedMetricError
from ..network import GCConfig, Network, build_network, insert_gc, predict, split_at_gc
from ..objective import ClassMapping
from ..training import TrainConfig, train
from . import schemas as S


def _check_writable(path: Optional[str], force: bool) -> None:
    if path and Path(path).exists() and not force:
        raise ConfigError(f"refusing to overwrite {path} (pass force=true)")


def _require_file(path: str) -> str:
    if not Path(path).is_file():
        raise ConfigError(f"file not found: {path}")
    return path


def load_dataset(cfg: S.DatasetConfig) -> D.Dataset:
    """Materialize the dataset a config describes, remapped if requested."""
    if cfg.source == "idx":
        ds = D.load_idx_dataset(_require_file(cfg.images), _require_file(cfg.labels))
    elif cfg.source == "csv":
        ds = D.load_csv_dataset(_require_file(cfg.csv), cfg.label_column)
    else:
        sp = cfg.synthetic
        ds = D.synthetic_gaussians(
            samples=sp.samples,
            width=sp.width,
            num_classes=sp.classes,
            ratio=(sp.positive_ratio, sp.negative_ratio),
            separation=sp.separation,
            seed=cfg.seed,
        )
    if cfg.limit is not None and cfg.limit < len(ds):
        ds = ds.subset(np.arange(cfg.limit))
    if cfg.remap_every_other:
        remapped, _ = D.remap_every_other(ds.y, ds.num_classes)
        ds = D.Dataset(ds.x, remapped, int(remapped.max()) + 1)
    return ds


def _split(ds: D.Dataset, cfg: S.DatasetConfig, which: str) -> D.Dataset:
    if which == "all":
        return ds
    train_ds, val_ds = D.train_val_split(ds, cfg.val_fraction, cfg.seed)
    return train_ds if which == "train" else val_ds


def build_from_config(cfg: S.ExperimentConfig, input_width: int, num_classes: int) -> Network:
    net = build_network(
        input_width=input_width,
        widths=cfg.network.widths,
        num_classes=num_classes,
        seed=cfg.train.seed,
        kind=cfg.network.kind,
        activation=cfg.network.activation,
    )
    for gc in cfg.gc_layers:
        net = insert_gc(
            net,
            gc.fraction,
            GCConfig(
                alpha=gc.alpha,
                beta=gc.beta,
                gate_tap=gc.gate_tap,
                gate_pool=gc.gate_pool,
                phi_init=gc.phi_init,
            ),
        )
    return net


def _policy(p: S.PolicySection) -> I.GatePolicy:
    return I.GatePolicy(mode=p.mode, position=p.position, threshold=p.threshold)


def evaluate(
    net: Network, ds: D.Dataset, policy: I.GatePolicy
) -> dict:
    """Flat metrics document; rates with empty denominators are omitted."""
    out: dict = {"samples": len(ds)}
    preds = predict(net, ds.x)
    out["accuracy"] = M.accuracy(preds, ds.y)
    if not net.gc_layers:
        return out
    omega = ClassMapping.binary_background(net.num_classes)
    gate_labels = omega.apply(ds.y)
    background = gate_labels == 0
    traces = I.infer_batch(net, ds.x, policy)
    gated = I.gated_predictions(traces)
    out["gated_accuracy"] = M.accuracy(gated, ds.y)
    out["stopped_fraction"] = sum(t.exit_gate is not None for t in traces) / len(ds)
    try:
        out["early_stopping"] = M.early_stopping_fraction(traces, background)
    except UndefinedMetricError:
        pass
    for i, gc in enumerate(net.gc_layers):
        prefix = f"gate{i}"
        dr = M.dropout_rate(gc.phi)
        out[f"gc{i}_dropout_rate"] = dr
        conf = M.confusion_at_gate(net, ds.x, ds.y, i, policy.threshold)
        out[f"{prefix}_stop_rate"] = M.stop_rate(conf)
        for name, fn in (
            ("negative_pass_through_rate", M.negative_pass_through_rate),
            ("positive_lost_rate", M.positive_lost_rate),
        ):
            try:
                out[f"{prefix}_{name}"] = fn(conf)
            except UndefinedMetricError:
                pass
        try:
            out[f"{prefix}_negative_correction_rate"] = M.negative_correction_rate(
                net, ds.x, ds.y, i, policy.threshold
            )
        except UndefinedMetricError:
            pass
        out[f"{prefix}_transmission_ratio"] = M.transmission_ratio(
            M.stop_rate(conf), dr
        )
        try:
            out[f"{prefix}_auc"] = I.roc_sweep(net, ds.x, ds.y, i).auc
        except DataError:
            pass
    return out


def metrics_json(metrics: dict) -> str:
    return json.dumps(metrics, sort_keys=True, indent=2) + "\n"


def handle_train(req: S.TrainRequest) -> S.TrainResponse:
    cfg = req.config
    out_dir = Path(cfg.output_dir)
    model_path = out_dir / "model.json"
    history_path = out_dir / "history.csv"
    metrics_path = out_dir / "metrics.json"
    for p in (model_path, history_path, metrics_path):
        _check_writable(str(p), req.force)
    ds = load_dataset(cfg.dataset)
    train_ds, val_ds = D.train_val_split(ds, cfg.dataset.val_fraction, cfg.dataset.seed)
    net = build_from_config(cfg, ds.width, ds.num_classes)
    tc = TrainConfig(
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        learning_rate=cfg.train.learning_rate,
        seed=cfg.train.seed,
        mode=cfg.train.mode,
        two_stage_epochs=cfg.train.two_stage_epochs,
        xi=cfg.train.xi,
    )
    result = train(net, train_ds.x, train_ds.y, tc, val_ds.x, val_ds.y)
    eval_ds = val_ds if len(val_ds) else train_ds
    metrics = evaluate(net, eval_ds, _policy(cfg.policy))
    out_dir.mkdir(parents=True, exist_ok=True)
    net.save(model_path)
    result.save_history(history_path)
    Path(metrics_path).write_text(metrics_json(metrics))
    last = result.history[-1]
    return S.TrainResponse(
        model_path=str(model_path),
        history_path=str(history_path),
        epochs=cfg.train.epochs,
        final_train_acc=last["train_acc"],
        final_val_acc=last["val_acc"] if last["val_acc"] != "" else None,
        metrics=metrics,
    )


def _load_model(path: str) -> Network:
    _require_file(path)
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") == "gcnet-deploy-model":
        return DP.load_deploy(path)
    return Network.from_dict(doc)


def handle_eval(req: S.EvalRequest) -> S.EvalResponse:
    _check_writable(req.output_path, req.force)
    net = _load_model(req.model_path)
    ds = _split(load_dataset(req.dataset), req.dataset, req.split)
    if ds.num_classes > net.num_classes:
        raise DataError(
            f"dataset has {ds.num_classes} classes, model head only {net.num_classes}"
        )
    metrics = evaluate(net, ds, _policy(req.policy))
    if req.output_path:
        Path(req.output_path).parent.mkdir(parents=True, exist_ok=True)
        Path(req.output_path).write_text(metrics_json(metrics))
    return S.EvalResponse(metrics=metrics, output_path=req.output_path)


def handle_roc(req: S.RocRequest) -> S.RocResponse:
    _check_writable(req.output_path, req.force)
    net = _load_model(req.model_path)
    ds = _split(load_dataset(req.dataset), req.dataset, req.split)
    roc = I.roc_sweep(net, ds.x, ds.y, req.gate_index, req.thresholds)
    if req.output_path:
        Path(req.output_path).parent.mkdir(parents=True, exist_ok=True)
        Path(req.output_path).write_text(roc.to_csv())
    return S.RocResponse(
        auc=roc.auc, num_points=len(roc.points), output_path=req.output_path
    )


def handle_sweep(req: S.SweepRequest) -> S.SweepResponse:
    _check_writable(req.output_path, req.force)
    cfg = req.config
    if not cfg.gc_layers:
        raise ConfigError("sweep requires at least one GC layer in the config")
    ds = load_dataset(cfg.dataset)
    train_ds, val_ds = D.train_val_split(ds, cfg.dataset.val_fraction, cfg.dataset.seed)
    eval_ds = val_ds if len(val_ds) else train_ds
    rows = []
    for alpha, beta in itertools.product(req.alphas, req.betas):
        if alpha * len(cfg.gc_layers) >= 1.0:
            raise ConfigError(
                f"alpha {alpha} over {len(cfg.gc_layers)} gates breaks normalization"
            )
        cell = {"accuracy": [], "gated_accuracy": [], "early_stopping": [], "sparsity": []}
        for seed in req.seeds:
            run_cfg = cfg.model_copy(deep=True)
            run_cfg.train.seed = seed
            for gl in run_cfg.gc_layers:
                gl.alpha = alpha
                gl.beta = beta
            net = build_from_config(run_cfg, ds.width, ds.num_classes)
            tc = TrainConfig(
                epochs=run_cfg.train.epochs,
                batch_size=run_cfg.train.batch_size,
                learning_rate=run_cfg.train.learning_rate,
                seed=seed,
                mode=run_cfg.train.mode,
                two_stage_epochs=run_cfg.train.two_stage_epochs,
                xi=run_cfg.train.xi,
            )
            train(net, train_ds.x, train_ds.y, tc)
            m = evaluate(net, eval_ds, _policy(run_cfg.policy))
            cell["accuracy"].append(m["accuracy"])
            cell["gated_accuracy"].append(m.get("gated_accuracy", m["accuracy"]))
            if "early_stopping" in m:
                cell["early_stopping"].append(m["early_stopping"])
            sparsities = [v for k, v in m.items() if k.endswith("_dropout_rate")]
            cell["sparsity"].append(float(np.mean(sparsities)) if sparsities else 0.0)
        rows.append(
            S.SweepRow(
                alpha=alpha,
                beta=beta,
                accuracy=float(np.mean(cell["accuracy"])),
                gated_accuracy=float(np.mean(cell["gated_accuracy"])),
                early_stopping=(
                    float(np.mean(cell["early_stopping"]))
                    if cell["early_stopping"]
                    else None
                ),
                sparsity=float(np.mean(cell["sparsity"])),
                seeds=len(req.seeds),
            )
        )
    if req.output_path:
        lines = ["alpha,beta,accuracy,gated_accuracy,early_stopping,sparsity,seeds"]
        for r in rows:
            es = "" if r.early_stopping is None else repr(r.early_stopping)
            lines.append(
                f"{r.alpha!r},{r.beta!r},{r.accuracy!r},{r.gated_accuracy!r},"
                f"{es},{r.sparsity!r},{r.seeds}"
            )
        Path(req.output_path).parent.mkdir(parents=True, exist_ok=True)
        Path(req.output_path).write_text("\n".join(lines) + "\n")
    return S.SweepResponse(rows=rows, output_path=req.output_path)


def handle_simulate(req: S.SimulateRequest) -> S.SimulateResponse:
    _check_writable(req.output_path, req.force)
    net = _load_model(req.model_path)
    if req.topology is not None:
        topo = DS.IslandTopology.from_dict(req.topology.model_dump())
    else:
        topo = DS.IslandTopology.load(_require_file(req.topology_path))
    parts = split_at_gc(net)
    plan = DS.assign(parts, topo)
    stream_spec = DS.StreamSpec(
        total=req.stream.total,
        ratio=(req.stream.positive_ratio, req.stream.negative_ratio),
        source=req.stream.source,
    )
    dataset = load_dataset(req.dataset) if req.dataset is not None else None
    stream = DS.make_stream(
        stream_spec,
        width=net.input_width,
        num_classes=net.num_classes,
        seed=req.stream.seed,
        dataset=dataset,
    )
    equiv = DS.equivalence_check(net, parts, stream.x[: min(64, len(stream.x))])
    report = DS.simulate_stream(plan, net, stream.x, _policy(req.policy))
    if req.output_path:
        Path(req.output_path).parent.mkdir(parents=True, exist_ok=True)
        report.save(req.output_path)
    return S.SimulateResponse(
        report=report.to_dict(),
        equivalence_max_abs_diff=equiv.max_abs_diff,
        output_path=req.output_path,
    )


def handle_export_deploy(req: S.ExportDeployRequest) -> S.ExportDeployResponse:
    _check_writable(req.output_path, req.force)
    net = _load_model(req.model_path)
    if not net.gc_layers:
        raise ConfigError("deploy export needs at least one GC layer")
    Path(req.output_path).parent.mkdir(parents=True, exist_ok=True)
    doc = DP.save_deploy(net, req.output_path)
    return S.ExportDeployResponse(
        output_path=req.output_path, sizes=DP.deploy_size_report(doc)
    )


def handle_infer(req: S.InferRequest) -> S.InferResponse:
    net = _load_model(req.model_path)
    x = np.asarray(req.samples, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise DataError(
            f"samples shape {x.shape} incompatible with model input width "
            f"{net.input_width}"
        )
    traces = I.infer_batch(net, x, _policy(req.policy))
    return S.InferResponse(traces=[t.to_json_obj() for t in traces])
