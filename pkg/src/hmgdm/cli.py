"""Command-line orchestration.

Subcommands: build-graphs, pretrain, finetune, eval, embed, plot. Run
artifacts land under a directory named by the config hash and seed, and
every command is deterministic for a fixed config + seed. Exit codes:
0 success, 1 partial failure, 2 invalid configuration or input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import shlex
import subprocess
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import plots
from .backbone import load_backbone, save_backbone
from .config import ExperimentConfig, config_hash, config_to_text, load_config
from .downstream import (
    embed_graph,
    final_vertex_states,
    finetune_head,
    finetune_with_attention_pool,
    load_head,
    save_head,
    HeadConfig,
)
from .entity_graph import build_entity_graph, read_bundle, write_bundle
from .latent_codec import (
    encode_graph,
    load_codec,
    read_latent_graph,
    save_codec,
    write_latent_graph,
)
from .mask_split import pack_mask, split_graph
from .metrics import (
    accuracy,
    concordance_index,
    km_estimator,
    logrank_test,
    macro_f1,
    median_risk_split,
)
from .pretrain import gather_tiles, rmse_vs_t, train_stage1, train_stage2

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    env_seed = os.environ.get("HMGDM_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ValueError(f"invalid config: HMGDM_SEED={env_seed!r} not an integer")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed  # explicit flag outranks the environment
    cfg.validate()
    return cfg


def _run_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    return Path(cfg.paths.run_dir) / f"{config_hash(cfg)}-s{cfg.seed}"


def _write_csv(path: Path, header: list[str], rows: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_labels(path: Path, task: str) -> dict:
    """classify: id,label. survival: id,time,event."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if task == "classify":
                out[row["id"]] = int(row["label"])
            else:
                out[row["id"]] = (float(row["time"]), int(row["event"]))
    return out


def _list_images(in_dir: Path) -> list[Path]:
    return sorted(
        p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )


def cmd_build_graphs(args) -> int:
    cfg = _resolve_config(args)
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    if not in_dir.is_dir():
        raise ValueError(f"invalid input: {in_dir} is not a directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    images = _list_images(in_dir)
    params = cfg.graph_params()

    failures: list[str] = []
    if args.kernel and images:
        cmd = shlex.split(args.kernel) + [
            "--in", str(in_dir),
            "--out", str(out_dir),
            "--regions", str(params.n_regions),
            "--compactness", repr(params.compactness),
            "--iters", str(params.iterations),
            "--tile", str(params.tile),
            "--dilation", str(params.dilation_radius),
            "--workers", str(args.workers),
        ]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            raise RuntimeError(f"kernel failed with exit code {proc.returncode}")
    elif not args.kernel:
        for img_path in images:
            try:
                graph = build_entity_graph(_load_image(img_path), params)
                write_bundle(out_dir / (img_path.stem + ".hmgg"), graph)
            except Exception as exc:  # per-file failure is recorded, not fatal
                failures.append(img_path.name)
                sys.stderr.write(f"failed {img_path.name}: {exc}\n")

    rows = []
    for img_path in images:
        bundle_path = out_dir / (img_path.stem + ".hmgg")
        if bundle_path.exists() and img_path.name not in failures:
            data = bundle_path.read_bytes()
            graph = read_bundle(bundle_path)
            rows.append(
                [img_path.name, graph.n_vertices, graph.n_edges, _sha256(data), "ok"]
            )
        else:
            rows.append([img_path.name, "", "", "", "failed"])
            if img_path.name not in failures:
                failures.append(img_path.name)
    _write_csv(
        out_dir / "manifest.csv",
        ["filename", "n_vertices", "n_edges", "sha256", "status"],
        rows,
    )
    print(f"built {len(rows) - len(failures)}/{len(rows)} bundles -> {out_dir}")
    return 1 if failures else 0


def _load_bundles(graph_dir: Path):
    paths = sorted(Path(graph_dir).glob("*.hmgg"))
    if not paths:
        raise ValueError(f"invalid input: no .hmgg bundles in {graph_dir}")
    graphs, ids, bad = [], [], 0
    for p in paths:
        try:
            graphs.append(read_bundle(p))
            ids.append(p.stem)
        except ValueError as exc:
            bad += 1
            sys.stderr.write(f"skipping corrupted bundle {p.name}: {exc}\n")
    if not graphs:
        raise ValueError(f"invalid input: no readable bundles in {graph_dir}")
    return graphs, ids, bad


def _trace_csv(path: Path, trace) -> None:
    rows = []
    for e in trace:
        d = e if isinstance(e, dict) else asdict(e)
        extra = d.pop("extra", {}) or {}
        d.update(extra)
        rows.append(d)
    header = sorted({k for r in rows for k in r}, key=lambda k: (k != "epoch", k))
    _write_csv(path, header, [[r.get(k, "") for k in header] for r in rows])


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    if args.mask_ratio is not None:
        cfg.mask.r_m = args.mask_ratio
        cfg.validate()
    run_dir = _run_dir(cfg, args.run_dir)
    chash = config_hash(cfg)

    resume_state = None
    ckpt_path = run_dir / "checkpoint.pt"
    if args.resume and ckpt_path.exists():
        blob = torch.load(ckpt_path, map_location="cpu", weights_only=False)
        if blob["config_hash"] != chash:
            sys.stderr.write(
                "refusing to resume: checkpoint was written by a different config\n"
            )
            return 2
        resume_state = blob

    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(config_to_text(cfg))
    graphs, ids, _ = _load_bundles(Path(args.graphs))
    train_cfg = cfg.train_config()
    codec_cfg = cfg.codec_config()

    if resume_state is not None:
        codec = load_codec(run_dir / "codec.pt")
        stage1_trace = None
    else:
        tiles = gather_tiles(graphs, max_tiles=args.max_tiles, seed=cfg.seed)
        codec, stage1_trace = train_stage1(
            tiles, codec_cfg, train_cfg, log=print if args.verbose else None
        )
        save_codec(run_dir / "codec.pt", codec)
        _trace_csv(run_dir / "stage1_trace.csv", stage1_trace)

    latent_dir = run_dir / "latents"
    latent_dir.mkdir(exist_ok=True)
    latents = []
    for gid, g in zip(ids, graphs):
        lpath = latent_dir / f"{gid}.hmgl"
        if lpath.exists():
            latents.append(read_latent_graph(lpath))
        else:
            lg = encode_graph(codec, g)
            write_latent_graph(lpath, lg)
            latents.append(lg)

    schedule = train_cfg.schedule()
    _write_csv(
        run_dir / "schedule.csv",
        ["t", "beta", "alpha", "alpha_bar"],
        [
            [
                t,
                repr(float(schedule.betas[t])),
                repr(float(schedule.alphas[t])),
                repr(float(schedule.alpha_bar[t])),
            ]
            for t in range(schedule.T + 1)
        ],
    )
    mask_blobs = {"r_m": np.float64(train_cfg.r_m), "seed": np.int64(cfg.seed)}
    for i, lg in enumerate(latents):
        if lg.vertex_latents.shape[0] < 2:
            continue
        _, _, split = split_graph(lg, train_cfg.r_m, cfg.seed + i)
        mask_blobs[f"v{i}"] = np.frombuffer(pack_mask(split.vertex_mask), dtype=np.uint8)
        mask_blobs[f"e{i}"] = np.frombuffer(pack_mask(split.edge_mask), dtype=np.uint8)
    np.savez(run_dir / "masks.npz", **mask_blobs)

    def on_epoch(epoch: int, state: dict) -> None:
        state["config_hash"] = chash
        tmp = ckpt_path.with_suffix(".tmp")
        torch.save(state, tmp)
        tmp.replace(ckpt_path)

    model, stage2_trace = train_stage2(
        latents,
        train_cfg,
        resume=resume_state,
        on_epoch=on_epoch,
        log=print if args.verbose else None,
    )
    save_backbone(run_dir / "backbone.pt", model)
    _trace_csv(run_dir / "stage2_trace.csv", stage2_trace)

    t_grid = (
        [int(x) for x in args.rmse_grid.split(",")]
        if args.rmse_grid
        else sorted({1, train_cfg.T // 4, train_cfg.T // 2, 3 * train_cfg.T // 4, train_cfg.T})
    )
    rmse_rows = rmse_vs_t(
        model, schedule, latents, t_grid, train_cfg.r_m, seed=cfg.seed
    )
    _write_csv(
        run_dir / "rmse_t.csv",
        ["t", "rmse"],
        [[r["t"], repr(float(r["rmse"]))] for r in rmse_rows],
    )
    traces = {"stage2": stage2_trace}
    if stage1_trace is not None:
        traces["stage1"] = stage1_trace
    plots.plot_loss_trace(traces, run_dir / "loss_trace.png")
    plots.plot_rmse_t({"trained": rmse_rows}, run_dir / "rmse_t.png")
    print(f"pretraining complete -> {run_dir}")
    return 0


def _graph_embeddings(cfg: ExperimentConfig, run_dir: Path, graph_dir: Path):
    """(ids, embeddings or vertex-state list) for every readable bundle."""
    codec = load_codec(run_dir / "codec.pt")
    model = load_backbone(run_dir / "backbone.pt")
    graphs, ids, _ = _load_bundles(graph_dir)
    states = []
    for g in graphs:
        lg = encode_graph(codec, g)
        states.append(final_vertex_states(lg, model))
    return ids, states, model


def _pool_states(states, mode: str, score_vector=None) -> np.ndarray:
    from .downstream import readout

    rows = [readout(s, mode, score_vector)[0] for s in states]
    return np.stack(rows)


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    run_dir = _run_dir(cfg, args.run_dir)
    labels = _read_labels(Path(args.labels), args.task)
    ids, states, _ = _graph_embeddings(cfg, run_dir, Path(args.graphs))
    keep = [i for i, gid in enumerate(ids) if gid in labels]
    if not keep:
        raise ValueError("invalid input: no bundle ids match the label file")
    states = [states[i] for i in keep]
    ids = [ids[i] for i in keep]
    head_cfg = HeadConfig(
        epochs=cfg.downstream.head_epochs,
        lr=cfg.downstream.head_lr,
        hidden=cfg.downstream.head_hidden,
        seed=cfg.seed,
    )
    if args.task == "classify":
        targets = np.array([labels[g] for g in ids], dtype=np.int64)
    else:
        times = np.array([labels[g][0] for g in ids])
        events = np.array([labels[g][1] for g in ids], dtype=np.int64)
        targets = (times, events)

    score = None
    if cfg.downstream.readout == "attention":
        pool, head, trace = finetune_with_attention_pool(
            states, targets, args.task, head_cfg, log=print if args.verbose else None
        )
        score = pool.score.detach().numpy().astype(np.float64)
    else:
        embeddings = _pool_states(states, cfg.downstream.readout)
        head, trace = finetune_head(
            embeddings, targets, args.task, head_cfg,
            log=print if args.verbose else None,
        )
    meta = {"d": states[0].shape[1], "hidden": head_cfg.hidden,
            "readout": cfg.downstream.readout}
    if args.task == "classify":
        meta["n_classes"] = int(np.max(targets)) + 1
    save_head(run_dir / f"head_{args.task}.pt", head, args.task, meta, score)
    _trace_csv(run_dir / f"head_{args.task}_trace.csv", trace)
    print(f"head trained -> {run_dir / f'head_{args.task}.pt'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    run_dir = _run_dir(cfg, args.run_dir)
    out_dir = Path(args.out) if args.out else run_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = _read_labels(Path(args.labels), args.task)
    head, kind, meta, score = load_head(run_dir / f"head_{args.task}.pt")
    ids, states, _ = _graph_embeddings(cfg, run_dir, Path(args.graphs))
    keep = [i for i, gid in enumerate(ids) if gid in labels]
    if not keep:
        raise ValueError("invalid input: no bundle ids match the label file")
    states = [states[i] for i in keep]
    ids = [ids[i] for i in keep]
    mode = meta.get("readout", cfg.downstream.readout)
    embeddings = _pool_states(states, mode, score)
    x = torch.as_tensor(embeddings, dtype=torch.float32)

    if args.task == "classify":
        with torch.no_grad():
            logits = head(x).numpy()
        preds = logits.argmax(axis=1)
        truth = np.array([labels[g] for g in ids], dtype=np.int64)
        n_classes = meta["n_classes"]
        acc = accuracy(preds, truth)
        f1 = macro_f1(preds, truth, n_classes)
        _write_csv(
            out_dir / "report.csv",
            ["metric", "value"],
            [["accuracy", repr(float(acc))], ["macro_f1", repr(float(f1))]],
        )
        conf = np.zeros((n_classes, n_classes), dtype=np.int64)
        for p, t in zip(preds, truth):
            conf[t, p] += 1
        plots.plot_confusion(conf, out_dir / "confusion.png")
        _write_csv(
            out_dir / "predictions.csv",
            ["id", "label", "pred"],
            [[g, int(t), int(p)] for g, t, p in zip(ids, truth, preds)],
        )
        print(f"eval classify: acc={acc:.4f} macro_f1={f1:.4f} -> {out_dir}")
    else:
        with torch.no_grad():
            risks = head(x).numpy().astype(np.float64)
        times = np.array([labels[g][0] for g in ids])
        events = np.array([labels[g][1] for g in ids], dtype=np.int64)
        ci = concordance_index(risks, times, events)
        high, low = median_risk_split(risks)
        chi2_stat, p_value = logrank_test(
            times[high], events[high], times[low], events[low]
        )
        _write_csv(
            out_dir / "report.csv",
            ["metric", "value"],
            [
                ["c_index", repr(float(ci))],
                ["logrank_chi2", repr(float(chi2_stat))],
                ["logrank_p", repr(float(p_value))],
            ],
        )
        _write_csv(
            out_dir / "risks.csv",
            ["id", "risk", "time", "event"],
            [
                [g, repr(float(r)), repr(float(t)), int(e)]
                for g, r, t, e in zip(ids, risks, times, events)
            ],
        )
        km_rows = []
        for name, grp in (("high", high), ("low", low)):
            curve = km_estimator(times[grp], events[grp])
            for t, s in zip(curve.times, curve.survival):
                km_rows.append([name, repr(float(t)), repr(float(s))])
        _write_csv(out_dir / "km_points.csv", ["group", "time", "survival"], km_rows)
        plots.plot_km(
            times[high], events[high], times[low], events[low],
            out_dir / "km.png", title=f"log-rank p = {p_value:.3g}",
        )
        print(
            f"eval survival: c_index={ci:.4f} logrank_p={p_value:.3g} -> {out_dir}"
        )
    return 0


def cmd_embed(args) -> int:
    cfg = _resolve_config(args)
    run_dir = _run_dir(cfg, args.run_dir)
    if args.graphs:
        ids, states, _ = _graph_embeddings(cfg, run_dir, Path(args.graphs))
    else:
        codec = load_codec(run_dir / "codec.pt")
        model = load_backbone(run_dir / "backbone.pt")
        params = cfg.graph_params()
        ids, states = [], []
        for img_path in _list_images(Path(args.images)):
            graph = build_entity_graph(_load_image(img_path), params)
            lg = encode_graph(codec, graph)
            states.append(final_vertex_states(lg, model))
            ids.append(img_path.stem)
    embeddings = _pool_states(states, cfg.downstream.readout)
    out = Path(args.out)
    header = ["id"] + [f"e{i}" for i in range(embeddings.shape[1])]
    rows = [[gid] + [repr(float(v)) for v in vec] for gid, vec in zip(ids, embeddings)]
    _write_csv(out, header, rows)
    print(f"wrote {len(rows)} embeddings -> {out}")
    return 0


def _read_embeddings_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids, vecs = [], []
        for row in reader:
            ids.append(row[0])
            vecs.append([float(v) for v in row[1:]])
    if not ids:
        raise ValueError(f"invalid input: no rows in {path}")
    return ids, np.array(vecs, dtype=np.float64)


def cmd_plot(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "km":
        with open(args.data, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"invalid input: empty risk table {args.data}")
        risks = np.array([float(r["risk"]) for r in rows])
        times = np.array([float(r["time"]) for r in rows])
        events = np.array([int(r["event"]) for r in rows])
        high, low = median_risk_split(risks)
        chi2_stat, p_value = logrank_test(
            times[high], events[high], times[low], events[low]
        )
        plots.plot_km(
            times[high], events[high], times[low], events[low], out,
            title=f"log-rank p = {p_value:.3g}",
        )
    elif args.kind == "rmse_t":
        series: dict[str, list] = {}
        for spec_item in args.data.split(";"):
            name, _, path = spec_item.rpartition("=")
            name = name or "rmse"
            with open(path, newline="") as fh:
                rows = [
                    {"t": int(r["t"]), "rmse": float(r["rmse"])}
                    for r in csv.DictReader(fh)
                ]
            series[name] = rows
        plots.plot_rmse_t(series, out)
    elif args.kind == "tsne":
        ids, embeddings = _read_embeddings_csv(Path(args.embeddings))
        label_map = _read_labels(Path(args.labels), "classify")
        labels = np.array([label_map.get(g, -1) for g in ids])
        plots.plot_tsne(embeddings, labels, out, seed=cfg.seed)
    elif args.kind == "heatmap":
        run_dir = _run_dir(cfg, args.run_dir)
        codec = load_codec(run_dir / "codec.pt")
        model = load_backbone(run_dir / "backbone.pt")
        image = _load_image(Path(args.image))
        graph, label_map = build_entity_graph(
            image, cfg.graph_params(), with_label_map=True
        )
        lg = encode_graph(codec, graph)
        score = None
        for head_path in (run_dir / "head_classify.pt", run_dir / "head_survival.pt"):
            if head_path.exists():
                _, _, _, score = load_head(head_path)
                if score is not None:
                    break
        _, weights = embed_graph(lg, model, "attention", score)
        plots.plot_heatmap(image, label_map.labels, weights, out)
    else:
        raise ValueError(f"invalid parameter: unknown plot kind {args.kind!r}")
    print(f"wrote figure -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmgdm",
        description="Entity-graph masked latent diffusion pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("build-graphs", help="images -> .hmgg entity graph bundles")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--kernel", help="external kernel command for bulk construction")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("pretrain", help="stage-1 codec + stage-2 diffusion pretraining")
    common(p)
    p.add_argument("--graphs", required=True, help="directory of .hmgg bundles")
    p.add_argument("--run-dir", help="override the derived run directory")
    p.add_argument("--mask-ratio", type=float, help="override mask.r_m")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--rmse-grid", help="comma-separated t values")
    p.add_argument("--max-tiles", type=int, default=20000)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train a downstream head on frozen embeddings")
    common(p)
    p.add_argument("--graphs", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--run-dir")
    p.add_argument("--task", choices=("classify", "survival"), required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="metric report for a trained head")
    common(p)
    p.add_argument("--graphs", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--run-dir")
    p.add_argument("--task", choices=("classify", "survival"), required=True)
    p.add_argument("--out", help="report directory (default: run dir /eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="write per-image graph embeddings as CSV")
    common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graphs")
    src.add_argument("--images")
    p.add_argument("--run-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("plot", help="render a figure from run artifacts")
    common(p)
    p.add_argument("--kind", choices=("tsne", "heatmap", "km", "rmse_t"), required=True)
    p.add_argument("--data", help="input CSV (km: risks.csv; rmse_t: name=path;...)")
    p.add_argument("--embeddings", help="embeddings CSV (tsne)")
    p.add_argument("--labels", help="labels CSV (tsne)")
    p.add_argument("--image", help="input image (heatmap)")
    p.add_argument("--run-dir", help="run directory (heatmap)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except RuntimeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
