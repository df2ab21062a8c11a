"""Command-line pipeline: graph construction, pre-training, embedding,
MIL / probe / survival evaluation, and synthetic data generation."""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__, acm, heads, survival as surv
from .construct import InstanceMask, build_cell_graph
from .dataset_io import DatasetManifest, read_dataset, write_dataset
from .pretrain import Pretrainer, PretrainConfig, embed_dataset, pretrain
from .synth import PlantedSpec, gen_cell_dataset, gen_region_dataset

log = logging.getLogger("cellgraph")


class ConfigError(Exception):
    pass


def load_config_section(path, section, allowed):
    """Flat key = value config; unknown keys are rejected by name."""
    cfg = configparser.ConfigParser()
    with open(path) as fh:
        cfg.read_file(fh)
    if not cfg.has_section(section):
        return {}
    out = {}
    for key, value in cfg.items(section):
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r} in section [{section}]")
        out[key] = value
    return out


def _echo_run_config(target, resolved, seed):
    payload = {"config": resolved, "seed": seed, "version": __version__}
    with open(target, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _global_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CELLGRAPH_SEED")
    return int(env) if env else 0


# ---------------------------------------------------------------------------
# build-graphs


def _load_image(path):
    from PIL import Image
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _load_mask(path):
    from PIL import Image
    with Image.open(path) as img:
        return np.asarray(img).astype(np.uint32)


def _build_one(job):
    image_path, mask_path, pixel_size = job
    image = _load_image(image_path)
    mask = InstanceMask(labels=_load_mask(mask_path), pixel_size_um=pixel_size)
    return build_cell_graph(image, mask)


def cmd_build_graphs(args):
    image_files = sorted(f for f in os.listdir(args.images)
                         if f.lower().endswith((".png", ".tif", ".tiff")))
    if not image_files:
        raise SystemExit(f"error: no images found in {args.images} (count 0)")
    jobs, missing = [], []
    for name in image_files:
        stem = os.path.splitext(name)[0]
        candidates = [os.path.join(args.masks, stem + ext)
                      for ext in (".png", ".tif", ".tiff")]
        mask_path = next((c for c in candidates if os.path.exists(c)), None)
        if mask_path is None:
            missing.append(name)
        else:
            jobs.append((os.path.join(args.images, name), mask_path, args.pixel_size))
    if missing:
        raise SystemExit("error: unpaired images (no mask found): " + ", ".join(missing))
    if args.threads > 1:
        import multiprocessing
        with multiprocessing.Pool(args.threads) as pool:
            graphs = pool.map(_build_one, jobs)
    else:
        graphs = [_build_one(j) for j in jobs]
    manifest = DatasetManifest(name=os.path.basename(args.out), num_records=len(graphs),
                               feature_dim=graphs[0].feature_dim)
    write_dataset(args.out, manifest, graphs)
    stats = {
        "num_graphs": len(graphs),
        "avg_nodes": float(np.mean([g.num_nodes for g in graphs])),
        "avg_edges": float(np.mean([g.num_edges for g in graphs])),
    }
    with open(args.out + ".stats.json", "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    _echo_run_config(args.out + ".run.json",
                     {"images": args.images, "masks": args.masks,
                      "pixel_size": args.pixel_size}, _global_seed(args))
    log.info("wrote %d graphs to %s", len(graphs), args.out)
    return 0


# ---------------------------------------------------------------------------
# pretrain / embed


_PRETRAIN_KEYS = {f: str for f in PretrainConfig.__dataclass_fields__}


def _coerce(value, target_type):
    if target_type is bool:
        return value.lower() in ("1", "true", "yes")
    return target_type(value)


def cmd_pretrain(args):
    seed = _global_seed(args)
    overrides = {}
    if args.config:
        raw = load_config_section(args.config, "pretrain", set(_PRETRAIN_KEYS))
        fields = PretrainConfig.__dataclass_fields__
        for key, value in raw.items():
            overrides[key] = _coerce(value, fields[key].type if isinstance(fields[key].type, type)
                                     else type(getattr(PretrainConfig(), key)))
    overrides["seed"] = seed
    config = PretrainConfig(**overrides)
    _, graphs = read_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.cgck")
    curve = os.path.join(args.out, "loss_curve.csv")
    _echo_run_config(os.path.join(args.out, "resolved_config.json"),
                     asdict(config), seed)
    pretrain(graphs, config, loss_curve_path=curve, checkpoint_path=ckpt,
             resume_from=args.resume)
    log.info("checkpoint written to %s", ckpt)
    return 0


def cmd_embed(args):
    trainer = Pretrainer.load(args.ckpt)
    _, graphs = read_dataset(args.data)
    emb, ids = embed_dataset(trainer, graphs, args.level)
    np.savez(args.out, level=args.level, embeddings=emb, graph_index=ids,
             ids=np.array([str(i) for i in range(len(graphs))]))
    _echo_run_config(args.out + ".run.json",
                     {"ckpt": args.ckpt, "data": args.data, "level": args.level},
                     _global_seed(args))
    return 0


# ---------------------------------------------------------------------------
# mil / probe


def _read_label_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _bags_from_embeddings(emb, rows, which):
    bags = []
    for row in rows:
        if row.get("split", "train") != which:
            continue
        idx = [int(i) for i in row["indices"].split()] if "indices" in row \
            else [int(row["graph_index"])]
        bags.append(heads.Bag(instances=emb[idx], label=int(row["label"])))
    return bags


def cmd_mil(args):
    seed = _global_seed(args)
    data = np.load(args.embeddings, allow_pickle=False)
    emb = data["embeddings"]
    rows = _read_label_csv(args.labels)
    train_bags = _bags_from_embeddings(emb, rows, "train")
    test_bags = _bags_from_embeddings(emb, rows, "test")
    variants = heads.MIL_VARIANTS if args.variant == "all" else (args.variant,)
    grid = None
    if args.small_grid:
        grid = {"learning_rate": (1e-2,), "dropout": (0.2,),
                "attention_dim": (128,), "classifier_layers": (1,)}
    os.makedirs(args.out, exist_ok=True)
    results = []
    for variant in variants:
        res = heads.mil_train(train_bags, test_bags, variant, seed=seed,
                              folds=args.folds, epochs=args.epochs, grid=grid)
        results.append(res)
    rows_out = []
    for res in results:
        for metric, value in res.test_metrics.items():
            rows_out.append({"variant": res.variant,
                             "config": json.dumps(asdict(res.best_config), sort_keys=True),
                             "metric": metric, "value": value})
    with open(os.path.join(args.out, "mil_results.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "config", "metric", "value"])
        writer.writeheader()
        writer.writerows(rows_out)
    best = max(results, key=lambda r: r.test_metrics["macro_f1"])
    summary = {"best_variant": best.variant,
               "best_test_macro_f1": best.test_metrics["macro_f1"],
               "per_variant": {r.variant: r.test_metrics for r in results}}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _echo_run_config(os.path.join(args.out, "resolved_config.json"),
                     {"embeddings": args.embeddings, "labels": args.labels,
                      "variant": args.variant, "folds": args.folds,
                      "epochs": args.epochs}, seed)
    return 0


def cmd_probe(args):
    seed = _global_seed(args)
    data = np.load(args.embeddings, allow_pickle=False)
    emb = data["embeddings"]
    rows = _read_label_csv(args.labels)
    idx = np.array([int(r["index"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    if "fold" in rows[0]:
        folds = np.array([int(r["fold"]) for r in rows])
    else:
        assignment = heads.stratified_folds(labels, args.folds, seed)
        folds = np.zeros(len(labels), dtype=np.int64)
        for f, ids in enumerate(assignment):
            folds[ids] = f
    os.makedirs(args.out, exist_ok=True)
    per_fold = []
    for f in sorted(set(folds.tolist())):
        test = folds == f
        _, m = heads.logistic_probe(emb[idx[~test]], labels[~test],
                                    emb[idx[test]], labels[test], seed=seed)
        per_fold.append({"fold": f, **m})
    with open(os.path.join(args.out, "probe_results.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(per_fold[0].keys()))
        writer.writeheader()
        writer.writerows(per_fold)
    _echo_run_config(os.path.join(args.out, "resolved_config.json"),
                     {"embeddings": args.embeddings, "labels": args.labels,
                      "folds": args.folds}, seed)
    return 0


# ---------------------------------------------------------------------------
# survival


def cmd_survival(args):
    seed = _global_seed(args)
    data = np.load(args.embeddings, allow_pickle=False)
    emb = data["embeddings"]
    ids = [str(s) for s in data["ids"]]
    by_id = {pid: emb[k] for k, pid in enumerate(ids)}
    records = []
    with open(args.clinical, newline="") as fh:
        for row in csv.DictReader(fh):
            pid = row["patient_id"]
            if pid not in by_id:
                continue
            records.append(surv.SurvivalRecord(
                patient_id=pid, covariates=by_id[pid],
                time=float(row["time"]), event=int(row["event"])))
    if not records:
        raise SystemExit("error: no patients matched between embeddings and clinical CSV")
    model = surv.cox_fit(records, penalty=args.penalty)
    high, low = surv.risk_split(model, records)
    os.makedirs(args.out, exist_ok=True)
    for name, group in (("high", high), ("low", low)):
        t, s = surv.kaplan_meier([r.time for r in group], [r.event for r in group]) \
            if group else (np.array([]), np.array([]))
        with open(os.path.join(args.out, f"km_{name}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "survival"])
            writer.writerows(zip(t, s))
    chi2, p = surv.logrank([r.time for r in high], [r.event for r in high],
                           [r.time for r in low], [r.event for r in low]) \
        if high and low else (0.0, 1.0)
    risks = model.risk_scores(records)
    cidx = surv.c_index(risks, [r.time for r in records], [r.event for r in records])
    with open(os.path.join(args.out, "stats.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["c_index", "chi2", "p_value"])
        writer.writerow([cidx, chi2, p])
    _echo_run_config(os.path.join(args.out, "resolved_config.json"),
                     {"embeddings": args.embeddings, "clinical": args.clinical,
                      "penalty": args.penalty}, seed)
    return 0


# ---------------------------------------------------------------------------
# synth


_SPEC_FIELDS = PlantedSpec.__dataclass_fields__


def cmd_synth(args):
    seed = _global_seed(args)
    allowed = set(_SPEC_FIELDS) | {"kind"}
    raw = load_config_section(args.spec, "synth", allowed)
    kind = raw.pop("kind", "region")
    defaults = PlantedSpec()
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = _coerce(value, type(getattr(defaults, key)))
    kwargs.setdefault("seed", seed)
    spec = PlantedSpec(**kwargs)
    if kind == "region":
        manifest, graphs = gen_region_dataset(spec)
    elif kind == "cell":
        manifest, graphs = gen_cell_dataset(spec)
    else:
        raise ConfigError(f"unknown synth kind {kind!r}")
    write_dataset(args.out, manifest, graphs)
    _echo_run_config(args.out + ".run.json", {"kind": kind, **asdict(spec)}, seed)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="cellgraph",
                                     description="Cell-graph SSL pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("build-graphs", help="images + masks -> graph dataset")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--pixel-size", type=float, required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("pretrain", help="masked-autoencoder pre-training")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", help="frozen-encoder embeddings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--level", choices=("cell", "region"), required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("mil", help="attention-MIL classification")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--variant", choices=heads.MIL_VARIANTS + ("all",), default="all")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--small-grid", action="store_true",
                   help="single-cell grid for quick runs")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_mil)

    p = sub.add_parser("probe", help="logistic probing of embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("survival", help="Cox / KM / log-rank evaluation")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--clinical", required=True)
    p.add_argument("--penalty", type=float, default=0.1)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_survival)

    p = sub.add_parser("synth", help="synthetic dataset generation")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
