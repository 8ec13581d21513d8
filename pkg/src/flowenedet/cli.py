"""Command-line pipeline: synthesize, train, score, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Score-map generation parallelizes over samples; the FED_THREADS environment
variable caps the worker count.
"""

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from . import estimator, featurize, flow, metrics, synth, tensor_store, training

TTA_SUFFIXES = ("_s25", "_s50", "_s100")


class ConfigError(Exception):
    pass


def _load_toml(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fp:
            return tomllib.load(fp)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        # tomllib messages carry line/column positions
        raise ConfigError(f"{path}: {exc}")


def _dataclass_from_table(cls, table, source):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - fields
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {sorted(unknown)}; expected a subset of {sorted(fields)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}")


def _n_threads():
    env = os.environ.get("FED_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"FED_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise ConfigError("FED_THREADS must be >= 1")
        return n
    return min(8, os.cpu_count() or 1)


def cmd_synth(args):
    doc = _load_toml(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = _dataclass_from_table(synth.SynthConfig, doc, args.config or "synth defaults")
    report = synth.generate(cfg, args.out)
    fr = report["fractions"]
    print(
        f"wrote {report['config']['n_samples']} samples to {args.out} "
        f"(id={fr['id']:.3f} idm={fr['idm']:.3f} ood={fr['ood']:.3f})"
    )
    return 0


def _train_configs(doc, seed_override):
    flow_cfg = _dataclass_from_table(flow.FlowConfig, doc.get("flow", {}), "[flow]")
    table = dict(doc.get("train", {}))
    if "crop" in table and table["crop"] is not None:
        crop = table["crop"]
        if not (isinstance(crop, (list, tuple)) and len(crop) == 2):
            raise ConfigError("[train]: crop must be a [height, width] pair")
        table["crop"] = (int(crop[0]), int(crop[1]))
    if seed_override is not None:
        table["seed"] = seed_override
    train_cfg = _dataclass_from_table(training.TrainConfig, table, "[train]")
    unknown_tables = set(doc) - {"flow", "train"}
    if unknown_tables:
        raise ConfigError(f"unknown config table(s) {sorted(unknown_tables)}; expected [flow] and [train]")
    return flow_cfg, train_cfg


def cmd_train(args):
    flow_cfg, train_cfg = _train_configs(_load_toml(args.config), args.seed)
    manifest = tensor_store.read_dataset_manifest(args.data)
    if flow_cfg.condition_width > 0:
        v = int(manifest["V"])
        if v <= 0:
            raise ValueError(f"model requires embeddings (P={flow_cfg.condition_width}) but dataset declares V=0")
        if v % flow_cfg.condition_width != 0:
            raise ValueError(f"condition width {flow_cfg.condition_width} does not divide embedding dim {v}")

    featurized = []
    for sample in tensor_store.iter_samples(args.data):
        featurized.append(
            estimator.featurize_sample(
                sample.logits, sample.labels, sample.embeddings, flow_cfg.condition_width
            )
        )

    def progress(iteration, lr, loss_value):
        if iteration % 200 == 0 or iteration == train_cfg.total_iters - 1:
            print(f"iter {iteration}: lr={lr:.3e} loss={loss_value:.6f}", file=sys.stderr)

    params, log_rows = training.fit(featurized, flow_cfg, train_cfg, progress=progress)
    archive = estimator.build_archive(
        params, flow_cfg, int(manifest["C"]), int(manifest["V"]), train_cfg.seed
    )
    tensor_store.write_model(archive, args.out)
    loss_path = os.path.join(os.path.dirname(os.path.abspath(args.out)), "loss.csv")
    tensor_store.atomic_write_bytes(loss_path, training.loss_log_csv(log_rows).encode("utf-8"))
    print(f"wrote {args.out} and {loss_path} (final loss {log_rows[-1][2]:.6f})")
    return 0


def _tta_variant_dirs(data_dir):
    """Sibling dataset directories carrying resolution suffixes."""
    path = os.path.normpath(data_dir)
    base = path
    for sfx in TTA_SUFFIXES:
        if path.endswith(sfx):
            base = path[: -len(sfx)]
            break
    variants = [base + sfx for sfx in TTA_SUFFIXES if os.path.isdir(base + sfx)]
    if not variants:
        raise FileNotFoundError(
            f"--tta: no sibling resolution datasets found for {data_dir} "
            f"(expected directories with suffixes {TTA_SUFFIXES})"
        )
    return variants


def _score_one(sample, model_params, model_config, baseline):
    if baseline is not None:
        return featurize.baseline_scores(sample.logits.astype(np.float64), baseline)
    return estimator.score_map(model_params, model_config, sample.logits, sample.embeddings)


def _write_score(out_dir, sample_id, score, png):
    sample_dir = os.path.join(out_dir, sample_id)
    os.makedirs(sample_dir, exist_ok=True)
    tensor_store.write_npy(os.path.join(sample_dir, "score.npy"), score.astype("<f4"))
    if png:
        from PIL import Image

        gray = np.floor(np.clip(score, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(os.path.join(sample_dir, "score.png"))


def cmd_score(args):
    if args.baseline is None and args.model is None:
        raise ConfigError("score: either --model or --baseline is required")
    model_params = model_config = None
    if args.baseline is None:
        archive = tensor_store.read_model(args.model)
        model_config = estimator.config_from_manifest(archive.manifest)
        model_params = archive.params
        manifest = tensor_store.read_dataset_manifest(args.data)
        if int(manifest["C"]) != int(archive.manifest["C"]):
            raise ValueError(
                f"model was trained with C={archive.manifest['C']} classes "
                f"but dataset declares C={manifest['C']}"
            )
        if model_config.condition_width > 0 and int(manifest["V"]) <= 0:
            raise ValueError(
                f"model expects embeddings (P={model_config.condition_width}) "
                "but the dataset has none (V=0)"
            )

    data_dir = os.path.normpath(args.data)
    variant_dirs = _tta_variant_dirs(data_dir) if args.tta else [data_dir]
    target_ids = tensor_store.read_dataset_manifest(data_dir)["sample_ids"]

    def work(sample_id):
        target = tensor_store.read_sample(os.path.join(data_dir, sample_id))
        target_shape = target.labels.shape
        maps = []
        for vdir in variant_dirs:
            sample = target if vdir == data_dir else tensor_store.read_sample(os.path.join(vdir, sample_id))
            maps.append(_score_one(sample, model_params, model_config, args.baseline))
        score = metrics.tta_average(maps, target_shape)
        _write_score(args.out, sample_id, score, args.png)

    with ThreadPoolExecutor(max_workers=_n_threads()) as pool:
        list(pool.map(work, target_ids))
    print(f"wrote {len(target_ids)} score maps to {args.out}")
    return 0


def cmd_eval(args):
    manifest = tensor_store.read_dataset_manifest(args.data)
    n_classes = int(manifest["C"])
    all_scores, all_truth = [], []
    per_image = []
    n_total = 0
    for sample_id in manifest["sample_ids"]:
        sample = tensor_store.read_sample(os.path.join(args.data, sample_id))
        score_path = os.path.join(args.scores, sample_id, "score.npy")
        if not os.path.isfile(score_path):
            raise FileNotFoundError(f"missing scores for sample id {sample_id}: {score_path}")
        score = np.load(score_path).astype(np.float64)
        if score.shape != sample.labels.shape:
            raise ValueError(
                f"{sample_id}: score shape {score.shape} does not match labels {sample.labels.shape}"
            )
        pred = featurize.predicted_classes(sample.logits.astype(np.float64))
        truth, mask = metrics.detection_truth(pred, sample.labels, args.void_role)
        s, t = metrics.scored_pixels(score, truth, mask)
        all_scores.append(s)
        all_truth.append(t)
        per_image.append((pred, score, sample.labels))
        n_total += score.size

    scores = np.concatenate(all_scores)
    truth = np.concatenate(all_truth)
    threshold = metrics.f1_threshold(scores, truth)

    cm = sum(
        metrics.confusion_matrix(pred, score, labels, threshold, n_classes, args.void_role)
        for pred, score, labels in per_image
    )
    cm_plain = sum(
        metrics.confusion_matrix(pred, score, labels, np.inf, n_classes, args.void_role)
        for pred, score, labels in per_image
    )
    report = {
        "auroc": metrics.auroc(scores, truth),
        "ap": metrics.average_precision(scores, truth),
        "fpr95": metrics.fpr_at_95tpr(scores, truth),
        "f1_threshold": threshold,
        "open_miou": metrics.miou_from_confusion(cm, n_classes),
        "open_miou_no_detector": metrics.miou_from_confusion(cm_plain, n_classes),
        "void_role": args.void_role,
        "counts": {
            "n_pos": int(np.sum(truth == 1)),
            "n_neg": int(np.sum(truth == 0)),
            "n_ignored": int(n_total - truth.size),
        },
    }
    if args.out:
        payload = json.dumps(report, indent=2, sort_keys=True).encode("utf-8") + b"\n"
        tensor_store.atomic_write_bytes(args.out, payload)
    c = report["counts"]
    print(
        f"auroc={report['auroc']:.4f} ap={report['ap']:.4f} fpr95={report['fpr95']:.4f} "
        f"f1_threshold={report['f1_threshold']:.6g} open_miou={report['open_miou']:.4f} "
        f"no_detector={report['open_miou_no_detector']:.4f} "
        f"[n_pos={c['n_pos']} n_neg={c['n_neg']} n_ignored={c['n_ignored']}]"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="TOML generator config")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="TOML config with [flow] and [train] tables")
    p.add_argument("--out", required=True, help="output model archive path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write per-sample uncertainty maps")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", help="trained model archive")
    p.add_argument("--out", required=True, help="output score directory")
    p.add_argument("--tta", action="store_true", help="average sibling resolution variants")
    p.add_argument("--baseline", choices=("msp", "mlg", "ene"), help="score without the flow")
    p.add_argument("--png", action="store_true", help="also write 8-bit grayscale renderings")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="evaluate score maps against labels")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--scores", required=True, help="score directory from `fed score`")
    p.add_argument("--void-role", choices=metrics.VOID_ROLES, default="ood_class", dest="void_role")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
