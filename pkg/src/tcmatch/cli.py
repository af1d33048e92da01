"""Command-line entry point: ``tcmatch {train,experiment,predict,make-synthetic}``.

Exit codes: 0 success, 1 invalid input (config, schema, arguments), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .checkpoint import check_mapping, load_model, save_model
from .config import RunConfig, dump_config, load_config, resolve_output_dir
from .exceptions import ConfigurationError, SchemaError
from .experiments import (
    Dataset,
    _episode_for,
    class_number_sweep,
    dataset_from_examples,
    description_sweep,
    run_protocol,
    similarity_report,
    synthetic_dataset,
    train_method,
    write_history_jsonl,
    write_matrix_csv,
    write_run_result,
)
from .labels import LabelSet, load_label_mapping, save_label_mapping
from .metrics import accuracy, macro_f1, micro_f1
from .objective import build_label_cache, predict_batch
from .text import load_jsonl, save_jsonl
from .training import MatchingModel, evaluate

logger = logging.getLogger("tcmatch")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset.synthetic is not None:
        dataset = synthetic_dataset(**asdict(cfg.dataset.synthetic))
        if cfg.mapping is not None:
            dataset = replace(dataset, mapping=load_label_mapping(cfg.mapping))
        return dataset
    train = load_jsonl(cfg.dataset.path)
    test = load_jsonl(cfg.dataset.test_path) if cfg.dataset.test_path else []
    valid = load_jsonl(cfg.dataset.valid_path) if cfg.dataset.valid_path else []
    return dataset_from_examples(train, test, load_label_mapping(cfg.mapping), valid, name=cfg.dataset.path.stem)


def _check_mapping_modes(cfg: RunConfig, dataset: Dataset) -> None:
    modes = set(cfg.sweep.modes) if cfg.protocol == "description_sweep" else {cfg.mode}
    for mode in sorted(modes - {"sample"}):
        LabelSet.from_mapping(dataset.mapping, mode=mode, labels=dataset.labels)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ commands
def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    out = resolve_output_dir(cfg.output_dir, args.out)
    dataset = load_dataset(cfg)
    _check_mapping_modes(cfg, dataset)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")
    save_label_mapping(out / "labels.json", dataset.mapping)

    seed = cfg.seeds[0]
    episode = _episode_for(dataset, cfg.K, seed)
    result, label_set = train_method(cfg.method, dataset, episode, seed, cfg.experiment_config())
    save_model(out / "model.ckpt", result.model, cfg.method, {"seed": seed, "K": cfg.K})
    write_history_jsonl(out / "history.jsonl", result.history)
    metrics = {"method": cfg.method, "seed": seed, "K": cfg.K, "best_epoch": result.best_epoch}
    if dataset.test:
        cm = evaluate(result.model, list(dataset.test))
        metrics.update(macro_f1=macro_f1(cm), micro_f1=micro_f1(cm), accuracy=accuracy(cm))
        write_matrix_csv(out / "confusion.csv", label_set.labels, cm)
    similarity_report(result.model).to_csv(out / "similarity.csv")
    _write_json(out / "metrics.json", metrics)
    logger.info("trained %s; outputs in %s", cfg.method, out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    out = resolve_output_dir(cfg.output_dir, args.out)
    dataset = load_dataset(cfg)
    _check_mapping_modes(cfg, dataset)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")

    exp = cfg.experiment_config()
    runs, summary = [], {}
    if cfg.protocol == "single":
        runs.append((cfg.method, run_protocol(cfg.method, dataset, cfg.K, cfg.seeds, exp)))
    elif cfg.protocol in ("compare", "tcm_vs_taskhead"):
        methods = cfg.methods or ("tcm", "task_head")
        for method in methods:
            runs.append((method, run_protocol(method, dataset, cfg.K, cfg.seeds, exp)))
        if cfg.protocol == "tcm_vs_taskhead":
            means = {m: r.mean_macro_f1 for m, r in runs}
            summary["macro_f1_gap"] = means["tcm"] - means["task_head"]
    elif cfg.protocol == "class_number_sweep":
        methods = cfg.methods or ("tcm", "task_head")
        sweep = class_number_sweep(dataset, cfg.sweep.class_counts, cfg.K, cfg.seeds, exp, methods)
        for count, by_method in sweep.items():
            for method, result in by_method.items():
                runs.append((f"{method}_C{count}", result))
            if "tcm" in by_method and "task_head" in by_method:
                gap = by_method["tcm"].mean_macro_f1 - by_method["task_head"].mean_macro_f1
                summary.setdefault("macro_f1_gap_by_classes", {})[str(count)] = gap
    else:
        Ks = cfg.sweep.Ks or (cfg.K,)
        for (mode, K), result in description_sweep(dataset, cfg.sweep.modes, Ks, cfg.seeds, exp, cfg.method).items():
            runs.append((f"{cfg.method}_{mode}_K{K}", result))

    for prefix, result in runs:
        write_run_result(out, result, prefix=prefix)
    _write_json(out / "results.json", {
        "protocol": cfg.protocol,
        "config": cfg.to_dict(),
        "runs": {prefix: result.to_dict() for prefix, result in runs},
        "summary": summary,
    })
    for prefix, result in runs:
        logger.info("%s: macro-F1 %.4f", prefix, result.mean_macro_f1)
    return EXIT_OK


def _read_inputs(args) -> list[str]:
    if args.file is None:
        return [args.text]
    path = Path(args.file)
    if not path.is_file():
        raise ConfigurationError(f"--file: {path}: file not found")
    texts = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if path.suffix == ".jsonl":
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(record, dict) or not isinstance(record.get("text"), str):
                raise SchemaError(f"{path}:{lineno}: expected an object with a string 'text'")
            texts.append(record["text"])
        else:
            texts.append(line)
    return texts


def cmd_predict(args) -> int:
    if (args.text is None) == (args.file is None):
        raise UsageError("give exactly one of TEXT or --file")
    for flag, value in (("--checkpoint", args.checkpoint), ("--mapping", args.mapping)):
        if not Path(value).is_file():
            raise ConfigurationError(f"{flag}: {value}: file not found")
    texts = _read_inputs(args)
    model, meta = load_model(args.checkpoint)
    check_mapping(meta, load_label_mapping(args.mapping))
    if not texts:
        return EXIT_OK
    if isinstance(model, MatchingModel) and model.label_source == "tcm":
        labels, scores = predict_batch(model.encoder, build_label_cache(model.encoder, model.label_set), texts)
    else:
        scores = model.scores(texts)
        labels = [model.label_set.labels[i] for i in np.argmax(scores, axis=1)]
    names = model.label_set.labels
    for text, label, row in zip(texts, labels, scores):
        record = {"text": text, "label": label, "scores": {n: float(v) for n, v in zip(names, row)}}
        sys.stdout.write(json.dumps(record, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    dataset = synthetic_dataset(
        classes=args.classes, pool_per_class=args.pool_per_class, test_per_class=args.test_per_class,
        vocab_size=args.vocab_size, signal_tokens_per_class=args.signal_tokens, noise_len=args.noise_len,
        seed=args.seed, signal_per_example=args.signal_per_example, definition_overlap=args.definition_overlap,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_jsonl(out / "train.jsonl", dataset.pool)
    save_jsonl(out / "test.jsonl", dataset.test)
    save_label_mapping(out / "labels.json", dataset.mapping)
    logger.info("wrote %d train and %d test examples to %s", len(dataset.pool), len(dataset.test), out)
    return EXIT_OK


# ------------------------------------------------------------------ wiring
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tcmatch", description="Text classification by matching inputs to label descriptions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, func, help_text in (("train", cmd_train, "train one model from a config file"),
                                  ("experiment", cmd_experiment, "run a multi-seed protocol from a config file")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="YAML run config")
        p.add_argument("--seed", type=int, help="replace the config's seed list with this one seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="classify texts with a saved model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mapping", required=True, help="label mapping JSON the model was trained with")
    p.add_argument("text", nargs="?", help="a single text to classify")
    p.add_argument("--file", help="one text per line, or .jsonl records with a 'text' field")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("make-synthetic", help="write a synthetic dataset and its label mapping")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=40)
    p.add_argument("--pool-per-class", type=int, default=10)
    p.add_argument("--test-per-class", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=300)
    p.add_argument("--signal-tokens", type=int, default=6)
    p.add_argument("--noise-len", type=int, default=0)
    p.add_argument("--signal-per-example", type=int, default=1)
    p.add_argument("--definition-overlap", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 -- any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
