"""Experiment runner: gen / train / induce / eval / inspect subcommands.

Configuration is a flat `key = value` text file (see io.CONFIG_DEFAULTS
for every key and its default); --seed overrides the config seed and
--out picks the output location.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen, io, map_baseline, metrics, model, structure, training
from .core import Rule, unique_rule_space


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="flat key=value file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", type=str, default=None, help="output directory or file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="timelogic")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--workers", type=int, default=None, help="parallel sample workers")

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("dataset", type=str)
    _add_common(p)
    p.add_argument("--stage", choices=["full", "param", "map"], default="full")
    p.add_argument("--resume", type=str, default=None,
                   help="checkpoint whose stage-1 parameters are reused")

    p = sub.add_parser("induce", help="write top-k rules per label")
    p.add_argument("checkpoint", type=str)
    _add_common(p)
    p.add_argument("--k", type=int, default=1)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint", type=str)
    p.add_argument("dataset", type=str)
    _add_common(p)
    p.add_argument("--strict", action="store_true",
                   help="compare rules verbatim instead of canonically")

    p = sub.add_parser("inspect", help="describe a dataset directory or checkpoint")
    p.add_argument("path", type=str)
    _add_common(p)
    return ap


def _load_config(args) -> dict[str, object]:
    cfg = io.parse_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    gen_cfg = io.gen_config_from(cfg)
    bound = unique_rule_space(gen_cfg.num_events, 3, gen_cfg.max_rule_len)
    if gen_cfg.num_rules > bound:
        print(
            f"error: num_rules={gen_cfg.num_rules} exceeds the unique rule "
            f"space {bound} for |X|={gen_cfg.num_events}, n={gen_cfg.max_rule_len}",
            file=sys.stderr,
        )
        return 2
    workers = args.workers if args.workers is not None else int(cfg["workers"])
    data = datagen.generate(gen_cfg, workers=workers)
    out = Path(args.out or "dataset")
    io.write_dataset(out, data)
    for split, samples in data.splits.items():
        print(f"{split}: {len(samples)} samples")
    print(f"mean active labels (train): {data.mean_active_labels('train'):.3f}")
    print(f"wrote {out}")
    return 0


def _structure_candidates(cfg: dict[str, object]) -> int:
    return structure.candidates_for_len(
        int(cfg["n_max"]), tuple(cfg["candidates_per_len"])
    )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = io.read_dataset(args.dataset)
    train_cfg = io.train_config_from(cfg)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train.log"
    log_lines: list[str] = []

    def log(entry: training.EpochLog) -> None:
        log_lines.append(entry.line())
        print(entry.line())

    streams = data.splits["train"].streams
    labels = data.splits["train"].labels
    n_max = int(cfg["n_max"])
    c = _structure_candidates(cfg)
    delta, tau = float(cfg["delta"]), float(cfg["tau"])
    started = time.perf_counter()

    if args.stage == "map":
        params = model.canonical_params(data.num_events, data.num_labels)
        table = map_baseline.fit_counts(streams, labels, params, tau=tau)
        vec = training.relation_vectors(streams, params)
        candidates, _, attentions = map_baseline.map_induce_rules(
            table, vec, labels, train_cfg, c=c, n_max=n_max, delta=delta, log=log
        )
        ckpt_path = out / "checkpoint.ntlc"
        io.write_checkpoint(
            ckpt_path, "map", params, data.event_names, n_max, delta, tau,
            candidates=candidates, attentions=attentions, count_table=table,
        )
    else:
        if args.resume:
            params = io.read_checkpoint(args.resume).params
            if params.num_events != data.num_events:
                print("error: resume checkpoint does not match dataset", file=sys.stderr)
                return 2
            print("resuming: stage-1 parameters loaded, parameter stage skipped")
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence(int(cfg["seed"]), spawn_key=(1,))
            )
            params = model.init_params(
                rng,
                data.num_events,
                data.num_labels,
                kernel_len=int(cfg["kernel_len"]),
                stride=int(cfg["stride"]),
                epsilon=float(cfg["epsilon"]),
                dropout=float(cfg["dropout"]),
                literal_mask=bool(cfg["literal_mask"]),
            )
            training.train_param_stage(streams, labels, params, train_cfg, log=log)
        candidates = []
        attentions = []
        if args.stage == "full":
            vec = training.relation_vectors(streams, params)
            candidates, spaces = training.build_spaces(
                params.proj.data, data.num_labels, c, n_max
            )
            attentions = training.train_structure_stage(
                vec, labels, spaces, train_cfg, delta=delta, log=log
            )
        ckpt_path = out / "checkpoint.ntlc"
        io.write_checkpoint(
            ckpt_path, "tlp", params, data.event_names, n_max, delta, tau,
            candidates=candidates, attentions=attentions,
        )
    log_lines.append(f"total seconds {time.perf_counter() - started:.2f}")
    log_path.write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print(f"wrote {ckpt_path}")
    return 0


def _ranked_rules(ckpt: io.Checkpoint, k: int) -> dict[int, list[tuple[Rule, float]]]:
    if not ckpt.attentions:
        raise ValueError("checkpoint has no trained attention (run the full stage)")
    spaces = {s.label: s for s in ckpt.spaces()}
    out = {}
    for att in ckpt.attentions:
        space = spaces[att.label]
        out[att.label] = structure.rank_rules(
            att, space, min(k, len(space)), ckpt.params.num_events
        )
    return out


def cmd_induce(args) -> int:
    ckpt = io.read_checkpoint(args.checkpoint)
    try:
        ranked = _ranked_rules(ckpt, args.k)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "rules.txt"
    io.write_rules_report(path, ranked, ckpt.event_names)
    print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    ckpt = io.read_checkpoint(args.checkpoint)
    data = io.read_dataset(args.dataset)
    if ckpt.params.num_events != data.num_events or ckpt.params.num_labels != data.num_labels:
        print(
            f"error: checkpoint shapes (|X|={ckpt.params.num_events}, "
            f"|R|={ckpt.params.num_labels}) do not match dataset "
            f"(|X|={data.num_events}, |R|={data.num_labels})",
            file=sys.stderr,
        )
        return 2
    report = evaluate_checkpoint(ckpt, data, strict=args.strict)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "eval.txt"
    io.write_eval_report(path, report)
    for k in sorted(report.hits):
        print(f"hits@{k}: {report.hits[k]:.4f}")
    print(f"mAP: {report.map_score:.4f}")
    print(f"MRR: {report.mrr_score:.4f}")
    print(f"wrote {path}")
    return 0


def evaluate_checkpoint(
    ckpt: io.Checkpoint, data: io.Dataset, split: str = "test", strict: bool = False
) -> metrics.EvalReport:
    """Rule-recovery metrics from the trained attention plus label mAP."""
    arrays = data.splits[split]
    truth = data.truth()
    ranked_full = {}
    if ckpt.attentions:
        spaces = {s.label: s for s in ckpt.spaces()}
        for att in ckpt.attentions:
            space = spaces[att.label]
            ranked_full[att.label] = [
                rule
                for rule, _ in structure.rank_rules(
                    att, space, len(space), ckpt.params.num_events
                )
            ]
    hits, mrr_score, ranks, per_length, counts = metrics.evaluate_rules(
        ranked_full, truth, strict=strict
    )

    if ckpt.mode == "map":
        constant = map_baseline.map_predict_labels(ckpt.count_table)
        scores = np.tile(constant, (arrays.labels.shape[0], 1))
    else:
        scores = predict_scores(ckpt.params, arrays.streams)
    map_score, skipped = metrics.mean_average_precision(scores, arrays.labels)
    return metrics.EvalReport(
        hits=hits,
        map_score=map_score,
        mrr_score=mrr_score,
        per_label_rank=ranks,
        per_length=per_length,
        labels_per_length=counts,
        skipped_labels=skipped,
    )


def predict_scores(
    params: model.ModelParams, streams: np.ndarray, batch: int = 256
) -> np.ndarray:
    """Evaluation-mode label probabilities for every sample."""
    out = np.empty((streams.shape[0], params.num_labels))
    for lo in range(0, streams.shape[0], batch):
        _, yhat = model.forward(streams[lo : lo + batch], params, training=False)
        out[lo : lo + yhat.data.shape[0]] = yhat.data
    return out


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        data = io.read_dataset(path)
        print(f"dataset {path}")
        print(f"events: {data.num_events} ({', '.join(data.event_names)})")
        print(f"rules: {data.num_labels}")
        print(f"objects: {data.num_objects}, horizon: {data.horizon}")
        for split, arrays in data.splits.items():
            ybar = arrays.labels.sum(axis=1).mean()
            print(
                f"{split}: {arrays.streams.shape[0]} samples, "
                f"mean active labels {ybar:.3f}"
            )
    else:
        ckpt = io.read_checkpoint(path)
        print(f"checkpoint {path}")
        for key in sorted(ckpt.meta):
            if key != "event_names":
                print(f"{key}: {ckpt.meta[key]}")
        print(f"attention vectors: {len(ckpt.attentions)}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "induce": cmd_induce,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, RuntimeError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
