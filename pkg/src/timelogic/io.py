"""File formats: flat-text config, binary dataset, binary checkpoint,
rule reports and evaluation reports.

Dataset split files: magic "NTLP" + version byte 1, little-endian u32
counts (samples, objects, events, horizon, labels), then per sample the
label bits packed little-endian followed by the scores as little-endian
IEEE-754 float32, object-major, event-major, time-minor.  Event names,
ground-truth rules and intervals live in a UTF-8 sidecar.

Checkpoints: magic "NTLC" + version byte 1, a UTF-8 metadata document
(flat key = value lines, includes the relation-vector flattening order
and every hyperparameter needed to rebuild shapes), then named sections:
u32 name length, name, u32 rank, u32 dims, float64 little-endian payload.

All writers emit fields in a fixed order so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import KIND_BY_NAME, KIND_NAMES, GroundedPredicate, Rule
from .datagen import GenConfig, GeneratedDataset
from .diff import Value
from .map_baseline import CountTable
from .model import ModelParams
from .oracle import Interval, IntervalTimeline
from .structure import AttentionParams, CandidateSet, CombinationSpace
from .training import TrainConfig

DATASET_MAGIC = b"NTLP"
CHECKPOINT_MAGIC = b"NTLC"
FORMAT_VERSION = 1
FLATTEN_ORDER = "u_v_kind"

SPLIT_FILES = {"train": "train.ntlp", "val": "val.ntlp", "test": "test.ntlp"}
SIDECAR_FILE = "sidecar.txt"


# ---------------------------------------------------------------------------
# configuration


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(","))


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(","))


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (default, parser)
CONFIG_DEFAULTS: dict[str, tuple[object, object]] = {
    # generator
    "seed": (0, int),
    "num_rules": (100, int),
    "max_rule_len": (1, int),
    "num_events": (14, int),
    "num_objects": (1, int),
    "horizon": (150, int),
    "rules_per_sample": (1, int),
    "detection_means": ((0.769, 0.882, 0.969), _parse_float_list),
    "detection_std": (0.02, float),
    "noise_std": (0.02, float),
    "interval_len_min": (5, int),
    "interval_len_max": (15, int),
    "count_train": (5000, int),
    "count_val": (2500, int),
    "count_test": (2500, int),
    # model
    "kernel_len": (3, int),
    "stride": (2, int),
    "epsilon": (0.5, float),
    "dropout": (0.2, float),
    "literal_mask": (False, _parse_bool),
    "n_max": (1, int),
    "candidates_per_len": ((100, 100, 30, 25), _parse_int_list),
    "delta": (1e-6, float),
    "tau": (0.5, float),
    # training
    "lr": (0.001, float),
    "beta1": (0.9, float),
    "beta2": (0.999, float),
    "adam_eps": (1e-8, float),
    "batch_param": (256, int),
    "batch_struct": (64, int),
    "epochs_param": (100, int),
    "epochs_struct": (1, int),
    "lambda1": (0.1, float),
    "struct_dropout": (False, _parse_bool),
    "workers": (1, int),
}


def default_config() -> dict[str, object]:
    return {k: v for k, (v, _) in CONFIG_DEFAULTS.items()}


def parse_config(path: str | Path | None) -> dict[str, object]:
    """Flat `key = value` lines with `#` comments; unknown keys are errors."""
    cfg = default_config()
    if path is None:
        return cfg
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        parser = CONFIG_DEFAULTS[key][1]
        try:
            cfg[key] = parser(value)
        except ValueError as err:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {err}") from err
    return cfg


def gen_config_from(cfg: dict[str, object]) -> GenConfig:
    return GenConfig(
        seed=cfg["seed"],
        num_rules=cfg["num_rules"],
        max_rule_len=cfg["max_rule_len"],
        num_events=cfg["num_events"],
        num_objects=cfg["num_objects"],
        horizon=cfg["horizon"],
        rules_per_sample=cfg["rules_per_sample"],
        detection_means=tuple(cfg["detection_means"]),
        detection_std=cfg["detection_std"],
        noise_std=cfg["noise_std"],
        interval_len=(cfg["interval_len_min"], cfg["interval_len_max"]),
        counts={
            "train": cfg["count_train"],
            "val": cfg["count_val"],
            "test": cfg["count_test"],
        },
    )


def train_config_from(cfg: dict[str, object]) -> TrainConfig:
    return TrainConfig(
        lr=cfg["lr"],
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        adam_eps=cfg["adam_eps"],
        batch_param=cfg["batch_param"],
        batch_struct=cfg["batch_struct"],
        epochs_param=cfg["epochs_param"],
        epochs_struct=cfg["epochs_struct"],
        lambda1=cfg["lambda1"],
        seed=cfg["seed"],
        struct_dropout=cfg["struct_dropout"],
    )


# ---------------------------------------------------------------------------
# rule text


def format_rule(rule: Rule, event_names: list[str]) -> str:
    parts = [
        f"{KIND_NAMES[p.kind]}({event_names[p.u]}, {event_names[p.v]})"
        for p in sorted(rule.body)
    ]
    return " AND ".join(parts)


_PRED_RE = re.compile(r"^(before|during|after)\(([^,]+),\s*([^)]+)\)$")


def parse_rule_body(text: str, event_names: list[str]) -> frozenset[GroundedPredicate]:
    index = {name: i for i, name in enumerate(event_names)}
    preds = []
    for chunk in text.split(" AND "):
        m = _PRED_RE.match(chunk.strip())
        if m is None:
            raise ValueError(f"unparseable predicate {chunk!r}")
        kind, u, v = m.groups()
        preds.append(
            GroundedPredicate(KIND_BY_NAME[kind], index[u.strip()], index[v.strip()])
        )
    return frozenset(preds)


# ---------------------------------------------------------------------------
# dataset


@dataclass
class SplitArrays:
    streams: np.ndarray  # [m, k, |X|, T] float32
    labels: np.ndarray  # [m, |R|] uint8


@dataclass
class Dataset:
    event_names: list[str]
    rules: list[Rule]
    num_objects: int
    horizon: int
    splits: dict[str, SplitArrays]
    timelines: dict[str, list[IntervalTimeline]]
    config_echo: dict[str, str] = field(default_factory=dict)

    @property
    def num_events(self) -> int:
        return len(self.event_names)

    @property
    def num_labels(self) -> int:
        return len(self.rules)

    def truth(self) -> dict[int, Rule]:
        return {r.label: r for r in self.rules}


def _unpack_labels(buf: np.ndarray, num_labels: int) -> np.ndarray:
    bits = np.unpackbits(buf, axis=1, bitorder="little")
    return bits[:, :num_labels].astype(np.uint8)


def write_split(path: Path, streams: np.ndarray, labels: np.ndarray) -> None:
    m, k, x, t = streams.shape
    r = labels.shape[1]
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<5I", m, k, x, t, r))
        nbytes = (r + 7) // 8
        packed = np.packbits(
            labels.astype(np.uint8), axis=1, bitorder="little"
        )
        scores32 = streams.astype("<f4")
        for i in range(m):
            fh.write(packed[i, :nbytes].tobytes())
            fh.write(scores32[i].tobytes())


def read_split(path: Path) -> SplitArrays:
    raw = Path(path).read_bytes()
    if raw[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: bad dataset magic {raw[:4]!r}")
    if raw[4] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {raw[4]}")
    m, k, x, t, r = struct.unpack_from("<5I", raw, 5)
    nbytes = (r + 7) // 8
    rec = nbytes + 4 * k * x * t
    body = raw[9:]
    if len(body) != m * rec:
        raise ValueError(f"{path}: truncated payload")
    labels = np.empty((m, r), dtype=np.uint8)
    streams = np.empty((m, k, x, t), dtype=np.float32)
    for i in range(m):
        at = i * rec
        packed = np.frombuffer(body, dtype=np.uint8, count=nbytes, offset=at)
        labels[i] = _unpack_labels(packed[None, :], r)[0]
        streams[i] = np.frombuffer(
            body, dtype="<f4", count=k * x * t, offset=at + nbytes
        ).reshape(k, x, t)
    return SplitArrays(streams=streams, labels=labels)


def write_dataset(out_dir: str | Path, data: GeneratedDataset) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = data.config
    for split, samples in data.splits.items():
        streams = np.stack([s.scores for s in samples])
        labels = np.stack([s.labels for s in samples])
        write_split(out / SPLIT_FILES[split], streams, labels)

    lines = ["# timelogic dataset sidecar"]
    for key in (
        "seed", "num_rules", "max_rule_len", "num_events", "num_objects",
        "horizon", "rules_per_sample", "detection_std", "noise_std",
    ):
        lines.append(f"config {key} = {getattr(cfg, key)!r}")
    lines.append(
        "config detection_means = "
        + ",".join(repr(v) for v in cfg.detection_means)
    )
    lines.append(f"config interval_len = {cfg.interval_len[0]},{cfg.interval_len[1]}")
    for i, name in enumerate(data.event_names):
        lines.append(f"event {i} {name}")
    for rule in data.rules:
        lines.append(f"rule {rule.label} := {format_rule(rule, data.event_names)}")
    for split in SPLIT_FILES:
        if split not in data.splits:
            continue
        for i, sample in enumerate(data.splits[split]):
            for (obj, event), ivs in sorted(sample.timeline.spans.items()):
                for iv in ivs:
                    lines.append(
                        f"interval {split} {i} {obj} {event} {iv.start!r} {iv.end!r}"
                    )
    (out / SIDECAR_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def read_dataset(path: str | Path, splits: tuple[str, ...] | None = None) -> Dataset:
    root = Path(path)
    sidecar = (root / SIDECAR_FILE).read_text(encoding="utf-8")
    event_names: list[str] = []
    rules: list[Rule] = []
    config_echo: dict[str, str] = {}
    interval_rows: list[tuple[str, int, int, int, float, float]] = []
    for raw in sidecar.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, rest = line.split(" ", 1)
        if head == "config":
            key, value = (p.strip() for p in rest.split("=", 1))
            config_echo[key] = value
        elif head == "event":
            idx, name = rest.split(" ", 1)
            assert int(idx) == len(event_names), "event lines out of order"
            event_names.append(name.strip())
        elif head == "rule":
            idx, body = rest.split(" := ", 1)
            rules.append(
                Rule(body=parse_rule_body(body, event_names), label=int(idx))
            )
        elif head == "interval":
            split, sample, obj, event, start, end = rest.split(" ")
            interval_rows.append(
                (split, int(sample), int(obj), int(event), float(start), float(end))
            )
        else:
            raise ValueError(f"unknown sidecar record {head!r}")

    arrays: dict[str, SplitArrays] = {}
    for split, fname in SPLIT_FILES.items():
        if splits is not None and split not in splits:
            continue
        fpath = root / fname
        if fpath.exists():
            arrays[split] = read_split(fpath)

    horizon = arrays[next(iter(arrays))].streams.shape[3] if arrays else 0
    num_objects = arrays[next(iter(arrays))].streams.shape[1] if arrays else 1
    timelines: dict[str, list[IntervalTimeline]] = {}
    for split, arr in arrays.items():
        timelines[split] = [
            IntervalTimeline(horizon=horizon) for _ in range(arr.streams.shape[0])
        ]
    for split, sample, obj, event, start, end in interval_rows:
        if split in timelines and sample < len(timelines[split]):
            timelines[split][sample].add(obj, event, Interval(start, end))
    return Dataset(
        event_names=event_names,
        rules=rules,
        num_objects=num_objects,
        horizon=horizon,
        splits=arrays,
        timelines=timelines,
        config_echo=config_echo,
    )


# ---------------------------------------------------------------------------
# checkpoint


@dataclass
class Checkpoint:
    mode: str  # "tlp" or "map"
    meta: dict[str, str]
    params: ModelParams
    event_names: list[str]
    n_max: int
    delta: float
    tau: float
    candidates: list[CandidateSet] = field(default_factory=list)
    attentions: list[AttentionParams] = field(default_factory=list)
    count_table: CountTable | None = None

    def spaces(self) -> list[CombinationSpace]:
        return [
            CombinationSpace.build(cand, self.n_max) for cand in self.candidates
        ]


def _meta_text(items: list[tuple[str, str]]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items)


def _write_section(fh, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f8")
    nm = name.encode("utf-8")
    fh.write(struct.pack("<I", len(nm)))
    fh.write(nm)
    fh.write(struct.pack("<I", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
    fh.write(data.tobytes())


def write_checkpoint(
    path: str | Path,
    mode: str,
    params: ModelParams,
    event_names: list[str],
    n_max: int,
    delta: float,
    tau: float,
    candidates: list[CandidateSet] | None = None,
    attentions: list[AttentionParams] | None = None,
    count_table: CountTable | None = None,
    extra_meta: list[tuple[str, str]] | None = None,
) -> None:
    candidates = candidates or []
    attentions = attentions or []
    meta_items: list[tuple[str, str]] = [
        ("mode", mode),
        ("flatten_order", FLATTEN_ORDER),
        ("num_events", str(params.num_events)),
        ("num_labels", str(params.num_labels)),
        ("kernel_len", str(params.kernel_len)),
        ("stride", str(params.stride)),
        ("epsilon", repr(params.epsilon)),
        ("dropout", repr(params.dropout)),
        ("literal_mask", str(params.literal_mask).lower()),
        ("n_max", str(n_max)),
        ("delta", repr(delta)),
        ("tau", repr(tau)),
        ("event_names", ",".join(event_names)),
        ("num_candidate_sets", str(len(candidates))),
        ("num_attentions", str(len(attentions))),
        ("has_count_table", str(count_table is not None).lower()),
    ]
    if count_table is not None:
        meta_items.append(("mean_active", repr(count_table.mean_active)))
    if extra_meta:
        meta_items.extend(extra_meta)

    sections: list[tuple[str, np.ndarray]] = [
        ("model/kernels", params.kernels.data),
        ("model/alpha", params.alpha.data),
        ("model/beta", params.beta.data),
        ("model/gamma", params.gamma.data),
        ("model/proj", params.proj.data),
    ]
    if count_table is not None:
        sections.append(("map/theta", count_table.theta.astype(np.float64)))
        sections.append(("map/weights", count_table.weights))
        sections.append(("map/label_freq", count_table.label_freq.astype(np.float64)))
    for cand in candidates:
        sections.append(
            (f"struct/cand_{cand.label}", np.asarray(cand.indices, dtype=np.float64))
        )
    for att in attentions:
        sections.append((f"struct/s_{att.label}", att.s.data))

    meta = _meta_text(meta_items).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(sections)))
        for name, arr in sections:
            _write_section(fh, name, arr)


def read_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    if raw[4] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {raw[4]}")
    (meta_len,) = struct.unpack_from("<I", raw, 5)
    at = 9
    meta_text = raw[at : at + meta_len].decode("utf-8")
    at += meta_len
    meta: dict[str, str] = {}
    for line in meta_text.splitlines():
        if not line.strip():
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        meta[key] = value
    if meta.get("flatten_order") != FLATTEN_ORDER:
        raise ValueError(f"unsupported flatten order {meta.get('flatten_order')!r}")

    (nsections,) = struct.unpack_from("<I", raw, at)
    at += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(nsections):
        (name_len,) = struct.unpack_from("<I", raw, at)
        at += 4
        name = raw[at : at + name_len].decode("utf-8")
        at += name_len
        (rank,) = struct.unpack_from("<I", raw, at)
        at += 4
        dims = struct.unpack_from(f"<{rank}I", raw, at)
        at += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=at).reshape(dims)
        at += 8 * count
        arrays[name] = arr.astype(np.float64)

    params = ModelParams(
        kernels=Value(arrays["model/kernels"], requires_grad=True),
        alpha=Value(arrays["model/alpha"], requires_grad=True),
        beta=Value(arrays["model/beta"], requires_grad=True),
        gamma=Value(arrays["model/gamma"], requires_grad=True),
        proj=Value(arrays["model/proj"], requires_grad=True),
        epsilon=float(meta["epsilon"]),
        stride=int(meta["stride"]),
        dropout=float(meta["dropout"]),
        literal_mask=meta["literal_mask"] == "true",
    )
    n_cand = int(meta.get("num_candidate_sets", "0"))
    n_att = int(meta.get("num_attentions", "0"))
    candidates = []
    attentions = []
    for r in range(params.num_labels):
        key = f"struct/cand_{r}"
        if key in arrays:
            candidates.append(
                CandidateSet(label=r, indices=tuple(int(i) for i in arrays[key]))
            )
        key = f"struct/s_{r}"
        if key in arrays:
            attentions.append(
                AttentionParams(label=r, s=Value(arrays[key].copy(), requires_grad=True))
            )
    if len(candidates) != n_cand or len(attentions) != n_att:
        raise ValueError("checkpoint structure sections inconsistent with meta")

    table = None
    if meta.get("has_count_table") == "true":
        table = CountTable(
            theta=arrays["map/theta"].astype(np.int64),
            weights=arrays["map/weights"],
            label_freq=arrays["map/label_freq"].astype(np.int64),
            mean_active=float(meta["mean_active"]),
        )
    return Checkpoint(
        mode=meta["mode"],
        meta=meta,
        params=params,
        event_names=meta["event_names"].split(","),
        n_max=int(meta["n_max"]),
        delta=float(meta["delta"]),
        tau=float(meta["tau"]),
        candidates=candidates,
        attentions=attentions,
        count_table=table,
    )


# ---------------------------------------------------------------------------
# rule report and eval report


def write_rules_report(
    path: str | Path,
    ranked: dict[int, list[tuple[Rule, float]]],
    event_names: list[str],
) -> None:
    lines = []
    for label in sorted(ranked):
        for rule, att in ranked[label]:
            lines.append(
                f"label_{label} := {format_rule(rule, event_names)} @ {att!r}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_rules_report(
    path: str | Path, event_names: list[str]
) -> dict[int, list[tuple[Rule, float]]]:
    out: dict[int, list[tuple[Rule, float]]] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        head, rest = line.split(" := ", 1)
        label = int(head.removeprefix("label_"))
        body_text, att_text = rest.rsplit(" @ ", 1)
        rule = Rule(body=parse_rule_body(body_text, event_names), label=label)
        out.setdefault(label, []).append((rule, float(att_text)))
    return out


def write_eval_report(path: str | Path, report) -> None:
    lines = []
    for k in sorted(report.hits):
        lines.append(f"hits@{k}: {report.hits[k]!r}")
    lines.append(f"mAP: {report.map_score!r}")
    lines.append(f"MRR: {report.mrr_score!r}")
    for length in sorted(report.per_length):
        lines.append(f"labels len_{length}: {report.labels_per_length[length]}")
        for k in sorted(report.per_length[length]):
            lines.append(f"hits@{k} len_{length}: {report.per_length[length][k]!r}")
    if report.skipped_labels:
        lines.append(
            "map_skipped_labels: " + ",".join(str(i) for i in report.skipped_labels)
        )
    for label in sorted(report.per_label_rank):
        rank = report.per_label_rank[label]
        lines.append(f"rank label_{label}: {rank if rank is not None else 'none'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
