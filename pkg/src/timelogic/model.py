"""The differentiable forward pass from raw event streams to label scores.

Pipeline per sample:

  1. compress:   per-event strided 1-D convolution of the score timeline,
                 scaled by a learned scalar alpha;
  2. time_index: multiply by the 1-based position so magnitudes carry time;
  3. interval extraction: mask positions whose compressed score looks like
                 noise, then min/max recover each event's (start, end);
  4. predicate scores: before = v_start - u_end, after = u_start - v_end,
                 during = min(v_end - u_start, u_end - v_start);
  5. normalise with per-kind shift/scale + softmax, then clip every score
                 by the shorter event duration so absent events cannot
                 assert confident relations;
  6. marginalise over all ordered object pairs into the [X, X, 3] relation
                 matrix, flatten, dropout, project with weights in [0, 1],
                 sigmoid -> per-label probabilities.

Scalar per-row/per-pair functions mirror the batched pipeline and are used
by the tests; `forward` is the vectorised path used for training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diff
from .diff import Value


@dataclass
class ModelParams:
    """All learnable quantities plus fixed forward-pass hyperparameters."""

    kernels: Value  # [|X|, l] per-event convolution kernels
    alpha: Value  # scalar in [0, 1], scales compressed scores
    beta: Value  # [3] per-kind shift
    gamma: Value  # [3] per-kind scale, |gamma| kept >= GAMMA_FLOOR
    proj: Value  # [d, |R|] projection, entries in [0, 1]
    epsilon: float = 0.5
    stride: int = 2
    dropout: float = 0.2
    literal_mask: bool = False  # threshold positional scores instead of M_C

    GAMMA_FLOOR = 1e-3

    @property
    def num_events(self) -> int:
        return self.kernels.data.shape[0]

    @property
    def kernel_len(self) -> int:
        return self.kernels.data.shape[1]

    @property
    def num_labels(self) -> int:
        return self.proj.data.shape[1]

    def learnable(self) -> list[Value]:
        return [self.kernels, self.alpha, self.beta, self.gamma, self.proj]

    def zero_grad(self) -> None:
        for p in self.learnable():
            p.zero_grad()

    def project(self) -> None:
        """Constrain alpha and projection weights to [0, 1] and keep the
        per-kind scale away from zero.  Applied after every optimizer step."""
        np.clip(self.alpha.data, 0.0, 1.0, out=self.alpha.data)
        np.clip(self.proj.data, 0.0, 1.0, out=self.proj.data)
        g = self.gamma.data
        tiny = np.abs(g) < self.GAMMA_FLOOR
        g[tiny] = np.where(g[tiny] >= 0.0, self.GAMMA_FLOOR, -self.GAMMA_FLOOR)


def init_params(
    rng: np.random.Generator,
    num_events: int,
    num_labels: int,
    kernel_len: int = 3,
    stride: int = 2,
    epsilon: float = 0.5,
    dropout: float = 0.2,
    literal_mask: bool = False,
) -> ModelParams:
    """Averaging kernels, alpha 1, identity shift/scale, small uniform proj."""
    d = num_events * num_events * 3
    return ModelParams(
        kernels=Value(
            np.full((num_events, kernel_len), 1.0 / kernel_len), requires_grad=True
        ),
        alpha=Value(np.asarray(1.0), requires_grad=True),
        beta=Value(np.zeros(3), requires_grad=True),
        gamma=Value(np.ones(3), requires_grad=True),
        proj=Value(rng.uniform(0.0, 0.1, size=(d, num_labels)), requires_grad=True),
        epsilon=epsilon,
        stride=stride,
        dropout=dropout,
        literal_mask=literal_mask,
    )


def canonical_params(num_events: int, num_labels: int = 1) -> ModelParams:
    """Hand-set deterministic configuration: identity kernel, stride 1,
    alpha=1, beta=0, gamma=1, epsilon=0.5.  Used by the deterministic
    baseline and the oracle-agreement checks."""
    d = num_events * num_events * 3
    return ModelParams(
        kernels=Value(np.ones((num_events, 1))),
        alpha=Value(np.asarray(1.0)),
        beta=Value(np.zeros(3)),
        gamma=Value(np.ones(3)),
        proj=Value(np.zeros((d, num_labels))),
        epsilon=0.5,
        stride=1,
        dropout=0.0,
    )


def output_length(horizon: int, kernel_len: int, stride: int) -> int:
    return (horizon - kernel_len) // stride + 1


# ---------------------------------------------------------------------------
# spec-level single-sample operations


def compress(stream: np.ndarray, params: ModelParams) -> Value:
    """[k, |X|, T] scores -> [k, |X|, t] compressed scores (Eq. style:
    alpha * per-event valid strided convolution)."""
    out = diff.conv1d_per_event(diff.as_value(stream), params.kernels, params.stride)
    return diff.mul(out, params.alpha)


def time_index(compressed: Value) -> Value:
    """Multiply position (1-based) into the trailing time axis."""
    t = compressed.data.shape[-1]
    positions = np.broadcast_to(
        np.arange(1.0, t + 1.0), compressed.data.shape
    ).copy()
    return diff.mul(compressed, diff.as_value(positions))


def extract_interval(
    row_a: Value, row_c: np.ndarray, epsilon: float, literal_mask: bool = False
) -> tuple[Value, Value]:
    """Recover (start, end) of one event row.

    `row_a` is the positionally scaled row, `row_c` the compressed
    probabilities.  Positions whose probability falls below epsilon are
    treated as noise: a mask of magnitude max(row_a) + epsilon is added
    there so the min picks the earliest active position; subtracting the
    mask minimum cancels the offset when every position is masked.  The
    noise indicator is a constant w.r.t. differentiation.
    """
    source = row_a.data if literal_mask else row_c
    indicator = (source < epsilon).astype(np.float64)
    peak = diff.reduce_max(row_a, axis=-1)
    mask = diff.mul(
        diff.expand_last(diff.add(peak, epsilon), row_a.data.shape[-1]),
        diff.as_value(indicator),
    )
    start = diff.sub(
        diff.reduce_min(diff.add(row_a, mask), axis=-1),
        diff.reduce_min(mask, axis=-1),
    )
    return start, peak


def predicate_scores(u: tuple[Value, Value], v: tuple[Value, Value]) -> Value:
    """Raw [before, during, after] scores from two (start, end) pairs."""
    u_start, u_end = u
    v_start, v_end = v
    before = diff.sub(v_start, u_end)
    after = diff.sub(u_start, v_end)
    during = diff.min2(diff.sub(v_end, u_start), diff.sub(u_end, v_start))
    return diff.stack_last([before, during, after])


def normalize_and_suppress(
    raw: Value,
    u: tuple[Value, Value],
    v: tuple[Value, Value],
    beta: Value,
    gamma: Value,
) -> Value:
    """Per-kind shifted/scaled softmax, then clip by the shorter duration."""
    probs = diff.softmax(diff.affine_last(raw, beta, gamma), axis=-1)
    supp = diff.min2(diff.sub(u[1], u[0]), diff.sub(v[1], v[0]))
    return diff.min2(probs, diff.expand_last(supp, 3))


def pairwise_relations(
    m_a: Value, m_c: np.ndarray, params: ModelParams
) -> Value:
    """Relation matrix [|X|, |X|, 3] for one sample, loop implementation.

    Every ordered object pair and ordered event pair is scored and the
    object-pair blocks are summed.  The batched `forward` computes the
    same quantity vectorised; tests assert they agree.
    """
    k, x, _ = m_a.data.shape
    blocks = []
    starts_ends = {}
    for i in range(k):
        for e in range(x):
            row_a = _row(m_a, i, e)
            starts_ends[(i, e)] = extract_interval(
                row_a, m_c[i, e], params.epsilon, params.literal_mask
            )
    for i in range(k):
        for j in range(k):
            rows = []
            for uu in range(x):
                cols = []
                for vv in range(x):
                    su = starts_ends[(i, uu)]
                    sv = starts_ends[(j, vv)]
                    raw = predicate_scores(su, sv)
                    cols.append(
                        normalize_and_suppress(raw, su, sv, params.beta, params.gamma)
                    )
                rows.append(diff.stack_last(cols))
            block = diff.stack_last(rows)  # [3, |X|v, |X|u] stacked trailing
            blocks.append(block)
    total = blocks[0]
    for b in blocks[1:]:
        total = diff.add(total, b)
    # stacked trailing axes arrived reversed: [3, v, u] -> [u, v, 3]
    return _transpose(total, (2, 1, 0))


def _row(m_a: Value, obj: int, event: int) -> Value:
    """Differentiable view of one (object, event) row."""
    sel = np.zeros(m_a.data.shape[:2])
    sel[obj, event] = 1.0
    weighted = diff.mul(
        m_a, diff.as_value(np.broadcast_to(sel[..., None], m_a.data.shape).copy())
    )
    return diff.sum_axes(weighted, (0, 1))


def _transpose(x: Value, axes: tuple[int, ...]) -> Value:
    def bw(out):
        def run(gr):
            if x.requires_grad:
                x.grad += gr.transpose(np.argsort(axes))

        return run

    return diff._make(x.data.transpose(axes), (x,), bw)


def predict_labels(
    relation: Value,
    proj: Value,
    dropout_rate: float,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Value:
    """Flatten the relation matrix, dropout (training only), project, sigmoid."""
    d = proj.data.shape[0]
    if relation.data.ndim == 3:
        vec = diff.reshape(relation, (1, d))
    else:
        vec = diff.reshape(relation, (relation.data.shape[0], d))
    if vec.data.shape[1] != d:
        raise ValueError(
            f"relation matrix of {vec.data.shape[1]} entries does not match "
            f"projection rows {d}"
        )
    if training and dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        vec = diff.dropout(vec, dropout_rate, rng, training=True)
    out = diff.sigmoid(diff.matmul(vec, proj))
    return diff.reshape(out, (proj.data.shape[1],)) if relation.data.ndim == 3 else out


# ---------------------------------------------------------------------------
# vectorised batched forward


def interval_bounds(
    m_a: Value, m_c: np.ndarray, epsilon: float, literal_mask: bool = False
) -> tuple[Value, Value, Value]:
    """Batched starts/ends/durations over [B, k, |X|, t] rows."""
    t = m_a.data.shape[-1]
    source = m_a.data if literal_mask else m_c
    indicator = (source < epsilon).astype(np.float64)
    peak = diff.reduce_max(m_a, axis=-1)  # [B, k, X]
    mask = diff.mul(
        diff.expand_last(diff.add(peak, epsilon), t), diff.as_value(indicator)
    )
    start = diff.sub(
        diff.reduce_min(diff.add(m_a, mask), axis=-1),
        diff.reduce_min(mask, axis=-1),
    )
    duration = diff.sub(peak, start)
    return start, peak, duration


def relation_matrix(scores: np.ndarray, params: ModelParams) -> Value:
    """Batched [B, k, |X|, T] scores -> [B, |X|, |X|, 3] relation matrices."""
    if scores.ndim == 3:
        scores = scores[None]
    m_c = diff.mul(
        diff.conv1d_per_event(diff.as_value(scores), params.kernels, params.stride),
        params.alpha,
    )
    m_a = time_index(m_c)
    start, end, duration = interval_bounds(
        m_a, m_c.data, params.epsilon, params.literal_mask
    )
    tile = diff.tile_pairs
    u_start, u_end, u_dur = tile(start, "u"), tile(end, "u"), tile(duration, "u")
    v_start, v_end, v_dur = tile(start, "v"), tile(end, "v"), tile(duration, "v")
    before = diff.sub(v_start, u_end)
    after = diff.sub(u_start, v_end)
    during = diff.min2(diff.sub(v_end, u_start), diff.sub(u_end, v_start))
    raw = diff.stack_last([before, during, after])  # [B, k, k, X, X, 3]
    probs = diff.softmax(diff.affine_last(raw, params.beta, params.gamma), axis=-1)
    supp = diff.expand_last(diff.min2(u_dur, v_dur), 3)
    suppressed = diff.min2(probs, supp)
    return diff.sum_axes(suppressed, (1, 2))  # [B, X, X, 3]


def forward(
    scores: np.ndarray,
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Value, Value]:
    """Batched scores -> (relation matrices [B, X, X, 3], label probs [B, R])."""
    relation = relation_matrix(scores, params)
    yhat = predict_labels(relation, params.proj, params.dropout, training, rng)
    return relation, yhat
