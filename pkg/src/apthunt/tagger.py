"""BiGRU-CRF sequence tagger over BIO2 ability labels.

The encoder runs a GRU in both temporal directions, projects the concatenated
hidden states to per-tag emission scores, and a linear-chain CRF decodes the
jointly best label sequence. Training minimizes the CRF negative
log-likelihood with analytic gradients: expected-minus-observed feature
counts through the CRF and backpropagation through time for both GRU
directions. All math is float64 so the finite-difference checks stay tight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import AlignmentMismatchError, DimMismatchError, NonFiniteError

MASK_PENALTY = -1e6


@dataclass(frozen=True)
class LabelSet:
    """BIO2 tag inventory derived from an ordered ability list.

    Tag index 0 is O; ability number i (0-based) owns tags 1+2i (B) and
    2+2i (I).
    """

    abilities: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.abilities)) != len(self.abilities):
            raise ValueError("duplicate ability identifiers")

    @property
    def tags(self) -> tuple[str, ...]:
        out = ["O"]
        for a in self.abilities:
            out.append(f"B-{a}")
            out.append(f"I-{a}")
        return tuple(out)

    @property
    def n_tags(self) -> int:
        return 1 + 2 * len(self.abilities)

    def tag_index(self, tag: str) -> int:
        if tag == "O":
            return 0
        kind, _, ability = tag.partition("-")
        if kind not in ("B", "I") or ability not in self.abilities:
            raise KeyError(f"unknown tag {tag!r}")
        i = self.abilities.index(ability)
        return 1 + 2 * i + (0 if kind == "B" else 1)

    def tag_name(self, index: int) -> str:
        return self.tags[index]


@dataclass
class GruParams:
    """Weights for one GRU direction: update/reset/candidate gates."""

    w_update: np.ndarray  # (h, k)
    u_update: np.ndarray  # (h, h)
    b_update: np.ndarray  # (h,)
    w_reset: np.ndarray
    u_reset: np.ndarray
    b_reset: np.ndarray
    w_cand: np.ndarray
    u_cand: np.ndarray
    b_cand: np.ndarray

    FIELDS = ("w_update", "u_update", "b_update", "w_reset", "u_reset",
              "b_reset", "w_cand", "u_cand", "b_cand")

    @property
    def hidden(self) -> int:
        return self.b_update.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_update.shape[1]


@dataclass
class BiGruCrfModel:
    forward: GruParams
    backward: GruParams
    proj_weight: np.ndarray  # (n_tags, 2h)
    proj_bias: np.ndarray  # (n_tags,)
    transitions: np.ndarray  # (n_tags, n_tags)
    start: np.ndarray  # (n_tags,)
    end: np.ndarray  # (n_tags,)
    label_set: LabelSet | None  # None for a raw (non-BIO2) tag space
    history: dict = field(default_factory=dict)

    @property
    def hidden(self) -> int:
        return self.forward.hidden

    @property
    def input_dim(self) -> int:
        return self.forward.input_dim

    @property
    def n_tags(self) -> int:
        return self.proj_weight.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live views of every trainable tensor, in the fixed init order."""
        out: dict[str, np.ndarray] = {}
        for prefix, gru in (("fwd", self.forward), ("bwd", self.backward)):
            for name in GruParams.FIELDS:
                out[f"{prefix}.{name}"] = getattr(gru, name)
        out["proj.weight"] = self.proj_weight
        out["proj.bias"] = self.proj_bias
        out["crf.transitions"] = self.transitions
        out["crf.start"] = self.start
        out["crf.end"] = self.end
        return out


@dataclass(frozen=True)
class TagSequence:
    tags: tuple[int, ...]
    score: float

    def __len__(self) -> int:
        return len(self.tags)

    def names(self, label_set: LabelSet) -> tuple[str, ...]:
        return tuple(label_set.tag_name(i) for i in self.tags)


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 64
    lr: float = 0.01
    epochs: int = 20
    batch: int = 32
    seed: int = 0
    clip: float = 5.0


def _gru_shapes(hidden: int, input_dim: int):
    for name in GruParams.FIELDS:
        if name.startswith("w_"):
            yield name, (hidden, input_dim)
        elif name.startswith("u_"):
            yield name, (hidden, hidden)
        else:
            yield name, (hidden,)


def init_model_raw(
    input_dim: int, hidden: int, n_tags: int, seed: int
) -> BiGruCrfModel:
    """Seeded uniform(-0.1, 0.1) init over a raw tag space of size n_tags.

    The draw order matches parameters(), so given (shapes, seed) the init is
    reproducible bit for bit.
    """
    rng = np.random.default_rng(seed)

    def draw(shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    grus = []
    for _ in range(2):
        grus.append(
            GruParams(**{name: draw(shape) for name, shape in _gru_shapes(hidden, input_dim)})
        )
    return BiGruCrfModel(
        forward=grus[0],
        backward=grus[1],
        proj_weight=draw((n_tags, 2 * hidden)),
        proj_bias=draw((n_tags,)),
        transitions=draw((n_tags, n_tags)),
        start=draw((n_tags,)),
        end=draw((n_tags,)),
        label_set=None,
    )


def init_model(
    input_dim: int, hidden: int, label_set: LabelSet, seed: int
) -> BiGruCrfModel:
    model = init_model_raw(input_dim, hidden, label_set.n_tags, seed)
    model.label_set = label_set
    return model


def _as_input_matrix(model: BiGruCrfModel, inputs) -> np.ndarray:
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("inputs must be a nonempty (T, k) array")
    if x.shape[1] != model.input_dim:
        raise DimMismatchError(model.input_dim, x.shape[1], "input vector")
    return x


def _encode(model: BiGruCrfModel, x: np.ndarray):
    """Run both GRU directions; returns (emissions, caches) for backprop."""
    f = model.forward
    b = model.backward
    fwd = kernels.gru_forward(
        x, f.w_update, f.u_update, f.b_update, f.w_reset, f.u_reset, f.b_reset,
        f.w_cand, f.u_cand, f.b_cand,
    )
    x_rev = np.ascontiguousarray(x[::-1])
    bwd = kernels.gru_forward(
        x_rev, b.w_update, b.u_update, b.b_update, b.w_reset, b.u_reset,
        b.b_reset, b.w_cand, b.u_cand, b.b_cand,
    )
    concat = np.concatenate([fwd[0], bwd[0][::-1]], axis=1)
    emissions = concat @ model.proj_weight.T + model.proj_bias
    return emissions, (x, x_rev, fwd, bwd, concat)


def bigru_forward(model: BiGruCrfModel, inputs) -> np.ndarray:
    """Per-step emission scores, shape (T, n_tags)."""
    x = _as_input_matrix(model, inputs)
    emissions, _ = _encode(model, x)
    return emissions


def crf_log_partition(emissions, transitions, start, end) -> float:
    """log of the summed exp path scores over all tag sequences."""
    em = np.ascontiguousarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1:
        raise ValueError("emissions must be a nonempty (T, K) array")
    return kernels.crf_forward(
        em,
        np.ascontiguousarray(transitions, dtype=np.float64),
        np.ascontiguousarray(start, dtype=np.float64),
        np.ascontiguousarray(end, dtype=np.float64),
    )


def crf_viterbi(emissions, transitions, start, end) -> TagSequence:
    """Highest-scoring path; ties break toward the lowest tag index."""
    em = np.ascontiguousarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1:
        raise ValueError("emissions must be a nonempty (T, K) array")
    path, score = kernels.crf_viterbi(
        em,
        np.ascontiguousarray(transitions, dtype=np.float64),
        np.ascontiguousarray(start, dtype=np.float64),
        np.ascontiguousarray(end, dtype=np.float64),
    )
    return TagSequence(tags=tuple(int(i) for i in path), score=float(score))


def path_score(emissions, transitions, start, end, tags) -> float:
    steps = emissions.shape[0]
    total = float(start[tags[0]]) + float(end[tags[steps - 1]])
    for t in range(steps):
        total += float(emissions[t, tags[t]])
    for t in range(steps - 1):
        total += float(transitions[tags[t], tags[t + 1]])
    return total


def nll_and_gradients(
    model: BiGruCrfModel, inputs, gold_tags
) -> tuple[float, dict[str, np.ndarray]]:
    """CRF negative log-likelihood and analytic gradients for every tensor."""
    x = _as_input_matrix(model, inputs)
    gold = np.asarray(gold_tags, dtype=np.int64)
    if gold.shape != (x.shape[0],):
        raise AlignmentMismatchError(x.shape[0], gold.shape[0], "inputs/gold tags")
    if gold.min() < 0 or gold.max() >= model.n_tags:
        raise ValueError("gold tag index out of range")

    emissions, (x, x_rev, fwd, bwd, concat) = _encode(model, x)
    unary, pairwise, log_z = kernels.crf_marginals(
        emissions, model.transitions, model.start, model.end
    )
    gold_score = path_score(emissions, model.transitions, model.start, model.end, gold)
    loss = log_z - gold_score

    steps = x.shape[0]
    # expected minus observed counts
    d_em = unary.copy()
    d_em[np.arange(steps), gold] -= 1.0
    d_trans = pairwise.sum(axis=0)
    for t in range(steps - 1):
        d_trans[gold[t], gold[t + 1]] -= 1.0
    d_start = unary[0].copy()
    d_start[gold[0]] -= 1.0
    d_end = unary[steps - 1].copy()
    d_end[gold[steps - 1]] -= 1.0

    d_proj_w = d_em.T @ concat
    d_proj_b = d_em.sum(axis=0)
    d_concat = d_em @ model.proj_weight
    h = model.hidden
    d_h_fwd = np.ascontiguousarray(d_concat[:, :h])
    d_h_bwd = np.ascontiguousarray(d_concat[:, h:][::-1])

    f = model.forward
    b = model.backward
    g_fwd = kernels.gru_backward(
        x, fwd[0], fwd[1], fwd[2], fwd[3], d_h_fwd,
        f.w_update, f.u_update, f.w_reset, f.u_reset, f.w_cand, f.u_cand,
    )
    g_bwd = kernels.gru_backward(
        x_rev, bwd[0], bwd[1], bwd[2], bwd[3], d_h_bwd,
        b.w_update, b.u_update, b.w_reset, b.u_reset, b.w_cand, b.u_cand,
    )
    grads: dict[str, np.ndarray] = {}
    for prefix, g in (("fwd", g_fwd), ("bwd", g_bwd)):
        for name, grad in zip(GruParams.FIELDS, g):
            grads[f"{prefix}.{name}"] = grad
    grads["proj.weight"] = d_proj_w
    grads["proj.bias"] = d_proj_b
    grads["crf.transitions"] = d_trans
    grads["crf.start"] = d_start
    grads["crf.end"] = d_end
    return float(loss), grads


def bio2_decode_penalties(label_set: LabelSet) -> tuple[np.ndarray, np.ndarray]:
    """Additive penalties forbidding I-a except after B-a/I-a of the same a."""
    n = label_set.n_tags
    start_pen = np.zeros(n)
    trans_pen = np.zeros((n, n))
    for i, a in enumerate(label_set.abilities):
        b_idx = 1 + 2 * i
        i_idx = b_idx + 1
        start_pen[i_idx] = MASK_PENALTY
        trans_pen[:, i_idx] = MASK_PENALTY
        trans_pen[b_idx, i_idx] = 0.0
        trans_pen[i_idx, i_idx] = 0.0
    return start_pen, trans_pen


def tag(model: BiGruCrfModel, inputs, bio2_mask: bool = False) -> TagSequence:
    """Encode then Viterbi-decode one sequence of event vectors."""
    emissions = bigru_forward(model, inputs)
    start, transitions = model.start, model.transitions
    if bio2_mask:
        if model.label_set is None:
            raise ValueError("bio2_mask requires a model with a label set")
        start_pen, trans_pen = bio2_decode_penalties(model.label_set)
        start = start + start_pen
        transitions = transitions + trans_pen
    return crf_viterbi(emissions, transitions, start, model.end)


def train(dataset, hyper: TrainConfig, label_set: LabelSet) -> BiGruCrfModel:
    """Mini-batch SGD on the CRF NLL with global gradient-norm clipping.

    ``dataset`` is a list of (inputs (T, k), gold tag index sequence) pairs.
    Deterministic for a fixed config: init and epoch shuffles come from one
    seeded generator, and batch gradients are reduced in dataset order.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    input_dim = np.asarray(dataset[0][0]).shape[1]
    model = init_model(input_dim, hyper.hidden, label_set, hyper.seed)
    params = model.parameters()
    rng = np.random.default_rng(hyper.seed + 1)
    losses: list[float] = []
    n = len(dataset)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, hyper.batch):
            batch_idx = order[lo : lo + hyper.batch]
            total: dict[str, np.ndarray] = {
                k: np.zeros_like(v) for k, v in params.items()
            }
            batch_loss = 0.0
            for i in batch_idx:
                inputs, gold = dataset[i]
                loss, grads = nll_and_gradients(model, inputs, gold)
                if not np.isfinite(loss):
                    raise NonFiniteError(
                        f"non-finite loss at epoch {epoch}, sequence {int(i)}"
                    )
                batch_loss += loss
                for k in total:
                    total[k] += grads[k]
            scale = 1.0 / len(batch_idx)
            norm_sq = 0.0
            for k in total:
                total[k] *= scale
                norm_sq += float(np.sum(total[k] * total[k]))
            norm = np.sqrt(norm_sq)
            if hyper.clip > 0.0 and norm > hyper.clip:
                shrink = hyper.clip / norm
                for k in total:
                    total[k] *= shrink
            for k, p in params.items():
                p -= hyper.lr * total[k]
            epoch_loss += batch_loss
        losses.append(epoch_loss / n)
    model.history = {
        "epochs": hyper.epochs,
        "loss": losses,
        "config": {
            "hidden": hyper.hidden, "lr": hyper.lr, "epochs": hyper.epochs,
            "batch": hyper.batch, "seed": hyper.seed, "clip": hyper.clip,
        },
    }
    return model


def save_model(model: BiGruCrfModel, path: str | Path) -> None:
    if model.label_set is None:
        raise ValueError("cannot serialize a model without a label set")
    doc = {
        "version": 1,
        "abilities": list(model.label_set.abilities),
        "hidden": model.hidden,
        "input_dim": model.input_dim,
        "params": {k: v.tolist() for k, v in model.parameters().items()},
        "history": model.history,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> BiGruCrfModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError(f"unsupported tagger model version: {doc.get('version')!r}")
    label_set = LabelSet(abilities=tuple(doc["abilities"]))
    params = {k: np.array(v, dtype=float) for k, v in doc["params"].items()}
    grus = {}
    for prefix in ("fwd", "bwd"):
        grus[prefix] = GruParams(
            **{name: params[f"{prefix}.{name}"] for name in GruParams.FIELDS}
        )
    return BiGruCrfModel(
        forward=grus["fwd"],
        backward=grus["bwd"],
        proj_weight=params["proj.weight"],
        proj_bias=params["proj.bias"],
        transitions=params["crf.transitions"],
        start=params["crf.start"],
        end=params["crf.end"],
        label_set=label_set,
        history=doc.get("history", {}),
    )
