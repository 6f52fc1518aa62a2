"""Small dense classifiers with exact per-example gradients.

Architectures are multinomial logistic regression (no hidden layers) and
ReLU multilayer perceptrons, in float64. A model optionally carries one of
two abstention-specific head layouts:

* ``abstention_head``: a single output layer of width ``C + 1`` whose last
  output is reserved for abstention mass;
* ``selectivenet_heads``: three output layers sharing the representation, a
  prediction head ``f`` (width ``C``), a scalar selection head ``g`` and an
  auxiliary head ``h`` (width ``C``).

Per-example gradients are computed by hand-written reverse mode, vectorized
over the batch. Differentially private optimization clips these individually,
so they must be exact, not an approximation: the test suite checks them
against central finite differences and against the closed form for logistic
regression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import losses
from .losses import LossSpec, sigmoid
from .rng import STREAM_DROPOUT, STREAM_INIT, generator

PARAMS_FORMAT = "dpselect-params"
PARAMS_VERSION = 1

__all__ = [
    "ModelSpec",
    "ParamVector",
    "SelectiveNetOutputs",
    "init_params",
    "softmax",
    "forward",
    "predict",
    "predict_probs",
    "per_sample_grad",
    "batch_grad",
    "save_params",
    "load_params",
]


class SelectiveNetOutputs(NamedTuple):
    f_logits: np.ndarray
    g_raw: np.ndarray
    h_logits: np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    num_classes: int
    hidden_sizes: tuple[int, ...] = ()
    abstention_head: bool = False
    selectivenet_heads: bool = False
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.abstention_head and self.selectivenet_heads:
            raise ValueError("abstention_head and selectivenet_heads are exclusive")

    @property
    def architecture(self) -> str:
        return "mlp" if self.hidden_sizes else "linear"

    @property
    def n_outputs(self) -> int:
        """Width of the main output layer (prediction head for selective nets)."""
        return self.num_classes + 1 if self.abstention_head else self.num_classes

    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Ordered (name, shape) pairs defining the flat parameter vector."""
        entries: list[tuple[str, tuple[int, ...]]] = []
        prev = self.input_dim
        for i, width in enumerate(self.hidden_sizes):
            entries.append((f"h{i}.W", (width, prev)))
            entries.append((f"h{i}.b", (width,)))
            prev = width
        if self.selectivenet_heads:
            for name, width in (("f", self.num_classes), ("g", 1), ("h", self.num_classes)):
                entries.append((f"{name}.W", (width, prev)))
                entries.append((f"{name}.b", (width,)))
        else:
            entries.append(("out.W", (self.n_outputs, prev)))
            entries.append(("out.b", (self.n_outputs,)))
        return tuple(entries)

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_sizes": list(self.hidden_sizes),
            "abstention_head": self.abstention_head,
            "selectivenet_heads": self.selectivenet_heads,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            num_classes=int(d["num_classes"]),
            hidden_sizes=tuple(d.get("hidden_sizes", ())),
            abstention_head=bool(d.get("abstention_head", False)),
            selectivenet_heads=bool(d.get("selectivenet_heads", False)),
            dropout_rate=float(d.get("dropout_rate", 0.0)),
        )


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector plus the layout that interprets it."""

    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]
    _offsets: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        offsets, pos = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            offsets[name] = (pos, shape)
            pos += size
        if values.shape != (pos,):
            raise ValueError(f"expected {pos} parameters, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_offsets", offsets)

    def __len__(self) -> int:
        return self.values.shape[0]

    def view(self, name: str) -> np.ndarray:
        pos, shape = self._offsets[name]
        return self.values[pos : pos + int(np.prod(shape))].reshape(shape)

    def replace(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Fan-in-scaled Gaussian weights (variance 2 / fan_in), zero biases.

    Weight matrices are drawn in layout order from a single PCG64 stream, so
    the full vector is a pure function of (spec, seed).
    """
    rng = generator(seed, STREAM_INIT)
    chunks = []
    for name, shape in spec.layout():
        if name.endswith(".W"):
            fan_in = shape[1]
            chunks.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).ravel())
        else:
            chunks.append(np.zeros(int(np.prod(shape))))
    return ParamVector(np.concatenate(chunks), spec.layout())


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _hidden_forward(params: ParamVector, spec: ModelSpec, x: np.ndarray,
                    dropout_seed: int | None):
    """Run the hidden stack; returns layer inputs, ReLU gates, dropout scales.

    ``acts[l]`` is the (post-dropout) input of hidden layer ``l``; the last
    entry is the representation feeding the heads. A dropout mask zeroes a
    unit with probability ``dropout_rate`` and rescales survivors by
    ``1 / (1 - rate)``; masks are a function of (seed, layer, batch shape).
    """
    a = x
    acts = [a]
    gates, scales = [], []
    for layer, _ in enumerate(spec.hidden_sizes):
        z = a @ params.view(f"h{layer}.W").T + params.view(f"h{layer}.b")
        gate = z > 0
        a = np.where(gate, z, 0.0)
        if dropout_seed is not None and spec.dropout_rate > 0.0:
            rng = generator(dropout_seed, STREAM_DROPOUT, layer)
            mask = rng.random(a.shape) >= spec.dropout_rate
            scale = mask / (1.0 - spec.dropout_rate)
            a = a * scale
            scales.append(scale)
        else:
            scales.append(None)
        gates.append(gate)
        acts.append(a)
    return acts, gates, scales


def _head_outputs(params: ParamVector, spec: ModelSpec, rep: np.ndarray):
    if spec.selectivenet_heads:
        f = rep @ params.view("f.W").T + params.view("f.b")
        g = rep @ params.view("g.W").T + params.view("g.b")
        h = rep @ params.view("h.W").T + params.view("h.b")
        return SelectiveNetOutputs(f, g[..., 0], h)
    return rep @ params.view("out.W").T + params.view("out.b")


def forward(params: ParamVector, spec: ModelSpec, x: np.ndarray,
            dropout_seed: int | None = None):
    """Head pre-activations for one point or a batch.

    With ``dropout_seed=None`` the pass is deterministic; otherwise dropout
    is active and the given seed fully determines the masks. Returns logits
    of width ``n_outputs``, or :class:`SelectiveNetOutputs` when the spec has
    selective heads.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != spec.input_dim:
        raise ValueError(f"expected {spec.input_dim} features, got {xb.shape[1]}")
    acts, _, _ = _hidden_forward(params, spec, xb, dropout_seed)
    out = _head_outputs(params, spec, acts[-1])
    if single:
        if isinstance(out, SelectiveNetOutputs):
            return SelectiveNetOutputs(out.f_logits[0], out.g_raw[0], out.h_logits[0])
        return out[0]
    return out


def predict_probs(params: ParamVector, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Deterministic softmax outputs; the prediction head for selective nets."""
    out = forward(params, spec, x)
    logits = out.f_logits if isinstance(out, SelectiveNetOutputs) else out
    return softmax(logits)


def predict(params: ParamVector, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Argmax over the first ``num_classes`` outputs; ties take the lower index."""
    probs = predict_probs(params, spec, x)
    return np.argmax(probs[..., : spec.num_classes], axis=-1)


def _check_loss_compat(spec: ModelSpec, loss: LossSpec) -> None:
    if loss.kind == "sat" and not spec.abstention_head:
        raise ValueError("sat loss requires abstention_head=True")
    if loss.kind == "selectivenet" and not spec.selectivenet_heads:
        raise ValueError("selectivenet loss requires selectivenet_heads=True")
    if loss.kind == "cross_entropy" and spec.selectivenet_heads:
        raise ValueError("cross_entropy loss cannot train selective heads")


def _head_grads(params, spec, rep, loss, y, entropy_beta, sat_targets):
    """Per-example gradients at the heads plus the gradient entering the stack."""
    blocks: dict[str, np.ndarray] = {}
    if spec.selectivenet_heads:
        out = _head_outputs(params, spec, rep)
        fp = softmax(out.f_logits)
        hp = softmax(out.h_logits)
        g = sigmoid(out.g_raw)
        s_f, s_raw, s_h = losses.selectivenet_head_grads(
            fp, g, hp, y, loss.c_target, loss.lam, loss.alpha, entropy_beta
        )
        blocks["f.W"] = np.einsum("bo,bh->boh", s_f, rep)
        blocks["f.b"] = s_f
        blocks["g.W"] = (s_raw[:, None] * rep)[:, None, :]
        blocks["g.b"] = s_raw[:, None]
        blocks["h.W"] = np.einsum("bo,bh->boh", s_h, rep)
        blocks["h.b"] = s_h
        upstream = (
            s_f @ params.view("f.W")
            + s_raw[:, None] @ params.view("g.W")
            + s_h @ params.view("h.W")
        )
        return blocks, upstream

    logits = _head_outputs(params, spec, rep)
    probs = softmax(logits)
    if loss.kind == "cross_entropy":
        s = losses.ce_entropy_head_grads(probs, y, entropy_beta)
    elif loss.kind == "sat":
        if sat_targets is None:
            raise ValueError("sat loss needs per-example targets")
        s = losses.sat_head_grads(probs, y, sat_targets, entropy_beta)
    else:
        raise ValueError(f"loss kind {loss.kind!r} incompatible with this head")
    blocks["out.W"] = np.einsum("bo,bh->boh", s, rep)
    blocks["out.b"] = s
    return blocks, s @ params.view("out.W")


def per_sample_grad(
    params: ParamVector,
    spec: ModelSpec,
    x: np.ndarray,
    y: np.ndarray,
    loss: LossSpec,
    *,
    entropy_beta: float = 0.0,
    sat_targets: np.ndarray | None = None,
    dropout_seed: int | None = None,
) -> np.ndarray:
    """Exact per-example loss gradients, one flat row per batch member.

    For the separable losses row ``i`` is the gradient of example ``i``'s own
    loss; for the coverage-coupled selective loss it is the chain-rule share
    ``B * dL/d(outputs_i)`` backpropagated through example ``i``'s pass. In
    both cases the row mean equals the batch-loss gradient exactly (up to
    float associativity), which is what the privacy clipping step consumes.
    """
    _check_loss_compat(spec, loss)
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    yb = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = xb.shape[0]
    acts, gates, scales = _hidden_forward(params, spec, xb, dropout_seed)
    blocks, upstream = _head_grads(
        params, spec, acts[-1], loss, yb, entropy_beta, sat_targets
    )
    for layer in reversed(range(len(spec.hidden_sizes))):
        if scales[layer] is not None:
            upstream = upstream * scales[layer]
        upstream = upstream * gates[layer]
        blocks[f"h{layer}.W"] = np.einsum("bo,bi->boi", upstream, acts[layer])
        blocks[f"h{layer}.b"] = upstream
        upstream = upstream @ params.view(f"h{layer}.W")

    out = np.empty((n, len(params)), dtype=np.float64)
    pos = 0
    for name, shape in params.layout:
        size = int(np.prod(shape))
        out[:, pos : pos + size] = blocks[name].reshape(n, size)
        pos += size
    return out


def batch_grad(
    params: ParamVector,
    spec: ModelSpec,
    x: np.ndarray,
    y: np.ndarray,
    loss: LossSpec,
    *,
    entropy_beta: float = 0.0,
    sat_targets: np.ndarray | None = None,
    dropout_seed: int | None = None,
) -> np.ndarray:
    """Gradient of the mean batch loss, contracted over the batch directly."""
    rows = per_sample_grad(
        params, spec, x, y, loss,
        entropy_beta=entropy_beta, sat_targets=sat_targets, dropout_seed=dropout_seed,
    )
    return rows.mean(axis=0)


def save_params(params: ParamVector, spec: ModelSpec, path: str | Path) -> None:
    """Versioned JSON checkpoint: spec descriptor, layout, flat values."""
    payload = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "spec": spec.to_dict(),
        "layout": [[name, list(shape)] for name, shape in params.layout],
        "values": params.values.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_params(path: str | Path) -> tuple[ParamVector, ModelSpec]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != PARAMS_FORMAT:
        raise ValueError(f"{path} is not a parameter checkpoint")
    if payload.get("version") != PARAMS_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    spec = ModelSpec.from_dict(payload["spec"])
    layout = tuple((name, tuple(shape)) for name, shape in payload["layout"])
    if layout != spec.layout():
        raise ValueError("checkpoint layout does not match its model spec")
    values = np.asarray(payload["values"], dtype=np.float64)
    return ParamVector(values, layout), spec
