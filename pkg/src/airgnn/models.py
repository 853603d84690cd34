"""Model families (PPTT, TTPP, PTPT, MLP), analysis variants and the
full-batch training loop."""

from __future__ import annotations

import math
import time
import weakref
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import ops
from .autodiff import Tensor
from .data import Dataset
from .graph import Graph, NormalizedAdjacency, gcn_adjacency

ARCHITECTURES = ("pptt", "ttpp", "ptpt", "mlp")
SKIPS = ("none", "res", "dense")
_SKIP_ALIASES = {"residual": "res", "none": "none", "res": "res", "dense": "dense"}


@dataclass
class ModelConfig:
    architecture: str = "ptpt"
    d_p: int = 2
    d_t: int = 2
    air: bool = False
    skip: str = "none"
    hidden: int = 64
    num_classes: int | None = None
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 500
    seed: int = 0
    r: float = 0.5
    adjacency_power: int = 1
    pt_split: tuple | None = None
    dtype: str = "float32"
    track_first_layer_grad: bool = False

    def __post_init__(self):
        self.architecture = str(self.architecture).lower()
        self.skip = _SKIP_ALIASES.get(str(self.skip).lower(), self.skip)
        if self.pt_split is not None:
            self.pt_split = tuple(int(k) for k in self.pt_split)

    def validate(self) -> "ModelConfig":
        """Raise ValueError naming the first violated constraint."""
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.skip not in SKIPS:
            raise ValueError(f"skip must be one of {SKIPS}, got {self.skip!r}")
        if self.d_t < 1:
            raise ValueError(f"d_t must be >= 1, got {self.d_t}")
        if self.d_p < 0:
            raise ValueError(f"d_p must be >= 0, got {self.d_p}")
        if self.air and self.skip != "none":
            raise ValueError("air and skip are mutually exclusive; AIR replaces plain skip connections")
        if self.adjacency_power < 1:
            raise ValueError(f"adjacency_power must be >= 1, got {self.adjacency_power}")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"r must lie in [0, 1], got {self.r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.hidden < 1 or self.epochs < 0 or self.lr < 0:
            raise ValueError("hidden must be >= 1, epochs >= 0 and lr >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.architecture == "mlp" and self.d_p != 0:
            raise ValueError(f"the MLP architecture has no propagation; d_p must be 0, got {self.d_p}")
        if self.architecture != "ptpt" and (self.adjacency_power != 1 or self.pt_split is not None):
            raise ValueError("adjacency_power and pt_split apply to the PTPT architecture only")
        if self.architecture == "ptpt":
            if self.pt_split is not None:
                if self.d_t != 2:
                    raise ValueError(f"pt_split needs d_t == 2, got d_t={self.d_t}")
                if len(self.pt_split) != 2 or sum(self.pt_split) != self.d_p or min(self.pt_split) < 0:
                    raise ValueError(f"pt_split {self.pt_split} must be two nonnegative parts summing to d_p={self.d_p}")
                if self.adjacency_power != 1:
                    raise ValueError("pt_split and adjacency_power cannot be combined")
            elif self.d_p != self.adjacency_power * self.d_t:
                if self.adjacency_power == 1:
                    raise ValueError(
                        f"PTPT requires d_p == d_t (got d_p={self.d_p}, d_t={self.d_t}); "
                        "use --power or --pt-split for the analysis variants"
                    )
                raise ValueError(
                    f"PTPT with adjacency_power={self.adjacency_power} requires "
                    f"d_p == {self.adjacency_power} * d_t, got d_p={self.d_p}"
                )
            if self.air and (self.adjacency_power != 1 or self.pt_split is not None):
                raise ValueError("AIR is defined for single-propagation graph convolutions only")
        return self

    def propagation_schedule(self) -> list[int]:
        """Number of P operations inside each PTPT layer."""
        if self.pt_split is not None:
            return list(self.pt_split)
        return [self.adjacency_power] * self.d_t

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["pt_split"] is not None:
            d["pt_split"] = list(d["pt_split"])
        return d


def _glorot(rng, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class GNN:
    """A built model: named parameters, AIR gates and a forward pass.

    Use :func:`build_model` rather than constructing this directly.
    """

    def __init__(self, config: ModelConfig, input_dim: int):
        config.validate()
        if config.num_classes is None:
            raise ValueError("config.num_classes must be set before building a model")
        self.config = config
        self.input_dim = input_dim
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, Tensor] = {}
        self.gates: dict[str, ops.AirGate] = {}
        self._prop_cache = None
        self._hop_cache = None
        rng = np.random.default_rng(config.seed)
        c = config

        self._t_in = input_dim
        widths = self._t_stack_widths(self._t_in)
        for l, (fan_in, fan_out) in enumerate(widths, 1):
            self._param(f"W{l}", _glorot(rng, fan_in, fan_out, self.dtype))
            self._param(f"b{l}", np.zeros((1, fan_out), dtype=self.dtype))

        if c.air:
            if c.d_t >= 2 and self._t_in != c.hidden:
                self._param("proj_W", _glorot(rng, self._t_in, c.hidden, self.dtype))
                self._param("proj_b", np.zeros((1, c.hidden), dtype=self.dtype))
            if c.architecture == "ptpt":
                for l in range(2, c.d_t + 1):
                    self._gate(f"U{l}", c.hidden, l)
            elif c.architecture == "pptt":
                for l in range(2, c.d_p + 1):
                    self._gate(f"P.U{l}", input_dim, l)
            elif c.architecture == "ttpp":
                for l in range(2, c.d_p + 1):
                    self._gate(f"P.U{l}", c.num_classes, l)

    def _param(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def _gate(self, name, width, layer_index):
        gate = ops.AirGate.zeros(width, layer_index, dtype=self.dtype, name=name)
        self.gates[name] = gate
        self.params[name] = gate.u

    def _t_stack_widths(self, d_in):
        c = self.config
        widths = []
        for l in range(1, c.d_t + 1):
            if l == 1:
                fan_in = d_in
            elif c.skip == "dense":
                fan_in = (l - 1) * c.hidden
            else:
                fan_in = c.hidden
            fan_out = c.num_classes if l == c.d_t else c.hidden
            widths.append((fan_in, fan_out))
        return widths

    # -- parameter utilities ------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def decay_mask(self) -> list[bool]:
        """Weight decay applies to transformation matrices only."""
        return [name.startswith("W") or name == "proj_W" for name in self.params]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        for k, v in state.items():
            self.params[k].data[...] = v

    def pin_alpha(self, value: float | None):
        """Test hook: fix every AIR gate's output to ``value`` (None releases)."""
        for g in self.gates.values():
            g.pinned = value

    # -- forward ------------------------------------------------------------

    def _project(self, h0):
        if "proj_W" not in self.params:
            return h0
        return ad.add(ad.matmul(h0, self.params["proj_W"]), self.params["proj_b"])

    def _t_stack(self, h, training, rng):
        """Run the d_t transformation operations on ``h`` (the part's input)."""
        c = self.config
        h0 = h
        proj0 = None
        history = []
        for l in range(1, c.d_t + 1):
            last = l == c.d_t
            act = "identity" if last else "relu"
            w, b = self.params[f"W{l}"], self.params[f"b{l}"]
            if l == 1:
                x = h
            elif c.skip == "dense":
                x = ops.dense_combine(history)
            elif c.air:
                if proj0 is None:
                    proj0 = self._project(h0)
                x = ad.add(h, proj0)
            else:
                x = h
            out = ops.t_op(ad.dropout(x, c.dropout, rng, training), w, act, b)
            if c.skip == "res" and 1 < l < c.d_t:
                out = ops.residual_combine(h, out)
            h = out
            history.append(h)
        return h

    def _p_stack(self, adj, h0):
        """d_p propagations of ``h0``, AIR-gated from the second one on when enabled."""
        h = h0
        for l in range(1, self.config.d_p + 1):
            if self.config.air and l >= 2:
                h = ops.p_with_air(adj, h, h0, self.gates[f"P.U{l}"])
            elif l == 1 and not h0.requires_grad:
                h = self._first_hop(adj, h0)
            else:
                h = ops.p_op(adj, h)
        return h

    def _first_hop(self, adj, x):
        # the ungated first propagation of a constant input is the same every epoch
        c = self._hop_cache
        if c is None or c[0] is not adj or c[1] is not x:
            self._hop_cache = c = (adj, x, ops.p_op(adj, x))
        return c[2]

    def _ptpt(self, adj, x, training, rng):
        c = self.config
        schedule = c.propagation_schedule()
        h = x
        h0 = None
        history = []
        for l in range(1, c.d_t + 1):
            last = l == c.d_t
            act = "identity" if last else "relu"
            w, b = self.params[f"W{l}"], self.params[f"b{l}"]
            if c.skip == "dense" and l > 1:
                inp = ops.dense_combine(history)
            else:
                inp = h
            if c.air and l >= 2:
                if h0 is None:
                    h0 = self._project(x)
                prop = ops.p_with_air(adj, inp, h0, self.gates[f"U{l}"])
            else:
                prop = inp
                for _ in range(schedule[l - 1]):
                    prop = ops.p_op(adj, prop)
            out = ops.t_op(ad.dropout(prop, c.dropout, rng, training), w, act, b)
            if c.skip == "res" and 1 < l < c.d_t:
                out = ops.residual_combine(h, out)
            h = out
            history.append(h)
        return h

    def propagated_input(self, adj, x: Tensor) -> Tensor:
        """PPTT without AIR: ``A_hat ** d_p @ x``, computed once per (adj, x) pair."""
        c = self._prop_cache
        if c is not None and c[0] is adj and c[1] is x:
            return c[2]
        with ad.no_grad():
            h = self._p_stack(adj, x)
        self._prop_cache = (adj, x, h)
        return h

    def forward(self, adj, x: Tensor, training: bool = False, rng=None) -> Tensor:
        c = self.config
        if x.shape[1] != self.input_dim:
            raise ValueError(f"model built for {self.input_dim} input features, got {x.shape[1]}")
        if adj is not None and adj.shape[1] != x.shape[0]:
            raise ValueError(f"adjacency shape {adj.shape} does not match {x.shape[0]} nodes")
        if training and c.dropout > 0 and rng is None:
            raise ValueError("training mode with dropout needs an rng")
        if c.architecture == "mlp":
            return self._t_stack(x, training, rng)
        if c.architecture == "pptt":
            if c.air or x.requires_grad:
                h = self._p_stack(adj, x)
            else:
                h = self.propagated_input(adj, x)
            return self._t_stack(h, training, rng)
        if c.architecture == "ttpp":
            return self._p_stack(adj, self._t_stack(x, training, rng))
        return self._ptpt(adj, x, training, rng)

    __call__ = forward


def build_model(config: ModelConfig, input_dim: int) -> GNN:
    return GNN(config, input_dim)


def analysis_variant_gcn_power(config: ModelConfig, input_dim: int) -> GNN:
    """PTPT model propagating with ``A_hat ** adjacency_power`` in every layer."""
    if config.adjacency_power < 1:
        raise ValueError(f"adjacency_power must be >= 1, got {config.adjacency_power}")
    cfg = replace(config, architecture="ptpt", d_p=config.adjacency_power * config.d_t)
    return build_model(cfg, input_dim)


def split_dp(d_p: int) -> tuple[int, int]:
    return (d_p // 2, d_p - d_p // 2)


def analysis_variant_split_dp(config: ModelConfig, input_dim: int) -> GNN:
    """Two-layer GCN spreading ``d_p`` propagations as (floor, ceil) halves."""
    if config.d_t != 2:
        raise ValueError(f"the split-propagation variant needs d_t == 2, got {config.d_t}")
    cfg = replace(config, architecture="ptpt", pt_split=split_dp(config.d_p))
    return build_model(cfg, input_dim)


# --- training ---------------------------------------------------------------

_adj_cache: "weakref.WeakKeyDictionary[Graph, dict]" = weakref.WeakKeyDictionary()


def adjacency_for(graph: Graph, r: float = 0.5) -> NormalizedAdjacency:
    """Normalized self-looped adjacency, memoized per graph instance."""
    per_graph = _adj_cache.setdefault(graph, {})
    if r not in per_graph:
        per_graph[r] = gcn_adjacency(graph, r)
    return per_graph[r]


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


@dataclass
class TrainReport:
    config: dict
    loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    epoch_ms: list = field(default_factory=list)
    first_layer_grad: list | None = None
    best_epoch: int = -1
    best_val_acc: float = float("nan")
    best_test_acc: float = float("nan")
    best_train_acc: float = float("nan")
    precompute_ms: float = 0.0
    model: GNN | None = field(default=None, repr=False, compare=False)

    @property
    def epochs(self) -> int:
        return len(self.loss)

    def metric_rows(self):
        for e in range(self.epochs):
            yield {
                "epoch": e + 1,
                "loss": self.loss[e],
                "train_acc": self.train_acc[e],
                "val_acc": self.val_acc[e],
                "test_acc": self.test_acc[e],
                "elapsed_ms": self.epoch_ms[e],
            }


def _input_tensor(dataset: Dataset, dtype) -> Tensor:
    return Tensor._wrap(np.ascontiguousarray(dataset.features, dtype=dtype))


def predict_logits(model: GNN, dataset: Dataset) -> np.ndarray:
    adj = adjacency_for(dataset.graph, model.config.r)
    with ad.no_grad():
        return model.forward(adj, _input_tensor(dataset, model.dtype), training=False).data


def train(config: ModelConfig, dataset: Dataset, *, model: GNN | None = None) -> TrainReport:
    """Full-batch training with masked cross-entropy and best-validation selection.

    Per-epoch metrics are measured in evaluation mode after the update; the
    ``loss`` column is the evaluation-mode training loss. The returned
    report's ``model`` holds the parameters from the best validation epoch.
    """
    for split in ("train", "val", "test"):
        if not dataset.mask(split).any():
            raise ValueError(f"dataset has an empty {split} mask")
    if config.num_classes is None:
        config = replace(config, num_classes=dataset.class_count)
    config.validate()
    if model is None:
        model = build_model(config, dataset.num_features)
    rng = np.random.default_rng(config.seed + 1)
    adj = None if config.architecture == "mlp" else adjacency_for(dataset.graph, config.r)
    x = _input_tensor(dataset, model.dtype)
    labels = dataset.labels

    t0 = time.perf_counter()
    if config.architecture == "pptt" and not config.air:
        model.propagated_input(adj, x)
    report = TrainReport(config=config.to_dict(), precompute_ms=(time.perf_counter() - t0) * 1e3)
    if config.track_first_layer_grad:
        report.first_layer_grad = []

    opt = ad.Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay, decay_mask=model.decay_mask())
    best_state = model.state_dict()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        with ad.Tape():
            logits = model.forward(adj, x, training=True, rng=rng)
            loss = ad.masked_softmax_cross_entropy(logits, labels, dataset.train_mask)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch + 1}")
            opt.zero_grad()
            ad.backward(loss)
        if report.first_layer_grad is not None:
            g = model.params["W1"].grad
            report.first_layer_grad.append(float(np.mean(np.abs(g))) if g is not None else 0.0)
        opt.step()
        elapsed = (time.perf_counter() - t0) * 1e3

        with ad.no_grad():
            out = model.forward(adj, x, training=False)
            eval_loss = ad.masked_softmax_cross_entropy(out, labels, dataset.train_mask).item()
        z = out.data
        report.loss.append(eval_loss)
        report.train_acc.append(accuracy(z, labels, dataset.train_mask))
        report.val_acc.append(accuracy(z, labels, dataset.val_mask))
        report.test_acc.append(accuracy(z, labels, dataset.test_mask))
        report.epoch_ms.append(elapsed)
        if report.best_epoch < 0 or report.val_acc[-1] > report.best_val_acc:
            report.best_epoch = epoch + 1
            report.best_val_acc = report.val_acc[-1]
            report.best_test_acc = report.test_acc[-1]
            report.best_train_acc = report.train_acc[-1]
            best_state = model.state_dict()

    model.load_state_dict(best_state)
    if config.epochs == 0:
        z = predict_logits(model, dataset)
        report.best_epoch = 0
        report.best_val_acc = accuracy(z, labels, dataset.val_mask)
        report.best_test_acc = accuracy(z, labels, dataset.test_mask)
        report.best_train_acc = accuracy(z, labels, dataset.train_mask)
    report.model = model
    return report


def first_layer_gradient_probe(config: ModelConfig, dataset: Dataset) -> list[float]:
    """Mean |d loss / d W1| after each epoch's backward pass."""
    return train(replace(config, track_first_layer_grad=True), dataset).first_layer_grad
