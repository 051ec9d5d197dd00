"""
Model - Assignment-conditioned one-step flow predictor and its recursive rollout.

Two branches read the history windows. The flow branch runs gated dilated
causal convolutions over the flow window with a graph convolution after each
block. The assignment branch encodes every assignment column with a graph
convolution and runs a recurrent cell along the window, per cell with shared
weights. Their features are fused (concatenation or attention with the flow
features as query), decoded by a two-layer MLP with a skip connection, and
emitted as ``softplus(magnitude) * sigmoid(gate)``.

Every function works on batched arrays of shape (B, W, S) and accepts either
Tensors (training) or plain arrays (inference) as parameters.

The rollout evaluates the same network incrementally. The assignment matrix is
known up front, so its branch and everything the decoder derives from it is
computed for many targets in one pass. Flow-branch block outputs at a history
position do not depend on which window contains them, so each position is
computed once and every later window reuses it.
"""

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .errors import DatasetError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

FUSION_MODES = ("concat", "attention")
RECURRENT_CELLS = ("lstm", "gru")

# assignment windows encoded per vectorised pass of a rollout
ROLLOUT_WINDOWS = 256


@dataclass(frozen=True)
class ModelConfig:
    cells: int
    interval: float = 10.0
    flow_window: int = 12
    assign_window: int = 12
    hidden: int = 64
    residual_channels: int = 32
    dilations: Tuple[int, ...] = (1, 2)
    fusion: str = "attention"
    recurrent: str = "lstm"
    activation: str = "tanh"
    gate_weight: float = 0.1
    use_assignments: bool = True
    flow_scale: float = 1.0
    assign_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.cells < 1 or self.hidden < 1 or self.residual_channels < 1:
            raise ValidationError("cells, hidden and residual_channels must be positive")
        if self.interval <= 0:
            raise ValidationError("interval must be positive")
        if any(d < 1 for d in self.dilations):
            raise ValidationError("dilations must be positive")
        if self.flow_window < self.receptive_field:
            raise ValidationError(
                f"flow window {self.flow_window} is shorter than the receptive field {self.receptive_field}"
            )
        if self.assign_window < 1:
            raise ValidationError("assign_window must be at least 1")
        if self.fusion not in FUSION_MODES:
            raise ValidationError(f"unknown fusion mode {self.fusion!r}, expected one of {FUSION_MODES}")
        if self.recurrent not in RECURRENT_CELLS:
            raise ValidationError(f"unknown recurrent cell {self.recurrent!r}, expected one of {RECURRENT_CELLS}")
        if self.activation not in ad.ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.flow_scale <= 0 or self.assign_scale <= 0:
            raise ValidationError("input scales must be positive")

    @property
    def receptive_field(self) -> int:
        return 1 + sum(self.dilations)

    @property
    def fused_width(self) -> int:
        return 2 * self.hidden

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["dilations"] = list(self.dilations)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Name and shape of every parameter the config needs."""
    r, d = cfg.residual_channels, cfg.hidden
    shapes = {"flow.start.w": (1, r), "flow.start.b": (r,)}
    for i in range(len(cfg.dilations)):
        prefix = f"flow.block{i}"
        for part in ("filter", "gate"):
            shapes[f"{prefix}.{part}.past"] = (r, r)
            shapes[f"{prefix}.{part}.now"] = (r, r)
            shapes[f"{prefix}.{part}.b"] = (r,)
        shapes[f"{prefix}.skip.w"] = (r, d)
        shapes[f"{prefix}.skip.b"] = (d,)
        shapes[f"{prefix}.graph.w"] = (r, r)

    shapes["assign.enc.w"] = (1, d)
    shapes["assign.enc.b"] = (d,)
    gates = 4 if cfg.recurrent == "lstm" else 3
    shapes["assign.cell.wx"] = (d, gates * d)
    shapes["assign.cell.wh"] = (d, gates * d)
    if cfg.recurrent == "lstm":
        shapes["assign.cell.b"] = (gates * d,)
    else:
        shapes["assign.cell.bx"] = (gates * d,)
        shapes["assign.cell.bh"] = (gates * d,)

    if cfg.fusion == "attention":
        for name in ("query", "key", "value"):
            shapes[f"fuse.{name}"] = (d, d)

    f = cfg.fused_width
    shapes.update({
        "dec.w1": (f, d), "dec.b1": (d,),
        "dec.w2": (d, d), "dec.b2": (d,),
        "dec.skip": (f, d),
        "dec.magnitude.w": (d, 1), "dec.magnitude.b": (1,),
        "dec.gate.w": (d, 1), "dec.gate.b": (1,),
    })
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> Dict[str, ad.Tensor]:
    """Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            value = np.zeros(shape)
        else:
            value = _glorot(rng, shape[0], shape[1], shape)
        params[name] = ad.parameter(value, name=name)
    return params


def _batched(window, name: str, length: int, cells: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(window, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != cells:
        raise ShapeError(name, x.shape, (length, cells))
    if x.shape[1] != length:
        raise ShapeError(name, x.shape, (length, cells))
    return x, single


def flow_branch(q_window, adjacency: np.ndarray, params: Mapping, cfg: ModelConfig):
    """Encode flow windows (B, W_Q, S) into per-cell features (B, S, d)."""
    q = np.asarray(q_window, dtype=np.float64)
    if q.ndim != 3 or q.shape[2] != cfg.cells:
        raise ShapeError("flow_branch", q.shape, (cfg.flow_window, cfg.cells))
    if q.shape[1] < cfg.receptive_field:
        raise ValidationError(f"flow window of {q.shape[1]} steps is shorter than the receptive field {cfg.receptive_field}")
    act = ad.ACTIVATIONS[cfg.activation]

    x = (q / cfg.flow_scale)[..., None] @ params["flow.start.w"] + params["flow.start.b"]
    skip = None
    for i, dilation in enumerate(cfg.dilations):
        p = f"flow.block{i}"
        past, now = x[:, :-dilation], x[:, dilation:]
        filt = ad.tanh(past @ params[f"{p}.filter.past"] + now @ params[f"{p}.filter.now"] + params[f"{p}.filter.b"])
        gate = ad.sigmoid(past @ params[f"{p}.gate.past"] + now @ params[f"{p}.gate.now"] + params[f"{p}.gate.b"])
        h = filt * gate
        contribution = ad.mean(h @ params[f"{p}.skip.w"], axis=1) + params[f"{p}.skip.b"]
        skip = contribution if skip is None else skip + contribution
        x = (adjacency @ h) @ params[f"{p}.graph.w"] + now
    return act(skip)


def _lstm(inputs, params: Mapping, d: int):
    h = c = None
    sequence = []
    for t in range(inputs.shape[1]):
        z = inputs[:, t] @ params["assign.cell.wx"] + params["assign.cell.b"]
        if h is not None:
            z = z + h @ params["assign.cell.wh"]
        i = ad.sigmoid(z[..., :d])
        f = ad.sigmoid(z[..., d:2 * d])
        g = ad.tanh(z[..., 2 * d:3 * d])
        o = ad.sigmoid(z[..., 3 * d:])
        c = i * g if c is None else f * c + i * g
        h = o * ad.tanh(c)
        sequence.append(h)
    return sequence


def _gru(inputs, params: Mapping, d: int):
    h = None
    sequence = []
    for t in range(inputs.shape[1]):
        zx = inputs[:, t] @ params["assign.cell.wx"] + params["assign.cell.bx"]
        if h is None:
            zh = params["assign.cell.bh"]
        else:
            zh = h @ params["assign.cell.wh"] + params["assign.cell.bh"]
        r = ad.sigmoid(zx[..., :d] + zh[..., :d])
        u = ad.sigmoid(zx[..., d:2 * d] + zh[..., d:2 * d])
        n = ad.tanh(zx[..., 2 * d:] + r * zh[..., 2 * d:])
        h = n - u * n if h is None else n + u * (h - n)
        sequence.append(h)
    return sequence


def assignment_branch(a_window, adjacency: np.ndarray, params: Mapping, cfg: ModelConfig):
    """Encode assignment windows (B, W_A, S).

    Returns:
        (H_a (B, S, d) final hidden state, H_seq (B, W_A, S, d) hidden sequence)
    """
    a = np.asarray(a_window, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != cfg.assign_window or a.shape[2] != cfg.cells:
        raise ShapeError("assignment_branch", a.shape, (cfg.assign_window, cfg.cells))
    act = ad.ACTIVATIONS[cfg.activation]
    encoded = act((adjacency @ (a / cfg.assign_scale)[..., None]) @ params["assign.enc.w"] + params["assign.enc.b"])
    cell = _lstm if cfg.recurrent == "lstm" else _gru
    sequence = cell(encoded, params, cfg.hidden)
    return sequence[-1], ad.stack(sequence, axis=1)


def fuse(h_flow, h_assign, h_seq, params: Mapping, cfg: ModelConfig, mode: Optional[str] = None):
    """Combine branch features per cell.

    Returns:
        (F (B, S, 2d), attention weights (B, S, W_A) or None in concat mode)
    """
    mode = mode or cfg.fusion
    if mode not in FUSION_MODES:
        raise ValidationError(f"unknown fusion mode {mode!r}, expected one of {FUSION_MODES}")
    if mode == "concat":
        return ad.concat([h_flow, h_assign], axis=-1), None

    b, s, d = h_flow.shape
    w = h_seq.shape[1]
    per_cell = ad.transpose(h_seq, (0, 2, 1, 3))
    query = ad.reshape(h_flow @ params["fuse.query"], (b, s, d, 1))
    keys = per_cell @ params["fuse.key"]
    values = per_cell @ params["fuse.value"]
    scores = ad.reshape(keys @ query, (b, s, w)) * (1.0 / np.sqrt(d))
    weights = ad.softmax(scores, axis=-1)
    context = ad.reshape(ad.reshape(weights, (b, s, 1, w)) @ values, (b, s, d))
    return ad.concat([h_flow, context], axis=-1), weights


class StepOutput(NamedTuple):
    flow: object
    gate_logit: object
    magnitude: object
    attention: object


def decode(fused, params: Mapping, cfg: ModelConfig):
    """MLP with a skip connection, then the magnitude and gate heads, each (B, S)."""
    act = ad.ACTIVATIONS[cfg.activation]
    b, s = fused.shape[0], fused.shape[1]
    h1 = act(fused @ params["dec.w1"] + params["dec.b1"])
    h2 = act(h1 @ params["dec.w2"] + params["dec.b2"]) + fused @ params["dec.skip"]
    magnitude = ad.reshape(h2 @ params["dec.magnitude.w"] + params["dec.magnitude.b"], (b, s))
    gate = ad.reshape(h2 @ params["dec.gate.w"] + params["dec.gate.b"], (b, s))
    return magnitude, gate


def gated_flow(magnitude, gate):
    """softplus(m) * sigmoid(g): nonnegative by construction."""
    return ad.softplus(magnitude) * ad.sigmoid(gate)


def _empty_assignment_features(batch: int, cfg: ModelConfig):
    return (np.zeros((batch, cfg.cells, cfg.hidden)),
            np.zeros((batch, cfg.assign_window, cfg.cells, cfg.hidden)))


def forward(a_window, q_window, adjacency: np.ndarray, params: Mapping, cfg: ModelConfig,
            assignment_features=None) -> StepOutput:
    """Batched one-step prediction from (B, W_A, S) and (B, W_Q, S) windows."""
    q = np.asarray(q_window, dtype=np.float64)
    if q.ndim != 3 or q.shape[1] != cfg.flow_window:
        raise ShapeError("forward", q.shape, (cfg.flow_window, cfg.cells))
    h_flow = flow_branch(q, adjacency, params, cfg)
    if assignment_features is not None:
        h_assign, h_seq = assignment_features
    elif cfg.use_assignments:
        h_assign, h_seq = assignment_branch(a_window, adjacency, params, cfg)
    else:
        h_assign, h_seq = _empty_assignment_features(q.shape[0], cfg)
    fused, attention = fuse(h_flow, h_assign, h_seq, params, cfg)
    magnitude, gate = decode(fused, params, cfg)
    return StepOutput(gated_flow(magnitude, gate), gate, magnitude, attention)


def predict_step(a_window, q_window, adjacency: np.ndarray, params: Mapping, cfg: ModelConfig):
    """Next flow column Q̂_t from a (W_A, S) assignment window and a (W_Q, S) flow window.

    Batched (B, W, S) windows give (B, S) predictions.
    """
    a, single = _batched(a_window, "predict_step", cfg.assign_window, cfg.cells)
    q, _ = _batched(q_window, "predict_step", cfg.flow_window, cfg.cells)
    flow = forward(a, q, adjacency, params, cfg).flow
    return flow[0] if single else flow


def aggregate_tt(flows, interval: float) -> float:
    """Travel time [s] as the interval-weighted sum of all occupancies."""
    flows = np.asarray(flows, dtype=np.float64)
    if interval <= 0:
        raise ValidationError("interval must be positive")
    if np.any(flows < 0):
        raise ValidationError("flow matrix has negative entries")
    return float(interval * flows.sum())


class _FlowCache:
    """Flow-branch block outputs of a rollout, indexed by history position.

    ``history`` is the (B, P, S) flow history the rollout writes into. Positions
    are computed lazily, each one the first time a window ending after it is
    requested, so every column must be final by then.
    """

    def __init__(self, history: np.ndarray, first: int, adjacency: np.ndarray, values: Mapping, cfg: ModelConfig):
        batch, length, cells = history.shape
        self.history = history
        self.adjacency = adjacency
        self.values = values
        self.cfg = cfg
        blocks = len(cfg.dilations)
        self.inputs = [np.zeros((batch, length, cells, cfg.residual_channels)) for _ in range(blocks)]
        self.skips = [np.zeros((batch, length, cells, cfg.hidden)) for _ in range(blocks)]
        # block i reads inputs from valid[i] on and has outputs from valid[i + 1] on
        self.valid = [first + sum(cfg.dilations[:i]) for i in range(blocks + 1)]
        self.offsets = [sum(cfg.dilations[:i + 1]) for i in range(blocks)]
        self.next = first

    def _advance(self, position: int):
        cfg, v = self.cfg, self.values
        q = self.history[:, position] / cfg.flow_scale
        self.inputs[0][:, position] = q[..., None] @ v["flow.start.w"] + v["flow.start.b"]
        for i, dilation in enumerate(cfg.dilations):
            if position < self.valid[i + 1]:
                break
            p = f"flow.block{i}"
            past, now = self.inputs[i][:, position - dilation], self.inputs[i][:, position]
            filt = ad.tanh(past @ v[f"{p}.filter.past"] + now @ v[f"{p}.filter.now"] + v[f"{p}.filter.b"])
            gate = ad.sigmoid(past @ v[f"{p}.gate.past"] + now @ v[f"{p}.gate.now"] + v[f"{p}.gate.b"])
            h = filt * gate
            self.skips[i][:, position] = h @ v[f"{p}.skip.w"]
            if i + 1 < len(cfg.dilations):
                self.inputs[i + 1][:, position] = (self.adjacency @ h) @ v[f"{p}.graph.w"] + now

    def features(self, end: int) -> np.ndarray:
        """Flow-branch output (B, S, d) for the window of positions [end - W_Q, end)."""
        while self.next < end:
            self._advance(self.next)
            self.next += 1
        start = end - self.cfg.flow_window
        skip = None
        for i, offset in enumerate(self.offsets):
            contribution = self.skips[i][:, start + offset:end].mean(axis=1) + self.values[f"flow.block{i}.skip.b"]
            skip = contribution if skip is None else skip + contribution
        return ad.ACTIVATIONS[self.cfg.activation](skip)


class _StepDecoder:
    """Fusion and decoder with the assignment half of the fused input folded in.

    ``F @ W`` splits into a flow part and a context part. The context part, and
    in attention mode the keys projected onto the query weights, depend on the
    assignment window only and are computed once per target.
    """

    def __init__(self, values: Mapping, cfg: ModelConfig):
        d = cfg.hidden
        self.values = values
        self.cfg = cfg
        self.act = ad.ACTIVATIONS[cfg.activation]
        self.flow_in = np.concatenate([values["dec.w1"][:d], values["dec.skip"][:d]], axis=1)
        self.context_in = np.concatenate([values["dec.w1"][d:], values["dec.skip"][d:]], axis=1)
        self.heads_w = np.concatenate([values["dec.magnitude.w"], values["dec.gate.w"]], axis=1)
        self.heads_b = np.concatenate([values["dec.magnitude.b"], values["dec.gate.b"]])

    def precompute(self, h_assign: np.ndarray, h_seq: np.ndarray):
        """Folded context (..., S, 2d) and no keys in concat mode; folded values
        (..., S, W_A, 2d) and scaled keys (..., S, W_A, d) in attention mode."""
        if self.cfg.fusion == "concat":
            return h_assign @ self.context_in, None
        v = self.values
        per_cell = np.swapaxes(h_seq, -3, -2)
        keys = ((per_cell @ v["fuse.key"]) @ v["fuse.query"].T) * (1.0 / np.sqrt(self.cfg.hidden))
        return (per_cell @ v["fuse.value"]) @ self.context_in, keys

    def step(self, h_flow: np.ndarray, context: np.ndarray, keys: Optional[np.ndarray]) -> np.ndarray:
        """Predicted flow (B, S) from flow features and one target's precomputed terms."""
        d, v = self.cfg.hidden, self.values
        if keys is not None:
            weights = ad.softmax((keys @ h_flow[..., None])[..., 0], axis=-1)
            context = (weights[..., None, :] @ context)[..., 0, :]
        own = h_flow @ self.flow_in
        h1 = self.act(own[..., :d] + context[..., :d] + v["dec.b1"])
        h2 = self.act(h1 @ v["dec.w2"] + v["dec.b2"]) + own[..., d:] + context[..., d:]
        heads = h2 @ self.heads_w + self.heads_b
        return gated_flow(heads[..., 0], heads[..., 1])


class GenTTP:
    """Trained parameters bound to a config and a cell adjacency."""

    def __init__(self, cfg: ModelConfig, adjacency: np.ndarray, params: Mapping[str, ad.ArrayLike]):
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.shape != (cfg.cells, cfg.cells):
            raise ShapeError("GenTTP", adjacency.shape, (cfg.cells, cfg.cells))
        expected = param_shapes(cfg)
        missing = sorted(set(expected) - set(params))
        if missing:
            raise ValidationError(f"missing parameters: {', '.join(missing)}")
        for name, shape in expected.items():
            value = ad._value(params[name])
            if value.shape != shape:
                raise ShapeError(name, value.shape, shape)
        self.cfg = cfg
        self.adjacency = adjacency
        self.params: Dict[str, ad.Tensor] = {}
        for name in expected:
            p = params[name]
            self.params[name] = p if isinstance(p, ad.Tensor) else ad.parameter(p, name=name)

    @classmethod
    def create(cls, cfg: ModelConfig, adjacency: np.ndarray, seed: int) -> "GenTTP":
        return cls(cfg, adjacency, init_params(cfg, seed))

    def values(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def forward(self, a_window, q_window) -> StepOutput:
        """Differentiable batched step over the trainable parameters."""
        return forward(a_window, q_window, self.adjacency, self.params, self.cfg)

    def predict(self, a_window, q_window) -> np.ndarray:
        return predict_step(a_window, q_window, self.adjacency, self.values(), self.cfg)

    def flow_only_variant(self) -> "GenTTP":
        """Same parameters with the assignment branch switched off."""
        return GenTTP(replace(self.cfg, use_assignments=False), self.adjacency, self.params)

    def rollout(self, assignments, warm_start=None, warm_steps: int = 0) -> np.ndarray:
        """Predict the full (S, T) flow matrix from an (S, T) assignment matrix.

        The flow history starts empty and each prediction is fed back unrounded.
        With ``warm_start`` the first ``warm_steps`` columns come from that
        matrix instead.
        """
        warm = None if warm_start is None else np.asarray(warm_start)[None]
        return self.rollout_batch(np.asarray(assignments)[None], warm, warm_steps)[0]

    def rollout_batch(self, assignments, warm_start=None, warm_steps: int = 0) -> np.ndarray:
        """Vectorised rollout of (B, S, T) assignment matrices sharing T."""
        cfg = self.cfg
        a = np.asarray(assignments, dtype=np.float64)
        if a.ndim != 3 or a.shape[1] != cfg.cells:
            raise ShapeError("rollout", a.shape, ("B", cfg.cells, "T"))
        batch, _, intervals = a.shape
        if not 0 <= warm_steps <= intervals:
            raise ValidationError(f"warm_steps must lie in [0, {intervals}]")
        if warm_steps and (warm_start is None or np.shape(warm_start) != a.shape):
            raise ValidationError("warm start needs a flow matrix shaped like the assignments")

        values = self.values()
        pad = max(cfg.flow_window, cfg.assign_window)
        a_hist = np.zeros((batch, pad + intervals, cfg.cells))
        a_hist[:, pad:] = a.transpose(0, 2, 1)
        q_hist = np.zeros((batch, pad + intervals, cfg.cells))
        out = np.zeros((batch, cfg.cells, intervals))
        if warm_steps:
            warm = np.asarray(warm_start, dtype=np.float64)[..., :warm_steps]
            q_hist[:, pad:pad + warm_steps] = warm.transpose(0, 2, 1)
            out[..., :warm_steps] = warm

        first = max(1, warm_steps)
        targets = np.arange(first, intervals)
        flow = _FlowCache(q_hist, pad + first - cfg.flow_window, self.adjacency, values, cfg)
        decoder = _StepDecoder(values, cfg)
        a_offsets = np.arange(-cfg.assign_window, 0)
        chunk_size = max(1, ROLLOUT_WINDOWS // batch)
        for start in range(0, len(targets), chunk_size):
            chunk = targets[start:start + chunk_size]
            if cfg.use_assignments:
                rows = pad + chunk[:, None] + a_offsets
                windows = a_hist[:, rows].reshape(batch * len(chunk), cfg.assign_window, cfg.cells)
                h_assign, h_seq = assignment_branch(windows, self.adjacency, values, cfg)
                context, keys = decoder.precompute(
                    h_assign.reshape(batch, len(chunk), cfg.cells, cfg.hidden),
                    h_seq.reshape(batch, len(chunk), cfg.assign_window, cfg.cells, cfg.hidden),
                )
            else:
                context, keys = np.zeros((batch, len(chunk), cfg.cells, 2 * cfg.hidden)), None
            for j, t in enumerate(chunk):
                h_flow = flow.features(pad + t)
                predicted = decoder.step(h_flow, context[:, j], None if keys is None else keys[:, j])
                q_hist[:, pad + t] = predicted
                out[:, :, t] = predicted
        return out

    def save(self, directory):
        """Write ``params.ckpt`` and ``config.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ad.save_checkpoint(directory / "params.ckpt", self.values())
        (directory / "config.json").write_text(
            json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, directory, adjacency: np.ndarray) -> "GenTTP":
        directory = Path(directory)
        config_path = directory / "config.json"
        if not config_path.exists():
            raise DatasetError(f"file not found: {config_path}")
        cfg = ModelConfig.from_dict(json.loads(config_path.read_text(encoding="utf-8")))
        return cls(cfg, adjacency, ad.load_checkpoint(directory / "params.ckpt"))
