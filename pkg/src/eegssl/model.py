"""Diffusion-convolutional recurrent model.

The core op mixes node signals through powers of the forward and backward
random-walk transition matrices, with one filter weight per (power,
direction, input feature, output feature). A GRU cell whose linear maps
are such convolutions stacks into a sequence encoder; a decoder with a
per-step linear readout reconstructs feature sequences, and a pooled
sigmoid head scores seizure probability.

All forward functions accept either a single example or a leading batch
axis, and read their weights from a ParamStore under dotted names:
``{part}.layer{i}.{gate}.theta|bias``, ``decoder.proj.weight|bias``,
``classifier.out.weight|bias``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .graphs import Graph
from .numkernel import ParamStore, Tensor

GATES = ("reset", "update", "cand")
PARTS = ("encoder", "decoder", "classifier")


@dataclass(frozen=True)
class DiffusionFilter:
    """Filter weights for one diffusion convolution.

    ``theta`` has shape (K, 2, P, Q): one coefficient per diffusion power,
    walk direction, input feature, and output feature. ``bias`` is an
    optional length-Q vector.
    """

    theta: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 4 or theta.shape[1] != 2 or theta.shape[0] < 1:
            raise ValueError(f"theta must be (K, 2, P, Q) with K >= 1, got {theta.shape}")
        if self.bias is not None:
            bias = np.asarray(self.bias, dtype=np.float64)
            object.__setattr__(self, "bias", bias)
            if bias.shape != (theta.shape[3],):
                raise ValueError(f"bias shape {bias.shape} does not match Q={theta.shape[3]}")

    @property
    def num_steps(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class DcgruConfig:
    """Stacked-cell architecture parameters."""

    num_nodes: int = 19
    input_dim: int = 25
    hidden_dim: int = 16
    num_layers: int = 2
    diffusion_steps: int = 2

    def __post_init__(self):
        for name in ("num_nodes", "input_dim", "hidden_dim", "num_layers", "diffusion_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


class _GraphTensors:
    """Constant transition-matrix tensors shared across one forward pass."""

    def __init__(self, graph: Graph):
        self.out_t = nk.tensor(graph.out_transition)
        self.in_t = nk.tensor(graph.in_transition)
        self.num_nodes = graph.num_nodes


def _mix_nodes(tm: Tensor, x: Tensor) -> Tensor:
    # (N,N) applied to (B,N,D) along the node axis
    b, n, d = x.shape
    flat = x.transpose((1, 0, 2)).reshape((n, b * d))
    return nk.matmul(tm, flat).reshape((n, b, d)).transpose((1, 0, 2))


def _support_stack(x: Tensor, gt: _GraphTensors, k: int) -> Tensor:
    """Stacked diffusion supports of a (B, N, D) signal: (B*N, 2K*D).

    Blocks are ordered power-major then direction (out, in) then input
    feature; powers are built by iterated transition application.
    """
    b, n, d = x.shape
    blocks = [x, x]
    fwd = bwd = x
    for _ in range(1, k):
        fwd = _mix_nodes(gt.out_t, fwd)
        bwd = _mix_nodes(gt.in_t, bwd)
        blocks.extend([fwd, bwd])
    return nk.concat(blocks, axis=2).reshape((b * n, 2 * k * d))


def _project_stack(stacked: Tensor, theta: Tensor, bias: Tensor | None, b: int, n: int) -> Tensor:
    if theta.shape[0] != stacked.shape[1]:
        raise nk.ShapeError(
            f"diffusion filter has {theta.shape[0]} stacked rows, input supplies {stacked.shape[1]}"
        )
    out = nk.matmul(stacked, theta)
    if bias is not None:
        out = nk.add_bias(out, bias)
    return out.reshape((b, n, theta.shape[1]))


def _dconv(x: Tensor, gt: _GraphTensors, theta: Tensor, bias: Tensor | None, k: int) -> Tensor:
    """Diffusion convolution on a batched (B, N, D) signal."""
    b, n, _ = x.shape
    return _project_stack(_support_stack(x, gt, k), theta, bias, b, n)


def diffusion_conv(x, graph: Graph, filt: DiffusionFilter):
    """Public single-signal form: (N, P) or (B, N, P) -> (N, Q) or (B, N, Q)."""
    t = x if isinstance(x, Tensor) else nk.tensor(x)
    squeeze = t.ndim == 2
    if squeeze:
        t = t.reshape((1,) + t.shape)
    k, _, p, q = filt.theta.shape
    if t.shape[1] != graph.num_nodes or t.shape[2] != p:
        raise nk.ShapeError(
            f"input {t.shape} does not match graph N={graph.num_nodes}, filter P={p}"
        )
    theta = nk.tensor(filt.theta.reshape(2 * k * p, q))
    bias = None if filt.bias is None else nk.tensor(filt.bias)
    out = _dconv(t, _GraphTensors(graph), theta, bias, k)
    return out.reshape(out.shape[1:]) if squeeze else out


def _cell(x: Tensor, h: Tensor, gt: _GraphTensors, params: ParamStore, prefix: str, k: int) -> Tensor:
    b, n, _ = x.shape
    xh = _support_stack(nk.concat([x, h], axis=2), gt, k)  # shared by both gates
    r = _project_stack(xh, params[f"{prefix}.reset.theta"], params[f"{prefix}.reset.bias"], b, n).sigmoid()
    u = _project_stack(xh, params[f"{prefix}.update.theta"], params[f"{prefix}.update.bias"], b, n).sigmoid()
    xc = nk.concat([x, r * h], axis=2)
    c = _dconv(xc, gt, params[f"{prefix}.cand.theta"], params[f"{prefix}.cand.bias"], k).tanh()
    return u * h + (1.0 - u) * c


def dcgru_cell(
    x_t,
    h_prev,
    graph: Graph,
    params: ParamStore,
    config: DcgruConfig,
    prefix: str = "encoder.layer0",
):
    """One gated recurrence step; inputs (N, P)/(N, H) or batched 3-D."""
    x = x_t if isinstance(x_t, Tensor) else nk.tensor(x_t)
    h = h_prev if isinstance(h_prev, Tensor) else nk.tensor(h_prev)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
        h = h.reshape((1,) + h.shape)
    if x.shape[0] != h.shape[0] or x.shape[1] != h.shape[1] or h.shape[2] != config.hidden_dim:
        raise nk.ShapeError(f"cell inputs {x.shape} and {h.shape} do not conform")
    out = _cell(x, h, _GraphTensors(graph), params, prefix, config.diffusion_steps)
    return out.reshape(out.shape[1:]) if squeeze else out


def _as_batched_sequence(sequence) -> tuple[np.ndarray, bool]:
    seq = sequence.data if isinstance(sequence, Tensor) else np.asarray(sequence, dtype=np.float64)
    if seq.ndim == 3:
        return seq[:, None, :, :], True
    if seq.ndim == 4:
        return seq, False
    raise nk.ShapeError(f"sequence must be (T,N,P) or (T,B,N,P), got {seq.shape}")


def encode(
    sequence,
    graph: Graph,
    params: ParamStore,
    config: DcgruConfig,
    prefix: str = "encoder",
) -> list[Tensor]:
    """Run stacked cells over the feature sequence; final state per layer."""
    seq, squeeze = _as_batched_sequence(sequence)
    t_steps, b, n, _ = seq.shape
    gt = _GraphTensors(graph)
    hidden = [nk.zeros((b, n, config.hidden_dim)) for _ in range(config.num_layers)]
    for t in range(t_steps):
        x = nk.tensor(seq[t])
        for layer in range(config.num_layers):
            hidden[layer] = _cell(
                x, hidden[layer], gt, params, f"{prefix}.layer{layer}", config.diffusion_steps
            )
            x = hidden[layer]
    if squeeze:
        return [h.reshape(h.shape[1:]) for h in hidden]
    return hidden


def _project(h: Tensor, params: ParamStore) -> Tensor:
    b, n, hid = h.shape
    out = nk.matmul(h.reshape((b * n, hid)), params["decoder.proj.weight"])
    out = nk.add_bias(out, params["decoder.proj.bias"])
    return out.reshape((b, n, out.shape[1]))


def decode_denoise(
    encoder_state: list[Tensor],
    target,
    graph: Graph,
    params: ParamStore,
    config: DcgruConfig,
    teacher_forcing_prob: float,
    seed,
) -> Tensor:
    """Reconstruct the target sequence from the encoder state.

    The first step always consumes a zero input; later steps consume the
    previous clean target with probability ``teacher_forcing_prob`` (one
    draw per step), else the model's previous output.
    """
    if not 0.0 <= teacher_forcing_prob <= 1.0:
        raise ValueError(f"teacher_forcing_prob must be in [0, 1], got {teacher_forcing_prob}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    seq, squeeze = _as_batched_sequence(target)
    t_steps, b, n, p = seq.shape
    gt = _GraphTensors(graph)
    hidden = [h.reshape((1,) + h.shape) if h.ndim == 2 else h for h in encoder_state]
    if len(hidden) != config.num_layers:
        raise nk.ShapeError(f"expected {config.num_layers} layer states, got {len(hidden)}")
    outputs = []
    x = nk.zeros((b, n, p))
    for t in range(t_steps):
        inp = x
        for layer in range(config.num_layers):
            hidden[layer] = _cell(
                inp, hidden[layer], gt, params, f"decoder.layer{layer}", config.diffusion_steps
            )
            inp = hidden[layer]
        out_t = _project(hidden[-1], params)
        outputs.append(out_t.reshape((1, b, n, p)))
        if t + 1 < t_steps:
            use_truth = rng.uniform() < teacher_forcing_prob
            x = nk.tensor(seq[t]) if use_truth else out_t
    stacked = nk.concat(outputs, axis=0)
    return stacked.reshape((t_steps, n, p)) if squeeze else stacked


def classify_logits(sequence, graph: Graph, params: ParamStore, config: DcgruConfig) -> Tensor:
    """Pre-sigmoid seizure scores: encoder top state, node-mean, linear head."""
    seq, squeeze = _as_batched_sequence(sequence)
    top = encode(seq, graph, params, config)[-1]  # (B, N, H)
    pooled = top.mean(axis=1)
    out = nk.add_bias(nk.matmul(pooled, params["classifier.out.weight"]), params["classifier.out.bias"])
    flat = out.reshape((out.shape[0],))
    return flat.reshape(()) if squeeze else flat


def classify(sequence, graph: Graph, params: ParamStore, config: DcgruConfig) -> Tensor:
    """Seizure probability in (0, 1) per window."""
    return classify_logits(sequence, graph, params, config).sigmoid()


# -- parameter construction -----------------------------------------------------


def param_shapes(config: DcgruConfig, parts: tuple[str, ...] = PARTS) -> dict[str, tuple]:
    """Canonical parameter name -> shape map for the requested parts."""
    k, h, p = config.diffusion_steps, config.hidden_dim, config.input_dim
    shapes: dict[str, tuple] = {}
    for part in parts:
        if part not in PARTS:
            raise ValueError(f"unknown part {part!r}")
        if part in ("encoder", "decoder"):
            for layer in range(config.num_layers):
                d_in = (p if layer == 0 else h) + h
                for gate in GATES:
                    shapes[f"{part}.layer{layer}.{gate}.theta"] = (2 * k * d_in, h)
                    shapes[f"{part}.layer{layer}.{gate}.bias"] = (h,)
        if part == "decoder":
            shapes["decoder.proj.weight"] = (h, p)
            shapes["decoder.proj.bias"] = (p,)
        if part == "classifier":
            shapes["classifier.out.weight"] = (h, 1)
            shapes["classifier.out.bias"] = (1,)
    return shapes


def init_params(config: DcgruConfig, seed: int, parts: tuple[str, ...] = PARTS) -> ParamStore:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, shape in sorted(param_shapes(config, parts).items()):
        if name.endswith(".bias"):
            store.add(name, np.zeros(shape))
        else:
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            store.add(name, rng.uniform(-limit, limit, size=shape))
    return store


def validate_partition(params: ParamStore) -> dict[str, list[str]]:
    """Check every parameter belongs to exactly one part; return the split."""
    split: dict[str, list[str]] = {part: [] for part in PARTS}
    for name in params.names():
        part = name.split(".", 1)[0]
        if part not in split:
            raise ValueError(f"parameter {name!r} has no recognized part prefix")
        split[part].append(name)
    return split
