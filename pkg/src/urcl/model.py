"""Forecasting network: spatio-temporal encoder, decoder, and projection head.

The encoder stacks five layers of (entry affine -> gated dilated causal
temporal convolution -> diffusion graph convolution) with residual shortcuts.
Spatial mixing combines forward/backward transition-matrix diffusion over the
sensor graph with powers of a learned self-adaptive adjacency. The decoder is
a per-node two-layer MLP; the projection head is a two-layer MLP used by the
contrastive objective.

Tensor layout is (batch, time, nodes, features) throughout.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .exceptions import ContractError, NumericalError, SchemaError

ENCODER_WIDTHS = (32, 32, 32, 32, 256)
DECODER_HIDDEN = 512
DEFAULT_DILATIONS = (1, 2, 1, 2, 4)
CHECKPOINT_MAGIC = "URCL-CKPT-v1"


class ForecastingBackbone(Protocol):
    """Two-method interface the training harness relies on.

    Alternate backbones only need ``encode`` (windows to per-node and pooled
    representations) and ``decode`` (per-node representation to prediction).
    """

    def encode(self, inputs: Tensor, adjacency: Tensor | None = None) -> tuple[Tensor, Tensor]: ...

    def decode(self, per_node: Tensor) -> Tensor: ...


def adaptive_adjacency(e1: Tensor, e2: Tensor) -> Tensor:
    """Row-stochastic learned adjacency: softmax(relu(E1 @ E2^T)) row-wise."""
    return torch.softmax(torch.relu(e1 @ e2.T), dim=1)


def _propagate(support: Tensor, x: Tensor) -> Tensor:
    """support @ x over the node axis of (B, T, V, F) signals.

    Small graphs go through einsum; larger ones flatten to one matmul, which
    is much faster than many tiny batched products.
    """
    nodes = support.shape[0]
    if nodes < 64:
        return torch.einsum("vw,btwf->btvf", support, x)
    batch, steps, _, feats = x.shape
    flat = x.permute(2, 0, 1, 3).reshape(nodes, -1)
    out = support @ flat
    return out.reshape(nodes, batch, steps, feats).permute(1, 2, 0, 3)


def transition_matrices(adjacency: Tensor) -> tuple[Tensor, Tensor]:
    """Forward/backward transition matrices of the self-loop-augmented graph."""
    a_tilde = adjacency + torch.eye(
        adjacency.shape[0], dtype=adjacency.dtype, device=adjacency.device
    )
    row = a_tilde.sum(dim=1)
    col = a_tilde.T.sum(dim=1)
    if (row <= 0).any() or (col <= 0).any():
        raise ContractError("zero row sum in self-loop-augmented adjacency")
    return a_tilde / row[:, None], a_tilde.T / col[:, None]


class AdaptiveAdjacency(nn.Module):
    """Holds the node embedding pair and produces the learned adjacency."""

    def __init__(self, num_nodes: int, embed_dim: int):
        super().__init__()
        self.E1 = nn.Parameter(torch.empty(num_nodes, embed_dim))
        self.E2 = nn.Parameter(torch.empty(num_nodes, embed_dim))
        nn.init.xavier_uniform_(self.E1)
        nn.init.xavier_uniform_(self.E2)

    def forward(self) -> Tensor:
        return adaptive_adjacency(self.E1, self.E2)


class DiffusionGraphConv(nn.Module):
    """Graph convolution over K diffusion steps in three branches.

    Branch 0/1 propagate through powers of the forward/backward transition
    matrices; branch 2 through powers of the adaptive adjacency. Each (branch,
    step) pair has its own weight matrix; a single bias and a rectifier follow.
    """

    def __init__(self, in_dim: int, out_dim: int, diffusion_steps: int,
                 activation=torch.relu):
        super().__init__()
        if diffusion_steps < 0:
            raise ContractError("diffusion_steps must be >= 0")
        self.diffusion_steps = diffusion_steps
        self.activation = activation
        self.weight = nn.Parameter(torch.empty(3, diffusion_steps + 1, in_dim, out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        for branch in range(3):
            for step in range(diffusion_steps + 1):
                nn.init.xavier_uniform_(self.weight[branch, step])

    def forward(self, x: Tensor, forward_t: Tensor, backward_t: Tensor,
                adaptive: Tensor) -> Tensor:
        # the k=0 power is the identity for every branch, so those three
        # weights act on x jointly; higher powers accumulate per branch
        out = x @ (self.weight[0, 0] + self.weight[1, 0] + self.weight[2, 0])
        for branch, support in enumerate((forward_t, backward_t, adaptive)):
            current = x
            for step in range(1, self.diffusion_steps + 1):
                current = _propagate(support, current)
                out = out + current @ self.weight[branch, step]
        out = out + self.bias
        return self.activation(out) if self.activation is not None else out


class _CausalConv(nn.Module):
    """Dilated causal convolution along time as explicit shifted matmuls.

    Tap m applies its own weight matrix to the signal delayed by m * dilation
    steps (zero history before the window start), which is far faster here
    than a channels-first conv kernel at these shapes.
    """

    def __init__(self, in_dim: int, out_dim: int, dilation: int, kernel_size: int):
        super().__init__()
        self.dilation = dilation
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(torch.empty(kernel_size, in_dim, out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        for tap in range(kernel_size):
            nn.init.xavier_uniform_(self.weight[tap])

    def forward(self, x: Tensor) -> Tensor:
        steps = x.shape[1]
        out = x @ self.weight[0] + self.bias
        for tap in range(1, self.kernel_size):
            shift = tap * self.dilation
            if shift >= steps:
                continue
            delayed = nn.functional.pad(x[:, :steps - shift], (0, 0, 0, 0, shift, 0))
            out = out + delayed @ self.weight[tap]
        return out


class GatedTCN(nn.Module):
    """Dilated causal convolution pair combined as filter ⊙ gate.

    Causal: output step j only reads input steps j, j-d, ..., j-d*(kernel-1).
    """

    def __init__(self, in_dim: int, out_dim: int, dilation: int, kernel_size: int = 2,
                 filter_activation=torch.tanh, gate_activation=torch.sigmoid):
        super().__init__()
        self.dilation = dilation
        self.kernel_size = kernel_size
        self.filter_activation = filter_activation
        self.gate_activation = gate_activation
        self.filter_conv = _CausalConv(in_dim, out_dim, dilation, kernel_size)
        self.gate_conv = _CausalConv(in_dim, out_dim, dilation, kernel_size)

    def forward(self, x: Tensor) -> Tensor:
        filt = self.filter_activation(self.filter_conv(x))
        gate = self.gate_activation(self.gate_conv(x))
        return filt * gate


class STLayer(nn.Module):
    """Entry affine -> gated TCN -> diffusion graph conv, plus residual."""

    def __init__(self, in_dim: int, out_dim: int, dilation: int, diffusion_steps: int):
        super().__init__()
        self.entry = nn.Linear(in_dim, out_dim)
        self.tcn = GatedTCN(out_dim, out_dim, dilation)
        self.gconv = DiffusionGraphConv(out_dim, out_dim, diffusion_steps)
        # width-matching shortcut when the residual cannot be added directly
        self.shortcut = nn.Linear(in_dim, out_dim, bias=False) if in_dim != out_dim else None
        nn.init.xavier_uniform_(self.entry.weight)
        nn.init.zeros_(self.entry.bias)
        if self.shortcut is not None:
            nn.init.xavier_uniform_(self.shortcut.weight)

    def forward(self, x: Tensor, forward_t: Tensor, backward_t: Tensor,
                adaptive: Tensor) -> Tensor:
        h = self.gconv(self.tcn(self.entry(x)), forward_t, backward_t, adaptive)
        residual = self.shortcut(x) if self.shortcut is not None else x
        return h + residual


class STEncoder(nn.Module):
    """Five spatio-temporal layers; emits per-node and node-pooled features.

    The representation is the final time step's features: per node for the
    decoding path, mean-pooled over nodes for the contrastive path.
    """

    def __init__(self, in_channels: int, num_nodes: int,
                 widths: Sequence[int] = ENCODER_WIDTHS,
                 dilations: Sequence[int] = DEFAULT_DILATIONS,
                 diffusion_steps: int = 2, embed_dim: int = 10):
        super().__init__()
        if len(widths) != len(dilations):
            raise ContractError("widths and dilations must align")
        self.adaptive = AdaptiveAdjacency(num_nodes, embed_dim)
        dims = [in_channels, *widths]
        self.layers = nn.ModuleList(
            STLayer(dims[i], dims[i + 1], dilations[i], diffusion_steps)
            for i in range(len(widths))
        )
        self.output_dim = dims[-1]

    def forward(self, x: Tensor, adjacency: Tensor) -> tuple[Tensor, Tensor]:
        forward_t, backward_t = transition_matrices(adjacency)
        adaptive = self.adaptive()
        h = x
        for layer in self.layers:
            h = layer(h, forward_t, backward_t, adaptive)
        if not torch.isfinite(h).all():
            # slow path only on failure: replay the stack to locate the layer
            h = x
            for index, layer in enumerate(self.layers):
                h = layer(h, forward_t, backward_t, adaptive)
                if not torch.isfinite(h).all():
                    raise NumericalError(f"non-finite activation after encoder layer {index}")
        per_node = h[:, -1]              # (B, V, H)
        pooled = per_node.mean(dim=1)    # (B, H)
        return per_node, pooled


class STDecoder(nn.Module):
    """Per-node MLP mapping encoder features to the forecast horizon."""

    def __init__(self, in_dim: int, horizon: int, out_channels: int = 1,
                 hidden: int = DECODER_HIDDEN):
        super().__init__()
        self.horizon = horizon
        self.out_channels = out_channels
        self.hidden_layer = nn.Linear(in_dim, hidden)
        self.output_layer = nn.Linear(hidden, horizon * out_channels)
        for layer in (self.hidden_layer, self.output_layer):
            nn.init.xavier_uniform_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, per_node: Tensor) -> Tensor:
        h = self.output_layer(torch.relu(self.hidden_layer(per_node)))
        batch, nodes = per_node.shape[0], per_node.shape[1]
        out = h.reshape(batch, nodes, self.horizon, self.out_channels)
        return out.permute(0, 2, 1, 3)   # (B, N, V, C_out)


class Projector(nn.Module):
    """Two affine layers with a rectifier between; no normalization layers."""

    def __init__(self, dim: int = 256):
        super().__init__()
        self.layer1 = nn.Linear(dim, dim)
        self.layer2 = nn.Linear(dim, dim)
        for layer in (self.layer1, self.layer2):
            nn.init.xavier_uniform_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, z: Tensor) -> Tensor:
        return self.layer2(torch.relu(self.layer1(z)))


class STForecaster(nn.Module):
    """Encoder + decoder + projector over a fixed sensor graph.

    ``forward`` predicts; ``encode``/``decode`` expose the backbone interface;
    ``project`` feeds the contrastive objective. An augmented adjacency may be
    passed per call, otherwise the stored graph is used.
    """

    def __init__(self, num_nodes: int, in_channels: int, horizon: int = 1,
                 out_channels: int = 1, adjacency: np.ndarray | Tensor | None = None,
                 widths: Sequence[int] = ENCODER_WIDTHS,
                 dilations: Sequence[int] = DEFAULT_DILATIONS,
                 diffusion_steps: int = 2, embed_dim: int = 10):
        super().__init__()
        if adjacency is None:
            adjacency = torch.zeros(num_nodes, num_nodes)
        adjacency = torch.as_tensor(np.asarray(adjacency), dtype=torch.float32)
        if adjacency.shape != (num_nodes, num_nodes):
            raise ContractError("adjacency shape must be (num_nodes, num_nodes)")
        self.register_buffer("adjacency", adjacency)
        self.encoder = STEncoder(in_channels, num_nodes, widths=widths,
                                 dilations=dilations, diffusion_steps=diffusion_steps,
                                 embed_dim=embed_dim)
        self.decoder = STDecoder(self.encoder.output_dim, horizon, out_channels)
        self.projector = Projector(self.encoder.output_dim)

    def encode(self, inputs: Tensor, adjacency: Tensor | None = None) -> tuple[Tensor, Tensor]:
        graph = self.adjacency if adjacency is None else adjacency
        return self.encoder(inputs, graph)

    def decode(self, per_node: Tensor) -> Tensor:
        return self.decoder(per_node)

    def project(self, pooled: Tensor) -> Tensor:
        return self.projector(pooled)

    def forward(self, inputs: Tensor, adjacency: Tensor | None = None) -> Tensor:
        per_node, _ = self.encode(inputs, adjacency)
        return self.decode(per_node)


def save_model_checkpoint(model: nn.Module, path, config_hash: str = "") -> None:
    """Write all parameter/buffer arrays keyed by canonical names to one file."""
    arrays = {name: tensor.detach().cpu().numpy()
              for name, tensor in model.state_dict().items()}
    np.savez(path, __magic__=np.array(CHECKPOINT_MAGIC),
             __config_hash__=np.array(config_hash), **arrays)


def load_model_checkpoint(model: nn.Module, path, expected_hash: str | None = None) -> str:
    """Restore a checkpoint in place; returns the stored config hash."""
    with np.load(path, allow_pickle=False) as archive:
        if "__magic__" not in archive or str(archive["__magic__"]) != CHECKPOINT_MAGIC:
            raise SchemaError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint")
        stored_hash = str(archive["__config_hash__"])
        if expected_hash is not None and stored_hash != expected_hash:
            raise ContractError(
                f"checkpoint config hash {stored_hash} does not match expected {expected_hash}"
            )
        state = {name: torch.as_tensor(archive[name])
                 for name in archive.files if not name.startswith("__")}
    missing = set(model.state_dict()) - set(state)
    unexpected = set(state) - set(model.state_dict())
    if missing or unexpected:
        raise SchemaError(
            f"checkpoint keys mismatch (missing {sorted(missing)}, unexpected {sorted(unexpected)})"
        )
    model.load_state_dict(state)
    return stored_hash
