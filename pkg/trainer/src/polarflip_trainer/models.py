"""Scorer models: a plain LSTM and a differentiable-neural-computer variant.

Both consume the state encoding reshaped as one step per bit position,
each step holding the survivor-path gradients plus the received LLR for
that position.  The flip head scores every position (softmax over the
block); the validate head classifies continue/re-select from the final
step.  Only the LSTM model is exportable to the decoder's native `NFSW1`
format; DNC models are served over the adapter protocol instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

HEAD_FLIP = "flip"
HEAD_VALIDATE = "validate"


@dataclass(frozen=True)
class TrainConfig:
    """Model/optimization knobs; defaults follow the experiment setup
    (1x128 controller, 256x128 memory, 1 write + 4 read heads, batch 100,
    dropout 0.05, Adam)."""

    architecture: str = "lstm"  # lstm | dnc
    hidden_size: int = 128
    memory_slots: int = 256
    memory_width: int = 128
    read_heads: int = 4
    write_heads: int = 1
    batch_size: int = 100
    dropout: float = 0.05
    learning_rate: float = 1e-3
    epochs: int = 3
    validation_size: int = 50_000
    seed: int = 0
    reselect_weight: float | None = None  # None = inverse class frequency

    def __post_init__(self) -> None:
        if self.architecture not in ("lstm", "dnc"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.write_heads != 1:
            raise ValueError("the memory update implements a single write head")


def state_to_steps(states: torch.Tensor, n_bits: int) -> torch.Tensor:
    """(B, (L+1)*N) state encodings -> (B, N, L+1) per-position steps."""
    b, total = states.shape
    if total % n_bits:
        raise ValueError(f"state length {total} is not a multiple of N={n_bits}")
    folded = states.view(b, -1, n_bits)  # (B, L+1, N)
    return folded.transpose(1, 2).contiguous()


class LstmScorer(nn.Module):
    """Single-layer LSTM matching the decoder's native `lstm_v1` layout."""

    def __init__(self, input_size: int, hidden_size: int, head: str, dropout: float = 0.0):
        super().__init__()
        if head not in (HEAD_FLIP, HEAD_VALIDATE):
            raise ValueError(f"unknown head {head!r}")
        self.head_kind = head
        self.lstm = nn.LSTM(input_size, hidden_size, num_layers=1, batch_first=True)
        self.drop = nn.Dropout(dropout)
        self.head = nn.Linear(hidden_size, 1 if head == HEAD_FLIP else 2)

    def forward(self, steps: torch.Tensor) -> torch.Tensor:
        outputs, _ = self.lstm(steps)
        if self.head_kind == HEAD_FLIP:
            return self.head(self.drop(outputs)).squeeze(-1)  # (B, N)
        return self.head(self.drop(outputs[:, -1]))  # (B, 2)


class DncCell(nn.Module):
    """One step of an external-memory controller.

    Content addressing by cosine similarity, allocation from sorted usage,
    temporal linkage for forward/backward reads; one write head, R read
    heads.  Conventions follow the standard reference implementation.
    """

    def __init__(self, input_size: int, hidden_size: int, slots: int, width: int, read_heads: int):
        super().__init__()
        self.slots = slots
        self.width = width
        self.read_heads = read_heads
        self.controller = nn.LSTMCell(input_size + read_heads * width, hidden_size)
        r, w = read_heads, width
        self.iface_sizes = {
            "read_keys": r * w,
            "read_strengths": r,
            "write_key": w,
            "write_strength": 1,
            "erase": w,
            "write_vec": w,
            "free_gates": r,
            "alloc_gate": 1,
            "write_gate": 1,
            "read_modes": 3 * r,
        }
        self.interface = nn.Linear(hidden_size, sum(self.iface_sizes.values()))

    def initial_state(self, batch: int, device) -> dict:
        r, s, w = self.read_heads, self.slots, self.width
        h = self.controller.hidden_size
        zeros = lambda *shape: torch.zeros(*shape, device=device)
        return {
            "h": zeros(batch, h),
            "c": zeros(batch, h),
            "memory": zeros(batch, s, w),
            "usage": zeros(batch, s),
            "precedence": zeros(batch, s),
            "link": zeros(batch, s, s),
            "read_weights": zeros(batch, r, s),
            "write_weight": zeros(batch, s),
            "reads": zeros(batch, r, w),
        }

    @staticmethod
    def _content_weights(keys: torch.Tensor, memory: torch.Tensor, strengths: torch.Tensor) -> torch.Tensor:
        # keys (B, H, W), memory (B, S, W), strengths (B, H) -> (B, H, S)
        similarity = F.cosine_similarity(
            keys.unsqueeze(2), memory.unsqueeze(1), dim=-1, eps=1e-8
        )
        return torch.softmax(similarity * strengths.unsqueeze(-1), dim=-1)

    def forward(self, x: torch.Tensor, state: dict) -> tuple[torch.Tensor, dict]:
        batch = x.shape[0]
        controller_in = torch.cat([x, state["reads"].reshape(batch, -1)], dim=-1)
        h, c = self.controller(controller_in, (state["h"], state["c"]))

        parts = torch.split(self.interface(h), list(self.iface_sizes.values()), dim=-1)
        iface = dict(zip(self.iface_sizes, parts))
        r, s, w = self.read_heads, self.slots, self.width
        read_keys = iface["read_keys"].view(batch, r, w)
        read_strengths = 1.0 + F.softplus(iface["read_strengths"])
        write_key = iface["write_key"].view(batch, 1, w)
        write_strength = 1.0 + F.softplus(iface["write_strength"])
        erase = torch.sigmoid(iface["erase"])
        write_vec = iface["write_vec"]
        free_gates = torch.sigmoid(iface["free_gates"])
        alloc_gate = torch.sigmoid(iface["alloc_gate"])
        write_gate = torch.sigmoid(iface["write_gate"])
        read_modes = torch.softmax(iface["read_modes"].view(batch, r, 3), dim=-1)

        # usage decays where read heads elect to free their slots
        retention = torch.prod(1.0 - free_gates.unsqueeze(-1) * state["read_weights"], dim=1)
        usage = (
            state["usage"] + state["write_weight"] - state["usage"] * state["write_weight"]
        ) * retention

        # allocation weighting over ascending usage
        sorted_usage, order = torch.sort(usage, dim=-1)
        cumprod = torch.cumprod(
            torch.cat([torch.ones(batch, 1, device=x.device), sorted_usage[:, :-1]], dim=-1), dim=-1
        )
        alloc_sorted = (1.0 - sorted_usage) * cumprod
        alloc = torch.zeros_like(usage).scatter_(-1, order, alloc_sorted)

        write_content = self._content_weights(write_key, state["memory"], write_strength)[:, 0]
        write_weight = write_gate * (alloc_gate * alloc + (1.0 - alloc_gate) * write_content)

        memory = state["memory"] * (
            1.0 - write_weight.unsqueeze(-1) * erase.unsqueeze(1)
        ) + write_weight.unsqueeze(-1) * write_vec.unsqueeze(1)

        # temporal linkage
        ww_i = write_weight.unsqueeze(2)
        ww_j = write_weight.unsqueeze(1)
        link = (1.0 - ww_i - ww_j) * state["link"] + ww_i * state["precedence"].unsqueeze(1)
        eye = torch.eye(s, device=x.device).unsqueeze(0)
        link = link * (1.0 - eye)
        precedence = (1.0 - write_weight.sum(dim=-1, keepdim=True)) * state["precedence"] + write_weight

        content = self._content_weights(read_keys, memory, read_strengths)
        forward_w = torch.einsum("bij,brj->bri", link, state["read_weights"])
        backward_w = torch.einsum("bji,brj->bri", link, state["read_weights"])
        read_weights = (
            read_modes[..., 0:1] * backward_w
            + read_modes[..., 1:2] * content
            + read_modes[..., 2:3] * forward_w
        )
        reads = torch.einsum("brs,bsw->brw", read_weights, memory)

        new_state = {
            "h": h,
            "c": c,
            "memory": memory,
            "usage": usage,
            "precedence": precedence,
            "link": link,
            "read_weights": read_weights,
            "write_weight": write_weight,
            "reads": reads,
        }
        return torch.cat([h, reads.reshape(batch, -1)], dim=-1), new_state


class DncScorer(nn.Module):
    """External-memory scorer; same heads as the LSTM variant."""

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        head: str,
        slots: int,
        width: int,
        read_heads: int,
        dropout: float = 0.0,
    ):
        super().__init__()
        if head not in (HEAD_FLIP, HEAD_VALIDATE):
            raise ValueError(f"unknown head {head!r}")
        self.head_kind = head
        self.cell = DncCell(input_size, hidden_size, slots, width, read_heads)
        self.drop = nn.Dropout(dropout)
        out_in = hidden_size + read_heads * width
        self.head = nn.Linear(out_in, 1 if head == HEAD_FLIP else 2)

    def forward(self, steps: torch.Tensor) -> torch.Tensor:
        batch, length, _ = steps.shape
        state = self.cell.initial_state(batch, steps.device)
        outputs = []
        for t in range(length):
            y, state = self.cell(steps[:, t], state)
            outputs.append(y)
        stacked = torch.stack(outputs, dim=1)
        if self.head_kind == HEAD_FLIP:
            return self.head(self.drop(stacked)).squeeze(-1)
        return self.head(self.drop(stacked[:, -1]))


def build_model(config: TrainConfig, input_size: int, head: str) -> nn.Module:
    if config.architecture == "lstm":
        return LstmScorer(input_size, config.hidden_size, head, dropout=config.dropout)
    return DncScorer(
        input_size,
        config.hidden_size,
        head,
        slots=config.memory_slots,
        width=config.memory_width,
        read_heads=config.read_heads,
        dropout=config.dropout,
    )
