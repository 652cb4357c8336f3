"""Adapter-protocol server: one JSON record per line on stdin/stdout.

Requests carry a `kind` (`score_flips` or `validate_flip`) and the state
encoding as decimal floats.  Responses are `{"positions", "likelihoods"}`
or `{"action", "confidence"}`; malformed requests produce an `{"error"}`
record and the server keeps running.  The server is stateless across
requests.
"""

from __future__ import annotations

import json
import sys

import numpy as np
import torch

from .models import HEAD_FLIP, state_to_steps


class ModelServer:
    def __init__(self, model, n_bits: int, omega: int, free_mask: np.ndarray | None = None):
        self.model = model
        self.model.eval()
        self.n_bits = n_bits
        self.omega = omega
        self.free_mask = free_mask

    def handle(self, line: str) -> dict:
        try:
            request = json.loads(line)
            kind = request["kind"]
            state = np.asarray(request["state"], dtype=np.float32)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            return {"error": f"malformed request: {exc}"}
        if state.ndim != 1 or state.size % self.n_bits:
            return {"error": f"state length {state.size} is not a multiple of N={self.n_bits}"}
        steps = state_to_steps(torch.from_numpy(state[None, :]), self.n_bits)
        try:
            with torch.no_grad():
                output = self.model(steps)[0]
        except RuntimeError as exc:
            return {"error": f"inference failed: {exc}"}
        if kind == "score_flips":
            return self._flip_response(output.numpy())
        if kind == "validate_flip":
            return self._validate_response(output.numpy())
        return {"error": f"unknown kind {kind!r}"}

    def _flip_response(self, scores: np.ndarray) -> dict:
        probs = np.exp(scores - scores.max())
        probs /= probs.sum()
        if self.free_mask is not None:
            probs = np.where(self.free_mask, probs, 0.0)
        order = np.argsort(-probs, kind="stable")[: self.omega]
        order = order[probs[order] > 0]
        mass = probs[order]
        mass = mass / mass.sum() if mass.size else mass
        return {
            "positions": [int(i) for i in order],
            "likelihoods": [float(f"{v:.9g}") for v in mass],
        }

    @staticmethod
    def _validate_response(logits: np.ndarray) -> dict:
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        action = "re-select" if logits[1] > logits[0] else "continue"
        confidence = float(probs[1] if action == "re-select" else probs[0])
        return {"action": action, "confidence": float(f"{confidence:.9g}")}


def serve(model, n_bits: int, omega: int, free_mask: np.ndarray | None = None,
          stdin=None, stdout=None) -> None:
    server = ModelServer(model, n_bits, omega, free_mask)
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(json.dumps(server.handle(line)) + "\n")
        stdout.flush()
