"""LLR-domain SC and SCL trellis decoding.

Path metrics are exact log-domain penalties: every bit (frozen included)
adds ln(1 + exp(-(1-2u)*L)) to its path, and the per-bit increments are
retained as a gradient trace for downstream flip scoring.  SC is SCL with
list size 1; both run through the same batch core.

Flip semantics: at a flip position the survivors are the candidates that
standard selection would discard.  At list size 1 this inverts the hard
decision; while the list is still filling (no pruning yet) each path keeps
its sign-rule-complement child instead.  Batches larger than one support
flips only at list size 1, because per-frame flip schedules would
desynchronize the list growth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .polar import PolarCode


def pm_increment(bit_llr, decision):
    """Exact path-metric increment ln(1 + exp(-(1-2u)*L)); always positive."""
    bit_llr = np.asarray(bit_llr, dtype=float)
    sign = 2.0 * np.asarray(decision, dtype=float) - 1.0
    return np.logaddexp(0.0, sign * bit_llr)


def llr_combine_f(a, b, min_sum: bool = False):
    """Upper-branch LLR combine (boxplus).

    Exact form is evaluated as sign(a)sign(b)min(|a|,|b|) plus the two
    log-domain correction terms, which cannot overflow; `min_sum` drops the
    corrections.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    base = np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))
    if min_sum:
        return base
    return base + np.log1p(np.exp(-np.abs(a + b))) - np.log1p(np.exp(-np.abs(a - b)))


def llr_combine_g(a, b, partial_sum):
    """Lower-branch LLR combine: b + (1-2s)*a."""
    s = np.asarray(partial_sum, dtype=float)
    return np.asarray(b, dtype=float) + (1.0 - 2.0 * s) * np.asarray(a, dtype=float)


@dataclass(frozen=True)
class DecodePath:
    """One survivor trajectory, ranked by final path metric."""

    path_id: int
    hard_decisions: np.ndarray
    path_metric: float
    gradient_trace: np.ndarray
    bit_llr_trace: np.ndarray


@dataclass(frozen=True)
class DecoderState:
    """Completed decode: survivor paths (ascending PM), CRC verdicts, choice."""

    code: PolarCode
    paths: tuple[DecodePath, ...]
    received: np.ndarray
    crc_results: np.ndarray
    chosen_path: int

    @property
    def chosen(self) -> DecodePath:
        return self.paths[self.chosen_path]

    @property
    def list_size(self) -> int:
        return len(self.paths)

    def payload(self, path_id: int | None = None) -> np.ndarray:
        """Free-position bits (message + CRC) of a path, default the chosen one."""
        path = self.paths[self.chosen_path if path_id is None else path_id]
        return path.hard_decisions[~self.code.frozen_mask]

    def message(self, path_id: int | None = None) -> np.ndarray:
        """Decoded message bits with the CRC stripped."""
        return self.payload(path_id)[: self.code.k_info]

    @property
    def crc_passed(self) -> bool:
        return bool(self.crc_results[self.chosen_path])


def validate_flips(code: PolarCode, flips) -> np.ndarray:
    """Normalize flip positions to a sorted unique index array; free bits only."""
    positions = np.atleast_1d(np.asarray(flips, dtype=np.int64)) if flips is not None else np.zeros(0, np.int64)
    if positions.size == 0:
        return positions
    if positions.min() < 0 or positions.max() >= code.n_bits:
        raise ValueError("flip position out of range")
    if np.any(code.frozen_mask[positions]):
        raise ValueError("flip positions must be free (non-frozen) bits")
    return np.unique(positions)


@dataclass
class BatchDecodeResult:
    """Struct-of-arrays decode output for a batch of frames.

    Paths are sorted by ascending final PM per frame.  `chosen` is the
    lowest-PM CRC-passing path, falling back to the overall lowest-PM path.
    """

    code: PolarCode
    received: np.ndarray
    decisions: np.ndarray
    path_metrics: np.ndarray
    gradients: np.ndarray
    bit_llrs: np.ndarray
    crc_ok: np.ndarray
    chosen: np.ndarray
    pm_history: list[np.ndarray] | None = None

    @property
    def batch_size(self) -> int:
        return self.received.shape[0]

    @property
    def list_size(self) -> int:
        return self.decisions.shape[1]

    def payloads(self) -> np.ndarray:
        """(B, L, k_free) free-position bits for every path."""
        return self.decisions[:, :, ~self.code.frozen_mask]

    def chosen_messages(self) -> np.ndarray:
        """(B, k_info) message estimate of each frame's chosen path."""
        rows = np.arange(self.batch_size)
        return self.payloads()[rows, self.chosen, : self.code.k_info]

    def chosen_crc_ok(self) -> np.ndarray:
        return self.crc_ok[np.arange(self.batch_size), self.chosen]

    def frame_state(self, b: int) -> DecoderState:
        """Materialize the spec-level `DecoderState` for one frame."""
        paths = tuple(
            DecodePath(
                path_id=p,
                hard_decisions=self.decisions[b, p].copy(),
                path_metric=float(self.path_metrics[b, p]),
                gradient_trace=self.gradients[b, p].copy(),
                bit_llr_trace=self.bit_llrs[b, p].copy(),
            )
            for p in range(self.list_size)
        )
        return DecoderState(
            code=self.code,
            paths=paths,
            received=self.received[b].copy(),
            crc_results=self.crc_ok[b].copy(),
            chosen_path=int(self.chosen[b]),
        )


def scl_decode_batch(
    code: PolarCode,
    llrs: np.ndarray,
    list_size: int = 1,
    flips: np.ndarray | None = None,
    min_sum: bool = False,
    collect_pm_history: bool = False,
) -> BatchDecodeResult:
    """Decode a (B, N) batch of received LLR frames.

    `flips` is an optional (B, N) boolean mask of positions decoded with
    complementary selection.  See the module docstring for the batch/flip
    restriction.
    """
    llrs = np.asarray(llrs, dtype=float)
    if llrs.ndim != 2 or llrs.shape[1] != code.n_bits:
        raise ValueError(f"expected (B, {code.n_bits}) LLRs, got {llrs.shape}")
    if list_size < 1:
        raise ValueError("list size must be >= 1")
    B, N = llrs.shape
    n = code.n_stages
    L = list_size
    if flips is not None:
        flips = np.asarray(flips, dtype=bool)
        if flips.shape != (B, N):
            raise ValueError("flip mask shape must match LLR batch")
        if np.any(flips & code.frozen_mask):
            raise ValueError("flip positions must be free (non-frozen) bits")
        if not flips.any():
            flips = None
        elif L > 1 and B > 1:
            raise ValueError("flips with list_size > 1 require batch size 1")

    rows = np.arange(B)[:, None]
    llr_mem = np.zeros((B, L, n + 1, N))
    llr_mem[:, :, 0, :] = llrs[:, None, :]
    bit_mem = np.zeros((B, L, n + 1, N), dtype=np.int8)
    pm = np.zeros((B, L))
    grad = np.zeros((B, L, N))
    bit_llr = np.zeros((B, L, N))
    decisions = np.zeros((B, L, N), dtype=np.int8)
    active = 1
    pm_history: list[np.ndarray] | None = [] if collect_pm_history else None

    frozen = code.frozen_mask
    for i in range(N):
        # Propagate LLRs down to leaf i.
        if i == 0:
            start_depth = 1
        else:
            t = (i & -i).bit_length() - 1  # trailing zeros
            d0 = n - t
            m = N >> d0
            a = llr_mem[:, :active, d0 - 1, i - m : i]
            b = llr_mem[:, :active, d0 - 1, i : i + m]
            ps = bit_mem[:, :active, d0, i - m : i]
            llr_mem[:, :active, d0, i : i + m] = b + (1.0 - 2.0 * ps) * a
            start_depth = d0 + 1
        for d in range(start_depth, n + 1):
            m = N >> d
            s = (i >> (n - d)) << (n - d)
            a = llr_mem[:, :active, d - 1, s : s + m]
            b = llr_mem[:, :active, d - 1, s + m : s + 2 * m]
            llr_mem[:, :active, d, s : s + m] = llr_combine_f(a, b, min_sum=min_sum)

        # Copy: the fork gather below rewrites this llr_mem column in place.
        leaf = llr_mem[:, :active, n, i].copy()  # (B, active)
        if frozen[i]:
            pm[:, :active] += np.logaddexp(0.0, -leaf)
            grad[:, :active, i] = np.logaddexp(0.0, -leaf)
            bit_llr[:, :active, i] = leaf
            bit_mem[:, :active, n, i] = 0
        else:
            inc0 = np.logaddexp(0.0, -leaf)
            inc1 = np.logaddexp(0.0, leaf)
            flip_col = flips[:, i] if flips is not None else None
            if flip_col is not None and not flip_col.any():
                flip_col = None

            if 2 * active <= L and flip_col is None:
                # List still filling: keep both children of every path.
                parents = np.broadcast_to(np.repeat(np.arange(active), 2), (B, 2 * active))
                decs = np.broadcast_to(np.tile(np.array([0, 1], dtype=np.int8), active), (B, 2 * active))
                new_pm = np.stack([pm[:, :active] + inc0, pm[:, :active] + inc1], axis=2).reshape(B, 2 * active)
                new_active = 2 * active
            elif 2 * active <= L:
                # Growth-phase flip (B == 1): keep each path's complement child.
                pref = (inc1 < inc0).astype(np.int8)
                decs = 1 - pref
                parents = np.broadcast_to(np.arange(active), (B, active))
                new_pm = pm[:, :active] + np.where(decs == 1, inc1, inc0)
                new_active = active
            else:
                cand = np.stack([pm[:, :active] + inc0, pm[:, :active] + inc1], axis=2).reshape(B, 2 * active)
                order = np.argsort(cand, axis=1, kind="stable")
                n_keep = min(L, 2 * active)
                if flip_col is None:
                    keep = order[:, :n_keep]
                elif L == 1:
                    keep = np.take_along_axis(order, flip_col.astype(np.int64)[:, None], axis=1)
                elif flip_col[0]:
                    keep = order[:, n_keep:]
                else:
                    keep = order[:, :n_keep]
                parents = keep >> 1
                decs = (keep & 1).astype(np.int8)
                new_pm = np.take_along_axis(cand, keep, axis=1)
                new_active = keep.shape[1]

            if not (active == new_active and np.all(parents == np.arange(active))):
                grad[:, :new_active] = grad[rows, parents]
                bit_llr[:, :new_active] = bit_llr[rows, parents]
                decisions[:, :new_active] = decisions[rows, parents]
                bit_mem[:, :new_active] = bit_mem[rows, parents]
                # Only the blocks on the root-to-leaf path are still live.
                for d in range(1, n + 1):
                    m = N >> d
                    s = (i >> (n - d)) << (n - d)
                    llr_mem[:, :new_active, d, s : s + m] = llr_mem[rows, parents, d, s : s + m]
            pm[:, :new_active] = new_pm
            leaf_sel = np.take_along_axis(leaf, parents, axis=1)
            grad[:, :new_active, i] = np.where(decs == 1, np.logaddexp(0.0, leaf_sel), np.logaddexp(0.0, -leaf_sel))
            bit_llr[:, :new_active, i] = leaf_sel
            decisions[:, :new_active, i] = decs
            bit_mem[:, :new_active, n, i] = decs
            active = new_active

        # Fold completed subtrees upward.
        d = n
        while d > 0 and (i + 1) % (N >> (d - 1)) == 0:
            m = N >> d
            base = (i + 1) - 2 * m
            left = bit_mem[:, :active, d, base : base + m]
            right = bit_mem[:, :active, d, base + m : base + 2 * m]
            bit_mem[:, :active, d - 1, base : base + m] = left ^ right
            bit_mem[:, :active, d - 1, base + m : base + 2 * m] = right
            d -= 1
        if pm_history is not None:
            pm_history.append(pm[:, :active].copy())

    # Order survivors by final PM (stable: ties keep lineage order).
    final_order = np.argsort(pm[:, :active], axis=1, kind="stable")
    pm_sorted = np.take_along_axis(pm[:, :active], final_order, axis=1)
    decisions = np.take_along_axis(decisions[:, :active], final_order[:, :, None], axis=1)
    grad = np.take_along_axis(grad[:, :active], final_order[:, :, None], axis=1)
    bit_llr = np.take_along_axis(bit_llr[:, :active], final_order[:, :, None], axis=1)

    payloads = decisions[:, :, ~frozen]
    crc_ok = code.crc.check(payloads)
    any_pass = crc_ok.any(axis=1)
    chosen = np.where(any_pass, np.argmax(crc_ok, axis=1), 0)

    return BatchDecodeResult(
        code=code,
        received=llrs,
        decisions=decisions,
        path_metrics=pm_sorted,
        gradients=grad,
        bit_llrs=bit_llr,
        crc_ok=crc_ok,
        chosen=chosen,
        pm_history=pm_history,
    )


def scl_decode(
    code: PolarCode,
    llrs: np.ndarray,
    list_size: int = 1,
    flips=None,
    min_sum: bool = False,
) -> DecoderState:
    """Decode one frame; `flips` is an iterable of free-bit indices."""
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape != (code.n_bits,):
        raise ValueError(f"expected {code.n_bits} LLRs, got {llrs.shape}")
    positions = validate_flips(code, flips)
    mask = None
    if positions.size:
        mask = np.zeros((1, code.n_bits), dtype=bool)
        mask[0, positions] = True
    result = scl_decode_batch(code, llrs[None, :], list_size, mask, min_sum=min_sum)
    return result.frame_state(0)


def sc_decode(code: PolarCode, llrs: np.ndarray, flips=None, min_sum: bool = False) -> DecoderState:
    """Successive-cancellation decode: the list-size-1 special case."""
    return scl_decode(code, llrs, list_size=1, flips=flips, min_sum=min_sum)


def first_divergence(state: DecoderState, true_u: np.ndarray) -> int | None:
    """Smallest free index where the chosen trajectory departs from `true_u`."""
    true_u = np.asarray(true_u, dtype=np.int8)
    if true_u.shape != (state.code.n_bits,):
        raise ValueError("true_u length must match the code")
    free = state.code.free_positions
    diff = state.chosen.hard_decisions[free] != true_u[free]
    hits = np.flatnonzero(diff)
    return int(free[hits[0]]) if hits.size else None
