"""Independent reference implementations used only by the tests.

Everything here is deliberately written against the textbook definitions
(recursive bit-LLR evaluation, GF(2) generator matrices, high-precision
kernel formulas) rather than sharing code with the package, so the tests
are a genuine second route to the same answers.
"""

from __future__ import annotations

import mpmath as mp
import numpy as np

mp.mp.dps = 50


def kron_generator(n_bits: int) -> np.ndarray:
    """Generator matrix as an explicit Kronecker power of [[1,0],[1,1]]."""
    gen = np.array([[1]], dtype=np.int8)
    kernel = np.array([[1, 0], [1, 1]], dtype=np.int8)
    while gen.shape[0] < n_bits:
        gen = np.kron(gen, kernel)
    return gen


def matrix_encode(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.int8)
    return (u @ kron_generator(u.shape[-1])) % 2


def boxplus_hp(a, b) -> mp.mpf:
    """Exact boxplus at 50 decimal digits."""
    a, b = mp.mpf(float(a)), mp.mpf(float(b))
    return 2 * mp.atanh(mp.tanh(a / 2) * mp.tanh(b / 2))


def pm_increment_hp(bit_llr, decision) -> mp.mpf:
    llr = mp.mpf(float(bit_llr))
    return mp.log(1 + mp.e ** (-(1 - 2 * int(decision)) * llr))


def bec_bhattacharyya(n_bits: int, erasure: float = 0.5) -> np.ndarray:
    """Bhattacharyya parameters of the synthetic channels over a BEC.

    Natural bit order: the most significant address bit selects the
    degraded (upper) branch.  Smaller is more reliable.
    """
    z = np.array([erasure])
    while len(z) < n_bits:
        upper = 2 * z - z**2
        lower = z**2
        z = np.stack([upper, lower], axis=1).reshape(-1)
    return z


def ref_bit_llr(llrs, prefix_bits) -> mp.mpf:
    """Decision LLR for bit len(prefix_bits), straight from the recursion."""
    llrs = [mp.mpf(float(v)) for v in np.asarray(llrs, dtype=float)]
    return _ref_bit_llr(llrs, [int(b) for b in prefix_bits])


def _ref_bit_llr(llrs: list, prefix: list) -> mp.mpf:
    n = len(llrs)
    if n == 1:
        return llrs[0]
    half = n // 2
    if len(prefix) < half:
        sub = [2 * mp.atanh(mp.tanh(llrs[j] / 2) * mp.tanh(llrs[j + half] / 2)) for j in range(half)]
        return _ref_bit_llr(sub, prefix)
    left_cw = matrix_encode(np.array(prefix[:half], dtype=np.int8))
    sub = [llrs[j + half] + (1 - 2 * int(left_cw[j])) * llrs[j] for j in range(half)]
    return _ref_bit_llr(sub, prefix[half:])


def ref_sc(code, llrs, flips=()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference SC decode: (decisions, gradient trace, bit LLR trace)."""
    flips = set(int(f) for f in np.atleast_1d(np.asarray(flips, dtype=int))) if len(np.atleast_1d(flips)) else set()
    decisions: list[int] = []
    grads = np.zeros(code.n_bits)
    traces = np.zeros(code.n_bits)
    for i in range(code.n_bits):
        llr = ref_bit_llr(llrs, decisions)
        if code.frozen_mask[i]:
            bit = 0
        else:
            bit = 0 if llr >= 0 else 1
            if i in flips:
                bit ^= 1
        grads[i] = float(pm_increment_hp(llr, bit))
        traces[i] = float(llr)
        decisions.append(bit)
    return np.array(decisions, dtype=np.int8), grads, traces


def ref_scl(code, llrs, list_size: int, with_history: bool = False):
    """Reference SCL via explicit path enumeration.

    Keeps the `list_size` lowest-PM prefixes, candidate order (parent slot,
    decision 0 first) breaking PM ties, and returns the survivors ordered
    by final PM with the same stable rule.  Each entry is
    (decisions array, pm float, per-bit increments, per-bit llrs).  With
    `with_history`, also returns the per-bit survivor PM lists in their
    post-selection order.
    """
    paths = [([], mp.mpf(0), [], [])]
    history = []
    for i in range(code.n_bits):
        candidates = []
        for slot, (bits, pm, incs, traces) in enumerate(paths):
            llr = _ref_bit_llr([mp.mpf(float(v)) for v in llrs], bits)
            options = (0,) if code.frozen_mask[i] else (0, 1)
            for dec in options:
                inc = pm_increment_hp(llr, dec)
                candidates.append(
                    (pm + inc, 2 * slot + dec, bits + [dec], incs + [inc], traces + [llr])
                )
        if code.frozen_mask[i] or len(candidates) <= list_size:
            candidates.sort(key=lambda c: c[1])  # growth keeps candidate order
        else:
            candidates.sort(key=lambda c: (c[0], c[1]))
        paths = [(bits, pm, incs, traces) for pm, _, bits, incs, traces in candidates[:list_size]]
        history.append([float(c[0]) for c in candidates[:list_size]])
    out = []
    for bits, pm, incs, traces in paths:
        out.append(
            (
                np.array(bits, dtype=np.int8),
                float(pm),
                np.array([float(v) for v in incs]),
                np.array([float(v) for v in traces]),
            )
        )
    out.sort(key=lambda entry: entry[1])
    return (out, history) if with_history else out


def ml_codebook(code) -> tuple[np.ndarray, np.ndarray]:
    """All valid (message, codeword) pairs by exhaustive enumeration."""
    k = code.k_info
    msgs = ((np.arange(2**k)[:, None] >> np.arange(k)[::-1]) & 1).astype(np.int8)
    payloads = code.crc.attach(msgs)
    u = np.zeros((2**k, code.n_bits), dtype=np.int8)
    u[:, ~code.frozen_mask] = payloads
    return msgs, matrix_encode(u)


def ml_decode(code, llrs, codebook=None) -> np.ndarray:
    """Maximum-likelihood message by correlation over the codebook."""
    msgs, codewords = codebook if codebook is not None else ml_codebook(code)
    metric = (1 - 2 * codewords.astype(float)) @ np.asarray(llrs, dtype=float)
    return msgs[int(np.argmax(metric))]
