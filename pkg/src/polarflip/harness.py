"""Monte-Carlo experiment drivers.

Frames are simulated in fixed-size blocks; each frame draws its message
and noise from an RNG keyed by (seed, frame_id), and stop rules are
evaluated only at block boundaries.  Counters are integers summed over
frames, so results are byte-identical for any worker count.

Attempt accounting: frames whose standard decode fails CRC enter flip
decoding.  Such a frame contributes one attempt if the multi-bit flip
succeeds and otherwise its number of Phase-II trials, which makes the
average attempt count satisfy t_avg = beta1 + omega2_avg * (1 - beta1)
exactly on the run's own counters.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelConfig, frame_rng
from .dataset import KIND_FDNC, KIND_FVDNC, DatasetHeader, TrainingRecord
from .decoder import scl_decode, scl_decode_batch
from .flip import decode_two_phase, encode_state, lsd_flip_vector
from .polar import PolarCode, expand_payload, polar_transform
from .scorers import (
    ConstantValidator,
    ExternalScorer,
    GenieContext,
    GenieScorer,
    HeuristicScorer,
    NeuralFlipScorer,
    NeuralFlipValidator,
    load_model_bundle,
)

BLOCK_FRAMES = 2048
DECODE_BATCH = 256
FV_LABEL_COUNT = 5
FV_RANDOM_FLIPS = 5

DECODER_SC = "sc"
DECODER_SCL = "scl"
DECODER_SCF = "dnc-scf"
DECODER_SCLF = "dnc-sclf"


@dataclass(frozen=True)
class DecoderConfig:
    """Everything a worker needs to decode one frame."""

    kind: str = DECODER_SCL
    list_size: int = 4
    omega: int = 5
    shape_p: float = 0.8
    alpha: float = 0.03
    scorer: str = "genie"
    fv: str = "continue"
    min_sum: bool = False
    genie_direct: bool = False

    def __post_init__(self) -> None:
        if self.kind not in (DECODER_SC, DECODER_SCL, DECODER_SCF, DECODER_SCLF):
            raise ValueError(f"unknown decoder kind {self.kind!r}")
        if self.list_size < 1:
            raise ValueError("list size must be >= 1")
        if self.two_phase:
            if self.omega < 1:
                raise ValueError("flip decoding needs omega >= 1")
            if not 0.0 < self.shape_p < 1.0:
                raise ValueError("shape_p must lie in (0,1)")
            if not self.scorer:
                raise ValueError(f"{self.kind} requires a flip scorer")

    @property
    def two_phase(self) -> bool:
        return self.kind in (DECODER_SCF, DECODER_SCLF)

    @property
    def effective_list(self) -> int:
        return 1 if self.kind in (DECODER_SC, DECODER_SCF) else self.list_size

    @property
    def max_attempts(self) -> int:
        return 2 + self.omega if self.two_phase else 1


class _ScorerFactory:
    """Builds scorer pairs per worker (models loaded once, adapters shared)."""

    def __init__(self, code: PolarCode, config: DecoderConfig):
        self.code = code
        self.config = config
        self._flip_shared = None
        self._fv_shared = None
        spec = config.scorer
        if spec == "heuristic":
            self._flip_shared = HeuristicScorer(code, config.omega, config.shape_p)
        elif spec.startswith("model:"):
            bundle = load_model_bundle(spec.split(":", 1)[1])
            self._flip_shared = NeuralFlipScorer(code, bundle)
        elif spec.startswith("external:"):
            adapter = ExternalScorer(code, spec.split(":", 1)[1])
            self._flip_shared = adapter
            if config.fv == "external":
                self._fv_shared = adapter
        elif spec != "genie":
            raise ValueError(f"unknown scorer spec {spec!r}")
        fv = config.fv
        if self._fv_shared is None:
            if fv == "continue":
                self._fv_shared = ConstantValidator()
            elif fv.startswith("model:"):
                bundle = load_model_bundle(fv.split(":", 1)[1])
                self._fv_shared = NeuralFlipValidator(self.code, bundle)
            elif fv.startswith("external:"):
                self._fv_shared = ExternalScorer(code, fv.split(":", 1)[1])
            elif fv == "external":
                raise ValueError("fv 'external' is only valid with an external flip scorer")
            else:
                raise ValueError(f"unknown flip-validate spec {fv!r}")

    def for_frame(self, llrs: np.ndarray, true_u: np.ndarray | None):
        if self.config.scorer == "genie":
            if true_u is None:
                raise ValueError("genie scorer needs the transmitted sequence")
            flip = GenieScorer(
                self.code,
                llrs,
                GenieContext(true_u, max_labels=self.config.omega),
                list_size=self.config.effective_list,
                shape_p=self.config.shape_p,
                min_sum=self.config.min_sum,
                direct=self.config.genie_direct,
            )
        else:
            flip = self._flip_shared
        return flip, self._fv_shared

    def close(self) -> None:
        for shared in (self._flip_shared, self._fv_shared):
            if isinstance(shared, ExternalScorer):
                shared.close()


_FACTORIES: dict[tuple, _ScorerFactory] = {}


def _factory(code: PolarCode, config: DecoderConfig) -> _ScorerFactory:
    key = (code.digest(), config)
    if key not in _FACTORIES:
        _FACTORIES[key] = _ScorerFactory(code, config)
    return _FACTORIES[key]


def _gen_frames(code: PolarCode, snr_db: float, seed: int, lo: int, hi: int):
    """Deterministic per-frame messages, true input vectors, and LLR frames.

    Draw order per frame (message bits, then noise) matches `transmit`;
    encoding is batched afterwards for speed.
    """
    channel = ChannelConfig(snr_db=snr_db, seed=seed)
    sigma_sq = channel.noise_variance(code.rate)
    count = hi - lo
    msgs = np.empty((count, code.k_info), dtype=np.int8)
    noise = np.empty((count, code.n_bits))
    for j, fid in enumerate(range(lo, hi)):
        rng = frame_rng(seed, fid)
        msgs[j] = rng.integers(0, 2, size=code.k_info, dtype=np.int8)
        noise[j] = rng.normal(0.0, np.sqrt(sigma_sq), size=code.n_bits)
    true_u = expand_payload(code, code.crc.attach(msgs))
    symbols = 1.0 - 2.0 * polar_transform(true_u).astype(float)
    llrs = 2.0 * (symbols + noise) / sigma_sq
    return msgs, true_u, llrs


@dataclass
class SnrPoint:
    """Per-SNR counters plus the statistics derived from them."""

    snr_db: float
    frames: int = 0
    frame_errors: int = 0
    bit_errors: int = 0
    flip_frames: int = 0
    phase1_successes: int = 0
    phase2_attempt_sum: int = 0
    max_attempts_seen: int = 0
    attempt_hist: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def merge(self, other: "SnrPoint") -> None:
        self.frames += other.frames
        self.frame_errors += other.frame_errors
        self.bit_errors += other.bit_errors
        self.flip_frames += other.flip_frames
        self.phase1_successes += other.phase1_successes
        self.phase2_attempt_sum += other.phase2_attempt_sum
        self.max_attempts_seen = max(self.max_attempts_seen, other.max_attempts_seen)
        if self.attempt_hist.size < other.attempt_hist.size:
            grown = np.zeros(other.attempt_hist.size, dtype=np.int64)
            grown[: self.attempt_hist.size] = self.attempt_hist
            self.attempt_hist = grown
        self.attempt_hist[: other.attempt_hist.size] += other.attempt_hist

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames if self.frames else 0.0

    def ber(self, k_info: int) -> float:
        return self.bit_errors / (self.frames * k_info) if self.frames else 0.0

    @property
    def fer_ci95(self) -> float:
        if not self.frames:
            return 0.0
        p = self.fer
        return 1.96 * np.sqrt(max(p * (1.0 - p), 0.0) / self.frames)

    @property
    def beta1(self) -> float:
        return self.phase1_successes / self.flip_frames if self.flip_frames else 0.0

    @property
    def omega2_avg(self) -> float:
        denom = self.flip_frames - self.phase1_successes
        return self.phase2_attempt_sum / denom if denom else 0.0

    @property
    def t_avg(self) -> float:
        if not self.flip_frames:
            return 0.0
        return (self.phase1_successes + self.phase2_attempt_sum) / self.flip_frames

    def eq5_residual(self) -> float:
        return abs(self.t_avg - (self.beta1 + self.omega2_avg * (1.0 - self.beta1)))


def _fer_block(args) -> SnrPoint:
    code, config, snr_db, seed, lo, hi = args
    point = SnrPoint(snr_db=snr_db, attempt_hist=np.zeros(config.max_attempts + 1, dtype=np.int64))
    factory = _factory(code, config) if config.two_phase else None
    for start in range(lo, hi, DECODE_BATCH):
        stop = min(start + DECODE_BATCH, hi)
        msgs, true_u, llrs = _gen_frames(code, snr_db, seed, start, stop)
        result = scl_decode_batch(code, llrs, config.effective_list, min_sum=config.min_sum)
        crc_ok = result.chosen_crc_ok()
        decoded = result.chosen_messages()
        attempts = np.ones(stop - start, dtype=np.int64)
        for b in np.flatnonzero(~crc_ok):
            if factory is None:
                continue
            flip, fv = factory.for_frame(llrs[b], true_u[b])
            bits, log = decode_two_phase(
                code,
                llrs[b],
                config.effective_list,
                flip,
                fv,
                alpha=config.alpha,
                min_sum=config.min_sum,
                initial_state=result.frame_state(b),
            )
            decoded[b] = bits
            attempts[b] = log.attempt_count
            point.flip_frames += 1
            point.phase1_successes += int(log.phase1_success)
            point.phase2_attempt_sum += log.phase2_attempts
        errors = np.any(decoded != msgs, axis=1)
        point.frames += stop - start
        point.frame_errors += int(errors.sum())
        point.bit_errors += int((decoded != msgs).sum())
        point.max_attempts_seen = max(point.max_attempts_seen, int(attempts.max()))
        if attempts.max() >= point.attempt_hist.size:
            raise AssertionError("attempt bound exceeded")
        point.attempt_hist += np.bincount(attempts, minlength=point.attempt_hist.size)
    return point


@dataclass
class ExperimentResult:
    code_digest: str
    config: DecoderConfig
    seed: int
    points: list[SnrPoint]
    k_info: int

    def to_table(self) -> str:
        lines = [
            "# polarflip fer-table v1",
            f"# code_digest={self.code_digest} seed={self.seed}",
            f"# decoder={self.config.kind} list_size={self.config.effective_list} "
            f"omega={self.config.omega} shape_p={self.config.shape_p} alpha={self.config.alpha} "
            f"scorer={self.config.scorer} fv={self.config.fv} min_sum={self.config.min_sum}",
            "# confidence: normal approximation, 95% half-width",
            "snr_db\tframes\tframe_errors\tbit_errors\tfer\tber\tfer_ci95\tt_avg\tbeta1\tomega2_avg\tmax_attempts\tattempt_hist",
        ]
        for p in self.points:
            hist = ",".join(str(int(v)) for v in p.attempt_hist[1:])
            lines.append(
                f"{p.snr_db:g}\t{p.frames}\t{p.frame_errors}\t{p.bit_errors}"
                f"\t{p.fer:.6g}\t{p.ber(self.k_info):.6g}\t{p.fer_ci95:.6g}"
                f"\t{p.t_avg:.6g}\t{p.beta1:.6g}\t{p.omega2_avg:.6g}"
                f"\t{p.max_attempts_seen}\t{hist}"
            )
        return "\n".join(lines) + "\n"


def _run_blocks(worker, job_args, threads: int, blocks: list[tuple[int, int]]):
    """Map a worker over frame ranges, serially or via a process pool."""
    jobs = [job_args + (lo, hi) for lo, hi in blocks]
    if threads <= 1 or len(jobs) == 1:
        return [worker(j) for j in jobs]
    with multiprocessing.get_context("fork").Pool(processes=threads) as pool:
        return pool.map(worker, jobs)


def _split_block(lo: int, hi: int, parts: int) -> list[tuple[int, int]]:
    edges = np.linspace(lo, hi, parts + 1, dtype=np.int64)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(parts) if edges[i] < edges[i + 1]]


def run_fer_sweep(
    code: PolarCode,
    config: DecoderConfig,
    snrs_db: list[float],
    min_errors: int = 100,
    max_frames: int = 10_000_000,
    seed: int = 0,
    threads: int = 1,
    block_frames: int = BLOCK_FRAMES,
) -> ExperimentResult:
    """Frame/bit error rates per SNR until `min_errors` or the frame cap.

    Stop rules are evaluated every `block_frames` frames; the block size is
    part of the run's reproducibility surface (it fixes the frame count).
    """
    points = []
    try:
        for snr_db in snrs_db:
            point = SnrPoint(snr_db=snr_db, attempt_hist=np.zeros(config.max_attempts + 1, dtype=np.int64))
            frames = 0
            while frames < max_frames and point.frame_errors < min_errors:
                block_hi = min(frames + block_frames, max_frames)
                blocks = _split_block(frames, block_hi, max(threads, 1))
                for part in _run_blocks(_fer_block, (code, config, snr_db, seed), threads, blocks):
                    point.merge(part)
                frames = block_hi
            if point.eq5_residual() > 1.0 / max(point.frames, 1):
                raise AssertionError("attempt-accounting identity violated")
            if point.max_attempts_seen > config.max_attempts:
                raise AssertionError("attempt bound violated")
            points.append(point)
    except KeyboardInterrupt:
        # flush whatever finished; completed SNR points stay usable
        pass
    return ExperimentResult(code.digest(), config, seed, points, code.k_info)


# --------------------------------------------------------------------------- identification accuracy


def _accuracy_block(args) -> dict:
    code, config, snr_db, seed, k_max, lo, hi = args
    hits = np.zeros(k_max, dtype=np.int64)
    denom = np.zeros(k_max, dtype=np.int64)
    error_frames = 0
    factory = _factory(code, config)
    for start in range(lo, hi, DECODE_BATCH):
        stop = min(start + DECODE_BATCH, hi)
        _, true_u, llrs = _gen_frames(code, snr_db, seed, start, stop)
        result = scl_decode_batch(code, llrs, config.effective_list, min_sum=config.min_sum)
        for b in np.flatnonzero(~result.chosen_crc_ok()):
            error_frames += 1
            genie = GenieScorer(
                code,
                llrs[b],
                GenieContext(true_u[b], max_labels=k_max),
                list_size=config.effective_list,
                min_sum=config.min_sum,
            )
            labels = genie.labels()
            flip, _ = factory.for_frame(llrs[b], true_u[b])
            plan = flip.score_flips(encode_state(result.frame_state(b)))
            for j in range(min(len(labels), k_max)):
                denom[j] += 1
                if j < plan.omega:
                    hits[j] += int(plan.positions[j] == labels[j])
    return {"hits": hits, "denom": denom, "error_frames": error_frames}


@dataclass
class AccuracyResult:
    snr_db: float
    k_max: int
    hits: np.ndarray
    denom: np.ndarray
    error_frames: int
    frames: int

    @property
    def rates(self) -> np.ndarray:
        return np.divide(self.hits, self.denom, out=np.zeros(self.k_max), where=self.denom > 0)

    def to_table(self) -> str:
        lines = [
            "# polarflip identification-accuracy v1",
            f"# snr_db={self.snr_db:g} frames={self.frames} error_frames={self.error_frames}",
            "rank\thits\tlabeled_frames\trate",
        ]
        for j in range(self.k_max):
            lines.append(f"{j + 1}\t{self.hits[j]}\t{self.denom[j]}\t{self.rates[j]:.6g}")
        return "\n".join(lines) + "\n"


def run_identification_accuracy(
    code: PolarCode,
    config: DecoderConfig,
    snr_db: float,
    k_max: int = 5,
    min_error_frames: int = 1000,
    max_frames: int = 1_000_000,
    seed: int = 0,
    threads: int = 1,
    block_frames: int = BLOCK_FRAMES,
) -> AccuracyResult:
    """Rank-j flip-position agreement with the iterative-genie labels.

    Rank j counts only frames that actually have a rank-j label; the genie
    scorer therefore measures 1.0 at every rank by construction.
    """
    hits = np.zeros(k_max, dtype=np.int64)
    denom = np.zeros(k_max, dtype=np.int64)
    error_frames = 0
    frames = 0
    while frames < max_frames and error_frames < min_error_frames:
        block_hi = min(frames + block_frames, max_frames)
        blocks = _split_block(frames, block_hi, max(threads, 1))
        for part in _run_blocks(_accuracy_block, (code, config, snr_db, seed, k_max), threads, blocks):
            hits += part["hits"]
            denom += part["denom"]
            error_frames += part["error_frames"]
        frames = block_hi
    return AccuracyResult(snr_db, k_max, hits, denom, error_frames, frames)


# --------------------------------------------------------------------------- training databases


def _fdnc_block(args) -> list[TrainingRecord]:
    code, config, snr_db, seed, cap, lo, hi = args
    records: list[TrainingRecord] = []
    for start in range(lo, hi, DECODE_BATCH):
        if len(records) >= cap:
            break
        stop = min(start + DECODE_BATCH, hi)
        _, true_u, llrs = _gen_frames(code, snr_db, seed, start, stop)
        result = scl_decode_batch(code, llrs, config.effective_list, min_sum=config.min_sum)
        for b in np.flatnonzero(~result.chosen_crc_ok()):
            if len(records) >= cap:
                break
            genie = GenieScorer(
                code,
                llrs[b],
                GenieContext(true_u[b], max_labels=config.omega),
                list_size=config.effective_list,
                min_sum=config.min_sum,
            )
            labels = genie.labels()
            if not labels:
                continue
            vf = lsd_flip_vector(labels, config.shape_p, code.n_bits).likelihoods
            state = encode_state(result.frame_state(b))
            records.append(
                TrainingRecord(
                    KIND_FDNC,
                    frame_id=start + int(b),
                    state=state.astype(np.float32),
                    target_vf=vf.astype(np.float32),
                )
            )
    return records


FV_WRONG_STREAM = 0xF5  # tags the wrong-flip RNG substream


def _fvdnc_block(args) -> list[TrainingRecord]:
    code, config, snr_db, seed, cap, lo, hi = args
    records: list[TrainingRecord] = []
    for start in range(lo, hi, DECODE_BATCH):
        if len(records) >= cap:
            break
        stop = min(start + DECODE_BATCH, hi)
        _, true_u, llrs = _gen_frames(code, snr_db, seed, start, stop)
        result = scl_decode_batch(code, llrs, config.effective_list, min_sum=config.min_sum)
        for b in np.flatnonzero(~result.chosen_crc_ok()):
            if len(records) >= cap:
                break
            frame_id = start + int(b)
            genie = GenieScorer(
                code,
                llrs[b],
                GenieContext(true_u[b], max_labels=FV_LABEL_COUNT),
                list_size=config.effective_list,
                min_sum=config.min_sum,
            )
            labels = genie.labels()
            if not labels:
                continue
            wrong_rng = np.random.default_rng(np.random.SeedSequence((seed, frame_id, FV_WRONG_STREAM)))
            pool = np.setdiff1d(code.free_positions, np.asarray(labels, dtype=np.int64))
            for j in range(1, len(labels) + 1):
                if len(records) >= cap:
                    break
                prefix = labels[:j]
                state = scl_decode(code, llrs[b], config.effective_list, flips=prefix, min_sum=config.min_sum)
                records.append(
                    TrainingRecord(
                        KIND_FVDNC,
                        frame_id=frame_id,
                        state=encode_state(state).astype(np.float32),
                        action="continue",
                    )
                )
                wrongs = wrong_rng.choice(pool, size=min(FV_RANDOM_FLIPS, pool.size), replace=False)
                for w in wrongs:
                    if len(records) >= cap:
                        break
                    trap = scl_decode(
                        code, llrs[b], config.effective_list, flips=prefix + [int(w)], min_sum=config.min_sum
                    )
                    records.append(
                        TrainingRecord(
                            KIND_FVDNC,
                            frame_id=frame_id,
                            state=encode_state(trap).astype(np.float32),
                            action="re-select",
                        )
                    )
    return records


def _generate_dataset(block_fn, code, config, channel, count, seed, threads, max_frames, block_frames):
    produced = 0
    frames = 0
    while produced < count and frames < max_frames:
        block_hi = min(frames + block_frames, max_frames)
        blocks = _split_block(frames, block_hi, max(threads, 1))
        batch: list[TrainingRecord] = []
        remaining = count - produced
        for part in _run_blocks(block_fn, (code, config, channel.snr_db, seed, remaining), threads, blocks):
            batch.extend(part)
        for record in batch:  # blocks arrive in frame order already
            if produced == count:
                break
            produced += 1
            yield record
        frames = block_hi


def generate_f_dnc_dataset(
    code: PolarCode,
    channel: ChannelConfig,
    count: int,
    omega: int = 5,
    shape_p: float = 0.8,
    list_size: int = 1,
    threads: int = 1,
    max_frames: int = 50_000_000,
    block_frames: int = BLOCK_FRAMES,
):
    """Stream (state, reference flip vector) pairs from CRC-failing frames."""
    kind = DECODER_SCF if list_size == 1 else DECODER_SCLF
    config = DecoderConfig(kind=kind, list_size=list_size, omega=omega, shape_p=shape_p, scorer="genie")
    yield from _generate_dataset(
        _fdnc_block, code, config, channel, count, channel.seed, threads, max_frames, block_frames
    )


def generate_fv_dnc_dataset(
    code: PolarCode,
    channel: ChannelConfig,
    count: int,
    list_size: int = 1,
    threads: int = 1,
    max_frames: int = 50_000_000,
    block_frames: int = BLOCK_FRAMES,
):
    """Stream flip-validate samples: cumulative correct flips (continue)
    and correct prefixes poisoned by one random wrong flip (re-select)."""
    kind = DECODER_SCF if list_size == 1 else DECODER_SCLF
    config = DecoderConfig(kind=kind, list_size=list_size, omega=FV_LABEL_COUNT, scorer="genie")
    yield from _generate_dataset(
        _fvdnc_block, code, config, channel, count, channel.seed, threads, max_frames, block_frames
    )


def dataset_header(
    code: PolarCode,
    kind: str,
    channel: ChannelConfig,
    list_size: int,
    omega: int,
    shape_p: float,
) -> DatasetHeader:
    return DatasetHeader(
        kind=kind,
        code_digest=code.digest(),
        n_bits=code.n_bits,
        k_info=code.k_info,
        crc_len=code.crc_len,
        list_size=list_size,
        omega=omega,
        shape_p=shape_p,
        snr_db=channel.snr_db,
        seed=channel.seed,
        record_count=0,
        state_len=(list_size + 1) * code.n_bits,
    )
