"""Photon-level Monte Carlo of the pulse-train interference measurement.

The sender encodes one phase bit per pulse on an L-pulse weak coherent
train; the receiver interferes the attenuated train with a local
plain-phase reference on a balanced beam splitter and watches two
threshold detectors. With per-slot signal and reference intensities
``mu_s`` and ``mu_r``, overall-phase difference ``dtheta``, visibility
``V``, detector efficiency ``eta`` and dark mean ``dark`` per slot, the
detector intensities at slot i are

    lam_C(i) = eta*((mu_s + mu_r)/2 + V*sqrt(mu_s*mu_r)*(-1)**s_i*cos(dtheta)) + dark
    lam_D(i) = eta*((mu_s + mu_r)/2 - V*sqrt(mu_s*mu_r)*(-1)**s_i*cos(dtheta)) + dark

Counts are Poissonian per slot per detector; a threshold click is a
count of at least one. Overall phases are independent uniform per block
(block mode) or per segment of a continuous train (train mode, for
re-blocking studies). A separate exact small-photon-number mode tracks
ground-truth photon placements for sub-two-photon blocks.

All randomness flows from one 64-bit seed through counter-based streams
keyed by (seed, stream id, chunk index), so results never depend on
simulation order and any block can be regenerated in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "DETECTOR_C",
    "DETECTOR_D",
    "DETECTOR_NAMES",
    "ExperimentConfig",
    "PulseBlock",
    "DetectionEvent",
    "EventRecord",
    "FockRecord",
    "click_intensities",
    "emit_block",
    "interfere_and_detect",
    "simulate_block",
    "simulate_run",
    "emit_train",
    "simulate_fock_run",
]

DETECTOR_C = 0
DETECTOR_D = 1
DETECTOR_NAMES = ("C", "D")

# stream ids for (seed, stream, *index) keying; sift pair choice uses its
# own integer-mix domain in sift.py, not a stream here
_STREAM_BLOCKS = 1
_STREAM_TRAIN = 2
_STREAM_SEGMENT = 3
_STREAM_FOCK = 4

_TRAIN_CHUNK_SLOTS = 1 << 20
_FOCK_CHUNK_BLOCKS = 4096
_MAX_SEED = (1 << 64) - 1


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """Physical and run parameters of one simulated experiment.

    Intensities are mean photon numbers per pulse. ``reference_mode``
    selects the local reference intensity: "fixed" uses ``mu_bob`` as
    given, "matched" copies the received signal intensity (useful for
    interference-visibility studies). Defaults mirror a 500 MHz system
    with 14 % efficient detectors, 500 Hz dark counts and 80 ns dead
    time on standard 0.2 dB/km fiber.
    """

    L: int = 8192
    mu_alice: float = 0.004
    reference_mode: str = "fixed"
    mu_bob: float = 0.004
    distance_km: float = 0.0
    loss_db_per_km: float = 0.2
    detector_efficiency: float = 0.14
    dark_rate_hz: float = 500.0
    dead_time_ns: float = 80.0
    slot_period_ns: float = 2.0
    visibility: float = 1.0
    seed: int = 0
    blocks_to_emit: int = 1

    def __post_init__(self):
        if not 3 <= self.L <= 1 << 20:
            raise ValueError(f"L must be in [3, 2**20], got {self.L}")
        for name in ("mu_alice", "mu_bob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.reference_mode not in ("fixed", "matched"):
            raise ValueError(
                f"reference_mode must be 'fixed' or 'matched', got {self.reference_mode!r}"
            )
        if self.distance_km < 0.0 or self.loss_db_per_km < 0.0:
            raise ValueError("distance_km and loss_db_per_km must be >= 0")
        if not 0.0 <= self.detector_efficiency <= 1.0:
            raise ValueError(
                f"detector_efficiency must be in [0, 1], got {self.detector_efficiency}"
            )
        if self.dark_rate_hz < 0.0 or self.dead_time_ns < 0.0:
            raise ValueError("dark_rate_hz and dead_time_ns must be >= 0")
        if self.slot_period_ns <= 0.0:
            raise ValueError(f"slot_period_ns must be > 0, got {self.slot_period_ns}")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility must be in [0, 1], got {self.visibility}")
        if not 0 <= self.seed <= _MAX_SEED:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.blocks_to_emit < 0:
            raise ValueError(f"blocks_to_emit must be >= 0, got {self.blocks_to_emit}")

    @property
    def transmittance(self) -> float:
        """Channel power transmittance 10**(-loss*d/10)."""
        return 10.0 ** (-self.loss_db_per_km * self.distance_km / 10.0)

    @property
    def mu_signal(self) -> float:
        """Signal mean photon number per pulse at the receiver's input."""
        return self.mu_alice * self.transmittance

    @property
    def mu_reference(self) -> float:
        if self.reference_mode == "matched":
            return self.mu_signal
        return self.mu_bob

    @property
    def dark_mean_per_slot(self) -> float:
        return self.dark_rate_hz * self.slot_period_ns * 1e-9

    @property
    def dead_window_slots(self) -> int:
        return math.ceil(self.dead_time_ns / self.slot_period_ns)


@dataclass(frozen=True, slots=True)
class PulseBlock:
    """One L-pulse train of a single party.

    ``phases`` holds the per-pulse phase bits (0 or 1, i.e. phase 0 or
    pi); the plain reference train is all zeros. ``amplitude_scale`` is
    the square root of the per-pulse mean photon number at the beam
    splitter.
    """

    phases: np.ndarray
    amplitude_scale: float
    overall_phase: float

    def __post_init__(self):
        if self.phases.ndim != 1 or self.phases.size < 3:
            raise ValueError("phases must be a 1-d array of length >= 3")
        if self.amplitude_scale < 0.0:
            raise ValueError(f"amplitude_scale must be >= 0, got {self.amplitude_scale}")

    @property
    def L(self) -> int:
        return int(self.phases.size)

    @property
    def mean_photons_per_pulse(self) -> float:
        return self.amplitude_scale ** 2


class DetectionEvent(NamedTuple):
    """One click: block id, slot within the block, detector code."""

    block: int
    slot: int
    detector: int


@dataclass(frozen=True, slots=True)
class EventRecord:
    """Compact click record of a simulated run.

    ``abs_slots`` are absolute slot indices (block*L + slot for block
    runs), sorted lexicographically by (slot, detector). ``phases`` is
    the full per-slot phase-bit array packed with np.packbits; bit
    position ``abs_slot - slot_origin`` holds the sender's phase bit of
    that slot. ``counts_c``/``counts_d`` are total Poisson counts per
    detector (clicks collapse multi-counts, so these exceed the event
    counts slightly); they feed conservation diagnostics.
    """

    n_slots: int
    slot_origin: int
    abs_slots: np.ndarray
    detectors: np.ndarray
    phases: np.ndarray
    counts_c: int
    counts_d: int

    @property
    def n_events(self) -> int:
        return int(self.abs_slots.size)


@dataclass(frozen=True, slots=True)
class FockRecord:
    """Exact-mode run record with photon-number ground truth.

    ``n_alice``/``n_bob`` are the photon numbers that reached the beam
    splitter per block; blocks with more than two photons in total are
    skipped (no events, counted in ``skipped_multiphoton``).
    ``pair_distinct`` flags blocks where exactly one photon per party
    landed on two distinct slots, the deterministic-outcome subspace.
    """

    events: EventRecord
    n_alice: np.ndarray
    n_bob: np.ndarray
    pair_distinct: np.ndarray
    skipped_multiphoton: int


def _generator(seed: int, stream: int, *index: int) -> np.random.Generator:
    # counter-based keying; identical (seed, stream, index) gives an
    # identical stream regardless of what else was simulated before
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=(seed, stream, *index)))
    )


def _poisson_kmax(lam_max: float) -> int:
    # truncation point with per-cell excess probability far below 1e-12
    return min(250, max(4, int(lam_max + 10.0 * math.sqrt(lam_max) + 10.0)))


def counts_from_uniforms(lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Poisson counts via inverse transform, one uniform per cell.

    Fixed consumption (exactly one uniform per count) keeps stream
    layouts deterministic. Counts are truncated at a mean-dependent
    cutoff whose excess probability is below 1e-12 per cell; the click
    indicator (count >= 1) is exact.
    """
    lam = np.asarray(lam, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    p0 = np.exp(-lam)
    counts = np.zeros(lam.shape, dtype=np.uint8)
    hit = u >= p0  # count >= 1; refine only these cells
    if not np.any(hit):
        return counts
    idx = np.nonzero(hit)
    lam_h = lam[idx]
    u_h = u[idx]
    cdf = p0[idx]
    term = cdf.copy()
    c = np.ones(lam_h.shape, dtype=np.uint8)
    for k in range(1, _poisson_kmax(float(lam_h.max())) + 1):
        term = term * lam_h / k
        cdf = cdf + term
        c += (u_h >= cdf).astype(np.uint8)
    counts[idx] = c
    return counts


def click_intensities(
    phases: np.ndarray,
    mu_s: float,
    mu_r: float,
    dtheta: np.ndarray | float,
    cfg: ExperimentConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot detector intensities for given phase bits and dtheta.

    ``phases`` and ``dtheta`` broadcast against each other (e.g. phases
    (B, L) with dtheta (B, 1), or both shaped (S,) for a continuous
    train). Raises on a negative intensity, which can only arise from a
    broken visibility or NaN input; exact cancellations at V = 1 are
    clipped to zero.
    """
    eta = cfg.detector_efficiency
    base = eta * (mu_s + mu_r) / 2.0 + cfg.dark_mean_per_slot
    amp = eta * cfg.visibility * math.sqrt(mu_s * mu_r)
    interf = amp * np.cos(np.asarray(dtheta, dtype=np.float64))
    sign = 1.0 - 2.0 * np.asarray(phases, dtype=np.float64)
    lam_c = base + interf * sign
    lam_d = base - interf * sign
    tol = -1e-12 * (base + amp + 1.0)
    if lam_c.min(initial=0.0) < tol or lam_d.min(initial=0.0) < tol:
        raise RuntimeError("negative detector intensity; check visibility inputs")
    return np.maximum(lam_c, 0.0), np.maximum(lam_d, 0.0)


def emit_block(
    cfg: ExperimentConfig, rng: np.random.Generator
) -> tuple[PulseBlock, PulseBlock]:
    """Draw one signal block (as received) and the local reference.

    Sender phase bits are i.i.d. uniform; both overall phases are
    independent uniform on [0, 2*pi). The signal amplitude carries the
    channel attenuation; the reference follows ``reference_mode``.
    Consumes exactly L + 2 uniforms in a pinned order.
    """
    u = rng.random(cfg.L + 2)
    phases = (u[: cfg.L] < 0.5).astype(np.uint8)
    theta_a = 2.0 * math.pi * u[cfg.L]
    theta_b = 2.0 * math.pi * u[cfg.L + 1]
    signal = PulseBlock(phases, math.sqrt(cfg.mu_signal), theta_a)
    reference = PulseBlock(
        np.zeros(cfg.L, dtype=np.uint8), math.sqrt(cfg.mu_reference), theta_b
    )
    return signal, reference


def interfere_and_detect(
    signal: PulseBlock,
    reference: PulseBlock,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    block_id: int = 0,
    return_counts: bool = False,
):
    """Interfere two blocks and sample threshold-detector clicks.

    Returns the DetectionEvent list sorted by (slot, detector); with
    ``return_counts`` also the two per-slot Poisson count arrays.
    Consumes exactly 2 L uniforms (detector C's slots, then D's).
    """
    if signal.L != reference.L:
        raise ValueError(f"block sizes differ: {signal.L} vs {reference.L}")
    L = signal.L
    rel = np.bitwise_xor(signal.phases, reference.phases)
    dtheta = signal.overall_phase - reference.overall_phase
    lam_c, lam_d = click_intensities(
        rel, signal.mean_photons_per_pulse, reference.mean_photons_per_pulse,
        dtheta, cfg,
    )
    counts_c = counts_from_uniforms(lam_c, rng.random(L))
    counts_d = counts_from_uniforms(lam_d, rng.random(L))
    slots_c = np.nonzero(counts_c)[0]
    slots_d = np.nonzero(counts_d)[0]
    slots = np.concatenate([slots_c, slots_d])
    dets = np.concatenate(
        [np.zeros(slots_c.size, np.uint8), np.ones(slots_d.size, np.uint8)]
    )
    order = np.lexsort((dets, slots))
    events = [
        DetectionEvent(block_id, int(slots[o]), int(dets[o])) for o in order
    ]
    if return_counts:
        return events, counts_c, counts_d
    return events


def _blocks_per_chunk(L: int) -> int:
    # multiple of 8 so each chunk's phase bits pack to whole bytes
    return min(4096, max(8, ((1 << 22) // (3 * L + 2)) & ~7))


def _block_chunk(cfg: ExperimentConfig, chunk_idx: int, n_blocks: int):
    """Simulate one chunk of blocks from its keyed stream.

    Layout per chunk, one bulk draw of shape (B, 3L+2): columns [0, L)
    phase-bit uniforms, column L theta_A, column L+1 theta_B, then L
    uniforms for detector C counts and L for detector D. The chunk is
    always generated in full so block content never depends on how many
    blocks a run requested.
    """
    L = cfg.L
    B = _blocks_per_chunk(L)
    g = _generator(cfg.seed, _STREAM_BLOCKS, chunk_idx)
    u = g.random((B, 3 * L + 2))
    phases = (u[:, :L] < 0.5).astype(np.uint8)
    dtheta = 2.0 * math.pi * (u[:, L] - u[:, L + 1])
    lam_c, lam_d = click_intensities(
        phases, cfg.mu_signal, cfg.mu_reference, dtheta[:, None], cfg
    )
    counts_c = counts_from_uniforms(lam_c, u[:, L + 2 : 2 * L + 2])
    counts_d = counts_from_uniforms(lam_d, u[:, 2 * L + 2 :])
    return phases[:n_blocks], counts_c[:n_blocks], counts_d[:n_blocks]


def _compact_chunk(counts_c, counts_d, first_abs_slot: int, L: int):
    """Click arrays of one chunk -> (abs_slots, detectors) sorted."""
    bc, sc = np.nonzero(counts_c)
    bd, sd = np.nonzero(counts_d)
    abs_c = first_abs_slot + bc.astype(np.int64) * L + sc
    abs_d = first_abs_slot + bd.astype(np.int64) * L + sd
    slots = np.concatenate([abs_c, abs_d])
    dets = np.concatenate(
        [np.zeros(abs_c.size, np.uint8), np.ones(abs_d.size, np.uint8)]
    )
    order = np.lexsort((dets, slots))
    return slots[order], dets[order]


def simulate_run(
    cfg: ExperimentConfig, n_blocks: int | None = None, first_block: int = 0
) -> EventRecord:
    """Simulate a range of blocks and return their click record.

    Blocks [first_block, first_block + n_blocks) are generated from
    per-chunk keyed streams, so disjoint ranges can be simulated
    concurrently and merged by block order (records pack phase bits from
    their own slot_origin).
    """
    if n_blocks is None:
        n_blocks = cfg.blocks_to_emit
    if n_blocks < 0:
        raise ValueError(f"n_blocks must be >= 0, got {n_blocks}")
    L = cfg.L
    B = _blocks_per_chunk(L)
    slot_parts, det_parts, phase_parts = [], [], []
    pending_bits = np.empty(0, np.uint8)
    counts_c_total = 0
    counts_d_total = 0
    block = first_block
    end = first_block + n_blocks
    while block < end:
        chunk_idx = block // B
        offset = block - chunk_idx * B
        take = min(end - block, B - offset)
        phases, counts_c, counts_d = _block_chunk(cfg, chunk_idx, offset + take)
        phases = phases[offset:]
        counts_c = counts_c[offset:]
        counts_d = counts_d[offset:]
        slots, dets = _compact_chunk(counts_c, counts_d, block * L, L)
        slot_parts.append(slots)
        det_parts.append(dets)
        # pack whole bytes only; carry the ragged tail into the next part
        bits = phases.reshape(-1)
        if pending_bits.size:
            bits = np.concatenate([pending_bits, bits])
        n_pack = bits.size & ~7
        phase_parts.append(np.packbits(bits[:n_pack]))
        pending_bits = bits[n_pack:]
        counts_c_total += int(counts_c.sum())
        counts_d_total += int(counts_d.sum())
        block += take
    if pending_bits.size:
        phase_parts.append(np.packbits(pending_bits))
    if slot_parts:
        abs_slots = np.concatenate(slot_parts)
        detectors = np.concatenate(det_parts)
        phases_packed = np.concatenate(phase_parts)
    else:
        abs_slots = np.empty(0, np.int64)
        detectors = np.empty(0, np.uint8)
        phases_packed = np.empty(0, np.uint8)
    return EventRecord(
        n_slots=n_blocks * L,
        slot_origin=first_block * L,
        abs_slots=abs_slots,
        detectors=detectors,
        phases=phases_packed,
        counts_c=counts_c_total,
        counts_d=counts_d_total,
    )


def simulate_block(cfg: ExperimentConfig, block_id: int):
    """Regenerate one block: (events, phase bits).

    Bit-identical to the same block inside any simulate_run covering it.
    """
    record = simulate_run(cfg, n_blocks=1, first_block=block_id)
    events = [
        DetectionEvent(block_id, int(s - block_id * cfg.L), int(d))
        for s, d in zip(record.abs_slots, record.detectors)
    ]
    phases = np.unpackbits(record.phases)[: cfg.L].astype(np.uint8)
    return events, phases


def emit_train(
    cfg: ExperimentConfig,
    trial: int,
    n_slots: int,
    segment_slots: int = _TRAIN_CHUNK_SLOTS,
) -> EventRecord:
    """Simulate a continuous pulse train with no block structure.

    Phase bits are i.i.d. per slot; the overall-phase difference is
    redrawn every ``segment_slots`` slots (laser coherence segments), so
    one train supports re-blocking at any L. Trains are keyed by
    ``trial`` independently of block-mode streams.
    """
    if n_slots < 0:
        raise ValueError(f"n_slots must be >= 0, got {n_slots}")
    if segment_slots < 1:
        raise ValueError(f"segment_slots must be >= 1, got {segment_slots}")
    if trial < 0:
        raise ValueError(f"trial must be >= 0, got {trial}")
    S = _TRAIN_CHUNK_SLOTS
    slot_parts, det_parts, phase_parts = [], [], []
    pending_bits = np.empty(0, np.uint8)
    counts_c_total = 0
    counts_d_total = 0
    theta_cache: dict[int, float] = {}

    def dtheta_of(seg: int) -> float:
        if seg not in theta_cache:
            t = _generator(cfg.seed, _STREAM_SEGMENT, trial, seg).random(2)
            theta_cache[seg] = 2.0 * math.pi * (t[0] - t[1])
        return theta_cache[seg]

    for start in range(0, n_slots, S):
        take = min(S, n_slots - start)
        g = _generator(cfg.seed, _STREAM_TRAIN, trial, start // S)
        u = g.random((3, S))
        phases = (u[0, :take] < 0.5).astype(np.uint8)
        dtheta = np.empty(take, dtype=np.float64)
        seg_first = start // segment_slots
        seg_last = (start + take - 1) // segment_slots
        for seg in range(seg_first, seg_last + 1):
            lo = max(seg * segment_slots, start) - start
            hi = min((seg + 1) * segment_slots, start + take) - start
            dtheta[lo:hi] = dtheta_of(seg)
        lam_c, lam_d = click_intensities(
            phases, cfg.mu_signal, cfg.mu_reference, dtheta, cfg
        )
        counts_c = counts_from_uniforms(lam_c, u[1, :take])
        counts_d = counts_from_uniforms(lam_d, u[2, :take])
        sc = np.nonzero(counts_c)[0]
        sd = np.nonzero(counts_d)[0]
        slots = np.concatenate([start + sc.astype(np.int64), start + sd.astype(np.int64)])
        dets = np.concatenate([np.zeros(sc.size, np.uint8), np.ones(sd.size, np.uint8)])
        order = np.lexsort((dets, slots))
        slot_parts.append(slots[order])
        det_parts.append(dets[order])
        bits = phases
        if pending_bits.size:
            bits = np.concatenate([pending_bits, bits])
        n_pack = bits.size & ~7
        phase_parts.append(np.packbits(bits[:n_pack]))
        pending_bits = bits[n_pack:]
        counts_c_total += int(counts_c.sum())
        counts_d_total += int(counts_d.sum())
    if pending_bits.size:
        phase_parts.append(np.packbits(pending_bits))
    if slot_parts:
        abs_slots = np.concatenate(slot_parts)
        detectors = np.concatenate(det_parts)
        phases_packed = np.concatenate(phase_parts)
    else:
        abs_slots = np.empty(0, np.int64)
        detectors = np.empty(0, np.uint8)
        phases_packed = np.empty(0, np.uint8)
    return EventRecord(
        n_slots=n_slots,
        slot_origin=0,
        abs_slots=abs_slots,
        detectors=detectors,
        phases=phases_packed,
        counts_c=counts_c_total,
        counts_d=counts_d_total,
    )


def _unrank_pair(rank: int, n: int) -> tuple[int, int]:
    # unordered pair {a, b}, a < b < n, in lexicographic rank order
    a = 0
    span = n - 1
    while rank >= span:
        rank -= span
        a += 1
        span -= 1
    return a, a + 1 + rank


def _poisson_cdf_table(lam: float, kmax: int) -> np.ndarray:
    term = math.exp(-lam)
    cdf = [term]
    for k in range(1, kmax + 1):
        term *= lam / k
        cdf.append(cdf[-1] + term)
    return np.asarray(cdf)


def simulate_fock_run(cfg: ExperimentConfig, n_blocks: int) -> FockRecord:
    """Exact photon-number mode for blocks with at most two photons.

    Total photon numbers per block are Poisson with means L*mu_signal
    (sender side, post-channel) and L*mu_reference. Blocks in a sector
    with n_A + n_B <= 2 are measured exactly via the two-photon
    interference amplitudes:

    - one photon per party, distinct output slots: the unordered slot
      pair is uniform over the L*(L-1)/2 pairs; both photons exit the
      same detector when the two encoded phase bits agree, opposite
      detectors when they differ (within a pair the two assignments are
      equally likely);
    - one photon per party, bunched: probability 1/L, both photons land
      in one uniform slot and one uniform detector;
    - two photons from one party: no interference, each photon lands in
      an independent uniform (slot, detector) cell;
    - single photons: uniform slot, uniform detector.

    Each surviving photon is then thinned by the detector efficiency.
    Blocks with three or more photons are skipped and tallied. Dark
    counts are outside this mode's state space; set dark_rate_hz = 0.
    """
    if cfg.dark_rate_hz != 0.0:
        raise ValueError("exact photon-number mode requires dark_rate_hz = 0")
    if n_blocks < 0:
        raise ValueError(f"n_blocks must be >= 0, got {n_blocks}")
    L = cfg.L
    eta = cfg.detector_efficiency
    lam_a = L * cfg.mu_signal
    lam_b = L * cfg.mu_reference
    kmax = 16
    cdf_a = _poisson_cdf_table(lam_a, kmax)
    cdf_b = _poisson_cdf_table(lam_b, kmax)
    npairs = L * (L - 1) // 2
    B = _FOCK_CHUNK_BLOCKS
    slot_all, det_all, phase_parts = [], [], []
    pending_bits = np.empty(0, np.uint8)
    n_alice = np.empty(n_blocks, np.int16)
    n_bob = np.empty(n_blocks, np.int16)
    pair_distinct = np.zeros(n_blocks, bool)
    skipped = 0
    kept_photons = [0, 0]
    for chunk_start in range(0, n_blocks, B):
        take = min(B, n_blocks - chunk_start)
        g = _generator(cfg.seed, _STREAM_FOCK, chunk_start // B)
        u = g.random((B, L + 8))[:take]
        phases = (u[:, :L] < 0.5).astype(np.uint8)
        na = np.searchsorted(cdf_a, u[:, L], side="right").astype(np.int16)
        nb = np.searchsorted(cdf_b, u[:, L + 1], side="right").astype(np.int16)
        n_alice[chunk_start : chunk_start + take] = na
        n_bob[chunk_start : chunk_start + take] = nb
        for bi in range(take):
            block = chunk_start + bi
            a, b = int(na[bi]), int(nb[bi])
            uu = u[bi, L + 2 :]
            placed: list[tuple[int, int]] = []  # kept photons as (slot, det)
            if a + b > 2:
                skipped += 1
            elif a == 1 and b == 1:
                if uu[0] < 1.0 / L:
                    slot = min(int(uu[1] * L), L - 1)
                    det = int(uu[2] < 0.5)
                    for u_keep in (uu[3], uu[4]):
                        if u_keep < eta:
                            placed.append((slot, det))
                else:
                    pair_distinct[block] = True
                    rank = min(int(uu[1] * npairs), npairs - 1)
                    i, j = _unrank_pair(rank, L)
                    first_c = uu[2] < 0.5
                    if phases[bi, i] == phases[bi, j]:
                        det_i = det_j = int(not first_c)
                    else:
                        det_i = int(not first_c)
                        det_j = 1 - det_i
                    if uu[3] < eta:
                        placed.append((i, det_i))
                    if uu[4] < eta:
                        placed.append((j, det_j))
            elif a + b == 2:
                # two photons from one party: independent uniform cells
                for u_cell, u_keep in ((uu[0], uu[2]), (uu[1], uu[3])):
                    cell = min(int(u_cell * 2 * L), 2 * L - 1)
                    if u_keep < eta:
                        placed.append((cell >> 1, cell & 1))
            elif a + b == 1:
                slot = min(int(uu[0] * L), L - 1)
                if uu[2] < eta:
                    placed.append((slot, int(uu[1] < 0.5)))
            for _, det in placed:
                kept_photons[det] += 1
            # collapse same-cell photons into one click, sort by (slot, det)
            for slot, det in sorted(set(placed)):
                slot_all.append(block * L + slot)
                det_all.append(det)
        bits = phases.reshape(-1)
        if pending_bits.size:
            bits = np.concatenate([pending_bits, bits])
        n_pack = bits.size & ~7
        phase_parts.append(np.packbits(bits[:n_pack]))
        pending_bits = bits[n_pack:]
    if pending_bits.size:
        phase_parts.append(np.packbits(pending_bits))
    events = EventRecord(
        n_slots=n_blocks * L,
        slot_origin=0,
        abs_slots=np.asarray(slot_all, np.int64),
        detectors=np.asarray(det_all, np.uint8),
        phases=(
            np.concatenate(phase_parts) if phase_parts else np.empty(0, np.uint8)
        ),
        counts_c=kept_photons[DETECTOR_C],
        counts_d=kept_photons[DETECTOR_D],
    )
    return FockRecord(
        events=events,
        n_alice=n_alice,
        n_bob=n_bob,
        pair_distinct=pair_distinct,
        skipped_multiphoton=skipped,
    )
