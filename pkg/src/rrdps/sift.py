"""Dead-time post-selection, pair announcement and sifted-bit tallies.

The classical half of the measurement: a non-paralyzable dead-time
filter over absolute slot time, a uniformly random choice of one
announced event pair per block, bit extraction (alice_bit = s_i xor
s_j; bob_bit = 0 iff both clicks share a detector) and exact counter
accumulation for the security analysis.

Pair choices are driven by a splitmix64 counter stream keyed from the
run seed under a fixed domain separator, so the choice for block b is a
pure function of (seed, b). Both processing backends use the same
integer arithmetic and produce bit-identical results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .kernel import DETECTOR_C, DETECTOR_D, DetectionEvent, EventRecord
from .security import GAIN_CONVENTIONS, GAIN_SIFTED_OVER_EMITTED

__all__ = [
    "SIFT_DOMAIN",
    "Discard",
    "SiftedBit",
    "SiftTally",
    "sift_key",
    "deadtime_filter",
    "sift_block",
    "accumulate",
    "sift_pipeline",
]

# domain separator keeping the pair-choice stream disjoint from the
# physical-noise streams derived from the same seed
SIFT_DOMAIN = 0x5349465453494654


class Discard(enum.Enum):
    """Reason a block yielded no sifted bit."""

    INSUFFICIENT = "insufficient"
    SAME_SLOT = "same-slot"


@dataclass(frozen=True, slots=True)
class SiftedBit:
    """One announced pair and the two parties' bit values.

    Slots are block-local with i < j; alice_bit is the encoded relative
    phase s_i xor s_j, bob_bit is 0 when both chosen clicks landed on
    the same detector.
    """

    block_id: int
    i: int
    j: int
    alice_bit: int
    bob_bit: int

    def __post_init__(self):
        if not 0 <= self.i < self.j:
            raise ValueError(f"need 0 <= i < j, got i={self.i}, j={self.j}")
        if self.alice_bit not in (0, 1) or self.bob_bit not in (0, 1):
            raise ValueError("bits must be 0 or 1")

    @property
    def is_error(self) -> bool:
        return self.alice_bit != self.bob_bit


@dataclass(frozen=True, slots=True)
class SiftTally:
    """Exact counters of one sifting pass.

    ``m_c``/``m_d`` count post-filter clicks per detector (real counts a
    detector registered, so they are tallied after dead-time removal).
    ``total_pulses`` is blocks_emitted * block_size by construction.
    """

    block_size: int
    blocks_emitted: int
    blocks_sifted: int
    errors: int
    m_c: int
    m_d: int
    total_pulses: int
    discarded_same_slot: int
    discarded_insufficient: int
    discarded_deadtime: int

    def __post_init__(self):
        for name in (
            "block_size",
            "blocks_emitted",
            "blocks_sifted",
            "errors",
            "m_c",
            "m_d",
            "total_pulses",
            "discarded_same_slot",
            "discarded_insufficient",
            "discarded_deadtime",
        ):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")
        if self.block_size < 3:
            raise ValueError(f"block_size must be >= 3, got {self.block_size}")
        if self.blocks_sifted > self.blocks_emitted:
            raise ValueError("blocks_sifted cannot exceed blocks_emitted")
        if self.errors > self.blocks_sifted:
            raise ValueError("errors cannot exceed blocks_sifted")
        if self.total_pulses != self.blocks_emitted * self.block_size:
            raise ValueError("total_pulses must equal blocks_emitted * block_size")
        discards = (
            self.blocks_sifted
            + self.discarded_same_slot
            + self.discarded_insufficient
        )
        if discards != self.blocks_emitted:
            raise ValueError(
                "sifted + same-slot + insufficient must account for every block"
            )

    @property
    def e_b(self) -> float:
        """Bit error fraction; NaN when nothing was sifted."""
        if self.blocks_sifted == 0:
            return float("nan")
        return self.errors / self.blocks_sifted

    @property
    def m(self) -> int:
        """Single-detector count entering the security bound."""
        return max(self.m_c, self.m_d)

    def gain(self, convention: str = GAIN_SIFTED_OVER_EMITTED) -> float:
        """Block gain Q under the chosen ratio convention.

        The default is sifted blocks over emitted blocks, a fraction in
        (0, 1]. The inverted convention exists for comparison; its value
        exceeds 1 whenever blocks were lost and is then outside the
        security input's domain.
        """
        if convention not in GAIN_CONVENTIONS:
            raise ValueError(f"unknown gain convention {convention!r}")
        if self.blocks_emitted == 0 or self.blocks_sifted == 0:
            raise ValueError("gain undefined without emitted and sifted blocks")
        if convention == GAIN_SIFTED_OVER_EMITTED:
            return self.blocks_sifted / self.blocks_emitted
        return self.blocks_emitted / self.blocks_sifted

    def merge(self, other: "SiftTally") -> "SiftTally":
        """Associatively combine two tallies of the same block size."""
        if self.block_size != other.block_size:
            raise ValueError("cannot merge tallies with different block sizes")
        return SiftTally(
            block_size=self.block_size,
            blocks_emitted=self.blocks_emitted + other.blocks_emitted,
            blocks_sifted=self.blocks_sifted + other.blocks_sifted,
            errors=self.errors + other.errors,
            m_c=self.m_c + other.m_c,
            m_d=self.m_d + other.m_d,
            total_pulses=self.total_pulses + other.total_pulses,
            discarded_same_slot=self.discarded_same_slot + other.discarded_same_slot,
            discarded_insufficient=(
                self.discarded_insufficient + other.discarded_insufficient
            ),
            discarded_deadtime=self.discarded_deadtime + other.discarded_deadtime,
        )


def sift_key(seed: int) -> int:
    """Pair-choice stream key for a run seed."""
    return _kernels.splitmix64((seed ^ SIFT_DOMAIN) & ((1 << 64) - 1))


def deadtime_filter(
    abs_slots: np.ndarray, detectors: np.ndarray, window: int
) -> tuple[np.ndarray, np.ndarray, int]:
    """Non-paralyzable dead-time filter on absolute slot time.

    After an accepted click, every event within the next ``window``
    slots on either detector is removed; the partner click in the very
    same slot is kept. Removed events do not restart the window.
    Filtering ignores block boundaries because dead time is a property
    of absolute time. Input must be strictly sorted by (slot, detector);
    anything else is a hard fault.

    Returns (kept slots, kept detectors, number removed).
    """
    abs_slots = np.ascontiguousarray(abs_slots, dtype=np.int64)
    detectors = np.ascontiguousarray(detectors, dtype=np.uint8)
    if abs_slots.shape != detectors.shape or abs_slots.ndim != 1:
        raise ValueError("abs_slots and detectors must be equal-length 1-d arrays")
    if window < 0:
        raise ValueError(f"window must be >= 0, got {window}")
    if detectors.size and detectors.max() > 1:
        raise ValueError("detector codes must be 0 or 1")
    order_key = abs_slots * 2 + detectors
    if order_key.size > 1 and np.any(np.diff(order_key) <= 0):
        raise ValueError("events must be strictly sorted by (slot, detector)")
    if window == 0 or abs_slots.size == 0:
        return abs_slots, detectors, 0
    mask = _kernels.deadtime_mask(abs_slots, window).view(bool)
    kept = int(mask.sum())
    return abs_slots[mask], detectors[mask], int(abs_slots.size - kept)


def sift_block(
    events: Sequence[DetectionEvent],
    rng: "np.random.Generator | int",
    phases: np.ndarray,
):
    """Sift one block: a SiftedBit, or the Discard reason.

    ``events`` are the block's post-filter clicks; ``phases`` the
    block's phase bits. ``rng`` is either a Generator (one 64-bit draw
    is consumed) or the 64-bit draw itself, e.g.
    ``stream_draw(sift_key(seed), block_id)`` for replayable runs.
    Among k events, one of the k*(k-1)/2 unordered pairs is chosen
    uniformly; a pair sharing a slot is a same-slot discard.
    """
    if len(events) < 2:
        return Discard.INSUFFICIENT
    block_id = events[0].block
    if any(e.block != block_id for e in events):
        raise ValueError("sift_block got events from multiple blocks")
    ev = sorted(events, key=lambda e: (e.slot, e.detector))
    if isinstance(rng, np.random.Generator):
        draw = int(rng.integers(0, 1 << 64, dtype=np.uint64))
    else:
        draw = int(rng) & ((1 << 64) - 1)
    k = len(ev)
    r = draw % (k * (k - 1) // 2)
    a = 0
    span = k - 1
    while r >= span:
        r -= span
        a += 1
        span -= 1
    b = a + 1 + r
    if ev[a].slot == ev[b].slot:
        return Discard.SAME_SLOT
    return SiftedBit(
        block_id=block_id,
        i=ev[a].slot,
        j=ev[b].slot,
        alice_bit=int(phases[ev[a].slot]) ^ int(phases[ev[b].slot]),
        bob_bit=0 if ev[a].detector == ev[b].detector else 1,
    )


def accumulate(
    results: Iterable["SiftedBit | Discard"],
    detectors: np.ndarray,
    n_emitted: int,
    block_size: int,
    discarded_deadtime: int = 0,
) -> SiftTally:
    """Exact tally from per-block sift results and post-filter clicks.

    ``detectors`` is the dead-time-filtered click stream (m_c and m_d
    are physical counts, so they are taken after the filter). Blocks
    not represented in ``results`` count as insufficient.
    """
    n_sifted = 0
    errors = 0
    same_slot = 0
    insufficient = 0
    for res in results:
        if isinstance(res, SiftedBit):
            n_sifted += 1
            errors += res.is_error
        elif res is Discard.SAME_SLOT:
            same_slot += 1
        elif res is Discard.INSUFFICIENT:
            insufficient += 1
        else:
            raise TypeError(f"unexpected sift result {res!r}")
    seen = n_sifted + same_slot + insufficient
    if seen > n_emitted:
        raise ValueError("more sift results than emitted blocks")
    detectors = np.asarray(detectors)
    m_c = int(np.count_nonzero(detectors == DETECTOR_C))
    return SiftTally(
        block_size=block_size,
        blocks_emitted=n_emitted,
        blocks_sifted=n_sifted,
        errors=errors,
        m_c=m_c,
        m_d=int(detectors.size - m_c),
        total_pulses=n_emitted * block_size,
        discarded_same_slot=same_slot,
        discarded_insufficient=insufficient + (n_emitted - seen),
        discarded_deadtime=discarded_deadtime,
    )


def sift_pipeline(
    record: EventRecord,
    block_size: int,
    seed: int,
    window: int,
    want_bits: bool = False,
) -> "tuple[SiftTally, list[SiftedBit] | None]":
    """Filter, sift and tally a whole click record.

    ``record.n_slots`` must be a whole number of blocks; the caller owns
    any re-blocking trim. The number of emitted blocks is n_slots /
    block_size. With ``want_bits`` the individual sifted bits are
    returned as well (slots block-local).
    """
    if block_size < 3:
        raise ValueError(f"block_size must be >= 3, got {block_size}")
    if record.n_slots % block_size:
        raise ValueError(
            f"record holds {record.n_slots} slots, not a multiple of {block_size}"
        )
    n_emitted = record.n_slots // block_size
    slots, dets, n_removed = deadtime_filter(
        record.abs_slots, record.detectors, window
    )
    blocks, slot_i, slot_j, alice, bob, n_same_slot, n_ge2 = _kernels.sift_events(
        slots, dets, block_size, record.phases, sift_key(seed), record.slot_origin
    )
    n_sifted = int(blocks.size)
    tally = SiftTally(
        block_size=block_size,
        blocks_emitted=n_emitted,
        blocks_sifted=n_sifted,
        errors=int(np.count_nonzero(alice != bob)),
        m_c=int(np.count_nonzero(dets == DETECTOR_C)),
        m_d=int(np.count_nonzero(dets == DETECTOR_D)),
        total_pulses=n_emitted * block_size,
        discarded_same_slot=int(n_same_slot),
        discarded_insufficient=n_emitted - int(n_ge2),
        discarded_deadtime=int(n_removed),
    )
    bits = None
    if want_bits:
        bits = [
            SiftedBit(int(bk), int(si), int(sj), int(ab), int(bb))
            for bk, si, sj, ab, bb in zip(blocks, slot_i, slot_j, alice, bob)
        ]
    return tally, bits
