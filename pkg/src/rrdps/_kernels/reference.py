"""Pure-Python reference implementations of the event-processing kernels.

This is the fallback backend when the compiled extension is unavailable,
and the behavioral ground truth the compiled backend must reproduce bit
for bit. The two implementations stay in lockstep: identical integer
arithmetic, identical outputs for identical inputs. Callers validate
inputs (sortedness, dtypes); these functions assume clean data.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15  # 64-bit golden-ratio increment


def splitmix64(x: int) -> int:
    """One splitmix64 finalization round (bijective 64-bit mixer)."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_draw(key: int, index: int) -> int:
    """index-th output of the splitmix64 stream seeded at ``key``."""
    return splitmix64((key + index * GOLDEN) & MASK64)


def deadtime_mask(abs_slots: np.ndarray, window: int) -> np.ndarray:
    """Non-paralyzable dead-time acceptance mask.

    An event at slot t is accepted iff t equals the last accepted slot
    (the same-slot partner on the other detector stays) or lies more
    than ``window`` slots after it. Rejected events do not restart the
    window. Input must be sorted by slot.
    """
    slots = abs_slots.tolist()
    mask = np.zeros(len(slots), dtype=np.uint8)
    last = -(1 << 62)
    for idx, t in enumerate(slots):
        if t == last or t - last > window:
            mask[idx] = 1
            last = t
    return mask


def _phase_bit(phases_packed, pos: int) -> int:
    # np.packbits layout: most significant bit first within each byte
    return (int(phases_packed[pos >> 3]) >> (7 - (pos & 7))) & 1


def sift_events(
    abs_slots: np.ndarray,
    detectors: np.ndarray,
    L: int,
    phases_packed: np.ndarray,
    key: int,
    slot_origin: int = 0,
):
    """Per-block pair selection and bit extraction.

    For every block holding k >= 2 events, one unordered event pair is
    chosen uniformly via ``stream_draw(key, block_id) % C(k, 2)`` (the
    modulo bias is below 1e-11 for any realistic k). A pair sharing a
    slot is a same-slot discard. Events must be sorted by (slot,
    detector) and already dead-time filtered.

    Returns
    -------
    tuple
        (block_ids, slot_i, slot_j, alice_bits, bob_bits, n_same_slot,
        n_blocks_with_pairs) where slots are block-local and i < j.
    """
    slots = abs_slots.tolist()
    dets = detectors.tolist()
    n = len(slots)
    out_block, out_i, out_j, out_a, out_b = [], [], [], [], []
    same_slot = 0
    ge2 = 0
    lo = 0
    while lo < n:
        block = slots[lo] // L
        hi = lo
        while hi < n and slots[hi] // L == block:
            hi += 1
        k = hi - lo
        if k >= 2:
            ge2 += 1
            ncomb = k * (k - 1) // 2
            r = stream_draw(key, block) % ncomb
            a = 0
            span = k - 1
            while r >= span:  # unrank to lexicographic pair (a, b)
                r -= span
                a += 1
                span -= 1
            b = a + 1 + r
            s1 = slots[lo + a]
            s2 = slots[lo + b]
            if s1 == s2:
                same_slot += 1
            else:
                p1 = _phase_bit(phases_packed, s1 - slot_origin)
                p2 = _phase_bit(phases_packed, s2 - slot_origin)
                out_block.append(block)
                out_i.append(s1 - block * L)
                out_j.append(s2 - block * L)
                out_a.append(p1 ^ p2)
                out_b.append(0 if dets[lo + a] == dets[lo + b] else 1)
        lo = hi
    return (
        np.asarray(out_block, dtype=np.int64),
        np.asarray(out_i, dtype=np.int64),
        np.asarray(out_j, dtype=np.int64),
        np.asarray(out_a, dtype=np.uint8),
        np.asarray(out_b, dtype=np.uint8),
        same_slot,
        ge2,
    )
