# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of the reference kernels.

Same integer arithmetic, same outputs, bit for bit; see reference.py for
the behavioral documentation. Any change here must land in reference.py
too (the parity tests enforce this).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t rrdps_splitmix64(uint64_t x) {
        uint64_t z = x + 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    """
    cnp.uint64_t rrdps_splitmix64(cnp.uint64_t x) nogil

GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    """One splitmix64 finalization round (bijective 64-bit mixer)."""
    return int(rrdps_splitmix64(<cnp.uint64_t> (x & 0xFFFFFFFFFFFFFFFF)))


def stream_draw(key, index):
    """index-th output of the splitmix64 stream seeded at ``key``."""
    cdef cnp.uint64_t k = <cnp.uint64_t> (key & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.uint64_t i = <cnp.uint64_t> (index & 0xFFFFFFFFFFFFFFFF)
    return int(rrdps_splitmix64(k + i * <cnp.uint64_t> 0x9E3779B97F4A7C15))


def deadtime_mask(cnp.int64_t[::1] abs_slots, long long window):
    """Non-paralyzable dead-time acceptance mask (see reference.py)."""
    cdef Py_ssize_t n = abs_slots.shape[0]
    mask_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] mask = mask_arr
    cdef cnp.int64_t last = -(<cnp.int64_t> 1 << 62)
    cdef cnp.int64_t t
    cdef Py_ssize_t idx
    with nogil:
        for idx in range(n):
            t = abs_slots[idx]
            if t == last or t - last > window:
                mask[idx] = 1
                last = t
    return mask_arr


cdef inline int _phase_bit(const cnp.uint8_t[::1] phases, cnp.int64_t pos) nogil:
    return (phases[pos >> 3] >> (7 - (pos & 7))) & 1


def sift_events(
    cnp.int64_t[::1] abs_slots,
    const cnp.uint8_t[::1] detectors,
    long long L,
    const cnp.uint8_t[::1] phases_packed,
    key,
    long long slot_origin=0,
):
    """Per-block pair selection and bit extraction (see reference.py)."""
    cdef cnp.uint64_t ukey = <cnp.uint64_t> (key & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t n = abs_slots.shape[0]
    cdef Py_ssize_t cap = n // 2 + 1
    out_block_arr = np.empty(cap, dtype=np.int64)
    out_i_arr = np.empty(cap, dtype=np.int64)
    out_j_arr = np.empty(cap, dtype=np.int64)
    out_a_arr = np.empty(cap, dtype=np.uint8)
    out_b_arr = np.empty(cap, dtype=np.uint8)
    cdef cnp.int64_t[::1] out_block = out_block_arr
    cdef cnp.int64_t[::1] out_i = out_i_arr
    cdef cnp.int64_t[::1] out_j = out_j_arr
    cdef cnp.uint8_t[::1] out_a = out_a_arr
    cdef cnp.uint8_t[::1] out_b = out_b_arr
    cdef Py_ssize_t lo = 0, hi, m = 0
    cdef cnp.int64_t block, s1, s2, k, ncomb, a, b, span
    cdef cnp.uint64_t r
    cdef cnp.int64_t same_slot = 0, ge2 = 0
    cdef int p1, p2
    with nogil:
        while lo < n:
            block = abs_slots[lo] // L
            hi = lo
            while hi < n and abs_slots[hi] // L == block:
                hi += 1
            k = hi - lo
            if k >= 2:
                ge2 += 1
                ncomb = k * (k - 1) // 2
                r = rrdps_splitmix64(
                    ukey + (<cnp.uint64_t> block) * <cnp.uint64_t> 0x9E3779B97F4A7C15
                ) % (<cnp.uint64_t> ncomb)
                a = 0
                span = k - 1
                while r >= <cnp.uint64_t> span:
                    r -= <cnp.uint64_t> span
                    a += 1
                    span -= 1
                b = a + 1 + <cnp.int64_t> r
                s1 = abs_slots[lo + a]
                s2 = abs_slots[lo + b]
                if s1 == s2:
                    same_slot += 1
                else:
                    p1 = _phase_bit(phases_packed, s1 - slot_origin)
                    p2 = _phase_bit(phases_packed, s2 - slot_origin)
                    out_block[m] = block
                    out_i[m] = s1 - block * L
                    out_j[m] = s2 - block * L
                    out_a[m] = <cnp.uint8_t> (p1 ^ p2)
                    out_b[m] = 0 if detectors[lo + a] == detectors[lo + b] else 1
                    m += 1
            lo = hi
    return (
        out_block_arr[:m].copy(),
        out_i_arr[:m].copy(),
        out_j_arr[:m].copy(),
        out_a_arr[:m].copy(),
        out_b_arr[:m].copy(),
        int(same_slot),
        int(ge2),
    )
