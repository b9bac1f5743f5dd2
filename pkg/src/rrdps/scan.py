"""Key-rate scans over block size and distance from one continuous train.

The experiment-style flow: simulate a long block-size-agnostic pulse
train per trial, dead-time filter it once on absolute time, then
re-block the same filtered stream at every block size of interest, sift
and optimize the photon threshold per point. Trials differ only in
their train stream, so the key-rate-vs-L comparison within one trial is
paired. Failed points are carried with empty analysis instead of
aborting the scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .kernel import DETECTOR_C, EventRecord, ExperimentConfig, emit_train
from .security import (
    GAIN_CONVENTIONS,
    GAIN_SIFTED_OVER_EMITTED,
    KeyRateReport,
    SecurityInput,
    optimize_v_th,
)
from .sift import SiftTally, sift_key

__all__ = [
    "ScanConfig",
    "ScanPoint",
    "OptimumRow",
    "ScanResult",
    "reblock",
    "scan_L",
    "curve_statistics",
]

DEFAULT_L_LIST = tuple(1 << k for k in range(9, 18))


@dataclass(frozen=True, slots=True)
class ScanConfig:
    """Grid and analysis parameters of one scan.

    ``physics`` provides everything but the distance, which is swept.
    ``slots_per_trial`` is the train length; ``phase_segment_slots`` the
    coherence-segment length after which the overall phases are redrawn.
    """

    physics: ExperimentConfig = ExperimentConfig()
    l_list: tuple = DEFAULT_L_LIST
    distances_km: tuple = (10.0,)
    trials: int = 10
    slots_per_trial: int = 1 << 26
    phase_segment_slots: int = 1 << 20
    f: float = 1.1
    s: float = 100.0
    gain_convention: str = GAIN_SIFTED_OVER_EMITTED

    def __post_init__(self):
        if not self.l_list:
            raise ValueError("l_list must be nonempty")
        for L in self.l_list:
            if L < 3:
                raise ValueError(f"every L must be >= 3, got {L}")
        if not self.distances_km:
            raise ValueError("distances_km must be nonempty")
        for d in self.distances_km:
            if d < 0:
                raise ValueError(f"distances must be >= 0, got {d}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.slots_per_trial < max(self.l_list):
            raise ValueError("slots_per_trial must cover at least one block")
        if self.phase_segment_slots < 1:
            raise ValueError("phase_segment_slots must be >= 1")
        if self.f < 1.0:
            raise ValueError(f"f must be >= 1, got {self.f}")
        if self.s <= 0.0:
            raise ValueError(f"s must be > 0, got {self.s}")
        if self.gain_convention not in GAIN_CONVENTIONS:
            raise ValueError(f"unknown gain convention {self.gain_convention!r}")


@dataclass(frozen=True, slots=True)
class ScanPoint:
    """One (distance, L, trial) measurement.

    ``v_th`` and ``report`` are None when the analysis failed (for
    example nothing sifted); the tally is always present.
    """

    distance_km: float
    L: int
    trial: int
    tally: SiftTally
    v_th: "int | None"
    report: "KeyRateReport | None"

    @property
    def ok(self) -> bool:
        return self.report is not None


@dataclass(frozen=True, slots=True)
class OptimumRow:
    """Per-distance optimum over the scanned grid, from pooled trials."""

    distance_km: float
    mu: float
    L: int
    v_th: int
    e_b: float
    e_p: float


@dataclass(frozen=True, slots=True)
class ScanResult:
    points: tuple
    optima: tuple


def reblock(record: EventRecord, L: int) -> EventRecord:
    """Partition a continuous train into floor(n_slots/L) blocks of L.

    Events in the trailing remainder are dropped; the packed phase array
    is kept whole (bit addressing is unchanged). A train shorter than
    one block is a hard fault.
    """
    if L < 3:
        raise ValueError(f"L must be >= 3, got {L}")
    n_blocks = record.n_slots // L
    if n_blocks == 0:
        raise ValueError(
            f"train of {record.n_slots} slots cannot form a block of {L}"
        )
    limit = record.slot_origin + n_blocks * L
    keep = record.abs_slots < limit
    return EventRecord(
        n_slots=n_blocks * L,
        slot_origin=record.slot_origin,
        abs_slots=record.abs_slots[keep],
        detectors=record.detectors[keep],
        phases=record.phases,
        counts_c=record.counts_c,
        counts_d=record.counts_d,
    )


def _analyze_tally(
    tally: SiftTally, cfg: ScanConfig
) -> "tuple[int, KeyRateReport] | tuple[None, None]":
    """Optimize v_th for one tally; (None, None) if no key is derivable."""
    try:
        inp = SecurityInput(
            n_sifted=tally.blocks_sifted,
            e_b=tally.e_b,
            L=tally.block_size,
            v_th=1,
            mu=cfg.physics.mu_alice,
            Q=tally.gain(cfg.gain_convention),
            m=tally.m,
            M=tally.total_pulses,
            f=cfg.f,
            s=cfg.s,
        )
        best_v, report = optimize_v_th(inp)
    except ValueError:
        return None, None
    return best_v, report


def _sift_filtered(
    slots: np.ndarray,
    dets: np.ndarray,
    removed_slots: np.ndarray,
    phases_packed: np.ndarray,
    total_slots: int,
    L: int,
    seed: int,
) -> SiftTally:
    """Tally one block size from an already filtered train."""
    n_em = total_slots // L
    limit = n_em * L
    cut = int(np.searchsorted(slots, limit, side="left"))
    slots = slots[:cut]
    dets = dets[:cut]
    blocks, _, _, alice, bob, n_same_slot, n_ge2 = _kernels.sift_events(
        slots, dets, L, phases_packed, sift_key(seed), 0
    )
    m_c = int(np.count_nonzero(dets == DETECTOR_C))
    return SiftTally(
        block_size=L,
        blocks_emitted=n_em,
        blocks_sifted=int(blocks.size),
        errors=int(np.count_nonzero(alice != bob)),
        m_c=m_c,
        m_d=int(dets.size - m_c),
        total_pulses=n_em * L,
        discarded_same_slot=int(n_same_slot),
        discarded_insufficient=n_em - int(n_ge2),
        discarded_deadtime=int(
            np.searchsorted(removed_slots, limit, side="left")
        ),
    )


def scan_L(cfg: ScanConfig, l_list: "tuple | None" = None) -> ScanResult:
    """Run the full (distance, L, trial) grid and pick per-distance optima.

    Every trial simulates one train per distance, filters it once, and
    re-blocks it at each L. The optimum row for a distance is chosen by
    the mean key rate per pulse across trials and re-analyzed from the
    trials' pooled tally at that L.
    """
    if l_list is None:
        l_list = cfg.l_list
    else:
        l_list = tuple(l_list)
        cfg = replace(cfg, l_list=l_list)
    points = []
    window = cfg.physics.dead_window_slots
    for distance in cfg.distances_km:
        phys = replace(cfg.physics, distance_km=distance)
        for trial in range(cfg.trials):
            record = emit_train(
                phys, trial, cfg.slots_per_trial, cfg.phase_segment_slots
            )
            if window > 0 and record.abs_slots.size:
                mask = _kernels.deadtime_mask(record.abs_slots, window).view(bool)
                slots = record.abs_slots[mask]
                dets = record.detectors[mask]
                removed_slots = record.abs_slots[~mask]
            else:
                slots = record.abs_slots
                dets = record.detectors
                removed_slots = np.empty(0, np.int64)
            for L in l_list:
                tally = _sift_filtered(
                    slots,
                    dets,
                    removed_slots,
                    record.phases,
                    cfg.slots_per_trial,
                    L,
                    phys.seed,
                )
                v_th, report = _analyze_tally(tally, cfg)
                points.append(
                    ScanPoint(
                        distance_km=distance,
                        L=L,
                        trial=trial,
                        tally=tally,
                        v_th=v_th,
                        report=report,
                    )
                )
    optima = []
    for distance in cfg.distances_km:
        best_l = None
        best_rate = -math.inf
        for L in l_list:
            rates = [
                p.report.key_rate_per_pulse
                for p in points
                if p.distance_km == distance and p.L == L and p.ok
            ]
            if not rates:
                continue
            mean_rate = float(np.mean(rates))
            if mean_rate > best_rate:
                best_rate = mean_rate
                best_l = L
        if best_l is None:
            continue
        pooled = None
        for p in points:
            if p.distance_km == distance and p.L == best_l:
                pooled = p.tally if pooled is None else pooled.merge(p.tally)
        v_th, report = _analyze_tally(pooled, cfg)
        if report is None:
            continue
        optima.append(
            OptimumRow(
                distance_km=distance,
                mu=cfg.physics.mu_alice,
                L=best_l,
                v_th=v_th,
                e_b=pooled.e_b,
                e_p=report.e_p,
            )
        )
    return ScanResult(points=tuple(points), optima=tuple(optima))


def curve_statistics(points) -> dict:
    """Mean and standard deviation of the key rate per (distance, L).

    Standard deviations follow the repeat-trial protocol (population
    std over the successful trials). Keys are (distance_km, L); values
    are dicts with n_ok, mean_rate, std_rate.
    """
    groups: dict = {}
    for p in points:
        groups.setdefault((p.distance_km, p.L), []).append(p)
    out = {}
    for key, pts in groups.items():
        rates = [p.report.key_rate_per_pulse for p in pts if p.ok]
        if rates:
            out[key] = {
                "n_ok": len(rates),
                "mean_rate": float(np.mean(rates)),
                "std_rate": float(np.std(rates)),
            }
        else:
            out[key] = {"n_ok": 0, "mean_rate": float("nan"), "std_rate": float("nan")}
    return out
