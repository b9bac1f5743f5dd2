"""Backend selection and exact parity between the two kernel builds."""

import os
import subprocess
import sys

import numpy as np
import pytest

from rrdps import _kernels
from rrdps._kernels import reference

fast = pytest.importorskip(
    "rrdps._kernels._fast", reason="compiled extension not built"
)


def _random_stream(rng, n, max_slot):
    cells = rng.choice(max_slot * 2, size=min(n, max_slot * 2), replace=False)
    cells.sort()
    return (cells // 2).astype(np.int64), (cells % 2).astype(np.uint8)


class TestParity:
    def test_splitmix64(self):
        rng = np.random.default_rng(0)
        for x in [0, 1, 2**64 - 1, *rng.integers(0, 2**63, 50).tolist()]:
            assert reference.splitmix64(x) == fast.splitmix64(x)

    def test_stream_draw(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            key = int(rng.integers(0, 2**63))
            idx = int(rng.integers(0, 2**40))
            assert reference.stream_draw(key, idx) == fast.stream_draw(key, idx)

    @pytest.mark.parametrize("window", [1, 3, 40, 1000])
    def test_deadtime_mask(self, window):
        rng = np.random.default_rng(window)
        for trial in range(20):
            slots, _ = _random_stream(rng, 500, 3000)
            a = reference.deadtime_mask(slots, window)
            b = fast.deadtime_mask(slots, window)
            np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    def test_deadtime_mask_empty(self):
        empty = np.empty(0, np.int64)
        a = reference.deadtime_mask(empty, 40)
        b = fast.deadtime_mask(empty, 40)
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    @pytest.mark.parametrize("L", [8, 100, 512])
    def test_sift_events(self, L):
        rng = np.random.default_rng(L)
        for trial in range(10):
            n_blocks = 200
            slots, dets = _random_stream(rng, 2000, n_blocks * L)
            phases = rng.integers(
                0, 256, size=(n_blocks * L + 7) // 8, dtype=np.uint8
            )
            key = int(rng.integers(0, 2**63))
            got_a = reference.sift_events(slots, dets, L, phases, key, 0)
            got_b = fast.sift_events(slots, dets, L, phases, key, 0)
            assert len(got_a) == len(got_b) == 7
            for a, b in zip(got_a, got_b):
                np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    def test_sift_events_with_origin(self):
        rng = np.random.default_rng(9)
        L = 64
        origin = 37 * L
        slots, dets = _random_stream(rng, 800, 100 * L)
        slots = slots + origin
        phases = rng.integers(0, 256, size=(100 * L + 7) // 8, dtype=np.uint8)
        got_a = reference.sift_events(slots, dets, L, phases, 123, origin)
        got_b = fast.sift_events(slots, dets, L, phases, 123, origin)
        for a, b in zip(got_a, got_b):
            np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    def test_simulated_stream_end_to_end(self):
        from rrdps.kernel import ExperimentConfig, emit_train

        cfg = ExperimentConfig(
            L=128,
            mu_alice=0.05,
            mu_bob=0.05,
            detector_efficiency=0.8,
            dark_rate_hz=5e4,
            seed=31,
        )
        record = emit_train(cfg, trial=0, n_slots=128 * 500)
        for window in (0, 7, 40):
            if window:
                mask_a = np.asarray(
                    reference.deadtime_mask(record.abs_slots, window)
                ).view(bool)
                mask_b = np.asarray(
                    fast.deadtime_mask(record.abs_slots, window)
                ).view(bool)
                np.testing.assert_array_equal(mask_a, mask_b)
                slots = record.abs_slots[mask_a]
                dets = record.detectors[mask_a]
            else:
                slots, dets = record.abs_slots, record.detectors
            got_a = reference.sift_events(slots, dets, 128, record.phases, 7, 0)
            got_b = fast.sift_events(slots, dets, 128, record.phases, 7, 0)
            for a, b in zip(got_a, got_b):
                np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


def _probe_backend(env_value):
    env = dict(os.environ)
    if env_value is None:
        env.pop("RRDPS_KERNEL", None)
    else:
        env["RRDPS_KERNEL"] = env_value
    return subprocess.run(
        [sys.executable, "-c", "import rrdps; print(rrdps.BACKEND)"],
        capture_output=True,
        text=True,
        env=env,
    )


class TestSelector:
    def test_module_exposes_backend_name(self):
        assert _kernels.BACKEND in ("cython", "reference")

    def test_auto_prefers_compiled(self):
        proc = _probe_backend(None)
        assert proc.returncode == 0
        assert proc.stdout.strip() == "cython"

    def test_reference_override(self):
        proc = _probe_backend("reference")
        assert proc.returncode == 0
        assert proc.stdout.strip() == "reference"

    def test_explicit_cython(self):
        proc = _probe_backend("cython")
        assert proc.returncode == 0
        assert proc.stdout.strip() == "cython"

    def test_unknown_value_fails_loudly(self):
        proc = _probe_backend("turbo")
        assert proc.returncode != 0
        assert "RRDPS_KERNEL" in proc.stderr
