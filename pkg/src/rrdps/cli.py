"""Command-line surface: seeded runs, file ingestion, result emission.

Four subcommands: ``simulate`` (event and phase export), ``analyze``
(events or a stored tally through the security analysis), ``scan``
(key-rate curves over block sizes and distances) and ``oracle`` (the
exact equivalence suite). Configuration is a flat key=value text file;
command-line flags override file values. All data outputs are
deterministic functions of (config, seed, command); the manifest lists
a content digest per output file.

Exit codes: 0 success, 2 configuration error, 3 input parse error,
4 no-key result (nothing sifted, or the key length is not positive).
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .kernel import DETECTOR_NAMES, EventRecord, ExperimentConfig, simulate_run
from .oracle import BOUNDARY_RULES, DEFAULT_BOUNDARY_RULE, equivalence_report
from .scan import ScanConfig, scan_L
from .security import (
    GAIN_CONVENTIONS,
    GAIN_SIFTED_OVER_EMITTED,
    SecurityInput,
    evaluate,
    optimize_v_th,
)
from .sift import SiftTally, sift_pipeline

__all__ = ["main", "ConfigError", "ParseError"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_NO_KEY = 4

EVENTS_HEADER = "block,slot,detector"
PHASES_HEADER = "block,phases_hex"
CURVE_HEADER = "distance_km,L,trial,N_em,N,e_b,v_th,e_src,e_p,K,key_rate_per_pulse"
OPTIMA_HEADER = "distance_km,mu,L,v_th,e_b,e_p"


class ConfigError(Exception):
    """Bad configuration (file, key, value or flag combination)."""


class ParseError(Exception):
    """Malformed input data file; message carries the location."""


def _int_list(text: str) -> tuple:
    return tuple(int(part) for part in text.split(","))


def _float_list(text: str) -> tuple:
    return tuple(float(part) for part in text.split(","))


def _v_th_value(text: str):
    if text == "auto":
        return None
    return int(text)


# every legal config key with its caster; unknown keys are errors
_CONFIG_SCHEMA = {
    "L": int,
    "mu_alice": float,
    "mu_bob": float,
    "reference_mode": str,
    "distance_km": float,
    "loss_db_per_km": float,
    "detector_efficiency": float,
    "dark_rate_hz": float,
    "dead_time_ns": float,
    "slot_period_ns": float,
    "visibility": float,
    "seed": int,
    "blocks": int,
    "f": float,
    "s": float,
    "v_th": _v_th_value,
    "gain_convention": str,
    "l_list": _int_list,
    "distances_km": _float_list,
    "trials": int,
    "slots_per_trial": int,
    "phase_segment_slots": int,
    "l_max": int,
    "boundary_rule": str,
}

_PHYSICS_KEYS = {
    "L": "L",
    "mu_alice": "mu_alice",
    "mu_bob": "mu_bob",
    "reference_mode": "reference_mode",
    "distance_km": "distance_km",
    "loss_db_per_km": "loss_db_per_km",
    "detector_efficiency": "detector_efficiency",
    "dark_rate_hz": "dark_rate_hz",
    "dead_time_ns": "dead_time_ns",
    "slot_period_ns": "slot_period_ns",
    "visibility": "visibility",
    "seed": "seed",
    "blocks": "blocks_to_emit",
}


def parse_config(path: Path) -> dict:
    """Flat key=value file with # comments; typo-safe (unknown keys fail)."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONFIG_SCHEMA[key](val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(
                f"{path}:{lineno}: bad value for {key!r}: {exc}"
            ) from exc
    return values


def _load_values(args) -> dict:
    values = parse_config(args.config) if args.config else {}
    for flag in ("seed", "blocks", "f", "s", "l_list", "l_max"):
        if getattr(args, flag, None) is not None:
            values[flag] = getattr(args, flag)
    if getattr(args, "vth", None) is not None:
        try:
            values["v_th"] = _v_th_value(args.vth)
        except ValueError as exc:
            raise ConfigError(f"--vth must be an integer or 'auto': {exc}") from exc
    if getattr(args, "boundary_rule", None) is not None:
        values["boundary_rule"] = args.boundary_rule
    return values


def _experiment_config(values: dict) -> ExperimentConfig:
    kwargs = {
        field: values[key] for key, field in _PHYSICS_KEYS.items() if key in values
    }
    try:
        return ExperimentConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _jsonify(obj):
    """Plain-JSON form: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _json_text(obj) -> str:
    return json.dumps(_jsonify(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write_outputs(out_dir: Path, command: str, config_echo: dict, seed, files: dict) -> None:
    """Write data files plus a manifest; remove partial outputs on error.

    ``files`` maps file name to full text content. The manifest carries
    a sha256 digest per file; data files are deterministic, the manifest
    additionally holds wall-clock timestamps.
    """
    started = _utc_now()
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    digests = {}
    try:
        for name, content in files.items():
            data = content.encode()
            path = out_dir / name
            path.write_bytes(data)
            written.append(path)
            digests[name] = "sha256:" + hashlib.sha256(data).hexdigest()
        manifest = {
            "command": command,
            "config": _jsonify(config_echo),
            "seed": seed,
            "version": __version__,
            "started_utc": started,
            "finished_utc": _utc_now(),
            "outputs": digests,
        }
        (out_dir / "manifest.json").write_text(_json_text(manifest))
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        (out_dir / "manifest.json").unlink(missing_ok=True)
        raise


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _block_bits(packed: np.ndarray, L: int, block: int) -> np.ndarray:
    start = block * L
    lo = start >> 3
    hi = (start + L + 7) >> 3
    bits = np.unpackbits(packed[lo:hi])
    off = start - lo * 8
    return bits[off : off + L]


def _events_csv(record: EventRecord, L: int) -> str:
    lines = [EVENTS_HEADER]
    base = record.slot_origin
    for abs_slot, det in zip(record.abs_slots.tolist(), record.detectors.tolist()):
        rel = abs_slot - base
        lines.append(f"{base // L + rel // L},{rel % L},{DETECTOR_NAMES[det]}")
    return "\n".join(lines) + "\n"


def _phases_csv(record: EventRecord, L: int) -> str:
    lines = [PHASES_HEADER]
    n_blocks = record.n_slots // L
    first = record.slot_origin // L
    for b in range(n_blocks):
        hex_bits = np.packbits(_block_bits(record.phases, L, b)).tobytes().hex()
        lines.append(f"{first + b},{hex_bits}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    values = _load_values(args)
    cfg = _experiment_config(values)
    record = simulate_run(cfg)
    config_echo = {k: getattr(cfg, f) for k, f in _PHYSICS_KEYS.items()}
    _write_outputs(
        args.out,
        "simulate",
        config_echo,
        cfg.seed,
        {
            "events.csv": _events_csv(record, cfg.L),
            "phases.csv": _phases_csv(record, cfg.L),
        },
    )
    print(
        f"simulate: {record.n_events} events over {cfg.blocks_to_emit} blocks "
        f"-> {args.out}"
    )
    return EXIT_OK


def _read_phases_csv(path: Path, L: int) -> tuple:
    """(packed bits, n_blocks); rows must be 0..n-1 in order."""
    hex_len = 2 * ((L + 7) // 8)
    try:
        f = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    with f:
        header = f.readline().strip()
        if header != PHASES_HEADER:
            raise ParseError(f"{path}:1: expected header {PHASES_HEADER!r}")
        parts_list = []
        pending = np.empty(0, np.uint8)
        n_blocks = 0
        for lineno, raw in enumerate(f, start=2):
            line = raw.strip()
            if not line:
                continue
            block_str, _, hex_str = line.partition(",")
            try:
                block = int(block_str)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad block id") from exc
            if block != n_blocks:
                raise ParseError(
                    f"{path}:{lineno}: expected block {n_blocks}, got {block}"
                )
            if len(hex_str) != hex_len:
                raise ParseError(
                    f"{path}:{lineno}: phases_hex must be {hex_len} hex digits"
                )
            try:
                row_bytes = bytes.fromhex(hex_str)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad hex digits") from exc
            bits = np.unpackbits(np.frombuffer(row_bytes, np.uint8))[:L]
            if pending.size:
                bits = np.concatenate([pending, bits])
            n_pack = bits.size & ~7
            parts_list.append(np.packbits(bits[:n_pack]))
            pending = bits[n_pack:]
            n_blocks += 1
        if pending.size:
            parts_list.append(np.packbits(pending))
    if n_blocks == 0:
        raise ParseError(f"{path}: no phase rows")
    packed = (
        np.concatenate(parts_list) if parts_list else np.empty(0, np.uint8)
    )
    return packed, n_blocks


def _read_events_csv(path: Path, L: int, n_blocks: int) -> tuple:
    """(abs_slots, detectors), validated sorted with slots inside [0, L)."""
    try:
        f = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    slots = []
    dets = []
    prev_key = -1
    with f:
        header = f.readline().strip()
        if header != EVENTS_HEADER:
            raise ParseError(f"{path}:1: expected header {EVENTS_HEADER!r}")
        for lineno, raw in enumerate(f, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields")
            try:
                block = int(parts[0])
                slot = int(parts[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad integer field") from exc
            if parts[2] not in DETECTOR_NAMES:
                raise ParseError(
                    f"{path}:{lineno}: detector must be one of {DETECTOR_NAMES}"
                )
            det = DETECTOR_NAMES.index(parts[2])
            if not 0 <= slot < L:
                raise ParseError(f"{path}:{lineno}: slot {slot} outside [0, {L})")
            if not 0 <= block < n_blocks:
                raise ParseError(
                    f"{path}:{lineno}: block {block} outside [0, {n_blocks})"
                )
            abs_slot = block * L + slot
            key = abs_slot * 2 + det
            if key <= prev_key:
                raise ParseError(
                    f"{path}:{lineno}: events not strictly sorted by "
                    "(block, slot, detector)"
                )
            prev_key = key
            slots.append(abs_slot)
            dets.append(det)
    return np.asarray(slots, np.int64), np.asarray(dets, np.uint8)


_TALLY_KEYS = (
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
)


def _tally_dict(tally: SiftTally) -> dict:
    return {key: getattr(tally, key) for key in _TALLY_KEYS}


def _read_tally_json(path: Path) -> SiftTally:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: tally must be a JSON object")
    missing = [k for k in _TALLY_KEYS if k not in data]
    extra = [k for k in data if k not in _TALLY_KEYS]
    if missing or extra:
        raise ParseError(
            f"{path}: bad tally keys (missing {missing or 'none'}, "
            f"unexpected {extra or 'none'})"
        )
    try:
        return SiftTally(**{k: data[k] for k in _TALLY_KEYS})
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: inconsistent tally: {exc}") from exc


_DEFAULT_PHYSICS = ExperimentConfig()


def _security_input(tally: SiftTally, values: dict, v_th: int) -> SecurityInput:
    convention = values.get("gain_convention", GAIN_SIFTED_OVER_EMITTED)
    try:
        return SecurityInput(
            n_sifted=tally.blocks_sifted,
            e_b=tally.e_b,
            L=tally.block_size,
            v_th=v_th,
            mu=values.get("mu_alice", _DEFAULT_PHYSICS.mu_alice),
            Q=tally.gain(convention),
            m=tally.m,
            M=tally.total_pulses,
            f=values.get("f", 1.0),
            s=values.get("s", 100.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_analyze(args) -> int:
    values = _load_values(args)
    if bool(args.tally) == bool(args.events):
        raise ConfigError("analyze needs exactly one of --events or --tally")
    discarded_deadtime = 0
    if args.events:
        if not args.phases:
            raise ConfigError("--events requires --phases (the sender's bits)")
        cfg = _experiment_config(values)
        packed, n_blocks = _read_phases_csv(args.phases, cfg.L)
        abs_slots, dets = _read_events_csv(args.events, cfg.L, n_blocks)
        record = EventRecord(
            n_slots=n_blocks * cfg.L,
            slot_origin=0,
            abs_slots=abs_slots,
            detectors=dets,
            phases=packed,
            counts_c=0,
            counts_d=0,
        )
        tally, _ = sift_pipeline(
            record, cfg.L, cfg.seed, cfg.dead_window_slots
        )
        seed = cfg.seed
    else:
        tally = _read_tally_json(args.tally)
        seed = values.get("seed", 0)
    config_echo = dict(values)
    config_echo.setdefault("f", 1.0)
    config_echo.setdefault("s", 100.0)
    config_echo.setdefault("gain_convention", GAIN_SIFTED_OVER_EMITTED)
    report_doc = {
        "command": "analyze",
        "config": config_echo,
        "tally": _tally_dict(tally),
        "no_key": True,
        "analysis": None,
    }
    files = {"tally.json": _json_text(_tally_dict(tally))}
    if tally.blocks_sifted == 0:
        report_doc["reason"] = "nothing sifted"
        files["report.json"] = _json_text(report_doc)
        _write_outputs(args.out, "analyze", config_echo, seed, files)
        print("analyze: no key (nothing sifted)")
        return EXIT_NO_KEY
    v_th_setting = values.get("v_th", None)
    try:
        if v_th_setting is None:
            inp = _security_input(tally, values, v_th=1)
            v_th, report = optimize_v_th(inp)
        else:
            inp = _security_input(tally, values, v_th=v_th_setting)
            v_th, report = v_th_setting, evaluate(inp)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report_doc["analysis"] = {
        "N_em": tally.blocks_emitted,
        "N": tally.blocks_sifted,
        "e_b": tally.e_b,
        "m": tally.m,
        "M": tally.total_pulses,
        "Q": inp.Q,
        "v_th": v_th,
        "e_src": report.e_src,
        "e_p": report.e_p,
        "e_p_clamped": report.e_p_clamped,
        "H_EC": report.h_ec,
        "H_PA": report.h_pa,
        "K": report.key_length,
        "key_rate_per_pulse": report.key_rate_per_pulse,
    }
    report_doc["no_key"] = not report.has_positive_key
    if report_doc["no_key"]:
        report_doc["reason"] = "key length not positive"
    files["report.json"] = _json_text(report_doc)
    _write_outputs(args.out, "analyze", config_echo, seed, files)
    if report_doc["no_key"]:
        print(f"analyze: no key (K = {report.key_length})")
        return EXIT_NO_KEY
    print(
        f"analyze: N = {tally.blocks_sifted}, e_b = {tally.e_b:.4f}, "
        f"K = {report.key_length}"
    )
    return EXIT_OK


def _scan_config(values: dict) -> ScanConfig:
    physics = _experiment_config(values)
    kwargs = {}
    for key, field in (
        ("l_list", "l_list"),
        ("distances_km", "distances_km"),
        ("trials", "trials"),
        ("slots_per_trial", "slots_per_trial"),
        ("phase_segment_slots", "phase_segment_slots"),
        ("f", "f"),
        ("s", "s"),
        ("gain_convention", "gain_convention"),
    ):
        if key in values:
            kwargs[field] = values[key]
    try:
        return ScanConfig(physics=physics, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_scan(args) -> int:
    values = _load_values(args)
    cfg = _scan_config(values)
    result = scan_L(cfg)
    curve_lines = [CURVE_HEADER]
    for p in sorted(result.points, key=lambda p: (p.distance_km, p.L, p.trial)):
        fields = [
            _fmt(p.distance_km),
            _fmt(p.L),
            _fmt(p.trial),
            _fmt(p.tally.blocks_emitted),
            _fmt(p.tally.blocks_sifted),
            _fmt(p.tally.e_b) if p.tally.blocks_sifted else "nan",
            _fmt(p.v_th),
            _fmt(p.report.e_src) if p.ok else "",
            _fmt(p.report.e_p) if p.ok else "",
            _fmt(p.report.key_length) if p.ok else "",
            _fmt(p.report.key_rate_per_pulse) if p.ok else "",
        ]
        curve_lines.append(",".join(fields))
    optima_lines = [OPTIMA_HEADER]
    for row in result.optima:
        optima_lines.append(
            ",".join(
                [
                    _fmt(row.distance_km),
                    _fmt(row.mu),
                    _fmt(row.L),
                    _fmt(row.v_th),
                    _fmt(row.e_b),
                    _fmt(row.e_p),
                ]
            )
        )
    config_echo = dict(values)
    _write_outputs(
        args.out,
        "scan",
        config_echo,
        cfg.physics.seed,
        {
            "curve.csv": "\n".join(curve_lines) + "\n",
            "optima.csv": "\n".join(optima_lines) + "\n",
        },
    )
    n_ok = sum(1 for p in result.points if p.ok)
    print(
        f"scan: {len(result.points)} points ({n_ok} analyzed), "
        f"{len(result.optima)} optima -> {args.out}"
    )
    return EXIT_OK


def cmd_oracle(args) -> int:
    values = _load_values(args)
    l_max = values.get("l_max", 8)
    rule = values.get("boundary_rule", DEFAULT_BOUNDARY_RULE)
    if rule not in BOUNDARY_RULES:
        raise ConfigError(f"boundary_rule must be one of {BOUNDARY_RULES}")
    if not 3 <= l_max <= 8:
        raise ConfigError(f"l_max must be in [3, 8], got {l_max}")
    report = equivalence_report(l_max)
    report["default_rule"] = rule
    report["default_rule_equivalent"] = report["max_tv_by_rule"][rule] < 1e-9
    config_echo = {"l_max": l_max, "boundary_rule": rule}
    _write_outputs(
        args.out,
        "oracle",
        config_echo,
        None,
        {"equivalence.json": _json_text(report)},
    )
    print(
        f"oracle: L <= {l_max}, max TV under {rule!r} rule = "
        f"{report['max_tv_by_rule'][rule]:.3g}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrdps",
        description=(
            "Photon-level simulator and finite-key analyzer for the "
            "passive round-robin DPS protocol."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, out=True):
        p.add_argument("--config", type=Path, help="flat key=value config file")
        p.add_argument("--seed", type=int, help="64-bit run seed")
        if out:
            p.add_argument(
                "--out", type=Path, default=Path("."), help="output directory"
            )

    sim = sub.add_parser("simulate", help="emit events.csv and phases.csv")
    common(sim)
    sim.add_argument("--blocks", type=int, help="number of blocks to simulate")

    ana = sub.add_parser("analyze", help="security analysis of events or a tally")
    common(ana)
    ana.add_argument("--events", type=Path, help="events.csv input")
    ana.add_argument("--phases", type=Path, help="phases.csv companion input")
    ana.add_argument("--tally", type=Path, help="tally.json input (skips sifting)")
    ana.add_argument("--vth", help="photon threshold, integer or 'auto'")
    ana.add_argument("--f", type=float, help="error-correction efficiency")
    ana.add_argument("--s", type=float, help="security exponent")

    scn = sub.add_parser("scan", help="key-rate curve over block sizes")
    common(scn)
    scn.add_argument("--l-list", dest="l_list", type=_int_list, help="comma list of L")
    scn.add_argument("--f", type=float, help="error-correction efficiency")
    scn.add_argument("--s", type=float, help="security exponent")

    orc = sub.add_parser("oracle", help="exact equivalence report")
    common(orc)
    orc.add_argument("--l-max", dest="l_max", type=int, default=None)
    orc.add_argument(
        "--boundary-rule",
        dest="boundary_rule",
        choices=BOUNDARY_RULES,
        help="active-model out-of-range rule",
    )
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "scan": cmd_scan,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
