"""Command-line interface: ``run``, ``estimate`` and ``crb``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime or
numerical error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .crb import FisherParams, IllConditionedFIMWarning, SingularFIMError, crb_frequencies, \
    fim_quantized, fim_unquantized
from .ep import run_mvalse_ep
from .harness import ANALOG, ExperimentConfig, TrialRecord, default_half_range, run_monte_carlo
from .model import ConfigError, RowSet, TruthConfig, doa_to_freq, freq_to_doa, generate_truth, wrap_angle
from .quantizer import QuantizedData, QuantizerSpec, build_uniform

log = logging.getLogger("qlse")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
# runtime is wall-clock dependent and goes to its own file so trials.csv is reproducible
TRIAL_COLUMNS = [f.name for f in dataclasses.fields(TrialRecord) if f.name != "runtime_ms"]


class InputError(ConfigError):
    pass


# ---------------------------------------------------------------- serialization

def fmt(x) -> str:
    """Scalar as text; floats with 17 significant digits, missing values empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else f"{float(x):.17g}"
    return str(x)


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits (non-finite floats become null)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return f"{float(obj):.17g}" if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


def write_json(path: Path, obj) -> None:
    path.write_text(to_json(obj) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------- config

def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _parse_bits(text: str):
    if text == ANALOG:
        return ANALOG
    try:
        b = int(text)
    except ValueError:
        raise ConfigError(f"--bits must be a positive integer or 'analog' (got {text!r})") from None
    if b < 1:
        raise ConfigError("--bits must be >= 1")
    return b


def experiment_from_dict(raw: dict) -> ExperimentConfig:
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    required = [f.name for f in dataclasses.fields(ExperimentConfig)
                if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING]
    errs = [f"unknown key {k!r}" for k in raw if k not in names]
    errs += [f"missing required key {k!r}" for k in required if k not in raw]
    if errs:
        raise ConfigError("; ".join(errs))
    return ExperimentConfig(**raw)


# ---------------------------------------------------------------- run

def cmd_run(args) -> int:
    raw = load_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.trials is not None:
        raw["trials"] = args.trials
    if args.bits is not None:
        raw["bits"] = _parse_bits(args.bits)
    raw["threads"] = args.threads or raw.get("threads", os.cpu_count() or 1)
    cfg = experiment_from_dict(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trials": "trials.csv", "summary": "summary.json", "timing": "timing.csv"}
    manifest = {"tool": "qlse", "version": __version__, "config": dataclasses.asdict(cfg),
                "seed": cfg.seed, "outputs": paths, "started": _now(), "finished": None}
    write_json(out / "manifest.json", manifest)

    summaries = []
    with open(out / "trials.csv", "w", newline="") as ft, open(out / "timing.csv", "w", newline="") as fr:
        wt, wr = csv.writer(ft, lineterminator="\n"), csv.writer(fr, lineterminator="\n")
        wt.writerow(TRIAL_COLUMNS)
        wr.writerow(["snr_db", "bits", "L", "trial_id", "runtime_ms"])
        for p in cfg.points():
            recs, summ = run_monte_carlo(p)
            for r in recs:
                wt.writerow([fmt(getattr(r, c)) for c in TRIAL_COLUMNS])
                wr.writerow([fmt(p.snr_db), p.bits, p.L, r.trial_id, fmt(r.runtime_ms)])
            summaries.append({"snr_db": p.snr_db, "bits": str(p.bits), "L": p.L, **summ})
            log.info("snr=%g bits=%s L=%d: P(K)=%.2f nmse=%.2f dB", p.snr_db, p.bits, p.L,
                     summ["p_order_correct"], summ["mean_nmse_db"])
    write_json(out / "summary.json", summaries)
    manifest["finished"] = _now()
    write_json(out / "manifest.json", manifest)
    failed = sum(s["n_failed"] for s in summaries)
    if failed:
        print(f"warning: {failed} trial(s) failed; see trials.csv", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- estimate

def read_quantizer(path) -> QuantizerSpec:
    raw = load_config(path)
    unknown = set(raw) - {"bits", "thresholds", "half_range"}
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    if "bits" not in raw:
        raise ConfigError(f"{path}: missing 'bits'")
    bits = raw["bits"]
    try:
        if "thresholds" in raw:
            return QuantizerSpec(tuple(raw["thresholds"]), int(bits))
        return build_uniform(int(bits), float(raw.get("half_range", 1.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def read_measurements(path, spec: QuantizerSpec | None, N: int | None):
    """Parse a long-format CSV into ``(data, rows)``.

    Analog files have the header ``m,l,re,im``; quantized files ``m,l,re_idx,im_idx``.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: line 1: empty file")
        header = [h.strip() for h in header]
        if header == ["m", "l", "re", "im"]:
            quantized = False
        elif header == ["m", "l", "re_idx", "im_idx"]:
            quantized = True
        else:
            raise InputError(f"{path}: line 1: header must be 'm,l,re,im' or 'm,l,re_idx,im_idx'")
        entries = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise InputError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                m, l = int(row[0]), int(row[1])
                vals = (int(row[2]), int(row[3])) if quantized else (float(row[2]), float(row[3]))
            except ValueError:
                raise InputError(f"{path}: line {lineno}: cannot parse {row}") from None
            if m < 0 or l < 0:
                raise InputError(f"{path}: line {lineno}: negative index")
            if (m, l) in entries:
                raise InputError(f"{path}: line {lineno}: duplicate entry (m={m}, l={l})")
            entries[(m, l)] = vals
    if not entries:
        raise InputError(f"{path}: no data rows")
    ms = sorted({k[0] for k in entries})
    L = max(k[1] for k in entries) + 1
    if len(entries) != len(ms) * L:
        raise InputError(f"{path}: every row m needs one entry per snapshot l = 0..{L - 1}")
    n_full = N if N is not None else ms[-1] + 1
    rows = RowSet(np.asarray(ms), n_full)
    pos = {m: i for i, m in enumerate(ms)}
    a = np.zeros((len(ms), L, 2))
    for (m, l), v in entries.items():
        a[pos[m], l] = v
    if not quantized:
        if spec is not None and not spec.is_analog:
            raise InputError(f"{path}: analog samples given together with a quantizer description")
        return a[..., 0] + 1j * a[..., 1], rows
    if spec is None or spec.is_analog:
        raise InputError(f"{path}: quantized indices need a quantizer description (--quantizer)")
    try:
        data = QuantizedData(a[..., 0].astype(np.int64), a[..., 1].astype(np.int64), spec)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return data, rows


def cmd_estimate(args) -> int:
    spec = None
    qpath = args.quantizer
    if qpath is None:
        side = Path(str(args.input) + ".quantizer.json")
        qpath = side if side.exists() else None
    if qpath is not None:
        spec = read_quantizer(qpath)
    if args.bits is not None:
        b = _parse_bits(args.bits)
        if spec is not None and b != spec.bits:
            raise ConfigError(f"--bits {b} disagrees with the quantizer description ({spec.bits} bits)")
        if spec is None and b != ANALOG:
            raise ConfigError("--bits given without a quantizer description")
    if not args.sigma2 > 0:
        raise ConfigError("--sigma2 must be positive")
    data, rows = read_measurements(args.input, spec, args.N)
    res = run_mvalse_ep(data, args.sigma2, rows)
    theta = wrap_angle(res.theta)
    out = {
        "K_hat": res.K_hat,
        "theta_rad": theta,
        "doa_deg": freq_to_doa(theta),
        "weights_re": res.weights.real, "weights_im": res.weights.imag,
        "mu": res.mu, "kappa": res.kappa,
        "z_full_re": res.z_full.real, "z_full_im": res.z_full.imag,
        "outer_iters": res.outer_iters, "converged": res.converged,
    }
    if args.out:
        write_json(Path(args.out), out)
    else:
        sys.stdout.write(to_json(out) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- crb

CRB_KEYS = {"N", "M", "K", "L", "snr_db", "seed", "row_policy", "half_range", "doa_angles", "bits",
            "theta", "weights_re", "weights_im", "rows", "sigma2"}
# experiment keys that do not affect the bound; a run config is accepted as is
CRB_IGNORED = {"trials", "threads", "estimator", "per_row_dnmse"}


def _first(x):
    return x[0] if isinstance(x, list) and x else x


def _crb_instance(raw: dict):
    """Either an explicit instance or one drawn like a Monte-Carlo trial."""
    if "theta" in raw:
        missing = [k for k in ("weights_re", "weights_im", "rows", "sigma2") if k not in raw]
        if missing:
            raise ConfigError(f"explicit instance needs {missing}")
        theta = np.atleast_1d(np.asarray(raw["theta"], dtype=float))
        W = np.asarray(raw["weights_re"], dtype=float) + 1j * np.asarray(raw["weights_im"], dtype=float)
        W = W.reshape(theta.size, -1)
        rows = np.asarray(raw["rows"], dtype=np.int64)
        sigma2 = float(raw["sigma2"])
        if not sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        return theta, W, rows, sigma2
    missing = [k for k in ("N", "M", "K") if k not in raw]
    if missing:
        raise ConfigError(f"missing required key(s) {missing}")
    fixed = tuple(doa_to_freq(raw["doa_angles"])) if raw.get("doa_angles") is not None else None
    # sweep lists draw the instance at their first point
    tc = TruthConfig(N=raw["N"], M=raw["M"], K=raw["K"], L=_first(raw.get("L", 1)),
                     snr_db=_first(raw.get("snr_db", 10.0)),
                     row_policy=raw.get("row_policy", "random"), seed=raw.get("seed", 0),
                     fixed_frequencies=fixed)
    truth, _, _ = generate_truth(tc)
    sigma2 = float(raw.get("sigma2", truth.noise_var))
    return truth.frequencies, truth.weights, truth.rows.indices, sigma2


def cmd_crb(args) -> int:
    raw = load_config(args.config)
    unknown = set(raw) - CRB_KEYS - CRB_IGNORED
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}")
    if args.seed is not None:
        raw["seed"] = args.seed
    bits = [_parse_bits(args.bits)] if args.bits is not None else raw.get("bits", [1, 3, ANALOG])
    bits = bits if isinstance(bits, list) else [bits]
    theta, W, rows, sigma2 = _crb_instance(raw)
    params = FisherParams.from_weights(theta, W)
    sigma = np.sqrt(sigma2)
    h = float(raw.get("half_range", default_half_range(params.K)))
    lines = [["bits", "status", "crb_trace_db"] + [f"crb_theta{k}_db" for k in range(params.K)] + ["note"]]
    failed = False
    for b in bits:
        if b == ANALOG:
            F = fim_unquantized(params, rows, sigma)
        else:
            if isinstance(b, bool) or not isinstance(b, int) or b < 1:
                raise ConfigError(f"bits entries must be positive integers or 'analog' (got {b!r})")
            F = fim_quantized(params, rows, sigma, build_uniform(b, h))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", IllConditionedFIMWarning)
            try:
                c = crb_frequencies(F, params.K)
            except SingularFIMError as exc:
                failed = True
                lines.append([str(b), "singular", "", *[""] * params.K, f"condition {exc.cond:.3g}"])
                continue
        note = "pseudo-inverse" if caught else ""
        d = np.diag(c)
        lines.append([str(b), "ok", fmt(10 * np.log10(np.trace(c))), *[fmt(10 * np.log10(x)) for x in d], note])
    text = "\n".join(",".join(r) for r in lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_RUNTIME if failed else EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlse", description="Line spectral estimation from quantized snapshots.")
    p.add_argument("--version", action="version", version=f"qlse {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="Monte-Carlo experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--bits", help="bit depth or 'analog' (overrides the config)")
    r.add_argument("--trials", type=int)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("estimate", help="estimate tones from a measurement CSV")
    e.add_argument("input", help="CSV with header m,l,re,im or m,l,re_idx,im_idx")
    e.add_argument("--sigma2", type=float, required=True, help="complex noise variance per entry")
    e.add_argument("--quantizer", help="quantizer JSON (default: <input>.quantizer.json if present)")
    e.add_argument("--bits", help="expected bit depth, checked against the quantizer")
    e.add_argument("--N", type=int, help="full sample count (default: largest m + 1)")
    e.add_argument("--out", help="result JSON (default: stdout)")
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("crb", help="frequency CRB per bit depth")
    c.add_argument("--config", required=True)
    c.add_argument("--out", help="CSV output (default: stdout)")
    c.add_argument("--bits", help="single bit depth or 'analog'")
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_crb)
    return p


def _setup_logging():
    level = os.environ.get("QLSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
