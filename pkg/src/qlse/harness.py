"""Monte-Carlo experiments: seeded trials, metrics and CRB overlays.

Trial ``t`` of an experiment with base seed ``s`` draws everything from
``SeedSequence(s, spawn_key=(t,))``. Sweep points that share ``N, M, K`` and
the seed therefore see the same frequencies, weights and noise direction,
which makes comparisons across bit depths and SNRs paired.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .crb import IllConditionedFIMWarning, SingularFIMError, crb_for_truth
from .ep import EpOptions, run_mvalse_ep
from .metrics import dnmse_db, freq_mse_db, match_frequencies, nmse_db
from .model import ConfigError, TruthConfig, doa_to_freq, freq_to_doa, generate_truth, wrap_angle
from .mvalse import MvalseOptions
from .quantizer import QuantizerSpec, build_uniform, quantize_matrix

log = logging.getLogger(__name__)

ORDER_NMSE_GATE_DB = -10.0
ANALOG = "analog"


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def default_half_range(K: int) -> float:
    """Three standard deviations of the real part of a K-tone signal with unit weights."""
    return 3.0 * np.sqrt(K / 2.0)


@dataclass
class ExperimentConfig:
    N: int
    M: int
    K: int
    L: int | list = 4
    snr_db: float | list = 10.0
    bits: int | str | list = 3  # bit depth or "analog"
    trials: int = 50
    seed: int = 0
    row_policy: str = "random"
    half_range: float | None = None  # quantizer range, default from K
    doa_angles: list | None = None  # degrees; fixes the frequencies when given
    per_row_dnmse: bool = False
    threads: int = 1
    estimator: dict = field(default_factory=dict)  # EpOptions fields, "inner" holds MvalseOptions fields

    def __post_init__(self):
        errs = []
        for name in ("N", "M", "K", "trials"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                errs.append(f"{name} must be a positive integer (got {v!r})")
        for name in ("L", "snr_db", "bits"):
            if not _as_list(getattr(self, name)):
                errs.append(f"{name} sweep list is empty")
        for L in _as_list(self.L):
            if not isinstance(L, (int, np.integer)) or L < 1:
                errs.append(f"L must be a positive integer (got {L!r})")
        for b in _as_list(self.bits):
            if b != ANALOG and (not isinstance(b, (int, np.integer)) or isinstance(b, bool) or b < 1):
                errs.append(f"bits must be a positive integer or 'analog' (got {b!r})")
        for s in _as_list(self.snr_db):
            if isinstance(s, bool) or not isinstance(s, (int, float)) or not np.isfinite(s):
                errs.append(f"snr_db must be a finite number (got {s!r})")
        if isinstance(self.M, int) and isinstance(self.N, int) and self.M > self.N:
            errs.append("M must not exceed N")
        if self.row_policy not in ("random", "prefix"):
            errs.append(f"row_policy must be 'random' or 'prefix' (got {self.row_policy!r})")
        if self.half_range is not None and not self.half_range > 0:
            errs.append("half_range must be positive")
        if self.doa_angles is not None:
            a = np.asarray(self.doa_angles, dtype=float)
            if a.size != self.K:
                errs.append("doa_angles must have K entries")
            elif np.any(np.abs(a) >= 90):
                errs.append("doa_angles must satisfy |angle| < 90 degrees")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            errs.append("seed must be a nonnegative integer")
        if not isinstance(self.threads, int) or self.threads < 1:
            errs.append("threads must be a positive integer")
        try:
            self.ep_options()
        except (TypeError, ConfigError) as exc:
            errs.append(f"estimator: {exc}")
        if errs:
            raise ConfigError("; ".join(errs))

    def ep_options(self) -> EpOptions:
        est = dict(self.estimator)
        inner = MvalseOptions(**est.pop("inner", {}))
        return EpOptions(inner=inner, **est)

    def points(self):
        """Sweep points as single-valued configs, SNR outermost."""
        for snr, bits, L in itertools.product(_as_list(self.snr_db), _as_list(self.bits), _as_list(self.L)):
            yield dataclasses.replace(self, snr_db=float(snr), bits=bits, L=int(L))

    def quantizer(self) -> QuantizerSpec:
        if self.bits == ANALOG:
            return QuantizerSpec.analog()
        h = self.half_range if self.half_range is not None else default_half_range(self.K)
        return build_uniform(int(self.bits), h)

    def truth_config(self) -> TruthConfig:
        fixed = None if self.doa_angles is None else tuple(doa_to_freq(self.doa_angles))
        return TruthConfig(N=self.N, M=self.M, K=self.K, L=int(self.L), snr_db=float(self.snr_db),
                           row_policy=self.row_policy, seed=None, fixed_frequencies=fixed)


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    seed: int
    snr_db: float
    bits: str
    L: int
    K_hat: int
    nmse_db: float
    dnmse_db: float
    dnmse10_db: float  # same debiased ratio with the 10 log10 constant
    freq_mse_db: float | None  # only for order-correct trials
    order_correct: bool
    runtime_ms: float
    outer_iters_used: int
    crb_trace_db: float  # 10 log10 trace of the frequency CRB at the truth
    kappa_matched: float  # mean concentration of estimates matched to true tones
    doa_mse_db: float | None = None
    error: str | None = None

    def __post_init__(self):
        if (self.freq_mse_db is not None) != self.order_correct:
            raise ValueError("freq_mse_db must be present exactly for order-correct trials")


def trial_rng(seed: int, trial_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial_id,)))


def _crb_trace_db(truth, spec):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IllConditionedFIMWarning)
            crb = crb_for_truth(truth.frequencies, truth.weights, truth.rows.indices,
                                truth.noise_var, spec)
    except SingularFIMError:
        return float("nan")
    return float(10 * np.log10(np.trace(crb)))


def run_trial(cfg: ExperimentConfig, trial_id: int) -> TrialRecord:
    """One seeded trial at a single sweep point."""
    rng = trial_rng(cfg.seed, trial_id)
    truth, _, Y = generate_truth(cfg.truth_config(), rng)
    spec = cfg.quantizer()
    data = Y if spec.is_analog else quantize_matrix(Y, spec)
    Zt = truth.z_full()
    crb_db = _crb_trace_db(truth, spec)
    base = dict(trial_id=trial_id, seed=cfg.seed, snr_db=float(cfg.snr_db), bits=str(cfg.bits),
                L=int(cfg.L), crb_trace_db=crb_db)
    t0 = time.perf_counter()
    try:
        res = run_mvalse_ep(data, truth.noise_var, truth.rows, cfg.ep_options())
    except Exception as exc:  # recorded, not propagated
        log.warning("trial %d failed: %s", trial_id, exc)
        return TrialRecord(K_hat=-1, nmse_db=float("nan"), dnmse_db=float("nan"),
                           dnmse10_db=float("nan"), freq_mse_db=None, order_correct=False,
                           runtime_ms=1e3 * (time.perf_counter() - t0), outer_iters_used=0,
                           kappa_matched=float("nan"), error=f"{type(exc).__name__}: {exc}", **base)
    runtime_ms = 1e3 * (time.perf_counter() - t0)

    nm = nmse_db(res.z_full, Zt)
    dn = dnmse_db(res.z_full, Zt, per_row=cfg.per_row_dnmse)
    dn10 = dnmse_db(res.z_full, Zt, scale=10.0, per_row=cfg.per_row_dnmse)
    # sign data fix the signal only up to scale, so the gate uses the debiased error
    gate = dn if cfg.bits == 1 else nm
    correct = res.K_hat == truth.K and gate <= ORDER_NMSE_GATE_DB
    fmse = freq_mse_db(res.theta, truth.frequencies) if correct else None
    kappa = float("nan")
    if res.K_hat > 0:
        i, _ = match_frequencies(res.theta, truth.frequencies)
        kappa = float(np.mean(res.kappa[i]))
    doa = None
    if correct and cfg.doa_angles is not None:
        i, j = match_frequencies(res.theta, truth.frequencies)
        est = freq_to_doa(wrap_angle(res.theta[i]))
        err = est - np.asarray(cfg.doa_angles, dtype=float)[j]
        doa = float(max(20 * np.log10(np.linalg.norm(err)), -300.0)) if np.any(err) else -300.0
    return TrialRecord(K_hat=res.K_hat, nmse_db=nm, dnmse_db=dn, dnmse10_db=dn10, freq_mse_db=fmse,
                       order_correct=bool(correct), runtime_ms=runtime_ms,
                       outer_iters_used=res.outer_iters, kappa_matched=kappa, doa_mse_db=doa, **base)


def _nanmean(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else float("nan")


def summarize(records, K: int) -> dict:
    """Aggregate trial records (sorted by trial id first, so order never matters)."""
    recs = sorted(records, key=lambda r: r.trial_id)
    ok = [r for r in recs if r.error is None]
    gated = [r for r in ok if r.order_correct]
    fm = np.array([r.freq_mse_db for r in gated], dtype=float)
    crb = np.array([r.crb_trace_db for r in recs], dtype=float)
    crb = crb[np.isfinite(crb)]
    out = {
        "n_trials": len(recs),
        "n_failed": len(recs) - len(ok),
        "n_order_correct": len(gated),
        "p_order_correct": len(gated) / len(recs) if recs else float("nan"),
        "p_k_correct": float(np.mean([r.K_hat == K for r in recs])) if recs else float("nan"),
        "mean_nmse_db": _nanmean([r.nmse_db for r in ok]),
        "mean_dnmse_db": _nanmean([r.dnmse_db for r in ok]),
        "mean_dnmse10_db": _nanmean([r.dnmse10_db for r in ok]),
        # mean of per-trial dB values, and dB of the mean squared error
        "mean_freq_mse_db": _nanmean(fm),
        "freq_mse_db": float(10 * np.log10(np.mean(10 ** (fm / 10)))) if fm.size else float("nan"),
        "crb_trace_db": float(10 * np.log10(np.mean(10 ** (crb / 10)))) if crb.size else float("nan"),
        "mean_kappa_matched": _nanmean([r.kappa_matched for r in ok]),
        "mean_outer_iters": _nanmean([r.outer_iters_used for r in ok]),
        "mean_runtime_ms": _nanmean([r.runtime_ms for r in recs]),
    }
    doa = [r.doa_mse_db for r in gated if r.doa_mse_db is not None]
    if doa:
        d = np.asarray(doa)
        out["doa_mse_db"] = float(10 * np.log10(np.mean(10 ** (d / 10))))
    return out


def run_monte_carlo(cfg: ExperimentConfig, trial_ids=None):
    """Run all trials of a single sweep point; returns ``(records, summary)``."""
    if any(isinstance(getattr(cfg, n), (list, tuple)) for n in ("snr_db", "bits", "L")):
        raise ConfigError("run_monte_carlo takes a single sweep point; use run_sweep")
    ids = range(cfg.trials) if trial_ids is None else trial_ids
    if cfg.threads > 1:
        from joblib import Parallel, delayed
        recs = Parallel(n_jobs=cfg.threads)(delayed(run_trial)(cfg, t) for t in ids)
    else:
        recs = [run_trial(cfg, t) for t in ids]
    recs = sorted(recs, key=lambda r: r.trial_id)
    return recs, summarize(recs, cfg.K)


def run_sweep(cfg: ExperimentConfig):
    """Every sweep point of ``cfg``: list of ``(point_cfg, records, summary)``."""
    out = []
    for p in cfg.points():
        log.info("point snr=%g bits=%s L=%d", p.snr_db, p.bits, p.L)
        recs, summ = run_monte_carlo(p)
        out.append((p, recs, summ))
    return out


def run_doa(cfg: ExperimentConfig):
    """Fixed-angle array scenario; frequencies are ``pi sin(angle)`` in every trial."""
    if cfg.doa_angles is None:
        raise ConfigError("run_doa needs doa_angles")
    return run_monte_carlo(cfg)
