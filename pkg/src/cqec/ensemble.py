"""Ensembles of conditioned trajectories: configuration, aggregation, sweeps and output files.

Trajectory ``i`` always draws its Wiener increments from ``NoiseStream(master_seed, i)``
and the batched integrator does only per-column arithmetic, so every
trajectory's numbers are independent of batch size and worker count.
Aggregates are computed once over the index-ordered array, which makes whole
runs bit-reproducible under any parallel schedule.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analytics import baseline_fidelities, crossing_time
from .codes import load_code
from .feedback import LAW_KINDS, FeedbackLaw
from .reduced import ReducedSystem
from .sme import MAX_STEPS, NoiseStream, SmeModel, integrate_batch
from .states import mixed_codespace_state, pure_state

__all__ = [
    "RunConfig",
    "ConfigError",
    "AbortRateError",
    "EnsembleResult",
    "SweepRow",
    "CONTROLLER_MODES",
    "CSV_HEADER",
    "ABORT_LIMIT",
    "build_model",
    "initial_state",
    "run_ensemble",
    "sweep",
    "emit_outputs",
    "write_sweep_csv",
]

CONTROLLER_MODES = ("true-state", "mixed-state", "reduced-coefficients")
CSV_HEADER = ["t", "f_cw_mean", "f_cw_sem", "f_corr_mean", "f_corr_sem", "f_codespace_mean", "F1", "F3", "F3bar"]
SWEEP_HEADER = ["kappa_over_gamma", "lambda_over_gamma", "tau", "tau_sem", "f_corr_probe", "f_corr_probe_sem",
                "f_cw_probe", "f_cw_probe_sem", "n_aborted", "status"]
ABORT_LIMIT = 0.01


class ConfigError(ValueError):
    pass


class AbortRateError(RuntimeError):
    """More than 1% of trajectories aborted. ``result`` holds the statistics of the survivors."""

    def __init__(self, message: str, result: "EnsembleResult"):
        super().__init__(message)
        self.result = result


def _fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass
class RunConfig:
    """All knobs of a run.

    Rates (``gamma``, ``kappa``, ``lambda``) are absolute; ``dt``, ``t_final``,
    ``probe_time`` and ``state_times`` are in units of ``1/gamma``; sweep grids
    hold ``kappa/gamma`` and ``lambda/gamma``. In files and on the command line
    the feedback strength key is ``lambda``.
    """

    code: str = "bitflip"
    noise: str = "bitflip"
    gamma: float = 1.0
    kappa: float = 64.0
    lambda_: float = 128.0
    dt: float = 1e-5
    t_final: float = 0.3
    n_traj: int = 1000
    master_seed: int = 20240101
    feedback_law: str = "optimal"
    epsilon: float = 0.05
    eta: float = 0.0
    sign_zero: float = 1.0
    decimation: int = 100
    controller: str = "true-state"
    initial_amplitudes: list = field(default_factory=lambda: [1.0, 0.0])
    output_dir: str = "cqec_output"
    output_stem: str = "ensemble"
    kappa_grid: list = field(default_factory=lambda: [16.0, 64.0, 256.0])
    lambda_grid: list = field(default_factory=lambda: [80.0, 128.0])
    probe_time: float = 0.2
    crossing_window: int = 10
    state_times: list = field(default_factory=list)
    batch_size: int = 256
    workers: int = 1

    # ---- serialisation -------------------------------------------------
    @staticmethod
    def _key(name: str) -> str:
        return "lambda" if name == "lambda_" else name

    @classmethod
    def keys(cls) -> list[str]:
        return [cls._key(f.name) for f in dataclasses.fields(cls)]

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[self._key(f.name)] = list(v) if isinstance(v, (list, tuple)) else v
        out["initial_amplitudes"] = [_amp_to_json(a) for a in self.initial_amplitudes]
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        if "config" in doc and isinstance(doc["config"], dict):  # a run manifest
            doc = dict(doc["config"])
        unknown = set(doc) - set(cls.keys())
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kw = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, value in doc.items():
            name = "lambda_" if key == "lambda" else key
            kw[name] = _coerce(name, types[name], value)
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} does not contain a mapping")
        return cls.from_dict(doc)

    @classmethod
    def preset(cls, name: str, **overrides) -> "RunConfig":
        """``desk`` (the defaults) or ``fine`` (dt = 1e-6 and 10^4 trajectories)."""
        presets = {"desk": {}, "fine": {"dt": 1e-6, "n_traj": 10_000, "decimation": 1000}}
        if name not in presets:
            raise ConfigError(f"unknown preset {name!r}")
        cfg = dataclasses.replace(cls(), **presets[name], **overrides)
        cfg.validate()
        return cfg

    def replace(self, **kw) -> "RunConfig":
        if "lambda" in kw:
            kw["lambda_"] = kw.pop("lambda")
        cfg = dataclasses.replace(self, **kw)
        cfg.validate()
        return cfg

    # ---- checks and derived quantities ---------------------------------
    def validate(self) -> None:
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive (times are measured in units of 1/gamma)")
        if min(self.kappa, self.lambda_) < 0:
            raise ConfigError("rates must be non-negative")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.dt <= 0 or self.t_final < 0:
            raise ConfigError("dt must be positive and t_final non-negative")
        if self.steps > MAX_STEPS:
            raise ConfigError(f"{self.steps} steps exceeds the budget of {MAX_STEPS}")
        if self.decimation < 1 or self.batch_size < 1 or self.workers < 1:
            raise ConfigError("decimation, batch_size and workers must be >= 1")
        if self.controller not in CONTROLLER_MODES:
            raise ConfigError(f"controller must be one of {CONTROLLER_MODES}")
        if self.feedback_law not in LAW_KINDS:
            raise ConfigError(f"feedback_law must be one of {LAW_KINDS}")
        if self.eta < 0 or self.epsilon <= 0:
            raise ConfigError("eta must be >= 0 and epsilon > 0")
        if min(list(self.kappa_grid) + list(self.lambda_grid) + [0.0]) < 0:
            raise ConfigError("sweep grids must be non-negative")
        if self.crossing_window < 1:
            raise ConfigError("crossing_window must be >= 1")
        for t in list(self.state_times) + [self.probe_time]:
            if t < 0:
                raise ConfigError("probe and state times must be non-negative")

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def dt_physical(self) -> float:
        return self.dt / self.gamma

    def law(self) -> FeedbackLaw:
        return FeedbackLaw(self.feedback_law, epsilon=self.epsilon, deadband=self.eta, sign_zero=self.sign_zero)


def _amp_to_json(a):
    a = complex(a)
    return a.real if a.imag == 0 else str(a)


def _coerce(name: str, typ, value):
    try:
        if name == "initial_amplitudes":
            return [complex(str(v).replace(" ", "")) if isinstance(v, str) else v for v in value]
        if typ in ("list", list):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return [float(v) for v in value]
        if typ in ("float", float):
            return float(value)
        if typ in ("int", int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"{value} is not an integer")
            return int(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name!r}: {exc}") from None


# --------------------------------------------------------------------------


def build_model(cfg: RunConfig) -> SmeModel:
    return SmeModel.build(cfg.code, gamma=cfg.gamma, kappa=cfg.kappa, lambda_max=cfg.lambda_,
                          law=cfg.law(), noise=cfg.noise)


def initial_state(cfg: RunConfig, code=None):
    """``sum_j amp_j |codeword_j>`` for the configured amplitudes, as a density matrix."""
    code = code or load_code(cfg.code)
    if not code.codewords:
        raise ConfigError(f"code {code.name!r} has no explicit codewords to start from")
    amps = np.asarray([complex(a) for a in cfg.initial_amplitudes])
    if len(amps) != len(code.codewords):
        raise ConfigError(f"need {len(code.codewords)} initial amplitudes, got {len(amps)}")
    norm = float(np.sum(np.abs(amps) ** 2))
    if abs(norm - 1) > 1e-12:
        raise ConfigError(f"initial amplitudes are not normalized (sum |a|^2 = {norm})")
    psi = sum(a * w for a, w in zip(amps, code.codewords))
    return pure_state(psi)


@dataclass
class EnsembleResult:
    """Index-ordered ensemble statistics; times are in units of ``1/gamma``."""

    times: np.ndarray
    f_cw_mean: np.ndarray
    f_cw_sem: np.ndarray
    f_corr_mean: np.ndarray
    f_corr_sem: np.ndarray
    f_code_mean: np.ndarray
    f_code_sem: np.ndarray
    F1: np.ndarray
    F3: np.ndarray
    F3bar: np.ndarray
    tau: float | None
    tau_sem: float | None
    n_traj: int
    n_aborted: int
    state_mean: dict = field(default_factory=dict)
    state_sem: dict = field(default_factory=dict)

    @property
    def n_used(self) -> int:
        return self.n_traj - self.n_aborted

    def index_at(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not on the sample grid")
        return i

    def at(self, name: str, t: float) -> float:
        return float(getattr(self, name)[self.index_at(t)])


def _simulate_chunk(cfg_doc: dict, start: int, stop: int, snapshot_steps: tuple):
    cfg = RunConfig.from_dict(cfg_doc)
    model = build_model(cfg)
    rho0 = initial_state(cfg, model.code)
    controller = None
    if cfg.controller == "mixed-state":
        controller = mixed_codespace_state(model.code)
    elif cfg.controller == "reduced-coefficients":
        controller = ReducedSystem(model)
    streams = [NoiseStream(cfg.master_seed, i) for i in range(start, stop)]
    res = integrate_batch(model, rho0, cfg.dt_physical, cfg.steps, streams, cfg.decimation,
                          controller=controller, snapshot_steps=snapshot_steps)
    return res.f_cw, res.f_corr, res.f_code, res.aborted, res.snapshots


def _mean_sem(x: np.ndarray):
    mean = x.mean(axis=0)
    if x.shape[0] < 2:
        return mean, np.full(mean.shape, np.nan)
    return mean, x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])


def _tau_with_sem(times, f_cw, f_cw_sem, f1, window):
    tau = crossing_time(times, f_cw, f1, window)
    if tau is None:
        return None, None
    diff = f_cw - f1
    i = int(np.searchsorted(times, tau))
    if i == 0:
        return tau, 0.0
    slope = (diff[i] - diff[i - 1]) / (times[i] - times[i - 1])
    sem = np.interp(tau, times, f_cw_sem)
    return tau, float(sem / abs(slope)) if slope != 0 else float("inf")


def run_ensemble(cfg: RunConfig) -> EnsembleResult:
    """Simulate ``cfg.n_traj`` trajectories and aggregate them in index order.

    Raises :class:`AbortRateError` if more than 1% of the trajectories
    aborted; aborted trajectories are excluded from every statistic.
    """
    cfg.validate()
    doc = cfg.to_dict()
    snap_steps = tuple(sorted({int(round(t / cfg.dt)) for t in cfg.state_times}))
    chunks = [(s, min(s + cfg.batch_size, cfg.n_traj)) for s in range(0, cfg.n_traj, cfg.batch_size)]
    if cfg.workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_simulate_chunk, *zip(*[(doc, a, b, snap_steps) for a, b in chunks])))
    else:
        parts = [_simulate_chunk(doc, a, b, snap_steps) for a, b in chunks]

    f_cw = np.concatenate([p[0] for p in parts])
    f_corr = np.concatenate([p[1] for p in parts])
    f_code = np.concatenate([p[2] for p in parts])
    aborted = np.concatenate([p[3] for p in parts])
    keep = ~aborted
    n_samples = f_cw.shape[1]
    times = np.arange(n_samples) * cfg.decimation * cfg.dt

    cw_m, cw_s = _mean_sem(f_cw[keep])
    corr_m, corr_s = _mean_sem(f_corr[keep])
    code_m, code_s = _mean_sem(f_code[keep])
    f1, f3, f3bar = baseline_fidelities(times)

    state_mean, state_sem = {}, {}
    d = int(round(math.sqrt(parts[0][4][snap_steps[0]].shape[0]))) if snap_steps else 0
    for t in cfg.state_times:
        k = int(round(t / cfg.dt))
        S = np.concatenate([p[4][k] for p in parts], axis=1)[:, keep].T
        m = S.mean(axis=0)
        s = (S.real.std(axis=0, ddof=1) + 1j * S.imag.std(axis=0, ddof=1)) / math.sqrt(S.shape[0]) \
            if S.shape[0] > 1 else np.full(m.shape, np.nan)
        state_mean[float(t)] = m.reshape(d, d)
        state_sem[float(t)] = s.reshape(d, d)

    tau, tau_sem = (None, None)
    if keep.any():
        tau, tau_sem = _tau_with_sem(times, cw_m, cw_s, f1, cfg.crossing_window)
    result = EnsembleResult(times, cw_m, cw_s, corr_m, corr_s, code_m, code_s, f1, f3, f3bar,
                            tau, tau_sem, cfg.n_traj, int(aborted.sum()), state_mean, state_sem)
    if result.n_aborted > ABORT_LIMIT * cfg.n_traj:
        raise AbortRateError(f"{result.n_aborted} of {cfg.n_traj} trajectories aborted "
                             f"(limit {ABORT_LIMIT:.0%})", result)
    return result


# --------------------------------------------------------------------------


@dataclass
class SweepRow:
    kappa_over_gamma: float
    lambda_over_gamma: float
    tau: float | None = None
    tau_sem: float | None = None
    f_corr_probe: float = float("nan")
    f_corr_probe_sem: float = float("nan")
    f_cw_probe: float = float("nan")
    f_cw_probe_sem: float = float("nan")
    n_aborted: int = 0
    status: str = "ok"

    def as_row(self) -> list[str]:
        def num(v):
            return "" if v is None else _fmt(v)
        return [num(self.kappa_over_gamma), num(self.lambda_over_gamma), num(self.tau), num(self.tau_sem),
                num(self.f_corr_probe), num(self.f_corr_probe_sem), num(self.f_cw_probe),
                num(self.f_cw_probe_sem), str(self.n_aborted), self.status]


def sweep(cfg: RunConfig, progress=None) -> list[SweepRow]:
    """One ensemble per ``(kappa/gamma, lambda/gamma)`` grid point, kappa-major.

    Every cell reuses ``master_seed``, so cells share noise realisations.
    A failing cell is recorded with its status and the sweep moves on.
    """
    if not cfg.kappa_grid or not cfg.lambda_grid:
        raise ConfigError("sweep grids must be non-empty")
    rows = []
    for kg in cfg.kappa_grid:
        for lg in cfg.lambda_grid:
            row = SweepRow(float(kg), float(lg))
            try:
                res = run_ensemble(cfg.replace(kappa=kg * cfg.gamma, lambda_=lg * cfg.gamma))
            except AbortRateError as exc:
                res, row.status = exc.result, f"failed: {exc}"
            except (ArithmeticError, ValueError) as exc:
                row.status = f"failed: {exc}"
                rows.append(row)
                continue
            i = res.index_at(cfg.probe_time)
            row.tau, row.tau_sem = res.tau, res.tau_sem
            row.f_corr_probe, row.f_corr_probe_sem = float(res.f_corr_mean[i]), float(res.f_corr_sem[i])
            row.f_cw_probe, row.f_cw_probe_sem = float(res.f_cw_mean[i]), float(res.f_cw_sem[i])
            row.n_aborted = res.n_aborted
            rows.append(row)
            if progress:
                progress(row)
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_HEADER)
            for r in rows:
                w.writerow(r.as_row())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from None
    return path


_PLOT_SCRIPT = '''"""Plot fidelity curves from {csv_name} (generated by cqec {version})."""
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
src = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "{csv_name}"
with src.open() as fh:
    rows = list(csv.DictReader(fh))
col = {{k: [float(r[k]) for r in rows] for k in rows[0]}}
t = col["t"]

fig, ax = plt.subplots(figsize=(6, 4))
for key, label in (("f_cw", "F_cw (feedback)"), ("f_corr", "F_corr (feedback)")):
    m, s = col[key + "_mean"], col[key + "_sem"]
    line, = ax.plot(t, m, label=label)
    ax.fill_between(t, [a - b for a, b in zip(m, s)], [a + b for a, b in zip(m, s)],
                    color=line.get_color(), alpha=0.25, linewidth=0)
ax.plot(t, col["F1"], "k--", label="F1 (one bare qubit)")
ax.plot(t, col["F3"], "k:", label="F3 (three bare qubits)")
ax.plot(t, col["F3bar"], "k-.", label="F3bar (discrete QEC)")
ax.set_xlabel("gamma t")
ax.set_ylabel("fidelity")
ax.legend(loc="lower left")
fig.tight_layout()
out = src.with_suffix(".png")
fig.savefig(out, dpi=150)
print(out)
'''


def emit_outputs(result: EnsembleResult, cfg: RunConfig, out_dir=None) -> dict[str, Path]:
    """Write ``<stem>.csv``, ``<stem>.manifest.json`` and ``plot_<stem>.py``.

    The manifest stores the full configuration, so ``cqec run --config
    <manifest>`` reproduces the CSV byte for byte.
    """
    out = Path(out_dir or cfg.output_dir)
    stem = cfg.output_stem
    paths = {"csv": out / f"{stem}.csv", "manifest": out / f"{stem}.manifest.json",
             "plot": out / f"plot_{stem}.py"}
    try:
        out.mkdir(parents=True, exist_ok=True)
        with paths["csv"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            cols = (result.times, result.f_cw_mean, result.f_cw_sem, result.f_corr_mean, result.f_corr_sem,
                    result.f_code_mean, result.F1, result.F3, result.F3bar)
            for row in zip(*cols):
                w.writerow([_fmt(v) for v in row])
        digest = hashlib.sha256(paths["csv"].read_bytes()).hexdigest()
        manifest = {
            "cqec_version": __version__,
            "master_seed": cfg.master_seed,
            "n_traj": result.n_traj,
            "n_aborted": result.n_aborted,
            "tau": result.tau,
            "tau_sem": result.tau_sem,
            "csv": paths["csv"].name,
            "csv_sha256": digest,
            "config": cfg.to_dict(),
        }
        paths["manifest"].write_text(json.dumps(manifest, indent=2) + "\n")
        paths["plot"].write_text(_PLOT_SCRIPT.format(csv_name=paths["csv"].name, version=__version__))
    except OSError as exc:
        raise OSError(f"cannot write outputs under {out}: {exc}") from None
    return paths
