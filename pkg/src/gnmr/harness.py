"""Sweep engine: grids of completion instances, per-variant GNMR runs, CSV output.

Config files are INI-style (``configparser``) with four sections::

    [sweep]
    axis = oversampling          # oversampling | condition_number | noise_sigma | dimension
    grid = 1.5, 2.0, 2.5
    trials = 20
    master_seed = 0
    variants = setting, updating, averaging+bal, alpha=0.5
    init = spectral              # spectral | exact
    workers = 1

    [instance]
    n1 = 400
    n2 = 400
    r = 5
    kappa = 10
    profile = equispaced         # equispaced | geometric
    rho = 2.5                    # used unless axis = oversampling
    noise_sigma = 0

    [gnmr]
    preset = default             # default | low_oversampling
    max_outer = 100
    max_inner = 1500
    inner_tol = 1e-12

    [stopping]
    eps_rmse = 1e-14
    eps_diff = 1e-14
    window_len = 200
    window_ratio = 0.5

Every key except ``[sweep] grid`` has a default. Keys given in ``[gnmr]``
override the preset.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .algorithm import parse_variant, run_gnmr, variant_name
from .diagnostics import SUCCESS_THRESHOLD, rel_rmse
from .model import GnmrConfig, StoppingCriteria
from .probgen import completion_instance
from .rng import derive_seed
from .spectral import InitConfig, bsvd, spectral_init

AXES = ("oversampling", "condition_number", "noise_sigma", "dimension")
DATA_HEADER = ("axis_value", "variant", "trial", "rel_rmse", "success", "outer_iters", "wall_ms")

# (max_outer, max_inner)
PRESETS = {"default": (100, 1500), "low_oversampling": (700, 7000)}


class ConfigError(ValueError):
    """Malformed sweep configuration."""


@dataclass(frozen=True)
class Variant:
    alpha: float
    balancing: bool = False

    @property
    def name(self) -> str:
        return variant_name(self.alpha, self.balancing)

    @classmethod
    def parse(cls, text: str) -> "Variant":
        text = text.strip()
        bal = text.endswith("+bal")
        if bal:
            text = text[:-len("+bal")]
        return cls(parse_variant(text), bal)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    grid: tuple
    trials_per_point: int = 1
    n1: int = 100
    n2: int = 100
    r: int = 5
    kappa: float = 10.0
    profile: str = "equispaced"
    rho: float = 2.5
    noise_sigma: float = 0.0
    variants: tuple = (Variant(1.0),)
    max_outer: int = 100
    max_inner: int = 1500
    inner_tol: float = 1e-12
    stopping: StoppingCriteria = field(default_factory=StoppingCriteria)
    master_seed: int = 0
    init: str = "spectral"
    workers: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if len(self.grid) == 0:
            raise ConfigError("grid must be nonempty")
        if self.trials_per_point < 1:
            raise ConfigError("trials_per_point must be >= 1")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        if self.init not in ("spectral", "exact"):
            raise ConfigError(f"init must be 'spectral' or 'exact', got {self.init!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be nonnegative")

    def instance_params(self, value: float) -> dict:
        """Instance parameters at one grid value."""
        p = dict(n1=self.n1, n2=self.n2, r=self.r, kappa=self.kappa, rho=self.rho,
                 noise_sigma=self.noise_sigma)
        if self.axis == "oversampling":
            p["rho"] = float(value)
        elif self.axis == "condition_number":
            p["kappa"] = float(value)
        elif self.axis == "noise_sigma":
            p["noise_sigma"] = float(value)
        else:
            if float(value) != int(value):
                raise ConfigError(f"dimension grid values must be integers, got {value!r}")
            p["n1"] = p["n2"] = int(value)
        return p

    def gnmr_config(self, variant: Variant) -> GnmrConfig:
        return GnmrConfig(rank=self.r, alpha=variant.alpha, max_outer=self.max_outer,
                          max_inner=self.max_inner, inner_tol=self.inner_tol,
                          balancing=variant.balancing, stopping=self.stopping)


@dataclass(frozen=True)
class TrialResult:
    axis_value: float
    variant: str
    trial: int
    rel_rmse: float
    success: bool
    outer_iters: int
    wall_ms: float
    error: str = ""


@dataclass(frozen=True)
class Aggregate:
    axis_value: float
    variant: str
    median_rel_rmse: float
    success_rate: float


@dataclass
class SweepResult:
    trials: list
    aggregates: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DATA_HEADER)
        for t in self.trials:
            w.writerow([repr(t.axis_value), t.variant, t.trial, repr(t.rel_rmse), int(t.success),
                        t.outer_iters, f"{t.wall_ms:.3f}"])
        for a in self.aggregates:
            w.writerow([repr(a.axis_value), a.variant, "AGG", repr(a.median_rel_rmse),
                        repr(a.success_rate), "", ""])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def trial_seed(master_seed: int, point: int, trial: int) -> int:
    """Seed of one (grid point, trial); shared by all variants so they see the same instance."""
    return derive_seed(master_seed, point, trial)


def run_trial(spec: SweepSpec, point: int, trial: int) -> list:
    """All variants on one instance. Failures become rows with rel_rmse = inf."""
    value = spec.grid[point]
    seed = trial_seed(spec.master_seed, point, trial)
    out = []
    try:
        p = spec.instance_params(value)
        inst = completion_instance(p["n1"], p["n2"], p["r"], p["kappa"], p["rho"], seed,
                                   noise_sigma=p["noise_sigma"], profile=spec.profile)
        if spec.init == "exact":
            z0 = bsvd(inst.truth, spec.r)
        else:
            z0 = spectral_init(inst.model, inst.b, InitConfig(rank=spec.r)).z
    except Exception as exc:  # pattern infeasible, bad parameters, SVD failure
        msg = f"{type(exc).__name__}: {exc}"
        return [TrialResult(float(value), v.name, trial, math.inf, False, 0, 0.0, msg)
                for v in spec.variants]
    for v in spec.variants:
        start = time.perf_counter()
        try:
            est, trace = run_gnmr(z0, inst.model, inst.b, spec.gnmr_config(v))
            err = rel_rmse(est, inst.truth)
            iters, msg = len(trace) - 1, ""
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            partial = getattr(exc, "trace", None)
            err, msg = math.inf, f"{type(exc).__name__}: {exc}"
            iters = len(partial) - 1 if partial is not None else 0
        if not math.isfinite(err):
            err = math.inf
        wall = 1000.0 * (time.perf_counter() - start)
        out.append(TrialResult(float(value), v.name, trial, float(err), err <= SUCCESS_THRESHOLD,
                               iters, wall, msg))
    return out


def aggregate(trials: list) -> list:
    """Median rel-RMSE and success rate per (axis value, variant); order of ``trials`` is irrelevant."""
    groups: dict = {}
    for t in trials:
        groups.setdefault((t.axis_value, t.variant), []).append(t)
    out = []
    for (value, name), rows in sorted(groups.items()):
        errs = np.sort([t.rel_rmse for t in rows])
        out.append(Aggregate(value, name, float(np.median(errs)),
                             sum(t.success for t in rows) / len(rows)))
    return out


def run_sweep(spec: SweepSpec) -> SweepResult:
    jobs = [(i, k) for i in range(len(spec.grid)) for k in range(spec.trials_per_point)]
    if spec.workers == 1:
        chunks = [run_trial(spec, i, k) for i, k in jobs]
    else:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(lambda job: run_trial(spec, *job), jobs))
    order = {v.name: j for j, v in enumerate(spec.variants)}
    trials = sorted((t for chunk in chunks for t in chunk),
                    key=lambda t: (t.axis_value, order[t.variant], t.trial))
    return SweepResult(trials=trials, aggregates=aggregate(trials))


# -- config files ---------------------------------------------------------------

def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(text: str) -> tuple:
    vals = tuple(float(x) for x in text.replace(",", " ").split())
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("grid values must be finite")
    return vals


def parse_config(text: str) -> SweepSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = {"sweep", "instance", "gnmr", "stopping"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    if not cp.has_option("sweep", "grid"):
        raise ConfigError("[sweep] grid is required")

    preset = _get(cp, "gnmr", "preset", str, "default")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    outer, inner = PRESETS[preset]
    base = StoppingCriteria()
    try:
        stopping = StoppingCriteria(
            eps_rmse=_get(cp, "stopping", "eps_rmse", float, base.eps_rmse),
            eps_diff=_get(cp, "stopping", "eps_diff", float, base.eps_diff),
            window_len=_get(cp, "stopping", "window_len", int, base.window_len),
            window_ratio=_get(cp, "stopping", "window_ratio", float, base.window_ratio),
            use_rmse=_get(cp, "stopping", "use_rmse", _bool, True),
            use_diff=_get(cp, "stopping", "use_diff", _bool, True),
            use_window=_get(cp, "stopping", "use_window", _bool, True),
        )
        variants = tuple(Variant.parse(v) for v in
                         _get(cp, "sweep", "variants", lambda s: [x for x in s.split(",") if x.strip()],
                              ["setting"]))
        spec = SweepSpec(
            axis=_get(cp, "sweep", "axis", str.strip, "oversampling"),
            grid=_get(cp, "sweep", "grid", _floats, ()),
            trials_per_point=_get(cp, "sweep", "trials", int, 1),
            master_seed=_get(cp, "sweep", "master_seed", int, 0),
            init=_get(cp, "sweep", "init", str.strip, "spectral"),
            workers=_get(cp, "sweep", "workers", int, 1),
            variants=variants,
            n1=_get(cp, "instance", "n1", int, 100),
            n2=_get(cp, "instance", "n2", int, 100),
            r=_get(cp, "instance", "r", int, 5),
            kappa=_get(cp, "instance", "kappa", float, 10.0),
            profile=_get(cp, "instance", "profile", str.strip, "equispaced"),
            rho=_get(cp, "instance", "rho", float, 2.5),
            noise_sigma=_get(cp, "instance", "noise_sigma", float, 0.0),
            max_outer=_get(cp, "gnmr", "max_outer", int, outer),
            max_inner=_get(cp, "gnmr", "max_inner", int, inner),
            inner_tol=_get(cp, "gnmr", "inner_tol", float, 1e-12),
            stopping=stopping,
        )
        for v in variants:
            spec.gnmr_config(v)  # validates budgets and tolerances
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return spec


def load_config(path) -> SweepSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def with_overrides(spec: SweepSpec, **kw) -> SweepSpec:
    """Copy of ``spec`` with the non-None keyword values replaced."""
    return replace(spec, **{k: v for k, v in kw.items() if v is not None})


def read_csv(text: str) -> tuple[list, list]:
    """Parse :meth:`SweepResult.to_csv` output back into (data rows, aggregate rows) as dicts."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != DATA_HEADER:
        raise ValueError("not a sweep CSV")
    data, agg = [], []
    for row in rows[1:]:
        if row[2] == "AGG":
            agg.append({"axis_value": float(row[0]), "variant": row[1],
                        "median_rel_rmse": float(row[3]), "success_rate": float(row[4])})
        else:
            data.append(dict(zip(DATA_HEADER, row)))
    return data, agg
