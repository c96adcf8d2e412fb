"""Random problem instances: spectra, ground truth, sampling patterns, noise, bundles on disk."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .diagnostics import incoherence_mu
from .model import FactorPair, LowRankMatrix, ProblemInstance
from .operators import GaussianEnsemble, MeasurementModel, SamplingPattern, read_pattern, write_pattern
from .rng import stream


class PatternInfeasibleError(RuntimeError):
    """No pattern with >= r entries per row and column within the attempt budget."""


@dataclass(frozen=True)
class SpectrumSpec:
    r: int
    kappa: float = 10.0
    profile: Union[str, Sequence[float]] = "equispaced"

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("rank must be positive")
        if not self.kappa >= 1:
            raise ValueError("condition number must be >= 1")

    def values(self) -> np.ndarray:
        """Singular values, descending, in ``[1, kappa]``."""
        if isinstance(self.profile, str):
            if self.profile == "equispaced":
                s = np.linspace(self.kappa, 1.0, self.r) if self.r > 1 else np.array([self.kappa])
            elif self.profile == "geometric":
                s = np.geomspace(self.kappa, 1.0, self.r) if self.r > 1 else np.array([self.kappa])
            else:
                raise ValueError(f"unknown spectrum profile {self.profile!r}")
        else:
            s = np.sort(np.asarray(self.profile, dtype=np.float64))[::-1]
            if s.size != self.r:
                raise ValueError(f"explicit spectrum has {s.size} values, rank is {self.r}")
            if np.any(s <= 0):
                raise ValueError("singular values must be positive")
        return s


def random_low_rank(n1: int, n2: int, spec: SpectrumSpec, seed: int) -> LowRankMatrix:
    """``X* = U Sigma V^T`` with U, V the Q-factors of i.i.d. Gaussian matrices."""
    r = spec.r
    if r > min(n1, n2):
        raise ValueError(f"rank {r} exceeds dimensions {n1}x{n2}")
    rng = stream(seed, "factors")
    u = np.linalg.qr(rng.standard_normal((n1, r)))[0]
    v = np.linalg.qr(rng.standard_normal((n2, r)))[0]
    s = spec.values()
    root = np.sqrt(s)
    return LowRankMatrix(FactorPair(u * root, v * root), spectrum_hint=s)


def pattern_size(n1: int, n2: int, r: int, rho: float) -> int:
    """``m = round(rho (n1 + n2 - r) r)``, halves rounded up."""
    return int(math.floor(rho * (n1 + n2 - r) * r + 0.5))


def pattern_ok(rows: np.ndarray, cols: np.ndarray, n1: int, n2: int, r: int) -> bool:
    return bool(np.bincount(rows, minlength=n1).min() >= r and np.bincount(cols, minlength=n2).min() >= r)


def draw_candidate(rng: np.random.Generator, n1: int, n2: int, m: int):
    """Uniform m-subset of the n1*n2 entries, as (rows, cols)."""
    idx = rng.choice(n1 * n2, size=m, replace=False)
    return np.divmod(idx, n2)


def sample_pattern(n1: int, n2: int, r: int, rho: float, seed: int,
                   max_attempts: int = 150) -> SamplingPattern:
    """Uniform sampling without replacement, redrawing the whole pattern until
    every row and column holds at least r entries."""
    m = pattern_size(n1, n2, r, rho)
    if m > n1 * n2:
        raise ValueError(f"rho={rho} asks for {m} entries of a {n1}x{n2} matrix")
    rng = stream(seed, "pattern")
    for _ in range(max_attempts):
        rows, cols = draw_candidate(rng, n1, n2, m)
        if pattern_ok(rows, cols, n1, n2, r):
            return SamplingPattern(n1, n2, rows, cols)
    raise PatternInfeasibleError(
        f"no {n1}x{n2} pattern with m={m} and >= {r} entries per row/column in {max_attempts} attempts")


def make_observations(truth: LowRankMatrix, model: MeasurementModel, noise_sigma: float,
                      seed: int) -> np.ndarray:
    b = model.apply(truth)
    if noise_sigma > 0:
        b = b + noise_sigma * stream(seed, "noise").standard_normal(model.m)
    return b


def completion_instance(n1: int, n2: int, r: int, kappa: float, rho: float, seed: int,
                        noise_sigma: float = 0.0, profile="equispaced",
                        max_attempts: int = 150) -> ProblemInstance:
    truth = random_low_rank(n1, n2, SpectrumSpec(r, kappa, profile), seed)
    pattern = sample_pattern(n1, n2, r, rho, seed, max_attempts)
    b = make_observations(truth, pattern, noise_sigma, seed)
    return ProblemInstance(truth=truth, model=pattern, b=b, noise_sigma=noise_sigma, seed=seed,
                           kappa=kappa, rho=rho)


def sensing_instance(n1: int, n2: int, r: int, kappa: float, m: int, seed: int,
                     noise_sigma: float = 0.0, profile="equispaced") -> ProblemInstance:
    truth = random_low_rank(n1, n2, SpectrumSpec(r, kappa, profile), seed)
    model = GaussianEnsemble(n1, n2, m, seed=seed)
    b = make_observations(truth, model, noise_sigma, seed)
    return ProblemInstance(truth=truth, model=model, b=b, noise_sigma=noise_sigma, seed=seed,
                           kappa=kappa, rho=m / ((n1 + n2 - r) * r))


# -- instance bundles ----------------------------------------------------------

PATTERN_FILE = "pattern.txt"
OBS_FILE = "observations.txt"
META_FILE = "meta.txt"


def write_bundle(directory, inst: ProblemInstance, profile="equispaced") -> Path:
    if not isinstance(inst.model, SamplingPattern):
        raise TypeError("bundles hold completion instances only")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_pattern(d / PATTERN_FILE, inst.model)
    write_pattern(d / OBS_FILE, inst.model, inst.b)
    n1, n2 = inst.model.shape
    meta = {
        "n1": n1, "n2": n2, "r": inst.rank, "kappa": repr(float(inst.kappa)),
        "mu_measured": repr(float(incoherence_mu(inst.truth))), "rho": repr(float(inst.rho)),
        "noise_sigma": repr(float(inst.noise_sigma)), "seed": inst.seed,
        "profile": profile if isinstance(profile, str) else ",".join(map(repr, profile)),
    }
    (d / META_FILE).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return d


def read_meta(path) -> dict:
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"malformed metadata line {line!r}")
        meta[key.strip()] = val.strip()
    return meta


def read_bundle(directory) -> ProblemInstance:
    """Load a bundle; the ground truth is regenerated from (n1, n2, r, kappa, profile, seed)."""
    d = Path(directory)
    meta = read_meta(d / META_FILE)
    pattern, b = read_pattern(d / OBS_FILE)
    if b is None:
        raise ValueError("observation file lacks a value column")
    if (d / PATTERN_FILE).exists() and read_pattern(d / PATTERN_FILE)[0] != pattern:
        raise ValueError("pattern file and observation file disagree")
    n1, n2, r, seed = (int(meta[k]) for k in ("n1", "n2", "r", "seed"))
    kappa = float(meta["kappa"])
    profile = meta.get("profile", "equispaced")
    if profile not in ("equispaced", "geometric"):
        profile = [float(x) for x in profile.split(",")]
    truth = random_low_rank(n1, n2, SpectrumSpec(r, kappa, profile), seed)
    return ProblemInstance(truth=truth, model=pattern, b=b, noise_sigma=float(meta["noise_sigma"]),
                           seed=seed, kappa=kappa, mu=float(meta.get("mu_measured", "nan")),
                           rho=float(meta["rho"]))
