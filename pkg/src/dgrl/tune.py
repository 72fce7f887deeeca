"""Hyperparameter search: uniform random sampling and an
independent-dimension Tree-structured Parzen Estimator.

Numeric dimensions model log-uniform values in log10 space and integer
ranges as continuous values rounded at materialization.  The TPE split
puts the best gamma fraction of ok trials into the "good" set, fits one
Parzen mixture per dimension per set, draws candidates from the good
mixture, and keeps the candidate with the largest sum of per-dimension
log-likelihood ratios.
"""

import json
import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import AllTrialsFailed, InvalidSpec, ParseError

TPE_GAMMA = 0.25
TPE_CANDIDATES = 24
TPE_WARMUP = 10
BANDWIDTH_FLOOR = 1e-3

CATEGORICAL = "categorical"
UNIFORM = "uniform"
LOG_UNIFORM = "log_uniform"
INT_UNIFORM = "int_uniform"
_NUMERIC = (UNIFORM, LOG_UNIFORM, INT_UNIFORM)


@dataclass(frozen=True)
class Dimension:
    kind: str
    values: tuple = ()
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.kind == CATEGORICAL:
            if not self.values:
                raise InvalidSpec("categorical dimension needs values")
        elif self.kind in _NUMERIC:
            if not self.lo < self.hi:
                raise InvalidSpec(f"need lo < hi, got [{self.lo}, {self.hi}]")
            if self.kind == LOG_UNIFORM and self.lo <= 0:
                raise InvalidSpec("log-uniform needs lo > 0")
        else:
            raise InvalidSpec(f"unknown dimension kind {self.kind!r}")

    # model space: the coordinates kernels live in
    def to_model(self, x):
        return math.log10(x) if self.kind == LOG_UNIFORM else float(x)

    def bounds_model(self):
        return (self.to_model(self.lo), self.to_model(self.hi))

    def materialize(self, v):
        """Model-space value -> config value."""
        lo_m, hi_m = self.bounds_model()
        v = min(max(v, lo_m), hi_m)
        if self.kind == LOG_UNIFORM:
            return 10.0 ** v
        if self.kind == INT_UNIFORM:
            return int(min(max(round(v), self.lo), self.hi))
        return v


def categorical(*values):
    return Dimension(CATEGORICAL, values=tuple(values))


def uniform(lo, hi):
    return Dimension(UNIFORM, lo=float(lo), hi=float(hi))


def log_uniform(lo, hi):
    return Dimension(LOG_UNIFORM, lo=float(lo), hi=float(hi))


def int_uniform(lo, hi):
    return Dimension(INT_UNIFORM, lo=int(lo), hi=int(hi))


class SearchSpace:
    """Ordered named dimensions; iteration order is definition order."""

    def __init__(self, dims):
        if not dims:
            raise InvalidSpec("search space has no dimensions")
        for name, dim in dims.items():
            if not isinstance(dim, Dimension):
                raise InvalidSpec(f"dimension {name!r} is not a Dimension")
        self.dims = dict(dims)

    def items(self):
        return self.dims.items()

    def __getitem__(self, name):
        return self.dims[name]

    def __contains__(self, name):
        return name in self.dims


def default_space(backbone, pe_active=False):
    """Per-backbone search space; the transformer composition gets smaller
    widths and depths, the spectral backbone a narrower learning range."""
    gps = backbone == "gps_t"
    dims = {
        "batch_size": (categorical(64, 128, 256) if gps
                       else categorical(64, 128, 256, 512, 1024)),
        "lr": log_uniform(5e-4 if backbone == "magnet" else 1e-4, 1e-2),
        "dropout": categorical(0.0, 0.1, 0.2, 0.3),
        "hidden_dim": int_uniform(96, 288 if gps else 336),
        "num_layers": int_uniform(3, 6 if gps else 8),
        "mlp_layers": int_uniform(2, 5),
    }
    if pe_active:
        dims["q"] = categorical(0.0, 0.1)
    return SearchSpace(dims)


@dataclass(frozen=True)
class Trial:
    trial_id: int
    config: dict
    objective: Optional[float]
    status: str                   # ok | failed
    wall_s: float = 0.0

    def __post_init__(self):
        if self.status not in ("ok", "failed"):
            raise InvalidSpec(f"unknown trial status {self.status!r}")
        if (self.objective is None) == (self.status == "ok"):
            raise InvalidSpec("objective must be present exactly when ok")


def sample_uniform(space, rng):
    """One independent draw per dimension; log dims uniform in log10."""
    config = {}
    for name, dim in space.items():
        if dim.kind == CATEGORICAL:
            config[name] = dim.values[rng.integers(len(dim.values))]
        elif dim.kind == INT_UNIFORM:
            config[name] = int(rng.integers(dim.lo, dim.hi + 1))
        else:
            lo_m, hi_m = dim.bounds_model()
            config[name] = dim.materialize(rng.uniform(lo_m, hi_m))
    return config


def mixture_logpdf(x, centers, bandwidth):
    """Log density of an equal-weight Gaussian mixture at x."""
    z = (x - np.asarray(centers, dtype=np.float64)) / bandwidth
    log_norm = -0.5 * np.log(2.0 * np.pi) - np.log(bandwidth)
    comps = log_norm - 0.5 * z * z
    peak = comps.max()
    return float(peak + np.log(np.mean(np.exp(comps - peak))))


def _bandwidth(dim, count):
    lo_m, hi_m = dim.bounds_model()
    spread = hi_m - lo_m
    return max(spread / math.sqrt(count), BANDWIDTH_FLOOR * spread)


def categorical_probs(values, observed):
    """Add-one-smoothed frequencies over the dimension's values."""
    counts = np.array([sum(1 for o in observed if o == v) for v in values],
                      dtype=np.float64)
    return (counts + 1.0) / (len(observed) + len(values))


def split_good_bad(trials, gamma=TPE_GAMMA):
    """Ok trials sorted ascending by objective, best ceil(gamma*n) first."""
    ok = [t for t in trials if t.status == "ok"]
    ok.sort(key=lambda t: t.objective)
    n_good = max(1, math.ceil(gamma * len(ok)))
    return ok[:n_good], ok[n_good:]


def tpe_suggest(space, history, rng, gamma=TPE_GAMMA,
                n_candidates=TPE_CANDIDATES):
    """Next config under a minimize convention; pure uniform sampling until
    the history holds TPE_WARMUP ok trials."""
    ok_count = sum(1 for t in history if t.status == "ok")
    if ok_count < TPE_WARMUP:
        return sample_uniform(space, rng)
    good, bad = split_good_bad(history, gamma)
    if not bad:                      # degenerate split, nothing to contrast
        bad = good
    # per-dimension densities are the same for every candidate
    stats = []
    for name, dim in space.items():
        if dim.kind == CATEGORICAL:
            p_good = categorical_probs(dim.values,
                                       [t.config[name] for t in good])
            p_bad = categorical_probs(dim.values,
                                      [t.config[name] for t in bad])
            stats.append((name, dim, p_good, p_bad))
        else:
            centers_good = np.array([dim.to_model(t.config[name])
                                     for t in good])
            centers_bad = np.array([dim.to_model(t.config[name])
                                    for t in bad])
            bw_good = _bandwidth(dim, len(centers_good))
            bw_bad = _bandwidth(dim, len(centers_bad))
            stats.append((name, dim, (centers_good, bw_good),
                          (centers_bad, bw_bad)))
    best_config = None
    best_score = -np.inf
    for _ in range(n_candidates):
        config = {}
        score = 0.0
        for name, dim, s_good, s_bad in stats:
            if dim.kind == CATEGORICAL:
                idx = rng.choice(len(dim.values), p=s_good)
                config[name] = dim.values[idx]
                score += math.log(s_good[idx]) - math.log(s_bad[idx])
            else:
                centers_good, bw_good = s_good
                centers_bad, bw_bad = s_bad
                pick = centers_good[rng.integers(len(centers_good))]
                lo_m, hi_m = dim.bounds_model()
                v = min(max(rng.normal(pick, bw_good), lo_m), hi_m)
                config[name] = dim.materialize(v)
                score += (mixture_logpdf(v, centers_good, bw_good)
                          - mixture_logpdf(v, centers_bad, bw_bad))
        if score > best_score:
            best_score = score
            best_config = config
    return best_config


def tune(space, objective, budget=100, seed=123, direction="minimize",
         gamma=TPE_GAMMA, n_candidates=TPE_CANDIDATES, jobs=1):
    """Sequential TPE loop; returns (best trial, full history).

    Failed trials (objective raised) are recorded and excluded from the
    densities.  jobs > 1 draws that many suggestions from a frozen history
    before evaluating them, which is deterministic but not identical to
    the sequential schedule.
    """
    if budget < 1:
        raise InvalidSpec("budget must be >= 1")
    if direction not in ("minimize", "maximize"):
        raise InvalidSpec(f"unknown direction {direction!r}")
    if jobs < 1:
        raise InvalidSpec("jobs must be >= 1")
    sign = 1.0 if direction == "minimize" else -1.0
    rng = np.random.default_rng(seed)
    history = []

    def tpe_view():
        return [t if t.status == "failed" or sign > 0
                else replace(t, objective=-t.objective) for t in history]

    while len(history) < budget:
        batch = min(jobs, budget - len(history))
        frozen = tpe_view()
        configs = [tpe_suggest(space, frozen, rng, gamma, n_candidates)
                   for _ in range(batch)]
        for config in configs:
            t0 = time.perf_counter()
            try:
                value = float(objective(config))
                trial = Trial(len(history), config, value, "ok",
                              time.perf_counter() - t0)
            except Exception:
                trial = Trial(len(history), config, None, "failed",
                              time.perf_counter() - t0)
            history.append(trial)
    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise AllTrialsFailed(f"all {budget} trials failed")
    best = min(ok, key=lambda t: sign * t.objective)
    return best, history


def save_trials(history, path):
    with open(path, "w") as fh:
        for t in history:
            fh.write(json.dumps({
                "trial_id": t.trial_id, "config": t.config,
                "objective": t.objective, "status": t.status,
                "wall_s": t.wall_s}) + "\n")


def load_trials(path):
    trials = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                trials.append(Trial(obj["trial_id"], obj["config"],
                                    obj["objective"], obj["status"],
                                    obj["wall_s"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"trial log line {i + 1}: {exc}") from exc
    return trials
