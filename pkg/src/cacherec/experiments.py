"""Batch experiment driver.

Loads or generates a similarity catalog, sweeps the parameter grid
(list size x Zipf exponent x quality floor x cache fraction x follow
probability), runs the requested policies at every point, and writes one
CSV row per (grid point, policy). Rows are ordered by grid index then
canonical policy order, and every random draw descends from the
scenario seed, so re-running a config reproduces the CSV byte for byte
apart from the wall-clock column.
"""

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from .datasets import (
    SyntheticSimilaritySpec,
    anchored_similarity,
    prepare_lastfm,
    prepare_movielens,
    synthetic_similarity,
    zipf_popularity,
)
from .markov import cache_hit_ratio, stationary_direct
from .model import RequestModel
from .optim import CarsConfig, OptimInputs, cars_solve, myopic_solve, top_n_similarity
from .simulate import SessionConfig, simulate, top_c_cache

__all__ = [
    "SCHEMA_VERSION",
    "CANONICAL_POLICIES",
    "RESULT_COLUMNS",
    "ConfigError",
    "ScenarioConfig",
    "build_grid",
    "run_experiment",
    "write_results",
    "emit_convergence_trace",
    "TRACE_COLUMNS",
]

SCHEMA_VERSION = 1
CANONICAL_POLICIES = ("norec", "myopic", "cars")
RESULT_COLUMNS = (
    "schema_version",
    "grid_index",
    "policy",
    "list_size",
    "zipf_s",
    "quality_floor",
    "cache_fraction",
    "follow_prob",
    "catalog_size",
    "cache_size",
    "analytic_chr",
    "empirical_chr",
    "mean_quality",
    "iterations",
    "wall_millis",
    "seed",
    "error",
)
TRACE_COLUMNS = ("iter", "actual_cost", "virtual_cost", "residual_sq", "lambda_norm")

_CARS_KEYS = (
    "rho",
    "acc1",
    "acc2",
    "max_iter",
    "multiplier_step",
    "subproblem_tol",
    "subproblem_max_iter",
)
_SESSION_KEYS = ("total_requests", "session_kind", "session_param")
_DATASET_KINDS = ("synthetic", "movielens", "lastfm")


class ConfigError(ValueError):
    """A scenario configuration is malformed or inconsistent."""


def _default_session() -> SessionConfig:
    return SessionConfig(total_requests=40000, session_kind="fixed", session_param=200)


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment campaign: dataset, sweeps, policies, solver knobs.

    The grid is the Cartesian product of the five sweep lists, enumerated
    with `follow_probs` fastest and `list_sizes` slowest.
    """

    dataset: dict
    list_sizes: tuple = (4,)
    zipf_exponents: tuple = (0.6,)
    qualities: tuple = (0.8,)
    cache_fractions: tuple = (0.05,)
    follow_probs: tuple = (0.8,)
    policies: tuple = CANONICAL_POLICIES
    cars: CarsConfig = field(default_factory=CarsConfig)
    session: SessionConfig = field(default_factory=_default_session)
    seed: int = 0
    output_dir: str = ""

    def __post_init__(self):
        d = self.dataset
        if not isinstance(d, dict) or d.get("kind") not in _DATASET_KINDS:
            raise ConfigError(
                f"dataset must be a mapping with kind in {_DATASET_KINDS}"
            )
        if d["kind"] == "synthetic":
            if "size" not in d:
                raise ConfigError("synthetic dataset needs a 'size'")
        elif "path" not in d:
            raise ConfigError(f"{d['kind']} dataset needs a 'path'")
        for name in ("list_sizes", "zipf_exponents", "qualities",
                     "cache_fractions", "follow_probs", "policies"):
            seq = tuple(getattr(self, name))
            if not seq:
                raise ConfigError(f"{name} must be a nonempty list")
            object.__setattr__(self, name, seq)
        if any(int(n) < 1 for n in self.list_sizes):
            raise ConfigError("every list size must be >= 1")
        if any(s < 0 for s in self.zipf_exponents):
            raise ConfigError("Zipf exponents must be >= 0")
        if any(not 0.0 <= q <= 1.0 for q in self.qualities):
            raise ConfigError("every quality floor must lie in [0, 1]")
        if any(not 0.0 < c <= 1.0 for c in self.cache_fractions):
            raise ConfigError("every cache fraction must lie in (0, 1]")
        if any(not 0.0 <= a < 1.0 for a in self.follow_probs):
            raise ConfigError("every follow probability must lie in [0, 1)")
        unknown = set(self.policies) - set(CANONICAL_POLICIES)
        if unknown:
            raise ConfigError(
                f"unknown policies {sorted(unknown)}; choose from {CANONICAL_POLICIES}"
            )

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        """Parse a JSON config file mirroring the field names above."""
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")

        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        kwargs = dict(raw)
        try:
            if "cars" in kwargs:
                kwargs["cars"] = _parse_cars(kwargs["cars"])
            if "session" in kwargs:
                kwargs["session"] = _parse_session(kwargs["session"])
            for name in ("list_sizes", "zipf_exponents", "qualities",
                         "cache_fractions", "follow_probs", "policies"):
                if name in kwargs:
                    kwargs[name] = tuple(kwargs[name])
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def _parse_cars(raw) -> CarsConfig:
    if not isinstance(raw, dict):
        raise ConfigError("'cars' must be a JSON object")
    unknown = set(raw) - set(_CARS_KEYS)
    if unknown:
        raise ConfigError(f"unknown cars keys: {sorted(unknown)}")
    return CarsConfig(**raw)


def _parse_session(raw) -> SessionConfig:
    if not isinstance(raw, dict):
        raise ConfigError("'session' must be a JSON object")
    unknown = set(raw) - set(_SESSION_KEYS)
    if unknown:
        raise ConfigError(f"unknown session keys: {sorted(unknown)}")
    merged = {"total_requests": 40000, "session_kind": "fixed", "session_param": 200}
    merged.update(raw)
    return SessionConfig(**merged)


@dataclass(frozen=True)
class _GridPoint:
    index: int
    list_size: int
    zipf_s: float
    quality: float
    cache_fraction: float
    follow_prob: float


def build_grid(cfg: ScenarioConfig):
    """Enumerate the sweep product in deterministic order."""
    points = []
    combos = product(cfg.list_sizes, cfg.zipf_exponents, cfg.qualities,
                     cfg.cache_fractions, cfg.follow_probs)
    for idx, (n, s, q, cf, a) in enumerate(combos):
        points.append(_GridPoint(idx, int(n), float(s), float(q), float(cf), float(a)))
    return points


def _similarity_for(cfg: ScenarioConfig, n: int, cache: dict):
    """Build (or reuse) the similarity catalog for one list size.

    Real datasets are pruned with the list size as the degree floor, so
    the resulting catalog depends on it; synthetic draws are regenerated
    until every row exceeds it, matching the pruning invariant.
    """
    if n in cache:
        return cache[n]
    d = cfg.dataset
    kind = d["kind"]
    if kind == "synthetic":
        size = int(d["size"])
        mean_related = float(d.get("mean_related", 4.0))
        seed = int(d.get("seed", cfg.seed))
        if "min_related" in d:
            floor = max(int(d["min_related"]), n + 1)
            u = anchored_similarity(size, mean_related, floor, seed)
        else:
            spec = SyntheticSimilaritySpec(size, mean_related, seed)
            u = synthetic_similarity(spec, min_row_sum=n)
    elif kind == "movielens":
        u, _, _ = prepare_movielens(d["path"], theta=float(d.get("theta", 0.6)),
                                    list_size=n)
    else:
        u, _, _ = prepare_lastfm(d["path"], list_size=n)
    cache[n] = u
    return u


def _row_seed(cfg: ScenarioConfig, grid_index: int, policy: str) -> int:
    """Per-(point, policy) seed, stable under policy subsetting."""
    pidx = CANONICAL_POLICIES.index(policy)
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(grid_index, pidx))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _blank_row(cfg: ScenarioConfig, pt: _GridPoint, policy: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "grid_index": pt.index,
        "policy": policy,
        "list_size": pt.list_size,
        "zipf_s": pt.zipf_s,
        "quality_floor": pt.quality,
        "cache_fraction": pt.cache_fraction,
        "follow_prob": pt.follow_prob,
        "catalog_size": None,
        "cache_size": None,
        "analytic_chr": None,
        "empirical_chr": None,
        "mean_quality": None,
        "iterations": None,
        "wall_millis": None,
        "seed": _row_seed(cfg, pt.index, policy),
        "error": "",
    }


def _run_point_policy(cfg: ScenarioConfig, pt: _GridPoint, policy: str, u) -> dict:
    """Solve and simulate one (grid point, policy) cell."""
    row = _blank_row(cfg, pt, policy)
    start = time.perf_counter()
    try:
        uv = np.asarray(u, dtype=float)
        k = uv.shape[0]
        p0 = zipf_popularity(k, pt.zipf_s)
        c = max(1, round(pt.cache_fraction * k))
        cache = top_c_cache(p0, c)
        x = np.ones(k)
        x[np.fromiter(cache.cached, dtype=int)] = 0.0

        if policy == "norec":
            model = RequestModel(p0, 0.0, pt.list_size)
            inputs = OptimInputs(u, model, x, 0.0)
            y = top_n_similarity(inputs)
            analytic = float(np.asarray(p0)[sorted(cache.cached)].sum())
            iterations = 0
        else:
            model = RequestModel(p0, pt.follow_prob, pt.list_size)
            inputs = OptimInputs(u, model, x, pt.quality)
            if policy == "myopic":
                y = myopic_solve(inputs)
                iterations = 0
            else:
                # warm start at the myopic solution: best-iterate selection
                # then keeps the CARS cost at or below the myopic cost
                y_start = myopic_solve(inputs)
                result = cars_solve(inputs, replace(cfg.cars, y0=y_start))
                if result.message:
                    raise RuntimeError(result.message)
                y = result.best_y
                iterations = result.iterations
            analytic = cache_hit_ratio(y, model, cache.cached)

        sim_cfg = replace(cfg.session, seed=row["seed"])
        metrics = simulate(y, model, cache, u, sim_cfg)
        row.update(
            catalog_size=k,
            cache_size=c,
            analytic_chr=analytic,
            empirical_chr=metrics.empirical_chr,
            mean_quality=metrics.mean_quality_served,
            iterations=iterations,
        )
    except Exception as exc:  # noqa: BLE001 - per-point failures become CSV rows
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["wall_millis"] = (time.perf_counter() - start) * 1000.0
    return row


def run_experiment(cfg: ScenarioConfig, threads: int = 1):
    """Run the full grid and return result rows in deterministic order.

    Failures at individual grid points are captured in each row's
    `error` column; the sweep always completes. When `output_dir` is set
    the rows are also written to ``results.csv`` inside it.
    """
    grid = build_grid(cfg)
    sim_cache: dict = {}
    for n in sorted({pt.list_size for pt in grid}):
        _similarity_for(cfg, n, sim_cache)

    policies = [p for p in CANONICAL_POLICIES if p in cfg.policies]
    tasks = [(pt, policy) for pt in grid for policy in policies]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(
                pool.map(
                    lambda t: _run_point_policy(cfg, t[0], t[1],
                                                sim_cache[t[0].list_size]),
                    tasks,
                )
            )
    else:
        rows = [
            _run_point_policy(cfg, pt, policy, sim_cache[pt.list_size])
            for pt, policy in tasks
        ]

    order = {p: i for i, p in enumerate(CANONICAL_POLICIES)}
    rows.sort(key=lambda r: (r["grid_index"], order[r["policy"]]))
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results(rows, out / "results.csv")
    return rows


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return value


def write_results(rows, path) -> None:
    """Write result rows as CSV with the fixed, versioned column set."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def emit_convergence_trace(cfg: ScenarioConfig, dest=None):
    """Run the stationary-cost solver at the first grid point, dump its trace.

    The CSV has one row per iterate: the true cost of the matrix, the
    cost at the auxiliary distribution, the squared stationarity
    residual, and the multiplier norm. Returns the rows.
    """
    pt = build_grid(cfg)[0]
    u = _similarity_for(cfg, pt.list_size, {})
    uv = np.asarray(u, dtype=float)
    k = uv.shape[0]
    p0 = zipf_popularity(k, pt.zipf_s)
    c = max(1, round(pt.cache_fraction * k))
    cache = top_c_cache(p0, c)
    x = np.ones(k)
    x[np.fromiter(cache.cached, dtype=int)] = 0.0
    model = RequestModel(p0, pt.follow_prob, pt.list_size)
    inputs = OptimInputs(u, model, x, pt.quality)
    result = cars_solve(inputs, replace(cfg.cars))
    if result.message:
        raise RuntimeError(result.message)

    rows = [
        (
            i,
            result.cost_trace[i],
            result.virtual_cost_trace[i],
            result.residual_trace[i],
            result.lambda_norm_trace[i],
        )
        for i in range(len(result.cost_trace))
    ]
    if dest is None and cfg.output_dir:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        dest = Path(cfg.output_dir) / "trace.csv"
    if dest is not None:
        own = not hasattr(dest, "write")
        fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
        try:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for r in rows:
                writer.writerow([r[0]] + [f"{v:.17g}" for v in r[1:]])
        finally:
            if own:
                fh.close()
    return rows
