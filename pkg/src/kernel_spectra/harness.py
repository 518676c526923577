"""Experiment orchestration with strict configs and seeded cells.

A run is a pure function of its configuration. Every cell (distribution,
dimension, trial) draws its data from a seed derived from the master seed,
the distribution, ``d`` and the trial index, so results do not depend on the
order of the distribution list or on how cells are scheduled.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .exceptions import ConfigError, KernelSpectraError, PreconditionError, ResourceError
from .hermite import (
    HermiteSeries,
    PolynomialNonlinearity,
    approximate,
    nonlinearity_from_dict,
    poly_to_hermite,
)
from .models import (
    DataDistribution,
    ModelParams,
    build_A,
    build_A_tilde,
    build_B,
    build_B_full,
    build_UTD,
    sample_X,
)
from .serialization import dumps, write_csv, write_json
from .spectra import default_range, eigs, esd, ks_to_cdf, stieltjes
from .theory import (
    d_tau_grid,
    density,
    exponents,
    format_ell,
    gammas,
    parse_ell,
    residual,
    semicircle_cdf,
    solve_m,
)

KINDS = ("simulate", "universality", "convergence", "verify", "theory")
MODELS = ("A", "Atilde", "B", "Bfull")
SUITES = ("resolvent", "ward", "errors", "moments")
THRESHOLD_KEYS = (
    "max_mean_gap",
    "max_pairwise_ratio",
    "max_slope",
    "require_decreasing",
    "max_residual",
    "min_esd_mass",
)

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridConfig:
    tau: float = 0.5
    n_re: int = 5
    n_im: int = 5

    def build(self):
        return d_tau_grid(self.tau, self.n_re, self.n_im)


@dataclass(frozen=True)
class DensityConfig:
    points: int = 401
    eta: float = 1e-6
    range: tuple | None = None


@dataclass(frozen=True)
class VerifyConfig:
    suite: str = "all"
    tol: float = 1e-9
    ward_d: tuple = (8, 16, 32)
    ward_band: float = 10.0
    errors_d: tuple = (100, 400, 1600)
    errors_min_ratio: float = 1.5
    moment_d: tuple = (25, 100, 400)
    moment_samples: int = 100_000

    def suites(self):
        return SUITES if self.suite == "all" else (self.suite,)


_DEFAULT_VERIFY_SERIES = {"variant": "hermite-series", "coeffs": [0.0, 1.0, 1.0]}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description. Build it with :func:`parse_config`."""

    kind: str
    nonlinearity: object = None
    ell: Fraction = Fraction(1)
    kappa: float = 1.0
    N: int | None = None
    d: tuple = ()
    distributions: tuple = (DataDistribution("gaussian"),)
    trials: int = 1
    seed: int = 0
    model: str = "A"
    include_tilde: bool = False
    hermite_degree: int = 8
    grid: GridConfig = field(default_factory=GridConfig)
    z0: complex = 1j
    esd_bins: int = 200
    esd_range: tuple | None = None
    density: DensityConfig = field(default_factory=DensityConfig)
    gammas: tuple | None = None
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    thresholds: dict = field(default_factory=dict)
    workers: int = 1
    out: str | None = None

    def to_dict(self, execution=True):
        """Normalized JSON-ready form. ``execution=False`` drops the fields
        that cannot change results (worker count and output directory)."""
        out = {
            "kind": self.kind,
            "nonlinearity": None if self.nonlinearity is None else self.nonlinearity.to_dict(),
            "ell": format_ell(self.ell),
            "kappa": self.kappa,
            "N": self.N,
            "d": list(self.d),
            "distributions": [dist_to_config(x) for x in self.distributions],
            "trials": self.trials,
            "seed": self.seed,
            "model": self.model,
            "include_tilde": self.include_tilde,
            "hermite_degree": self.hermite_degree,
            "grid": {"tau": self.grid.tau, "n_re": self.grid.n_re, "n_im": self.grid.n_im},
            "z0": [self.z0.real, self.z0.imag],
            "esd": {"bins": self.esd_bins, "range": None if self.esd_range is None else list(self.esd_range)},
            "density": {
                "points": self.density.points,
                "eta": self.density.eta,
                "range": None if self.density.range is None else list(self.density.range),
            },
            "gammas": None if self.gammas is None else list(self.gammas),
            "verify": {
                "suite": self.verify.suite,
                "tol": self.verify.tol,
                "ward_d": list(self.verify.ward_d),
                "ward_band": self.verify.ward_band,
                "errors_d": list(self.verify.errors_d),
                "errors_min_ratio": self.verify.errors_min_ratio,
                "moment_d": list(self.verify.moment_d),
                "moment_samples": self.verify.moment_samples,
            },
            "thresholds": dict(sorted(self.thresholds.items())),
        }
        if execution:
            out["workers"] = self.workers
            out["out"] = self.out
        return out

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()

    __hash__ = None

    def series(self):
        """Hermite series used for theory curves and the ``B`` models."""
        return series_for(self.nonlinearity, self.hermite_degree)

    def hash(self):
        """sha256 of the normalized config, with distributions in canonical order."""
        body = self.to_dict(execution=False)
        body["distributions"] = sorted(body["distributions"], key=lambda x: dumps(x))
        return hashlib.sha256(dumps(body).encode("utf-8")).hexdigest()


def series_for(spec, degree):
    if spec is None:
        return None
    if isinstance(spec, HermiteSeries):
        return spec
    if isinstance(spec, PolynomialNonlinearity):
        return poly_to_hermite(spec.coeffs)
    return approximate(spec, degree)


def dist_to_config(dist):
    return dist.variant if dist.variant != "discrete" else dist.to_dict()


def dist_key(dist):
    return dumps(dist.to_dict())


_TOP_KEYS = {
    "kind", "nonlinearity", "ell", "kappa", "N", "d", "distributions", "trials", "seed",
    "model", "include_tilde", "hermite_degree", "grid", "z0", "esd", "density", "gammas",
    "verify", "thresholds", "workers", "out",
}


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(path or "<root>", "expected an object")
    for key in obj:
        if key not in allowed:
            name = f"{path}.{key}" if path else key
            raise ConfigError(name, "unknown key")


def _int(value, path, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}")
    return value


def _float(value, path, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and not value > 0:
        raise ConfigError(path, "must be positive")
    return value


def _bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true or false, got {value!r}")
    return value


def _ladder(value, path, lo=1):
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of integers")
    out = tuple(_int(v, f"{path}[{i}]", lo) for i, v in enumerate(value))
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(path, "ladder must be strictly increasing")
    return out


def _range(value, path):
    if value is None:
        return None
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(path, "expected [lo, hi] or null")
    lo, hi = (_float(v, f"{path}[{i}]") for i, v in enumerate(value))
    if not lo < hi:
        raise ConfigError(path, "need lo < hi")
    return (lo, hi)


def _dist(value, path):
    try:
        if isinstance(value, str):
            return DataDistribution(value)
        if isinstance(value, dict):
            _check_keys(value, {"variant", "atoms", "probs"}, path)
            return DataDistribution(value.get("variant"), tuple(value.get("atoms", ())), tuple(value.get("probs", ())))
    except KernelSpectraError as exc:
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(path, "expected a distribution name or object")


def config_from_dict(raw):
    """Validate a decoded JSON object into an :class:`ExperimentConfig`."""
    _check_keys(raw, _TOP_KEYS, "")
    kw = {}
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError("kind", f"must be one of {', '.join(KINDS)}")
    kw["kind"] = kind

    nl = raw.get("nonlinearity")
    if nl is None and kind == "verify":
        nl = _DEFAULT_VERIFY_SERIES
    if nl is not None:
        try:
            kw["nonlinearity"] = nonlinearity_from_dict(nl)
        except (KernelSpectraError, KeyError, TypeError) as exc:
            raise ConfigError("nonlinearity", str(exc)) from exc

    if "ell" in raw:
        if not isinstance(raw["ell"], str):
            raise ConfigError("ell", 'must be a string such as "3/2"')
        try:
            kw["ell"] = parse_ell(raw["ell"])
        except KernelSpectraError as exc:
            raise ConfigError("ell", str(exc)) from exc
    if "kappa" in raw:
        kw["kappa"] = _float(raw["kappa"], "kappa", positive=True)
    if raw.get("N") is not None:
        kw["N"] = _int(raw["N"], "N", 2)
    if "d" in raw:
        kw["d"] = _ladder(raw["d"], "d")
    if "distributions" in raw:
        dl = raw["distributions"]
        if not isinstance(dl, list) or not dl:
            raise ConfigError("distributions", "expected a non-empty list")
        dists = tuple(_dist(v, f"distributions[{i}]") for i, v in enumerate(dl))
        if len({dist_key(x) for x in dists}) != len(dists):
            raise ConfigError("distributions", "entries must be distinct")
        kw["distributions"] = dists
    if "trials" in raw:
        kw["trials"] = _int(raw["trials"], "trials", 1)
    if "seed" in raw:
        kw["seed"] = _int(raw["seed"], "seed", 0)
        if kw["seed"] >= 2**63:
            raise ConfigError("seed", "must be below 2**63")
    if "model" in raw:
        if raw["model"] not in MODELS:
            raise ConfigError("model", f"must be one of {', '.join(MODELS)}")
        kw["model"] = raw["model"]
    if "include_tilde" in raw:
        kw["include_tilde"] = _bool(raw["include_tilde"], "include_tilde")
    if "hermite_degree" in raw:
        kw["hermite_degree"] = _int(raw["hermite_degree"], "hermite_degree", 1)
    if "grid" in raw:
        g = raw["grid"]
        _check_keys(g, {"tau", "n_re", "n_im"}, "grid")
        kw["grid"] = GridConfig(
            _float(g.get("tau", 0.5), "grid.tau", positive=True),
            _int(g.get("n_re", 5), "grid.n_re", 1),
            _int(g.get("n_im", 5), "grid.n_im", 1),
        )
        if kw["grid"].tau > 1:
            raise ConfigError("grid.tau", "must be at most 1")
    if "z0" in raw:
        z = raw["z0"]
        if not isinstance(z, list) or len(z) != 2:
            raise ConfigError("z0", "expected [re, im]")
        kw["z0"] = complex(_float(z[0], "z0[0]"), _float(z[1], "z0[1]", positive=True))
    if "esd" in raw:
        e = raw["esd"]
        _check_keys(e, {"bins", "range"}, "esd")
        kw["esd_bins"] = _int(e.get("bins", 200), "esd.bins", 1)
        kw["esd_range"] = _range(e.get("range"), "esd.range")
    if "density" in raw:
        e = raw["density"]
        _check_keys(e, {"points", "eta", "range"}, "density")
        eta = _float(e.get("eta", 1e-6), "density.eta", positive=True)
        if not 1e-8 <= eta <= 1e-3:
            raise ConfigError("density.eta", "must lie in [1e-8, 1e-3]")
        kw["density"] = DensityConfig(_int(e.get("points", 401), "density.points", 2), eta, _range(e.get("range"), "density.range"))
    if raw.get("gammas") is not None:
        gv = raw["gammas"]
        if not isinstance(gv, list) or len(gv) != 3:
            raise ConfigError("gammas", "expected [gamma_a, gamma_b, gamma_c]")
        vals = tuple(_float(v, f"gammas[{i}]") for i, v in enumerate(gv))
        if vals[0] < 0 or vals[2] < 0:
            raise ConfigError("gammas", "gamma_a and gamma_c must be non-negative")
        kw["gammas"] = vals
    if "verify" in raw:
        v = raw["verify"]
        fields_ = {"suite", "tol", "ward_d", "ward_band", "errors_d", "errors_min_ratio", "moment_d", "moment_samples"}
        _check_keys(v, fields_, "verify")
        suite = v.get("suite", "all")
        if suite not in SUITES + ("all",):
            raise ConfigError("verify.suite", f"must be one of {', '.join(SUITES + ('all',))}")
        base = VerifyConfig()
        kw["verify"] = VerifyConfig(
            suite=suite,
            tol=_float(v.get("tol", base.tol), "verify.tol", positive=True),
            ward_d=_ladder(v.get("ward_d", list(base.ward_d)), "verify.ward_d", 2),
            ward_band=_float(v.get("ward_band", base.ward_band), "verify.ward_band", positive=True),
            errors_d=_ladder(v.get("errors_d", list(base.errors_d)), "verify.errors_d", 2),
            errors_min_ratio=_float(v.get("errors_min_ratio", base.errors_min_ratio), "verify.errors_min_ratio", positive=True),
            moment_d=_ladder(v.get("moment_d", list(base.moment_d)), "verify.moment_d", 1),
            moment_samples=_int(v.get("moment_samples", base.moment_samples), "verify.moment_samples", 10_000),
        )
    if "thresholds" in raw:
        t = raw["thresholds"]
        _check_keys(t, set(THRESHOLD_KEYS), "thresholds")
        kw["thresholds"] = {
            k: (_bool(v, f"thresholds.{k}") if k == "require_decreasing" else _float(v, f"thresholds.{k}"))
            for k, v in t.items()
        }
    if "workers" in raw:
        kw["workers"] = _int(raw["workers"], "workers", 1)
    if raw.get("out") is not None:
        if not isinstance(raw["out"], str):
            raise ConfigError("out", "expected a path string")
        kw["out"] = raw["out"]

    cfg = ExperimentConfig(**kw)
    _check_kind(cfg)
    return cfg


def _check_kind(cfg):
    if cfg.kind in ("simulate", "universality", "convergence"):
        if cfg.nonlinearity is None:
            raise ConfigError("nonlinearity", f"required for kind {cfg.kind}")
        if not cfg.d:
            raise ConfigError("d", f"required for kind {cfg.kind}")
    if cfg.kind == "simulate":
        if len(cfg.d) != 1:
            raise ConfigError("d", "simulate takes exactly one dimension")
        if len(cfg.distributions) != 1:
            raise ConfigError("distributions", "simulate takes exactly one distribution")
    if cfg.N is not None and len(cfg.d) > 1:
        raise ConfigError("N", "an explicit N needs a single dimension")
    if cfg.kind == "theory" and cfg.gammas is None and cfg.nonlinearity is None:
        raise ConfigError("gammas", "theory needs gammas or a nonlinearity")
    if cfg.kind in ("universality", "convergence", "simulate") and cfg.z0.imag <= 0:
        raise ConfigError("z0", "imaginary part must be positive")


def parse_config(text):
    """Parse JSON text strictly; every error names the offending field."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
    return config_from_dict(raw)


def serialize_config(cfg):
    return dumps(cfg.to_dict(), indent=2) + "\n"


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# Seeds and cells
# ---------------------------------------------------------------------------


def cell_seed(seed, key, d, trial):
    """64-bit seed for one cell; independent of where the cell sits in a sweep."""
    tag = zlib.crc32(key.encode("utf-8"))
    ss = np.random.SeedSequence([int(seed), tag, int(d), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


MAX_DENSE_N = 20_000


def _params(cfg, d):
    if cfg.N is not None:
        p = ModelParams(d, cfg.N, cfg.ell)
    else:
        p = ModelParams.from_kappa(d, cfg.kappa, cfg.ell)
    if p.N > MAX_DENSE_N:
        raise ResourceError(f"N = {p.N} exceeds the dense limit {MAX_DENSE_N}")
    return p


def _matrix(model, X, f, series, ell):
    if model == "A":
        return build_A(X, f)
    if model == "Atilde":
        return build_A_tilde(X, f)
    if model == "B":
        return build_B(X, series, ell)
    return build_B_full(X, series)


def _run_cells(cfg, tasks, fn):
    """Evaluate cells in a thread pool; results come back in task order.

    BLAS is pinned to one thread so floating-point reductions, and hence
    every output byte, do not depend on the machine's thread settings.
    """
    with threadpool_limits(limits=1):
        if cfg.workers == 1:
            return [fn(t) for t in tasks]
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, tasks))


@dataclass
class RunReport:
    """Deterministic report body and CSV tables; wall-clock timing is kept apart."""

    body: dict
    tables: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def passed(self):
        return bool(self.body.get("passed", True))

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        for name, (header, rows) in self.tables.items():
            write_csv(os.path.join(out_dir, name), header, rows)
        write_json(os.path.join(out_dir, "report.json"), self.body)
        write_json(os.path.join(out_dir, "timing.json"), {"wall_clock_seconds": self.wall_clock})


def _base_body(cfg):
    ex = exponents(cfg.ell)
    return {
        "version": __version__,
        "kind": cfg.kind,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(execution=False) | {"distributions": sorted(
            (dist_to_config(x) for x in cfg.distributions), key=dumps)},
        "exponents": {"p_ell": ex.p_ell, "q_ell": ex.q_ell, "r_ell": ex.r_ell, "ell_c": ex.ell_c},
    }


def _realized(cfg):
    out = []
    for d in cfg.d:
        p = _params(cfg, d)
        out.append({"d": p.d, "N": p.N, "kappa_realized": p.kappa})
    return out


def _gammas_for(cfg, series, params):
    if cfg.gammas is not None:
        return tuple(cfg.gammas)
    return tuple(gammas(series, cfg.ell, params.kappa))


def _finish(body, checks):
    body["checks"] = checks
    body["passed"] = all(c["passed"] for c in checks.values())
    return body


# ---------------------------------------------------------------------------
# Universality
# ---------------------------------------------------------------------------

UNIVERSALITY_HEADER = (
    "distribution", "d", "N", "trial", "seed", "kappa_realized",
    "sup_gap_A", "sup_gap_A_tilde", "sup_gap_trivial",
)
SUMMARY_HEADER = ("distribution", "d", "N", "kappa_realized", "mean_gap", "min_gap", "max_gap")


def run_universality(cfg):
    """Sup-gap to the limit law for each cell of the sweep."""
    if cfg.kind != "universality":
        raise PreconditionError("run_universality needs kind = universality")
    t0 = time.perf_counter()
    series = cfg.series()
    pts = cfg.grid.build().as_array()
    tasks = []
    for dist in cfg.distributions:
        for d in cfg.d:
            params = _params(cfg, d)
            for trial in range(cfg.trials):
                tasks.append((dist, params, trial, cell_seed(cfg.seed, dist_key(dist), d, trial)))

    def cell(task):
        dist, params, trial, seed = task
        m = solve_m(pts, _gammas_for(cfg, series, params))
        X = sample_X(dist, params, seed)
        spec = eigs(_matrix(cfg.model, X, cfg.nonlinearity, series, cfg.ell))
        s = stieltjes(spec, pts)
        gap_t = math.nan
        if cfg.include_tilde:
            s_t = stieltjes(eigs(build_A_tilde(X, cfg.nonlinearity)), pts)
            gap_t = float(np.max(np.abs(s_t - m)))
        return {
            "distribution": dist_label(dist), "d": params.d, "N": params.N, "trial": trial,
            "seed": seed, "kappa_realized": params.kappa,
            "sup_gap_A": float(np.max(np.abs(s - m))),
            "sup_gap_A_tilde": gap_t,
            "sup_gap_trivial": float(np.max(np.abs(s + 1.0 / pts))),
        }

    cells = _run_cells(cfg, tasks, cell)
    summary = _summarize(cells, "sup_gap_A")
    body = _base_body(cfg)
    body["model"] = cfg.model
    body["realized"] = _realized(cfg)
    body["gammas"] = [
        {"d": r["d"], "gammas": list(_gammas_for(cfg, series, _params(cfg, r["d"])))} for r in body["realized"]
    ]
    body["summary"] = summary
    body["cells"] = cells

    checks = {}
    th = cfg.thresholds
    if "max_mean_gap" in th:
        worst = max(s["mean_gap"] for s in summary)
        checks["max_mean_gap"] = {"value": worst, "threshold": th["max_mean_gap"], "passed": worst < th["max_mean_gap"]}
    if "max_pairwise_ratio" in th:
        worst = 1.0
        for d in cfg.d:
            means = [s["mean_gap"] for s in summary if s["d"] == d]
            worst = max(worst, max(means) / min(means))
        checks["max_pairwise_ratio"] = {"value": worst, "threshold": th["max_pairwise_ratio"], "passed": worst <= th["max_pairwise_ratio"]}
    _finish(body, checks)

    tables = {
        "cells.csv": (UNIVERSALITY_HEADER, [[c[h] for h in UNIVERSALITY_HEADER] for c in cells]),
        "summary.csv": (SUMMARY_HEADER, [[s[h] for h in SUMMARY_HEADER] for s in summary]),
    }
    return RunReport(body, tables, time.perf_counter() - t0)


def dist_label(dist):
    if dist.variant != "discrete":
        return dist.variant
    return "discrete:" + hashlib.sha256(dist_key(dist).encode()).hexdigest()[:12]


def _summarize(cells, key):
    groups = {}
    for c in cells:
        groups.setdefault((c["distribution"], c["d"]), []).append(c)
    out = []
    for (label, d), rows in groups.items():
        vals = np.array([r[key] for r in rows])
        out.append({
            "distribution": label, "d": d, "N": rows[0]["N"], "kappa_realized": rows[0]["kappa_realized"],
            "mean_gap": float(vals.mean()), "min_gap": float(vals.min()), "max_gap": float(vals.max()),
        })
    return out


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------

CONVERGENCE_HEADER = ("distribution", "d", "N", "trial", "seed", "kappa_realized", "gap")


def fit_slope(ds, gaps):
    """Least-squares slope of ``log gap`` against ``log d``."""
    slope, _ = np.polyfit(np.log(np.asarray(ds, float)), np.log(np.asarray(gaps, float)), 1)
    return float(slope)


def run_convergence(cfg):
    """``|s(z0) - m(z0)|`` along the dimension ladder plus a log-log slope fit."""
    if cfg.kind != "convergence":
        raise PreconditionError("run_convergence needs kind = convergence")
    if len(cfg.d) < 3:
        raise PreconditionError("a convergence ladder needs at least 3 dimensions")
    t0 = time.perf_counter()
    series = cfg.series()
    z0 = cfg.z0
    tasks = [
        (dist, _params(cfg, d), trial, cell_seed(cfg.seed, dist_key(dist), d, trial))
        for dist in cfg.distributions
        for d in cfg.d
        for trial in range(cfg.trials)
    ]

    def cell(task):
        dist, params, trial, seed = task
        m = solve_m(z0, _gammas_for(cfg, series, params))
        X = sample_X(dist, params, seed)
        spec = eigs(_matrix(cfg.model, X, cfg.nonlinearity, series, cfg.ell))
        return {
            "distribution": dist_label(dist), "d": params.d, "N": params.N, "trial": trial,
            "seed": seed, "kappa_realized": params.kappa, "gap": abs(stieltjes(spec, z0) - m),
        }

    cells = _run_cells(cfg, tasks, cell)
    summary = _summarize(cells, "gap")
    fits = []
    for dist in cfg.distributions:
        rows = [s for s in summary if s["distribution"] == dist_label(dist)]
        means = [r["mean_gap"] for r in rows]
        fits.append({
            "distribution": dist_label(dist),
            "slope": fit_slope([r["d"] for r in rows], means),
            "strictly_decreasing": all(b < a for a, b in zip(means, means[1:])),
        })
    body = _base_body(cfg)
    body["model"] = cfg.model
    body["z0"] = [z0.real, z0.imag]
    body["theory_rate_exponent"] = -float(exponents(cfg.ell).p_ell)
    body["realized"] = _realized(cfg)
    body["summary"] = summary
    body["fits"] = fits
    body["cells"] = cells
    checks = {}
    th = cfg.thresholds
    if "max_slope" in th:
        worst = max(f["slope"] for f in fits)
        checks["max_slope"] = {"value": worst, "threshold": th["max_slope"], "passed": worst <= th["max_slope"]}
    if th.get("require_decreasing"):
        ok = all(f["strictly_decreasing"] for f in fits)
        checks["require_decreasing"] = {"value": ok, "threshold": True, "passed": ok}
    _finish(body, checks)
    tables = {
        "cells.csv": (CONVERGENCE_HEADER, [[c[h] for h in CONVERGENCE_HEADER] for c in cells]),
        "summary.csv": (SUMMARY_HEADER, [[s[h] for h in SUMMARY_HEADER] for s in summary]),
    }
    return RunReport(body, tables, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Simulate
# ---------------------------------------------------------------------------


def run_simulate(cfg):
    """One spectrum with its ESD and the theory density on the bin centres."""
    if cfg.kind != "simulate":
        raise PreconditionError("run_simulate needs kind = simulate")
    t0 = time.perf_counter()
    series = cfg.series()
    dist = cfg.distributions[0]
    params = _params(cfg, cfg.d[0])
    g = _gammas_for(cfg, series, params)
    seed = cell_seed(cfg.seed, dist_key(dist), params.d, 0)

    def cell(_):
        X = sample_X(dist, params, seed)
        return eigs(_matrix(cfg.model, X, cfg.nonlinearity, series, cfg.ell))

    (spec,) = _run_cells(cfg, [0], cell)
    lo, hi = cfg.esd_range if cfg.esd_range is not None else default_range(g)
    meas = esd(spec, cfg.esd_bins, (lo, hi))
    centres = 0.5 * (meas.edges[:-1] + meas.edges[1:])
    rho = density(g, centres, cfg.density.eta)
    lam = spec.eigenvalues
    body = _base_body(cfg)
    body.update({
        "model": cfg.model,
        "distribution": dist_label(dist),
        "seed": seed,
        "params": params.to_dict(),
        "gammas": list(g),
        "esd_range": [lo, hi],
        "esd_mass": meas.total,
        "eigenvalue_min": float(lam[0]),
        "eigenvalue_max": float(lam[-1]),
        "stieltjes_sup_gap": float(np.max(np.abs(
            stieltjes(spec, cfg.grid.build().as_array()) - solve_m(cfg.grid.build().as_array(), g)))),
    })
    if g[0] == 0 and g[1] == 0 and g[2] > 0:
        body["ks_semicircle"] = ks_to_cdf(spec, lambda x: semicircle_cdf(x, g[2]))
    checks = {}
    if "min_esd_mass" in cfg.thresholds:
        t = cfg.thresholds["min_esd_mass"]
        checks["min_esd_mass"] = {"value": meas.total, "threshold": t, "passed": meas.total >= t}
    _finish(body, checks)
    tables = {
        "spectrum.csv": (("index", "lambda"), [[i, v] for i, v in enumerate(lam)]),
        "esd.csv": (("bin_lo", "bin_hi", "mass"), [[a, b, m] for a, b, m in zip(meas.edges[:-1], meas.edges[1:], meas.masses)]),
        "theory_density.csv": (("E", "rho"), [[e, r] for e, r in zip(centres, rho)]),
    }
    return RunReport(body, tables, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Theory
# ---------------------------------------------------------------------------


def run_theory(cfg):
    """Limit Stieltjes transform on the grid and the density on a real grid."""
    if cfg.kind != "theory":
        raise PreconditionError("run_theory needs kind = theory")
    t0 = time.perf_counter()
    if cfg.gammas is not None:
        g = tuple(cfg.gammas)
    else:
        g = tuple(gammas(cfg.series(), cfg.ell, cfg.kappa))
    pts = cfg.grid.build().as_array()
    m = solve_m(pts, g)
    res = np.abs(residual(m, pts, g))
    lo, hi = cfg.density.range if cfg.density.range is not None else default_range(g)
    E = np.linspace(lo, hi, cfg.density.points)
    rho = density(g, E, cfg.density.eta)
    body = _base_body(cfg)
    body.update({"gammas": list(g), "max_residual": float(res.max()), "density_range": [lo, hi]})
    checks = {}
    if "max_residual" in cfg.thresholds:
        t = cfg.thresholds["max_residual"]
        checks["max_residual"] = {"value": float(res.max()), "threshold": t, "passed": float(res.max()) < t}
    _finish(body, checks)
    tables = {
        "stieltjes.csv": (
            ("z_re", "z_im", "m_re", "m_im", "residual_abs"),
            [[z.real, z.imag, mm.real, mm.imag, r] for z, mm, r in zip(pts, m, res)],
        ),
        "density.csv": (("E", "rho"), [[e, r] for e, r in zip(E, rho)]),
    }
    return RunReport(body, tables, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Verify
# ---------------------------------------------------------------------------

RESOLVENT_SHAPES = ((6, 8), (7, 10), (8, 12))
RESOLVENT_INSTANCES = 5
RESOLVENT_Z = (1j, 2 + 0.5j)


def run_verify(cfg):
    """Hard identity and error-bound checks plus the Ward and moment diagnostics."""
    from . import verify as V

    if cfg.kind != "verify":
        raise PreconditionError("run_verify needs kind = verify")
    t0 = time.perf_counter()
    series = cfg.series()
    vc = cfg.verify
    ell = cfg.ell
    body = _base_body(cfg)
    checks, diagnostics, sections = {}, {}, {}

    def run():
        if "resolvent" in vc.suites():
            rows, worst, b_dev = [], 0.0, 0.0
            for idx in range(RESOLVENT_INSTANCES):
                d, N = RESOLVENT_SHAPES[idx % len(RESOLVENT_SHAPES)]
                seed = cell_seed(cfg.seed, "resolvent", d, idx)
                X = sample_X(cfg.distributions[0], ModelParams(d, N, ell), seed)
                lin = build_UTD(X, series, ell)
                b_dev = max(b_dev, float(np.max(np.abs(lin.B() - build_B(X, series, ell)))))
                for z in RESOLVENT_Z:
                    rep = V.check_resolvent_identities(lin, z, vc.tol)
                    worst = max(worst, rep.max_deviation)
                    rows.append({"index": idx, "seed": seed, "z": [complex(z).real, complex(z).imag]} | rep.to_dict())
            sections["resolvent"] = rows
            checks["resolvent_identities"] = {"value": worst, "threshold": vc.tol, "passed": worst < vc.tol}
            checks["b_consistency"] = {"value": b_dev, "threshold": 1e-10, "passed": b_dev < 1e-10}

        if "ward" in vc.suites():
            if series.coeff(2) == 0 or ell > 2:
                diagnostics["ward"] = {"skipped": "needs a degree-2 block (c_2 != 0 and ell <= 2)"}
            else:
                rows = []
                for d in vc.ward_d:
                    params = _params(cfg, d)
                    seed = cell_seed(cfg.seed, "ward", d, 0)
                    lin = build_UTD(sample_X(cfg.distributions[0], params, seed), series, ell)
                    rows.append({
                        "d": d, "N": params.N, "seed": seed,
                        "partial_k2_k2_t1": V.check_partial_ward(lin, 1j, 2, 2, 1, seed=0),
                        "full": V.check_full_ward(lin, 1j, seed=0),
                    })
                vals = [r["partial_k2_k2_t1"] for r in rows]
                spread = max(vals) / min(vals) if min(vals) > 0 else math.inf
                diagnostics["ward"] = {"rows": rows, "spread": spread, "band": vc.ward_band, "in_band": spread <= vc.ward_band}

        if "errors" in vc.suites():
            rows = []
            split_dev, rank_ok = 0.0, True
            for d in vc.errors_d:
                params = _params(cfg, d)
                seed = cell_seed(cfg.seed, "errors", d, 0)
                X = sample_X(cfg.distributions[0], params, seed)
                r = V.error_norms(X, cfg.nonlinearity, series, ell)
                E_lr, E_frob = V.low_rank_split(X, series, ell)
                target = build_B_full(X, series) - build_B(X, series, ell)
                split_dev = max(split_dev, float(np.max(np.abs(E_lr + E_frob - target))))
                rank = int(np.linalg.matrix_rank(E_lr))
                rank_ok &= rank <= r["rank_bound_lr"]
                rows.append(r | {"seed": seed, "rank_E_lr": rank})
            sections["errors"] = rows
            for key in ("frob_A_Atilde", "frob_Atilde_Btildefull"):
                scaled = [r[key] / math.sqrt(r["N"]) for r in rows]
                ratios = [a / b if b > 0 else math.inf for a, b in zip(scaled, scaled[1:])]
                worst = min(ratios) if ratios else math.inf
                if all(s == 0 for s in scaled):
                    worst = math.inf
                checks[f"decrease_{key}"] = {"value": worst, "threshold": vc.errors_min_ratio, "passed": worst >= vc.errors_min_ratio}
            checks["low_rank_split"] = {"value": split_dev, "threshold": 1e-10, "passed": split_dev < 1e-10}
            checks["rank_bound"] = {"value": rank_ok, "threshold": True, "passed": bool(rank_ok)}

        if "moments" in vc.suites():
            rows = []
            for dist in cfg.distributions:
                for d in vc.moment_d:
                    seed = cell_seed(cfg.seed, "moments:" + dist_key(dist), d, 0)
                    mc, gauss, gap = V.check_gauss_moment(cfg.nonlinearity, dist, d, vc.moment_samples, seed)
                    rows.append({"distribution": dist_label(dist), "d": d, "seed": seed, "mc": mc, "gauss": gauss, "gap": gap})
            diagnostics["moments"] = {"rows": rows}

    with threadpool_limits(limits=1):
        run()
    body["sections"] = sections
    body["diagnostics"] = diagnostics
    _finish(body, checks)
    flat = [[name, c["value"] if not isinstance(c["value"], bool) else float(c["value"]), c["threshold"] if not isinstance(c["threshold"], bool) else 1.0, int(c["passed"])]
            for name, c in checks.items()]
    tables = {"checks.csv": (("check", "value", "threshold", "passed"), flat)}
    return RunReport(body, tables, time.perf_counter() - t0)


RUNNERS = {
    "universality": run_universality,
    "convergence": run_convergence,
    "simulate": run_simulate,
    "theory": run_theory,
    "verify": run_verify,
}


def run(cfg, out_dir=None):
    """Dispatch on ``cfg.kind`` and write the outputs when ``out_dir`` is given."""
    report = RUNNERS[cfg.kind](cfg)
    target = out_dir or cfg.out
    if target:
        report.write(target)
    return report


def with_overrides(cfg, **changes):
    """Copy of ``cfg`` with fields replaced (the result is re-validated)."""
    new = replace(cfg, **changes)
    _check_kind(new)
    return new
