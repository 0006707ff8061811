"""Monte Carlo orchestration: experiment configs, statistics, drivers, output.

Every experiment output is a pure function of (config, master seed).  Sample
workers are keyed by sample index through counter-based substreams and the
reduction is done in fixed sample order, so the results are bit-identical for
any worker count (the HOMOGLAT_THREADS environment variable only caps the
process pool).  Result files never contain timings or other machine state.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .homogenization import apriori_energy_bound, corrector, energy_density, \
    estimate_A_LT
from .lattice import AveragingMask, ScalarField, TorusLattice, annulus_sum, \
    gradient, make_mask
from .linearized import append_identity_1, append_identity_2, sum_green_sq
from .random_fields import CoefficientLaw, SeedLineage, law_moments, sample
from .sensitivity import SPECTRAL_GAP_STATISTICS, caccioppoli_check, \
    moment_growth, spectral_gap_verify, susceptibility_battery
from .solver import RunLog, green

__all__ = [
    "McEstimate",
    "ScalingFit",
    "ExperimentConfig",
    "ConfigError",
    "NonPositiveValue",
    "TooFewPoints",
    "SampleInvariantError",
    "fit_loglog",
    "parse_config",
    "config_schema",
    "torus_diagnostics",
    "run_experiment",
    "write_result",
    "export_result",
    "worker_count",
]

EXPERIMENT_KINDS = ("variance-scaling", "green-decay", "moment-growth",
                    "identity-check", "susceptibility-battery", "spectral-gap",
                    "caccioppoli")

# acceptance bands for the moment-growth evaluations
MOMENT_D1_SLOPE_BAND = (0.35, 0.65)
MOMENT_HIGHD_RATIO_MAX = 2.0


class ConfigError(ValueError):
    """Config parse/validation failure with a line-located diagnostic."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class NonPositiveValue(ValueError):
    """Log-log fits need strictly positive data."""


class TooFewPoints(ValueError):
    """Log-log fits need at least three points."""


class SampleInvariantError(RuntimeError):
    """A per-sample hard assertion failed; message carries the lineage."""


@dataclass
class McEstimate:
    """Sample mean with normal-approximation 95% confidence half-width."""

    mean: float
    variance: float
    ci_halfwidth: float
    n: int
    lineage: str = ""

    @classmethod
    def from_samples(cls, values, lineage: str = "") -> "McEstimate":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size < 2:
            raise ValueError("need at least two samples")
        var = float(arr.var(ddof=1))
        return cls(float(arr.mean()), var,
                   1.96 * math.sqrt(var / arr.size), int(arr.size), lineage)


@dataclass
class ScalingFit:
    xs: tuple[float, ...]
    ys: tuple[float, ...]
    slope: float
    intercept: float
    slope_stderr: float
    r2: float


def fit_loglog(xs, ys) -> ScalingFit:
    """Ordinary least squares of log y on log x."""
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    if len(xs) != len(ys):
        raise ValueError("mismatched point lists")
    if len(xs) < 3:
        raise TooFewPoints(f"need >= 3 points, got {len(xs)}")
    if min(xs) <= 0 or min(ys) <= 0:
        raise NonPositiveValue("log-log fit needs strictly positive values")
    lx = np.log(np.asarray(xs))
    ly = np.log(np.asarray(ys))
    n = len(xs)
    mx, my = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - mx) ** 2))
    slope = float(np.sum((lx - mx) * (ly - my)) / sxx)
    intercept = float(my - slope * mx)
    resid = ly - (intercept + slope * lx)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ly - my) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    stderr = 0.0 if n <= 2 else math.sqrt(ss_res / (n - 2) / sxx)
    return ScalingFit(tuple(xs), tuple(ys), slope, intercept, stderr, r2)


# --- configuration ---------------------------------------------------------

_CONFIG_KEYS = {
    "experiment": "one of " + ", ".join(EXPERIMENT_KINDS),
    "d": "lattice dimension (1..4)",
    "N": "torus side; 0 selects torus_factor*ceil(sqrt(T)) per T where supported",
    "L_grid": "comma-separated mask half-widths / annulus radii",
    "T_grid": "comma-separated zero-order times",
    "law.kind": "bernoulli | uniform | discrete",
    "law.params": "bernoulli: p,lo,hi; uniform: lo,hi; discrete: v1,p1,v2,p2,...",
    "xi": "comma-separated unit direction (d components)",
    "samples": "Monte Carlo samples (int, or comma list matched to T_grid)",
    "seed": "64-bit master seed",
    "tol": "relative residual tolerance for solves",
    "torus_factor": "wrap-suppression factor in the rule N >= factor*max(L, ceil(sqrt(T)))",
    "out": "output path prefix for <out>.json and <out>_<table>.csv",
}


@dataclass
class ExperimentConfig:
    experiment: str
    d: int
    n: int
    l_grid: tuple[int, ...]
    t_grid: tuple[float, ...]
    law: CoefficientLaw
    xi: tuple[float, ...]
    samples: tuple[int, ...]
    seed: int
    tol: float = 1e-8
    torus_factor: float = 8.0
    out: str | None = None

    def lattice(self) -> TorusLattice:
        return TorusLattice(self.d, self.n)

    def samples_for(self, t_index: int) -> int:
        if len(self.samples) == 1:
            return self.samples[0]
        return self.samples[t_index]

    def canonical(self) -> dict:
        """Config echo embedded in result files (deterministic content only)."""
        return {
            "experiment": self.experiment,
            "d": self.d,
            "N": self.n,
            "L_grid": list(self.l_grid),
            "T_grid": list(self.t_grid),
            "law.kind": self.law.kind,
            "law.params": list(self.law.params),
            "xi": list(self.xi),
            "samples": list(self.samples),
            "seed": self.seed,
            "tol": self.tol,
            "torus_factor": self.torus_factor,
        }


def _parse_floats(text: str, line: int, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as numbers", line)


def _parse_law(kind: str | None, params, line: int) -> CoefficientLaw:
    if kind is None:
        raise ConfigError("missing law.kind", line)
    try:
        if kind == "bernoulli":
            if len(params) != 3:
                raise ValueError("bernoulli needs p,lo,hi")
            return CoefficientLaw.bernoulli(*params)
        if kind == "uniform":
            if len(params) != 2:
                raise ValueError("uniform needs lo,hi")
            return CoefficientLaw.uniform(*params)
        if kind == "discrete":
            if len(params) % 2 != 0 or not params:
                raise ValueError("discrete needs v1,p1,v2,p2,...")
            return CoefficientLaw.discrete(params[0::2], params[1::2])
        raise ValueError(f"unknown law kind {kind!r}")
    except ValueError as exc:
        raise ConfigError(str(exc), line)


def parse_config(source: str | Path) -> ExperimentConfig:
    """Parse the flat key = value config format (# starts a comment)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and "=" not in source):
        text = Path(source).read_text()
    else:
        text = str(source)

    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected key = value, got {stripped!r}", lineno)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        raw[key] = (value, lineno)

    def need(key: str) -> tuple[str, int]:
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
        return raw[key]

    exp, line = need("experiment")
    if exp not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment {exp!r}", line)

    d_txt, line = need("d")
    try:
        d = int(d_txt)
    except ValueError:
        raise ConfigError(f"d: cannot parse {d_txt!r}", line)
    if not 1 <= d <= 4:
        raise ConfigError(f"d must be in 1..4, got {d}", line)

    n_txt, line = need("N")
    try:
        n = int(n_txt)
    except ValueError:
        raise ConfigError(f"N: cannot parse {n_txt!r}", line)

    l_txt, line = raw.get("L_grid", ("", 0))
    l_grid = tuple(int(v) for v in _parse_floats(l_txt, line, "L_grid")) if l_txt else ()
    t_txt, line = raw.get("T_grid", ("", 0))
    t_grid = _parse_floats(t_txt, line, "T_grid") if t_txt else ()

    kind_txt, kind_line = raw.get("law.kind", (None, 0))
    params_txt, params_line = raw.get("law.params", ("", 0))
    law = _parse_law(kind_txt, _parse_floats(params_txt, params_line, "law.params"),
                     kind_line)

    xi_txt, xi_line = raw.get("xi", ("", 0))
    if xi_txt:
        xi = _parse_floats(xi_txt, xi_line, "xi")
        if len(xi) != d:
            raise ConfigError(f"xi needs {d} components", xi_line)
        norm = math.sqrt(sum(v * v for v in xi))
        if norm == 0.0:
            raise ConfigError("xi must be nonzero", xi_line)
        xi = tuple(v / norm for v in xi)
    else:
        xi = tuple(1.0 if i == 0 else 0.0 for i in range(d))

    samp_txt, samp_line = need("samples")
    samples = tuple(int(v) for v in _parse_floats(samp_txt, samp_line, "samples"))
    if not samples or any(s < 2 for s in samples):
        raise ConfigError("samples must be >= 2", samp_line)
    if len(samples) not in (1, max(1, len(t_grid))):
        raise ConfigError("samples must be a single count or match T_grid",
                          samp_line)

    seed_txt, seed_line = need("seed")
    try:
        seed = int(seed_txt)
    except ValueError:
        raise ConfigError(f"seed: cannot parse {seed_txt!r}", seed_line)

    tol = 1e-8
    if "tol" in raw:
        tol_txt, tol_line = raw["tol"]
        try:
            tol = float(tol_txt)
        except ValueError:
            raise ConfigError(f"tol: cannot parse {tol_txt!r}", tol_line)
        if not 0 < tol < 1:
            raise ConfigError("tol must be in (0, 1)", tol_line)

    factor = 8.0
    if "torus_factor" in raw:
        f_txt, f_line = raw["torus_factor"]
        factor = float(f_txt)
        if factor <= 0:
            raise ConfigError("torus_factor must be positive", f_line)

    out = raw.get("out", (None, 0))[0]

    cfg = ExperimentConfig(exp, d, n, l_grid, t_grid, law, xi, samples, seed,
                           tol, factor, out)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    needs_grid = {
        "variance-scaling": ("L_grid", "T_grid"),
        "green-decay": ("L_grid", "T_grid"),
        "moment-growth": ("T_grid",),
        "identity-check": ("L_grid", "T_grid"),
        "caccioppoli": ("T_grid",),
        "susceptibility-battery": (),
        "spectral-gap": (),
    }[cfg.experiment]
    if "L_grid" in needs_grid and not cfg.l_grid:
        raise ConfigError(f"{cfg.experiment} requires L_grid")
    if "T_grid" in needs_grid and not cfg.t_grid:
        raise ConfigError(f"{cfg.experiment} requires T_grid")
    if cfg.n > 0:
        for ok, msg in torus_diagnostics(cfg):
            if not ok:
                raise ConfigError(msg)


def torus_diagnostics(cfg: ExperimentConfig) -> list[tuple[bool, str]]:
    """Torus-rule compliance report: N >= factor * max(L, ceil(sqrt(T)))."""
    out = []
    if cfg.n <= 0:
        out.append((True, "N = auto: side chosen per T from torus_factor"))
        return out
    for L in cfg.l_grid or (0,):
        for t in cfg.t_grid or (0.0,):
            need = cfg.torus_factor * max(L, math.ceil(math.sqrt(t)) if t else 0)
            ok = cfg.n >= need
            out.append((ok, f"L={L} T={t:g}: need N >= {need:g}, have {cfg.n}"))
    if cfg.l_grid and max(cfg.l_grid) > 0 and cfg.experiment == "variance-scaling":
        ok = 2 * max(cfg.l_grid) + 1 <= cfg.n
        out.append((ok, f"mask fit: 2*{max(cfg.l_grid)}+1 <= {cfg.n}"))
    return out


def config_schema() -> str:
    lines = ["config format: one `key = value` per line, # starts a comment", ""]
    for key, desc in _CONFIG_KEYS.items():
        lines.append(f"  {key:<14} {desc}")
    return "\n".join(lines)


# --- deterministic parallel map --------------------------------------------


def worker_count() -> int:
    env = os.environ.get("HOMOGLAT_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn, items) -> list:
    """Order-preserving map over items, pooled when workers > 1.

    The outputs depend only on the items, never on the pool size.
    """
    items = list(items)
    workers = min(worker_count(), len(items)) if items else 1
    if workers <= 1:
        return [fn(item) for item in items]
    ctx = get_context("fork")
    with ctx.Pool(processes=workers) as pool:
        return pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers)))


# --- per-sample workers (module level for picklability) --------------------


def _check_sample(sol, lineage: SeedLineage) -> None:
    lhs, ceiling = apriori_energy_bound(sol)
    if lhs > ceiling * (1 + 1e-12):
        raise SampleInvariantError(
            f"a priori energy bound violated ({lhs} > {ceiling}) at "
            f"{lineage.describe()}")


def _variance_sample(task) -> tuple:
    (law, d, n, t, l_values, xi, seed, idx, tol, stream) = task
    lat = TorusLattice(d, n)
    lineage = SeedLineage(seed, idx, stream)
    coeffs = sample(law, lat, lineage)
    log = RunLog()
    sol = corrector(coeffs, t, np.asarray(xi), tol=tol, log=log)
    _check_sample(sol, lineage)
    eps = energy_density(sol).values.values
    phi_sq = sol.phi.values**2
    a_values = []
    zero_order = []
    for L in l_values:
        mask = make_mask(lat, L)
        w = mask.weights.values
        a_values.append(float(np.dot(eps.ravel(), w.ravel())))
        zero_order.append(float(np.dot(phi_sq.ravel(), w.ravel())))
    return idx, a_values, zero_order, log.rows


def _green_decay_sample(task) -> tuple:
    (law, d, n, t, radii, seed, idx, tol, stream) = task
    lat = TorusLattice(d, n)
    lineage = SeedLineage(seed, idx, stream)
    coeffs = sample(law, lat, lineage)
    center = (n // 2,) * d
    log = RunLog()
    g = green(coeffs, t, center, tol=tol, log=log)
    if float(g.values.min()) < -1e-12 * max(float(g.values.max()), 1.0):
        raise SampleInvariantError(f"Green nonnegativity violated at "
                                   f"{lineage.describe()}")
    grad_norm = ScalarField(lat, np.sqrt(np.sum(gradient(g).values**2, axis=0)))
    rows = []
    for r in radii:
        rows.append((annulus_sum(grad_norm, center, r, 2.0),
                     annulus_sum(g, center, r, 2.0)))
    return idx, rows, log.rows


# --- experiment drivers -----------------------------------------------------


def _jackknife_variance(values: np.ndarray) -> float:
    """Jackknife standard error of the unbiased sample variance."""
    n = values.size
    s1 = values.sum()
    s2 = float(values @ values)
    l1 = s1 - values
    l2 = s2 - values**2
    loo = (l2 - l1**2 / (n - 1)) / (n - 2)
    return math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))


def run_variance_scaling(cfg: ExperimentConfig, log: RunLog | None = None) -> dict:
    rows = []
    fits = {}
    for ti, t in enumerate(cfg.t_grid):
        stream = f"var-d{cfg.d}-T{t:g}"
        n_samp = cfg.samples_for(ti)
        tasks = [(cfg.law, cfg.d, cfg.n, t, cfg.l_grid, cfg.xi, cfg.seed, s,
                  cfg.tol, stream) for s in range(n_samp)]
        results = sorted(parallel_map(_variance_sample, tasks))
        a_matrix = np.array([r[1] for r in results])
        z_matrix = np.array([r[2] for r in results])
        if log is not None:
            for r in results:
                log.rows.extend(r[3])
        variances = []
        for li, L in enumerate(cfg.l_grid):
            a_vals = a_matrix[:, li]
            est = McEstimate.from_samples(a_vals, f"seed={cfg.seed} stream={stream}")
            var_se = _jackknife_variance(a_vals)
            zvar = float(z_matrix[:, li].var(ddof=1))
            variances.append(est.variance)
            rows.append([cfg.d, cfg.n, t, L, n_samp, est.mean, est.variance,
                         var_se, est.ci_halfwidth, zvar])
        if len(cfg.l_grid) >= 3:
            fit = fit_loglog(cfg.l_grid, variances)
            fits[f"T={t:g}"] = {
                "slope": fit.slope, "intercept": fit.intercept,
                "slope_stderr": fit.slope_stderr, "r2": fit.r2,
            }
    return {
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "tables": {
            "variance": {
                "header": ["d", "N", "T", "L", "samples", "mean_A", "var_A",
                           "var_jackknife_se", "mean_ci", "zero_order_var"],
                "rows": rows,
            }
        },
        "fits": fits,
        "checks": {},
    }


def run_green_decay(cfg: ExperimentConfig, log: RunLog | None = None) -> dict:
    t = cfg.t_grid[0]
    radii = [float(r) for r in cfg.l_grid]
    stream = f"green-d{cfg.d}-T{t:g}"
    n_samp = cfg.samples_for(0)
    tasks = [(cfg.law, cfg.d, cfg.n, t, radii, cfg.seed, s, cfg.tol, stream)
             for s in range(n_samp)]
    results = sorted(parallel_map(_green_decay_sample, tasks))
    data = np.array([r[1] for r in results])  # (samples, R, 2)
    if log is not None:
        for r in results:
            log.rows.extend(r[2])
    rows = []
    grad_means = []
    for ri, r in enumerate(radii):
        grad_est = McEstimate.from_samples(data[:, ri, 0])
        g_est = McEstimate.from_samples(data[:, ri, 1])
        grad_means.append(grad_est.mean)
        rows.append([cfg.d, cfg.n, t, r, n_samp, grad_est.mean,
                     grad_est.ci_halfwidth, g_est.mean, g_est.ci_halfwidth])
    sqrt_t = math.sqrt(t)
    inside = [(r, m) for r, m in zip(radii, grad_means) if r < sqrt_t]
    outside = [(r, m) for r, m in zip(radii, grad_means) if r >= sqrt_t]
    fits = {}
    if len(inside) >= 3:
        f = fit_loglog(*zip(*inside))
        fits["grad_sq_inside"] = {"slope": f.slope, "slope_stderr": f.slope_stderr,
                                  "r2": f.r2}
    if len(outside) >= 3:
        f = fit_loglog(*zip(*outside))
        fits["grad_sq_outside"] = {"slope": f.slope, "slope_stderr": f.slope_stderr,
                                   "r2": f.r2}
    return {
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "tables": {
            "annulus": {
                "header": ["d", "N", "T", "R", "samples", "grad_sq_mean",
                           "grad_sq_ci", "green_sq_mean", "green_sq_ci"],
                "rows": rows,
            }
        },
        "fits": fits,
        "checks": {},
    }


def _polylog_vs_power(ts: np.ndarray, ys: np.ndarray) -> dict:
    """Residual comparison of y = c0 + c1 (ln T)^g (g <= 2) vs y = c T^b."""
    best = None
    for g in np.linspace(1.0, 2.0, 21):
        basis = np.vstack([np.ones_like(ts), np.log(ts) ** g]).T
        coef, *_ = np.linalg.lstsq(basis, ys, rcond=None)
        rss = float(np.sum((ys - basis @ coef) ** 2))
        if best is None or rss < best[1]:
            best = (float(g), rss)
    lt, ly = np.log(ts), np.log(ys)
    b, a = np.polyfit(lt, ly, 1)
    rss_power = float(np.sum((ys - np.exp(a) * ts**b) ** 2))
    return {
        "polylog_gamma": best[0],
        "polylog_rss": best[1],
        "power_rss": rss_power,
        "polylog_preferred": bool(best[1] <= rss_power),
    }


def run_moment_growth(cfg: ExperimentConfig) -> dict:
    q = 2.0
    samples = list(cfg.samples) if len(cfg.samples) > 1 \
        else [cfg.samples[0]] * len(cfg.t_grid)
    estimates = moment_growth(cfg.law, cfg.d, cfg.t_grid, q, samples,
                              cfg.seed, torus_factor=cfg.torus_factor,
                              tol=cfg.tol)
    rows = [[cfg.d, e.n, e.t, e.q, e.n_samples, e.mean, e.ci_halfwidth]
            for e in estimates]
    ts = np.array([e.t for e in estimates])
    ys = np.array([e.mean for e in estimates])
    fits = {}
    checks = {}
    if len(estimates) >= 3:
        f = fit_loglog(ts, ys)
        fits["moment_vs_T"] = {"slope": f.slope, "slope_stderr": f.slope_stderr,
                               "r2": f.r2}
        if cfg.d == 1:
            lo, hi = MOMENT_D1_SLOPE_BAND
            checks["d1_sqrtT_growth"] = {
                "slope": f.slope, "band": [lo, hi],
                "pass": bool(lo <= f.slope <= hi),
            }
    if cfg.d > 2:
        ratio = float(ys[-1] / ys[0])
        checks["boundedness_ratio"] = {
            "last_over_first": ratio,
            "max": MOMENT_HIGHD_RATIO_MAX,
            "pass": bool(ratio <= MOMENT_HIGHD_RATIO_MAX),
        }
    if cfg.d == 2 and len(estimates) >= 4:
        comparison = _polylog_vs_power(ts, ys)
        # qualitative, non-blocking: recorded but never fails the run
        comparison["pass"] = True
        checks["d2_polylog_model"] = comparison
    return {
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "tables": {
            "moments": {
                "header": ["d", "N", "T", "q", "samples", "estimate", "ci"],
                "rows": rows,
            }
        },
        "fits": fits,
        "checks": checks,
    }


def run_identity_check(cfg: ExperimentConfig) -> dict:
    lat = cfg.lattice()
    mask = make_mask(lat, cfg.l_grid[0])
    n1 = cfg.samples_for(0)
    id1 = append_identity_1(cfg.law, lat, mask, n1, cfg.seed)
    t = cfg.t_grid[0]
    n2 = cfg.samples[1] if len(cfg.samples) > 1 else n1
    id2 = append_identity_2(cfg.law, lat, t, n2, cfg.seed)
    rows = [[id1.name, id1.lhs, id1.rhs, id1.ci_halfwidth, id1.n_samples,
             int(id1.within())],
            [id2.name, id2.lhs, id2.rhs, id2.ci_halfwidth, id2.n_samples,
             int(id2.within())]]
    green_rows = []
    fits = {}
    if len(cfg.t_grid) >= 3:
        sums = [sum_green_sq(lat, tv) for tv in cfg.t_grid]
        for tv, sv in zip(cfg.t_grid, sums):
            green_rows.append([cfg.d, cfg.n, tv, sv])
        f = fit_loglog(cfg.t_grid, sums)
        fits["sum_green_sq_vs_T"] = {"slope": f.slope, "target": 2 - cfg.d / 2,
                                     "r2": f.r2}
    return {
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "tables": {
            "identities": {
                "header": ["identity", "lhs", "rhs", "ci", "samples", "pass"],
                "rows": rows,
            },
            "green_sq": {
                "header": ["d", "N", "T", "sum_green_sq"],
                "rows": green_rows,
            },
        },
        "fits": fits,
        "checks": {
            "append_1": {"ratio": id1.ratio, "pass": bool(id1.within())},
            "append_2": {"ratio": id2.ratio, "pass": bool(id2.within())},
        },
    }


def run_susceptibility_battery(cfg: ExperimentConfig) -> dict:
    n_cases = cfg.samples_for(0)
    t = cfg.t_grid[0] if cfg.t_grid else 128.0
    rows = []
    worst = 0.0
    for kind in ("phi", "green"):
        reports = susceptibility_battery(cfg.law, d=cfg.d, n=cfg.n, t=t,
                                         n_cases=n_cases, master_seed=cfg.seed,
                                         kind=kind, tol=1e-12)
        for r in reports:
            worst = max(worst, r.rel_error)
            rows.append([r.kind, str(r.edge.site), r.edge.direction,
                         str(r.point), str(r.second_point), r.analytic,
                         r.finite_difference, r.step, r.scheme, r.rel_error])
    ok = worst <= 1e-4
    return {
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "tables": {
            "susceptibility": {
                "header": ["kind", "edge_site", "edge_dir", "x", "y", "analytic",
                           "finite_difference", "h", "scheme", "rel_error"],
                "rows": rows,
            }
        },
        "fits": {},
        "checks": {"fd_match": {"worst_rel_error": worst, "tol": 1e-4,
                                "pass": bool(ok)}},
    }


def run_spectral_gap(cfg: ExperimentConfig) -> dict:
    if cfg.law.support is None:
        raise ConfigError("spectral-gap requires an atomic law")
    t = cfg.t_grid[0] if cfg.t_grid else 16.0
    rows = []
    all_hold = True
    for lat in (TorusLattice(1, 4), TorusLattice(2, 2)):
        for stat in SPECTRAL_GAP_STATISTICS:
            res = spectral_gap_verify(lat, cfg.law, stat, t=t)
            all_hold = all_hold and res.holds
            rows.append([lat.d, lat.n, stat, res.lhs, res.rhs, res.rhs_refined,
                         res.n_configs, int(res.holds)])
    return {
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "tables": {
            "spectral_gap": {
                "header": ["d", "N", "statistic", "lhs_var", "rhs_bound",
                           "rhs_refined_grid", "configs", "holds"],
                "rows": rows,
            }
        },
        "fits": {},
        "checks": {"spectral_gap": {"pass": bool(all_hold)}},
    }


def run_caccioppoli(cfg: ExperimentConfig) -> dict:
    rows = []
    ratios: dict[int, list[float]] = {0: [], 2: [], 4: []}
    for ti, t in enumerate(cfg.t_grid):
        n = cfg.n if cfg.n > 0 else max(8, int(math.ceil(
            cfg.torus_factor * math.sqrt(t))))
        lat = TorusLattice(cfg.d, n)
        sols = []
        for s in range(cfg.samples_for(ti)):
            coeffs = sample(cfg.law, lat,
                            SeedLineage(cfg.seed, s, f"cacc-T{t:g}"))
            sols.append(corrector(coeffs, t, np.asarray(cfg.xi), tol=cfg.tol))
        for n_pow in (0, 2, 4):
            res = caccioppoli_check(sols, n_pow, seed=cfg.seed)
            ratios[n_pow].append(res.ratio)
            rows.append([cfg.d, n, t, n_pow, res.n_samples, res.ratio,
                         res.ci_halfwidth])
    checks = {}
    for n_pow, vals in ratios.items():
        if len(vals) >= 2 and min(vals) > 0:
            spread = max(vals) / min(vals)
            checks[f"uniform_in_T_n{n_pow}"] = {"max_over_min": spread,
                                                "max": 5.0,
                                                "pass": bool(spread <= 5.0)}
    return {
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "tables": {
            "caccioppoli": {
                "header": ["d", "N", "T", "n", "samples", "ratio", "ci"],
                "rows": rows,
            }
        },
        "fits": {},
        "checks": checks,
    }


_RUNNERS = {
    "variance-scaling": run_variance_scaling,
    "green-decay": run_green_decay,
    "moment-growth": run_moment_growth,
    "identity-check": run_identity_check,
    "susceptibility-battery": run_susceptibility_battery,
    "spectral-gap": run_spectral_gap,
    "caccioppoli": run_caccioppoli,
}


def run_experiment(cfg: ExperimentConfig, runlog_path: str | Path | None = None) -> dict:
    runner = _RUNNERS[cfg.experiment]
    if runlog_path and cfg.experiment in ("variance-scaling", "green-decay"):
        log = RunLog()
        result = runner(cfg, log=log)
        log.write(runlog_path)
    else:
        result = runner(cfg)
    if cfg.out:
        write_result(result, cfg.out)
    return result


# --- deterministic emission -------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_result(result: dict, out_prefix: str | Path) -> list[Path]:
    """Write <prefix>.json and one CSV per table; bytes depend only on data."""
    prefix = Path(out_prefix)
    if prefix.parent != Path("."):
        prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    json_path = prefix.with_suffix(".json")
    json_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    written.append(json_path)
    for name, table in result.get("tables", {}).items():
        csv_path = Path(f"{prefix}_{name}.csv")
        with open(csv_path, "w") as fh:
            fh.write(",".join(table["header"]) + "\n")
            for row in table["rows"]:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        written.append(csv_path)
    return written


def export_result(json_path: str | Path, out_prefix: str | Path) -> list[Path]:
    """Re-emit a stored result JSON as CSV/JSON under a new prefix."""
    result = json.loads(Path(json_path).read_text())
    return write_result(result, out_prefix)
