"""Command-line interface: run experiments, verify the oracle battery,
inspect config schema/diagnostics, and re-export stored results.

Exit codes: 0 success, 1 check failure, 2 config error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments
from .experiments import ConfigError, SampleInvariantError, parse_config
from .homogenization import corrector, corrector_1d_exact
from .lattice import ScalarField, TorusLattice, VectorField, divergence_star, \
    gradient, make_mask
from .linearized import append_identity_1, append_identity_2, const_green
from .random_fields import CoefficientField, CoefficientLaw, SeedLineage, \
    generator, sample
from .sensitivity import SPECTRAL_GAP_STATISTICS, spectral_gap_verify, \
    susceptibility_battery
from .solver import EllipticOperator, RunLog, SolverError, green, solve


def _check_adjointness() -> tuple[str, bool, str]:
    lat = TorusLattice(3, 8)
    rng = generator(SeedLineage(7, 0, "check-adjoint"))
    worst = 0.0
    for _ in range(100):
        h = ScalarField(lat, rng.standard_normal(lat.shape))
        g = VectorField(lat, rng.standard_normal((lat.d,) + lat.shape))
        lhs = float(np.sum(h.values * divergence_star(g).values))
        rhs = -float(np.sum(gradient(h).values * g.values))
        scale = float(np.linalg.norm(h.values.ravel())
                      * np.linalg.norm(g.values.ravel()))
        worst = max(worst, abs(lhs - rhs) / scale)
    return "integration-by-parts adjointness", worst <= 1e-10, f"worst {worst:.2e}"


def _check_green_identities() -> tuple[str, bool, str]:
    lat = TorusLattice(2, 64)
    law = CoefficientLaw.bernoulli(0.5, 1.0, 4.0)
    t = 256.0
    ok = True
    details = []
    for s in range(3):
        coeffs = sample(law, lat, SeedLineage(11, s, "check-green"))
        y = (16 + 5 * s, 40 - 3 * s)
        g = green(coeffs, t, y, tol=1e-10)
        mass_err = abs(g.values.sum() / t - 1.0)
        ok = ok and mass_err <= 1e-8
        x = (5, 50)
        g_x = green(coeffs, t, x, tol=1e-10)
        sym_err = abs(float(g.values[x]) - float(g_x.values[y]))
        ok = ok and sym_err <= 1e-9
        ok = ok and float(g.values.min()) >= -1e-12
        details.append(f"mass {mass_err:.1e} sym {sym_err:.1e}")
    return "Green mass/symmetry/nonnegativity", ok, "; ".join(details)


def _check_fourier_vs_cg() -> tuple[str, bool, str]:
    lat = TorusLattice(2, 32)
    t = 64.0
    coeffs = CoefficientField.constant(lat, 1.0)
    y = (16, 16)
    g_cg = green(coeffs, t, y, tol=1e-12)
    g_ft = const_green(lat, t).shifted(y)
    err = float(np.abs(g_cg.values - g_ft.values).max())
    return "Fourier vs CG constant-coefficient Green", err <= 1e-9, f"max {err:.2e}"


def _check_susceptibility() -> tuple[str, bool, str]:
    law = CoefficientLaw.bernoulli(0.5, 1.0, 4.0)
    worst = 0.0
    for kind in ("phi", "green"):
        for r in susceptibility_battery(law, n_cases=20, master_seed=31,
                                        kind=kind):
            worst = max(worst, r.rel_error)
    return "susceptibility FD match", worst <= 1e-4, f"worst rel {worst:.2e}"


def _check_spectral_gap() -> tuple[str, bool, str]:
    law = CoefficientLaw.bernoulli(0.5, 1.0, 4.0)
    ok = True
    for lat in (TorusLattice(1, 4), TorusLattice(2, 2)):
        for stat in SPECTRAL_GAP_STATISTICS:
            res = spectral_gap_verify(lat, law, stat, t=16.0)
            ok = ok and res.holds
            if stat in ("edge_value", "edge_sum"):
                ok = ok and abs(res.lhs - res.rhs) <= 1e-10 * max(res.rhs, 1.0)
    return "spectral-gap enumeration", ok, "all statistics"


def _check_appendix_identities() -> tuple[str, bool, str]:
    law = CoefficientLaw.bernoulli(0.5, 1.0, 4.0)
    lat = TorusLattice(2, 64)
    id1 = append_identity_1(law, lat, make_mask(lat, 8), 400, 17)
    id2 = append_identity_2(law, TorusLattice(2, 128), 128.0, 150, 19)
    ok = id1.within() and id2.within()
    return ("appendix exact identities", ok,
            f"append-1 ratio {id1.ratio:.4f}, append-2 ratio {id2.ratio:.4f}")


def _check_d1_exact() -> tuple[str, bool, str]:
    lat = TorusLattice(1, 64)
    law = CoefficientLaw.bernoulli(0.5, 1.0, 4.0)
    coeffs = sample(law, lat, SeedLineage(23, 0, "check-d1"))
    grad = corrector_1d_exact(coeffs).values[0]
    flux = coeffs.values[0] * (1.0 + grad)
    err = float(np.abs(flux - flux.mean()).max())
    return "d=1 series-resistor flux constancy", err <= 1e-12, f"max dev {err:.1e}"


def _check_manufactured() -> tuple[str, bool, str]:
    lat = TorusLattice(2, 16)
    law = CoefficientLaw.uniform(1.0, 2.0)
    coeffs = sample(law, lat, SeedLineage(29, 0, "check-manufactured"))
    rng = generator(SeedLineage(29, 1, "check-manufactured-u"))
    u_star = ScalarField(lat, rng.standard_normal(lat.shape))
    op = EllipticOperator(coeffs, 0.25)
    rhs = op.apply(u_star)
    u, _ = solve(op, rhs, tol=1e-12)
    rel = float(np.linalg.norm((u.values - u_star.values).ravel())
                / np.linalg.norm(u_star.values.ravel()))
    return "manufactured-solution solve", rel <= 1e-10, f"rel err {rel:.2e}"


_CHECKS = [
    _check_adjointness,
    _check_green_identities,
    _check_fourier_vs_cg,
    _check_manufactured,
    _check_d1_exact,
    _check_spectral_gap,
    _check_susceptibility,
    _check_appendix_identities,
]


def cmd_check() -> int:
    t0 = time.perf_counter()
    failures = 0
    for fn in _CHECKS:
        try:
            name, ok, detail = fn()
        except SolverError as exc:
            print(f"[FAIL] {fn.__name__}: solver failure: {exc}")
            return 3
        status = " ok " if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failures += 0 if ok else 1
    elapsed = time.perf_counter() - t0
    print(f"{len(_CHECKS) - failures}/{len(_CHECKS)} checks passed "
          f"in {elapsed:.1f}s")
    return 0 if failures == 0 else 1


def cmd_run(config_path: str, runlog: str | None) -> int:
    try:
        cfg = parse_config(Path(config_path))
    except FileNotFoundError:
        print(f"config error: no such file: {config_path}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error in {config_path}: {exc}", file=sys.stderr)
        return 2
    try:
        result = experiments.run_experiment(cfg, runlog_path=runlog)
    except (SolverError, SampleInvariantError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    if cfg.out:
        print(f"wrote {cfg.out}.json")
    else:
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_info(config_path: str | None) -> int:
    print(experiments.config_schema())
    print()
    print("experiments:", ", ".join(experiments.EXPERIMENT_KINDS))
    if config_path:
        try:
            cfg = parse_config(Path(config_path))
        except ConfigError as exc:
            print(f"config error in {config_path}: {exc}", file=sys.stderr)
            return 2
        print()
        print(f"torus-rule diagnostics for {config_path}:")
        for ok, msg in experiments.torus_diagnostics(cfg):
            print(f"  [{'ok' if ok else '!!'}] {msg}")
    return 0


def cmd_export(json_path: str, out_prefix: str) -> int:
    try:
        written = experiments.export_result(json_path, out_prefix)
    except FileNotFoundError:
        print(f"config error: no such file: {json_path}", file=sys.stderr)
        return 2
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="homoglat",
        description="stochastic-homogenization numerical laboratory")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config file")
    p_run.add_argument("config")
    p_run.add_argument("--runlog", default=None,
                       help="append solver reports to this CSV (timings; "
                            "not part of the deterministic results)")

    sub.add_parser("check", help="run the full invariant/oracle battery")

    p_info = sub.add_parser("info", help="print config schema and diagnostics")
    p_info.add_argument("config", nargs="?", default=None)

    p_exp = sub.add_parser("export", help="re-emit a stored result as CSV/JSON")
    p_exp.add_argument("result_json")
    p_exp.add_argument("out_prefix")

    args = parser.parse_args(argv)
    if args.verb == "run":
        return cmd_run(args.config, args.runlog)
    if args.verb == "check":
        return cmd_check()
    if args.verb == "info":
        return cmd_info(args.config)
    return cmd_export(args.result_json, args.out_prefix)


if __name__ == "__main__":
    sys.exit(main())
