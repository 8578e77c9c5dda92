"""``tbflip`` command line: simulate, spectral, compare, oracle, validate.

Exit codes: 0 pass, 1 validation error, 2 numerical failure, 3 acceptance
threshold failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .ensemble import (EnsembleError, EnsembleSpec, characteristic_function, fit_diffusion_cf, fit_diffusion_m2,
                       run_ensemble, second_moment)
from .lattice import LatticeWindow
from .spectral.basis import DimensionError
from .spectral.dense import fiber_consistency, pillet_oracle
from .spectral.dispersion import spectral_report

log = logging.getLogger("tbflip")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3

# cross-method agreement thresholds used by ``compare``
REL_TOL = 0.10
N_SIGMA = 3.0


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _tag(cfg: io.RunConfig, *blocks: str) -> str:
    d = cfg.to_dict()
    keep = {"model": cfg.model_block()}
    if "ensemble" in blocks:
        keep["ensemble"] = {k: d[k] for k in ("n_traj", "seed", "t_max", "n_times", "fit_start")}
    if "spectral" in blocks:
        keep["spectral"] = {k: d[k] for k in ("truncation", "k_max", "n_k", "tol", "gap")}
    if "oracle" in blocks:
        keep["oracle"] = {k: d[k] for k in ("oracle_L", "oracle_lam", "oracle_t", "oracle_n_traj")}
    return io.param_hash(keep)


def _out_dir(cfg: io.RunConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _estimate_dict(est) -> dict:
    return {"D": est.D, "stderr": est.stderr, "covariance": est.covariance, "method": est.method,
            "fit_window": list(est.fit_window), "r2": est.r2, "flags": est.flags, "diagnostics": est.diagnostics}


def _cf_ks(d: int, D_guess: float, t_max: float, window: LatticeWindow, n: int = 6) -> list[np.ndarray]:
    """Six wavevectors along the first axis with ``D k^2 t_max`` spread over ``(0, 2]``."""
    if not (np.isfinite(D_guess) and D_guess > 0):
        D_guess = 1.0
    kc = math.sqrt(2.0 / (D_guess * t_max))
    kmin = 2 * math.pi / window.side
    return [np.eye(d)[0] * max(kc * math.sqrt(j / n), kmin * j) for j in range(1, n + 1)]


def simulate(cfg: io.RunConfig) -> tuple[dict, list[Path]]:
    h = cfg.hopping()
    window = LatticeWindow(cfg.d, cfg.L)
    times = cfg.times()
    spec = EnsembleSpec(h, cfg.lam, cfg.rate, window, cfg.n_traj, cfg.seed, times)
    try:
        field = run_ensemble(spec, progress_every=max(1, cfg.n_traj // 10))
    except EnsembleError as exc:
        raise CommandError(EXIT_NUMERICAL, str(exc)) from exc
    out = _out_dir(cfg)
    tag = _tag(cfg, "ensemble")
    files = []

    se = field.site_stderr()
    coords = window.offsets()
    xs = [";".join(str(int(c)) for c in row) for row in coords]
    rows = ((field.times[c], i, xs[i], field.mean[c, i], se[c, i])
            for c in range(len(times)) for i in range(window.n_sites))
    files.append(io.write_csv(out / f"field_{tag}.csv", "field", rows))

    m2, valid = second_moment(field)
    files.append(io.write_csv(out / f"m2_{tag}.csv", "m2",
                              zip(field.times, m2.value, m2.stderr, valid.astype(int))))

    fit_lo = cfg.fit_start if cfg.fit_start < cfg.t_max else cfg.t_max / 2
    try:
        est_m2 = fit_diffusion_m2(field, (fit_lo, cfg.t_max))
    except ValueError as exc:
        raise CommandError(EXIT_INVALID, f"fit window: {exc}") from exc
    ks = _cf_ks(cfg.d, float(np.trace(est_m2.D)) / cfg.d, cfg.t_max, window)
    cf_rows = []
    for k in ks:
        cf, q = characteristic_function(field, k)
        for c, t in enumerate(field.times):
            cf_rows.append((t, float(k[0]), float(q[0]), cf.value[c].real, cf.value[c].imag,
                            cf.stderr[c].real, cf.stderr[c].imag))
    files.append(io.write_csv(out / f"cf_{tag}.csv", "cf", cf_rows))
    fit_times = field.times[field.times >= fit_lo - 1e-12]
    est_cf = fit_diffusion_cf(field, ks, 1.0, fit_times)

    payload = {
        "model": cfg.model_block(),
        "ensemble": {"n_traj": cfg.n_traj, "seed": cfg.seed, "times": field.times},
        "max_norm_drift": field.max_norm_drift,
        "trace_error": float(np.abs(field.trace() - 1).max()),
        "m2_fit": _estimate_dict(est_m2),
        "cf_fit": _estimate_dict(est_cf),
        "cf_k": [k.tolist() for k in ks],
    }
    files.append(io.write_json(out / f"estimates_{tag}.json", payload))
    plot = out / "plot_summary.py"
    plot.write_text(io.PLOT_SCRIPT)
    files.append(plot)
    return payload, files


def spectral(cfg: io.RunConfig) -> tuple[dict, list[Path]]:
    h = cfg.hopping()
    try:
        ks = [np.eye(cfg.d)[0] * s for s in np.linspace(0.0, cfg.k_max, cfg.n_k)]
        rep = spectral_report(cfg.lam, cfg.rate, h, cfg.truncation, k_points=ks, gap=cfg.gap)
    except DimensionError as exc:
        raise CommandError(EXIT_INVALID, f"truncation rejected: {exc}") from exc
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        raise CommandError(EXIT_NUMERICAL, f"spectral computation failed: {exc}") from exc
    out = _out_dir(cfg)
    tag = _tag(cfg, "spectral")
    files = []
    payload = {"model": cfg.model_block(), **rep.to_dict()}
    files.append(io.write_json(out / f"spectral_{tag}.json", payload))
    files.append(io.write_csv(out / f"dispersion_{tag}.csv", "dispersion",
                              ((float(k[0]), e.real, e.imag) for k, e in rep.E_of_k)))
    g = rep.gap_report
    if g is not None:
        files.append(io.write_csv(out / f"gap_scan_{tag}.csv", "gap_scan",
                                  ((cfg.lam, g.delta_lambda, g.gap, g.gap_doubled, g.drift, i, z.real, z.imag)
                                   for i, z in enumerate(g.eigenvalues))))
    return payload, files


def _load_json(path: Path, prefix: str) -> dict:
    path = Path(path)
    if path.is_dir():
        found = sorted(path.glob(f"{prefix}_*.json"))
        if not found:
            raise CommandError(EXIT_INVALID, f"{path}: no {prefix}_*.json output found")
        path = found[-1]
    if not path.is_file():
        raise CommandError(EXIT_INVALID, f"{path}: missing input")
    return json.loads(path.read_text())


def compare(cfg: io.RunConfig, sim_in=None, spec_in=None) -> tuple[dict, list[Path]]:
    if cfg.lam == 0:
        raise CommandError(EXIT_INVALID, "compare declined: at lam = 0 transport is ballistic and there is no "
                                         "diffusion matrix to compare")
    files = []
    if sim_in is not None:
        sim = _load_json(sim_in, "estimates")
    else:
        sim, f = simulate(cfg)
        files += f
    if spec_in is not None:
        spc = _load_json(spec_in, "spectral")
    else:
        spc, f = spectral(cfg)
        files += f
    if sim["model"] != spc["model"]:
        raise CommandError(EXIT_INVALID, f"model blocks differ: simulate {sim['model']} vs spectral {spc['model']}")
    D_spec = np.asarray(spc["D_matrix"], dtype=float)
    D_hess = np.asarray(spc["D_hessian"], dtype=float)
    if not np.all(np.isfinite(D_spec)):
        raise CommandError(EXIT_NUMERICAL, "spectral D is not available (see spectral warnings)")
    spec_err = float(np.abs(D_spec - D_hess).max()) if np.all(np.isfinite(D_hess)) else 0.0
    tr_spec = float(np.trace(D_spec))
    rows = {}
    ok = True
    for name in ("m2_fit", "cf_fit"):
        est = sim[name]
        D = np.asarray(est["D"], dtype=float)
        cov = np.asarray(est["covariance"], dtype=float)
        d = D.shape[0]
        sel = [i * d + i for i in range(d)]
        se_mc = float(np.sqrt(cov[np.ix_(sel, sel)].sum())) if np.all(np.isfinite(cov)) else float("nan")
        sigma = math.hypot(se_mc, spec_err)
        diff = float(np.trace(D)) - tr_spec
        rel = abs(diff) / abs(tr_spec)
        z = abs(diff) / sigma if sigma > 0 else float("inf")
        passed = bool(rel <= REL_TOL and z <= N_SIGMA)
        rows[name] = {"trace_D_mc": float(np.trace(D)), "stderr": se_mc, "relative_difference": rel,
                      "joint_sigma": sigma, "z": z, "passed": passed, "flags": est["flags"]}
        if name == "m2_fit":
            ok = ok and passed
    report = {
        "model": sim["model"],
        "trace_D_spectral": tr_spec,
        "spectral_truncation_error": spec_err,
        "estimators": rows,
        "gaussian_shape": {"cf_r2": sim["cf_fit"]["r2"], "cf_intercept": sim["cf_fit"]["diagnostics"]["intercept"],
                           "cf_intercept_se": sim["cf_fit"]["diagnostics"]["intercept_se"]},
        "thresholds": {"relative": REL_TOL, "n_sigma": N_SIGMA},
        "passed": ok,
    }
    out = _out_dir(cfg)
    files.append(io.write_json(out / f"compare_{_tag(cfg, 'ensemble', 'spectral')}.json", report))
    return report, files


def oracle(cfg: io.RunConfig) -> tuple[dict, list[Path]]:
    h = cfg.hopping()
    window = LatticeWindow(cfg.d, cfg.oracle_L)
    t = cfg.oracle_t
    try:
        fib = fiber_consistency(h, window, cfg.oracle_lam, cfg.rate, t)
        spec = EnsembleSpec(h, cfg.oracle_lam, cfg.rate, window, cfg.oracle_n_traj, cfg.seed, [t])
        field = run_ensemble(spec)
        rep = pillet_oracle(h, window, cfg.oracle_lam, cfg.rate, t, field=field)
    except DimensionError as exc:
        raise CommandError(EXIT_INVALID, f"oracle instance rejected: {exc}") from exc
    except EnsembleError as exc:
        raise CommandError(EXIT_NUMERICAL, str(exc)) from exc
    if t == 0:
        # both sides are the initial density exactly
        err = float(np.abs(rep.mc_mean - rep.diag).max())
        z = np.zeros(window.n_sites)
        pill_ok = err <= 1e-12
    else:
        z = rep.z_scores
        pill_ok = rep.passed(N_SIGMA) and float(rep.mc_stderr.max()) <= 0.01
    fib_ok = fib.passed(1e-9)
    out = _out_dir(cfg)
    tag = _tag(cfg, "oracle")
    files = []
    offs = window.offsets()
    files.append(io.write_csv(out / f"oracle_{tag}.csv", "oracle",
                              ((i, ";".join(map(str, offs[i])), rep.diag[i], rep.mc_mean[i], rep.mc_stderr[i], z[i])
                               for i in range(window.n_sites))))
    payload = {
        "model": cfg.model_block(),
        "oracle": {"L": cfg.oracle_L, "lam": cfg.oracle_lam, "t": t, "n_traj": cfg.oracle_n_traj},
        "pillet": {"max_z": float(np.max(z)), "max_stderr": float(np.max(rep.mc_stderr)), "passed": pill_ok},
        "fiber": {"max_error": fib.max_error, "passed": fib_ok},
        "passed": bool(pill_ok and fib_ok),
    }
    files.append(io.write_json(out / f"oracle_{tag}.json", payload))
    return payload, files


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tbflip", description="Tight-binding particle in a spin-flip potential.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "Monte Carlo ensemble, CF/M2 tables and diffusion fits"),
                       ("spectral", "dispersion, diffusion matrix and gap of the fibered generator"),
                       ("compare", "Monte Carlo vs spectral diffusion matrix"),
                       ("oracle", "tiny-instance dense cross-checks"),
                       ("validate", "check a configuration and print it resolved")):
        s = sub.add_parser(name, help=text)
        s.add_argument("-c", "--config", help="INI configuration file")
        s.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration key (repeatable)")
        s.add_argument("-o", "--out", help="output directory (overrides output.dir)")
        s.add_argument("-m", "--from-manifest", help="reuse the configuration recorded in a manifest")
        if name == "compare":
            s.add_argument("--simulate-output", help="estimates JSON or directory from a previous simulate run")
            s.add_argument("--spectral-output", help="spectral JSON or directory from a previous spectral run")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        overrides = io.overrides_from_manifest(args.from_manifest) if args.from_manifest else []
        overrides += list(args.set)
        if args.out:
            overrides.append(f"output.dir={args.out}")
        cfg = io.load_config(args.command, args.config, overrides)
        if args.command == "validate":
            print(json.dumps(cfg.to_dict(), indent=2, default=str))
            return EXIT_OK
        if args.command == "simulate":
            payload, files = simulate(cfg)
            passed = True
        elif args.command == "spectral":
            payload, files = spectral(cfg)
            passed = True
        elif args.command == "compare":
            payload, files = compare(cfg, args.simulate_output, args.spectral_output)
            passed = payload["passed"]
        else:
            payload, files = oracle(cfg)
            passed = payload["passed"]
        manifest = io.write_manifest(cfg.out_dir, cfg, files, files[0].stem.rsplit("_", 1)[-1])
    except (io.ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"tbflip: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CommandError as exc:
        print(f"tbflip {args.command}: {exc}", file=sys.stderr)
        return exc.code
    for f in files:
        print(f)
    print(manifest)
    if not passed:
        print(f"tbflip {args.command}: acceptance thresholds not met", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
