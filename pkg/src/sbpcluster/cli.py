"""Batch front end: config parsing, workflow orchestration, reports.

Config files are flat ``key = value`` text: '#' comments, blank lines
ignored, repeated keys accumulate into lists, unknown keys rejected.  Flags
override config keys.  Exit codes: 0 success, 2 no-convergence, 3 empty
admissible window, 1 any other internal error.
"""

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .ansatz import (ALPHA_FLOOR, PeakConfig, admissible_interval,
                     anisotropic_potential, canonical_radius, choose_exponents,
                     gram_matrix_of, make_params, peak_positions,
                     radial_potential, tangent_basis)
from .bpfield import BPParams, solve_potential_direct, solve_potential_spectral
from .energy import make_context
from .errors import (EmptyAdmissible, NoConvergence, ParseError, SbpError,
                     ValidationError)
from .fields import ScalarField3D, UniformGrid, dump_field, integrate
from .groundstate import constants as profile_constants
from .groundstate import save_profile, solve_ground_state
from .reduction import (CSV_HEADER, _sweep_one, pseudo_critical_residual,
                        reduced_energy_full, row_to_csv, sweep_grid)

COMMANDS = ("ground-state", "field-check", "ansatz-check", "landscape",
            "solve", "verify-theorem", "sweep")

DEFAULT_EPS_SWEEP = (0.2, 0.14, 0.1, 0.07, 0.05, 0.035, 0.025)

_POTENTIALS = ("radial", "anisotropic", "none")

# key -> (type tag, repeatable)
_SCHEMA = {
    "command": ("str", False),
    "p": ("float", False),
    "a": ("float", False),
    "alpha": ("float", False),
    "lambda": ("float", False),
    "beta": ("float", False),
    "eps": ("float", True),
    "K": ("int", False),
    "potential": ("str", False),
    "tol": ("float", False),
    "r_max": ("float", False),
    "output_dir": ("str", False),
    "workers": ("int", False),
    "seed": ("int", False),
    "grid_n": ("int", False),
    "grid_L": ("float", False),
    "n_sources": ("int", False),
    "landscape_points": ("int", False),
    "dump_fields": ("bool", False),
}


@dataclass
class RunConfig:
    command: str = "sweep"
    p: float = 3.0
    a: float = 1.0
    alpha: float = 6.0
    lam: float = None
    beta: float = None
    eps_list: tuple = DEFAULT_EPS_SWEEP
    K: int = 2
    potential: str = "radial"
    tol: float = 1e-8
    r_max: float = 25.0
    output_dir: str = "."
    workers: int = 1
    seed: int = 0
    grid_n: int = None
    grid_L: float = None
    n_sources: int = 10
    landscape_points: int = 9
    dump_fields: bool = False


def _coerce(key, raw, line_no):
    kind = _SCHEMA[key][0]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ParseError(f"cannot read {key!r} value {raw!r}",
                         line=line_no, key=key) from None


def parse_config_text(text):
    """Parse flat key=value config text into a validated RunConfig."""
    items = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"expected key = value, got {body!r}",
                             line=line_no)
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _SCHEMA:
            raise ParseError(f"unknown key {key!r}", line=line_no, key=key)
        value = _coerce(key, raw, line_no)
        if _SCHEMA[key][1]:
            items.setdefault(key, []).append(value)
        elif key in items:
            raise ParseError(f"duplicate key {key!r}", line=line_no, key=key)
        else:
            items[key] = value
    return config_from_items(items)


def parse_config(path):
    return parse_config_text(Path(path).read_text())


def config_from_items(items):
    cfg = RunConfig()
    renames = {"lambda": "lam", "eps": "eps_list"}
    for key, value in items.items():
        setattr(cfg, renames.get(key, key), value)
    if isinstance(cfg.eps_list, list):
        cfg.eps_list = tuple(cfg.eps_list)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg.command not in COMMANDS:
        raise ValidationError("command", f"one of {', '.join(COMMANDS)}")
    if not 1.0 < cfg.p < 5.0:
        raise ValidationError("p", "in (1, 5)")
    if cfg.a <= 0.0:
        raise ValidationError("a", "> 0")
    if cfg.alpha <= ALPHA_FLOOR:
        raise ValidationError("alpha", "> 3+sqrt(7) ~= 5.6458")
    if cfg.K < 2:
        raise ValidationError("K", ">= 2")
    for eps in cfg.eps_list:
        if not 0.0 < eps < 1.0:
            raise ValidationError("eps", "in (0, 1)")
    if not cfg.eps_list:
        raise ValidationError("eps", "at least one value")
    if cfg.potential not in _POTENTIALS:
        raise ValidationError("potential",
                              f"one of {', '.join(_POTENTIALS)}")
    if not 1e-14 < cfg.tol < 1e-4:
        raise ValidationError("tol", "in (1e-14, 1e-4)")
    if cfg.r_max < 20.0:
        raise ValidationError("r_max", ">= 20")
    if cfg.workers < 1:
        raise ValidationError("workers", ">= 1")
    if cfg.seed < 0:
        raise ValidationError("seed", ">= 0")
    if cfg.grid_n is not None and (cfg.grid_n < 32 or cfg.grid_n % 2):
        raise ValidationError("grid_n", "even and >= 32")
    if cfg.grid_L is not None and cfg.grid_L <= 0.0:
        raise ValidationError("grid_L", "> 0")
    if cfg.n_sources < 1:
        raise ValidationError("n_sources", ">= 1")
    if cfg.landscape_points < 2:
        raise ValidationError("landscape_points", ">= 2")
    # derive the window exponents once so bad alpha fails here, not mid-run
    lam_auto, beta_auto = choose_exponents(cfg.alpha)
    if cfg.lam is None:
        cfg.lam = lam_auto
    if cfg.beta is None:
        cfg.beta = beta_auto
    window = (2.0 * (cfg.alpha + 2.0) / (cfg.alpha - 1.0),
              min(2.0 * cfg.alpha - 8.0, cfg.alpha))
    if not window[0] < cfg.lam < window[1]:
        raise ValidationError(
            "lambda", f"in ({window[0]:.4f}, {window[1]:.4f})")
    beta_hi = (cfg.alpha - cfg.lam) / (cfg.alpha + 1.0)
    if not 0.0 < cfg.beta < beta_hi:
        raise ValidationError("beta", f"in (0, {beta_hi:.4f})")
    return cfg


def _make_pot(cfg):
    if cfg.potential == "none":
        return None
    if cfg.potential == "anisotropic":
        return anisotropic_potential(alpha=cfg.alpha)
    return radial_potential(alpha=cfg.alpha)


def _params_for(cfg, eps):
    return make_params(eps, a=cfg.a, p=cfg.p, alpha=cfg.alpha, lam=cfg.lam,
                       beta=cfg.beta)


def _grid_for(cfg, params, profile):
    if cfg.grid_n is not None and cfg.grid_L is not None:
        return UniformGrid(half_width=cfg.grid_L, n=cfg.grid_n)
    grid = sweep_grid(params, profile.eta_fit)
    n = cfg.grid_n if cfg.grid_n is not None else grid.n
    half = cfg.grid_L if cfg.grid_L is not None else grid.half_width
    return UniformGrid(half_width=half, n=n)


class _Report:
    """Sole file writer: line-flushed CSV plus an end-of-run manifest."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.dir = Path(cfg.output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.t0 = time.perf_counter()
        self.phases = {}
        self.summary = {}
        self._csv = None

    def open_csv(self, name, header):
        self._csv = open(self.dir / name, "w", newline="")
        self._csv.write(header + "\n")
        self._csv.flush()
        return self

    def write_row(self, line):
        self._csv.write(line + "\n")
        self._csv.flush()

    def close(self, status):
        if self._csv is not None:
            self._csv.close()
            self._csv = None
        import numba
        import scipy

        from . import __version__
        manifest = {
            "config": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in vars(self.cfg).items()},
            "versions": {
                "python": sys.version.split()[0],
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "numba": numba.__version__,
                "sbpcluster": __version__,
            },
            "wall_times": {"total": time.perf_counter() - self.t0,
                           **self.phases},
            "summary": self.summary,
            "status": status,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        with open(self.dir / "manifest.json", "w") as handle:
            json.dump(manifest, handle, indent=2)
            handle.write("\n")


def _cmd_ground_state(cfg, report):
    t0 = time.perf_counter()
    profile = solve_ground_state(cfg.p, r_max=cfg.r_max, tol=cfg.tol)
    consts = profile_constants(profile, k_peaks=cfg.K)
    report.phases["ground_state"] = time.perf_counter() - t0
    save_profile(profile, report.dir / "profile.txt")
    header = ("p,u0,c0,c1,norm_l2_sq,norm_grad_sq,norm_lp1,d1_h1,sigma,"
              "gamma,abs_moment,eta_fit")
    report.open_csv("constants.csv", header)
    report.write_row(",".join([
        f"{cfg.p:.10g}", f"{profile.u[0]:.12g}", f"{consts.c0:.12g}",
        f"{consts.c1:.12g}", f"{consts.norm_l2_sq:.12g}",
        f"{consts.norm_grad_sq:.12g}", f"{consts.norm_lp1:.12g}",
        f"{consts.norm_d1U_h1_sq:.12g}", f"{consts.sigma:.10g}",
        f"{consts.gamma:.12g}", f"{consts.abs_moment:.12g}",
        f"{profile.eta_fit:.10g}"]))
    print(f"ground state p={cfg.p}: U(0)={profile.u[0]:.10f} "
          f"C0={consts.c0:.8f} C1={consts.c1:.8f} "
          f"d1U_H1={consts.norm_d1U_h1_sq:.8f}")
    return 0


def random_smooth_source(grid, rng):
    """Superposition of three random Gaussians, decayed well inside the box."""
    mesh = grid.mesh()
    vals = np.zeros((grid.n,) * 3)
    for _ in range(3):
        center = rng.uniform(-grid.half_width / 3.0, grid.half_width / 3.0, 3)
        width = rng.uniform(grid.half_width / 6.0, grid.half_width / 3.0)
        amp = rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])
        r2 = sum((m - c) ** 2 for m, c in zip(mesh, center))
        vals += amp * np.exp(-r2 / (2.0 * width ** 2))
    return ScalarField3D(grid, vals)


def _cmd_field_check(cfg, report):
    n = cfg.grid_n if cfg.grid_n is not None else 32
    half = cfg.grid_L if cfg.grid_L is not None else 8.0
    grid = UniformGrid(half_width=half, n=n)
    params = BPParams(a=cfg.a, eps=cfg.eps_list[0])
    rng = np.random.default_rng(cfg.seed)
    report.open_csv("field_check.csv", "source,rel_l2_error")
    worst = 0.0
    for idx in range(cfg.n_sources):
        src = random_smooth_source(grid, rng)
        spec_phi = solve_potential_spectral(src, params)
        direct_phi = solve_potential_direct(src, params)
        diff = spec_phi - direct_phi
        rel = math.sqrt(integrate(diff * diff)
                        / integrate(direct_phi * direct_phi))
        worst = max(worst, rel)
        report.write_row(f"{idx},{rel:.6e}")
    verdict = "PASS" if worst < 1e-3 else "FAIL"
    print(f"field-check {cfg.n_sources} sources on {n}^3: "
          f"max rel error {worst:.3e} [{verdict}]")
    return 0


def _cmd_ansatz_check(cfg, report):
    eps = cfg.eps_list[0]
    params = _params_for(cfg, eps)
    profile = solve_ground_state(cfg.p, r_max=cfg.r_max, tol=cfg.tol)
    pot = _make_pot(cfg)
    grid = _grid_for(cfg, params, profile)
    ctx = make_context(params, pot, grid, profile)
    r_c = canonical_radius(params)
    window = admissible_interval(params, pot) if pot is not None else None
    peak_cfg = PeakConfig(r=r_c, theta=0.0, phi=math.pi / 2.0, K=cfg.K)
    gram = gram_matrix_of(tangent_basis(peak_cfg, profile, grid))
    eigs = np.linalg.eigvalsh(gram)
    resid = pseudo_critical_residual(peak_cfg, ctx)
    positions = peak_positions(peak_cfg)
    dmin = min(np.linalg.norm(positions[i] - positions[j])
               for i in range(cfg.K) for j in range(i + 1, cfg.K))
    report.open_csv("ansatz_check.csv",
                    "eps,K,r,min_separation,grid_h,gram_min_eig,"
                    "gram_max_eig,residual_h1")
    report.write_row(",".join([
        f"{eps:.10g}", str(cfg.K), f"{r_c:.10g}", f"{dmin:.6g}",
        f"{grid.spacing:.6g}", f"{eigs[0]:.6e}", f"{eigs[-1]:.6e}",
        f"{resid:.6e}"]))
    if window is not None:
        print(f"admissible window: ({window[0]:.4f}, {window[1]:.4f})")
    print(f"ansatz eps={eps} K={cfg.K} r={r_c:.4f}: "
          f"|grad I(W)| = {resid:.4e} (eps^2 = {eps**2:.4e}), "
          f"gram eigs [{eigs[0]:.3e}, {eigs[-1]:.3e}]")
    return 0


def _cmd_landscape(cfg, report):
    eps = cfg.eps_list[0]
    params = _params_for(cfg, eps)
    profile = solve_ground_state(cfg.p, r_max=cfg.r_max, tol=cfg.tol)
    pot = _make_pot(cfg)
    window = admissible_interval(params, pot) if pot is not None else None
    if window is None and pot is not None:
        raise EmptyAdmissible(f"no admissible radius at eps={eps}")
    grid = _grid_for(cfg, params, profile)
    if window is None:
        r_c = canonical_radius(params)
        window = (0.5 * r_c, 2.0 * r_c)
    # leave half a cell so the snapped top radius stays inside the margin
    reach = grid.half_width - 12.0 / profile.eta_fit
    r_hi = min(window[1], reach - 0.5 * grid.spacing)
    ctx = make_context(params, pot, grid, profile)
    report.open_csv("landscape.csv", "eps,K,r,phi_eps,n_norm,converged")
    n0 = None
    for r in np.linspace(window[0], r_hi, cfg.landscape_points):
        peak_cfg = PeakConfig(r=float(r), theta=0.0, phi=math.pi / 2.0,
                              K=cfg.K)
        try:
            val, aux = reduced_energy_full(peak_cfg, ctx, n0=n0)
            n0 = aux.n
            report.write_row(f"{eps:.10g},{cfg.K},{r:.10g},{val:.17g},"
                             f"{aux.n_norm:.6e},1")
        except NoConvergence:
            report.write_row(f"{eps:.10g},{cfg.K},{r:.10g},nan,nan,0")
    print(f"landscape eps={eps}: {cfg.landscape_points} radii in "
          f"[{window[0]:.3f}, {r_hi:.3f}] -> {report.dir / 'landscape.csv'}")
    return 0


def _run_rows(cfg, report, eps_list):
    profile = solve_ground_state(cfg.p, r_max=cfg.r_max, tol=cfg.tol)
    pot = _make_pot(cfg)
    params = _params_for(cfg, eps_list[0])
    report.open_csv("results.csv", CSV_HEADER)
    jobs = [(params, pot, profile, eps, cfg.K) for eps in eps_list]
    rows = []
    if cfg.workers <= 1:
        for job in jobs:
            row = _sweep_one(job)
            rows.append(row)
            report.write_row(row_to_csv(row))
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for row in pool.map(_sweep_one, jobs):
                rows.append(row)
                report.write_row(row_to_csv(row))
    return rows, profile, pot, params


def _cmd_solve(cfg, report):
    eps = cfg.eps_list[0]
    rows, profile, pot, params = _run_rows(cfg, report, [eps])
    row = rows[0]
    print(f"solve eps={eps}: r*={row.r_star:.6f} Phi={row.phi_eps:.8f} "
          f"formula={row.formula:.8f} |n|={row.n_norm:.3e} "
          f"grad={row.grad_norm:.3e} boundary={row.boundary_flag}")
    if cfg.dump_fields:
        par = replace(params, eps=eps, tol_aux=None, krylov_tol=None)
        grid = UniformGrid(half_width=row.grid_L, n=row.grid_n)
        ctx = make_context(par, pot, grid, profile)
        peak_cfg = PeakConfig(r=row.r_star, theta=row.theta_star,
                              phi=row.phi_star, K=cfg.K)
        from .ansatz import build_W
        from .reduction import solve_auxiliary
        aux = solve_auxiliary(peak_cfg, ctx)
        w_field = build_W(peak_cfg, profile, grid)
        dump_field(w_field + aux.n, report.dir / "solution.bin")
        print(f"wrote solution field to {report.dir / 'solution.bin'}")
    return 0


def _strictly(seq, direction):
    pairs = zip(seq, seq[1:])
    if direction == "down":
        return all(b < a for a, b in pairs)
    return all(b > a for a, b in pairs)


def _cmd_verify_theorem(cfg, report):
    eps_list = sorted(cfg.eps_list, reverse=True)
    rows, _, _, _ = _run_rows(cfg, report, eps_list)
    interior = [row for row in rows if not row.boundary_flag]
    r_up = _strictly([row.r_star for row in rows], "up")
    er_down = _strictly([row.eps * row.r_star for row in rows], "down")
    n_down = _strictly([row.n_norm for row in rows], "down")
    mult_ok = all(row.grad_norm <= 10.0 * 1e-2 * row.eps ** 2
                  for row in rows)
    report.summary["trend_r_star_increasing"] = r_up
    report.summary["trend_eps_r_star_decreasing"] = er_down
    report.summary["trend_n_norm_decreasing"] = n_down
    report.summary["gradients_within_tolerance"] = mult_ok
    report.summary["interior_rows"] = len(interior)
    for label, flag in (("r_star strictly increasing", r_up),
                        ("eps*r_star strictly decreasing", er_down),
                        ("n_norm strictly decreasing", n_down),
                        ("gradients within 10x tol_aux", mult_ok)):
        print(f"  {label}: {'yes' if flag else 'NO'}")
    print(f"verify-theorem: {len(rows)} rows, {len(interior)} interior "
          f"minimizers -> {report.dir / 'results.csv'}")
    return 0


def _cmd_sweep(cfg, report):
    rows, _, _, _ = _run_rows(cfg, report, list(cfg.eps_list))
    print(f"sweep: {len(rows)} rows -> {report.dir / 'results.csv'}")
    return 0


_DISPATCH = {
    "ground-state": _cmd_ground_state,
    "field-check": _cmd_field_check,
    "ansatz-check": _cmd_ansatz_check,
    "landscape": _cmd_landscape,
    "solve": _cmd_solve,
    "verify-theorem": _cmd_verify_theorem,
    "sweep": _cmd_sweep,
}


def run(cfg):
    """Execute the configured workflow; returns the process exit code."""
    report = _Report(cfg)
    try:
        code = _DISPATCH[cfg.command](cfg, report)
        report.close("ok")
        return code
    except NoConvergence as exc:
        print(f"error: no convergence: {exc}", file=sys.stderr)
        report.close("no-convergence")
        return 2
    except EmptyAdmissible as exc:
        print(f"error: empty admissible set: {exc}", file=sys.stderr)
        report.close("empty-admissible")
        return 3
    except (SbpError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        report.close("error")
        return 1


def build_argparser():
    parser = argparse.ArgumentParser(
        prog="sbpcluster",
        description="Multipeak cluster construction and verification for a "
                    "screened fourth-order field coupling.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--output", help="output directory")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--grid-n", type=int, dest="grid_n")
    parser.add_argument("--grid-L", type=float, dest="grid_L")
    return parser


def main(argv=None):
    args = build_argparser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else config_from_items({})
        cfg.command = args.command
        if args.output is not None:
            cfg.output_dir = args.output
        if args.workers is not None:
            cfg.workers = args.workers
        if args.seed is not None:
            cfg.seed = args.seed
        if args.grid_n is not None:
            cfg.grid_n = args.grid_n
        if args.grid_L is not None:
            cfg.grid_L = args.grid_L
        validate_config(cfg)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
