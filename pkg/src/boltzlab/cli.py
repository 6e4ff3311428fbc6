"""Command line entry point: ``boltzlab verify|simulate|bounds``.

Exit codes: 0 when every report passes, 1 when a certifier fails, 2 for an
invalid configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import DistributionFunction, VelocityGrid, from_function, load_csv, maxwellian, save_csv
from .xsection import CrossSection, DomainError, load_table, reference_b, tabulated_b

log = logging.getLogger("boltzlab")

ENV_PREFIX = "BOLTZLAB_"

DEFAULTS = {
    "grid.dim": "2",
    "grid.n": "32",
    "grid.L": "5.0",
    "xs.gamma": "0.0",
    "xs.nu": "1.0",
    "xs.kind": "reference",
    "xs.table": "",
    "init.kind": "maxwellian",
    "init.mass": "1.0",
    "init.temperature": "1.0",
    "init.center": "",
    "init.radius": "1.0",
    "init.separation": "1.2",
    "init.components": "3",
    "init.file": "",
    "solver.dt": "0.05",
    "solver.t_end": "1.0",
    "solver.scheme": "ssp2",
    "solver.stride": "1",
    "solver.sigma_cfl": "0.5",
    "solver.clip_abort": "0.01",
    "bounds.probes": "0,0",
    "bounds.scaling": "5,10,20",
    "bounds.R": "2.0",
    "verify.points": "2",
    "verify.nodes": "10000",
}

# short names accepted for the cross-section keys
ALIASES = {
    "gamma": "xs.gamma",
    "nu": "xs.nu",
    "dim": "grid.dim",
    "b.kind": "xs.kind",
    "b.table": "xs.table",
}

# tolerances of the simulate monitors
MASS_TOL = 1e-3
ENERGY_TOL = 1e-2
ENTROPY_SLACK = 1e-6


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def env_overrides(environ: dict[str, str] | None = None) -> dict[str, str]:
    """BOLTZLAB_SOLVER_T_END=2 -> {'solver.t_end': '2'} (section is the first word)."""
    environ = os.environ if environ is None else environ
    keys = {k.lower(): k for k in DEFAULTS}
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        dotted = f"{section}.{key}"
        if rest in ALIASES or dotted in ALIASES:
            out[ALIASES.get(rest) or ALIASES[dotted]] = value
            continue
        if dotted not in keys:
            raise ConfigError(f"environment variable {name} does not name a config key")
        out[keys[dotted]] = value
    return out


def load_config(path: str | None, environ: dict[str, str] | None = None) -> dict[str, str]:
    cfg = dict(DEFAULTS)
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        given = {ALIASES.get(k, k): v for k, v in parse_config_text(text).items()}
        unknown = sorted(set(given) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(given)
    cfg.update(env_overrides(environ))
    return cfg


def config_text(cfg: dict[str, str]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def _vector(text: str, dim: int) -> np.ndarray:
    if not text.strip():
        return np.zeros(dim)
    vals = [float(s) for s in text.split(",")]
    if len(vals) != dim:
        raise ConfigError(f"vector {text!r} needs {dim} components")
    return np.array(vals)


def _vectors(text: str, dim: int) -> list[np.ndarray]:
    return [_vector(part, dim) for part in text.split(";") if part.strip()]


@dataclass
class Setup:
    cfg: dict[str, str]
    grid: VelocityGrid
    xs: CrossSection
    seed: int

    @property
    def dim(self) -> int:
        return self.grid.dim


def build_setup(cfg: dict[str, str], seed: int) -> Setup:
    try:
        dim = int(cfg["grid.dim"])
        grid = VelocityGrid(dim, float(cfg["grid.L"]), int(cfg["grid.n"]))
        gamma, nu = float(cfg["xs.gamma"]), float(cfg["xs.nu"])
        kind = cfg["xs.kind"]
        if kind == "reference":
            xs = reference_b(gamma, nu, dim)
        elif kind == "tabulated":
            if not cfg["xs.table"]:
                raise ConfigError("xs.kind = tabulated needs xs.table")
            xs = tabulated_b(gamma, nu, dim, *load_table(cfg["xs.table"]))
        else:
            raise ConfigError(f"xs.kind must be 'reference' or 'tabulated', got {kind!r}")
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    return Setup(cfg, grid, xs, seed)


def initial_condition(setup: Setup) -> DistributionFunction:
    cfg, grid = setup.cfg, setup.grid
    kind = cfg["init.kind"]
    mass = float(cfg["init.mass"])
    temp = float(cfg["init.temperature"])
    center = _vector(cfg["init.center"], grid.dim)
    if mass < 0 or not temp > 0:
        raise ConfigError("init.mass must be >= 0 and init.temperature > 0")
    if kind == "maxwellian":
        return maxwellian(grid, mass, temp, center)
    if kind == "file":
        f = load_csv(cfg["init.file"])
        if f.grid != grid:
            raise ConfigError(f"init.file grid {f.grid} does not match configured grid {grid}")
        return f
    if kind == "bimodal":
        shift = np.zeros(grid.dim)
        shift[0] = float(cfg["init.separation"])
        aniso = np.ones(grid.dim)
        aniso[1:] = 2.5

        def bump(p):
            return np.exp(-np.sum((p - center - shift) ** 2 * aniso, -1) / (2 * temp)) + np.exp(
                -np.sum((p - center + shift) ** 2 * aniso, -1) / (2 * temp)
            )

        raw = from_function(grid, bump).values
    elif kind == "indicator":
        radius = float(cfg["init.radius"])
        raw = (np.linalg.norm(grid.points() - center, axis=-1) < radius).astype(float)
    elif kind == "mixture":
        rng = np.random.default_rng(setup.seed)
        raw = np.zeros(grid.shape)
        for _ in range(int(cfg["init.components"])):
            c = center + rng.uniform(-1.0, 1.0, grid.dim)
            s = rng.uniform(0.4, 0.9)
            raw += rng.uniform(0.5, 1.5) * np.exp(-np.sum((grid.points() - c) ** 2, -1) / (2 * s * s))
    else:
        raise ConfigError(f"unknown init.kind {kind!r}")
    total = float(np.sum(raw)) * grid.cell_volume
    if total == 0:
        return DistributionFunction(grid, raw)
    return DistributionFunction(grid, raw * (mass / total))


def solver_config(cfg: dict[str, str]):
    from .solver import SolverConfig

    try:
        return SolverConfig(
            dt=float(cfg["solver.dt"]),
            t_end=float(cfg["solver.t_end"]),
            scheme=cfg["solver.scheme"],
            stride=int(cfg["solver.stride"]),
            sigma_cfl=float(cfg["solver.sigma_cfl"]),
            clip_abort=float(cfg["solver.clip_abort"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ------------------------------------------------------------------ output


class Output:
    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}
        self.reports: list[dict] = []

    def write_text(self, rel: str, text: str) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(path)
        return path

    def write_report(self, name: str, rep: dict) -> None:
        self.reports.append(rep)
        self.write_text(f"reports/{name}.json", json.dumps(rep, indent=2, sort_keys=True) + "\n")
        log.info("%s: %s", name, "pass" if rep["pass"] else "FAIL")

    def timed(self, phase: str):
        out = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                out.timings[phase] = out.timings.get(phase, 0.0) + time.perf_counter() - self.t0

        return _Timer()

    def manifest(self, command: str, setup: Setup) -> None:
        cfg_text = config_text(setup.cfg)
        artifacts = []
        for path in sorted(set(self.files)):
            artifacts.append({"path": str(path.relative_to(self.root)),
                              "sha256": hashlib.sha256(path.read_bytes()).hexdigest()})
        data = {
            "command": command,
            "config_hash": hashlib.sha256(cfg_text.encode()).hexdigest(),
            "seed": setup.seed,
            "cross_section": {"kind": setup.xs.kind, "gamma": setup.xs.gamma, "nu": setup.xs.nu, "dim": setup.xs.dim},
            "grid": {"dim": setup.grid.dim, "n": setup.grid.n, "L": setup.grid.L, "h": setup.grid.h},
            "artifacts": artifacts,
            "timings": {k: round(v, 6) for k, v in sorted(self.timings.items())},
        }
        (self.root / "manifest.json").write_text(json.dumps(data, indent=2) + "\n")

    @property
    def all_pass(self) -> bool:
        return all(r["pass"] for r in self.reports)


# ---------------------------------------------------------------- commands


def _test_function(dim: int):
    def F(v, v_star, sigma, v_prime, v_star_prime):
        return np.exp(-np.sum(v_star**2, axis=-1) - 0.5 * np.sum((v_prime - 0.3) ** 2, axis=-1)) / (
            1 + np.sum(v_star_prime**2, axis=-1)
        )

    return F


def cmd_verify(setup: Setup, out: Output) -> None:
    from . import collision as C
    from . import estimates as E
    from .xsection import btilde, btilde_direct, check_invariants

    xs, grid = setup.xs, setup.grid
    f0 = initial_condition(setup)
    with out.timed("cross_section"):
        inv = check_invariants(xs)
        out.write_report("cross_section_invariants", E.report(
            "cross_section_invariants", {"kind": xs.kind, "gamma": xs.gamma, "nu": xs.nu, "dim": xs.dim},
            {"evenness_residual": inv.evenness_residual, "grazing_constant": inv.grazing_constant,
             "far_side_constant": inv.other_side_constant, "messages": list(inv.messages)},
            {"evenness_residual": 1e-9}, inv.passed))
        if not inv.passed:
            return
        rng = np.random.default_rng(setup.seed)
        e2 = rng.normal(size=grid.dim)
        m1, m2 = btilde(xs), btilde(xs, e2)
        d1, d2 = btilde_direct(xs, 1.0), btilde_direct(xs, 2.0)
        spread = abs(m1.coefficient - m2.coefficient) / m1.coefficient
        ratio_gap = abs(d2 / d1 - 2.0**xs.gamma) / 2.0**xs.gamma
        direct_gap = abs(d1 - m1.coefficient) / m1.coefficient
        out.write_report("btilde_power_law", E.report(
            "btilde_power_law", {"e2": e2},
            {"coefficient": m1.coefficient, "direction_spread": spread, "ratio_2_over_1": d2 / d1,
             "direct_route_gap": direct_gap},
            {"ratio_gap": 1e-6, "direction_spread": max(1e-8, 10 * m1.error_estimate / m1.coefficient),
             "direct_route_gap": 1e-3},
            ratio_gap <= 1e-6 and spread <= max(1e-8, 10 * m1.error_estimate / m1.coefficient)
            and direct_gap <= 1e-3 and m1.coefficient > 0))
    with out.timed("identities"):
        nodes = int(setup.cfg["verify.nodes"])
        cov = C.verify_change_of_variables(_test_function(grid.dim), grid.dim, nodes=nodes)
        dp1 = C.dual_polar(lambda z: np.exp(-np.sum(z**2, axis=-1)), grid.dim, nodes=nodes)
        dp2 = C.dual_polar(lambda z: (1 + np.sum(z**2, axis=-1)) ** -3 * np.exp(-0.5 * np.sum((z - 0.2) ** 2, -1)),
                           grid.dim, nodes=nodes)
        cn_gap = abs(dp1.constant - dp2.constant) / abs(dp1.constant)
        out.write_report("change_of_variables", E.report(
            "change_of_variables", {"nodes": nodes},
            {"lhs": cov.lhs, "rhs": cov.rhs, "relative_gap": cov.relative_gap, "c_N": dp1.constant,
             "c_N_second_function": dp2.constant},
            {"relative_gap": 1e-3, "c_N_gap": 1e-3}, cov.relative_gap <= 1e-3 and cn_gap <= 1e-3))
    with out.timed("decomposition"):
        model = btilde(xs)
        rng = np.random.default_rng(setup.seed + 1)
        worst = 0.0
        rows = []
        for _ in range(int(setup.cfg["verify.points"])):
            v = rng.uniform(-1.0, 1.0, grid.dim)
            qd = C.q_direct(xs, f0, f0, v)
            q12 = C.q1(xs, f0, f0, v) + C.q2(xs, f0, f0, v, model)
            gap = abs(qd - q12) / max(1.0, abs(qd))
            worst = max(worst, gap)
            rows.append({"v": v, "q_direct": qd, "q1_plus_q2": q12, "gap": gap})
        out.write_report("decomposition", E.report("decomposition", {"points": rows}, {"worst_gap": worst},
                                                   {"gap": 0.02}, worst <= 0.02))
    with out.timed("kernel"):
        v = _vectors(setup.cfg["bounds.probes"], grid.dim)[0]
        dirs = E.sphere_directions(grid.dim, 64)
        radii = grid.h * 2.0 ** np.arange(4)
        sym = 0.0
        slopes = []
        for e in dirs[:32]:
            vals = [C.kernel_Kf(xs, f0, v, v + r * e).value for r in radii]
            back = C.kernel_Kf(xs, f0, v, v - radii[0] * e).value
            sym = max(sym, abs(vals[0] - back) / max(abs(vals[0]), 1e-300))
            if min(vals) > 0:
                slopes.append(np.polyfit(np.log(radii), np.log(vals), 1)[0])
        slope_err = max(abs(s + grid.dim + xs.nu) for s in slopes) if slopes else math.inf
        out.write_report("kernel_scaling", E.report(
            "kernel_scaling", {"v": v, "radii": radii},
            {"worst_slope_error": slope_err, "symmetry_residual": sym},
            {"slope": 1e-3, "symmetry": 1e-10}, slope_err <= 1e-3 and sym <= 1e-10))
    _bounds_reports(setup, f0, out)
    with out.timed("max_principle"):
        rec = E.max_principle_report(xs, f0)
        out.write_report("max_principle", rec.to_report())


def _bounds_reports(setup: Setup, f0: DistributionFunction, out: Output) -> None:
    from . import estimates as E

    xs, grid = setup.xs, setup.grid
    probes = _vectors(setup.cfg["bounds.probes"], grid.dim)
    with out.timed("lifted_set"):
        lifted = E.lifted_set(f0)
        out.write_report("lifted_set", lifted.to_report())
    with out.timed("kernel_bounds"):
        for k, v in enumerate(probes):
            out.write_report(f"kernel_upper_bound_{k}", E.kernel_upper_bound(xs, f0, v).to_report())
            out.write_report(f"cone_lower_bound_{k}", E.cone_lower_bound(xs, f0, v, lifted=lifted).to_report())
    with out.timed("coercivity"):
        cone_at_max = E.cone_lower_bound(xs, f0, grid.node(np.unravel_index(np.argmax(f0.values), grid.shape)),
                                         lifted=lifted)
        cone = E.DirectionCone(cone_at_max.directions, cone_at_max.in_cone) if cone_at_max.passed else None
        out.write_report("cone_coercivity", E.cone_coercivity(f0, xs.nu, 1.0, cone=cone).to_report())


def cmd_bounds(setup: Setup, out: Output) -> None:
    from . import estimates as E

    xs, grid = setup.xs, setup.grid
    f0 = initial_condition(setup)
    _bounds_reports(setup, f0, out)
    scales = [float(s) for s in setup.cfg["bounds.scaling"].split(",") if s.strip()]
    if scales:
        with out.timed("cone_scaling"):
            lifted = E.lifted_set(f0)
            mus, bands = [], []
            for s in scales:
                v = np.zeros(grid.dim)
                v[0] = s
                rep = E.cone_lower_bound(xs, f0, v, lifted=lifted)
                mus.append(rep.mu_fit if rep.mu_fit is not None else 0.0)
                bands.append(rep.band if rep.band is not None else math.inf)
            spread = max(mus) / min(mus) if min(mus) > 0 else math.inf
            out.write_report("cone_scaling", E.report(
                "cone_scaling", {"speeds": scales}, {"mu": mus, "band": bands, "spread": spread},
                {"spread": 4.0, "band": lifted.r + grid.h},
                spread <= 4.0 and max(bands) <= lifted.r + grid.h))


def cmd_simulate(setup: Setup, out: Output) -> None:
    from . import estimates as E
    from .solver import Solver

    grid, xs = setup.grid, setup.xs
    f0 = initial_condition(setup)
    config = solver_config(setup.cfg)
    R = float(setup.cfg["bounds.R"])
    with out.timed("run"):
        traj = Solver(xs, grid, config).run(f0, ball_radius=R)
    with out.timed("write"):
        rows = ["t,m,minBR,mass,energy,entropy,c_tilde,C_tilde"]
        for k, t in enumerate(traj.times):
            st, rec = traj.states[k], traj.max_records[k]
            rows.append(",".join(repr(float(x)) for x in (t, rec.m, traj.ball_minima[k], st.mass, st.energy,
                                                          st.entropy, rec.c_tilde, rec.C_tilde)))
        out.write_text("timeseries.csv", "\n".join(rows) + "\n")
        for k, t in enumerate(traj.snapshot_times):
            path = out.root / "snapshots" / f"f_{k:05d}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_csv(traj.snapshot(k), path)
            out.files.append(path)
    M, En, H = traj.mass, traj.energy, traj.entropy
    dM = abs(M[-1] - M[0]) / M[0]
    dE = abs(En[-1] - En[0]) / En[0] if En[0] > 0 else 0.0
    dH = float(np.max(np.diff(H))) if len(H) > 1 else 0.0
    q1max = max(r.q1 for r in traj.max_records)
    out.write_report("simulate", E.report(
        "simulate", {"dt": config.dt, "t_end": config.t_end, "scheme": config.scheme},
        {"mass_drift": dM, "energy_drift": dE, "max_entropy_increase": dH, "max_q1_at_argmax": q1max,
         "clipped_mass": float(sum(traj.clipped_mass)), "equilibrium_residual": traj.equilibrium_residual},
        {"mass_drift": MASS_TOL, "energy_drift": ENERGY_TOL, "entropy_slack": ENTROPY_SLACK},
        dM <= MASS_TOL and dE <= ENERGY_TOL and dH <= ENTROPY_SLACK and q1max <= 0))
    env = E.linfty_envelope(traj, xs.nu, xs.gamma) if xs.gamma + xs.nu > 0 else None
    if env is not None:
        out.write_report("linfty_envelope", env.to_report())


COMMANDS = {"verify": cmd_verify, "simulate": cmd_simulate, "bounds": cmd_bounds}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boltzlab", description="Non-cutoff Boltzmann collision operator lab.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value config file (defaults apply to missing keys)")
    p.add_argument("--out", default="boltzlab-out", help="output directory (default: %(default)s)")
    p.add_argument("--threads", type=int, default=None, help="numba threads (default: min(8, available))")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized probes (default: %(default)s)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        setup = build_setup(cfg, args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        if setup.cfg["init.kind"] not in ("maxwellian", "bimodal", "indicator", "mixture", "file"):
            raise ConfigError(f"unknown init.kind {setup.cfg['init.kind']!r}")
        if args.command == "simulate":
            solver_config(cfg)
    except (ConfigError, DomainError) as exc:
        print(f"boltzlab: config error: {exc}", file=sys.stderr)
        return 2
    from .solver import ClippingError, configure_threads

    configure_threads(args.threads)
    out = Output(Path(args.out))
    out.write_text("config.resolved.txt", config_text(cfg))
    try:
        COMMANDS[args.command](setup, out)
    except ConfigError as exc:
        print(f"boltzlab: config error: {exc}", file=sys.stderr)
        return 2
    except (ClippingError, ValueError) as exc:
        out.write_report("error", {"lemma": args.command, "inputs": {}, "measured": {"error": str(exc)},
                                   "threshold": {}, "pass": False})
        print(f"boltzlab: {args.command} failed: {exc}", file=sys.stderr)
        out.manifest(args.command, setup)
        return 1
    out.manifest(args.command, setup)
    failed = [r["lemma"] for r in out.reports if not r["pass"]]
    if failed:
        print(f"boltzlab: failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"boltzlab: {args.command} passed ({len(out.reports)} reports) -> {out.root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
