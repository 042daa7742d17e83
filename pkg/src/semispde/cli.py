"""Command-line driver: ``semispde --config run.json [--seed S] [--out DIR] [--threads K]``.

Every run writes its reports into the output directory and finishes with
``manifest.json``; a run that dies on a numerical error leaves
``failure.json`` instead.  Exit codes: 0 success, 2 invalid configuration,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, gridio, plotting
from .calculus import GridFunction, check_ibp, check_product_rules, integral_array, interior_array
from .config import ConfigError, ExperimentConfig, SineField, Table, load_config, parse_config, set_path, with_overrides
from .inverse import (
    LinearSourceMap,
    cauchy_stability_experiment,
    default_perturbations,
    hoelder_branches,
    reconstruct_source,
    relative_source_error,
    smooth_pairs,
    source_stability_experiment,
    tabulate_source,
)
from .linalg import ConvergenceError
from .mesh import Mesh, MeshError, MeshSpec, gamma_plus
from .observation import (
    Lambda1Data,
    ObservationError,
    observe,
    x1_components,
    x1_from_components,
    x2_components,
    x2_from_components,
)
from .solver import (
    ProblemError,
    SPDEProblem,
    Stepper,
    TimeGrid,
    march,
    monte_carlo,
    problem_hash,
    sample_path,
    solve_forward,
)
from .verifier import (
    VerificationError,
    carleman_sides,
    conjugation_terms,
    decomposition_residual,
    energy_estimate_check,
    face_ramp,
    fit_boundary_constant,
    mh_bound_constant,
    random_interior,
    smooth_field,
    sobolev_check,
    verify_spatial_conjugation,
)
from .weights import CarlemanParams, WeightError, build_weights, derivative_weight_scaling, weight_ratio_scaling

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERIC_ERRORS = (
    ProblemError,
    ObservationError,
    VerificationError,
    WeightError,
    MeshError,
    ConvergenceError,
    FloatingPointError,
    ArithmeticError,
    np.linalg.LinAlgError,
    ValueError,
)


class RunFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# problem presets and coefficient ingestion

TABLE_ROLES = ("a1", "a2", "a3", "f", "w0")
SPATIAL_ROLES = ("gamma", "w0")


def _per_dim(v: list[float], n: int, what: str, where: str) -> np.ndarray:
    if len(v) == 1:
        return np.full(n, float(v[0]))
    if len(v) != n:
        raise ConfigError([f"{where}.{what}: expected 1 or {n} entries, got {len(v)}"])
    return np.asarray(v, dtype=float)


def sine_coefficient(spec: SineField, n: int, spatial: bool, where: str = "coefficient"):
    k = _per_dim(spec.k, n, "k", where)
    phase = _per_dim(spec.phase, n, "phase", where)

    def space(x):
        out = np.ones(np.shape(x)[1:])
        for i in range(n):
            out = out * np.sin(k[i] * np.pi * x[i] + phase[i])
        return out

    if spatial:
        return lambda x: spec.offset + spec.amplitude * space(x)
    return lambda x, t: spec.offset + spec.amplitude * space(x) * (1.0 + spec.time_amplitude * np.cos(spec.omega * t))


def coefficient(value, role: str, mesh: Mesh, where: str):
    """Turn a config coefficient into what the solver accepts."""
    if value is None or isinstance(value, (int, float)):
        return None if value is None else float(value)
    if isinstance(value, SineField):
        return sine_coefficient(value, mesh.n, role in SPATIAL_ROLES, where)
    if isinstance(value, Table):
        if role not in TABLE_ROLES:
            raise ConfigError([f"{where}: tables are accepted only for {', '.join(TABLE_ROLES)}"])
        shape = mesh.shape(mesh.primal)
        if len(value.table) != int(np.prod(shape)):
            raise ConfigError([f"{where}: table has {len(value.table)} values, mesh N={mesh.N} needs {int(np.prod(shape))}"])
        return np.asarray(value.table, dtype=float).reshape(shape)
    raise ConfigError([f"{where}: unsupported coefficient {value!r}"])


def _product_sine(n, k=1.0, amp=1.0):
    def fn(x):
        out = amp * np.ones(np.shape(x)[1:])
        for i in range(n):
            out = out * np.sin(k * np.pi * x[i])
        return out

    return fn


def preset_coefficients(name: str | None, n: int) -> dict:
    """Named starting points; explicit config coefficients override them."""
    sine = _product_sine(n)
    if name is None:
        return {}
    if name == "heat":
        return {"gamma": 1.0, "w0": sine}
    if name == "variable":
        return {
            "gamma": lambda x: 1.0 + 0.2 * np.sin(np.pi * x[0]),
            "a1": [0.3] * n,
            "a2": lambda x, t: 0.5 * np.cos(np.pi * x[0]) * (1.0 + t),
            "a3": 0.3,
            "g": lambda x, t: 0.5 * sine(x),
            "w0": sine,
        }
    if name == "ito":
        return {"gamma": 1.0, "g": 1.0}
    if name == "source":
        return {"gamma": 1.0, "g": lambda x, t: (1.0 + 0.5 * np.cos(np.pi * t)) * (sine(x) + 0.5 * _product_sine(n, 2.0)(x))}
    if name == "cauchy":
        return {"gamma": 1.0, "a3": 0.5, "w0": sine, "xi": default_perturbations(n)[2].xi}
    raise ConfigError([f"problem.preset: unknown preset {name!r}"])


def build_problem(cfg: ExperimentConfig, mesh: Mesh, label: str = "") -> SPDEProblem:
    pc = cfg.problem
    coefs = preset_coefficients(pc.preset, mesh.n)
    for role in ("gamma", "a2", "a3", "f", "g", "xi", "w0"):
        value = getattr(pc, role)
        if value is not None:
            coefs[role] = coefficient(value, role, mesh, f"problem.{role}")
    if pc.a1 is not None:
        if len(pc.a1) not in (1, mesh.n):
            raise ConfigError([f"problem.a1: expected 1 or {mesh.n} entries, got {len(pc.a1)}"])
        a1 = [coefficient(a, "a1", mesh, f"problem.a1.{i}") for i, a in enumerate(pc.a1)]
        coefs["a1"] = a1 * mesh.n if len(a1) == 1 else a1
    return SPDEProblem(mesh, label=label or (pc.preset or "custom"), **coefs)


def observation_point(cfg: ExperimentConfig, n: int) -> tuple:
    xs = cfg.problem.x_star or cfg.weights.x_star
    if xs is None:
        return (-0.5,) * n
    if len(xs) != n:
        raise ConfigError([f"problem.x_star: expected {n} components, got {len(xs)}"])
    return tuple(float(v) for v in xs)


def weight_point(cfg: ExperimentConfig, n: int, default: float) -> tuple:
    xs = cfg.weights.x_star
    if xs is None:
        return (default,) * n
    if len(xs) != n:
        raise ConfigError([f"weights.x_star: expected {n} components, got {len(xs)}"])
    return tuple(float(v) for v in xs)


def timegrid(cfg: ExperimentConfig, N: int) -> TimeGrid:
    return TimeGrid(cfg.time.T, max(2, cfg.time.steps(N)))


def dt_factor(cfg: ExperimentConfig) -> float:
    if cfg.time.M is not None:
        raise ConfigError(["time.M: stability experiments refine dt with h; give time.dt_factor instead"])
    return 0.25 if cfg.time.dt_factor is None else cfg.time.dt_factor


def mesh_for(n: int, N: int) -> Mesh:
    return Mesh(MeshSpec(n, int(N)))


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


# ---------------------------------------------------------------------------
# output


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


class Artifacts:
    """Single writer for one output directory; remembers what it wrote."""

    def __init__(self, directory, formats):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.formats = set(formats)
        self.files: list[str] = []

    def _record(self, path: Path) -> Path:
        self.files.append(str(path.relative_to(self.dir)))
        return path

    def json(self, name: str, obj) -> Path | None:
        if "json" not in self.formats:
            return None
        path = self.dir / name
        path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")
        return self._record(path)

    def csv(self, name: str, rows: list[dict]) -> Path | None:
        if "csv" not in self.formats or not rows:
            return None
        columns = list(rows[0])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
        path = self.dir / name
        path.write_text(buf.getvalue())
        return self._record(path)

    def figure(self, name: str, draw, *args, **kwargs) -> Path | None:
        if "png" not in self.formats:
            return None
        path = self.dir / name
        draw(path, *args, **kwargs)
        return self._record(path)

    def grid(self, name: str, u: GridFunction) -> Path | None:
        if "psgf" not in self.formats:
            return None
        path = self.dir / name
        gridio.write(path, u)
        return self._record(path)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# commands; each returns the seeds it used


def cmd_simulate(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    seed = cfg.mc.seed
    P = cfg.mc.n_paths
    rows, summary = [], {}
    for n in cfg.mesh.dims:
        for N in cfg.mesh.levels:
            mesh = mesh_for(n, N)
            tg = timegrid(cfg, N)
            problem = build_problem(cfg, mesh)
            st = Stepper(problem, tg, cfg.options.solver)
            h = mesh.h

            def work(dB, ix, problem=problem, tg=tg, st=st, mesh=mesh):
                last = None
                for _, w in march(problem, tg, dB, (len(ix),), stepper=st):
                    last = w
                return {"terminal_sq": integral_array(interior_array(last, range(n)) ** 2, mesh.h, n)}

            mc = monte_carlo(work, P, seed, tg, cfg.mc.chunk, threads)
            sq = mc["terminal_sq"]
            se = float(np.std(sq, ddof=1) / np.sqrt(P)) if P > 1 else 0.0
            path0 = sample_path(seed, tg, 0)
            traj = solve_forward(problem, path0, cfg.options.solver)
            tag = f"n{n}_N{N}"
            for m in range(tg.M + 1):
                out.grid(f"trajectory_{tag}_{m:05d}.psgf", traj.closure(m))
            out.json(
                f"trajectory_{tag}.json",
                {"problem_hash": traj.provenance["problem_hash"], "seed": seed, "index": 0, "T": tg.T, "M": tg.M, "N": N, "n": n},
            )
            if n == 1:
                out.figure(f"trajectory_{tag}.png", plotting.trajectory, mesh.axis_coords("c"), tg.times, traj.states, f"realization 0, N={N}")
            elif n == 2:
                out.figure(f"terminal_{tag}.png", plotting.field, traj.terminal.values, f"w(T), realization 0, N={N}")
            rows.append(
                {"n": n, "N": N, "h": h, "M": tg.M, "dt": tg.dt, "paths": P, "mean_terminal_sq": float(np.mean(sq)), "se": se}
            )
            summary[tag] = {"mean_terminal_sq": float(np.mean(sq)), "se": se, "problem_hash": problem_hash(problem, tg)}
    out.csv("terminal_energy.csv", rows)
    out.json("report.json", {"command": "simulate", "levels": summary})
    return {"paths": seed}


def cmd_observe(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    seed, kind = cfg.mc.seed, cfg.options.kind
    report = {}
    for n in cfg.mesh.dims:
        for N in cfg.mesh.levels:
            mesh = mesh_for(n, N)
            tg = timegrid(cfg, N)
            problem = build_problem(cfg, mesh)
            gp = gamma_plus(mesh, observation_point(cfg, n))
            st = Stepper(problem, tg, cfg.options.solver)

            def work(dB, ix, problem=problem, tg=tg, gp=gp, st=st, mesh=mesh):
                d = observe(problem, tg, dB, gp, kind, (len(ix),), st)
                energy = np.stack([mesh.h ** (n - 1) * np.sum(t**2, axis=1) for t in d.traces])
                parts = x1_components(d) if kind == "lambda1" else x2_components(d)
                return {"a": parts[0], "b": parts[1], "energy": energy}

            mc = monte_carlo(work, cfg.mc.n_paths, seed, tg, cfg.mc.chunk, threads)
            if kind == "lambda1":
                norm = float(x1_from_components(mc["a"], mc["b"]))
            else:
                norm = float(x2_from_components(mc["a"], mc["b"]))
            energy = np.mean(mc["energy"], axis=-1)  # (n, M+1)
            tag = f"n{n}_N{N}"
            rows = [{"m": m, "t": float(tg.times[m]), **{f"trace_energy_{k}": float(energy[k, m]) for k in range(n)}} for m in range(tg.M + 1)]
            out.csv(f"traces_{tag}.csv", rows)
            out.figure(
                f"traces_{tag}.png", plotting.lines, tg.times, {f"direction {k}": energy[k] for k in range(n)}, "t", "mean squared trace"
            )
            report[tag] = {"norm": norm, "kind": kind, "observed_points": gp.count(), "M": tg.M, "paths": cfg.mc.n_paths}
    out.json("report.json", {"command": "observe", "levels": report})
    return {"paths": seed}


def _time_profile(cfg: ExperimentConfig):
    g = cfg.problem.g
    if isinstance(g, SineField) and g.offset == 0.0:
        return lambda t: 1.0 + g.time_amplitude * math.cos(g.omega * t)
    if g is None and cfg.problem.preset == "source":
        return lambda t: 1.0 + 0.5 * math.cos(math.pi * t)
    return None


def adjoint_gap(fmap: LinearSourceMap, rng: np.random.Generator) -> float:
    """Relative gap of ``<F c, d>_Y - <c, F* d>_X`` for random ``c`` and ``d``."""
    c = rng.standard_normal(fmap.param_shape)
    probe = fmap.forward(np.zeros(fmap.param_shape))
    d = Lambda1Data(
        probe.mesh, probe.gamma_plus, probe.dt, [rng.standard_normal(t.shape) for t in probe.traces], rng.standard_normal(probe.terminal.shape)
    )
    Fc = fmap.forward(c)
    lhs = fmap.data_inner(Fc, d)
    rhs = fmap.param_inner(c, fmap.adjoint(d))
    scale = math.sqrt(fmap.data_inner(Fc, Fc) * fmap.data_inner(d, d))
    return abs(lhs - rhs) / scale


def cmd_reconstruct(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    seed = cfg.mc.seed
    opts = cfg.options
    rows, report = [], {}
    for n in cfg.mesh.dims:
        for N in cfg.mesh.levels:
            mesh = mesh_for(n, N)
            tg = timegrid(cfg, N)
            problem = build_problem(cfg, mesh)
            if not callable(problem.g):
                raise ConfigError(["problem.g: reconstruction needs a space-time source to recover"])
            gp = gamma_plus(mesh, observation_point(cfg, n))
            path = sample_path(seed, tg, 0)
            st = Stepper(problem, tg, "direct")
            observed = observe(problem, tg, path.increments[:, None], gp, "lambda1", stepper=st)
            profile = _time_profile(cfg) if opts.basis == "profile" else None
            fmap = LinearSourceMap(problem, tg, path.increments, gp, opts.basis, profile)
            gap = adjoint_gap(fmap, derived_rng(seed, n, N))
            truth = tabulate_source(problem.g, mesh, tg)
            tag = f"n{n}_N{N}"
            level = {"adjoint_gap": gap, "alpha": {}}
            best = None
            for alpha in opts.alpha:
                res = reconstruct_source(observed, path, problem, alpha, opts.basis, profile)
                err = relative_source_error(res.estimate, truth)
                rows.append(
                    {"n": n, "N": N, "alpha": alpha, "iterations": res.iterations, "misfit": res.misfit, "relative_error": err, "adjoint_gap": gap}
                )
                level["alpha"][repr(alpha)] = {"iterations": res.iterations, "misfit": res.misfit, "relative_error": err}
                best = res
            report[tag] = level
            out.grid(f"estimate_{tag}_t0.psgf", GridFunction(mesh, mesh.primal, best.estimate[0]))
            if n == 1:
                out.figure(
                    f"estimate_{tag}.png", plotting.lines, mesh.axis_coords("p"),
                    {"truth": truth[0], f"alpha={best.alpha:g}": best.estimate[0]}, "x", "g(x, 0)",
                )
            errs = [r["relative_error"] for r in rows if r["n"] == n and r["N"] == N]
            out.figure(f"error_{tag}.png", plotting.loglog, opts.alpha, {"relative L2 error": errs}, "alpha", "error")
    out.csv("reconstruction.csv", rows)
    out.json("report.json", {"command": "reconstruct", "basis": opts.basis, "levels": report})
    return {"path": seed}


def _random_closure(mesh, rng):
    return GridFunction(mesh, mesh.closure_placement, rng.standard_normal(mesh.shape(mesh.closure_placement)))


def cmd_verify_identities(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    seed, opts = cfg.mc.seed, cfg.options
    rows, conj_rows, worst = [], [], {}
    for n in cfg.mesh.dims:
        for N in cfg.mesh.levels:
            mesh = mesh_for(n, N)
            rng = derived_rng(seed, 0, n, N)
            for k in range(n):
                res = {"ibp_difference": 0.0, "ibp_average": 0.0, "product_difference": 0.0, "product_average": 0.0, "product_average_difference": 0.0}
                for _ in range(opts.samples):
                    u = _random_closure(mesh, rng)
                    v = GridFunction(mesh, mesh.dual(k), rng.standard_normal(mesh.shape(mesh.dual(k))))
                    res["ibp_difference"] = max(res["ibp_difference"], check_ibp(u, v, k, "difference"))
                    res["ibp_average"] = max(res["ibp_average"], check_ibp(u, v, k, "average"))
                    pr = check_product_rules(u, _random_closure(mesh, rng), k)
                    for name, val in pr.items():
                        res["product_" + name] = max(res["product_" + name], val)
                for name, val in res.items():
                    rows.append({"n": n, "N": N, "k": k, "identity": name, "samples": opts.samples, "max_relative_residual": val})
                    worst[name] = max(worst.get(name, 0.0), val)
            tg = timegrid(cfg, N)
            problem = build_problem(cfg, mesh)
            x_star = weight_point(cfg, n, -0.1)
            for lam in opts.lambdas:
                for tau in cfg.weights.taus(N):
                    params = CarlemanParams(x_star, lam, tau, cfg.weights.beta, cfg.weights.t0)
                    fields = build_weights(params, mesh, tg)
                    m = int(np.argmax(fields.s))
                    sh = float(fields.s[m] * mesh.h)
                    row = {"n": n, "N": N, "lam": lam, "tau": tau, "sh": sh, "admissible": bool(fields.admissible[m])}
                    if not row["admissible"]:
                        row.update(conjugation=float("nan"), decomposition=float("nan"), mh_constant=float("nan"))
                        conj_rows.append(row)
                        continue
                    z = random_interior(mesh, derived_rng(seed, 1, n, N), opts.samples)
                    z_next = random_interior(mesh, derived_rng(seed, 2, n, N), opts.samples)
                    row["conjugation"] = verify_spatial_conjugation(z, fields, m, problem.gamma)
                    terms = conjugation_terms(z, fields, m, problem.gamma, z_next)
                    row["decomposition"] = decomposition_residual(terms, mesh.h, n)
                    row["mh_constant"] = mh_bound_constant(z, fields, m, problem.gamma)
                    conj_rows.append(row)
                    worst["conjugation"] = max(worst.get("conjugation", 0.0), row["conjugation"])
                    worst["decomposition"] = max(worst.get("decomposition", 0.0), row["decomposition"])
    out.csv("identities.csv", rows)
    out.csv("conjugation.csv", conj_rows)
    report = {"command": "verify-identities", "worst": worst}
    levels = cfg.mesh.levels
    if len(levels) >= 3:
        scaling = {}
        for n in cfg.mesh.dims:
            params = CarlemanParams(weight_point(cfg, n, -0.5), cfg.options.lambdas[0], cfg.weights.taus(levels[0])[0], cfg.weights.beta, cfg.weights.t0)
            fa = weight_ratio_scaling(params, levels, n, T=cfg.time.T)
            fd = derivative_weight_scaling(params, levels, n, T=cfg.time.T)
            scaling[f"n{n}"] = {"sh": fa.sh, "average_defect": fa.errors, "average_slope": fa.slope,
                                "derivative_gap": fd.errors, "derivative_slope": fd.slope}
            out.figure(f"weight_scaling_n{n}.png", plotting.loglog, fa.sh,
                       {"average defect": fa.errors, "derivative gap": fd.errors}, "s h", "defect", reference_slope=2.0)
        report["weight_scaling"] = scaling
    out.json("report.json", report)
    return {"samples": seed}


def _carleman_params(cfg: ExperimentConfig, n: int, N: int, default_x: float, lam: float) -> list[CarlemanParams]:
    x_star = weight_point(cfg, n, default_x)
    return [CarlemanParams(x_star, lam, tau, cfg.weights.beta, cfg.weights.t0) for tau in cfg.weights.taus(N)]


def cmd_verify_carleman(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    seed, opts = cfg.mc.seed, cfg.options
    K, P = opts.instances, cfg.mc.n_paths
    bd = opts.boundary_data
    lam = cfg.weights.lam
    summary = {}
    for n in cfg.mesh.dims:
        f = smooth_field(seed + 1, K, n)
        g = smooth_field(seed + 2, K, n)
        xi = face_ramp(n, K, seed + 3) if bd else None
        runs = []
        for N in cfg.mesh.levels:
            mesh = mesh_for(n, N)
            tg = timegrid(cfg, N)
            base = build_problem(cfg, mesh)
            problem = replace(base, f=f, g=g, xi=xi, w0=None)
            gp = gamma_plus(mesh, observation_point(cfg, n))
            dB = np.stack([sample_path(seed, tg, i).increments for i in range(P)], axis=-1)[:, None, :]
            for params in _carleman_params(cfg, n, N, -0.2 if bd else -0.5, lam):
                fields = build_weights(params, mesh, tg)
                sides = carleman_sides(problem, tg, fields, dB, gp, (K, P), bd, opts.solver)
                runs.append((N, mesh.h, params.tau, sides))
        fitted = fit_boundary_constant([r[3] for r in runs]) if bd else None
        rows = []
        for N, h, tau, sides in runs:
            if bd:
                sides = sides.with_boundary_constant(fitted)
            const = sides.constant
            for k in range(K):
                row = {"n": n, "N": N, "h": h, "tau": tau, "tau_h": tau * h, "instance": k,
                       "lhs": float(sides.lhs_total[k]), "rhs": float(sides.rhs_total[k]), "constant": float(const[k])}
                row.update({f"lhs_{name}": float(v[k]) for name, v in sides.lhs.items()})
                row.update({f"rhs_{name}": float(v[k]) for name, v in sides.rhs.items()})
                rows.append(row)
        levels = sorted({r[0] for r in runs})
        per_level = [max(r["constant"] for r in rows if r["N"] == N and math.isfinite(r["constant"])) for N in levels]
        summary[f"n{n}"] = {
            "levels": levels, "max_constant": per_level, "variation": max(per_level) / min(per_level),
            "boundary_data": bd, "boundary_constant": fitted, "paths": P, "instances": K,
        }
        out.csv(f"carleman_n{n}.csv", rows)
        ratios = np.array([[r["constant"] for r in rows if r["N"] == N] for N in levels])
        out.figure(f"carleman_n{n}.png", plotting.ratio_sweep, [1.0 / (N + 1) for N in levels], ratios, "empirical constant")
    out.json("report.json", {"command": "verify-carleman", "dims": summary})
    return {"paths": seed, "forcing": seed + 1, "source": seed + 2, "boundary": seed + 3 if bd else None}


def cmd_verify_energy(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    opts = cfg.options
    data_seed = 0 if cfg.mc.seed is None else cfg.mc.seed
    summary = {}
    for n in cfg.mesh.dims:
        xi = face_ramp(n, opts.instances, data_seed)
        rows = []
        for N in cfg.mesh.levels:
            mesh = mesh_for(n, N)
            tg = timegrid(cfg, N)
            gp = gamma_plus(mesh, observation_point(cfg, n))
            res = energy_estimate_check(mesh, tg, xi, opts.instances, gp, build_problem(cfg, mesh).gamma, opts.solver)
            for k in range(opts.instances):
                rows.append({"n": n, "N": N, "h": mesh.h, "instance": k, "energy_ratio": float(res.energy_ratio[k]),
                             "boundary_ratio": float(res.boundary_ratio[k]), "boundary_vs_h2": float(res.boundary_vs_h2[k])})
        levels = cfg.mesh.levels
        table = {name: [max(r[name] for r in rows if r["N"] == N) for N in levels] for name in ("energy_ratio", "boundary_ratio", "boundary_vs_h2")}
        summary[f"n{n}"] = {"levels": levels, **{f"max_{k}": v for k, v in table.items()}}
        out.csv(f"energy_n{n}.csv", rows)
        out.figure(f"energy_n{n}.png", plotting.loglog, [1.0 / (N + 1) for N in levels], table, "h", "ratio")
    out.json("report.json", {"command": "verify-energy", "dims": summary})
    return {"data": data_seed}


def cmd_sobolev(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    opts = cfg.options
    summary, rows = {}, []
    for n in cfg.mesh.dims:
        curve = sobolev_check(n, opts.p, opts.p_star, cfg.mesh.levels, opts.samples, cfg.mc.seed, opts.decay)
        for N, c in zip(curve.levels, curve.constants):
            rows.append({"n": n, "N": N, "h": 1.0 / (N + 1), "constant": c})
        summary[f"n{n}"] = {"levels": curve.levels, "constants": curve.constants, "variation": curve.variation}
        out.figure(f"sobolev_n{n}.png", plotting.lines, curve.levels, {"constant": curve.constants}, "N", "empirical constant")
    out.csv("sobolev.csv", rows)
    out.json("report.json", {"command": "sobolev", "p": opts.p, "p_star": opts.p_star, "dims": summary})
    return {"samples": cfg.mc.seed}


def _coefs_for_experiment(cfg, n):
    # experiments build their own meshes; coefficients must not depend on N
    for role in ("gamma", "a1", "a2", "a3"):
        v = getattr(cfg.problem, role)
        vals = v if isinstance(v, list) else [v]
        if any(isinstance(x, Table) for x in vals):
            raise ConfigError([f"problem.{role}: stability experiments accept scalar or sine coefficients only"])
    probe = build_problem(cfg, mesh_for(n, 3))
    return probe.gamma, probe.a1, probe.a2, probe.a3


def _report_outputs(out: Artifacts, report, n: int, stem: str):
    out.csv(f"{stem}_n{n}.csv", report.rows())
    out.json(f"{stem}_n{n}.json", report.summary())
    out.figure(f"{stem}_n{n}.png", plotting.ratio_sweep, report.h, report.ratios, "ratio")


def cmd_stability_source(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    seed, opts = cfg.mc.seed, cfg.options
    summary = {}
    for n in cfg.mesh.dims:
        gamma, a1, a2, _ = _coefs_for_experiment(cfg, n)
        rep = source_stability_experiment(
            n, cfg.mesh.levels, smooth_pairs(n, opts.pairs, seed), cfg.mc.n_paths, seed, cfg.time.T, dt_factor(cfg),
            gamma, a1, a2, observation_point(cfg, n), cfg.mc.chunk, threads, opts.solver,
        )
        _report_outputs(out, rep, n, "source_stability")
        summary[f"n{n}"] = {"max": rep.max_per_level(), "variation": rep.variation(), "skipped": len(rep.skipped)}
    out.json("report.json", {"command": "stability-source", "dims": summary})
    return {"paths": seed, "pairs": seed}


def cmd_stability_cauchy(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    seed, opts = cfg.mc.seed, cfg.options
    summary = {}
    for n in cfg.mesh.dims:
        gamma, a1, a2, a3 = _coefs_for_experiment(cfg, n)
        rep = cauchy_stability_experiment(
            n, cfg.mesh.levels, default_perturbations(n)[: opts.perturbations], tuple(opts.subdomain), opts.eps,
            cfg.time.T, cfg.mc.n_paths, seed, dt_factor(cfg), gamma, a1, a2, 0.0 if a3 is None else a3,
            observation_point(cfg, n), cfg.mc.chunk, threads, opts.solver,
        )
        _report_outputs(out, rep, n, "cauchy_stability")
        fit = rep.fit
        if not fit["degenerate"]:
            top = np.max(hoelder_branches(rep.columns["data"], rep.columns["bound"], rep.columns["h"], fit["kappa"], fit["c_inner"]), axis=-1)
            out.figure(f"cauchy_cover_n{n}.png", plotting.hoelder_cover, rep.columns["lhs"], fit["cover"] * top)
        summary[f"n{n}"] = {"fit": fit, "max_ratio": rep.max_per_level()}
    out.json("report.json", {"command": "stability-cauchy", "dims": summary})
    return {"paths": seed}


COMMANDS = {
    "simulate": cmd_simulate,
    "observe": cmd_observe,
    "reconstruct": cmd_reconstruct,
    "verify-identities": cmd_verify_identities,
    "verify-carleman": cmd_verify_carleman,
    "verify-energy": cmd_verify_energy,
    "sobolev": cmd_sobolev,
    "stability-source": cmd_stability_source,
    "stability-cauchy": cmd_stability_cauchy,
}


# ---------------------------------------------------------------------------
# orchestration


def _slug(value) -> str:
    text = json.dumps(value, sort_keys=True, separators=(",", ":"))
    return "".join(c if c.isalnum() or c in ".-_" else "_" for c in text)[:40]


def sweep_points(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    """One validated config per sweep value, each with its own output directory."""
    sw = cfg.sweep
    base = cfg.model_dump(mode="json")
    base["sweep"] = None
    base["command"] = sw.command
    points, errors = [], []
    for i, value in enumerate(sw.values):
        sub = f"{i:02d}_{_slug(value)}"
        data = set_path(base, sw.parameter, value)
        data["output"]["directory"] = str(Path(cfg.output.directory) / sub)
        try:
            points.append((sub, parse_config(data)))
        except ConfigError as err:
            errors += [f"sweep.values[{i}] -> {e}" for e in err.errors]
    if errors:
        raise ConfigError(errors)
    return points


def _run_sweep(cfg: ExperimentConfig, out: Artifacts, threads: int) -> dict:
    points = sweep_points(cfg)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            manifests = list(ex.map(lambda p: run(p[1], threads=1), points))
    else:
        manifests = [run(c, threads=1) for _, c in points]
    index = [
        {"directory": sub, "value": val, "config_hash": man["config_hash"]}
        for (sub, _), val, man in zip(points, cfg.sweep.values, manifests)
    ]
    out.json("sweep.json", {"parameter": cfg.sweep.parameter, "command": cfg.sweep.command, "points": index})
    return {"points": [man["seeds"] for man in manifests]}


def run(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Execute one config and return its manifest (also written to disk last)."""
    start = time.perf_counter()
    out = Artifacts(cfg.output.directory, cfg.output.formats)
    for stale in ("manifest.json", "failure.json"):
        (out.dir / stale).unlink(missing_ok=True)
    try:
        if cfg.command == "sweep":
            seeds = _run_sweep(cfg, out, threads)
        else:
            seeds = COMMANDS[cfg.command](cfg, out, threads)
    except ConfigError:
        raise
    except NUMERIC_ERRORS as err:
        failure = {
            "status": "failed",
            "command": cfg.command,
            "error": f"{type(err).__name__}: {err}",
            "config_hash": cfg.digest(),
            "partial_artifacts": list(out.files),
        }
        (out.dir / "failure.json").write_text(json.dumps(_clean(failure), sort_keys=True, indent=2) + "\n")
        raise RunFailure(failure["error"]) from err
    manifest = {
        "status": "complete",
        "command": cfg.command,
        "config_hash": cfg.digest(),
        "tool_version": __version__,
        "seeds": {"root": cfg.mc.seed, **seeds},
        "artifacts": [{"path": f, "sha256": sha256_file(out.dir / f), "bytes": (out.dir / f).stat().st_size} for f in out.files],
        "wall_clock_seconds": round(time.perf_counter() - start, 3),
    }
    (out.dir / "manifest.json").write_text(json.dumps(_clean(manifest), sort_keys=True, indent=2) + "\n")
    return manifest


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semispde", description="Semidiscrete stochastic parabolic experiments.")
    p.add_argument("--config", required=True, help="JSON experiment file")
    p.add_argument("--seed", type=int, default=None, help="override mc.seed (unsigned 64-bit)")
    p.add_argument("--out", default=None, help="override output.directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for realizations and sweep points")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError(["--threads: must be at least 1"])
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError(["--seed: must be an unsigned 64-bit integer"])
        cfg = with_overrides(load_config(args.config), args.seed, args.out)
        manifest = run(cfg, args.threads)
    except ConfigError as err:
        for line in err.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{cfg.command}: {len(manifest['artifacts'])} artifacts in {cfg.output.directory}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
