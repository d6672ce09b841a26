"""Configuration, commands and report serialization.

Config files are plain `key = value` sections.  Reports are nested
key-value text, solutions are site/amplitude tables (integers plus two
reals per line), sweeps are flat CSV: everything diff-friendly, nothing
binary.  Identical config and seed produce byte-identical artifacts except
for the generated_at header field.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import re
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import newton, verify
from .conditions import (
    check_condition_i,
    check_condition_ii,
    oned_check,
    rank_check_momenta,
    symbol_supports,
)
from .lattice import (
    Box,
    FrequencyVector,
    ProblemSpec,
    SiteIndex,
    SparseSeries,
    SpecError,
    default_box,
)
from .linop import ExcisionError
from .newton import ConditionGateError, ConvergenceError


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# RunConfig


@dataclass
class TruncationCfg:
    n_radius: Optional[int] = None
    j_radius: Optional[int] = None
    second_step_s: float = 2.0


@dataclass
class ConditionsCfg:
    m_max: int = 8
    search_radius: int = 30
    graph_n_radius: Optional[int] = None
    graph_j_radius: Optional[int] = None


@dataclass
class NewtonCfg:
    tol: float = 1e-11
    max_iter: int = 12
    eps_first: float = 1e-4
    eps_second: float = 0.5
    kappa: float = 1e-2
    gamma: Optional[float] = None
    dio_radius: Optional[int] = None


@dataclass
class VerifyCfg:
    T: float = 100.0
    dt: float = 1e-2
    t_points: int = 64
    x_points: int = 33


@dataclass
class SweepCfg:
    epsilons: Tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    n_samples: int = 1000
    seed: int = 1234


@dataclass
class RunConfig:
    problem: ProblemSpec
    truncation: TruncationCfg = field(default_factory=TruncationCfg)
    conditions: ConditionsCfg = field(default_factory=ConditionsCfg)
    newton: NewtonCfg = field(default_factory=NewtonCfg)
    verify: VerifyCfg = field(default_factory=VerifyCfg)
    sweep: SweepCfg = field(default_factory=SweepCfg)

    def box(self) -> Box:
        t = self.truncation
        if t.n_radius is not None and t.j_radius is not None:
            return Box(n_radius=t.n_radius, j_radius=t.j_radius)
        base = default_box(self.problem)
        return Box(n_radius=t.n_radius or base.n_radius,
                   j_radius=t.j_radius or base.j_radius)

    def condition_box(self) -> Box:
        c = self.conditions
        base = self.box()
        if c.graph_n_radius is None and c.graph_j_radius is None:
            # Keep the graph box affordable for many frequencies.
            nr = max(2, min(base.n_radius, 9 // max(1, self.problem.b - 1)))
            return Box(n_radius=nr if self.problem.b > 1 else base.n_radius,
                       j_radius=base.j_radius)
        return Box(n_radius=c.graph_n_radius or base.n_radius,
                   j_radius=c.graph_j_radius or base.j_radius)


_MODE_RE = re.compile(r"\(([^)]*)\)\s*:\s*([^,]+)")

_SCHEMA = {
    "problem": {"d", "b", "p", "delta", "phase_m", "modes"},
    "truncation": {"n_radius", "j_radius", "second_step_s"},
    "conditions": {"m_max", "search_radius", "graph_n_radius", "graph_j_radius"},
    "newton": {"tol", "max_iter", "eps_first", "eps_second", "kappa", "gamma",
               "dio_radius"},
    "verify": {"T", "dt", "t_points", "x_points"},
    "sweep": {"epsilons", "n_samples", "seed"},
}


def _parse_sections(text: str) -> Dict[str, Dict[str, Tuple[str, int]]]:
    sections: Dict[str, Dict[str, Tuple[str, int]]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        if current is None:
            raise ConfigError(f"line {lineno}: key before any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[current]:
            raise ConfigError(f"line {lineno}: unknown key '{key}' in [{current}]")
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        sections[current][key] = (value, lineno)
    return sections


def _get(sections, sec, key, conv, default):
    if sec not in sections or key not in sections[sec]:
        return default
    value, lineno = sections[sec][key]
    if value == "":
        return default
    try:
        return conv(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"line {lineno}: bad value for {sec}.{key}: {exc}") from exc


def _conv_float_list(value: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in value.split(",") if x.strip())


def load_config(path: str) -> RunConfig:
    """Parse and validate a config file; unknown keys are rejected with the
    offending line number."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text)


def parse_config(text: str) -> RunConfig:
    sections = _parse_sections(text)
    if "problem" not in sections:
        raise ConfigError("missing [problem] section")
    for key in ("d", "b", "p", "delta", "modes"):
        if key not in sections["problem"]:
            raise ConfigError(f"missing required key problem.{key}")

    d = _get(sections, "problem", "d", int, None)
    b = _get(sections, "problem", "b", int, None)
    p = _get(sections, "problem", "p", int, None)
    delta = _get(sections, "problem", "delta", float, None)
    phase_m = _get(sections, "problem", "phase_m", float, 0.0)

    modes_text, modes_line = sections["problem"]["modes"]
    matches = list(_MODE_RE.finditer(modes_text))
    if not matches:
        raise ConfigError(f"line {modes_line}: modes must look like (j):a, ...")
    modes = []
    for mt in matches:
        coords = tuple(int(x) for x in mt.group(1).replace(" ", "").split(",") if x != "")
        if len(coords) != d:
            raise ConfigError(
                f"line {modes_line}: mode {mt.group(0)} has {len(coords)} "
                f"coordinates, expected d={d}")
        modes.append((coords, float(mt.group(2))))
    try:
        problem = ProblemSpec(d=d, b=b, p=p, delta=delta, modes=tuple(modes),
                              phase_m=phase_m)
    except SpecError as exc:
        raise ConfigError(f"line {modes_line}: {exc} "
                          f"(seed modes must satisfy j_k != 0, pairwise distinct, "
                          f"amplitudes in (0,1])") from exc

    cfg = RunConfig(
        problem=problem,
        truncation=TruncationCfg(
            n_radius=_get(sections, "truncation", "n_radius", int, None),
            j_radius=_get(sections, "truncation", "j_radius", int, None),
            second_step_s=_get(sections, "truncation", "second_step_s", float, 2.0),
        ),
        conditions=ConditionsCfg(
            m_max=_get(sections, "conditions", "m_max", int, 8),
            search_radius=_get(sections, "conditions", "search_radius", int, 30),
            graph_n_radius=_get(sections, "conditions", "graph_n_radius", int, None),
            graph_j_radius=_get(sections, "conditions", "graph_j_radius", int, None),
        ),
        newton=NewtonCfg(
            tol=_get(sections, "newton", "tol", float, 1e-11),
            max_iter=_get(sections, "newton", "max_iter", int, 12),
            eps_first=_get(sections, "newton", "eps_first", float, 1e-4),
            eps_second=_get(sections, "newton", "eps_second", float, 0.5),
            kappa=_get(sections, "newton", "kappa", float, 1e-2),
            gamma=_get(sections, "newton", "gamma", float, None),
            dio_radius=_get(sections, "newton", "dio_radius", int, None),
        ),
        verify=VerifyCfg(
            T=_get(sections, "verify", "T", float, 100.0),
            dt=_get(sections, "verify", "dt", float, 1e-2),
            t_points=_get(sections, "verify", "t_points", int, 64),
            x_points=_get(sections, "verify", "x_points", int, 33),
        ),
        sweep=SweepCfg(
            epsilons=_get(sections, "sweep", "epsilons", _conv_float_list,
                          (1e-1, 1e-2, 1e-3)),
            n_samples=_get(sections, "sweep", "n_samples", int, 1000),
            seed=_get(sections, "sweep", "seed", int, 1234),
        ),
    )
    # Validate the positivity invariants the schema cannot express.
    for name, val in (("m_max", cfg.conditions.m_max),
                      ("max_iter", cfg.newton.max_iter),
                      ("n_samples", cfg.sweep.n_samples),
                      ("tol", cfg.newton.tol),
                      ("dt", cfg.verify.dt),
                      ("T", cfg.verify.T)):
        if val <= 0:
            raise ConfigError(f"{name} must be positive")
    for name, val in (("n_radius", cfg.truncation.n_radius),
                      ("j_radius", cfg.truncation.j_radius),
                      ("dio_radius", cfg.newton.dio_radius),
                      ("graph_n_radius", cfg.conditions.graph_n_radius),
                      ("graph_j_radius", cfg.conditions.graph_j_radius)):
        if val is not None and val <= 0:
            raise ConfigError(f"{name} must be positive")
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    p = cfg.problem
    modes = ", ".join(f"({','.join(str(c) for c in j)}):{repr(a)}" for j, a in p.modes)
    lines = [
        "[problem]",
        f"d = {p.d}",
        f"b = {p.b}",
        f"p = {p.p}",
        f"delta = {repr(p.delta)}",
        f"phase_m = {repr(p.phase_m)}",
        f"modes = {modes}",
        "",
        "[truncation]",
        f"n_radius = {cfg.truncation.n_radius if cfg.truncation.n_radius is not None else ''}",
        f"j_radius = {cfg.truncation.j_radius if cfg.truncation.j_radius is not None else ''}",
        f"second_step_s = {repr(cfg.truncation.second_step_s)}",
        "",
        "[conditions]",
        f"m_max = {cfg.conditions.m_max}",
        f"search_radius = {cfg.conditions.search_radius}",
        f"graph_n_radius = {cfg.conditions.graph_n_radius if cfg.conditions.graph_n_radius is not None else ''}",
        f"graph_j_radius = {cfg.conditions.graph_j_radius if cfg.conditions.graph_j_radius is not None else ''}",
        "",
        "[newton]",
        f"tol = {repr(cfg.newton.tol)}",
        f"max_iter = {cfg.newton.max_iter}",
        f"eps_first = {repr(cfg.newton.eps_first)}",
        f"eps_second = {repr(cfg.newton.eps_second)}",
        f"kappa = {repr(cfg.newton.kappa)}",
        f"gamma = {repr(cfg.newton.gamma) if cfg.newton.gamma is not None else ''}",
        f"dio_radius = {cfg.newton.dio_radius if cfg.newton.dio_radius is not None else ''}",
        "",
        "[verify]",
        f"T = {repr(cfg.verify.T)}",
        f"dt = {repr(cfg.verify.dt)}",
        f"t_points = {cfg.verify.t_points}",
        f"x_points = {cfg.verify.x_points}",
        "",
        "[sweep]",
        f"epsilons = {', '.join(repr(e) for e in cfg.sweep.epsilons)}",
        f"n_samples = {cfg.sweep.n_samples}",
        f"seed = {cfg.sweep.seed}",
        "",
    ]
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Report and solution serialization


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, SiteIndex):
        return f"({' '.join(str(c) for c in value.n)} | {' '.join(str(c) for c in value.j)})"
    if isinstance(value, np.floating):
        return repr(float(value))
    return str(value)


def write_report(sections: Dict[str, Dict[str, object]]) -> str:
    out = []
    for sec, kv in sections.items():
        out.append(f"[{sec}]")
        for key, value in kv.items():
            out.append(f"{key} = {_fmt(value)}")
        out.append("")
    return "\n".join(out)


def meta_section(cfg: RunConfig, seed: Optional[int] = None) -> Dict[str, object]:
    meta = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "config_hash": config_hash(cfg),
        "threads": os.environ.get("NLSQP_THREADS", "1"),
    }
    if seed is not None:
        meta["seed"] = seed
    return meta


def write_solution(spec: ProblemSpec, omega: FrequencyVector, u: SparseSeries) -> str:
    """Physical-scale solution table: integers and two reals per line, so any
    other implementation can cross-check without parsing acrobatics."""
    lines = [
        "# nlsqp solution",
        f"d = {spec.d}",
        f"b = {spec.b}",
        f"p = {spec.p}",
        f"delta = {repr(spec.delta)}",
        f"phase_m = {repr(spec.phase_m)}",
        f"modes = {', '.join(f'({_coords(j)}):{repr(a)}' for j, a in spec.modes)}",
        f"omega = {', '.join(repr(w) for w in omega.omega)}",
        "[u]",
    ]
    for s, val in u.items():
        ints = " ".join(str(c) for c in (*s.n, *s.j))
        lines.append(f"{ints} {repr(val.real)} {repr(val.imag)}")
    lines.append("")
    return "\n".join(lines)


def _coords(j) -> str:
    return ",".join(str(c) for c in j)


def read_solution(text: str) -> Tuple[ProblemSpec, FrequencyVector, SparseSeries]:
    headers: Dict[str, str] = {}
    table: List[str] = []
    in_table = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[u]":
            in_table = True
            continue
        if in_table:
            table.append(line)
        elif "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            headers[key] = value
    d, b, p = int(headers["d"]), int(headers["b"]), int(headers["p"])
    modes = []
    for mt in _MODE_RE.finditer(headers["modes"]):
        coords = tuple(int(x) for x in mt.group(1).split(",") if x != "")
        modes.append((coords, float(mt.group(2))))
    spec = ProblemSpec(d=d, b=b, p=p, delta=float(headers["delta"]),
                       modes=tuple(modes), phase_m=float(headers.get("phase_m", "0")))
    omega = FrequencyVector(tuple(float(x) for x in headers["omega"].split(",")))
    terms = {}
    for line in table:
        parts = line.split()
        ns = tuple(int(x) for x in parts[:b])
        js = tuple(int(x) for x in parts[b:b + d])
        terms[SiteIndex(ns, js)] = complex(float(parts[b + d]), float(parts[b + d + 1]))
    return spec, omega, SparseSeries(b, d, terms, drop_tol=0.0)


# ---------------------------------------------------------------------------
# Commands

EXIT_OK = 0
EXIT_CONDITION = 1
EXIT_NO_CONVERGENCE = 2
EXIT_EXCISED = 3
EXIT_CONFIG = 4


def _condition_sections(cfg: RunConfig) -> Tuple[Dict[str, Dict[str, object]], bool]:
    spec = cfg.problem
    box = cfg.condition_box()
    rep_i = check_condition_i(spec)
    rep_ii = check_condition_ii(spec, m_max=cfg.conditions.m_max, box=box)
    rank = rank_check_momenta(spec.j_list, spec.d)
    sections: Dict[str, Dict[str, object]] = {}
    sections["conditions.non_intersection"] = {
        "verdict": rep_i.verdict,
        "witness_count": len(rep_i.witnesses),
    }
    if rep_i.witnesses:
        sections["conditions.non_intersection"]["first_witness"] = \
            rep_i.witnesses[0]["site"]
    sections["conditions.non_spiral"] = {
        "verdict": rep_ii.verdict,
        "graph_vertices": rep_ii.details["graph"]["vertices"],
        "graph_max_component": rep_ii.details["graph"]["max_component"],
        "walk_verdict": rep_ii.details["walk"]["verdict"],
        "m_max": cfg.conditions.m_max,
        "box": f"{box.n_radius} {box.j_radius}",
    }
    sup = symbol_supports(spec, search_radius=cfg.conditions.search_radius)
    sections["conditions.restricted_symbols"] = {
        "gpp_size": len(sup.gpp),
        "gpm_size": len(sup.gpm),
        "gmm_size": len(sup.gmm),
        "gmp_size": len(sup.gmp),
        "undecided_memberships": len(sup.unknown),
    }
    sections["conditions.rank_test"] = {
        "verdict": "pass" if rank.passed else "inconclusive",
    }
    if rank.determinant is not None:
        sections["conditions.rank_test"]["determinant"] = rank.determinant
    if rank.kernel_vector is not None:
        sections["conditions.rank_test"]["kernel"] = list(rank.kernel_vector)
    if spec.d == 1:
        oned = oned_check([j[0] for j in spec.j_list], spec.p, delta=spec.delta,
                          amplitudes=spec.amplitudes)
        sections["conditions.oned"] = {
            "verdict": oned.verdict,
            "gamma_plus_size": oned.details["gamma_plus_size"],
            "gamma_minus_size": oned.details["gamma_minus_size"],
            "pair_count": len(oned.details["pairs"]),
        }
    failed = (rep_i.verdict == "fail") or (rep_ii.verdict == "fail")
    return sections, failed


def cmd_check(cfg: RunConfig, out_path: Optional[str]) -> int:
    sections = {"meta": meta_section(cfg)}
    cond, failed = _condition_sections(cfg)
    sections.update(cond)
    _emit(write_report(sections), out_path)
    return EXIT_CONDITION if failed else EXIT_OK


def cmd_solve(cfg: RunConfig, out_dir: str) -> int:
    spec = cfg.problem
    box = cfg.box()
    ncfg = cfg.newton
    sections = {"meta": meta_section(cfg)}
    cond, failed = _condition_sections(cfg)
    sections.update(cond)
    if failed:
        _emit(write_report(sections), os.path.join(out_dir, "report.txt"))
        return EXIT_CONDITION
    report = newton.solve(
        spec, box=box, tol=ncfg.tol, max_iter=ncfg.max_iter,
        kappa=ncfg.kappa, gamma=ncfg.gamma, dio_radius=ncfg.dio_radius,
        m_max=cfg.conditions.m_max,
        eps_first=ncfg.eps_first, eps_second=ncfg.eps_second,
    )
    sections["solve"] = {
        "converged": report.converged,
        "steps": report.steps,
        "omega": list(report.omega),
        "omega0": list(report.omega0),
        "delta_omega_first": list(report.delta_omega_first),
        "omega_shifts": list(report.omega_shifts),
        "amplitudes_physical": list(report.amplitudes_physical),
        "residual_weighted": report.residual_history[-1][1],
        "residual_history_weighted": [w for _, w in report.residual_history],
        "quad_constant": report.quad_constant if report.quad_constant is not None else "n/a",
        "cs_mass": report.cs_mass,
        "inverse_norm": report.inverse_norm,
        "decay_beta": report.decay_beta,
        "decay_bound_ok": report.decay_bound_ok,
        "min_block_value": report.min_block_value,
        "invert_mode": report.invert_mode,
        "jac_det": report.modulation.jac_det,
        "diophantine_pass": report.modulation.diophantine.passed,
        "diophantine_fitted_kappa": report.modulation.diophantine.fitted_kappa,
    }
    os.makedirs(out_dir, exist_ok=True)
    _emit(write_report(sections), os.path.join(out_dir, "report.txt"))
    sol = write_solution(spec, report.state.omega, report.physical_u())
    _emit(sol, os.path.join(out_dir, "solution.txt"))
    return EXIT_OK


def cmd_verify(cfg: RunConfig, solution_path: str, out_path: Optional[str]) -> int:
    with open(solution_path, "r", encoding="utf-8") as fh:
        spec, omega, u = read_solution(fh.read())
    vcfg = cfg.verify
    res = verify.pde_residual(u, omega, spec, grid=(vcfg.t_points, vcfg.x_points))
    drift = verify.evolve_drift(u, omega, spec, T=vcfg.T, dt=vcfg.dt)
    sections = {
        "meta": meta_section(cfg),
        "residual": {
            "sup": res.sup,
            "mean": res.mean,
            "t_points": res.t_points,
            "x_points": res.x_points,
        },
        "drift": {
            "amp_drift": drift.amp_drift,
            "mass_drift": drift.mass_drift,
            "T": vcfg.T,
            "dt": vcfg.dt,
            "grid": drift.grid,
        },
    }
    _emit(write_report(sections), out_path)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out_csv: str) -> int:
    scfg = cfg.sweep
    result = newton.excision_sweep(
        cfg.problem, scfg.epsilons, n_samples=scfg.n_samples, seed=scfg.seed,
        kappa=cfg.newton.kappa, gamma=cfg.newton.gamma,
        dio_radius=min(cfg.newton.dio_radius or 10, 10), box=cfg.condition_box())
    dio_fail = float(np.mean(result.dio_kappas < result.kappa))
    lines = ["epsilon,excised_count,excised_fraction,dio_fail_fraction,n_samples,seed"]
    for eps, cnt, frac in zip(result.epsilons, result.counts, result.fractions):
        lines.append(f"{repr(eps)},{cnt},{repr(frac)},{repr(dio_fail)},"
                     f"{result.n_samples},{result.seed}")
    _emit("\n".join(lines) + "\n", out_csv)
    return EXIT_OK


def _emit(text: str, path: Optional[str]):
    if path is None:
        sys.stdout.write(text)
        return
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def run_command(cmd: str, config: RunConfig, out_path: Optional[str] = None,
                solution: Optional[str] = None) -> int:
    """Dispatch a command; returns the process exit code.

    0 success, 1 condition failure, 2 non-convergence, 3 excised amplitude,
    4 config error.
    """
    try:
        if cmd == "check":
            return cmd_check(config, out_path)
        if cmd == "solve":
            return cmd_solve(config, out_path or "nlsqp_out")
        if cmd == "verify":
            if solution is None:
                raise ConfigError("verify needs --solution <file>")
            return cmd_verify(config, solution, out_path)
        if cmd == "sweep":
            return cmd_sweep(config, out_path or "sweep.csv")
        raise ConfigError(f"unknown command {cmd}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConditionGateError as exc:
        print(f"condition failure: {exc}", file=sys.stderr)
        return EXIT_CONDITION
    except ExcisionError as exc:
        print(f"excised amplitude: {exc}", file=sys.stderr)
        return EXIT_EXCISED
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlsqp",
        description="Quasi-periodic NLS solutions: admissibility checks, "
                    "Newton construction, verification, excision sweeps.")
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name in ("check", "solve", "verify", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        sp.add_argument("--out", default=None)
        if name == "verify":
            sp.add_argument("--solution", required=True)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_command(args.cmd, cfg, out_path=args.out,
                       solution=getattr(args, "solution", None))


if __name__ == "__main__":
    sys.exit(main())
