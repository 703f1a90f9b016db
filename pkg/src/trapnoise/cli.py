"""Batch experiment runner.

Subcommands: heat-linear, heat-spring, trajectories, gate-fidelity, sweep,
estimate.  Each run reads a plain-text `key = value` config (flags override a
few common keys), writes a CSV with a deterministic body, a JSON metadata
sidecar sufficient to re-run the experiment exactly, and a PNG figure next to
them (disable with --no-plot).

Exit codes: 0 success, 2 config error, 3 invariant breach during a run,
4 anything else.  Error lines on stderr carry a machine-readable category:
``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import BE9_ION_MASS, HBAR
from .gates import (
    DEFAULT_READING,
    AuxSidebandGate,
    GateSpec,
    InputState,
    MutualPhaseGate,
    dyson_fidelity,
    fidelity_analytic,
    gamma_from_gate_noise,
    gate_noise_from_gamma,
    gate_noise_nominal,
    gate_step_count,
    run_gate_ensemble,
)
from .heating import (
    IntegrationError,
    averaged_master_rhs,
    integrate_master,
    mean_energy_linear,
    stable_rk4_dt,
    time_averaged_master_rhs,
)
from .hilbert import DensityMatrix, FockSpace, InvariantError
from .noise import ParameterError, TrapParams
from .reports import (
    render_band,
    render_curves,
    render_surface,
    write_csv,
    write_metadata,
)
from .springnoise import (
    MomentState,
    approx_energy,
    exact_energy,
    gaussian_state_from_moments,
    moment_matrix,
    propagate_moments,
    spring_master_rhs,
)
from .trajectories import StepError, TrajectoryConfig, run_ensemble


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


_REQUIRED = object()


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {raw!r}")


def _parse_float_list(raw: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list from {raw!r}") from exc


_SCHEMAS = {
    "heat-linear": {
        "m": (float, BE9_ION_MASS),
        "omega": (float, _REQUIRED),
        "hbar": (float, HBAR),
        "gamma": (float, _REQUIRED),
        "cutoff": (int, 32),
        "t_final": (float, _REQUIRED),
        "dt": (float, 0.0),            # 0 -> 0.005 trap periods
        "record_every": (int, 10),
        "form": (str, "averaged"),     # averaged | time_averaged
        "label": (str, "heat_linear"),
    },
    "heat-spring": {
        "omega": (float, _REQUIRED),
        "hbar": (float, HBAR),
        "Gamma": (float, -1.0),
        "Gamma_omega_half": (float, -1.0),
        "xx0": (float, 0.25),
        "pp0": (float, 0.25),
        "xp0": (float, 0.25),
        "t_final_omega": (float, 50.0),
        "n_points": (int, 501),
        "master_cutoff": (int, 0),     # 0 -> skip the density-matrix column
        "label": (str, "heat_spring"),
    },
    "trajectories": {
        "m": (float, BE9_ION_MASS),
        "omega": (float, _REQUIRED),
        "hbar": (float, HBAR),
        "gamma": (float, _REQUIRED),
        "cutoff": (int, 32),
        "n_traj": (int, _REQUIRED),
        "dt": (float, 0.0),            # 0 -> 0.002 trap periods
        "t_final": (float, _REQUIRED),
        "seed": (int, 2024),
        "record_every": (int, 10),
        "label": (str, "trajectories"),
    },
    "gate-fidelity": {
        "variant": (str, _REQUIRED),   # mutual | nist
        "omega": (float, _REQUIRED),
        "kappa": (float, 0.0),
        "Omega": (float, 0.0),
        "eta": (float, 1.0),
        "m": (float, BE9_ION_MASS),
        "hbar": (float, HBAR),
        "gamma": (float, -1.0),
        "Gamma_gate": (float, -1.0),
        "Gamma_formula": (float, -1.0),
        "alpha2_grid": (_parse_float_list, [0.0, 0.5, 1.0]),
        "eps2_grid": (_parse_float_list, [0.0, 0.5, 1.0]),
        "Delta": (float, 0.0),
        "n_traj": (int, 0),            # 0 -> skip the Monte Carlo column
        "seed": (int, 2024),
        "cutoff": (int, 16),
        "formula_reading": (str, ""),  # '' -> shipped default for the variant
        "with_dyson": (_parse_bool, True),
        "dyson_time_steps": (int, 0),  # 0 -> automatic
        "label": (str, "gate_fidelity"),
    },
    "estimate": {
        "phonons_per_ms": (float, -1.0),
        "heating_rate_per_s": (float, -1.0),
        "omega": (float, 2 * math.pi * 11.0e6),
        "m": (float, BE9_ION_MASS),
        "Omega_eta": (float, 2 * math.pi * 12.0e3),
        "hbar": (float, HBAR),
        "label": (str, "estimate"),
    },
}

_SWEEP_KEYS = {
    "sweep_experiment": (str, _REQUIRED),
    "sweep_key": (str, _REQUIRED),
    "sweep_values": (_parse_float_list, _REQUIRED),
    "label": (str, "sweep"),
}


def read_config_file(path: Path) -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def resolve_config(experiment: str, raw: dict[str, str],
                   overrides: dict | None = None) -> dict:
    """Validate raw strings against the experiment schema; reject unknown keys."""
    if experiment == "sweep":
        sub = raw.get("sweep_experiment")
        if sub is not None and sub not in _SCHEMAS:
            raise ConfigError(f"unknown sweep_experiment {sub!r}")
        schema = dict(_SCHEMAS[sub]) if sub is not None else {}
        schema.update(_SWEEP_KEYS)
    else:
        schema = _SCHEMAS[experiment]
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r} "
                          f"for experiment {experiment!r}")
    cfg = {}
    for key, (parser, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = parser(raw[key])
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            cfg[key] = default
    for key, value in (overrides or {}).items():
        if value is not None and key in schema:
            cfg[key] = value
    swept = cfg.get("sweep_key") if experiment == "sweep" else None
    missing = [k for k, v in cfg.items() if v is _REQUIRED and k != swept]
    if missing:
        raise ConfigError(f"missing required config key {missing[0]!r} "
                          f"for experiment {experiment!r}")
    return cfg


# ---------------------------------------------------------------------------
# estimate chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateChain:
    """Heating rate -> force-noise strength -> dimensionless gate noise."""

    heating_rate: float          # phonons / s
    gamma: float                 # N^2 s
    t_star: float                # s
    Gamma_a_nominal: float       # 4 pi gamma / (hbar m omega Omega eta)
    Gamma_a_calibrated: float    # lambda^2 gamma T / 2 at T = 2 pi / (Omega eta)

    def lines(self) -> list[str]:
        return [
            f"heating rate          dn/dt = {self.heating_rate:.6e} phonons/s",
            f"force noise           gamma = 2 hbar m omega dn/dt = {self.gamma:.6e} N^2 s",
            f"decoherence time      t*    = 1 / (dn/dt) = {self.t_star:.6e} s",
            f"gate noise (nominal)  Gamma_a = 4 pi gamma / (hbar m omega Omega eta) "
            f"= {self.Gamma_a_nominal:.6e}",
            f"gate noise (calibrated) lambda^2 gamma T / 2 = {self.Gamma_a_calibrated:.6e}",
        ]


def estimate_gamma_a_from_heating(heating_rate: float, omega: float, m: float,
                                  Omega_eta: float, hbar: float = HBAR) -> EstimateChain:
    """Convert a measured phonon heating rate into the dimensionless gate noise.

    Chain: dn/dt = gamma / (2 hbar m omega) inverted for gamma, then the
    nominal Gamma_a = 4 pi gamma / (hbar m omega Omega eta).  The calibrated
    value (the argument the shipped fidelity surfaces take) is also reported.
    """
    if heating_rate < 0:
        raise ParameterError("heating rate must be non-negative")
    if min(omega, m, Omega_eta, hbar) <= 0:
        raise ParameterError("omega, m, Omega_eta and hbar must be positive")
    gamma = 2 * hbar * m * omega * heating_rate
    t_star = math.inf if heating_rate == 0 else 1.0 / heating_rate
    nominal = 4 * math.pi * gamma / (hbar * m * omega * Omega_eta)
    T = 2 * math.pi / Omega_eta
    lam2 = 1.0 / (2 * hbar * m * omega)
    calibrated = lam2 * gamma * T / 2
    return EstimateChain(heating_rate=heating_rate, gamma=gamma, t_star=t_star,
                         Gamma_a_nominal=nominal, Gamma_a_calibrated=calibrated)


def heating_rate_from_gamma_a(Gamma_a_nominal: float, Omega_eta: float) -> float:
    """Exact inverse of the nominal chain: dn/dt = Gamma_a Omega_eta / (8 pi)."""
    if Gamma_a_nominal < 0 or Omega_eta <= 0:
        raise ParameterError("arguments must be non-negative / positive")
    return Gamma_a_nominal * Omega_eta / (8 * math.pi)


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def run_heat_linear(cfg: dict, outdir: Path, plot: bool = True) -> dict:
    params = TrapParams(m=cfg["m"], omega=cfg["omega"], gamma=cfg["gamma"],
                        hbar=cfg["hbar"])
    space = FockSpace(cfg["cutoff"])
    if cfg["form"] == "averaged":
        rhs = lambda mat: averaged_master_rhs(mat, params, space)
    elif cfg["form"] == "time_averaged":
        rhs = lambda mat: time_averaged_master_rhs(mat, params, space)
    else:
        raise ConfigError(f"unknown form {cfg['form']!r}")
    dt = cfg["dt"] if cfg["dt"] > 0 else stable_rk4_dt(params, space, cfg["form"])
    res = integrate_master(DensityMatrix.vacuum(space), rhs, cfg["t_final"], dt,
                           params, space, record_every=cfg["record_every"])
    stem = outdir / cfg["label"]
    write_csv(stem.with_suffix(".csv"), ["t", "energy", "nbar", "trunc_top_pop"],
              zip(res.times, res.mean_energy, res.nbar, res.top_level_population))
    write_metadata(stem.with_suffix(".meta.json"), {
        "experiment": "heat-linear", "parameters": cfg, "dt_used": dt,
        "truncation_breach_time": res.truncation_breach_time,
        "max_trace_drift": res.max_trace_drift,
        "closed_form_slope": params.gamma / (2 * params.m),
    })
    if plot:
        line = [mean_energy_linear(t, params, res.mean_energy[0]) for t in res.times]
        render_curves(stem.with_suffix(".png"), res.times,
                      {"integrated energy": res.mean_energy,
                       "closed-form line": line,
                       "nbar": res.nbar},
                      xlabel="t [s]", ylabel="energy [J] / nbar",
                      title="trap-center noise heating")
    return {"final_energy": float(res.mean_energy[-1]),
            "final_nbar": float(res.nbar[-1])}


def run_heat_spring(cfg: dict, outdir: Path, plot: bool = True) -> dict:
    omega, hbar = cfg["omega"], cfg["hbar"]
    given = [cfg["Gamma"] >= 0, cfg["Gamma_omega_half"] >= 0]
    if sum(given) != 1:
        raise ConfigError("specify exactly one of Gamma, Gamma_omega_half")
    Gamma = cfg["Gamma"] if given[0] else 2 * cfg["Gamma_omega_half"] / omega
    m0 = MomentState(cfg["xx0"], cfg["pp0"], cfg["xp0"])
    n_points = cfg["n_points"]
    if n_points < 2:
        raise ConfigError("n_points must be >= 2")
    times = np.linspace(0.0, cfg["t_final_omega"] / omega, n_points)

    e_exact = exact_energy(m0, Gamma, omega, times, hbar=hbar)
    e_approx = approx_energy(m0, Gamma, omega, times, hbar=hbar)
    from scipy.linalg import expm

    step = expm(moment_matrix(Gamma, omega) * (times[1] - times[0]))
    vec = m0.as_vector()
    e_matexp = np.empty(n_points)
    e_matexp[0] = hbar * omega * (vec[0] + vec[1])
    for i in range(1, n_points):
        vec = step @ vec
        e_matexp[i] = hbar * omega * (vec[0] + vec[1])

    e_master = np.full(n_points, np.nan)
    master_note = "skipped: master_cutoff = 0"
    if cfg["master_cutoff"] > 0:
        if abs(m0.uncertainty_product - 1 / 16) <= 1e-10:
            params = TrapParams(m=1.0, omega=omega, Gamma=Gamma, hbar=hbar)
            space = FockSpace(cfg["master_cutoff"])
            rho0 = gaussian_state_from_moments(m0, space)
            spacing = times[1] - times[0]
            substeps = max(1, math.ceil(spacing / stable_rk4_dt(params, space, "spring")))
            rhs = lambda mat: spring_master_rhs(mat, params, space)
            res = integrate_master(rho0, rhs, t_final=float(times[-1]),
                                   dt=spacing / substeps, params=params,
                                   space=space, record_every=substeps)
            e_master[:len(res.mean_energy)] = res.mean_energy
            master_note = (f"integrated at cutoff {cfg['master_cutoff']}, "
                           f"breach at {res.truncation_breach_time}")
        else:
            master_note = ("skipped: moments are not a pure Gaussian state "
                           "(xx*pp - xp^2 != 1/16)")

    stem = outdir / cfg["label"]
    write_csv(stem.with_suffix(".csv"),
              ["t", "E_exact", "E_approx", "E_matexp", "E_master"],
              zip(times, e_exact, e_approx, e_matexp, e_master))
    write_metadata(stem.with_suffix(".meta.json"), {
        "experiment": "heat-spring", "parameters": cfg, "Gamma_used": Gamma,
        "Gamma_omega_half": Gamma * omega / 2, "master_column": master_note,
    })
    if plot:
        render_curves(stem.with_suffix(".png"), times * omega,
                      {"exact": e_exact / (hbar * omega),
                       "weak-noise approximation": e_approx / (hbar * omega),
                       "matrix exponential": e_matexp / (hbar * omega),
                       "density matrix": e_master / (hbar * omega)},
                      xlabel="omega t", ylabel="energy [hbar omega]",
                      title="spring-constant noise heating")
    return {"final_E_exact": float(e_exact[-1]),
            "final_E_approx": float(e_approx[-1])}


def run_trajectories(cfg: dict, outdir: Path, plot: bool = True) -> dict:
    params = TrapParams(m=cfg["m"], omega=cfg["omega"], gamma=cfg["gamma"],
                        hbar=cfg["hbar"])
    space = FockSpace(cfg["cutoff"])
    dt = cfg["dt"] if cfg["dt"] > 0 else 0.002 * (2 * math.pi / params.omega)
    config = TrajectoryConfig(n_traj=cfg["n_traj"], dt=dt, t_final=cfg["t_final"],
                              master_seed=cfg["seed"],
                              record_every=cfg["record_every"])
    res = run_ensemble(config, DensityMatrix.vacuum(space), params, space,
                       store_final_rho=False)
    stem = outdir / cfg["label"]
    write_csv(stem.with_suffix(".csv"), ["t", "mean_energy", "stderr", "n_failures"],
              ((t, e, s, res.n_failures)
               for t, e, s in zip(res.times, res.mean_energy, res.stderr_energy)))
    write_metadata(stem.with_suffix(".meta.json"), {
        "experiment": "trajectories", "parameters": cfg, "dt_used": dt,
        "n_trajectories": res.n_trajectories, "n_failures": res.n_failures,
        "closed_form_slope": params.gamma / (2 * params.m),
    })
    if plot:
        line = [mean_energy_linear(t, params, res.mean_energy[0]) for t in res.times]
        render_band(stem.with_suffix(".png"), res.times, res.mean_energy,
                    res.stderr_energy, xlabel="t [s]", ylabel="energy [J]",
                    title="stochastic-trajectory heating",
                    reference=line, reference_label="closed-form line")
    return {"final_energy": float(res.mean_energy[-1]),
            "final_stderr": float(res.stderr_energy[-1])}


def _build_gate_spec(cfg: dict) -> GateSpec:
    variant = cfg["variant"]
    if variant == "mutual":
        if cfg["kappa"] <= 0:
            raise ConfigError("mutual variant needs kappa > 0")
        return GateSpec(MutualPhaseGate(kappa=cfg["kappa"]), omega=cfg["omega"])
    if variant == "nist":
        if cfg["Omega"] <= 0 or cfg["eta"] <= 0:
            raise ConfigError("nist variant needs Omega > 0 and eta > 0")
        return GateSpec(AuxSidebandGate(Omega=cfg["Omega"], eta=cfg["eta"]),
                        omega=cfg["omega"])
    raise ConfigError(f"unknown variant {variant!r}")


def run_gate_fidelity(cfg: dict, outdir: Path, plot: bool = True) -> dict:
    spec = _build_gate_spec(cfg)
    noise_keys = [k for k in ("gamma", "Gamma_gate", "Gamma_formula") if cfg[k] >= 0]
    if len(noise_keys) != 1:
        raise ConfigError("specify exactly one of gamma, Gamma_gate, Gamma_formula")
    if noise_keys[0] == "gamma":
        gamma = cfg["gamma"]
    elif noise_keys[0] == "Gamma_gate":
        gamma = gamma_from_gate_noise(spec, cfg["Gamma_gate"] / 4.0, cfg["m"], cfg["hbar"])
    else:
        gamma = gamma_from_gate_noise(spec, cfg["Gamma_formula"], cfg["m"], cfg["hbar"])
    params = TrapParams(m=cfg["m"], omega=cfg["omega"], gamma=gamma, hbar=cfg["hbar"])
    Gamma_formula = gate_noise_from_gamma(spec, params)
    reading = cfg["formula_reading"] or DEFAULT_READING[spec.variant.name]
    if reading not in ("a", "b"):
        raise ConfigError(f"formula_reading must be 'a' or 'b', got {reading!r}")

    alpha2_vals, eps2_vals = cfg["alpha2_grid"], cfg["eps2_grid"]
    points = [(a2, e2) for a2 in alpha2_vals for e2 in eps2_vals]
    states = [InputState.from_populations(a2, e2, Delta=cfg["Delta"])
              for a2, e2 in points]

    f_analytic = [fidelity_analytic(spec, Gamma_formula, st, reading=reading)
                  for st in states]
    f_dyson = [float("nan")] * len(states)
    if cfg["with_dyson"]:
        n_time = cfg["dyson_time_steps"] or None
        f_dyson = [dyson_fidelity(st, spec, params, cutoff=cfg["cutoff"],
                                  n_time=n_time) for st in states]
    f_mc = [float("nan")] * len(states)
    f_se = [float("nan")] * len(states)
    if cfg["n_traj"] > 0:
        ens = run_gate_ensemble(spec, params, n_traj=cfg["n_traj"],
                                master_seed=cfg["seed"], cutoff=cfg["cutoff"])
        for i, st in enumerate(states):
            f_mc[i], f_se[i] = ens.fidelity(st)

    stem = outdir / cfg["label"]
    write_csv(stem.with_suffix(".csv"),
              ["alpha2", "eps2", "Delta", "F_analytic", "F_dyson", "F_mc",
               "F_mc_stderr", "variant", "formula_reading"],
              ((a2, e2, cfg["Delta"], fa, fd, fm, fs, spec.variant.name, reading)
               for (a2, e2), fa, fd, fm, fs
               in zip(points, f_analytic, f_dyson, f_mc, f_se)))
    write_metadata(stem.with_suffix(".meta.json"), {
        "experiment": "gate-fidelity", "parameters": cfg,
        "gamma_used": gamma,
        "Gamma_formula_argument": Gamma_formula,
        "Gamma_nominal": gate_noise_nominal(spec, params),
        "Gamma_gate_unified": 4 * Gamma_formula,
        "formula_reading": reading,
        "gate_time": spec.T,
        "mc_steps": gate_step_count(spec) if cfg["n_traj"] > 0 else 0,
    })
    if plot:
        shape = (len(alpha2_vals), len(eps2_vals))
        grids = {"closed form": np.reshape(f_analytic, shape)}
        if cfg["with_dyson"]:
            grids["second-order average"] = np.reshape(f_dyson, shape)
        if cfg["n_traj"] > 0:
            grids["Monte Carlo"] = np.reshape(f_mc, shape)
        render_surface(stem.with_suffix(".png"), alpha2_vals, eps2_vals, grids,
                       title=f"{spec.variant.name} gate fidelity")
    finite = [f for f in f_mc if not math.isnan(f)]
    return {"mean_F_analytic": float(np.mean(f_analytic)),
            "mean_F_mc": float(np.mean(finite)) if finite else float("nan")}


def run_estimate(cfg: dict, outdir: Path, plot: bool = True) -> dict:
    given = [cfg["phonons_per_ms"] >= 0, cfg["heating_rate_per_s"] >= 0]
    if sum(given) != 1:
        raise ConfigError("specify exactly one of phonons_per_ms, heating_rate_per_s")
    rate = (cfg["phonons_per_ms"] * 1000.0 if given[0]
            else cfg["heating_rate_per_s"])
    chain = estimate_gamma_a_from_heating(rate, cfg["omega"], cfg["m"],
                                          cfg["Omega_eta"], cfg["hbar"])
    for line in chain.lines():
        print(line)
    round_trip = heating_rate_from_gamma_a(chain.Gamma_a_nominal, cfg["Omega_eta"])
    print(f"round trip            dn/dt = {round_trip:.6e} phonons/s")
    stem = outdir / cfg["label"]
    write_csv(stem.with_suffix(".csv"),
              ["heating_rate_per_s", "gamma", "t_star", "Gamma_a_nominal",
               "Gamma_a_calibrated", "round_trip_rate"],
              [(chain.heating_rate, chain.gamma, chain.t_star,
                chain.Gamma_a_nominal, chain.Gamma_a_calibrated, round_trip)])
    write_metadata(stem.with_suffix(".meta.json"), {
        "experiment": "estimate", "parameters": cfg,
        "chain": {line.split("=")[0].strip(): line.split("=", 1)[1].strip()
                  for line in chain.lines() if "=" in line},
    })
    return {"Gamma_a_nominal": chain.Gamma_a_nominal,
            "Gamma_a_calibrated": chain.Gamma_a_calibrated}


_RUNNERS = {
    "heat-linear": run_heat_linear,
    "heat-spring": run_heat_spring,
    "trajectories": run_trajectories,
    "gate-fidelity": run_gate_fidelity,
    "estimate": run_estimate,
}


def _sweep_point(args):
    index, experiment, cfg, outdir, plot = args
    point_dir = Path(outdir) / f"point_{index:03d}"
    point_dir.mkdir(parents=True, exist_ok=True)
    summary = _RUNNERS[experiment](cfg, point_dir, plot)
    return index, summary


def run_sweep(cfg: dict, outdir: Path, plot: bool = True, workers: int = 1) -> dict:
    experiment = cfg["sweep_experiment"]
    key = cfg["sweep_key"]
    values = cfg["sweep_values"]
    base = {k: v for k, v in cfg.items()
            if k not in ("sweep_experiment", "sweep_key", "sweep_values", "label")}
    if key not in base:
        raise ConfigError(f"sweep_key {key!r} is not a key of {experiment!r}")
    schema = _SCHEMAS[experiment]
    base["label"] = schema["label"][1]
    missing = [k for k, v in base.items() if v is _REQUIRED and k != key]
    if missing:
        raise ConfigError(f"missing required config key {missing[0]!r} "
                          f"for experiment {experiment!r}")

    tasks = []
    caster = schema[key][0]
    for i, value in enumerate(values):
        point = dict(base)
        point[key] = caster(value) if caster in (int, float) else value
        tasks.append((i, experiment, point, outdir, plot))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    results.sort(key=lambda item: item[0])

    summary_keys = sorted(results[0][1].keys())
    stem = Path(outdir) / cfg["label"]
    write_csv(stem.with_suffix(".csv"), ["index", key] + summary_keys,
              ((i, values[i]) + tuple(summary[k] for k in summary_keys)
               for i, summary in results))
    write_metadata(stem.with_suffix(".meta.json"), {
        "experiment": "sweep", "sweep_experiment": experiment,
        "sweep_key": key, "sweep_values": values, "parameters": cfg,
    })
    if plot:
        series = {k: [summary[k] for _, summary in results] for k in summary_keys}
        render_curves(stem.with_suffix(".png"), values, series,
                      xlabel=key, ylabel="summary",
                      title=f"sweep over {key}")
    return {"n_points": len(values)}


# ---------------------------------------------------------------------------
# argument parsing and entry point
# ---------------------------------------------------------------------------

def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trapnoise",
        description="Batch simulations of trapped-ion heating and gate fidelity "
                    "under white-noise trap fluctuations.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in ("heat-linear", "heat-spring", "trajectories", "gate-fidelity",
                 "sweep", "estimate"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="key = value experiment configuration file")
        p.add_argument("--out", type=Path, default=Path("."),
                       help="output directory (created if absent)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--n-traj", type=int, default=None,
                       help="override the trajectory count")
        p.add_argument("--variant", choices=("mutual", "nist"), default=None,
                       help="override the gate variant")
        p.add_argument("--formula-reading", choices=("a", "b"), default=None,
                       help="override the closed-form reading")
        p.add_argument("--no-plot", action="store_true",
                       help="skip figure rendering")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel workers for sweep grid points")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    overrides = {"seed": args.seed, "n_traj": args.n_traj,
                 "variant": args.variant, "formula_reading": args.formula_reading}
    try:
        raw = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.experiment, raw, overrides)
        outdir = args.out
        outdir.mkdir(parents=True, exist_ok=True)
        if args.experiment == "sweep":
            run_sweep(cfg, outdir, plot=not args.no_plot, workers=args.workers)
        else:
            _RUNNERS[args.experiment](cfg, outdir, plot=not args.no_plot)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (InvariantError, IntegrationError, StepError) as exc:
        print(f"error: invariant: {exc}", file=sys.stderr)
        return 3
    except (ParameterError, OSError, ValueError) as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 4
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
