"""Experiment orchestration: config parsing, dispatch, seeds, workers, CSV reports.

Config files are INI-style: bracketed section headers name experiments, lines
are `key = value`, numeric lists are comma-separated. Every run writes one CSV
per experiment with the fixed column set

    experiment, n, rho, h, statistic, value, stderr, samples, seed, verdict

and exits 0 iff every verdict-bearing row passed. Reruns with identical
config bytes produce identical CSV bytes at any worker count: replica streams
are indexed, reductions are pairwise over replica-ordered arrays, and floats
are formatted with a fixed %.12g.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import claw as claw_mod
from . import convergence_lab as lab
from . import transport as transport_mod
from .mollify import (MollifierKernel, adjoint_mollify,
                      adjoint_mollify_derivative, mollify, mollify_derivative,
                      time_inner)
from ._util import map_chunks, mean_and_stderr
from .errors import ConfigurationError
from .processes import Ensemble, TestFunction
from .translation import fit_translation_rate
from .wiener import CouplingSchedule, TimeGrid, increment_chunk, initial_chunk

CSV_HEADER = ["experiment", "n", "rho", "h", "statistic", "value", "stderr",
              "samples", "seed", "verdict"]

EXPERIMENTS = ["isometry", "mollifier", "translate", "counterexample",
               "theorem21", "l1mode", "corollary42", "transport", "claw"]


@dataclass
class Row:
    experiment: str
    statistic: str
    value: float
    n: int | None = None
    rho: float | None = None
    h: float | None = None
    stderr: float | None = None
    samples: int | None = None
    seed: int | None = None
    verdict: str = ""  # "pass" | "fail" | "invalid" | "" (informational)

    def as_record(self) -> list[str]:
        def num(x):
            if x is None:
                return ""
            if isinstance(x, (int, np.integer)):
                return str(int(x))
            return "%.12g" % float(x)
        return [self.experiment, num(self.n), num(self.rho), num(self.h),
                self.statistic, num(self.value), num(self.stderr),
                num(self.samples), num(self.seed), self.verdict]


# ----------------------------------------------------------------------
# config schema
# ----------------------------------------------------------------------

_REQUIRED = object()


def _int(v):
    return int(v)


def _pos_int(v):
    x = int(v)
    if x <= 0:
        raise ValueError("must be positive")
    return x


def _float(v):
    return float(v)


def _pos_float(v):
    x = float(v)
    if x <= 0:
        raise ValueError("must be positive")
    return x


def _int_list(v):
    return [int(s.strip()) for s in str(v).split(",") if s.strip()]


def _float_list(v):
    return [_fraction(s.strip()) for s in str(v).split(",") if s.strip()]


def _fraction(v):
    # allow "1/256" style lag entries alongside plain floats
    if "/" in str(v):
        a, b = str(v).split("/")
        return float(a) / float(b)
    return float(v)


def _choice(*options):
    def parse(v):
        v = str(v).strip()
        if v not in options:
            raise ValueError(f"must be one of {options}")
        return v
    return parse


SCHEMAS: dict[str, dict] = {
    "isometry": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),
        "time_steps": (_pos_int, 512),
        "identity_paths": (_pos_int, 1000),
    },
    "mollifier": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),       # number of random smooth pairs
        "time_steps": (_pos_int, 1024),
        "rho": (_pos_float, 0.07),
        "rho_ladder": (_float_list, [0.2, 0.1, 0.05]),
        "mass_delta": (_pos_float, 0.08),
        "mass_rho": (_pos_float, 0.06),
    },
    "translate": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),       # replicas per family member
        "cells": (_pos_int, 128),
        "time_steps": (_pos_int, 2048),
        "n_ladder": (_int_list, [32, 64, 128]),
        "h_ladder": (_float_list, [2.0 ** (-e) for e in range(8, 2, -1)]),
        "slope_min": (_float, 0.4),
        "uniformity_max": (_float, 1.5),
    },
    "counterexample": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),
        "which": (_choice("sine", "spike", "both"), "both"),
        "time_steps": (_pos_int, 512),
        "sine_n_ladder": (_int_list, [4, 16, 64]),
        "spike_n_ladder": (_int_list, [4, 16]),
        "tolerance": (_pos_float, 0.03),
    },
    "theorem21": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),
        "time_steps": (_pos_int, 256),
        "n_ladder": (_int_list, [1, 4, 16]),
        "rho_ladder": (_float_list, [0.2, 0.1, 0.05]),
        "rho_n": (_pos_int, 4),
        "decomposition_samples": (_pos_int, 2000),
    },
    "l1mode": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),
        "time_steps": (_pos_int, 256),
        "cells": (_pos_int, 64),
        "n_ladder": (_int_list, [2, 8, 32]),
        "ratio_max": (_pos_float, 0.25),
        "growth_factor": (_pos_float, 2.0),
    },
    "corollary42": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),
        "time_steps": (_pos_int, 256),
        "n_ladder": (_int_list, [2, 8, 32]),
        "rho": (_pos_float, 0.1),
    },
    "transport": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),       # replicas
        "cells": (_pos_int, 128),
        "horizon": (_pos_float, 0.25),
        "n_ladder": (_int_list, [2, 8, 32]),
        "snapshots": (_pos_int, 64),
        "refine": (_pos_int, 4),
        "velocity": (_choice("smooth", "constant"), "smooth"),
        "velocity_scale": (_float, 0.5),
        "noise": (_choice("state", "additive", "none"), "state"),
        "noise_amplitude": (_float, 0.15),
    },
    "claw": {
        "seed": (_int, _REQUIRED),
        "samples": (_pos_int, _REQUIRED),       # replicas for the ladder
        "cells": (_pos_int, 64),
        "horizon": (_pos_float, 0.2),
        "n_ladder": (_int_list, [2, 8, 16]),
        "refine": (_pos_int, 4),
        "det_cells": (_int_list, [64, 128]),
        "shock_horizon": (_pos_float, 0.3),
        "flux": (_choice("burgers", "cubic", "linear"), "burgers"),
        "sigma": (_choice("bounded_smooth", "constant"), "bounded_smooth"),
        "sigma_amplitude": (_float, 0.12),
    },
    "run": {
        "experiments": (lambda v: [s.strip() for s in str(v).split(",") if s.strip()], None),
    },
}


def apply_defaults(section: str, params: dict) -> dict:
    """Fill a parameter dict with the section's schema defaults."""
    schema = SCHEMAS[section]
    out = dict(params)
    for key, (_, default) in schema.items():
        if key not in out:
            if default is _REQUIRED:
                raise ConfigurationError(f"missing required key '{key}' in [{section}]")
            out[key] = default
    return out


def parse_config(text: str) -> dict[str, dict]:
    """Validate the INI text against the experiment schemas.

    Unknown sections or keys are errors listing the accepted set; duplicate
    keys within a section are rejected by the strict parser; missing required
    keys are errors that also name the available defaults.
    """
    parser = configparser.ConfigParser(strict=True, interpolation=None)
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigurationError(f"duplicate key: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"config not parseable: {exc}") from exc
    plan: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMAS:
            raise ConfigurationError(
                f"unknown section [{section}]; accepted: {sorted(SCHEMAS)}")
        schema = SCHEMAS[section]
        params = {}
        for key, value in parser.items(section):
            if key not in schema:
                raise ConfigurationError(
                    f"unknown key '{key}' in [{section}]; accepted: {sorted(schema)}")
            fn, _ = schema[key]
            try:
                params[key] = fn(value)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigurationError(f"bad value for '{key}' in [{section}]: {exc}") from exc
        for key, (fn, default) in schema.items():
            if key in params:
                continue
            if default is _REQUIRED:
                have_defaults = {k: d for k, (_, d) in schema.items()
                                 if d is not _REQUIRED and d is not None}
                raise ConfigurationError(
                    f"missing required key '{key}' in [{section}] "
                    f"(keys with defaults: {have_defaults})")
            params[key] = default
        plan[section] = params
    return plan


# ----------------------------------------------------------------------
# experiment implementations
# ----------------------------------------------------------------------

def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def _run_isometry(p: dict, workers: int) -> list[Row]:
    seed, samples, nt = p["seed"], p["samples"], p["time_steps"]
    grid = TimeGrid(1.0, nt)
    dt = grid.dt
    t_left = grid.left_nodes
    n_osc = 8
    sin_t = np.sin(2 * np.pi * n_osc * t_left)

    def chunk(lo, hi):
        dW = increment_chunk(grid, 1, seed, lo, hi)[:, :, 0]
        omega0, _ = initial_chunk(seed, lo, hi)
        w_left = np.concatenate([np.zeros((hi - lo, 1)), np.cumsum(dW, axis=1)[:, :-1]], axis=1)
        members = {
            "ramp": (dW @ t_left, np.full(hi - lo, np.sum(t_left ** 2) * dt)),
            "unit": (dW.sum(axis=1), np.ones(hi - lo)),
            "wiener": (np.sum(w_left * dW, axis=1), np.sum(w_left ** 2, axis=1) * dt),
        }
        f = np.sin(2 * np.pi * n_osc * omega0)[:, None] * sin_t[None, :]
        members["osc_sine"] = (np.sum(f * dW, axis=1), np.sum(f ** 2, axis=1) * dt)
        return {k: (i ** 2, q) for k, (i, q) in members.items()}

    parts = map_chunks(chunk, samples, workers, chunk=16384)
    rows = []
    for name in ("ramp", "unit", "wiener", "osc_sine"):
        sq = np.concatenate([c[name][0] for c in parts])
        quad = np.concatenate([c[name][1] for c in parts])
        lhs, lhs_se = mean_and_stderr(sq)
        rhs, _ = mean_and_stderr(quad)
        dmean, dse = mean_and_stderr(sq - quad)
        z = dmean / dse if dse > 0 else 0.0
        rows.append(Row("isometry", f"{name}_lhs", lhs, stderr=lhs_se,
                        samples=samples, seed=seed))
        rows.append(Row("isometry", f"{name}_rhs", rhs, samples=samples, seed=seed))
        rows.append(Row("isometry", f"{name}_z", z, samples=samples, seed=seed,
                        verdict=_verdict(abs(z) <= 3.0)))
    from .ito import discrete_ito_identity_residual
    from .wiener import sample_wiener
    worst = max(discrete_ito_identity_residual(sample_wiener(grid, 1, seed, r))
                for r in range(p["identity_paths"]))
    rows.append(Row("isometry", "ito_identity_max_rel", worst,
                    samples=p["identity_paths"], seed=seed,
                    verdict=_verdict(worst <= 1e-12)))
    return rows


def _run_mollifier(p: dict, workers: int) -> list[Row]:
    seed, pairs, nt = p["seed"], p["samples"], p["time_steps"]
    grid = TimeGrid(1.0, nt)
    K = MollifierKernel(p["rho"])
    rng = np.random.default_rng(seed)
    worst_adj = 0.0
    worst_dadj = 0.0
    for _ in range(pairs):
        f = rng.standard_normal(nt + 1)
        g = rng.standard_normal(nt + 1)
        lhs = time_inner(grid, mollify(K, grid, f), g)
        rhs = time_inner(grid, f, adjoint_mollify(K, grid, g))
        worst_adj = max(worst_adj, abs(lhs - rhs))
        dl = time_inner(grid, mollify_derivative(K, grid, f), g)
        dr = time_inner(grid, f, adjoint_mollify_derivative(K, grid, g))
        worst_dadj = max(worst_dadj, abs(dl + dr))
    rows = [
        Row("mollifier", "adjoint_residual_max", worst_adj, rho=p["rho"],
            samples=pairs, seed=seed, verdict=_verdict(worst_adj <= 1e-8)),
        Row("mollifier", "derivative_adjoint_residual_max", worst_dadj, rho=p["rho"],
            samples=pairs, seed=seed, verdict=_verdict(worst_dadj <= 1e-8)),
    ]
    mass = MollifierKernel(p["mass_rho"]).mass_up_to(p["mass_delta"])
    rows.append(Row("mollifier", "mass_below_delta", mass, rho=p["mass_rho"],
                    h=p["mass_delta"], seed=seed,
                    verdict=_verdict(abs(mass - 1.0) <= 1e-6)))
    corpus = [np.sin(2 * np.pi * grid.nodes),
              np.cos(4 * np.pi * grid.nodes) + 0.3 * grid.nodes,
              np.exp(grid.nodes) * np.sin(2 * np.pi * grid.nodes)]
    contraction_ok = True
    for f in corpus:
        out = mollify(K, grid, f)
        for r in (1.0, 2.0, 3.0):
            w = np.full(nt + 1, grid.dt)
            w[0] = w[-1] = grid.dt / 2
            nf = np.sum(w * np.abs(f) ** r) ** (1 / r)
            no = np.sum(w * np.abs(out) ** r) ** (1 / r)
            contraction_ok = contraction_ok and (no <= nf * (1 + 1e-6))
    rows.append(Row("mollifier", "contraction_ok", float(contraction_ok), rho=p["rho"],
                    seed=seed, verdict=_verdict(contraction_ok)))
    monotone_ok = True
    for f in corpus:
        errs = []
        for rho in p["rho_ladder"]:
            out = mollify(MollifierKernel(rho), grid, f)
            errs.append(np.sqrt(time_inner(grid, f - out, f - out)))
        monotone_ok = monotone_ok and all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))
    rows.append(Row("mollifier", "approximation_monotone", float(monotone_ok),
                    seed=seed, verdict=_verdict(monotone_ok)))
    return rows


def _transport_translation_problem(n: int):
    return transport_mod.TransportProblem(
        velocity=lambda x: np.zeros_like(x),
        divergence=lambda x: np.zeros_like(x),
        source=lambda x: np.zeros_like(x),
        noise=transport_mod.bounded_smooth_noise(0.3),
        epsilon=1.0 / n,
        u0=lambda x: 0.5 + 0.3 * np.sin(2 * np.pi * x))


def _claw_translation_problem(n: int):
    return claw_mod.KineticProblem(
        flux=claw_mod.quadratic_flux(),
        sigma=claw_mod.bounded_smooth_sigma(0.25),
        epsilon=1.0 / n,
        u0=lambda x: 0.5 + 0.3 * np.sin(2 * np.pi * x),
        xi_min=-1.4, xi_max=2.4)


def _run_translate(p: dict, workers: int) -> list[Row]:
    seed, replicas = p["seed"], p["samples"]
    tgrid = TimeGrid(1.0, p["time_steps"])
    grid = transport_mod.TorusGrid(p["cells"])
    lags = sorted(h * tgrid.horizon for h in p["h_ladder"])
    rows = []
    systems = {
        "transport": transport_mod.transport_translation_ensembles(
            _transport_translation_problem, p["n_ladder"], grid, tgrid,
            replicas, seed, workers=workers),
        "claw": claw_mod.claw_translation_ensembles(
            _claw_translation_problem, p["n_ladder"], grid, tgrid, replicas,
            seed + 1, phi=claw_mod.bump_test_function(
                TestFunction.one(p["cells"]), -1.1, 2.1), workers=workers),
    }
    for name, ensembles in systems.items():
        fit = fit_translation_rate(ensembles, tgrid, lags)
        for n in p["n_ladder"]:
            slope = fit.slopes[n]
            rows.append(Row("translate", f"{name}_slope", slope, n=n,
                            samples=replicas, seed=seed,
                            verdict=_verdict(slope >= p["slope_min"])))
            for h, m in zip(fit.lags, fit.moduli[n]):
                rows.append(Row("translate", f"{name}_modulus", m, n=n, h=h,
                                samples=replicas, seed=seed))
        for h, ratio in zip(fit.lags, fit.uniform_ratio):
            rows.append(Row("translate", f"{name}_uniformity_ratio", ratio, h=h,
                            samples=replicas, seed=seed,
                            verdict=_verdict(ratio <= p["uniformity_max"])))
    return rows


def _run_counterexample(p: dict, workers: int) -> list[Row]:
    seed, samples = p["seed"], p["samples"]
    grid = TimeGrid(1.0, p["time_steps"])
    sched = CouplingSchedule()
    tol = p["tolerance"]
    rows = []
    if p["which"] in ("sine", "both"):
        for n in p["sine_n_ladder"]:
            rep = lab.counterexample_sine(n, Ensemble(seed, samples), grid, sched,
                                          workers=workers)
            rows.append(Row("counterexample", "second_moment", rep.second_moment,
                            n=n, stderr=rep.stderr, samples=samples, seed=seed,
                            verdict=_verdict(abs(rep.second_moment - 0.25) <= tol * 0.25)))
            for name, (val, se) in rep.pairings.items():
                rows.append(Row("counterexample", f"pairing_{name}", val, n=n,
                                stderr=se, samples=samples, seed=seed,
                                verdict=_verdict(abs(val) <= 3 * se)))
    if p["which"] in ("spike", "both"):
        for n in p["spike_n_ladder"]:
            rep = lab.counterexample_spike(n, Ensemble(seed, samples), grid, sched,
                                           workers=workers)
            rows.append(Row("counterexample", "spike_variance", rep.variance, n=n,
                            stderr=rep.variance_stderr, samples=samples, seed=seed,
                            verdict=_verdict(abs(rep.variance - 1.0) <= tol)))
            rows.append(Row("counterexample", "spike_mean", rep.mean, n=n,
                            stderr=rep.mean_stderr, samples=samples, seed=seed,
                            verdict=_verdict(abs(rep.mean) <= 3 * rep.mean_stderr)))
            rows.append(Row("counterexample", "spike_tail_fraction", rep.tail_fraction,
                            n=n, samples=samples, seed=seed))
            rows.append(Row("counterexample", "spike_l2_norm_sq", rep.l2_norm_sq, n=n,
                            seed=seed, verdict=_verdict(abs(rep.l2_norm_sq - 1.0) <= 1e-12)))
            closed = 1.0 / (2.0 * n ** 1.5)
            rows.append(Row("counterexample", "spike_linear_pairing", rep.linear_pairing,
                            n=n, seed=seed,
                            verdict=_verdict(abs(rep.linear_pairing - closed) <= 1e-10)))
    return rows


def _weak_omega():
    return lab.weak_omega_family(lambda t: np.ones_like(t),
                                 lambda t: np.sin(2 * np.pi * t))


def _unit_limit(draw):
    from .processes import AdaptedProcess
    return AdaptedProcess(draw.W.grid, np.ones(draw.W.grid.steps), "scalar")


def _run_theorem21(p: dict, workers: int) -> list[Row]:
    seed, samples = p["seed"], p["samples"]
    grid = TimeGrid(1.0, p["time_steps"])
    sched = CouplingSchedule()
    ens = Ensemble(seed, samples)
    rows = []
    report = lab.convergence_scan(grid, 1, _weak_omega(), _unit_limit, sched,
                                  p["n_ladder"], ens, "weak")
    gaps = [e.statistic for e in report.entries]
    for e in report.entries:
        rows.append(Row("theorem21", "weak_gap", e.statistic, n=e.n,
                        stderr=e.stderr, samples=samples, seed=seed))
    rows.append(Row("theorem21", "weak_gap_ratio", gaps[-1] / max(gaps[0], 1e-300),
                    samples=samples, seed=seed,
                    verdict=_verdict(gaps[-1] <= gaps[0] / 3.0)))
    dens = Ensemble(seed, min(samples, p["decomposition_samples"]))
    reports = lab.rho_sweep(grid, 1, _weak_omega(), _unit_limit, sched,
                            p["rho_n"], p["rho_ladder"], dens)
    i1 = [r.i1_second_moment for r in reports]
    i3 = [r.i3_second_moment for r in reports]
    for r in reports:
        rows.append(Row("theorem21", "i1_second_moment", r.i1_second_moment,
                        n=r.n, rho=r.rho, stderr=r.i1_stderr,
                        samples=dens.replicas, seed=seed))
        rows.append(Row("theorem21", "i3_second_moment", r.i3_second_moment,
                        n=r.n, rho=r.rho, stderr=r.i3_stderr,
                        samples=dens.replicas, seed=seed))
    mono = all(i1[i + 1] < i1[i] for i in range(len(i1) - 1)) and \
        all(i3[i + 1] < i3[i] for i in range(len(i3) - 1))
    rows.append(Row("theorem21", "decomposition_monotone", float(mono),
                    n=p["rho_n"], samples=dens.replicas, seed=seed,
                    verdict=_verdict(mono)))
    entries, floor, ok = lab.necessity_control(grid, sched, p["n_ladder"], ens)
    for e in entries:
        rows.append(Row("theorem21", "negative_control_strong", e.statistic, n=e.n,
                        stderr=e.stderr, samples=samples, seed=seed))
    rows.append(Row("theorem21", "negative_control_floor", floor,
                    samples=samples, seed=seed, verdict=_verdict(ok)))
    return rows


def _run_l1mode(p: dict, workers: int) -> list[Row]:
    seed, samples = p["seed"], p["samples"]
    grid = TimeGrid(1.0, p["time_steps"])
    cells = p["cells"]
    sched = CouplingSchedule()
    beta = TestFunction.from_callable(cells, lambda x: 1.0 + np.sin(4 * np.pi * x))
    v = lambda t, x: (1.0 + 0.5 * np.cos(2 * np.pi * x)) * (1.0 + 0.3 * t)
    fam = lab.spatial_oscillation_family(cells, v)

    def limit(draw):
        from .processes import AdaptedProcess
        t = draw.W.grid.left_nodes
        x = np.arange(cells) / cells
        vals = v(t[:, None], x[None, :])
        return AdaptedProcess(draw.W.grid, vals[:, :, None], "field")

    out = lab.l1_torus_mode(grid, 1, beta, fam, limit, sched, p["n_ladder"],
                            Ensemble(seed, samples), mode="strong",
                            growth_factor=p["growth_factor"])
    rows = []
    verdict_suffix = "invalid" if out.invalid else None
    for e in out.report.entries:
        rows.append(Row("l1mode", "strong_statistic", e.statistic, n=e.n,
                        stderr=e.stderr, samples=samples, seed=seed,
                        verdict=verdict_suffix or ""))
    for n, norm in out.hypothesis_norms.items():
        rows.append(Row("l1mode", "lp_l1_hypothesis_norm", norm, n=n, seed=seed))
    vals = [e.statistic for e in out.report.entries]
    ratio = vals[-1] / max(vals[0], 1e-300)
    verdict = "invalid" if out.invalid else _verdict(ratio <= p["ratio_max"])
    rows.append(Row("l1mode", "strong_ratio", ratio, samples=samples, seed=seed,
                    verdict=verdict))
    return rows


def _run_corollary42(p: dict, workers: int) -> list[Row]:
    seed, samples = p["seed"], p["samples"]
    grid = TimeGrid(1.0, p["time_steps"])
    sched = CouplingSchedule()
    ens = Ensemble(seed, samples)
    fam = lab.temporal_oscillation_family(0.5)
    rows = []
    report = lab.convergence_scan(grid, 1, fam, lab.zero_limit, sched,
                                  p["n_ladder"], ens, "strong")
    for e in report.entries:
        rows.append(Row("corollary42", "strong_statistic", e.statistic, n=e.n,
                        stderr=e.stderr, samples=samples, seed=seed))
    rows.append(Row("corollary42", "strong_slope", report.slope,
                    samples=samples, seed=seed, verdict=_verdict(report.verdict)))
    # the smoothed middle term falls along n at fixed width
    small = Ensemble(seed, min(samples, 2000))
    i2 = []
    for n in (p["n_ladder"][0], p["n_ladder"][-1]):
        rep = lab.decompose(grid, 1, fam, lab.zero_limit, sched, n, p["rho"], small)
        i2.append(rep.i2_gap)
        rows.append(Row("corollary42", "i2_gap_fixed_rho", rep.i2_gap, n=n,
                        rho=p["rho"], stderr=rep.i2_gap_stderr,
                        samples=small.replicas, seed=seed))
    rows.append(Row("corollary42", "i2_gap_falls", float(i2[-1] < i2[0]),
                    rho=p["rho"], seed=seed, verdict=_verdict(i2[-1] < i2[0])))
    dist = []
    for n in (p["n_ladder"][0], p["n_ladder"][-1]):
        d, se = lab.pairing_l2_distance(grid, 1, fam, lab.zero_limit, n, small)
        dist.append(d)
        rows.append(Row("corollary42", "pairing_l2_distance", d, n=n, stderr=se,
                        samples=small.replicas, seed=seed))
    rows.append(Row("corollary42", "pairing_distance_falls", float(dist[-1] < dist[0]),
                    seed=seed, verdict=_verdict(dist[-1] < dist[0])))
    return rows


def _transport_velocity(family: str, scale: float, n: int | None):
    """Built-in velocity families; the 1/n part is the ladder perturbation."""
    wobble = 0.0 if n is None else 1.0 / n
    if family == "constant":
        return (lambda x: np.full_like(x, scale * (1.0 + 0.4 * wobble)),
                lambda x: np.zeros_like(x))
    return (lambda x: scale + 0.25 * np.sin(2 * np.pi * x) + 0.2 * wobble * np.sin(4 * np.pi * x),
            lambda x: 0.5 * np.pi * np.cos(2 * np.pi * x) + 0.8 * np.pi * wobble * np.cos(4 * np.pi * x))


def _transport_noise(family: str, amplitude: float, cells: int):
    if family == "none":
        return None
    if family == "additive":
        x = np.arange(cells) / cells
        values = amplitude * np.stack([np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)], axis=1)
        return transport_mod.AdditiveNoise(values)
    return transport_mod.bounded_smooth_noise(amplitude)


def _transport_problem(p: dict, n: int | None):
    """Ladder member for index n; the limit problem for n = None."""
    wobble = 0.0 if n is None else 1.0 / n
    b, div_b = _transport_velocity(p["velocity"], p["velocity_scale"], n)
    return transport_mod.TransportProblem(
        velocity=b, divergence=div_b,
        source=lambda x: 0.1 * np.cos(2 * np.pi * x) * (1.0 + wobble),
        noise=_transport_noise(p["noise"], p["noise_amplitude"], p["cells"]),
        epsilon=wobble,
        u0=lambda x: np.sin(2 * np.pi * x) + 0.5 + 0.1 * wobble * np.sin(2 * np.pi * x))


def _run_transport(p: dict, workers: int) -> list[Row]:
    seed, replicas = p["seed"], p["samples"]
    grid = transport_mod.TorusGrid(p["cells"])
    report = transport_mod.stability_experiment(
        {n: _transport_problem(p, n) for n in p["n_ladder"]},
        _transport_problem(p, None),
        CouplingSchedule(), grid, p["horizon"], replicas, seed,
        refine=p["refine"], snapshots=p["snapshots"], workers=workers)
    rows = []
    for e in report.entries:
        rows.append(Row("transport", "lp_distance", e.lp_distance, n=e.n,
                        stderr=e.lp_stderr, samples=replicas, seed=seed))
        rows.append(Row("transport", "energy_sup", e.energy_sup, n=e.n,
                        samples=replicas, seed=seed,
                        verdict=_verdict(e.energy_sup <= report.energy_bound)))
        rows.append(Row("transport", "sigma_integral_gap", e.sigma_gap, n=e.n,
                        stderr=e.sigma_gap_stderr, samples=replicas, seed=seed))
        rows.append(Row("transport", "renorm_integral_gap", e.renorm_gap, n=e.n,
                        stderr=e.renorm_gap_stderr, samples=replicas, seed=seed))
        rows.append(Row("transport", "sign_monitor", e.sign_monitor_violation, n=e.n,
                        samples=replicas, seed=seed,
                        verdict=_verdict(e.sign_monitor_violation <= 0.0)))
        for key, val in e.monitors.items():
            rows.append(Row("transport", f"monitor_{key}", val, n=e.n, seed=seed))
    rows.append(Row("transport", "hypothesis_monitors", float(report.monitors_ok),
                    seed=seed, verdict=_verdict(report.monitors_ok)))
    rows.append(Row("transport", "gronwall_bound", report.energy_bound, seed=seed))
    rows.append(Row("transport", "lp_distance_ladder", float(bool(report.distances_ok)),
                    samples=replicas, seed=seed, verdict=_verdict(bool(report.distances_ok))))
    # conservation: deterministic path, f = sigma = 0
    cons = transport_mod.TransportProblem(
        velocity=lambda x: 0.5 + 0.25 * np.sin(2 * np.pi * x),
        divergence=lambda x: 0.5 * np.pi * np.cos(2 * np.pi * x),
        source=lambda x: np.zeros_like(x),
        noise=None, epsilon=0.05,
        u0=lambda x: np.sin(2 * np.pi * x) + 0.5)
    nt = transport_mod.steps_for_cfl(cons, grid, 0.2)
    from .wiener import sample_wiener
    path = transport_mod.solve_transport(cons, sample_wiener(TimeGrid(0.2, nt), 1, seed, 0), grid)
    means = path.spatial_mean()
    drift = float(np.max(np.abs(means - means[0])))
    rows.append(Row("transport", "mass_drift", drift, seed=seed,
                    verdict=_verdict(drift <= 1e-12)))
    return rows


def _claw_flux(family: str, n: int | None):
    wobble = 0.0 if n is None else 1.0 / n
    if family == "cubic":
        return claw_mod.cubic_flux(1.0 + wobble)
    if family == "linear":
        return claw_mod.linear_flux(0.8 * (1.0 + 0.5 * wobble))
    return claw_mod.quadratic_flux(1.0 + wobble, 0.5 * wobble)


def _claw_sigma(family: str, amplitude: float, n: int | None):
    wobble = 0.0 if n is None else 1.0 / n
    if family == "constant":
        return claw_mod.constant_sigma(amplitude * (1.0 + wobble) * np.array([1.0, 0.5]))
    return claw_mod.bounded_smooth_sigma(amplitude * (1.0 + wobble), 1.0,
                                         linear_tilt=0.5 * wobble)


def _claw_problem(p: dict, n: int | None):
    """Ladder member for index n; the limit problem for n = None."""
    return claw_mod.KineticProblem(
        flux=_claw_flux(p["flux"], n),
        sigma=_claw_sigma(p["sigma"], p["sigma_amplitude"], n),
        epsilon=0.0 if n is None else 1.0 / n,
        u0=lambda x: 0.5 + 0.3 * np.sin(2 * np.pi * x),
        xi_min=-1.2, xi_max=2.2)


def _run_claw(p: dict, workers: int) -> list[Row]:
    seed, replicas = p["seed"], p["samples"]
    from .wiener import sample_wiener
    rows = []

    # deterministic Burgers shock: Rankine-Hugoniot speed
    T = p["shock_horizon"]
    grid = transport_mod.TorusGrid(p["cells"])
    det = claw_mod.KineticProblem(
        flux=claw_mod.quadratic_flux(), sigma=None, epsilon=0.0,
        u0=claw_mod.burgers_riemann(), xi_min=-0.6, xi_max=1.6)
    nt = claw_mod.claw_steps_for_cfl(det, grid, T, multiple_of=16)
    path, measure = claw_mod.solve_claw(det, sample_wiener(TimeGrid(T, nt), 1, seed, 0), grid)
    speed = (claw_mod.shock_position(path, nt) - claw_mod.shock_position(path, 0)) / T
    rows.append(Row("claw", "shock_speed", speed, seed=seed,
                    verdict=_verdict(abs(speed - 0.5) <= 2.0 * grid.dx / T)))

    # chi invariants are exact on the same run
    field = claw_mod.kinetic_function(path.values, det)
    chi = field.indicator(nt)
    chi_ok = (set(np.unique(chi)) <= {0, 1}) and bool(np.all(np.diff(chi.astype(int), axis=-1) <= 0))
    rows.append(Row("claw", "chi_invariants_exact", float(chi_ok), seed=seed,
                    verdict=_verdict(chi_ok)))
    rows.append(Row("claw", "measure_min_bin",
                    float(min(measure.kappa_cum.min(), measure.parabolic_cum.min())),
                    seed=seed, verdict=_verdict(
                        min(measure.kappa_cum.min(), measure.parabolic_cum.min()) >= 0.0)))

    # weak kinetic residual under mesh halving
    residuals = []
    T2 = 0.2
    for cells in p["det_cells"]:
        g2 = transport_mod.TorusGrid(cells)
        nt2 = claw_mod.claw_steps_for_cfl(det, g2, T2, multiple_of=16)
        W2 = sample_wiener(TimeGrid(T2, nt2), 1, seed, 0)
        path2, measure2 = claw_mod.solve_claw(det, W2, g2)
        phi2 = claw_mod.bump_test_function(
            TestFunction.from_callable(cells, lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x)),
            -0.4, 1.4)
        residuals.append(abs(claw_mod.kinetic_residual(path2, measure2, det, W2, phi2, T2)))
        rows.append(Row("claw", "kinetic_residual", residuals[-1], n=cells, seed=seed))
    ratio = residuals[0] / max(residuals[-1], 1e-300)
    rows.append(Row("claw", "residual_refinement_ratio", ratio, seed=seed,
                    verdict=_verdict(ratio >= 1.5)))

    # stochastic kinetic ladder
    psi = TestFunction.from_callable(p["cells"], lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x))
    phi = claw_mod.bump_test_function(psi, -0.9, 1.9)
    report = claw_mod.kinetic_stability_experiment(
        {n: _claw_problem(p, n) for n in p["n_ladder"]}, _claw_problem(p, None),
        CouplingSchedule(), transport_mod.TorusGrid(p["cells"]), p["horizon"],
        replicas, seed, phi, refine=p["refine"], workers=workers)
    for e in report.entries:
        rows.append(Row("claw", "ito_weak_gap", e.ito_gap, n=e.n,
                        stderr=e.ito_gap_stderr, samples=replicas, seed=seed))
        rows.append(Row("claw", "chi_weak_star_gap", e.chi_gap, n=e.n,
                        stderr=e.chi_gap_stderr, samples=replicas, seed=seed))
        rows.append(Row("claw", "measure_pairing_gap", e.measure_pairing_gap, n=e.n,
                        samples=replicas, seed=seed))
        rows.append(Row("claw", "measure_total_mass", e.total_mass, n=e.n,
                        samples=replicas, seed=seed))
    rows.append(Row("claw", "hypothesis_monitors", float(report.monitors_ok),
                    seed=seed, verdict=_verdict(report.monitors_ok)))
    rows.append(Row("claw", "mass_uniformly_bounded", float(bool(report.mass_ok)),
                    seed=seed, verdict=_verdict(bool(report.mass_ok))))
    gaps = [e.ito_gap for e in report.entries]
    rows.append(Row("claw", "ito_gap_ratio", gaps[-1] / max(gaps[0], 1e-300),
                    samples=replicas, seed=seed,
                    verdict=_verdict(gaps[-1] <= gaps[0] / 3.0)))
    return rows


RUNNERS = {
    "isometry": _run_isometry,
    "mollifier": _run_mollifier,
    "translate": _run_translate,
    "counterexample": _run_counterexample,
    "theorem21": _run_theorem21,
    "l1mode": _run_l1mode,
    "corollary42": _run_corollary42,
    "transport": _run_transport,
    "claw": _run_claw,
}


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------

def _write_csv(path: Path, rows: list[Row]):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_record())
    path.write_text(buf.getvalue())


def run(config_path: str, subcommand: str, out_dir: str,
        workers: int | None = None, seed_override: int | None = None) -> int:
    """Execute one subcommand (or all); returns the process exit status."""
    if subcommand not in EXPERIMENTS + ["all"]:
        raise ConfigurationError(
            f"unknown subcommand {subcommand!r}; accepted: {EXPERIMENTS + ['all']}")
    plan = parse_config(Path(config_path).read_text())
    workers = workers if workers and workers > 0 else (os.cpu_count() or 1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if subcommand == "all":
        chosen = plan.get("run", {}).get("experiments")
        if chosen is None:
            chosen = [name for name in EXPERIMENTS if name in plan]
        for name in chosen:
            if name not in EXPERIMENTS:
                raise ConfigurationError(
                    f"unknown experiment {name!r} in [run]; accepted: {EXPERIMENTS}")
            if name not in plan:
                raise ConfigurationError(f"experiment {name!r} requested but section missing")
        targets = chosen
    else:
        if subcommand not in plan:
            raise ConfigurationError(f"config has no [{subcommand}] section")
        targets = [subcommand]

    failures: list[str] = []
    all_rows: list[Row] = []
    for name in targets:
        params = dict(plan[name])
        if seed_override is not None:
            params["seed"] = seed_override
        rows = RUNNERS[name](params, workers)
        _write_csv(out / f"{name}.csv", rows)
        all_rows.extend(rows)
        failures.extend(f"{name}:{r.statistic}" for r in rows if r.verdict == "fail")
    if subcommand == "all":
        _write_csv(out / "all.csv", all_rows)

    if failures:
        print(f"FAILED verdicts ({len(failures)}): " + ", ".join(failures))
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="stochlab",
        description="stochastic-integral convergence experiments")
    parser.add_argument("subcommand", choices=EXPERIMENTS + ["all"])
    parser.add_argument("--config", required=True, help="INI experiment config")
    parser.add_argument("--out", required=True, help="output directory for CSV reports")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker cap (default: available cores)")
    parser.add_argument("--seed-override", type=int, default=None,
                        help="override every section seed")
    args = parser.parse_args(argv)
    try:
        return run(args.config, args.subcommand, args.out, args.workers,
                   args.seed_override)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
