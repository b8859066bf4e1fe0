"""Ensemble experiments: rate tables, damping sweeps, spectra.

Every driver here walks a seeded ensemble of coefficient fields, reuses
one hierarchy per sample across all compared smoothers, and returns
per-sample rows; summary numbers are always reductions of those rows, so
persisted CSVs are sufficient to recompute any reported table entry.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cycles import CycleSpec, Hierarchy, solve
from .problem import (
    DiffusivityField,
    GridGeometry,
    StencilOperator,
    assemble,
    constant_field,
    field_rng,
    sample_lognormal_field,
    sample_seeds,
)
from .smoothers import SmootherSpec
from .spectral import (
    RateWindow,
    build_two_grid_propagator,
    gelfand_estimate,
    measured_rate,
    spectral_radius,
)
from .transfer import make_prolongation


class Stats(NamedTuple):
    mean: float
    gmean: float
    std: float


def stats(values) -> Stats:
    """Arithmetic mean, geometric mean and sample std of positive values."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to summarize")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("summary needs finite positive values")
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return Stats(float(v.mean()), float(np.exp(np.log(v).mean())), std)


def win_percentage(rates, reference_rates) -> float:
    """Share of samples, in percent, where rates beat the reference
    strictly."""
    a = np.asarray(rates, dtype=float)
    b = np.asarray(reference_rates, dtype=float)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("need two equal-length nonempty rate arrays")
    return 100.0 * float(np.mean(a < b))


@dataclass(frozen=True)
class EnsembleProtocol:
    """A seeded family of problems plus the cycle used to measure rates.

    aniso_fraction > 0 alternates samples between the base geometry and
    one with hy = aniso_hy (odd sample ids get the anisotropic cells when
    the fraction is one half), so subgroup and mixed statistics come from
    a single ensemble.
    """

    m: int = 64
    samples: int = 200
    seed: int = 0
    hx: float = 1.0
    hy: float = 1.0
    delta: float = 0.0
    mu: float = 0.0
    sigma: float = 1.0
    poisson: bool = False
    aniso_fraction: float = 0.0
    aniso_hy: float = 2.0
    kind: str = "v"
    nu1: int = 1
    nu2: int = 0
    prolongation: str = "bilinear"
    coarsest_m: int = 4
    cycles: int = 45
    window: RateWindow = field(default_factory=RateWindow)

    def cycle_spec(self, smoother: SmootherSpec) -> CycleSpec:
        return CycleSpec(self.kind, self.nu1, self.nu2, smoother,
                         self.prolongation, self.coarsest_m)

    def is_aniso(self, i: int) -> bool:
        if self.aniso_fraction <= 0:
            return False
        if self.aniso_fraction >= 1:
            return True
        return (i % 2 == 1) if self.aniso_fraction == 0.5 \
            else i >= self.samples * (1 - self.aniso_fraction)

    def sample_field(self, i: int, seed) -> DiffusivityField:
        hy = self.aniso_hy if self.is_aniso(i) else self.hy
        geo = GridGeometry(self.m, self.hx, hy)
        if self.poisson:
            return constant_field(geo)
        return sample_lognormal_field(geo, seed, self.mu, self.sigma)

    def iter_samples(self):
        """Yield (i, seed, operator) lazily; hierarchies are per caller."""
        seeds = sample_seeds(self.seed, self.samples)
        for i in range(self.samples):
            yield i, int(seeds[i]), assemble(self.sample_field(i, seeds[i]),
                                             self.delta)

    def initial_guess(self, seed) -> np.ndarray:
        return field_rng((int(seed), 17)).uniform(-1.0, 1.0, self.m * self.m)


@dataclass
class RateRow:
    sample_id: int
    seed: int
    label: str
    rate: float
    diverged: bool
    aniso: bool


def _measure(protocol: EnsembleProtocol, A: StencilOperator,
             hierarchy: Hierarchy, smoother: SmootherSpec,
             u0: np.ndarray) -> tuple:
    spec = protocol.cycle_spec(smoother)
    report = solve(A, np.zeros(A.n), u0, spec, max_cycles=protocol.cycles,
                   tol=0.0, hierarchy=hierarchy)
    if len(report.residual_norms) <= protocol.window.last:
        return float("inf"), True, report
    rate = measured_rate(report, protocol.window)
    return rate, report.diverged or rate >= 1.0, report


def run_rate_table(protocol: EnsembleProtocol, entries,
                   threads: int = 1, keep_reports: bool = False):
    """Measure every labeled smoother on every sample.

    entries is a list of (label, SmootherSpec). Returns (rows, reports)
    where rows is a flat list of RateRow and reports maps (label,
    sample_id) to SolveReport when kept.
    """
    entries = list(entries)
    reports: dict = {}

    def one_sample(args):
        i, seed, A = args
        hierarchy = Hierarchy(A, protocol.prolongation, protocol.coarsest_m,
                              two_grid=protocol.kind == "two_grid")
        u0 = protocol.initial_guess(seed)
        out = []
        for label, smoother in entries:
            rate, diverged, report = _measure(protocol, A, hierarchy,
                                              smoother, u0)
            out.append((RateRow(i, seed, label, rate, diverged,
                                protocol.is_aniso(i)), report))
        return out

    samples = list(protocol.iter_samples())
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_sample = list(pool.map(one_sample, samples))
    else:
        per_sample = [one_sample(s) for s in samples]

    rows = []
    for group in per_sample:
        for row, report in group:
            rows.append(row)
            if keep_reports:
                reports[(row.label, row.sample_id)] = report
    return rows, reports


def rates_by_label(rows) -> dict:
    out: dict = {}
    for row in rows:
        out.setdefault(row.label, []).append(row.rate)
    return {k: np.asarray(v) for k, v in out.items()}


def run_omega_sweep(protocol: EnsembleProtocol, omegas, kind: str = "jacobi",
                    threads: int = 1):
    """Rate ensemble for each damping value of a one-parameter smoother."""
    entries = [
        (f"{kind} {omega:.4f}", SmootherSpec(kind, (float(omega),)))
        for omega in omegas
    ]
    rows, _ = run_rate_table(protocol, entries, threads=threads)
    return rows


def sweep_summary(rows, omegas, kind: str = "jacobi",
                  subset: str = "all") -> list:
    """Per-omega mean rates over converged samples; inf when any sample in
    the subset diverged, matching how a single blown-up run poisons an
    averaged table entry."""
    out = []
    for omega in omegas:
        label = f"{kind} {omega:.4f}"
        sel = [
            r for r in rows
            if r.label == label and (
                subset == "all"
                or (subset == "aniso") == r.aniso
            )
        ]
        if not sel:
            raise ValueError(f"no rows for {label}")
        if any(r.diverged for r in sel):
            out.append((float(omega), float("inf"), True))
        else:
            out.append((float(omega), float(np.mean([r.rate for r in sel])),
                        False))
    return out


def best_sweep_point(summary) -> tuple:
    converged = [s for s in summary if not s[2]]
    if not converged:
        raise ValueError("every sweep point diverged")
    return min(converged, key=lambda s: s[1])


@dataclass
class SpectrumRow:
    sample_id: int
    seed: int
    label: str
    rho: float
    gelfand: dict
    rate_measured: float


def run_spectrum(protocol: EnsembleProtocol, entries, alphas=(10,),
                 threads: int = 1):
    """Per-sample spectral radius and Gelfand estimates of the two-grid
    propagator, plus the measured two-grid rate for cross-checking.

    The propagator is materialized densely, so this is meant for the
    small-m protocols; entries is a list of (label, SmootherSpec) and nu
    is taken from the protocol's (nu1, nu2).
    """
    entries = list(entries)

    def one_sample(args):
        i, seed, A = args
        P = make_prolongation(protocol.prolongation, A)
        hierarchy = Hierarchy(A, protocol.prolongation, protocol.coarsest_m,
                              two_grid=True)
        u0 = protocol.initial_guess(seed)
        out = []
        for label, smoother in entries:
            T = build_two_grid_propagator(A, P, smoother,
                                          (protocol.nu1, protocol.nu2))
            rho = spectral_radius(T, seed=(seed, 23))
            gf = {int(a): gelfand_estimate(T, a) for a in alphas}
            rate, _, _ = _measure(protocol, A, hierarchy, smoother, u0)
            out.append(SpectrumRow(i, seed, label, rho, gf, rate))
        return out

    samples = list(protocol.iter_samples())
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_sample = list(pool.map(one_sample, samples))
    else:
        per_sample = [one_sample(s) for s in samples]
    return [row for group in per_sample for row in group]


def write_rate_rows(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("sample_id,seed,label,rate,diverged,aniso\n")
        for r in rows:
            fh.write(f"{r.sample_id},{r.seed},{r.label},{r.rate!r},"
                     f"{int(r.diverged)},{int(r.aniso)}\n")


def read_rate_rows(path) -> list:
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            sid, seed, label, rate, div, aniso = line.rstrip("\n").split(",")
            rows.append(RateRow(int(sid), int(seed), label, float(rate),
                                bool(int(div)), bool(int(aniso))))
    return rows


def write_residual_history(reports: dict, path) -> None:
    """Persist per-cycle norms: sample_id, cycle, residual_norm, error_norm."""
    with open(path, "w") as fh:
        fh.write("sample_id,label,cycle,residual_norm,error_norm\n")
        for (label, sid), report in sorted(reports.items(),
                                           key=lambda kv: (kv[0][1], kv[0][0])):
            errs = report.error_norms
            for k, rnorm in enumerate(report.residual_norms):
                enorm = errs[k] if errs is not None else float("nan")
                fh.write(f"{sid},{label},{k},{rnorm!r},{enorm!r}\n")


def write_spectrum_rows(rows, path) -> None:
    payload = [
        {
            "sample_id": r.sample_id,
            "seed": r.seed,
            "label": r.label,
            "rho": r.rho,
            "gelfand": {str(a): v for a, v in r.gelfand.items()},
            "rate_measured": r.rate_measured,
        }
        for r in rows
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
