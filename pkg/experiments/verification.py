"""
Batería de verificación del laboratorio.

Cada comprobación mide un número, lo compara con su umbral y devuelve un
``CheckResult``. La batería escribe ``verify/report.csv`` y termina con
``VerificationFailed`` si alguna comprobación no pasa.
"""

import logging
import math
import tempfile
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np

from core.exceptions import LabError, VerificationFailed
from experiments.pipeline import (
    EXTRACTION_CSV,
    RunContext,
    run_extract,
    run_rays,
    run_solve,
    run_source,
    write_table,
)
from geometry.cutoff import build_cutoff
from geometry.domain import DomainConfig
from geometry.rays import (
    RayDescriptor,
    density_proxy,
    enumerate_rays,
    random_ray,
    read_manifest,
    write_manifest,
)
from measurement.diagnostics import density_index
from measurement.extraction import compute_S, read_extraction_csv
from measurement.oracle import lemma_diagnostics, lemma_trend, oracle_extract
from optics.frames import from_local
from optics.packets import (
    amplitude0,
    remainder_identity_defect,
    remainder_norm,
    solve_transport,
    transport_residual,
)
from solver.fdtd import energy_check, energy_drift, solve_forward, time_reversal_defect
from solver.grid import GridSpec
from solver.manufactured import compact_pulse, manufactured_errors
from solver.potential import Bump, PotentialSpec
from source.weights import build_weights
from tomography.recon import ReconGrid, build_system, ray_count_study, ray_row
from tomography.transform import (
    ARC_FACTOR,
    as_free_ray,
    chord_interval,
    ray_integral_adaptive,
    ray_integral_oracle,
)

logger = logging.getLogger(__name__)

REPORT = ("verify", "report.csv")
PDE_TREND = ("verify", "pde_trend.csv")
INVERSION_STUDY = ("verify", "inversion_study.csv")
SEED = 20240
TRANSPORT_TOL = 1e-10
IDENTITY_TOL = 1e-8
SOLVER_TOL = 1e-10
BOX_TOL = 1e-12
REVERSAL_TOL = 1e-8
NULL_FRACTION = 0.05
ORACLE_TOL = 0.10
PDE_TOL = 0.15
PDE_RAYS = 4
STUDY_TOL = 0.20
STUDY_COUNTS = (100, 200, 400)
STUDY_DENSITY = (24, 9)
STUDY_CELLS = (8, 10)
STUDY_LAMBDAS = (1e-4, 1e-3, 1e-2)
HELD_OUT_RAYS = 20
ORACLE_RTOL = 1e-8
ADJOINT_TOL = 1e-12
ROW_SUM_TOL = 1e-10
PURITY_TOL = 1e-12
ORDER_RANGE = (3.5, 4.5)
DECAY_FACTOR = 3.0
# con λ = log τ/δ pequeño el término de fase domina ya en τ = e³
DECAY_DELTA = 48.0
ORACLE_PAIRS = 50


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""

    def as_row(self):
        return {
            "check": self.name,
            "passed": self.passed,
            "value": "" if self.value is None else repr(float(self.value)),
            "threshold": "" if self.threshold is None else repr(float(self.threshold)),
            "detail": self.detail,
        }


def at_most(name, value, threshold, detail=""):
    return CheckResult(name, bool(value <= threshold), float(value), threshold, detail)


CHECKS: Dict[str, Callable] = {}


def check(name):
    def register(function):
        CHECKS[name] = function
        return function

    return register


def bump_on(ray, radii=(0.4, 0.3), amplitude=2.0):
    """Bulto centrado en el punto medio de la cuerda del rayo."""
    t, x = ray.point(0.5 * ray.chord_length)
    center = (float(t), *np.asarray(x, dtype=float).tolist())
    return PotentialSpec(bumps=(Bump(center=center, radii=radii, amplitude=amplitude),))


def wide_ray(n, delta=DECAY_DELTA):
    """Rayo horizontal con δ grande para comprobar escalas en τ."""
    axis = np.eye(n)[0]
    return RayDescriptor(
        index=1,
        t0=1.0,
        p_entry=-axis,
        p_exit=axis,
        xi=axis,
        s_hat=-0.5,
        anchor_x=-1.5 * axis,
        delta=delta,
    )


def solver_domain(T=0.8):
    return DomainConfig(n=2, r=0.5, r_tilde=0.7, T=T)


class Suite:
    """Objetos compartidos por las comprobaciones, construidos una sola vez."""

    def __init__(self, ctx):
        self.ctx = ctx
        self.config = ctx.config
        self.domain = ctx.config.domain
        self.rng = np.random.default_rng(SEED)

    @cached_property
    def family(self):
        settings = self.config["rays"]
        return enumerate_rays(
            self.domain,
            self.config.J,
            tuple(settings["seed_density"]),
            chord_samples=settings["chord_samples"],
            anchor_step=settings["anchor_step_fraction"],
            delta_min=settings["delta_min"],
        )

    @property
    def ray(self):
        return self.family[1]

    @cached_property
    def profile(self):
        return build_cutoff(self.domain.n)

    @cached_property
    def reference(self):
        """V de la configuración si corta el rayo 1; si no, un bulto sobre él."""
        V = self.config.potential
        if ray_integral_oracle(V, self.ray) != 0.0:
            return V
        return bump_on(self.ray)

    @cached_property
    def top(self):
        """Truncación en frecuencia con al menos cuatro sondas."""
        return max(self.config.L, 4)

    @cached_property
    def weights(self):
        settings = self.config["weights"]
        return build_weights(
            self.family,
            self.config.J,
            self.top,
            self.domain,
            c_mode=settings["c_mode"],
            kappa_mode=settings["kappa_mode"],
        )

    @cached_property
    def stack(self):
        return solve_transport(
            self.ray,
            math.e**3,
            2,
            self.reference,
            horizon=self.domain.T,
            cells=12,
            s_step=0.02,
        )

    @cached_property
    def solver_grid(self):
        return GridSpec.from_domain(solver_domain(), dx=0.03)

    def oracle(self, j, N, V):
        settings = self.config["extraction"]
        return oracle_extract(
            j,
            N,
            self.family,
            self.weights,
            V,
            self.domain,
            self.profile,
            settings["cells"],
            K=settings["K"],
            tube_cells=settings["tube_cells"],
        )

    def pde_chain(self, potential=None, N_list=None, J=None):
        """
        Etapas rays → source → solve → extract en modo ``pde`` sobre un
        directorio temporal. Devuelve las filas del CSV de extracción.
        """
        N_list = sorted(N_list or self.config.N_list)
        truncation = {"J": J or self.config.J, "L": N_list[-1], "N_list": N_list}
        changes = {
            "mode": "pde",
            "truncation": truncation,
            "extraction": dict(self.config["extraction"], diagnostics=False),
        }
        if potential is not None:
            changes["potential"] = potential
        config = self.config.with_overrides(**changes)
        with tempfile.TemporaryDirectory() as folder:
            ctx = RunContext(config, folder, workers=self.ctx.workers)
            for stage in (run_rays, run_source, run_solve, run_extract):
                stage(ctx)
            return read_extraction_csv(ctx.path(*EXTRACTION_CSV))


@check("transport")
def transport(suite):
    ray = suite.ray
    tau = math.exp(suite.config.L)
    half = ray.delta / (2.0 * math.log(tau))
    count = 200
    s = suite.rng.uniform(-0.5, 0.5, count)
    w = suite.rng.uniform(-half / 2.0, half / 2.0, count)
    y = suite.rng.uniform(-half, half, (count, ray.n - 1))
    t, x = from_local(ray, s, w, y)
    residual = np.abs(transport_residual(ray, tau, t, x)).max()
    scale = np.abs(amplitude0(ray, tau, ray.anchor_t, ray.anchor_x)).max()
    return at_most("transport", residual / scale, TRANSPORT_TOL)


@check("initial_hyperplane")
def initial_hyperplane(suite):
    stack = suite.stack
    zero = stack.grid.s_zero_index
    if zero is None:
        detail = "s = 0 fuera de la malla"
        return CheckResult("initial_hyperplane", False, detail=detail)
    value = max(float(np.abs(amp[zero]).max()) for amp in stack.amps[1:])
    return CheckResult("initial_hyperplane", value == 0.0, value, 0.0)


@check("remainder_identity")
def remainder_identity(suite):
    defect = remainder_identity_defect(suite.stack, suite.reference, suite.domain)
    return at_most("remainder_identity", defect, IDENTITY_TOL)


@check("remainder_decay")
def remainder_decay(suite):
    scaled = []
    for k in (3, 4, 5):
        tau = math.exp(k)
        stack = solve_transport(
            wide_ray(suite.domain.n),
            tau,
            2,
            s_range=(-0.5, 0.5),
            s_step=0.02,
            cells=24,
        )
        scaled.append(remainder_norm(stack) * tau / k**6)
    detail = " ".join(f"{value:.3e}" for value in scaled)
    return at_most("remainder_decay", max(scaled) / min(scaled), DECAY_FACTOR, detail)


@check("solver_order")
def solver_order(suite):
    V = PotentialSpec(
        bumps=(Bump(center=(0.3, 0.0, 0.0), radii=(0.3, 0.4), amplitude=1.0),)
    )
    _, ratio = manufactured_errors(V, solver_domain(T=0.6))
    low, high = ORDER_RANGE
    return CheckResult(
        "solver_order", low <= ratio <= high, ratio, detail=f"[{low}, {high}]"
    )


@check("causal_cone")
def causal_cone(suite):
    grid, domain = suite.solver_grid, solver_domain()
    center = np.array([0.6, 0.0])
    result = solve_forward(None, compact_pulse(center), grid, domain, keep_full=True)
    values = result.full.values
    peak = np.abs(values).max()
    distance = np.linalg.norm(grid.coordinates - center, axis=-1) - 0.25
    leak = 0.0
    for m in range(values.shape[0]):
        elapsed = m * grid.dt - 0.05
        outside = distance > max(elapsed, 0.0) + 4 * grid.dx
        if outside.any():
            leak = max(leak, float(np.abs(values[m][outside]).max()))
    return at_most("causal_cone", leak / peak, SOLVER_TOL)


@check("linearity")
def linearity(suite):
    grid, domain = suite.solver_grid, solver_domain()
    first = compact_pulse((0.6, 0.0), phase=(9.0, 2.0))
    second = compact_pulse((-0.3, 0.55), t_center=0.3, phase=(-4.0, 7.0))
    V = PotentialSpec(
        bumps=(Bump(center=(0.4, 0.0, 0.1), radii=(0.3, 0.3), amplitude=3.0),)
    )

    def both(t, x):
        return first(t, x) + second(t, x)

    u1 = solve_forward(V, first, grid, domain).exterior.values
    u2 = solve_forward(V, second, grid, domain).exterior.values
    u12 = solve_forward(V, both, grid, domain).exterior.values
    defect = np.abs(u12 - u1 - u2).max() / np.abs(u12).max()
    return at_most("linearity", defect, SOLVER_TOL)


@check("enlarged_box")
def enlarged_box(suite):
    grid, domain = suite.solver_grid, solver_domain()
    pulse = compact_pulse((0.6, 0.0))
    extra = 10
    base = solve_forward(None, pulse, grid, domain, keep_full=True)
    large = solve_forward(None, pulse, grid.enlarged(extra), domain, keep_full=True)
    inside = grid.radius < domain.r_tilde
    core = large.full.values[:, extra:-extra, extra:-extra]
    difference = np.abs(core[:, inside] - base.full.values[:, inside]).max()
    return at_most(
        "enlarged_box", difference / np.abs(base.full.values).max(), BOX_TOL
    )


@check("time_reversal")
def time_reversal(suite):
    V = PotentialSpec(
        bumps=(Bump(center=(0.4, 0.0, 0.1), radii=(0.3, 0.3), amplitude=3.0),)
    )
    defect = time_reversal_defect(
        V, compact_pulse((0.6, 0.0)), suite.solver_grid, solver_domain()
    )
    return at_most("time_reversal", defect, REVERSAL_TOL)


@check("energy")
def energy(suite):
    domain = solver_domain(T=0.5)
    grid = GridSpec.from_domain(domain, dx=0.05)
    pulse = compact_pulse((0.6, 0.0))
    reports = [
        energy_check(solve_forward(None, pulse, item, domain))
        for item in (grid, grid.refined())
    ]
    constants = [report.constant for report in reports]
    return CheckResult(
        "energy",
        not energy_drift(reports),
        max(constants) / min(constants),
        2.0,
    )


@check("null_extraction")
def null_extraction(suite):
    """Cadena rays → source → solve → extract con V ≡ 0 en N = top."""
    scale = abs(ray_integral_oracle(suite.reference, suite.ray))
    rows = suite.pde_chain(potential=[], N_list=[suite.top])
    worst = max(abs(row["estimate"]) for row in rows) / scale
    return at_most("null_extraction", worst, NULL_FRACTION, f"escala {scale:.4e}")


@check("oracle_extraction")
def oracle_extraction(suite):
    V = suite.reference
    expected = ray_integral_oracle(V, suite.ray)
    errors = []
    for N in (suite.top - 1, suite.top):
        estimate = suite.oracle(1, N, V).estimate
        errors.append(abs(estimate - expected) / abs(expected))
    detail = " ".join(f"{value:.3e}" for value in errors)
    passed = errors[-1] <= ORACLE_TOL and errors[-1] < errors[0]
    return CheckResult("oracle_extraction", passed, errors[-1], ORACLE_TOL, detail)


@check("pde_extraction")
def pde_extraction(suite):
    """
    Cadena EDP con ``PDE_RAYS`` rayos frente al oráculo. La tendencia en N
    queda en ``verify/pde_trend.csv``.
    """
    V = suite.reference
    scale = abs(ray_integral_oracle(V, suite.ray))
    N_list = [suite.top - 2, suite.top - 1, suite.top]
    potential = [bump.as_dict() for bump in V.bumps]
    rows = suite.pde_chain(potential, N_list=N_list, J=PDE_RAYS)
    table = []
    for row in rows:
        expected = row["oracle_value"] or 0.0
        error = abs(row["estimate"] - expected) / max(abs(expected), scale)
        table.append({**row, "error": error})
    path = write_table(suite.ctx.path(*PDE_TREND), table, suite.ctx.hash)
    suite.ctx.record(path)
    worst = max(row["error"] for row in table if row["N"] == suite.top)
    return at_most("pde_extraction", worst, PDE_TOL, f"escala {scale:.4e}")


@check("lemma_trend")
def lemma_trend_check(suite):
    cells = suite.config["extraction"]["cells"]
    reports = [
        lemma_diagnostics(
            1,
            N,
            suite.family,
            suite.weights,
            suite.reference,
            suite.domain,
            suite.profile,
            cells,
        )
        for N in (suite.top - 1, suite.top)
    ]
    failed = [item for item in lemma_trend(reports) if not item.passed]
    detail = " ".join(f"{item.part}:{item.ratio:.3g}" for item in failed)
    return CheckResult("lemma_trend", not failed, float(len(failed)), 0.0, detail)


@check("two_oracles")
def two_oracles(suite):
    worst = 0.0
    for _ in range(ORACLE_PAIRS):
        ray = suite.family[int(suite.rng.integers(1, len(suite.family) + 1))]
        s = suite.rng.uniform(0.2, 0.8) * ray.chord_length
        t, x = ray.point(s)
        offset = suite.rng.uniform(-0.05, 0.05, size=ray.n)
        center = (float(t), *(np.asarray(x) + offset).tolist())
        radii = tuple(suite.rng.uniform(0.3, 0.45, size=2))
        amplitude = float(suite.rng.uniform(0.5, 3.0))
        V = PotentialSpec(
            bumps=(Bump(center=center, radii=radii, amplitude=amplitude),)
        )
        first = ray_integral_oracle(V, ray)
        second = ray_integral_adaptive(V, ray)
        gap = abs(first - second) / max(abs(second), 1e-12)
        worst = max(worst, gap)
    return at_most("two_oracles", worst, ORACLE_RTOL)


@check("adjoint")
def adjoint(suite):
    grid = ReconGrid.build(suite.domain, 4, 4)
    rays = [as_free_ray(ray) for ray in suite.family.rays]
    matrix = build_system(rays, grid).matrix
    c = suite.rng.standard_normal(matrix.shape[1])
    y = suite.rng.standard_normal(matrix.shape[0])
    forward = float(np.dot(matrix @ c, y))
    backward = float(np.dot(c, matrix.T @ y))
    scale = float(np.linalg.norm(matrix @ c) * np.linalg.norm(y)) or 1.0
    return at_most("adjoint", abs(forward - backward) / scale, ADJOINT_TOL)


@check("row_sums")
def row_sums(suite):
    grid = ReconGrid.build(suite.domain, 4, 4)
    worst = 0.0
    for ray in suite.family.rays:
        interval = chord_interval(suite.domain, ray)
        if interval is None:
            continue
        length = ARC_FACTOR * (interval[1] - interval[0])
        for item in (grid, grid.refined()):
            _, weights = ray_row(as_free_ray(ray), item)
            worst = max(worst, abs(weights.sum() - length) / length)
    return at_most("row_sums", worst, ROW_SUM_TOL)


def study_potential(domain):
    """Bulto ancho y suave centrado en (T/2, 0), resoluble en la malla 𝒟."""
    center = (0.5 * domain.T,) + (0.0,) * domain.n
    radii = (0.35 * domain.T, 0.8 * domain.r)
    return PotentialSpec(bumps=(Bump(center=center, radii=radii, amplitude=1.0),))


@check("inversion_study")
def inversion_study(suite):
    """Error en 𝒟 con 100, 200 y 400 rayos oráculo y λ ajustado."""
    settings = suite.config.get("inversion") or {}
    grid = ReconGrid.build(
        suite.domain,
        settings.get("time_cells", STUDY_CELLS[0]),
        settings.get("space_cells", STUDY_CELLS[1]),
    )
    seeds = settings.get("seed_density", STUDY_DENSITY)
    density = tuple(max(a, b) for a, b in zip(seeds, STUDY_DENSITY))
    caps = {key: settings[key] for key in ("maxiter", "tol") if key in settings}
    points = ray_count_study(
        study_potential(suite.domain),
        suite.domain,
        grid,
        STUDY_COUNTS,
        density,
        settings.get("lambdas", STUDY_LAMBDAS),
        workers=suite.ctx.workers,
        **caps,
    )
    rows = [
        {"rays": point.count, "lambda": point.best.lam, "error": point.masked_error}
        for point in points
    ]
    path = write_table(suite.ctx.path(*INVERSION_STUDY), rows, suite.ctx.hash)
    suite.ctx.record(path)
    errors = [point.masked_error for point in points]
    monotone = all(b <= a for a, b in zip(errors, errors[1:]))
    detail = " ".join(f"{row['rays']}:{row['error']:.3e}" for row in rows)
    return CheckResult(
        "inversion_study",
        monotone and errors[-1] <= STUDY_TOL,
        errors[-1],
        STUDY_TOL,
        detail,
    )


@check("manifest_purity")
def manifest_purity(suite):
    N = suite.config.N_list[-1]
    cells = suite.config["extraction"]["cells"]
    weights = suite.weights
    direct = compute_S(1, N, suite.family, weights, None, suite.domain, None, cells)
    with tempfile.TemporaryDirectory() as folder:
        path = write_manifest(suite.family, Path(folder) / "manifest.csv")
        family, _ = read_manifest(path)
    reread = compute_S(1, N, family, weights, None, suite.domain, None, cells)
    gap = abs(direct - reread) / max(abs(direct), 1e-300)
    return at_most("manifest_purity", gap, PURITY_TOL)


@check("density")
def density(suite):
    """
    Distancia de cobertura de rayos aleatorios a la familia admisible completa
    al refinar las semillas (P, T) → (2P, 2T + 1).
    """
    settings = suite.config["rays"]
    boundary, times = settings["seed_density"]
    held_out = [
        random_ray(suite.domain, suite.rng, settings["chord_samples"])
        for _ in range(HELD_OUT_RAYS)
    ]
    covering = []
    for seeds in ((boundary, times), (2 * boundary, 2 * times + 1)):
        family = enumerate_rays(
            suite.domain,
            None,
            seeds,
            chord_samples=settings["chord_samples"],
            anchor_step=settings["anchor_step_fraction"],
            delta_min=settings["delta_min"],
        )
        covering.append(max(density_proxy(family, ray) for ray in held_out))
    J = suite.config.J
    indices = [
        density_index(suite.family, j, N, J)
        for j in range(1, J + 1)
        for N in suite.config.N_list
    ]
    defined = sum(index is not None for index in indices)
    detail = (
        f"{covering[0]:.4e} → {covering[1]:.4e}; h_j definido en "
        f"{defined}/{len(indices)}"
    )
    return at_most("density", covering[1], covering[0], detail)


def run_suite(ctx, only=None, report=None):
    """
    Ejecuta las comprobaciones ``only`` (todas por defecto) y escribe el
    informe. ``report`` recibe cada ``CheckResult`` al terminar.

    Raises:
        VerificationFailed: si alguna comprobación falla.
    """
    names = list(only) if only else list(CHECKS)
    unknown = [name for name in names if name not in CHECKS]
    if unknown:
        raise ValueError(f"Comprobaciones desconocidas: {', '.join(unknown)}")
    suite = Suite(ctx)
    results = []
    for name in names:
        try:
            result = CHECKS[name](suite)
        except LabError as exc:
            logger.warning("La comprobación %s lanzó %s", name, exc)
            result = CheckResult(name, False, detail=str(exc))
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, "%s: %s (%s)", name, result.passed, result.value)
        results.append(result)
        if report is not None:
            report(result)
    path = write_table(
        ctx.path(*REPORT), [result.as_row() for result in results], ctx.hash
    )
    ctx.record(path)
    failed = [result.name for result in results if not result.passed]
    if failed:
        raise VerificationFailed(failed=",".join(failed))
    return {result.name: result.value for result in results}
