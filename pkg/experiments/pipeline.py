"""
Etapas del laboratorio encadenadas por artefactos en disco.

Cada etapa lee solo lo que escribieron las anteriores dentro del mismo
directorio de salida y devuelve un resumen JSON con sus números
principales. Todos los artefactos llevan el hash de la configuración.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from rest_framework import serializers

from core import wavf
from core.exceptions import ArtifactError
from experiments import plotting
from geometry.cutoff import build_cutoff
from geometry.rays import enumerate_rays, read_manifest, write_manifest
from measurement.diagnostics import density_report
from measurement.extraction import (
    ExtractionTable,
    extract,
    extract_all,
    extract_ray_integrals,
    final_estimates,
    read_extraction_csv,
)
from measurement.oracle import lemma_diagnostics, lemma_trend, oracle_extract
from solver.fdtd import energy_check, solve_forward
from solver.grid import FieldSlab, GridSpec
from source.assembly import (
    MANIFEST_NAME,
    assemble_universal,
    grid_from_header,
    read_assembly,
    write_assembly,
)
from source.weights import WeightScheme, build_weights
from tomography.recon import (
    ReconGrid,
    build_system,
    masked_relative_error,
    select_lambda,
    write_reconstruction,
)
from tomography.transform import (
    RaySample,
    inversion_rays,
    oracle_samples,
    ray_integral_oracle,
    write_samples,
)

logger = logging.getLogger(__name__)

RAYS_MANIFEST = ("rays", "manifest.csv")
SOURCE_DIR = "source"
EXTERIOR = ("solve", "exterior.wavf")
EXTRACTION_CSV = ("extract", "extraction.csv")
LEMMA_CSV = ("extract", "lemma.csv")
DENSITY_CSV = ("extract", "density.csv")
SAMPLES_CSV = ("invert", "samples.csv")
RECONSTRUCTION = ("invert", "reconstruction.wavf")
LAMBDA_CSV = ("invert", "lambda_sweep.csv")


@dataclass
class RunContext:
    """Configuración, directorio de salida y artefactos escritos."""

    config: object
    out: Path
    workers: int = 1
    artifacts: List[Path] = field(default_factory=list)

    def __post_init__(self):
        self.out = Path(self.out)

    @property
    def hash(self):
        return self.config.hash

    @property
    def mode(self):
        return self.config["mode"]

    def path(self, *parts):
        path = self.out.joinpath(*parts)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def record(self, *paths):
        for path in paths:
            path = Path(path)
            self.artifacts.append(path)
            sidecar = wavf.sidecar_path(path)
            if path.suffix == ".wavf" and sidecar.exists():
                self.artifacts.append(sidecar)
        return paths[0] if len(paths) == 1 else paths

    def grid(self):
        settings = self.config["grid"]
        return GridSpec.from_domain(
            self.config.domain,
            tau=math.exp(self.config.L),
            points_per_wavelength=settings["points_per_wavelength"],
            cfl=settings["cfl"],
            dx=settings.get("dx"),
            order=settings["order"],
        )


def require(path, stage):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(
            f"Falta el artefacto de la etapa '{stage}'; ejecútela antes.",
            path=str(path),
        )
    return path


def check_hash(found, ctx, path):
    """Avisa si un artefacto fue escrito con otra configuración."""
    if found and found != ctx.hash:
        logger.warning(
            "%s pertenece a la configuración %s, no a %s",
            path,
            found[:12],
            ctx.hash[:12],
        )


def write_table(path, rows, config_hash=None):
    """CSV con una línea ``# config_hash`` y las columnas de la primera fila."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if config_hash:
            handle.write(f"# config_hash: {config_hash}\n")
        writer = csv.DictWriter(
            handle, list(rows[0]) if rows else [], lineterminator="\n"
        )
        writer.writeheader()
        writer.writerows(rows)
    return path


def load_family(ctx):
    path = require(ctx.out.joinpath(*RAYS_MANIFEST), "rays")
    family, header = read_manifest(path)
    check_hash(header.get("config_hash"), ctx, path)
    return family


def load_measurement(ctx):
    """
    Familia, pesos, fuente y u_ext a partir de los artefactos de ``source`` y
    ``solve``. La fuente se reconstruye desde el manifiesto.
    """
    manifest = require(ctx.out / SOURCE_DIR / MANIFEST_NAME, "source")
    exterior = require(ctx.out.joinpath(*EXTERIOR), "solve")
    family, header = read_manifest(manifest)
    check_hash(header.get("config_hash"), ctx, manifest)
    weights = WeightScheme.from_header(header)
    grid = grid_from_header(header)
    u_ext = FieldSlab.read(exterior)
    check_hash(u_ext.metadata.get("config_hash"), ctx, exterior)
    if u_ext.grid != grid:
        raise ArtifactError(
            "u_ext y el manifiesto de la fuente no comparten malla.",
            path=str(exterior),
        )
    J, L = int(header["J"]), int(header["L"])
    source = assemble_universal(
        family,
        J,
        L,
        grid,
        family.domain,
        weights=weights,
        points_per_wavelength=ctx.config["grid"]["points_per_wavelength"],
        cells=int(header.get("tube_cells", ctx.config["extraction"]["tube_cells"])),
        workers=ctx.workers,
        K=int(header["K"]),
    )
    return family, weights, source, u_ext


def config_weights(ctx, family, L=None):
    weights = ctx.config["weights"]
    return build_weights(
        family,
        ctx.config.J,
        L or ctx.config.L,
        family.domain,
        c_mode=weights["c_mode"],
        kappa_mode=weights["kappa_mode"],
    )


def run_rays(ctx):
    """Enumera la familia y escribe ``rays/manifest.csv``."""
    settings = ctx.config["rays"]
    family = enumerate_rays(
        ctx.config.domain,
        ctx.config.J,
        tuple(settings["seed_density"]),
        chord_samples=settings["chord_samples"],
        anchor_step=settings["anchor_step_fraction"],
        delta_min=settings["delta_min"],
    )
    path = write_manifest(family, ctx.path(*RAYS_MANIFEST), {"config_hash": ctx.hash})
    ctx.record(path)
    return {"rays": len(family), "delta": [ray.delta for ray in family.rays]}


def run_source(ctx):
    """Ensambla la fuente universal truncada y escribe su manifiesto."""
    family = load_family(ctx)
    weights = config_weights(ctx, family)
    extraction = ctx.config["extraction"]
    assembly = assemble_universal(
        family,
        ctx.config.J,
        ctx.config.L,
        ctx.grid(),
        ctx.config.domain,
        weights=weights,
        points_per_wavelength=ctx.config["grid"]["points_per_wavelength"],
        cells=extraction["tube_cells"],
        workers=ctx.workers,
        K=extraction["K"],
    )
    manifest, data = write_assembly(assembly, ctx.out / SOURCE_DIR, ctx.hash)
    ctx.record(manifest, data)
    return {
        "source_norm": assembly.l2_norm(),
        "grid": assembly.grid.as_dict(),
        "kappa": list(weights.kappa),
    }


def run_solve(ctx):
    """Resuelve el problema directo y guarda u en el anillo exterior."""
    domain = ctx.config.domain
    grid = ctx.grid().validate(domain)
    require(ctx.out / SOURCE_DIR / MANIFEST_NAME, "source")
    assembly = read_assembly(ctx.out / SOURCE_DIR)
    if assembly.grid != grid:
        raise ArtifactError(
            "La malla de la fuente no coincide con la configuración.",
            path=str(ctx.out / SOURCE_DIR),
        )
    result = solve_forward(ctx.config.potential, assembly, grid, domain)
    energy = energy_check(result)
    path = result.exterior.write(
        ctx.path(*EXTERIOR), {"config_hash": ctx.hash, "energy": energy.as_dict()}
    )
    ctx.record(path)
    plot = ctx.path("plots", "exterior.png")
    ctx.record(plotting.field_snapshot(result.exterior, plot))
    return {
        "energy": energy.as_dict(),
        "exterior_nodes": int(result.exterior.points.size),
    }


def write_diagnostics(ctx, family, weights, V, profile):
    """Descomposición por términos de c_N⁻¹I y el informe de densidad."""
    settings = ctx.config["extraction"]
    rows, failed = [], 0
    for j in range(1, ctx.config.J + 1):
        reports = [
            lemma_diagnostics(
                j, N, family, weights, V, family.domain, profile, settings["cells"]
            )
            for N in ctx.config.N_list
        ]
        failed += sum(not check.passed for check in lemma_trend(reports))
        for report in reports:
            values = report.as_dict()
            main = values.pop("main")
            k_limit = values.pop("k_limit")
            values.update(
                {
                    "main_re": main[0],
                    "main_im": main[1],
                    "k_limit_re": k_limit[0],
                    "k_limit_im": k_limit[1],
                }
            )
            rows.append(values)
    lemma = write_table(ctx.path(*LEMMA_CSV), rows, ctx.hash)
    density = write_table(
        ctx.path(*DENSITY_CSV),
        density_report(family, ctx.config.N_list, ctx.config.J),
        ctx.hash,
    )
    ctx.record(lemma, density)
    return failed


def run_extract(ctx):
    """
    Estimaciones de ∫_{γ_j} V para j ≤ J y cada N de la lista.

    En modo ``oracle`` u se sustituye por el paquete exacto; en modo ``pde``
    solo se usan el manifiesto de la fuente y u_ext.
    """
    V = ctx.config.potential
    settings = ctx.config["extraction"]
    cells = settings["cells"]
    if ctx.mode == "oracle":
        family = load_family(ctx)
        weights = config_weights(ctx, family)
    else:
        family, weights, source, u_ext = load_measurement(ctx)
    domain = family.domain
    profile = build_cutoff(domain.n)

    def run(j, N):
        if ctx.mode == "oracle":
            return oracle_extract(
                j,
                N,
                family,
                weights,
                V,
                domain,
                profile,
                cells,
                K=settings["K"],
                tube_cells=settings["tube_cells"],
            )
        return extract(j, N, source, u_ext, family, weights, domain, profile, cells)

    tasks = [(j, N) for j in range(1, ctx.config.J + 1) for N in ctx.config.N_list]
    results = extract_all(tasks, run, ctx.workers)
    for result in results:
        result.oracle_value = ray_integral_oracle(V, family[result.j])
    if len(ctx.config.N_list) > 1:
        table = extract_ray_integrals(results)
    else:
        table = ExtractionTable(results)
    ctx.record(table.write_csv(ctx.path(*EXTRACTION_CSV), ctx.hash))
    ctx.record(plotting.error_curve(table, ctx.path("plots", "extraction_error.png")))
    summary = {
        "mode": ctx.mode,
        "estimates": {str(j): value for j, value in table.estimates().items()},
        "rel_error": {str(j): table.final(j).rel_error for j in table.rays()},
    }
    if settings["diagnostics"]:
        summary["trend_failures"] = write_diagnostics(ctx, family, weights, V, profile)
    return summary


def extraction_samples(ctx):
    """Muestras ∫_{γ_j} V estimadas por la etapa ``extract``, si existe."""
    path = ctx.out.joinpath(*EXTRACTION_CSV)
    manifest = ctx.out.joinpath(*RAYS_MANIFEST)
    if not path.exists() or not manifest.exists():
        return []
    family = load_family(ctx)
    estimates = final_estimates(read_extraction_csv(path))
    return [
        RaySample(family[j], value, "extraction")
        for j, value in estimates.items()
        if j <= len(family) and math.isfinite(value)
    ]


def run_invert(ctx):
    """Inversión regularizada de las integrales de rayo sobre 𝒟."""
    settings = ctx.config.get("inversion")
    if settings is None:
        raise serializers.ValidationError(
            {"inversion": ["La etapa invert necesita el bloque de inversión."]}
        )
    domain = ctx.config.domain
    V = ctx.config.potential
    grid = ReconGrid.build(domain, settings["time_cells"], settings["space_cells"])
    density = tuple(settings["seed_density"])
    rays = inversion_rays(domain, settings["ray_count"], density)
    measured = extraction_samples(ctx)
    samples = measured + oracle_samples(V, rays)
    ctx.record(write_samples(samples, ctx.path(*SAMPLES_CSV), ctx.hash))
    system = build_system([sample.ray for sample in samples], grid, ctx.workers)
    by_truth = settings["selection"] == "truth"
    best, results = select_lambda(
        samples,
        grid,
        settings["lambdas"],
        truth=V if by_truth else None,
        noise=None if by_truth else settings["noise"],
        system=system,
        maxiter=settings["maxiter"],
        tol=settings["tol"],
    )
    for item in results:
        if item.masked_error is None:
            item.masked_error = masked_relative_error(grid, item.coeffs, V)
    ctx.record(write_reconstruction(best, ctx.path(*RECONSTRUCTION), ctx.hash))
    ctx.record(
        write_table(
            ctx.path(*LAMBDA_CSV), [item.summary() for item in results], ctx.hash
        )
    )
    return {
        **best.summary(),
        "samples": len(samples),
        "extraction_samples": len(measured),
        "empty_rows": len(system.empty_rows),
    }


def run_verify(ctx, only=None, report=None):
    from experiments.verification import run_suite

    return run_suite(ctx, only, report)


def run_demo(ctx):
    """Encadena las etapas de la configuración y devuelve sus resúmenes."""
    stages = ["rays"]
    if ctx.mode == "pde":
        stages += ["source", "solve"]
    stages.append("extract")
    if ctx.config.get("inversion") is not None:
        stages.append("invert")
    summaries = {}
    for name in stages:
        summaries[name] = run_stage(name, ctx)
    return summaries


STAGES = {
    "rays": run_rays,
    "source": run_source,
    "solve": run_solve,
    "extract": run_extract,
    "invert": run_invert,
    "verify": run_verify,
    "demo": run_demo,
}


def run_stage(name, ctx, **options):
    logger.info("Etapa %s (configuración %s)", name, ctx.hash[:12])
    summary = STAGES[name](ctx, **options)
    logger.info("Etapa %s terminada", name)
    return summary
