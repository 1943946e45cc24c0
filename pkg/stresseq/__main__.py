"""CLI entry point: python -m stresseq <command>."""

from __future__ import annotations

import argparse
import logging
import sys

from stresseq.config import RunConfig
from stresseq.models import (
    ArtifactError,
    ArtifactKind,
    AuditError,
    ErrorCode,
    ExitCode,
    LocalSolveError,
    MeshError,
    ProjectionError,
    SolverError,
)

log = logging.getLogger("stresseq")


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)-8s %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def _material(config: RunConfig):
    from stresseq.hyperelastic import MaterialParams
    return MaterialParams(mu=config.mu, lam=config.lam)


def cmd_solve(config: RunConfig, args: argparse.Namespace) -> None:
    from stresseq.hyperelastic import solve_newton
    from stresseq.mesh import build_cook_mesh
    from stresseq.store import ArtifactStore

    store = ArtifactStore(config.out_dir)
    params = _material(config)
    for level in config.levels:
        mesh = build_cook_mesh(level, config.base_mesh)
        log.info("[level %d] solving on %r, gamma=%g", level, mesh, config.gamma)
        fld = solve_newton(
            mesh,
            params,
            config.gamma,
            config.load_schedule(),
            tol=config.newton_tol,
            max_iter=config.max_newton_iter,
            max_bisections=config.max_bisections,
            max_damping=config.max_damping,
            quad_degree=config.quad_degree_nonlinear,
        )
        store.write_checkpoint(fld, level)
        if fld.history is not None:
            store.write_newton_history(fld.history, level, mesh.mesh_hash())
        store.write_meshes(fld, level)


def cmd_equilibrate(config: RunConfig, args: argparse.Namespace) -> None:
    from stresseq.diagnostics import momentum_and_symmetry_audit
    from stresseq.equilibration import Equilibrator
    from stresseq.mesh import build_cook_mesh, build_patches
    from stresseq.report import AUDIT_HEADER, audit_rows
    from stresseq.store import ArtifactStore, write_csv

    store = ArtifactStore(config.out_dir)
    mode = config.projection_mode
    failures = []
    for level in config.levels:
        mesh = build_cook_mesh(level, config.base_mesh)
        fld = store.read_checkpoint(level, config.gamma, mesh)
        equilibrator = Equilibrator(
            fld,
            build_patches(mesh),
            mode=mode,
            variant=config.test_spaces,
            quad_degree=config.quad_degree_nonlinear,
            poly_degree=config.quad_degree_poly,
            rank_tol=config.rank_tol,
            strict=config.strict,
        )
        reconstruction = equilibrator.run()
        store.write_stress(reconstruction.stress, level, config.gamma, mode.value)

        audit = momentum_and_symmetry_audit(
            reconstruction.stress,
            reconstruction.projection,
            fld,
            config.test_spaces,
            config.quad_degree_nonlinear,
        )
        path = store.path_for(level, config.gamma, f"_{mode.value}_audit.csv")
        write_csv(path, AUDIT_HEADER, audit_rows(audit, config.audit_tol))
        store.record(level, config.gamma, ArtifactKind.AUDIT, path, mesh.mesh_hash(), mode.value)

        violations = audit.violations(config.audit_tol)
        for v in violations:
            log.warning("[level %d] audit: %s", level, v)
        failures.extend(f"level {level}: {v}" for v in violations)

    if failures and config.strict:
        raise AuditError(ErrorCode.AUDIT_FAILED, "; ".join(failures), {"violations": failures})


def cmd_verify(config: RunConfig, args: argparse.Namespace) -> None:
    from stresseq.mesh import build_cook_mesh, build_patches
    from stresseq.report import VERIFY_HEADER, format_verify_summary, verify_rows
    from stresseq.store import ArtifactStore, artifact_stem
    from stresseq.verification import verify_patches

    store = ArtifactStore(config.out_dir)
    for level in config.levels:
        mesh = build_cook_mesh(level, config.base_mesh)
        fld = store.read_checkpoint(level, config.gamma, mesh)
        rows = verify_patches(
            fld, build_patches(mesh), quad_degree=config.quad_degree_nonlinear, rank_tol=config.rank_tol
        )
        path = store.write_table(f"verify_{artifact_stem(level, config.gamma)}.csv", VERIFY_HEADER, verify_rows(rows))
        store.record(level, config.gamma, ArtifactKind.VERIFY, path, mesh.mesh_hash())
        print(f"# level {level}, gamma {config.gamma:g}")
        print(format_verify_summary(rows))


def _report_level(store, config: RunConfig, level: int, gamma: float):
    from stresseq.femspace import BrokenRTSpace
    from stresseq.mesh import build_cook_mesh, build_patches
    from stresseq.models import ProjectionMode
    from stresseq.projection import project_all
    from stresseq.report import PROFILE_HEADER, collect_level, level_profiles
    from stresseq.store import artifact_stem

    mode = config.projection_mode.value
    mesh = build_cook_mesh(level, config.base_mesh)
    rt_space = BrokenRTSpace(mesh, config.quad_degree_poly)
    fld = store.read_checkpoint(level, gamma, mesh)
    equilibrated = store.read_stress(level, gamma, mode, rt_space)
    naive = project_all(
        fld,
        build_patches(mesh),
        ProjectionMode.NAIVE,
        quad_degree=config.quad_degree_nonlinear,
        rank_tol=config.rank_tol,
    ).stress(rt_space)

    coarse = None
    if level > 0:
        try:
            coarse_mesh = build_cook_mesh(level - 1, config.base_mesh)
            coarse_fld = store.read_checkpoint(level - 1, gamma, coarse_mesh)
            coarse_stress = store.read_stress(level - 1, gamma, mode, BrokenRTSpace(coarse_mesh, config.quad_degree_poly))
            coarse = (coarse_fld, coarse_stress)
        except ArtifactError as exc:
            log.warning("[level %d] no level-difference errors: %s", level, exc)

    path = store.write_table(
        f"profile_{artifact_stem(level, gamma)}.csv",
        PROFILE_HEADER,
        level_profiles(fld, naive, equilibrated),
    )
    store.record(level, gamma, ArtifactKind.PROFILE, path, mesh.mesh_hash(), mode)
    return collect_level(fld, naive, equilibrated, level, coarse, config.dual_norm)


def cmd_report(config: RunConfig, args: argparse.Namespace) -> None:
    from stresseq.report import TABLE_FILES, attach_rates, format_summary, table_rows, write_report_file
    from stresseq.store import ArtifactStore

    store = ArtifactStore(config.out_dir)
    results = []
    for level in config.levels:
        # every load solved on this level is reported; the configured one must exist
        for gamma in sorted(set(store.solved_gammas(level)) | {config.gamma}):
            try:
                results.append(_report_level(store, config, level, gamma))
            except ArtifactError as exc:
                if gamma == config.gamma:
                    raise
                log.warning("[level %d] skipping gamma=%g: %s", level, gamma, exc)

    attach_rates(results)
    for name, rows in table_rows(results).items():
        store.write_table(name, TABLE_FILES[name], rows)
    summary = format_summary(results)
    write_report_file(summary + "\n", store.out_dir / "summary.txt")
    print(summary)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="key = value config file")
    common.add_argument("--gamma", type=str, default=None, help="Load magnitude on the right edge")
    common.add_argument("--levels", type=str, default=None, help="Comma-separated refinement levels, ascending")
    common.add_argument("--lambda", dest="lam", type=str, default=None, help="Lame parameter (number or inf)")
    common.add_argument("--mode", type=str, choices=["naive", "compatible"], default=None, help="Projection mode")
    common.add_argument(
        "--test-spaces", type=str, choices=["standard", "modified"], default=None, help="Local test spaces"
    )
    common.add_argument(
        "--base-mesh", type=str, choices=["diagonal", "crossed"], default=None, help="Coarsest triangulation"
    )
    common.add_argument(
        "--dual-norm",
        type=str,
        choices=["full", "neumann_zero"],
        default=None,
        help="Test space of the boundary norm for level differences",
    )
    common.add_argument("--out", type=str, default=None, help="Output directory")
    common.add_argument("--strict", action="store_true", default=None, help="Fail on incompatible data or audits")
    common.add_argument("--log-level", type=str, default=None, help="Logging level")

    parser = argparse.ArgumentParser(
        prog="stresseq", description="Neo-Hookean solves and weakly symmetric stress equilibration"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="Solve and write one checkpoint per level")
    sub.add_parser("equilibrate", parents=[common], help="Reconstruct and audit stresses from checkpoints")
    sub.add_parser("verify", parents=[common], help="Check patch null spaces and compatibility")
    sub.add_parser("report", parents=[common], help="Write benchmark tables and traction profiles")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then STRESSEQ_* env, then the config file, then flags."""
    config = RunConfig.from_env()
    if args.config:
        config = RunConfig.from_file(args.config, base=config)
    return config.with_overrides(
        gamma=args.gamma,
        levels=args.levels,
        base_mesh=args.base_mesh,
        lam=args.lam,
        projection_mode=args.mode,
        test_spaces=args.test_spaces,
        dual_norm=args.dual_norm,
        out_dir=args.out,
        strict=args.strict,
        log_level=args.log_level,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args)
    except (ValueError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return ExitCode.USAGE
    setup_logging(config.log_level)

    errors = config.validate()
    if errors:
        for e in errors:
            print(f"Error: {e}", file=sys.stderr)
        return ExitCode.USAGE

    handler = {
        "solve": cmd_solve,
        "equilibrate": cmd_equilibrate,
        "verify": cmd_verify,
        "report": cmd_report,
    }
    try:
        handler[args.command](config, args)
    except AuditError as exc:
        log.error("%s", exc)
        return ExitCode.AUDIT_FAILURE
    except (SolverError, MeshError, ProjectionError, LocalSolveError, ArtifactError) as exc:
        log.error("%s", exc)
        return ExitCode.SOLVER_FAILURE
    return ExitCode.OK


if __name__ == "__main__":
    sys.exit(main())
