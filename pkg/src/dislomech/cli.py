"""Command-line interface.

Subcommands: solve (full pipeline), plastic-only, elastic-only, profile,
export-vtk, write-config. Exit codes: 0 success, 2 validation error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    ConfigError,
    ConvergenceError,
    DislomechError,
    IndefinitenessError,
    InvalidArgumentError,
    PipelineError,
)
from .pipeline import (
    RunConfig,
    export_profile,
    export_vtk,
    load_elastic_state,
    parse_config,
    run_pipeline,
    write_default_config,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3


def _add_config_flags(p):
    p.add_argument("-c", "--config", help="INI config file (defaults apply if omitted)")
    p.add_argument("-o", "--out", default="run_output", help="output directory")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="SECTION.KEY=VALUE", help="override a config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dislomech",
        description="Plastic and elastic fields around dislocations (NURBS Galerkin).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("solve", "full plastic -> elastic pipeline"),
        ("plastic-only", "solve only the plastic structure equation"),
        ("elastic-only", "elastic solve from a saved plastic field"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        if name == "elastic-only":
            p.add_argument("--plastic-file", required=True,
                           help="plastic field dump from a previous run")

    p = sub.add_parser("profile", help="export a line profile from a finished run")
    p.add_argument("--state-dir", required=True, help="directory of a previous run")
    _add_config_flags(p)
    p.add_argument("--kind", choices=("stress", "theta"), default="stress")
    p.add_argument("--axis", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--fixed", nargs=2, type=float, default=(0.0, 0.0),
                   metavar=("C1", "C2"), help="fixed coords of the other two axes")
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--output", default=None, help="output CSV path")

    p = sub.add_parser("export-vtk", help="export a VTK grid from a finished run")
    p.add_argument("--state-dir", required=True)
    _add_config_flags(p)
    p.add_argument("--samples", nargs=3, type=int, default=None, metavar=("N1", "N2", "N3"))
    p.add_argument("--output", default=None, help="output VTK path")

    p = sub.add_parser("write-config", help="write a reference config file")
    p.add_argument("path")
    return parser


def _load_run(args):
    from pathlib import Path

    from .plastic import load_plastic_field

    state_dir = Path(args.state_dir)
    config = parse_config(args.config, args.overrides)
    plastic = load_plastic_field(state_dir / "plastic_field.bin")
    elastic_path = state_dir / "elastic_state.bin"
    elastic = load_elastic_state(elastic_path, plastic) if elastic_path.exists() else None
    return config, plastic, elastic


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "write-config":
            write_default_config(args.path)
            return EXIT_OK

        config = parse_config(args.config, args.overrides)

        if args.command in ("solve", "plastic-only", "elastic-only"):
            mode = args.command
            summary = run_pipeline(
                config, args.out, mode=mode,
                plastic_file=getattr(args, "plastic_file", None),
            )
            if "plastic" in summary:
                rep = summary["plastic"]
                print(
                    f"plastic: minres residual {rep['minres_residual']:.3e} "
                    f"({rep['minres_iterations']} iterations), "
                    f"structure residual {rep['structure_residual']:.6g}"
                )
            if "elastic" in summary:
                rep = summary["elastic"]
                print(
                    f"elastic: {rep['newton_iterations']} Newton iterations, "
                    f"relative residual {rep['relative_residual']:.3e}, "
                    f"energy {rep['energy']:.9g}"
                )
            print(f"artifacts in {args.out} (config {summary['config_hash']})")
            return EXIT_OK

        if args.command == "profile":
            config, plastic, elastic = _load_run(args)
            out = args.output or f"profile_{args.kind}_x{args.axis}.csv"
            export_profile(
                out, plastic.patch, plastic, elastic, config.preset,
                config.volterra_params(), kind=args.kind, axis=args.axis - 1,
                fixed=tuple(args.fixed), samples=args.samples,
            )
            print(f"wrote {out}")
            return EXIT_OK

        if args.command == "export-vtk":
            config, plastic, elastic = _load_run(args)
            out = args.output or "fields.vtk"
            samples = tuple(args.samples) if args.samples else config.vtk_samples
            export_vtk(out, plastic.patch, plastic, elastic, samples=samples)
            print(f"wrote {out}")
            return EXIT_OK

        parser.error(f"unhandled command {args.command}")
    except PipelineError as exc:
        cause = exc.cause
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, (ConvergenceError, IndefinitenessError)):
            return EXIT_NONCONVERGENCE
        return EXIT_VALIDATION
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, IndefinitenessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except DislomechError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
