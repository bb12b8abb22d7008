"""Command-line entry point: ``acloak <subcommand> [--scene FILE | --preset NAME] ...``.

Exit codes: 0 success, 2 invalid scene or failed validation, 3 solver non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import scene as sc
from .validation import run_checks

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3

STAGES = {
    "materials": ("materials",),
    "layers": ("layers",),
    "mie": ("materials", "layers", "solve"),
    "fdfd": ("materials", "layers", "solve"),
    "run": ("materials", "layers", "solve"),
}


def _parser():
    p = argparse.ArgumentParser(prog="acloak", description="Transformation-acoustics cloak toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("materials", "sample the material profile of a scene"),
        ("layers", "design the isotropic layer stack of a scene"),
        ("mie", "layered-sphere scattering (radially symmetric scenes)"),
        ("fdfd", "finite-difference frequency-domain solve"),
        ("run", "run a scene with the solver it names"),
    ):
        s = sub.add_parser(name, help=helptext)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--scene", type=Path, help="scene file")
        src.add_argument("--preset", help="figure-keyed preset name (see 'presets')")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        s.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads")
        s.add_argument("--tol", type=float, default=None, help="FDFD relative residual tolerance")
    v = sub.add_parser("validate", help="run the invariant suite")
    v.add_argument("--out", type=Path, default=None, help="write results as JSON here")
    v.add_argument("--threads", type=int, default=None)
    pr = sub.add_parser("presets", help="list figure-keyed presets")
    pr.add_argument("--show", metavar="NAME", help="print the scene text of one preset")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args):
    if args.preset:
        return sc.load_preset(args.preset)
    try:
        text = args.scene.read_text()
    except OSError as err:
        raise sc.SceneError(f"cannot read scene file: {err}") from None
    return sc.parse_scene(text, name=args.scene.stem)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        if args.show:
            if args.show not in sc.PRESETS:
                print(f"unknown preset {args.show!r}", file=sys.stderr)
                return EXIT_INVALID
            print(sc.PRESETS[args.show][1].strip())
            return EXIT_OK
        for name, (desc, _) in sc.PRESETS.items():
            print(f"{name:20s} {desc}")
        return EXIT_OK

    with threadpool_limits(limits=args.threads):
        if args.command == "validate":
            results = run_checks()
            for name, ok, detail in results:
                print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "validation.json").write_text(json.dumps(
                    [{"check": n, "passed": bool(ok), "detail": d} for n, ok, d in results], indent=2))
            return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_INVALID
        try:
            scene = _load(args)
            if args.command in ("mie", "fdfd"):
                scene = replace(scene, solver=replace(scene.solver, kind=args.command))
                sc.validate_scene(scene)
            summary = sc.run(scene, args.out, tol=args.tol, stages=STAGES[args.command])
        except sc.SceneError as err:
            print(f"invalid scene: {err}", file=sys.stderr)
            return EXIT_INVALID
        except sc.SolverFailure as err:
            print(f"solver did not converge: {err}; partial output in {args.out}", file=sys.stderr)
            return EXIT_NONCONVERGED
    print(json.dumps({k: v for k, v in summary.items() if k != "files"}, indent=2,
                     default=sc._json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
