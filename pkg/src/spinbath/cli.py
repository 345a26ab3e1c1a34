"""``spinbath`` command line: run, compare and list scenarios."""
from __future__ import annotations

import argparse
import sys

from .errors import CapacityError, ConfigError, EngineIncompatibleError, GridError, NumericalError
from .scenarios import OUTPUTS, compare, list_scenarios, load_scenario, run, verify_manifest

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_ENGINE = 3
EXIT_NUMERIC = 4


def _outputs(text: str) -> tuple[str, ...]:
    items = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in items if p not in OUTPUTS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown outputs {bad}; choose from {','.join(OUTPUTS)}")
    return items


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinbath", description="Open spin-system scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario by name or .cfg path")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", type=_outputs, default=None, help="comma list of " + ",".join(OUTPUTS))
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--traj", type=int, default=None, help="Monte Carlo trajectory count")
    p_run.add_argument("--outdir", default=None, help="output directory (default: results/<scenario>)")

    p_cmp = sub.add_parser("compare", help="compare two CSV outputs column by column")
    p_cmp.add_argument("result")
    p_cmp.add_argument("oracle")
    p_cmp.add_argument("--tol", type=float, required=True)

    sub.add_parser("list", help="list built-in scenarios")

    p_ver = sub.add_parser("verify", help="check a run manifest against its output files")
    p_ver.add_argument("manifest")
    return parser


def _fail(code: int, exc: BaseException) -> int:
    print(f"spinbath: error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK

    try:
        if args.command == "run":
            cfg = load_scenario(args.scenario)
            outdir = args.outdir or f"results/{cfg.name}"
            manifest = run(cfg, outdir, outputs=args.out, seed=args.seed, n_traj=args.traj)
            for name in sorted(manifest.outputs):
                print(f"{outdir}/{name}")
            for key, value in sorted(manifest.summary.items()):
                print(f"{key} = {value}")
            return EXIT_OK
        if args.command == "compare":
            res = compare(args.result, args.oracle, args.tol)
            for col, dev in res.max_dev.items():
                print(f"{col}: max |diff| = {dev:.3e}")
            print("PASS" if res.passed else "FAIL", f"(tol {res.tol:g})")
            return EXIT_OK if res.passed else EXIT_FAIL
        if args.command == "list":
            rows = list_scenarios()
            width = max(len(r["name"]) for r in rows)
            for r in rows:
                flag = " [qualitative]" if r["qualitative"] else ""
                print(f"{r['name']:<{width}}  {r['engine']:<10}  {r['budget_s']:>5g}s  {r['description']}{flag}")
            return EXIT_OK
        if args.command == "verify":
            bad = verify_manifest(args.manifest)
            for name in bad:
                print(f"digest mismatch: {name}")
            print("OK" if not bad else "TAMPERED")
            return EXIT_OK if not bad else EXIT_FAIL
    except (EngineIncompatibleError, CapacityError) as exc:
        return _fail(EXIT_ENGINE, exc)
    except (NumericalError, GridError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (ConfigError, FileNotFoundError) as exc:
        return _fail(EXIT_CONFIG, exc)
    return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
