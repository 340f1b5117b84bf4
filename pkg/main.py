"""Command-line entry point: label, gram, train, eval, sweep, export, verify."""
import argparse
import json
import math
import sys
from typing import List, Optional

from models import KernelSpec
from pipeline import EXPORT_KINDS, QuenchClassificationPipeline
from validation import QuenchError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="quench-kernels",
        description="Label field quenches by rate-function singularities and classify them with quantum-kernel SVMs.",
    )
    p.add_argument("--workers", type=int, default=None, help="Parallel workers (default: $QUENCH_WORKERS or 1)")
    p.add_argument("--quiet", action="store_true", help="Suppress stage progress output")
    sub = p.add_subparsers(dest="cmd", required=True)

    label_p = sub.add_parser("label", help="Label the grid of a scenario config.")
    label_p.add_argument("--config", required=True, help="Scenario JSON file")
    label_p.add_argument("--out", required=True, help="Dataset CSV to write")

    gram_p = sub.add_parser("gram", help="Build or reuse a cached Gram matrix.")
    gram_p.add_argument("--dataset", required=True)
    gram_p.add_argument("--out", required=True, help="Gram cache file")
    gram_p.add_argument("--method", choices=["GSK", "DSK", "classical_rbf"], default="GSK")
    gram_p.add_argument("--map", choices=["qlin", "qrbf"], default=None, help="Default: qrbf for GSK, qlin for DSK")
    gram_p.add_argument("--gamma", type=float, default=None, help="qrbf width (default 1)")
    gram_p.add_argument("--gamma-c", type=float, default=None, help="classical_rbf width (default 1)")
    gram_p.add_argument("--force", action="store_true", help="Recompute even on a cache hit")

    train_p = sub.add_parser("train", help="Train an SVM on the training split.")
    train_p.add_argument("--dataset", required=True)
    train_p.add_argument("--gram", required=True)
    train_p.add_argument("--out", required=True, help="Model JSON to write")
    train_p.add_argument("--seed", type=int, default=None, help="Split seed (default: from the dataset config)")
    train_p.add_argument("--tune", action="store_true", help="Cross-validate C and the kernel width first")

    eval_p = sub.add_parser("eval", help="Evaluate a model on the held-out split.")
    eval_p.add_argument("--dataset", required=True)
    eval_p.add_argument("--gram", required=True)
    eval_p.add_argument("--model", required=True)
    eval_p.add_argument("--out", required=True, help="Metrics JSON to write")

    sweep_p = sub.add_parser("sweep", help="Accuracy table over qubit counts and methods.")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--out", required=True, help="Results CSV to write")
    sweep_p.add_argument("--n", type=int, nargs="*", default=None, help="Qubit counts (default: from config)")
    sweep_p.add_argument("--methods", nargs="+", choices=["GSK", "DSK", "classical_rbf"], default=["GSK", "DSK"])
    sweep_p.add_argument("--noise-rates", type=float, nargs="+", default=None, help="Repeat an open-mode run per rate")
    sweep_p.add_argument("--yes", action="store_true", help="Acknowledge long runs (N >= 7)")

    export_p = sub.add_parser("export", help="Write plot-ready CSVs.")
    export_p.add_argument("--kind", required=True, help=f"One of {', '.join(EXPORT_KINDS)}")
    export_p.add_argument("--out", required=True)
    export_p.add_argument("--dataset", default=None)
    export_p.add_argument("--config", default=None, help="Scenario config (traces)")
    export_p.add_argument("--theta", type=float, default=None, help="Azimuth in units of pi (traces)")
    export_p.add_argument("--phi", type=float, default=None, help="Polar angle in units of pi (traces)")
    export_p.add_argument("--h", type=float, default=None, help="Field magnitude in units of J (traces)")

    verify_p = sub.add_parser("verify", help="Run the invariant suite.")
    verify_p.add_argument("--out", default=None, help="JSON report to write")
    verify_p.add_argument("--slow", action="store_true", help="Include the slow sampling and label-stability checks")
    return p


def kernel_spec_from_args(args) -> KernelSpec:
    spec = KernelSpec.default_for(args.method)
    if args.method == "classical_rbf":
        return spec.with_width(args.gamma_c if args.gamma_c is not None else spec.gamma_c)
    kernel_map = args.map or spec.map
    gamma = None
    if kernel_map == "qrbf":
        gamma = args.gamma if args.gamma is not None else 1.0
    return KernelSpec(method=args.method, map=kernel_map, gamma=gamma)


def _in_pi(value: Optional[float]) -> Optional[float]:
    return None if value is None else value * math.pi


def run(args, argv: List[str]) -> int:
    pipeline = QuenchClassificationPipeline(workers=args.workers, enable_hooks=not args.quiet, argv=argv)
    if args.cmd == "label":
        pipeline.label(args.config, args.out)
    elif args.cmd == "gram":
        pipeline.gram(args.dataset, kernel_spec_from_args(args), args.out, force=args.force)
    elif args.cmd == "train":
        pipeline.train(args.dataset, args.gram, args.out, split_seed=args.seed, tune=args.tune)
    elif args.cmd == "eval":
        pipeline.evaluate(args.dataset, args.gram, args.model, args.out)
    elif args.cmd == "sweep":
        pipeline.sweep(
            args.config, args.out,
            n_list=args.n, methods=args.methods, noise_rates=args.noise_rates, yes=args.yes,
        )
    elif args.cmd == "export":
        pipeline.export(
            args.kind, args.out,
            dataset_path=args.dataset, config_path=args.config,
            theta=_in_pi(args.theta), phi=_in_pi(args.phi), h=args.h,
        )
    elif args.cmd == "verify":
        return 0 if pipeline.verify(args.out, include_slow=args.slow) else 2
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return run(args, argv)
    except QuenchError as e:
        error = {"error": type(e).__name__, "message": str(e), "exit_code": e.exit_code}
        print(json.dumps(error), file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        # pydantic rejections of CLI-supplied values
        print(json.dumps({"error": "ValidationError", "message": str(e), "exit_code": 1}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
