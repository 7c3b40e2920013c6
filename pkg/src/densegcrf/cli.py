"""Command-line interface: solve, grad-check, train, eval, bench.

Exit codes are a stable contract for CI: 0 success, 1 usage or I/O errors,
2 solver non-convergence, 3 a failed verification check, 4 training
divergence. Metrics leave the process as CSV; nothing plots in-process, but
bench can emit a ready-to-pipe gnuplot script.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .cg import CgConfig, CgNumericError
from .checks import run_grad_checks
from .config import ConfigError, RunConfig
from .layer import GcrfLayer
from .oracle import ExplicitSystem, OracleError, assemble_dense, direct_solve
from .synth import PgmFormatError, generate, split
from .tensors import Dims, MatrixFormatError, read_matrix, read_vector
from .train import (
    TrainingDivergedError,
    evaluate,
    load_model,
    save_model,
    train_two_phase,
    write_history,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_CONVERGENCE = 2
EXIT_CHECK_FAILED = 3
EXIT_DIVERGED = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; route through the exit-code contract instead
    def error(self, message):
        raise _UsageError(message)


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.defaults() if path is None else RunConfig.from_json(path)


def cmd_solve(args) -> int:
    embeddings = read_matrix(args.embeddings)
    unary = read_vector(args.unary)
    d, n = embeddings.shape
    if unary.shape[0] != n:
        raise ValueError(
            f"unary has {unary.shape[0]} entries but embeddings have {n} columns"
        )
    layer = GcrfLayer(
        embeddings=embeddings,
        lam=args.lam,
        dims=Dims(pixels=n, labels=1, embed_dim=d),
        cg=CgConfig(rel_tol=args.rel_tol),
    )
    try:
        x, report = layer.forward(unary)
    except CgNumericError as exc:
        print(f"error: solver breakdown: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print("x:", " ".join(repr(float(v)) for v in x))
    print(f"iterations: {report.iterations}")
    print(f"residual: {report.final_residual_norm:.6e}")
    print(f"converged: {str(report.converged).lower()}")
    if args.oracle:
        x_direct = direct_solve(
            ExplicitSystem(assemble_dense(embeddings, args.lam), unary)
        )
        scale = max(float(np.linalg.norm(x_direct)), 1e-300)
        rel = float(np.linalg.norm(x - x_direct)) / scale
        print(f"oracle_rel_discrepancy: {rel:.6e}")
    return EXIT_OK if report.converged else EXIT_NO_CONVERGENCE


def cmd_grad_check(args) -> int:
    config = _load_config(args.config)
    results = run_grad_checks(config, sabotage=args.sabotage)
    print("name,max_rel_err,tolerance,pass")
    for res in results:
        print(
            f"{res.name},{res.max_rel_err:.6e},{res.tolerance:.6e},"
            f"{str(res.passed).lower()}"
        )
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def cmd_train(args) -> int:
    config = RunConfig.from_json(args.config)
    print(config.echo())
    spec = config.task_spec()
    train_set, _ = split(spec, generate(spec))
    if not train_set:
        raise ConfigError("task.n_train is 0, nothing to train on")
    model_dir = config.model_dir()

    def on_phase_end(phase: int, model) -> None:
        save_model(model, model_dir / f"phase{phase}")

    model, history = train_two_phase(
        train_set,
        config.train_config(),
        config.dims(),
        config.cg_config(),
        phase_callback=on_phase_end,
    )
    save_model(model, model_dir)
    write_history(config.metrics_csv(), history, append=True)
    if history:
        last = history[-1]
        print(
            f"final: iter={last.iteration} phase={last.phase} "
            f"loss={last.loss:.6f} accuracy={last.accuracy:.4f}"
        )
    print(f"model written to {model_dir}")
    print(f"metrics appended to {config.metrics_csv()}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = RunConfig.from_json(args.config)
    model = load_model(args.model)
    spec = config.task_spec()
    _, test_set = split(spec, generate(spec))
    if not test_set:
        raise ConfigError("task.n_test is 0, nothing to evaluate on")
    lam = config.lam()
    cg = config.cg_config()
    unary_acc = evaluate(model, test_set, lam, cg, unary_only=True)
    dense_acc = evaluate(model, test_set, lam, cg)
    print("unary_acc,dense_acc,delta")
    print(f"{unary_acc},{dense_acc},{dense_acc - unary_acc}")
    return EXIT_OK


@dataclass(frozen=True)
class BenchRow:
    n: int
    d: int
    apply_ns: float
    solve_ms: float
    cg_iters: int


def bench_grid(ns, ds, repeats: int = 5, seed: int = 0) -> list[BenchRow]:
    """Median apply/solve timings over a deterministic instance grid.

    Problem instances depend only on (seed, N, D); timings are wall-clock
    with the apply loop pinned to one BLAS thread so results compare sizes,
    not thread counts.
    """
    rows = []
    for n in ns:
        for d in ds:
            rng = np.random.default_rng([seed, n, d])
            emb = rng.standard_normal((d, n)) / np.sqrt(n)
            b = rng.standard_normal(n)
            layer = GcrfLayer(
                embeddings=emb,
                lam=1.0,
                dims=Dims(pixels=n, labels=1, embed_dim=d),
                cg=CgConfig(rel_tol=1e-8),
            )
            op = layer.operator()
            op.apply(b)  # warm up caches and BLAS dispatch
            inner = max(1, (1 << 22) // (d * n))
            apply_times = []
            with threadpool_limits(limits=1):
                for _ in range(repeats):
                    start = time.perf_counter_ns()
                    for _ in range(inner):
                        op.apply(b)
                    apply_times.append((time.perf_counter_ns() - start) / inner)
            solve_times = []
            iters = 0
            for _ in range(repeats):
                start = time.perf_counter()
                _, report = layer.forward(b)
                solve_times.append((time.perf_counter() - start) * 1e3)
                iters = report.iterations
            rows.append(
                BenchRow(
                    n=n,
                    d=d,
                    apply_ns=statistics.median(apply_times),
                    solve_ms=statistics.median(solve_times),
                    cg_iters=iters,
                )
            )
    return rows


def _gnuplot_script(rows: list[BenchRow]) -> str:
    lines = ["$bench << EOD", "# N D apply_ns solve_ms cg_iters"]
    for r in rows:
        lines.append(f"{r.n} {r.d} {r.apply_ns:.1f} {r.solve_ms:.6f} {r.cg_iters}")
    lines.append("EOD")
    lines.append("set logscale xy 2")
    lines.append("set xlabel 'variables N'")
    lines.append("set ylabel 'median apply time (ns)'")
    lines.append("set key left top")
    clauses = [
        f"$bench using (column(2)=={d} ? column(1) : NaN):3 "
        f"with linespoints title 'D={d}'"
        for d in sorted({r.d for r in rows})
    ]
    lines.append("plot \\\n  " + ", \\\n  ".join(clauses))
    return "\n".join(lines)


def cmd_bench(args) -> int:
    ns = [int(tok) for tok in args.n.split(",") if tok]
    ds = [int(tok) for tok in args.d.split(",") if tok]
    if not ns or not ds or min(ns) < 1 or min(ds) < 1:
        raise ValueError("--n and --d need comma-separated positive integers")
    rows = bench_grid(ns, ds, repeats=args.repeats, seed=args.seed)
    if args.gnuplot:
        print(_gnuplot_script(rows))
        return EXIT_OK
    print("# threads: 1 (apply timings pinned via threadpoolctl)")
    print("N,D,apply_ns,solve_ms,cg_iters")
    for r in rows:
        print(f"{r.n},{r.d},{r.apply_ns:.1f},{r.solve_ms:.6f},{r.cg_iters}")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="densegcrf",
        description="Dense Gaussian CRF layer: solve, verify, train, benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one inference instance")
    p_solve.add_argument("--embeddings", required=True, help="D x N matrix file")
    p_solve.add_argument("--unary", required=True, help="length-N vector file")
    p_solve.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_solve.add_argument("--rel-tol", type=float, default=1e-10)
    p_solve.add_argument(
        "--oracle",
        action="store_true",
        help="also run the dense direct solve and print the discrepancy",
    )
    p_solve.set_defaults(func=cmd_solve)

    p_check = sub.add_parser("grad-check", help="run the verification suite")
    p_check.add_argument("--config", help="JSON config (defaults when omitted)")
    p_check.add_argument(
        "--sabotage",
        action="store_true",
        help=argparse.SUPPRESS,  # test hook: corrupt the gradient under test
    )
    p_check.set_defaults(func=cmd_grad_check)

    p_train = sub.add_parser("train", help="two-phase training on the synthetic task")
    p_train.add_argument("--config", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="unary-only vs full-model test accuracy")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--model", required=True, help="model checkpoint directory")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="time operator apply and forward solves")
    p_bench.add_argument("--n", required=True, help="comma-separated variable counts")
    p_bench.add_argument("--d", required=True, help="comma-separated embedding rows")
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument(
        "--gnuplot",
        action="store_true",
        help="emit a gnuplot script instead of CSV",
    )
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (
        ConfigError,
        MatrixFormatError,
        PgmFormatError,
        OracleError,
        OSError,
        MemoryError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
