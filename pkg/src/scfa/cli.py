"""Command-line entry point: fit, simulate, reproduce, ubmat.

Exit codes: 0 success, 1 usage error, 2 input error, 3 numerical failure.
Every failure prints exactly one machine-parsable line on stderr of the
form ``scfa-error code=<N> kind=<ExceptionName>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import fileio
from .errors import InputError, NumericalError, ScfaError
from .estimation import estimate
from .inference import wald_report
from .scores import score_covariance, score_ols
from .simulation import GeneratorSpec, NoiseSpec, run_study
from .ubmatrix import PartitionVector, UniformBlockMatrix

USAGE_EXIT = 1
INPUT_EXIT = 2
NUMERICAL_EXIT = 3

# Documented default seed for `reproduce`; the emitted tables are a pure
# function of this value.
DEFAULT_REPRODUCE_SEED = 7

# Simulation truth used by every `reproduce` table.
STUDY_A = (0.1, 0.2, 0.5)
STUDY_B = (
    (2.02, 0.73, 1.15),
    (0.73, 3.13, 1.63),
    (1.15, 1.63, 3.69),
)
STUDY_BASE_SIZES = (3, 3, 4)
# (n, base-partition multiplier) grid shared by the loss and coverage tables.
STUDY_CELLS = (
    (40, 2), (40, 3), (40, 4),
    (80, 4), (80, 8), (80, 12),
    (120, 4), (120, 12), (120, 20),
)
MISSPEC_SIZES = (60, 60, 80)
MISSPEC_KAPPAS = (0.01, 0.03, 0.05)
STUDY_REPLICATES = 100


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="scfa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="estimate the factor model from data")
    p_fit.add_argument("--data", required=True, help="numeric CSV/TSV table")
    p_fit.add_argument("--membership", required=True,
                       help="CSV of variable_name,community_label")
    p_fit.add_argument("--format", choices=("csv", "tsv"), default=None,
                       help="data format (default: by file extension)")
    p_fit.add_argument("--header", action="store_true",
                       help="first data row is a header of variable names")
    p_fit.add_argument("--center", action="store_true",
                       help="remove column means (divisor n-1)")
    p_fit.add_argument("--alpha", type=float, default=0.05)
    p_fit.add_argument("--out", required=True, help="fit document JSON")
    p_fit.add_argument("--dot", default=None, help="optional path diagram DOT file")
    p_fit.add_argument("--scores", default=None, help="optional factor score CSV")

    p_sim = sub.add_parser("simulate", help="run a Monte-Carlo study")
    p_sim.add_argument("--config", required=True,
                       help="JSON with n, sizes, a, b and optional tau/kappa")
    p_sim.add_argument("--reps", type=int, required=True)
    p_sim.add_argument("--seed", type=int, default=None,
                       help="master seed (default: config's seed, else 0)")
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument("--out", required=True, help="report JSON")
    p_sim.add_argument("--csv", default=None, help="optional per-parameter CSV")

    p_rep = sub.add_parser("reproduce", help="re-run the reference study tables")
    p_rep.add_argument("table", choices=("table1", "table2", "table3"))
    p_rep.add_argument("--seed", type=int, default=DEFAULT_REPRODUCE_SEED)
    p_rep.add_argument("--out", required=True, help="output directory")

    p_ub = sub.add_parser("ubmat", help="uniform-block matrix utilities")
    p_ub.add_argument("operation", choices=("det", "inv", "eig", "check"))
    p_ub.add_argument("--in", dest="infile", required=True,
                      help="JSON with sizes, a, b")
    p_ub.add_argument("--out", default=None, help="output JSON (inv); default stdout")
    return parser


# ----------------------------------------------------------------------
# subcommands


def _cmd_fit(args) -> int:
    fmt = args.format
    if fmt is None:
        fmt = "tsv" if os.fspath(args.data).lower().endswith(".tsv") else "csv"
    t0 = time.perf_counter()
    data = fileio.load_data(args.data, format=fmt, header=args.header)
    membership = fileio.load_membership(args.membership)
    membership = fileio.align_membership(membership, data.columns)
    fit = estimate(data, membership, center=args.center)
    report = wald_report(fit, data.n, alpha=args.alpha)
    scores = score_ols(data, membership)
    elapsed = time.perf_counter() - t0
    document = fileio.FitDocument(
        variables=tuple(zip(data.columns, (int(v) for v in membership.labels))),
        sizes=tuple(membership.partition.sizes),
        a_hat=fit.a_hat.tolist(),
        b_hat=fit.b_hat.tolist(),
        tau=fit.tau.tolist(),
        log_likelihood=fit.log_likelihood,
        n=data.n,
        alpha=args.alpha,
        inference=report.parameters,
        diagnostics=fit.diagnostics.notes + report.diagnostics,
        provenance={
            "data_path": os.fspath(args.data),
            "data_sha256": fileio.sha256_of_file(args.data),
            "membership_path": os.fspath(args.membership),
            "membership_sha256": fileio.sha256_of_file(args.membership),
            "center": bool(args.center),
            "format": fmt,
        },
        timing_seconds=elapsed,
    )
    document.save(args.out)
    if args.scores:
        fileio.write_scores_csv(scores.scores, args.scores)
    if args.dot:
        fileio.save_dot(fit, report, membership, args.dot)
    cov = score_covariance(fit.a_hat, fit.b_hat, fit.partition)
    print(
        f"fit: n={data.n} p={data.p} K={membership.K} "
        f"log_likelihood={fit.log_likelihood!r} score_var_trace={float(np.trace(cov))!r}"
    )
    return 0


def _generator_spec_from_config(config: dict, seed: int) -> GeneratorSpec:
    noise = None
    if config.get("kappa") is not None:
        noise = NoiseSpec(kappa=float(config["kappa"]))
    return GeneratorSpec(
        n=int(config["n"]),
        partition=PartitionVector(config["sizes"]),
        a=config["a"],
        b=config["b"],
        tau=config.get("tau"),
        seed=seed,
        noise=noise,
    )


def _cmd_simulate(args) -> int:
    with open(args.config) as handle:
        config = json.load(handle)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    spec = _generator_spec_from_config(config, seed)
    report = run_study(spec, replicates=args.reps, alpha=args.alpha)
    fileio.save_report_json(report, args.out)
    if args.csv:
        fileio.save_report_csv(report, args.csv)
    print(
        f"simulate: reps={report.replicates} failures={report.failures} "
        f"mean_loss={report.mean_loss!r}"
    )
    return 0


def _cell_seed(master_seed: int, table: int, cell: int) -> int:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(table, cell))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _study_spec(n: int, multiplier: int, seed: int, kappa=None) -> GeneratorSpec:
    sizes = tuple(s * multiplier for s in STUDY_BASE_SIZES)
    noise = NoiseSpec(kappa=kappa) if kappa is not None else None
    return GeneratorSpec(
        n=n, partition=PartitionVector(sizes), a=STUDY_A, b=STUDY_B,
        seed=seed, noise=noise,
    )


def _cmd_reproduce(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    table = args.table
    if table == "table1":
        lines = ["n,p,mean_loss,sd_loss,seconds"]
        for i, (n, mult) in enumerate(STUDY_CELLS):
            spec = _study_spec(n, mult, _cell_seed(args.seed, 1, i))
            report = run_study(spec, replicates=STUDY_REPLICATES)
            lines.append(
                f"{n},{spec.p},{repr(report.mean_loss)},{repr(report.sd_loss)},"
                f"{report.runtime_seconds:.2f}"
            )
        path = os.path.join(args.out, "table1.csv")
        fileio._atomic_write_text(path, "\n".join(lines) + "\n")
    elif table == "table2":
        lines = ["n,p,parameter,bias_x100,mcsd_x100,ase_x100,cp_x100"]
        for i, (n, mult) in enumerate(STUDY_CELLS):
            spec = _study_spec(n, mult, _cell_seed(args.seed, 2, i))
            report = run_study(spec, replicates=STUDY_REPLICATES)
            for r in report.parameters:
                lines.append(
                    f"{n},{spec.p},{r.name},{repr(100.0 * r.bias)},"
                    f"{repr(100.0 * r.mcsd)},{repr(100.0 * r.ase)},"
                    f"{repr(100.0 * r.coverage)}"
                )
        path = os.path.join(args.out, "table2.csv")
        fileio._atomic_write_text(path, "\n".join(lines) + "\n")
    else:
        lines = ["kappa,noise_scale,parameter,bias_x100,mcsd_x100,ase_x100,cp_x100"]
        for i, kappa in enumerate(MISSPEC_KAPPAS):
            spec = GeneratorSpec(
                n=120, partition=PartitionVector(MISSPEC_SIZES), a=STUDY_A,
                b=STUDY_B, seed=_cell_seed(args.seed, 3, i),
                noise=NoiseSpec(kappa=kappa),
            )
            report = run_study(spec, replicates=STUDY_REPLICATES)
            scale = spec.noise.noise_scale(spec.p)
            for r in report.parameters:
                lines.append(
                    f"{repr(kappa)},{repr(scale)},{r.name},{repr(100.0 * r.bias)},"
                    f"{repr(100.0 * r.mcsd)},{repr(100.0 * r.ase)},"
                    f"{repr(100.0 * r.coverage)}"
                )
            lines.append(
                f"{repr(kappa)},{repr(scale)},relative_loss,"
                f"{repr(100.0 * report.mean_relative_loss)},,,"
            )
        path = os.path.join(args.out, "table3.csv")
        fileio._atomic_write_text(path, "\n".join(lines) + "\n")
    print(f"reproduce: wrote {path}")
    return 0


def _cmd_ubmat(args) -> int:
    with open(args.infile) as handle:
        payload = json.load(handle)
    matrix = UniformBlockMatrix.from_json_dict(payload)
    if args.operation == "det":
        sign, logabs = matrix.log_determinant()
        print(json.dumps({"sign": sign, "log_determinant": logabs}))
    elif args.operation == "eig":
        print(json.dumps({"eigenvalues": matrix.eigenvalues().tolist()}))
    elif args.operation == "inv":
        inverse = matrix.inverse()
        text = json.dumps(inverse.to_json_dict(), indent=2) + "\n"
        if args.out:
            fileio._atomic_write_text(args.out, text)
            print(f"ubmat: wrote {args.out}")
        else:
            sys.stdout.write(text)
    else:
        print(
            json.dumps(
                {
                    "sizes": list(matrix.partition.sizes),
                    "p": matrix.p,
                    "K": matrix.K,
                    "symmetric_b": matrix.b_is_symmetric,
                    "positive_definite": matrix.is_positive_definite(),
                }
            )
        )
    return 0


_DISPATCH = {
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "reproduce": _cmd_reproduce,
    "ubmat": _cmd_ubmat,
}


def _fail(code: int, exc: BaseException) -> int:
    kind = type(exc).__name__
    sys.stderr.write(f"scfa-error code={code} kind={kind}: {exc}\n")
    return code


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _fail(USAGE_EXIT, exc)
    try:
        return _DISPATCH[args.command](args)
    except _UsageError as exc:
        return _fail(USAGE_EXIT, exc)
    except NumericalError as exc:
        return _fail(NUMERICAL_EXIT, exc)
    except InputError as exc:
        return _fail(INPUT_EXIT, exc)
    except ScfaError as exc:
        return _fail(NUMERICAL_EXIT, exc)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        return _fail(INPUT_EXIT, exc)


if __name__ == "__main__":
    sys.exit(main())
