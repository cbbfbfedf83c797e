"""Data ingestion, result serialization and path-diagram (DOT) export.

JSON is the canonical result format; CSV mirrors only tabular slices.
Floats serialize through Python's shortest round-trip representation, so
every real value survives a write/read cycle bit for bit.  All file writes
go through write-temp-then-rename and are atomic on POSIX.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MissingVariable,
    NonNumericCell,
    ParseError,
    RaggedRows,
    UnknownVariable,
)
from .estimation import DataMatrix, Membership, ScfaFit
from .inference import InferenceReport, ParameterInference, edge_labels
from .simulation import SimulationReport

SCHEMA_VERSION = 1

_DELIMITERS = {"csv": ",", "tsv": "\t"}


def _atomic_write_text(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".scfa-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_of_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_data(path, format: str = "csv", header: bool = False) -> DataMatrix:
    """Read a rectangular numeric table into a DataMatrix.

    Column names come from the header row when ``header=True`` and are
    synthesized as v1..vp otherwise.  Errors carry 1-based line and column
    positions.
    """
    if format not in _DELIMITERS:
        raise ValueError(f"format must be one of {sorted(_DELIMITERS)}, got {format!r}")
    delimiter = _DELIMITERS[format]
    rows = []
    columns = None
    with open(path, newline="") as handle:
        reader = csv.reader(handle, delimiter=delimiter)
        for lineno, cells in enumerate(reader, start=1):
            if not cells or (len(cells) == 1 and cells[0].strip() == ""):
                continue
            if header and columns is None:
                columns = tuple(c.strip() for c in cells)
                continue
            width = len(columns) if columns is not None else (len(rows[0]) if rows else len(cells))
            if len(cells) != width:
                raise RaggedRows(
                    f"line {lineno}: expected {width} cells, found {len(cells)}",
                    line=lineno,
                )
            parsed = []
            for colno, cell in enumerate(cells, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise NonNumericCell(
                        f"line {lineno}, column {colno}: {cell!r} is not a number",
                        line=lineno,
                        column=colno,
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=float)
    if columns is None:
        columns = tuple(f"v{j + 1}" for j in range(values.shape[1]))
    return DataMatrix(values=values, columns=columns)


def load_membership(path) -> Membership:
    """Read one ``variable_name,community_label`` record per line.

    Labels are compacted to 1..K in first-appearance order.  Community sizes
    of 2 or fewer are rejected: the file feeds estimation, which needs them.
    """
    names = []
    labels = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        for lineno, cells in enumerate(reader, start=1):
            if not cells or (len(cells) == 1 and cells[0].strip() == ""):
                continue
            if len(cells) != 2:
                raise ParseError(
                    f"line {lineno}: expected 'variable,community', found "
                    f"{len(cells)} cells",
                    line=lineno,
                )
            name, label = cells[0].strip(), cells[1].strip()
            if name in names:
                raise ParseError(f"line {lineno}: duplicate variable {name!r}", line=lineno)
            names.append(name)
            labels.append(label)
    if not names:
        raise ParseError(f"{path}: no membership records")
    membership = Membership(labels, names=names)
    membership.require_factor_sizes()
    return membership


def align_membership(membership: Membership, columns) -> Membership:
    """Reorder a named membership to match the data's column order."""
    if membership.names is None:
        raise UnknownVariable("membership carries no variable names to align by")
    columns = tuple(str(c) for c in columns)
    by_name = dict(zip(membership.names, membership.labels))
    extra = [n for n in membership.names if n not in columns]
    if extra:
        raise UnknownVariable(
            f"membership names variables absent from the data: {extra[:5]}"
        )
    missing = [c for c in columns if c not in by_name]
    if missing:
        raise MissingVariable(
            f"data variables lack a community assignment: {missing[:5]}"
        )
    return Membership([by_name[c] for c in columns], names=columns)


# ----------------------------------------------------------------------
# fit document


@dataclass(frozen=True)
class FitDocument:
    """Everything a fit run produced, in the original variable order."""

    variables: tuple        # (name, community_label) pairs, input order
    sizes: tuple
    a_hat: list
    b_hat: list
    tau: list
    log_likelihood: float
    n: int
    alpha: float
    inference: tuple        # ParameterInference records
    diagnostics: tuple = ()
    provenance: dict = field(default_factory=dict)
    timing_seconds: float | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "provenance": self.provenance,
            "variables": [{"name": n, "community": int(c)} for n, c in self.variables],
            "sizes": list(self.sizes),
            "a_hat": list(self.a_hat),
            "b_hat": [list(row) for row in self.b_hat],
            "tau": list(self.tau),
            "log_likelihood": self.log_likelihood,
            "n": self.n,
            "alpha": self.alpha,
            "inference": [
                {
                    "name": r.name,
                    "kind": r.kind,
                    "k": r.k + 1,
                    "kp": r.kp + 1,
                    "estimate": r.estimate,
                    "exact_variance": r.exact_variance,
                    "standard_error": r.standard_error,
                    "ci_low": r.ci_low,
                    "ci_high": r.ci_high,
                    "z": r.z,
                    "p_value": r.p_value,
                    "significant": r.significant,
                }
                for r in self.inference
            ],
            "diagnostics": list(self.diagnostics),
            "timing_seconds": self.timing_seconds,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FitDocument":
        inference = tuple(
            ParameterInference(
                name=r["name"],
                kind=r["kind"],
                k=r["k"] - 1,
                kp=r["kp"] - 1,
                estimate=r["estimate"],
                exact_variance=r["exact_variance"],
                standard_error=r["standard_error"],
                ci_low=r["ci_low"],
                ci_high=r["ci_high"],
                z=r["z"],
                p_value=r["p_value"],
                significant=r["significant"],
            )
            for r in payload["inference"]
        )
        return cls(
            variables=tuple((v["name"], v["community"]) for v in payload["variables"]),
            sizes=tuple(payload["sizes"]),
            a_hat=payload["a_hat"],
            b_hat=payload["b_hat"],
            tau=payload["tau"],
            log_likelihood=payload["log_likelihood"],
            n=payload["n"],
            alpha=payload["alpha"],
            inference=inference,
            diagnostics=tuple(payload.get("diagnostics", ())),
            provenance=payload.get("provenance", {}),
            timing_seconds=payload.get("timing_seconds"),
            schema_version=payload.get("schema_version", SCHEMA_VERSION),
        )

    def save(self, path):
        _atomic_write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FitDocument":
        with open(path) as handle:
            return cls.from_dict(json.load(handle))


def write_scores_csv(scores: np.ndarray, path):
    """n rows, K columns, header f1..fK."""
    scores = np.asarray(scores, dtype=float)
    lines = [",".join(f"f{k + 1}" for k in range(scores.shape[1]))]
    for row in scores:
        lines.append(",".join(repr(float(v)) for v in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# simulation report serialization


def report_to_dict(report: SimulationReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "replicates": report.replicates,
        "failures": report.failures,
        "alpha": report.alpha,
        "master_seed": report.master_seed,
        "seed_scheme": report.seed_scheme,
        "noise_draw": report.noise_draw,
        "runtime_seconds": report.runtime_seconds,
        "metadata": report.metadata,
        "parameters": [
            {
                "name": r.name,
                "truth": r.truth,
                "bias": r.bias,
                "mcsd": r.mcsd,
                "ase": r.ase,
                "coverage": r.coverage,
            }
            for r in report.parameters
        ],
        "mean_loss": report.mean_loss,
        "sd_loss": report.sd_loss,
        "mean_relative_loss": report.mean_relative_loss,
        "losses": [float(v) for v in report.losses],
        "relative_losses": [float(v) for v in report.relative_losses],
    }


def save_report_json(report: SimulationReport, path):
    _atomic_write_text(path, json.dumps(report_to_dict(report), indent=2) + "\n")


def report_csv_text(report: SimulationReport) -> str:
    """Flat per-parameter table; metric columns are x100 as the header says."""
    out = ["parameter,truth,bias_x100,mcsd_x100,ase_x100,cp_x100"]
    for r in report.parameters:
        out.append(
            f"{r.name},{repr(r.truth)},{repr(100.0 * r.bias)},"
            f"{repr(100.0 * r.mcsd)},{repr(100.0 * r.ase)},{repr(100.0 * r.coverage)}"
        )
    return "\n".join(out) + "\n"


def save_report_csv(report: SimulationReport, path):
    _atomic_write_text(path, report_csv_text(report))


# ----------------------------------------------------------------------
# DOT export


def _dot_quote(text: str) -> str:
    return '"' + str(text).replace('"', '\\"') + '"'


def export_dot(fit: ScfaFit, report: InferenceReport, membership: Membership) -> str:
    """Path diagram: box per community, ellipse per factor, loading edges,
    and double-arrow factor-factor edges styled by sign and significance
    (solid red positive, solid blue negative, dashed gray otherwise).
    """
    K = fit.K
    sizes = fit.partition.sizes
    lines = [
        "digraph factor_model {",
        "  rankdir=LR;",
        "  node [fontsize=10];",
    ]
    for k in range(K):
        lines.append(
            f"  {_dot_quote(f'community_{k + 1}')} [shape=box, "
            f"label={_dot_quote(f'community {k + 1} ({sizes[k]} vars)')}];"
        )
    for k in range(K):
        lines.append(
            f"  {_dot_quote(f'factor_{k + 1}')} [shape=ellipse, "
            f"label={_dot_quote(f'f{k + 1}')}];"
        )
    for k in range(K):
        lines.append(
            f"  {_dot_quote(f'factor_{k + 1}')} -> {_dot_quote(f'community_{k + 1}')} "
            f"[label={_dot_quote(f'{fit.tau[k]:g}')}];"
        )
    for edge in edge_labels(report):
        if edge.significant:
            color, style = ("red", "solid") if edge.sign == "positive" else ("blue", "solid")
        else:
            color, style = "gray", "dashed"
        lines.append(
            f"  {_dot_quote(f'factor_{edge.k + 1}')} -> "
            f"{_dot_quote(f'factor_{edge.kp + 1}')} "
            f"[dir=both, color={color}, style={style}, "
            f"label={_dot_quote(f'{edge.estimate:.3g}')}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_dot(fit: ScfaFit, report: InferenceReport, membership: Membership, path):
    _atomic_write_text(path, export_dot(fit, report, membership))
