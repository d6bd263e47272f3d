"""Dataset file formats and result persistence.

kinship.csv     dense N x N, comma separated, header row of subject IDs
                (the header fixes the subject order for the whole run)
phenotype.tsv   long format: subject_id, node_k, node_l, weight (1-based, k < l)
genotype.tsv    subject_id, snp_id, dosage
covariates.tsv  subject_id plus named numeric columns
truth.json / manifest.json / results.json   structured JSON, schema versioned

Parsers are strict: wrong field counts, non-numeric cells, duplicate or
missing edges, unknown subjects and trailing garbage all fail with the file
position. Writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .core import GenotypeVector, Kinship, NetworkPhenotype, edge_lookup, n_edges
from .projection import CovariateMatrix

__all__ = [
    "DataFormatError",
    "RESULTS_SCHEMA_VERSION",
    "LoadedDataset",
    "atomic_write_text",
    "file_sha256",
    "load_dataset",
    "read_covariates",
    "read_genotypes",
    "read_kinship",
    "read_phenotype",
    "read_json",
    "write_covariates",
    "write_genotypes",
    "write_json",
    "write_kinship",
    "write_phenotype",
]

RESULTS_SCHEMA_VERSION = 1


class DataFormatError(ValueError):
    """Parse or consistency failure with a file position attached."""

    def __init__(self, path, message, line=None, column=None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = self.path
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


def atomic_write_text(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _lines(path):
    with open(path, "r") as fh:
        text = fh.read()
    return text.split("\n")


def _split(path, lineno, line, sep, expected=None):
    fields = line.split(sep)
    if expected is not None and len(fields) != expected:
        col = min(len(fields), expected) + 1
        raise DataFormatError(path, f"expected {expected} fields, found {len(fields)}",
                              line=lineno, column=col)
    return fields


def _parse_float(path, lineno, column, token):
    try:
        return float(token)
    except ValueError:
        raise DataFormatError(path, f"not a number: {token!r}",
                              line=lineno, column=column) from None


def _parse_int(path, lineno, column, token):
    try:
        return int(token)
    except ValueError:
        raise DataFormatError(path, f"not an integer: {token!r}",
                              line=lineno, column=column) from None


def _check_no_trailing(path, lines, first_extra):
    for offset, line in enumerate(lines[first_extra:]):
        if line.strip():
            raise DataFormatError(path, f"trailing garbage: {line[:40]!r}",
                                  line=first_extra + offset + 1, column=1)


# -- kinship.csv -------------------------------------------------------------

def write_kinship(path, ids, matrix: np.ndarray):
    rows = [",".join(ids)]
    rows.extend(",".join(repr(float(v)) for v in row) for row in np.asarray(matrix))
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_kinship(path, clamp_tol: float = 1e-6):
    """Returns (subject_ids, Kinship); the header order is authoritative."""
    lines = _lines(path)
    if not lines or not lines[0].strip():
        raise DataFormatError(path, "missing header of subject ids", line=1, column=1)
    ids = [f.strip() for f in lines[0].split(",")]
    if any(not i for i in ids):
        raise DataFormatError(path, "empty subject id in header", line=1, column=1)
    if len(set(ids)) != len(ids):
        raise DataFormatError(path, "duplicate subject ids in header", line=1, column=1)
    n = len(ids)
    if len(lines) < n + 1:
        raise DataFormatError(path, f"expected {n} data rows, found {len(lines) - 1}",
                              line=len(lines), column=1)
    matrix = np.empty((n, n))
    for i in range(n):
        lineno = i + 2
        fields = _split(path, lineno, lines[i + 1], ",", expected=n)
        for j, token in enumerate(fields):
            matrix[i, j] = _parse_float(path, lineno, j + 1, token)
    _check_no_trailing(path, lines, n + 1)
    try:
        kin = Kinship.from_matrix(matrix, clamp_tol=clamp_tol)
    except ValueError as err:
        raise DataFormatError(path, str(err)) from err
    return ids, kin


# -- phenotype.tsv -----------------------------------------------------------

_PHENO_HEADER = ["subject_id", "node_k", "node_l", "weight"]


def write_phenotype(path, ids, phenotype: NetworkPhenotype):
    pairs_k, pairs_l = np.triu_indices(phenotype.n_nodes, k=1)
    chunks = ["\t".join(_PHENO_HEADER)]
    edges = phenotype.edges
    for s, sid in enumerate(ids):
        col = edges[:, s]
        chunks.extend(
            f"{sid}\t{pairs_k[e] + 1}\t{pairs_l[e] + 1}\t{col[e]!r}"
            for e in range(len(pairs_k))
        )
    atomic_write_text(path, "\n".join(chunks) + "\n")


def read_phenotype(path, ids) -> NetworkPhenotype:
    """Long-format network phenotype, reindexed to the kinship subject order.
    Every subject must carry every edge exactly once."""
    lines = _lines(path)
    if not lines or [f.strip() for f in lines[0].split("\t")] != _PHENO_HEADER:
        raise DataFormatError(path, f"expected header {' '.join(_PHENO_HEADER)}",
                              line=1, column=1)
    order = {sid: i for i, sid in enumerate(ids)}
    n = len(ids)

    subjects = []
    ks = []
    ls = []
    ws = []
    unknown = set()
    last = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            last = lineno
            break
        last = lineno + 1
        fields = _split(path, lineno, line, "\t", expected=4)
        sid = fields[0]
        idx = order.get(sid)
        if idx is None:
            unknown.add(sid)
            continue
        k = _parse_int(path, lineno, 2, fields[1])
        l = _parse_int(path, lineno, 3, fields[2])
        if not 1 <= k < l:
            raise DataFormatError(path, f"need 1 <= node_k < node_l, got ({k}, {l})",
                                  line=lineno, column=2)
        subjects.append(idx)
        ks.append(k)
        ls.append(l)
        ws.append(_parse_float(path, lineno, 4, fields[3]))
    _check_no_trailing(path, lines, last - 1)
    if unknown:
        raise DataFormatError(
            path, "subjects absent from kinship header: "
            + ", ".join(sorted(unknown)[:10]))
    if not ks:
        raise DataFormatError(path, "no data rows", line=2, column=1)

    v = max(ls)
    e_count = n_edges(v)
    lut = edge_lookup(v)
    edges = np.empty((e_count, n))
    seen = np.zeros((e_count, n), dtype=bool)
    for idx, k, l, w in zip(subjects, ks, ls, ws):
        e = lut[k - 1, l - 1]
        if seen[e, idx]:
            raise DataFormatError(path, f"duplicate edge ({k}, {l}) for subject "
                                  f"{ids[idx]!r}")
        seen[e, idx] = True
        edges[e, idx] = w
    if not seen.all():
        missing_subj = np.flatnonzero(~seen.all(axis=0))
        missing_edges = np.flatnonzero(~seen.all(axis=1))
        raise DataFormatError(
            path,
            f"incomplete network: {int((~seen).sum())} missing values "
            f"(first subjects: {[ids[i] for i in missing_subj[:5]]}, "
            f"first edge indices: {missing_edges[:5].tolist()}); "
            "the model requires complete networks")
    return NetworkPhenotype(edges=edges, n_nodes=v)


# -- genotype.tsv ------------------------------------------------------------

_GENO_HEADER = ["subject_id", "snp_id", "dosage"]


def write_genotypes(path, ids, genotypes):
    if isinstance(genotypes, GenotypeVector):
        genotypes = [genotypes]
    chunks = ["\t".join(_GENO_HEADER)]
    for g in genotypes:
        chunks.extend(f"{sid}\t{g.snp_id}\t{v!r}" for sid, v in zip(ids, g.values))
    atomic_write_text(path, "\n".join(chunks) + "\n")


def read_genotypes(path, ids) -> list[GenotypeVector]:
    """All variants in the file, each reindexed to the kinship order. Missing
    dosages are an error (no imputation)."""
    lines = _lines(path)
    if not lines or [f.strip() for f in lines[0].split("\t")] != _GENO_HEADER:
        raise DataFormatError(path, f"expected header {' '.join(_GENO_HEADER)}",
                              line=1, column=1)
    order = {sid: i for i, sid in enumerate(ids)}
    n = len(ids)
    values: dict[str, np.ndarray] = {}
    seen: dict[str, np.ndarray] = {}
    unknown = set()
    last = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            last = lineno
            break
        last = lineno + 1
        fields = _split(path, lineno, line, "\t", expected=3)
        sid, snp = fields[0], fields[1]
        idx = order.get(sid)
        if idx is None:
            unknown.add(sid)
            continue
        if snp not in values:
            values[snp] = np.empty(n)
            seen[snp] = np.zeros(n, dtype=bool)
        if seen[snp][idx]:
            raise DataFormatError(path, f"duplicate dosage for subject {sid!r}, "
                                  f"snp {snp!r}", line=lineno, column=1)
        seen[snp][idx] = True
        values[snp][idx] = _parse_float(path, lineno, 3, fields[2])
    _check_no_trailing(path, lines, last - 1)
    if unknown:
        raise DataFormatError(path, "subjects absent from kinship header: "
                              + ", ".join(sorted(unknown)[:10]))
    if not values:
        raise DataFormatError(path, "no data rows", line=2, column=1)
    out = []
    for snp, vals in values.items():
        mask = seen[snp]
        if not mask.all():
            missing = [ids[i] for i in np.flatnonzero(~mask)[:10]]
            raise DataFormatError(path, f"snp {snp!r} missing dosages for: "
                                  + ", ".join(missing))
        out.append(GenotypeVector(vals, snp_id=snp))
    return out


# -- covariates.tsv ----------------------------------------------------------

def write_covariates(path, ids, covariates: CovariateMatrix):
    chunks = ["\t".join(("subject_id",) + tuple(covariates.labels))]
    for i, sid in enumerate(ids):
        row = "\t".join(repr(float(v)) for v in covariates.X[i])
        chunks.append(f"{sid}\t{row}" if row else sid)
    atomic_write_text(path, "\n".join(chunks) + "\n")


def read_covariates(path, ids) -> CovariateMatrix:
    lines = _lines(path)
    if not lines or not lines[0].strip():
        raise DataFormatError(path, "missing header", line=1, column=1)
    header = lines[0].split("\t")
    if header[0].strip() != "subject_id":
        raise DataFormatError(path, "first column must be subject_id",
                              line=1, column=1)
    labels = tuple(h.strip() for h in header[1:])
    p = len(labels)
    order = {sid: i for i, sid in enumerate(ids)}
    n = len(ids)
    x = np.empty((n, p))
    seen = np.zeros(n, dtype=bool)
    unknown = set()
    last = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            last = lineno
            break
        last = lineno + 1
        fields = _split(path, lineno, line, "\t", expected=p + 1)
        idx = order.get(fields[0])
        if idx is None:
            unknown.add(fields[0])
            continue
        if seen[idx]:
            raise DataFormatError(path, f"duplicate row for subject {fields[0]!r}",
                                  line=lineno, column=1)
        seen[idx] = True
        for j in range(p):
            x[idx, j] = _parse_float(path, lineno, j + 2, fields[j + 1])
    _check_no_trailing(path, lines, last - 1)
    if unknown:
        raise DataFormatError(path, "subjects absent from kinship header: "
                              + ", ".join(sorted(unknown)[:10]))
    if not seen.all():
        missing = [ids[i] for i in np.flatnonzero(~seen)[:10]]
        raise DataFormatError(path, "missing covariate rows for: "
                              + ", ".join(missing))
    try:
        return CovariateMatrix(x, labels=labels)
    except ValueError as err:
        raise DataFormatError(path, str(err)) from err


# -- JSON --------------------------------------------------------------------

def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise DataFormatError(path, err.msg, line=err.lineno,
                                  column=err.colno) from err


# -- bundled loading ---------------------------------------------------------

@dataclass(frozen=True)
class LoadedDataset:
    subject_ids: tuple
    phenotype: NetworkPhenotype
    genotypes: list
    kinship: Kinship
    covariates: CovariateMatrix | None


def load_dataset(kinship_path, phenotype_path, genotype_path,
                 covariates_path=None) -> LoadedDataset:
    """Read and cross-validate a dataset. The kinship header fixes the subject
    order; every other file is reindexed to it, so row order in those files
    is irrelevant."""
    ids, kinship = read_kinship(kinship_path)
    phenotype = read_phenotype(phenotype_path, ids)
    genotypes = read_genotypes(genotype_path, ids)
    covariates = None
    if covariates_path is not None:
        covariates = read_covariates(covariates_path, ids)
    return LoadedDataset(subject_ids=tuple(ids), phenotype=phenotype,
                         genotypes=genotypes, kinship=kinship,
                         covariates=covariates)
