"""Tab-separated matrix interchange, with identifier headers.

Files carry a header row (corner cell then column identifiers) and one row per
sample, starting with the sample identifier. Values are written with 17
significant digits so results round-trip to full double precision.
"""

import logging

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

__all__ = ["load_matrix", "load_matrices", "save_matrix", "save_truth", "load_truth"]


def load_matrix(path):
    """Parse a delimited numeric matrix; returns (sample_ids, column_ids, array)."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if not header:
            raise DataError(f"{path}: empty file")
        col_ids = header.split("\t")[1:]
        width = len(col_ids)
        sample_ids = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != width + 1:
                raise DataError(
                    f"{path}: ragged row at line {lineno} "
                    f"({len(parts) - 1} cells, expected {width})"
                )
            sample_ids.append(parts[0])
            row = np.empty(width)
            for j, cell in enumerate(parts[1:]):
                try:
                    row[j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at line {lineno}, "
                        f"column {col_ids[j]!r}"
                    ) from None
                if not np.isfinite(row[j]):
                    raise DataError(
                        f"{path}: non-finite cell at line {lineno}, column {col_ids[j]!r}"
                    )
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return sample_ids, col_ids, np.vstack(rows)


def load_matrices(x_path, y_path):
    """Load the covariate and response matrices and join them by sample
    identifier, keeping the covariate file's row order. Samples present in only
    one file are dropped with a logged warning."""
    x_ids, x_cols, X = load_matrix(x_path)
    y_ids, y_cols, Y = load_matrix(y_path)
    for name, ids in (("X", x_ids), ("Y", y_ids)):
        seen, dups = set(), []
        for i in ids:
            if i in seen:
                dups.append(i)
            seen.add(i)
        if dups:
            raise DataError(f"duplicate sample identifiers in {name}: {dups[:5]}")
    y_index = {i: k for k, i in enumerate(y_ids)}
    shared = [i for i in x_ids if i in y_index]
    if not shared:
        mismatches = x_ids[:5]
        raise DataError(f"no shared sample identifiers; first X identifiers: {mismatches}")
    dropped = (len(x_ids) - len(shared)) + (len(y_ids) - len(shared))
    if dropped:
        logger.warning("join by sample identifier dropped %d sample(s)", dropped)
    keep_x = [k for k, i in enumerate(x_ids) if i in y_index]
    keep_y = [y_index[i] for i in shared]
    logger.info("loaded X %s and Y %s with %d joined samples",
                X.shape, Y.shape, len(shared))
    return X[keep_x], Y[keep_y], x_cols, y_cols, shared


def save_matrix(path, array, row_ids, col_ids, corner="id"):
    array = np.atleast_2d(np.asarray(array))
    with open(path, "w") as fh:
        fh.write(corner + "\t" + "\t".join(map(str, col_ids)) + "\n")
        for rid, row in zip(row_ids, array):
            fh.write(str(rid) + "\t" + "\t".join(f"{v:.17g}" for v in row) + "\n")


def save_truth(path, beta_true):
    """Sparse triplet list of planted effects: covariate, response, beta."""
    with open(path, "w") as fh:
        fh.write("covariate\tresponse\tbeta\n")
        for s, t in np.argwhere(beta_true != 0):
            fh.write(f"{s}\t{t}\t{beta_true[s, t]:.17g}\n")


def load_truth(path, shape):
    beta = np.zeros(shape)
    with open(path) as fh:
        fh.readline()
        for line in fh:
            s, t, v = line.split("\t")
            beta[int(s), int(t)] = float(v)
    return beta
