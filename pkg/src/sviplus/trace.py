"""ELBO traces as CSV and model snapshots as versioned text."""
from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from .engine import TraceRow
from .errors import DataError, ParseError
from .expfam import LAYOUT_VERSION, Family, NaturalParam

TRACE_COLUMNS = [f.name for f in fields(TraceRow)]
SNAPSHOT_MAGIC = "sviplus-snapshot"
SNAPSHOT_VERSION = 1


@dataclass
class ElboTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def append(self, row: TraceRow) -> None:
        if self.rows:
            last = self.rows[-1]
            if row.iteration <= last.iteration:
                raise ValueError("trace iterations must increase")
            if row.wall_ms < last.wall_ms:
                raise ValueError("wall clock went backwards")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_csv(table, path, columns=None) -> None:
    """Write a trace (or an iterable of rows) as CSV with round-trip float text.

    ``table`` may be an :class:`ElboTrace`, a list of dataclass rows, or a
    list of sequences together with ``columns``.
    """
    rows = table.rows if isinstance(table, ElboTrace) else list(table)
    if columns is None:
        columns = TRACE_COLUMNS if not rows else [f.name for f in fields(rows[0])]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                vals = astuple(r) if hasattr(r, "__dataclass_fields__") else r
                w.writerow([_fmt(v) for v in vals])
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


class TraceWriter:
    """Appends trace rows to a CSV file as they arrive."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(TRACE_COLUMNS)
        self._fh.flush()

    def __call__(self, row: TraceRow) -> None:
        self._w.writerow([_fmt(v) for v in astuple(row)])
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_trace_csv(path) -> ElboTrace:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != TRACE_COLUMNS:
            raise ParseError(f"unexpected header {header}", line=1, path=path)
        trace = ElboTrace()
        for lineno, rec in enumerate(r, start=2):
            try:
                trace.rows.append(TraceRow(int(rec[0]), float(rec[1]), float(rec[2]), int(rec[3]),
                                           int(rec[4]), float(rec[5]), int(rec[6])))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
    return trace


# ---------------------------------------------------------------------------
# snapshots
#
#   sviplus-snapshot <version> layout <layout version>
#   model <name>
#   global <id> <family kind> <dim> <leading shape, comma separated, "-" if none>
#   <row values, space separated>     (one line per stacked parameter)


def save_snapshot(path, model_name: str, globals: dict[str, NaturalParam]) -> None:
    with open(path, "w") as fh:
        fh.write(f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} layout {LAYOUT_VERSION}\n")
        fh.write(f"model {model_name}\n")
        for gid, q in globals.items():
            lead = q.values.shape[:-1]
            shape = ",".join(str(n) for n in lead) if lead else "-"
            fh.write(f"global {gid} {q.family.kind} {q.family.dim} {shape}\n")
            v = q.values.reshape(-1, q.values.shape[-1])
            for row in v:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_snapshot(path) -> tuple[str, dict[str, NaturalParam]]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty snapshot")
    head = lines[0].split()
    if len(head) != 4 or head[0] != SNAPSHOT_MAGIC or head[2] != "layout":
        raise ParseError("not a snapshot file", line=1, path=path)
    if int(head[1]) != SNAPSHOT_VERSION or int(head[3]) != LAYOUT_VERSION:
        raise DataError(
            f"{path}: snapshot version {head[1]} layout {head[3]} does not match "
            f"this build (version {SNAPSHOT_VERSION} layout {LAYOUT_VERSION})"
        )
    if len(lines) < 2 or not lines[1].startswith("model "):
        raise ParseError("missing model line", line=2, path=path)
    model = lines[1].split()[1]
    out = {}
    i = 2
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 5 or parts[0] != "global":
            raise ParseError("expected a global header", line=i + 1, path=path)
        gid, kind = parts[1], parts[2]
        try:
            dim = int(parts[3])
            lead = () if parts[4] == "-" else tuple(int(x) for x in parts[4].split(","))
            fam = Family(kind, dim)
        except ValueError as exc:
            raise ParseError(str(exc), line=i + 1, path=path) from None
        n = int(np.prod(lead)) if lead else 1
        try:
            vals = np.array([[float(x) for x in lines[i + 1 + r].split()] for r in range(n)])
        except (ValueError, IndexError):
            raise ParseError(f"bad values for global {gid}", line=i + 2, path=path) from None
        if vals.shape != (n, fam.size):
            raise ParseError(f"global {gid} has the wrong shape", line=i + 1, path=path)
        out[gid] = NaturalParam(fam, vals.reshape(*lead, fam.size))
        i += 1 + n
    return model, out
