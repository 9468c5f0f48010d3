"""MPS export and import for :class:`MilpInstance`.

The writer follows the fixed-format column layout (fields start at columns
2, 5, 15, 25, 40 and 50) but lets names run longer than eight characters,
which every free-format MPS reader accepts. The reader splits on whitespace,
so it also reads free-format files without spaces in names.
"""
from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .formulation import MilpInstance

OBJ_ROW = "COST"


class MpsError(ValueError):
    pass


def _num(x: float) -> str:
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _line(f1: str, f2: str, f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    s = f" {f1:<2} {f2:<8}"
    if f3:
        s += f"  {f3:<8}  {f4:>12}"
    if f5:
        s += f"   {f5:<8}  {f6:>12}"
    return s.rstrip()


def write_mps(m: MilpInstance) -> str:
    out = io.StringIO()
    w = out.write
    w(f"NAME          {m.name}\n")
    w("ROWS\n")
    w(_line("N", OBJ_ROW) + "\n")
    for name, s in zip(m.row_names, m.senses):
        w(_line(str(s), name) + "\n")
    w("COLUMNS\n")
    A = m.A.tocsc()
    in_int = False
    marker = 0
    for j, name in enumerate(m.var_names):
        if bool(m.integer[j]) != in_int:
            tag = "'INTORG'" if not in_int else "'INTEND'"
            w(_line("", f"MARKER{marker:02d}", "'MARKER'", "", tag) + "\n")
            marker += 1
            in_int = not in_int
        entries = []
        if m.c[j] != 0:
            entries.append((OBJ_ROW, m.c[j]))
        lo, hi = A.indptr[j], A.indptr[j + 1]
        entries += [(m.row_names[r], v) for r, v in zip(A.indices[lo:hi], A.data[lo:hi]) if v != 0]
        if not entries:
            entries.append((OBJ_ROW, 0.0))
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            fields = [name, pair[0][0], _num(pair[0][1])]
            if len(pair) == 2:
                fields += [pair[1][0], _num(pair[1][1])]
            w(_line("", *fields) + "\n")
    if in_int:
        w(_line("", f"MARKER{marker:02d}", "'MARKER'", "", "'INTEND'") + "\n")
    w("RHS\n")
    for name, v in zip(m.row_names, m.rhs):
        if v != 0:
            w(_line("", "RHS", name, _num(v)) + "\n")
    w("BOUNDS\n")
    for j, name in enumerate(m.var_names):
        lb, ub = m.lb[j], m.ub[j]
        if lb == 0 and math.isinf(ub):
            continue
        if math.isinf(lb) and math.isinf(ub):
            w(_line("FR", "BND", name) + "\n")
            continue
        if lb != 0:
            w(_line("MI" if math.isinf(lb) else "LO", "BND", name, "" if math.isinf(lb) else _num(lb)) + "\n")
        if not math.isinf(ub):
            w(_line("UP", "BND", name, _num(ub)) + "\n")
    w("ENDATA\n")
    return out.getvalue()


def export_mps(m: MilpInstance, path) -> None:
    """Write ``m`` (objective sense MIN) to ``path``."""
    Path(path).write_text(write_mps(m))


def parse_mps(text: str) -> MilpInstance:
    name = "MPS"
    section = None
    obj = None
    rows, senses = [], []
    row_idx = {}
    cols, col_idx = [], {}
    integer = []
    entries = []  # (row, col, value)
    cost = {}
    rhs = {}
    bounds = {}
    in_int = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.startswith("*"):
            continue
        tok = raw.split()
        if not raw[0].isspace():
            section = tok[0].upper()
            if section == "NAME":
                name = tok[1] if len(tok) > 1 else ""
            elif section == "ENDATA":
                break
            elif section not in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "RANGES", "OBJSENSE"):
                raise MpsError(f"line {lineno}: unknown section {section}")
            continue
        if section == "ROWS":
            kind, rname = tok[0].upper(), tok[1]
            if kind == "N":
                if obj is None:
                    obj = rname
                continue
            if kind not in ("L", "G", "E"):
                raise MpsError(f"line {lineno}: bad row type {kind}")
            row_idx[rname] = len(rows)
            rows.append(rname)
            senses.append(kind)
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1] == "'MARKER'":
                in_int = tok[2] == "'INTORG'"
                continue
            cname = tok[0]
            if cname not in col_idx:
                col_idx[cname] = len(cols)
                cols.append(cname)
                integer.append(in_int)
            j = col_idx[cname]
            for rname, val in zip(tok[1::2], tok[2::2]):
                v = float(val)
                if rname == obj:
                    cost[j] = v
                elif rname in row_idx:
                    entries.append((row_idx[rname], j, v))
                else:
                    raise MpsError(f"line {lineno}: unknown row {rname}")
        elif section == "RHS":
            pairs = tok[1:] if len(tok) % 2 == 1 else tok
            for rname, val in zip(pairs[0::2], pairs[1::2]):
                if rname in row_idx:
                    rhs[row_idx[rname]] = float(val)
        elif section == "BOUNDS":
            kind, cname = tok[0].upper(), tok[2]
            if cname not in col_idx:
                raise MpsError(f"line {lineno}: unknown column {cname}")
            val = float(tok[3]) if len(tok) > 3 else None
            bounds.setdefault(col_idx[cname], []).append((kind, val))
        elif section == "RANGES":
            raise MpsError("RANGES are not supported")
    n = len(cols)
    c = np.zeros(n)
    for j, v in cost.items():
        c[j] = v
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for j, items in bounds.items():
        for kind, val in items:
            if kind == "UP":
                ub[j] = val
            elif kind == "LO":
                lb[j] = val
            elif kind == "FX":
                lb[j] = ub[j] = val
            elif kind == "FR":
                lb[j], ub[j] = -np.inf, np.inf
            elif kind == "MI":
                lb[j] = -np.inf
            elif kind == "PL":
                ub[j] = np.inf
            elif kind == "BV":
                lb[j], ub[j] = 0.0, 1.0
                integer[j] = True
            else:
                raise MpsError(f"unsupported bound type {kind}")
    r, col, v = zip(*entries) if entries else ((), (), ())
    A = sp.csr_matrix((np.asarray(v, float), (np.asarray(r, int), np.asarray(col, int))), shape=(len(rows), n))
    return MilpInstance(
        var_names=tuple(cols),
        c=c,
        lb=lb,
        ub=ub,
        integer=np.asarray(integer, dtype=bool),
        A=A,
        senses=np.asarray(senses, dtype="<U1"),
        rhs=np.asarray([rhs.get(i, 0.0) for i in range(len(rows))]),
        row_names=tuple(rows),
        name=name,
    )


def read_mps(path) -> MilpInstance:
    return parse_mps(Path(path).read_text())


def same_instance(a: MilpInstance, b: MilpInstance) -> bool:
    """Structural equality of two instances (names, data, bounds, marks)."""
    return (
        a.var_names == b.var_names
        and a.row_names == b.row_names
        and np.array_equal(a.c, b.c)
        and np.array_equal(a.lb, b.lb)
        and np.array_equal(a.ub, b.ub)
        and np.array_equal(a.integer, b.integer)
        and list(a.senses) == list(b.senses)
        and np.array_equal(a.rhs, b.rhs)
        and (a.A != b.A).nnz == 0
        and a.A.shape == b.A.shape
    )
