"""LP- and MPS-format export and import for ModelIR.

The writers target the CPLEX-style dialects that mainstream solvers
(CPLEX, Gurobi, HiGHS, SCIP) read: named rows, a bracketed quadratic
term in LP constraints (``[ c x ^ 2 + c x * y ] + lin <= rhs``) and a
``QCMATRIX`` block in MPS files holding the full symmetric matrix of the
quadratic row. The readers parse the same dialect back into a ModelIR;
they are written for files produced here (every row labeled, free-format
MPS) rather than arbitrary files from other tools.

Row tags are not a standard LP/MPS concept, so on import they are
recovered from row names (``eq<nn>...`` -> ``<nn>``, ``mc...`` -> MC,
``na_...`` -> NA, ``cut``/``oa`` -> 25); rows with unrecognizable names
get tag NA. Variable kinds come from the Binaries/Generals sections (LP)
or INTORG markers plus bound types (MPS).
"""

from __future__ import annotations

import re
from typing import Iterable

import numpy as np

from agrochain.formulation import BINARY, CONTINUOUS, INTEGER, ModelIR, VarKey

__all__ = [
    "write_lp",
    "write_mps",
    "read_lp",
    "read_mps",
    "export_model",
    "parse_var_name",
]

_NAME_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\((\d+(?:,\d+)*)\)$")
_TAG_RE = re.compile(r"^eq(\d+)")


def parse_var_name(name: str) -> VarKey:
    """'family(1,2,3)' -> VarKey('family', (1,2,3)); bare names get ()."""
    m = _NAME_RE.match(name)
    if m:
        return VarKey(m.group(1), tuple(int(v) for v in m.group(2).split(",")))
    return VarKey(name, ())


def _tag_from_name(name: str) -> str:
    m = _TAG_RE.match(name)
    if m:
        return m.group(1)
    low = name.lower()
    if low.startswith("mc"):
        return "MC"
    if low.startswith("na_"):
        return "NA"
    if low.startswith(("cut", "oa")):
        return "25"
    return "NA"


def _num(v: float) -> str:
    """Shortest decimal that round-trips the double exactly."""
    return repr(float(v))


def _open(dest, mode: str):
    if hasattr(dest, "write") or hasattr(dest, "read"):
        return dest, False
    return open(dest, mode), True


# ---------------------------------------------------------------------------
# LP format
# ---------------------------------------------------------------------------


def _lp_terms(pairs: Iterable[tuple[str, float]]) -> list[str]:
    """['+ 2.5 x(1)', '- 1.0 y(2)', ...] with a sign on every term."""
    out = []
    for name, coef in pairs:
        sign = "-" if coef < 0 else "+"
        out.append(f"{sign} {_num(abs(coef))} {name}")
    return out


def _wrap(parts: list[str], head: str, width: int = 200) -> list[str]:
    lines, cur = [], head
    for part in parts:
        if len(cur) + len(part) + 1 > width and cur.strip():
            lines.append(cur)
            cur = "   "
        cur += " " + part
    lines.append(cur)
    return lines


def write_lp(ir: ModelIR, dest) -> None:
    fh, own = _open(dest, "w")
    try:
        wr = fh.write
        wr(f"\\ {ir.name}\n")
        wr("Minimize\n")
        obj_terms = _lp_terms(
            (ir.var_keys[i].name, c) for i, c in sorted(ir.objective.items()) if c != 0.0
        )
        for line in _wrap(obj_terms or ["+ 0 " + ir.var_keys[0].name], " obj:"):
            wr(line + "\n")
        wr("Subject To\n")
        for row in ir.rows:
            sense = {"<=": "<=", ">=": ">=", "==": "="}[row.sense]
            terms = _lp_terms((ir.var_keys[i].name, c) for i, c in row.coeffs)
            parts = terms + [sense, _num(row.rhs)]
            for line in _wrap(parts, f" {row.name}:"):
                wr(line + "\n")
        if ir.quadratic is not None:
            q = ir.quadratic
            qterms = []
            for i, j, c in q.quad:
                sign = "-" if c < 0 else "+"
                if i == j:
                    qterms.append(f"{sign} {_num(abs(c))} {ir.var_keys[i].name} ^ 2")
                else:
                    qterms.append(
                        f"{sign} {_num(abs(c))} {ir.var_keys[i].name} * {ir.var_keys[j].name}"
                    )
            parts = ["["] + qterms + ["]"]
            parts += _lp_terms((ir.var_keys[i].name, c) for i, c in q.lin)
            parts += ["<=", _num(q.rhs)]
            for line in _wrap(parts, f" {q.name}:"):
                wr(line + "\n")
        wr("Bounds\n")
        for i, key in enumerate(ir.var_keys):
            lb, ub, kind = ir.lb[i], ir.ub[i], ir.kinds[i]
            if kind == BINARY:
                if ub == 0.0:
                    wr(f" {key.name} = 0\n")
                continue
            if lb == ub:
                wr(f" {key.name} = {_num(lb)}\n")
            elif np.isfinite(ub):
                if lb == 0.0:
                    wr(f" {key.name} <= {_num(ub)}\n")
                else:
                    wr(f" {_num(lb)} <= {key.name} <= {_num(ub)}\n")
            elif lb != 0.0:
                wr(f" {key.name} >= {_num(lb)}\n")
            else:
                wr(f" {key.name} >= 0\n")
        binaries = [k.name for k, kind in zip(ir.var_keys, ir.kinds) if kind == BINARY]
        if binaries:
            wr("Binaries\n")
            for line in _wrap(binaries, " "):
                wr(line + "\n")
        generals = [k.name for k, kind in zip(ir.var_keys, ir.kinds) if kind == INTEGER]
        if generals:
            wr("Generals\n")
            for line in _wrap(generals, " "):
                wr(line + "\n")
        wr("End\n")
    finally:
        if own:
            fh.close()


_SECTIONS = {
    "minimize": "objective",
    "min": "objective",
    "subject": "rows",
    "st": "rows",
    "s.t.": "rows",
    "bounds": "bounds",
    "binaries": "binaries",
    "binary": "binaries",
    "bin": "binaries",
    "generals": "generals",
    "general": "generals",
    "gen": "generals",
    "end": "end",
}


class _LpVars:
    """Variable registry that defers kind/bounds until the end of parsing."""

    def __init__(self):
        self.order: list[str] = []
        self.seen: set[str] = set()
        self.kinds: dict[str, str] = {}
        self.lb: dict[str, float] = {}
        self.ub: dict[str, float] = {}

    def touch(self, name: str):
        if name not in self.seen:
            self.seen.add(name)
            self.order.append(name)

    def build(self, ir: ModelIR) -> dict[str, VarKey]:
        keys = {}
        for name in self.order:
            kind = self.kinds.get(name, CONTINUOUS)
            if kind == BINARY:
                lb = self.lb.get(name, 0.0)
                ub = self.ub.get(name, 1.0)
            else:
                lb = self.lb.get(name, 0.0)
                ub = self.ub.get(name, np.inf)
            key = parse_var_name(name)
            keys[name] = key
            ir.add_variable(key, kind, lb, ub)
        return keys


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _parse_linear(tokens: list[str]) -> list[tuple[str, float]]:
    """Parse sign/coefficient/name token runs into (name, coef) pairs."""
    out = []
    sign = 1.0
    coef = None
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "+":
            pass
        elif tok == "-":
            sign = -sign
        elif _is_number(tok):
            coef = float(tok) if coef is None else coef * float(tok)
        else:
            c = sign * (1.0 if coef is None else coef)
            out.append((tok, c))
            sign, coef = 1.0, None
        i += 1
    return out


def read_lp(src) -> ModelIR:
    """Parse an LP file written by :func:`write_lp` back into a ModelIR."""
    fh, own = _open(src, "r")
    try:
        raw_lines = fh.read().splitlines()
    finally:
        if own:
            fh.close()

    ir = ModelIR()
    vars_ = _LpVars()
    rows: list[tuple[str, list[str]]] = []  # (label, expression tokens)
    quad_rows: list[tuple[str, list[str]]] = []
    obj_tokens: list[str] = []
    bounds_lines: list[list[str]] = []
    section = None
    pending: list[str] | None = None
    pending_label = ""

    def flush_pending():
        nonlocal pending, pending_label
        if pending is not None:
            target = quad_rows if "[" in pending else rows
            target.append((pending_label, pending))
            pending, pending_label = None, ""

    for raw in raw_lines:
        line = raw.split("\\")[0].rstrip()
        if not line.strip():
            continue
        first = line.split()[0].lower()
        if first in _SECTIONS and (
            _SECTIONS[first] != "rows" or line.strip().lower() in ("subject to", "st", "s.t.")
        ):
            flush_pending()
            section = _SECTIONS[first]
            continue
        tokens = line.replace("[", " [ ").replace("]", " ] ").split()
        if section == "objective":
            if tokens and tokens[0].endswith(":"):
                tokens = tokens[1:]
            obj_tokens.extend(tokens)
        elif section == "rows":
            if tokens and tokens[0].endswith(":"):
                flush_pending()
                pending_label = tokens[0][:-1]
                pending = tokens[1:]
            elif pending is not None:
                pending.extend(tokens)
            else:
                raise ValueError(f"constraint continuation with no open row: {line!r}")
            if pending and pending[-2:-1] and pending[-2] in ("<=", ">=", "="):
                flush_pending()
        elif section == "bounds":
            bounds_lines.append(tokens)
        elif section == "binaries":
            for name in tokens:
                vars_.touch(name)
                vars_.kinds[name] = BINARY
        elif section == "generals":
            for name in tokens:
                vars_.touch(name)
                vars_.kinds[name] = INTEGER
        elif section == "end":
            break
    flush_pending()

    for name, _c in _parse_linear(obj_tokens):
        vars_.touch(name)
    for _label, toks in rows + quad_rows:
        for tok in toks:
            if tok not in ("+", "-", "*", "[", "]", "<=", ">=", "=", "^") and not _is_number(tok):
                vars_.touch(tok)
    for toks in bounds_lines:
        for tok in toks:
            if tok not in ("<=", ">=", "=", "free") and not _is_number(tok):
                vars_.touch(tok)

    for toks in bounds_lines:
        if len(toks) == 2 and toks[1].lower() == "free":
            vars_.lb[toks[0]] = -np.inf
            continue
        if len(toks) == 3 and toks[1] in ("<=", ">=", "="):
            name, op, val = toks[0], toks[1], float(toks[2])
            if op == "<=":
                vars_.ub[name] = val
            elif op == ">=":
                vars_.lb[name] = val
            else:
                vars_.lb[name] = vars_.ub[name] = val
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            vars_.lb[toks[2]] = float(toks[0])
            vars_.ub[toks[2]] = float(toks[4])
        else:
            raise ValueError(f"unsupported bounds line: {' '.join(toks)}")

    keys = vars_.build(ir)
    for name, coef in _parse_linear(obj_tokens):
        ir.add_objective_term(keys[name], coef)
    for label, toks in rows:
        sense_pos = max(
            i for i, t in enumerate(toks) if t in ("<=", ">=", "=")
        )
        sense = {"<=": "<=", ">=": ">=", "=": "=="}[toks[sense_pos]]
        rhs = float(toks[sense_pos + 1])
        coeffs = [(keys[n], c) for n, c in _parse_linear(toks[:sense_pos])]
        ir.add_row(label, _tag_from_name(label), coeffs, sense, rhs)
    for label, toks in quad_rows:
        lb_idx, rb_idx = toks.index("["), toks.index("]")
        sense_pos = max(i for i, t in enumerate(toks) if t in ("<=", ">=", "="))
        if toks[sense_pos] != "<=":
            raise ValueError("quadratic rows must be <=")
        rhs = float(toks[sense_pos + 1])
        quad: list[tuple[VarKey, VarKey, float]] = []
        qtoks = toks[lb_idx + 1 : rb_idx]
        sign, coef, first_name = 1.0, None, None
        i = 0
        while i < len(qtoks):
            tok = qtoks[i]
            if tok == "+":
                pass
            elif tok == "-":
                sign = -sign
            elif _is_number(tok):
                coef = float(tok) if coef is None else coef * float(tok)
            elif tok == "^":
                i += 1  # consume exponent (always 2)
                quad.append((keys[first_name], keys[first_name], sign * (coef if coef is not None else 1.0)))
                sign, coef, first_name = 1.0, None, None
            elif tok == "*":
                i += 1
                other = qtoks[i]
                quad.append((keys[first_name], keys[other], sign * (coef if coef is not None else 1.0)))
                sign, coef, first_name = 1.0, None, None
            else:
                first_name = tok
            i += 1
        lin = [(keys[n], c) for n, c in _parse_linear(toks[rb_idx + 1 : sense_pos])]
        ir.set_quadratic(label, _tag_from_name(label), quad, lin, rhs)
    return ir.freeze()


# ---------------------------------------------------------------------------
# MPS format (free form)
# ---------------------------------------------------------------------------


def write_mps(ir: ModelIR, dest) -> None:
    fh, own = _open(dest, "w")
    try:
        wr = fh.write
        wr(f"NAME {ir.name}\n")
        wr("ROWS\n")
        wr(" N obj\n")
        sense_code = {"<=": "L", ">=": "G", "==": "E"}
        for row in ir.rows:
            wr(f" {sense_code[row.sense]} {row.name}\n")
        if ir.quadratic is not None:
            wr(f" L {ir.quadratic.name}\n")
        # column-major coefficient lists
        per_var: list[list[tuple[str, float]]] = [[] for _ in ir.var_keys]
        for i, c in sorted(ir.objective.items()):
            if c != 0.0:
                per_var[i].append(("obj", c))
        for row in ir.rows:
            for i, c in row.coeffs:
                per_var[i].append((row.name, c))
        if ir.quadratic is not None:
            for i, c in ir.quadratic.lin:
                per_var[i].append((ir.quadratic.name, c))
        wr("COLUMNS\n")
        in_int = False
        marker = 0
        for i, key in enumerate(ir.var_keys):
            want_int = ir.kinds[i] != CONTINUOUS
            if want_int and not in_int:
                marker += 1
                wr(f"    M{marker} 'MARKER' 'INTORG'\n")
                in_int = True
            elif not want_int and in_int:
                marker += 1
                wr(f"    M{marker} 'MARKER' 'INTEND'\n")
                in_int = False
            entries = per_var[i] or [("obj", 0.0)]
            for rname, c in entries:
                wr(f"    {key.name} {rname} {_num(c)}\n")
        if in_int:
            marker += 1
            wr(f"    M{marker} 'MARKER' 'INTEND'\n")
        wr("RHS\n")
        for row in ir.rows:
            if row.rhs != 0.0:
                wr(f"    RHS1 {row.name} {_num(row.rhs)}\n")
        if ir.quadratic is not None and ir.quadratic.rhs != 0.0:
            wr(f"    RHS1 {ir.quadratic.name} {_num(ir.quadratic.rhs)}\n")
        wr("BOUNDS\n")
        for i, key in enumerate(ir.var_keys):
            lb, ub, kind = ir.lb[i], ir.ub[i], ir.kinds[i]
            if kind == BINARY:
                if ub == 0.0:
                    wr(f" FX BND {key.name} 0\n")
                else:
                    wr(f" BV BND {key.name}\n")
            elif kind == INTEGER:
                # always LI+UI (never FX) so kind stays decidable on import
                wr(f" LI BND {key.name} {_num(lb)}\n")
                if np.isfinite(ub):
                    wr(f" UI BND {key.name} {_num(ub)}\n")
            else:
                if lb == ub:
                    wr(f" FX BND {key.name} {_num(lb)}\n")
                    continue
                if lb != 0.0:
                    wr(f" LO BND {key.name} {_num(lb)}\n")
                if np.isfinite(ub):
                    wr(f" UP BND {key.name} {_num(ub)}\n")
        if ir.quadratic is not None:
            q = ir.quadratic
            wr(f"QCMATRIX {q.name}\n")
            for i, j, c in q.quad:
                if i == j:
                    wr(f"    {ir.var_keys[i].name} {ir.var_keys[j].name} {_num(c)}\n")
                else:
                    half = c / 2.0
                    wr(f"    {ir.var_keys[i].name} {ir.var_keys[j].name} {_num(half)}\n")
                    wr(f"    {ir.var_keys[j].name} {ir.var_keys[i].name} {_num(half)}\n")
        wr("ENDATA\n")
    finally:
        if own:
            fh.close()


def read_mps(src) -> ModelIR:
    """Parse a free-format MPS file written by :func:`write_mps`."""
    fh, own = _open(src, "r")
    try:
        raw_lines = fh.read().splitlines()
    finally:
        if own:
            fh.close()

    name = "model"
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    col_order: list[str] = []
    col_seen: set[str] = set()
    col_int: dict[str, bool] = {}
    col_entries: dict[str, list[tuple[str, float]]] = {}
    rhs: dict[str, float] = {}
    bounds: dict[str, dict[str, float]] = {}
    bound_types: dict[str, set[str]] = {}
    qc_row: str | None = None
    qc_entries: list[tuple[str, str, float]] = []

    section = None
    in_int = False
    for raw in raw_lines:
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        head = raw.split()
        upper = head[0].upper()
        if upper in ("NAME", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA") or upper == "QCMATRIX":
            if upper == "NAME":
                section = None
                if len(head) > 1:
                    name = head[1]
            elif upper == "QCMATRIX":
                section = "QCMATRIX"
                qc_row = head[1]
            elif upper == "ENDATA":
                break
            else:
                section = upper
            continue
        toks = head
        if section == "ROWS":
            code, rname = toks[0].upper(), toks[1]
            if code == "N":
                continue
            row_sense[rname] = {"L": "<=", "G": ">=", "E": "=="}[code]
            row_order.append(rname)
        elif section == "COLUMNS":
            if len(toks) >= 3 and toks[1].strip("'").upper() == "MARKER":
                kind = toks[2].strip("'").upper()
                in_int = kind == "INTORG"
                continue
            cname = toks[0]
            if cname not in col_seen:
                col_seen.add(cname)
                col_order.append(cname)
                col_int[cname] = in_int
                col_entries[cname] = []
            for k in range(1, len(toks) - 1, 2):
                col_entries[cname].append((toks[k], float(toks[k + 1])))
        elif section == "RHS":
            for k in range(1, len(toks) - 1, 2):
                rhs[toks[k]] = float(toks[k + 1])
        elif section == "BOUNDS":
            btype, _bnd, cname = toks[0].upper(), toks[1], toks[2]
            val = float(toks[3]) if len(toks) > 3 else 0.0
            b = bounds.setdefault(cname, {})
            bound_types.setdefault(cname, set()).add(btype)
            if btype in ("UP", "UI"):
                b["ub"] = val
            elif btype in ("LO", "LI"):
                b["lb"] = val
            elif btype == "FX":
                b["lb"] = b["ub"] = val
            elif btype == "BV":
                b["lb"], b["ub"] = 0.0, 1.0
            elif btype == "PL":
                b["ub"] = np.inf
            elif btype == "FR":
                b["lb"] = -np.inf
            elif btype == "MI":
                b["lb"] = -np.inf
            else:
                raise ValueError(f"unsupported bound type {btype}")
            if cname not in col_seen:
                col_seen.add(cname)
                col_order.append(cname)
                col_int[cname] = False
                col_entries[cname] = []
        elif section == "QCMATRIX":
            qc_entries.append((toks[0], toks[1], float(toks[2])))
        elif section == "RANGES":
            raise ValueError("RANGES section not supported")

    ir = ModelIR(name)
    keys: dict[str, VarKey] = {}
    for cname in col_order:
        b = bounds.get(cname, {})
        btypes = bound_types.get(cname, set())
        # integer columns: BV or FX means binary, LI/UI means general integer
        if "BV" in btypes or (col_int[cname] and "FX" in btypes):
            kind = BINARY
            lb, ub = b.get("lb", 0.0), b.get("ub", 1.0)
        elif col_int[cname]:
            kind = INTEGER
            lb, ub = b.get("lb", 0.0), b.get("ub", np.inf)
        else:
            kind = CONTINUOUS
            lb, ub = b.get("lb", 0.0), b.get("ub", np.inf)
        key = parse_var_name(cname)
        keys[cname] = key
        ir.add_variable(key, kind, lb, ub)

    row_coeffs: dict[str, list[tuple[VarKey, float]]] = {r: [] for r in row_order}
    for cname in col_order:
        for rname, c in col_entries[cname]:
            if rname == "obj":
                if c != 0.0:
                    ir.add_objective_term(keys[cname], c)
            elif rname == qc_row:
                row_coeffs.setdefault(rname, []).append((keys[cname], c))
            else:
                row_coeffs[rname].append((keys[cname], c))
    for rname in row_order:
        if rname == qc_row:
            continue
        ir.add_row(
            rname,
            _tag_from_name(rname),
            row_coeffs[rname],
            row_sense[rname],
            rhs.get(rname, 0.0),
        )
    if qc_row is not None:
        acc: dict[tuple[str, str], float] = {}
        order: list[tuple[str, str]] = []
        for a, bn, c in qc_entries:
            lo, hi = (a, bn) if a <= bn else (bn, a)
            if (lo, hi) not in acc:
                acc[(lo, hi)] = 0.0
                order.append((lo, hi))
            acc[(lo, hi)] += c
        quad = [(keys[a], keys[bn], c) for (a, bn), c in ((p, acc[p]) for p in order)]
        ir.set_quadratic(
            qc_row,
            _tag_from_name(qc_row),
            quad,
            row_coeffs.get(qc_row, []),
            rhs.get(qc_row, 0.0),
        )
    return ir.freeze()


def export_model(ir: ModelIR, fmt: str, dest) -> None:
    """Write ``ir`` to ``dest`` in 'lp' or 'mps' format."""
    fmt = fmt.lower()
    if fmt == "lp":
        write_lp(ir, dest)
    elif fmt == "mps":
        write_mps(ir, dest)
    else:
        raise ValueError(f"unknown export format {fmt!r} (expected 'lp' or 'mps')")
