"""LP-format and MPS text export (and import of the dialect written here).

Output is fully determined by the model: variables appear in insertion
order, rows in insertion order, numbers in shortest round-trip form. Model
metadata travels in comment lines as JSON values.
"""

from __future__ import annotations

import json
import math
import re
from typing import Iterable

from envyloc.milp import INF, Model, Sense, VarKind, make_constraint

MAX_NAME = 255
_LINE = 200
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.#\[\]{}()!\"$%&/,;?@'`|~^-]*$")


class FormatError(ValueError):
    pass


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _check_names(model: Model) -> None:
    names = [v.name for v in model.variables] + [c.name for c in model.constraints]
    for name in names:
        if len(name) > MAX_NAME:
            raise FormatError(f"name longer than {MAX_NAME} characters: {name[:40]}...")
        if not _NAME_RE.match(name):
            raise FormatError(f"name not representable in LP/MPS text: {name!r}")


def _wrap(head: str, pieces: Iterable[str], indent: str = "   ") -> list[str]:
    lines, cur = [], head
    for piece in pieces:
        if len(cur) + 1 + len(piece) > _LINE and cur.strip():
            lines.append(cur)
            cur = indent + piece
        else:
            cur = f"{cur} {piece}" if cur else piece
    lines.append(cur)
    return lines


def _expr(model: Model, terms, constant: float = 0.0) -> list[str]:
    out = []
    for n, (coef, vid) in enumerate(terms):
        name = model.variables[vid].name
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        body = name if mag == 1 else f"{_num(mag)} {name}"
        if n == 0:
            out.append(f"- {body}" if sign == "-" else body)
        else:
            out.append(f"{sign} {body}")
    if constant != 0 or not out:
        if not out:
            out.append(_num(constant))
        else:
            out.append(f"{'-' if constant < 0 else '+'} {_num(abs(constant))}")
    return out


def _meta_lines(model: Model, prefix: str) -> list[str]:
    lines = [f"{prefix} model {json.dumps(model.name)}"]
    for key in sorted(model.metadata):
        lines.append(f"{prefix} meta {key} {json.dumps(model.metadata[key])}")
    return lines


def export_lp(model: Model) -> str:
    _check_names(model)
    lines = _meta_lines(model, "\\") + _vars_comment(model, "\\")
    lines.append("Minimize")
    lines += _wrap(" obj:", _expr(model, model.objective, model.constant))
    lines.append("Subject To")
    for con in model.constraints:
        terms = _expr(model, con.terms) if con.terms else [f"0 {model.variables[0].name}"]
        lines += _wrap(f" {con.name}:", terms + [con.sense.value, _num(con.rhs)])
    lines.append("Bounds")
    for v in model.variables:
        lo, hi = v.lower, v.upper
        if v.kind is VarKind.BINARY and lo == 0 and hi == 1:
            continue
        if lo == -INF and hi == INF:
            lines.append(f" {v.name} free")
        elif lo == hi:
            lines.append(f" {v.name} = {_num(lo)}")
        elif hi == INF:
            lines.append(f" {v.name} >= {_num(lo)}")
        else:
            lines.append(f" {_num(lo)} <= {v.name} <= {_num(hi)}")
    generals = [v.name for v in model.variables if v.kind is VarKind.INTEGER]
    binaries = [v.name for v in model.variables if v.kind is VarKind.BINARY]
    if generals:
        lines.append("Generals")
        lines += _wrap("", generals, indent="")
    if binaries:
        lines.append("Binaries")
        lines += _wrap("", binaries, indent="")
    lines.append("End")
    return "\n".join(lines) + "\n"


# -----------------------------------------------------------------------------

def _parse_meta(line: str, model: Model) -> None:
    parts = line.split(None, 2)
    if parts and parts[0] == "model":
        model.name = json.loads(line.split(None, 1)[1])
    elif len(parts) == 3 and parts[0] == "meta":
        model.metadata[parts[1]] = json.loads(parts[2])


def _parse_expr(tokens: list[str]) -> tuple[list[tuple[float, str]], float]:
    terms, constant = [], 0.0
    sign, coef = 1.0, None
    for tok in tokens:
        if tok in "+-":
            sign = -1.0 if tok == "-" else 1.0
            continue
        try:
            coef = float(tok) if coef is None else coef * float(tok)
            continue
        except ValueError:
            pass
        terms.append((sign * (1.0 if coef is None else coef), tok))
        sign, coef = 1.0, None
    if coef is not None:
        constant += sign * coef
    return terms, constant


def _logical_lines(lines: list[str]) -> list[str]:
    """Join continuation lines (indented by more than one space) onto their head."""
    out: list[str] = []
    for line in lines:
        if line.startswith("   ") and out:
            out[-1] += " " + line.strip()
        else:
            out.append(line)
    return out


_SECTIONS = {"minimize", "subject to", "bounds", "generals", "binaries", "end"}


def import_lp(text: str) -> Model:
    model = Model()
    section = None
    raw: dict[str, list[str]] = {s: [] for s in _SECTIONS}
    for line in text.splitlines():
        if line.startswith("\\"):
            _parse_meta(line[1:].strip(), model)
            continue
        key = line.strip().lower()
        if key in _SECTIONS:
            section = key
            continue
        if not line.strip():
            continue
        if section is None:
            raise FormatError(f"content before any section: {line!r}")
        raw[section].append(line)

    # variable declarations come from every mention, in order of first appearance
    kinds: dict[str, VarKind] = {}
    for line in raw["generals"]:
        for name in line.split():
            kinds[name] = VarKind.INTEGER
    for line in raw["binaries"]:
        for name in line.split():
            kinds[name] = VarKind.BINARY
    bounds: dict[str, tuple[float, float]] = {}
    for line in raw["bounds"]:
        tok = line.split()
        if len(tok) == 2 and tok[1] == "free":
            bounds[tok[0]] = (-INF, INF)
        elif len(tok) == 3 and tok[1] == "=":
            bounds[tok[0]] = (float(tok[2]),) * 2
        elif len(tok) == 3 and tok[1] == ">=":
            bounds[tok[0]] = (float(tok[2]), INF)
        elif len(tok) == 5 and tok[1] == tok[3] == "<=":
            bounds[tok[2]] = (float(tok[0]), float(tok[4]))
        else:
            raise FormatError(f"unsupported bound line: {line!r}")

    obj_lines = _logical_lines(raw["minimize"])
    obj_tokens = " ".join(obj_lines).split()
    if not obj_tokens or not obj_tokens[0].endswith(":"):
        raise FormatError("objective must be named, e.g. 'obj: ...'")
    obj_terms, obj_const = _parse_expr(obj_tokens[1:])

    rows = []
    for line in _logical_lines(raw["subject to"]):
        tok = line.split()
        name = tok[0].rstrip(":")
        sense_at = next(i for i, t in enumerate(tok) if t in ("<=", ">=", "="))
        terms, const = _parse_expr(tok[1:sense_at])
        rows.append((name, terms, Sense(tok[sense_at]), float(tok[sense_at + 1]) - const))

    # exported files record declaration order; anything else follows first use
    order = list(dict.fromkeys(
        _declaration_order(text) + list(bounds) + list(kinds)
        + [n for _, n in obj_terms] + [n for _, t, _, _ in rows for _, n in t]))

    for name in order:
        kind = kinds.get(name, VarKind.CONTINUOUS)
        lo, hi = bounds.get(name, (0.0, 1.0) if kind is VarKind.BINARY else (0.0, INF))
        model.add_variable(name, kind, lo, hi)
    model.set_objective([(c, model.var(n)) for c, n in obj_terms], obj_const)
    for name, terms, sense, rhs in rows:
        tag = name.rsplit("_", 1)[0] if re.search(r"_\d+$", name) else name
        _add_named(model, [(c, model.var(n)) for c, n in terms], sense, rhs, tag, name)
    return model


def _declaration_order(text: str) -> list[str]:
    """Variable order recorded by the exporter in the ``vars`` comment block."""
    names: list[str] = []
    for line in text.splitlines():
        if line.startswith("\\ vars ") or line.startswith("* vars "):
            names += line.split()[2:]
    return names


def _add_named(model: Model, terms, sense: Sense, rhs: float, tag: str, name: str) -> None:
    con = make_constraint(terms, sense, rhs, tag, name)
    model.add_constraint(con)


# -----------------------------------------------------------------------------

def _vars_comment(model: Model, prefix: str) -> list[str]:
    return _wrap(f"{prefix} vars", [v.name for v in model.variables], indent=f"{prefix} vars ")


def _mps_line(*fields: str) -> str:
    widths = (2, 8, 8, 12, 8, 12)
    out = " "
    for f, w in zip(fields, widths):
        out += f.ljust(w) + "  "
    return out.rstrip()


def export_mps(model: Model) -> str:
    _check_names(model)
    lines = ["* " + l[2:] for l in _meta_lines(model, "\\")]
    lines += _vars_comment(model, "*")
    lines.append(f"NAME          {model.name}")
    lines.append("ROWS")
    lines.append(" N  obj")
    code = {Sense.LE: "L", Sense.GE: "G", Sense.EQ: "E"}
    for con in model.constraints:
        lines.append(f" {code[con.sense]}  {con.name}")
    lines.append("COLUMNS")
    column: dict[int, list[tuple[str, float]]] = {v.id: [] for v in model.variables}
    for coef, vid in model.objective:
        column[vid].append(("obj", coef))
    for con in model.constraints:
        for coef, vid in con.terms:
            column[vid].append((con.name, coef))
    in_int = False
    marks = 0
    for v in model.variables:
        if v.kind.is_integer and not in_int:
            lines.append(_mps_line("", "MARKER", "'MARKER'", "", "'INTORG'"))
            in_int, marks = True, marks + 1
        if not v.kind.is_integer and in_int:
            lines.append(_mps_line("", "MARKER", "'MARKER'", "", "'INTEND'"))
            in_int = False
        entries = column[v.id] or [("obj", 0.0)]
        for row, coef in entries:
            lines.append(_mps_line("", v.name, row, _num(coef)))
    if in_int:
        lines.append(_mps_line("", "MARKER", "'MARKER'", "", "'INTEND'"))
    lines.append("RHS")
    for con in model.constraints:
        if con.rhs != 0:
            lines.append(_mps_line("", "RHS", con.name, _num(con.rhs)))
    if model.constant != 0:
        # objective constant is carried as the negated objective RHS
        lines.append(_mps_line("", "RHS", "obj", _num(-model.constant)))
    lines.append("BOUNDS")
    for v in model.variables:
        lo, hi = v.lower, v.upper
        if v.kind is VarKind.BINARY and lo == 0 and hi == 1:
            lines.append(_mps_line("BV", "BND", v.name))
        elif lo == -INF and hi == INF:
            lines.append(_mps_line("FR", "BND", v.name))
        elif lo == hi:
            lines.append(_mps_line("FX", "BND", v.name, _num(lo)))
        else:
            if lo == -INF:
                lines.append(_mps_line("MI", "BND", v.name))
            elif lo != 0 or v.kind.is_integer:
                lines.append(_mps_line("LO", "BND", v.name, _num(lo)))
            if hi != INF:
                lines.append(_mps_line("UP", "BND", v.name, _num(hi)))
            elif v.kind.is_integer:
                lines.append(_mps_line("PL", "BND", v.name))
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def import_mps(text: str) -> Model:
    model = Model()
    section = None
    senses: dict[str, Sense] = {}
    row_order: list[str] = []
    columns: dict[str, list[tuple[str, float]]] = {}
    kinds: dict[str, VarKind] = {}
    rhs: dict[str, float] = {}
    bounds: dict[str, list[float]] = {}
    bv: set[str] = set()
    in_int = False
    for line in text.splitlines():
        if line.startswith("*"):
            body = line[1:].strip()
            if not body.startswith("vars"):
                _parse_meta(body, model)
            continue
        if not line.strip():
            continue
        if not line.startswith(" "):
            head = line.split()
            section = head[0]
            if section == "NAME" and len(head) > 1:
                model.name = head[1]
            continue
        tok = line.split()
        if section == "ROWS":
            if tok[0] != "N":
                senses[tok[1]] = {"L": Sense.LE, "G": Sense.GE, "E": Sense.EQ}[tok[0]]
                row_order.append(tok[1])
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1] == "'MARKER'":
                in_int = tok[2] == "'INTORG'"
                continue
            name = tok[0]
            columns.setdefault(name, [])
            kinds.setdefault(name, VarKind.INTEGER if in_int else VarKind.CONTINUOUS)
            for row, val in zip(tok[1::2], tok[2::2]):
                columns[name].append((row, float(val)))
        elif section == "RHS":
            for row, val in zip(tok[1::2], tok[2::2]):
                rhs[row] = float(val)
        elif section == "BOUNDS":
            typ, name = tok[0], tok[2]
            b = bounds.setdefault(name, [0.0, INF])
            val = float(tok[3]) if len(tok) > 3 else 0.0
            if typ == "BV":
                bv.add(name)
                b[0], b[1] = 0.0, 1.0
            elif typ == "FR":
                b[0], b[1] = -INF, INF
            elif typ == "MI":
                b[0] = -INF
            elif typ == "PL":
                b[1] = INF
            elif typ == "FX":
                b[0] = b[1] = val
            elif typ == "LO":
                b[0] = val
            elif typ == "UP":
                b[1] = val
            else:
                raise FormatError(f"unsupported bound type {typ}")
    for name in columns:
        kind = kinds[name]
        if name in bv:
            kind = VarKind.BINARY
        lo, hi = bounds.get(name, [0.0, INF])
        model.add_variable(name, kind, lo, hi)
    obj, rows = [], {r: [] for r in row_order}
    for name, entries in columns.items():
        vid = model.var(name)
        for row, coef in entries:
            if row == "obj":
                if coef != 0:
                    obj.append((coef, vid))
            else:
                rows[row].append((coef, vid))
    model.set_objective(obj, -rhs.get("obj", 0.0))
    for r in row_order:
        tag = r.rsplit("_", 1)[0] if re.search(r"_\d+$", r) else r
        _add_named(model, rows[r], senses[r], rhs.get(r, 0.0), tag, r)
    return model


def read_model(path) -> Model:
    with open(path) as fh:
        text = fh.read()
    if str(path).lower().endswith(".mps"):
        return import_mps(text)
    return import_lp(text)


def write_model(model: Model, path) -> None:
    text = export_mps(model) if str(path).lower().endswith(".mps") else export_lp(model)
    with open(path, "w") as fh:
        fh.write(text)
