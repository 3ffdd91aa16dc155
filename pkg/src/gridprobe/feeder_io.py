"""Plain-text feeder file format.

A feeder file has a ``[lines]`` table (id, from, to, r_pu, x_pu, switchable),
an optional ``[loads]`` table (bus, p_pu, q_pu) and an optional ``[status]``
section naming the energized line ids. Without a status section every line
is energized, which only validates when the candidate set itself is a tree.
``#`` starts a comment.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FeederError, ParseError
from .feeder import Feeder, Line


def parse_feeder_text(text: str) -> Feeder:
    lines: list[Line] = []
    loads: dict[int, tuple[float, float]] = {}
    status_ids: list[str] | None = None
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            section = body.strip("[]").lower()
            if section not in ("lines", "loads", "status"):
                raise ParseError(f"unknown section {body!r}", line=lineno)
            if section == "status":
                status_ids = []
            continue
        if section == "lines":
            parts = body.split()
            if len(parts) != 6:
                raise ParseError(
                    f"expected 'id from to r_pu x_pu switchable', got {body!r}",
                    line=lineno,
                )
            try:
                ln = Line(parts[0], int(parts[1]), int(parts[2]),
                          float(parts[3]), float(parts[4]),
                          bool(int(parts[5])))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if ln.r <= 0 or ln.x <= 0:
                raise ParseError(f"line {ln.id!r} must have positive impedance", line=lineno)
            if any(prev.id == ln.id for prev in lines):
                raise ParseError(f"duplicate line id {ln.id!r}", line=lineno)
            lines.append(ln)
        elif section == "loads":
            parts = body.split()
            if len(parts) != 3:
                raise ParseError(f"expected 'bus p_pu q_pu', got {body!r}", line=lineno)
            try:
                bus, p, q = int(parts[0]), float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if bus in loads:
                raise ParseError(f"duplicate load entry for bus {bus}", line=lineno)
            loads[bus] = (p, q)
        elif section == "status":
            status_ids.extend(body.split())
        else:
            raise ParseError(f"content outside any section: {body!r}", line=lineno)
    if not lines:
        raise ParseError("feeder file has no [lines] section")

    n = max(max(ln.from_bus, ln.to_bus) for ln in lines) + 1
    p_load = np.zeros(n)
    q_load = np.zeros(n)
    for bus, (p, q) in loads.items():
        if not 0 <= bus < n:
            raise ParseError(f"load references unknown bus {bus}")
        p_load[bus] = p
        q_load[bus] = q
    status = None
    if status_ids is not None:
        ids = {ln.id: k for k, ln in enumerate(lines)}
        status = np.zeros(len(lines), dtype=np.int8)
        for sid in status_ids:
            if sid not in ids:
                raise ParseError(f"status names unknown line id {sid!r}")
            status[ids[sid]] = 1
    try:
        return Feeder(lines, status=status, p_load=p_load, q_load=q_load)
    except FeederError as exc:
        raise ParseError(str(exc)) from exc


def load_feeder(path) -> Feeder:
    return parse_feeder_text(Path(path).read_text())


def feeder_to_text(f: Feeder) -> str:
    out = ["[lines]", "# id from to r_pu x_pu switchable"]
    for ln in f.lines:
        out.append(f"{ln.id} {ln.from_bus} {ln.to_bus} {ln.r!r} {ln.x!r} {int(ln.switchable)}")
    if f.p_load.any() or f.q_load.any():
        out.append("[loads]")
        out.append("# bus p_pu q_pu")
        for bus in range(1, f.node_count):
            if f.p_load[bus] or f.q_load[bus]:
                out.append(f"{bus} {f.p_load[bus]!r} {f.q_load[bus]!r}")
    out.append("[status]")
    out.append(" ".join(ln.id for ln, b in zip(f.lines, f.status) if b))
    return "\n".join(out) + "\n"
