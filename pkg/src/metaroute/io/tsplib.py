"""Readers for the TSPLIB (EUC_2D) and CVRPLIB text formats."""

from __future__ import annotations

from typing import IO, Iterable

import numpy as np

from ..taskgen import Instance


class FormatError(ValueError):
    pass


_SECTIONS = ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION", "EDGE_WEIGHT_SECTION",
             "DISPLAY_DATA_SECTION", "TOUR_SECTION", "FIXED_EDGES_SECTION")


def _lines(text: str | IO[str]) -> list[str]:
    if not isinstance(text, str):
        text = text.read()
    return text.splitlines()


def _parse(text: str | IO[str]) -> tuple[dict[str, str], dict[str, list[tuple[int, list[str]]]]]:
    """Split a document into ``KEY : value`` specs and numbered section bodies."""
    spec: dict[str, str] = {}
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    current = None
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line:
            continue
        head = line.split()[0].rstrip(":").upper()
        if head == "EOF":
            break
        if head in _SECTIONS:
            current = head
            sections.setdefault(current, [])
            continue
        key, colon, value = line.partition(":")
        key = key.strip()
        if colon and key.replace("_", "").isalpha():
            spec[key.upper()] = value.strip()
            current = None
            continue
        if current is None:
            raise FormatError(f"line {lineno}: unexpected content {line!r}")
        sections[current].append((lineno, line.split()))
    return spec, sections


def _dimension(spec: dict[str, str]) -> int:
    if "DIMENSION" not in spec:
        raise FormatError("missing DIMENSION")
    try:
        return int(spec["DIMENSION"])
    except ValueError:
        raise FormatError(f"bad DIMENSION {spec['DIMENSION']!r}") from None


def _coords(rows: Iterable[tuple[int, list[str]]], dim: int) -> np.ndarray:
    pts = np.full((dim, 2), np.nan)
    seen = 0
    for lineno, tok in rows:
        if len(tok) != 3:
            raise FormatError(f"line {lineno}: malformed coordinate line")
        try:
            idx = int(tok[0])
            x, y = float(tok[1]), float(tok[2])
        except ValueError:
            raise FormatError(f"line {lineno}: malformed coordinate line") from None
        if not 1 <= idx <= dim:
            raise FormatError(f"line {lineno}: node index {idx} outside 1..{dim}")
        if not np.isnan(pts[idx - 1, 0]):
            raise FormatError(f"line {lineno}: duplicate node {idx}")
        pts[idx - 1] = (x, y)
        seen += 1
    if seen != dim:
        raise FormatError(f"DIMENSION is {dim} but {seen} coordinates were given")
    return pts


def _check_type(spec: dict[str, str], expected: str):
    kind = spec.get("TYPE", expected).split()[0].upper()
    if kind != expected:
        raise FormatError(f"unsupported TYPE {kind}")
    ewt = spec.get("EDGE_WEIGHT_TYPE", "").upper()
    if ewt != "EUC_2D":
        raise FormatError(f"unsupported EDGE_WEIGHT_TYPE {ewt or '(missing)'}")


def parse_tsplib(text: str | IO[str]) -> Instance:
    """Raw (unnormalized) TSP instance from a TSPLIB EUC_2D document."""
    spec, sections = _parse(text)
    _check_type(spec, "TSP")
    dim = _dimension(spec)
    if "NODE_COORD_SECTION" not in sections:
        raise FormatError("missing NODE_COORD_SECTION")
    pts = _coords(sections["NODE_COORD_SECTION"], dim)
    return Instance(coords=pts, name=spec.get("NAME"))


def parse_cvrplib(text: str | IO[str]) -> Instance:
    """CVRP instance; the depot becomes ``Instance.depot`` and the rest are customers."""
    spec, sections = _parse(text)
    _check_type(spec, "CVRP")
    dim = _dimension(spec)
    if "CAPACITY" not in spec:
        raise FormatError("missing CAPACITY")
    capacity = int(float(spec["CAPACITY"]))
    for name in ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION"):
        if name not in sections:
            raise FormatError(f"missing {name}")
    pts = _coords(sections["NODE_COORD_SECTION"], dim)
    demand = np.full(dim, -1, dtype=np.int64)
    for lineno, tok in sections["DEMAND_SECTION"]:
        if len(tok) != 2:
            raise FormatError(f"line {lineno}: malformed demand line")
        idx = int(tok[0])
        if not 1 <= idx <= dim:
            raise FormatError(f"line {lineno}: node index {idx} outside 1..{dim}")
        demand[idx - 1] = int(tok[1])
    if np.any(demand < 0):
        raise FormatError("DEMAND_SECTION does not cover every node")
    depots = [int(t) for _, tok in sections["DEPOT_SECTION"] for t in tok if int(t) != -1]
    if len(depots) != 1:
        raise FormatError("exactly one depot is supported")
    d = depots[0] - 1
    if not 0 <= d < dim:
        raise FormatError(f"depot index {d + 1} outside 1..{dim}")
    if demand[d] != 0:
        raise FormatError("depot demand must be 0")
    keep = np.arange(dim) != d
    inst = Instance(coords=pts[keep], depot=pts[d], demands=demand[keep], capacity=capacity,
                    name=spec.get("NAME"))
    inst.validate()
    return inst


def normalize(inst: Instance) -> tuple[Instance, float, np.ndarray]:
    """Shift to the origin and divide by the larger side of the bounding box.

    Returns the normalized instance, the divisor and the offset so costs can
    be mapped back by multiplying with the divisor.
    """
    pts = inst.all_points()
    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    if extent <= 0:
        extent = 1.0
    out = Instance(
        coords=(inst.coords - lo) / extent,
        depot=None if inst.depot is None else (inst.depot - lo) / extent,
        demands=None if inst.demands is None else inst.demands.copy(),
        capacity=inst.capacity,
        source_task=inst.source_task,
        name=inst.name,
    )
    return out, extent, lo


def format_tsplib(inst: Instance, name: str | None = None) -> str:
    lines = [f"NAME : {name or inst.name or 'instance'}", "TYPE : TSP", f"DIMENSION : {inst.n}",
             "EDGE_WEIGHT_TYPE : EUC_2D", "NODE_COORD_SECTION"]
    lines += [f"{i + 1} {x!r} {y!r}" for i, (x, y) in enumerate(inst.coords.tolist())]
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def format_cvrplib(inst: Instance, name: str | None = None) -> str:
    pts = inst.all_points()
    lines = [f"NAME : {name or inst.name or 'instance'}", "TYPE : CVRP", f"DIMENSION : {len(pts)}",
             "EDGE_WEIGHT_TYPE : EUC_2D", f"CAPACITY : {inst.capacity}", "NODE_COORD_SECTION"]
    lines += [f"{i + 1} {x!r} {y!r}" for i, (x, y) in enumerate(pts.tolist())]
    lines.append("DEMAND_SECTION")
    lines += [f"{i + 1} {d}" for i, d in enumerate([0] + inst.demands.tolist())]
    lines += ["DEPOT_SECTION", "1", "-1", "EOF"]
    return "\n".join(lines) + "\n"


def read_tsplib(path) -> Instance:
    with open(path) as fh:
        return parse_tsplib(fh)


def read_cvrplib(path) -> Instance:
    with open(path) as fh:
        return parse_cvrplib(fh)
