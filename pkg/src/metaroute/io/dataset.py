"""Line-delimited JSON datasets with a versioned header and a trailing checksum.

Layout: one header object, one object per instance, and a final
``{"checksum": ...}`` line holding the SHA-256 of every preceding byte.
Floats are written with ``repr`` precision so coordinates round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..edgenet import EdgeLabels
from ..solutions import RoutePlan, Tour
from ..taskgen import Instance, TaskSpec

FORMAT = "metaroute-dataset"
VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    instances: list[Instance]
    solutions: list[Tour | RoutePlan | None] = field(default_factory=list)
    costs: list[float | None] = field(default_factory=list)
    labels: list[EdgeLabels | None] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.instances)

    def labeled(self) -> list[tuple[Instance, EdgeLabels]]:
        if len(self.labels) != len(self.instances) or any(lab is None for lab in self.labels):
            raise DatasetError("dataset has no edge labels")
        return list(zip(self.instances, self.labels))


def _solution_record(sol) -> dict | None:
    if sol is None:
        return None
    if isinstance(sol, Tour):
        return {"tour": list(sol.order)}
    return {"routes": [list(r) for r in sol.routes]}


def _solution_from(rec):
    if rec is None:
        return None
    if "tour" in rec:
        return Tour(tuple(rec["tour"]))
    return RoutePlan(tuple(tuple(r) for r in rec["routes"]))


def _record(inst: Instance, sol, cost, lab) -> dict:
    rec = {
        "coords": inst.coords.tolist(),
        "name": inst.name,
        "task": inst.source_task.to_dict() if isinstance(inst.source_task, TaskSpec) else inst.source_task,
    }
    if inst.depot is not None:
        rec["depot"] = inst.depot.tolist()
        rec["demands"] = inst.demands.tolist()
        rec["capacity"] = inst.capacity
    if sol is not None:
        rec["solution"] = _solution_record(sol)
    if cost is not None:
        rec["cost"] = float(cost)
    if lab is not None:
        iu = np.argwhere(np.triu(lab.s, 1) > 0)
        rec["labels"] = {"n": lab.n, "edges": iu.tolist()}
    return rec


def _instance(rec: dict) -> Instance:
    task = rec.get("task", "external")
    return Instance(
        coords=np.array(rec["coords"], dtype=np.float64).reshape(-1, 2),
        depot=None if "depot" not in rec else np.array(rec["depot"], dtype=np.float64),
        demands=None if "demands" not in rec else np.array(rec["demands"], dtype=np.int64),
        capacity=rec.get("capacity"),
        source_task=TaskSpec.from_dict(task) if isinstance(task, dict) else task,
        name=rec.get("name"),
    )


def _labels(rec) -> EdgeLabels | None:
    if rec is None:
        return None
    s = np.zeros((rec["n"], rec["n"]))
    for a, b in rec["edges"]:
        s[a, b] = s[b, a] = 1.0
    return EdgeLabels(s)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_dataset(path, instances: Sequence[Instance], solutions: Sequence | None = None,
                  costs: Sequence[float] | None = None, labels: Sequence[EdgeLabels] | None = None,
                  meta: dict | None = None) -> Path:
    path = Path(path)
    n = len(instances)
    for name, seq in (("solutions", solutions), ("costs", costs), ("labels", labels)):
        if seq is not None and len(seq) != n:
            raise DatasetError(f"{name} length {len(seq)} does not match {n} instances")
    header = {"format": FORMAT, "version": VERSION, "count": n, "meta": meta or {}}
    lines = [_dump(header)]
    for i, inst in enumerate(instances):
        lines.append(_dump(_record(inst, solutions[i] if solutions is not None else None,
                                   costs[i] if costs is not None else None,
                                   labels[i] if labels is not None else None)))
    body = "\n".join(lines) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(body + _dump({"checksum": digest}) + "\n")
    return path


def read_dataset(path) -> Dataset:
    raw = Path(path).read_text()
    if not raw.endswith("\n"):
        raise DatasetError("checksum failure: file is truncated")
    body, _, last = raw[:-1].rpartition("\n")
    body += "\n"
    try:
        digest = json.loads(last)["checksum"]
    except (ValueError, KeyError, TypeError):
        raise DatasetError("checksum failure: trailer missing") from None
    if hashlib.sha256(body.encode()).hexdigest() != digest:
        raise DatasetError("checksum failure")
    lines = body.splitlines()
    header = json.loads(lines[0])
    if header.get("format") != FORMAT:
        raise DatasetError("not a dataset file")
    if header.get("version") != VERSION:
        raise DatasetError(f"unsupported dataset version {header.get('version')}")
    recs = [json.loads(line) for line in lines[1:]]
    if len(recs) != header["count"]:
        raise DatasetError("record count does not match header")
    ds = Dataset([_instance(r) for r in recs], meta=header.get("meta", {}))
    if any("solution" in r for r in recs):
        ds.solutions = [_solution_from(r.get("solution")) for r in recs]
    if any("cost" in r for r in recs):
        ds.costs = [r.get("cost") for r in recs]
    if any("labels" in r for r in recs):
        ds.labels = [_labels(r.get("labels")) for r in recs]
    return ds
