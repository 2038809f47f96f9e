"""Parameter and meta-training checkpoints (``.npz`` arrays plus a JSON blob)."""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from ..metatrain import MetaState
from ..params import Architecture, ParameterSet
from ..rltrain import AdamState


def _pack(prefix: str, p: ParameterSet, out: dict) -> None:
    for k, v in p.arrays.items():
        out[f"{prefix}/{k}"] = v


def _unpack(prefix: str, names: list[str], arrays, arch: Architecture) -> ParameterSet:
    return ParameterSet({k: np.array(arrays[f"{prefix}/{k}"]) for k in names}, arch)


def _write_npz(path: Path, arrays: dict[str, np.ndarray]) -> None:
    """Uncompressed ``.npz`` with fixed entry timestamps, so identical input gives identical bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for k, v in arrays.items():
            info = zipfile.ZipInfo(k + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(v), allow_pickle=False)


def save_params(path, params: ParameterSet, meta: dict | None = None) -> Path:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    _pack("theta", params, arrays)
    info = {"kind": "params", "arch": params.arch.to_dict(), "names": params.names(), "meta": meta or {}}
    arrays["__info__"] = np.frombuffer(json.dumps(info, sort_keys=True).encode(), dtype=np.uint8)
    _write_npz(path, arrays)
    return path


def _info(data) -> dict:
    return json.loads(bytes(data["__info__"]).decode())


def load_params(path) -> tuple[ParameterSet, dict]:
    with np.load(path) as data:
        info = _info(data)
        arch = Architecture.from_dict(info["arch"])
        if info["kind"] == "params":
            return _unpack("theta", info["names"], data, arch), info["meta"]
        if info["kind"] == "meta_state":
            return _unpack("theta", info["names"], data, arch), info.get("meta", {})
    raise ValueError(f"unknown checkpoint kind {info['kind']!r}")


def save_meta_state(path, st: MetaState, meta: dict | None = None) -> Path:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    _pack("theta", st.theta, arrays)
    for ti, b in st.baselines.items():
        _pack(f"baseline/{ti}", b, arrays)
    for ti, a in st.adam.items():
        _pack(f"adam_m/{ti}", a.m, arrays)
        _pack(f"adam_v/{ti}", a.v, arrays)
    info = {
        "kind": "meta_state", "arch": st.theta.arch.to_dict(), "names": st.theta.names(),
        "eps": st.eps, "iteration": st.iteration, "baselines": sorted(st.baselines),
        "adam_steps": {str(k): a.step for k, a in st.adam.items()},
        "lr": {str(k): v for k, v in st.lr.items()}, "rng": st.rng, "log": st.log, "meta": meta or {},
    }
    arrays["__info__"] = np.frombuffer(json.dumps(info, sort_keys=True).encode(), dtype=np.uint8)
    _write_npz(path, arrays)
    return path


def load_meta_state(path) -> MetaState:
    with np.load(path) as data:
        info = _info(data)
        if info["kind"] != "meta_state":
            raise ValueError("not a meta-training checkpoint")
        arch = Architecture.from_dict(info["arch"])
        names = info["names"]
        theta = _unpack("theta", names, data, arch)
        baselines = {int(t): _unpack(f"baseline/{t}", names, data, arch) for t in info["baselines"]}
        adam = {
            int(t): AdamState(_unpack(f"adam_m/{t}", names, data, arch), _unpack(f"adam_v/{t}", names, data, arch),
                              int(step))
            for t, step in info["adam_steps"].items()
        }
    return MetaState(
        theta=theta, eps=info["eps"], iteration=info["iteration"], baselines=baselines, adam=adam,
        lr={int(k): v for k, v in info["lr"].items()}, rng=info["rng"], log=info["log"],
    )
