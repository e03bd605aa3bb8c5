"""Binary/JSON file formats for datasets, operators, and observation sets.

Complex arrays are stored as little-endian float32 interleaved (re, im),
row-major, with a JSON sidecar carrying shape, seeds, and generator
parameters. All readers funnel through ``note_read`` so tests can audit
which files a pipeline stage touched.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channels import ChannelDataset
from .errors import InvalidParameterError
from .observation import (
    ObservationOperator,
    PHASE_SHIFT,
    PILOT_SELECTION,
)

COMPLEX_DTYPE = np.dtype("<c8")  # interleaved float32 pairs

_read_log: list[str] | None = None


def note_read(path) -> None:
    if _read_log is not None:
        _read_log.append(str(path))


@contextmanager
def audit_reads():
    """Collect every file path read inside the block."""
    global _read_log
    prev, _read_log = _read_log, []
    try:
        yield _read_log
    finally:
        _read_log = prev


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=1, sort_keys=True))


def read_json(path) -> dict:
    note_read(path)
    return json.loads(Path(path).read_text())


def write_complex(path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr).astype(COMPLEX_DTYPE).tofile(str(path))


def read_complex(path, shape) -> np.ndarray:
    note_read(path)
    arr = np.fromfile(str(path), dtype=COMPLEX_DTYPE)
    return arr.reshape(shape)


def write_ints(path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr).astype("<i8").tofile(str(path))


def read_ints(path, shape) -> np.ndarray:
    note_read(path)
    return np.fromfile(str(path), dtype="<i8").reshape(shape)


# ---------------------------------------------------------------------------
# channel datasets


def save_dataset(dataset: ChannelDataset, directory, name: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_complex(directory / f"{name}.bin", dataset.samples)
    sidecar = {
        "format": "complex64-interleaved-le",
        "shape": list(dataset.samples.shape),
        "split": dataset.split_tag,
        "scenario": dataset.scenario,
        "seed": dataset.rng_seed,
        "normalization_scale": dataset.normalization_scale,
        "metadata": dataset.metadata,
    }
    write_json(directory / f"{name}.json", sidecar)
    return directory / f"{name}.bin"


def load_dataset(directory, name: str) -> ChannelDataset:
    directory = Path(directory)
    meta = read_json(directory / f"{name}.json")
    samples = read_complex(directory / f"{name}.bin", tuple(meta["shape"]))
    metadata = meta.get("metadata", {})
    if "angles" in metadata:
        metadata["angles"] = np.asarray(metadata["angles"])
    return ChannelDataset(
        samples=samples.astype(np.complex128),
        split_tag=meta["split"],
        scenario=meta["scenario"],
        rng_seed=meta["seed"],
        normalization_scale=meta["normalization_scale"],
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# observation operators


def save_operator(op: ObservationOperator, prefix) -> Path:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "kind": op.kind,
        "m_rows": op.m_rows,
        "n_cols": op.n_cols,
        "seed": op.seed,
        "grid_shape": list(op.grid_shape) if op.grid_shape else None,
    }
    if op.kind == PILOT_SELECTION:
        meta["indices"] = op.indices
    else:
        write_complex(prefix.with_suffix(".bin"), op.matrix)
    write_json(prefix.with_suffix(".json"), meta)
    return prefix.with_suffix(".json")


def load_operator(prefix) -> ObservationOperator:
    prefix = Path(prefix)
    meta = read_json(prefix.with_suffix(".json"))
    grid = tuple(meta["grid_shape"]) if meta.get("grid_shape") else None
    if meta["kind"] == PILOT_SELECTION:
        indices = np.asarray(meta["indices"], dtype=np.int64)
        return ObservationOperator(
            PILOT_SELECTION, meta["m_rows"], meta["n_cols"],
            indices=indices, grid_shape=grid, seed=meta["seed"],
        )
    matrix = read_complex(prefix.with_suffix(".bin"),
                          (meta["m_rows"], meta["n_cols"])).astype(np.complex128)
    return ObservationOperator(
        PHASE_SHIFT, meta["m_rows"], meta["n_cols"],
        matrix=matrix, grid_shape=grid, seed=meta["seed"],
    )


# ---------------------------------------------------------------------------
# pre-generated observation sets (training data for the real variants)


@dataclass
class ObservationSet:
    """Per-sample noisy observations with their operators and noise levels."""

    y: np.ndarray                 # (T, M) complex
    snr_db: np.ndarray            # (T,)
    kind: str                     # operator kind
    n_cols: int
    operator_seeds: np.ndarray | None = None   # (T,) per-sample phase-shift seeds
    pilot_indices: np.ndarray | None = None    # (T, M) per-sample pilot positions
    shared_operator: ObservationOperator | None = None
    grid_shape: tuple[int, int] | None = None

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def m_rows(self) -> int:
        return self.y.shape[1]

    @property
    def varying(self) -> bool:
        return self.shared_operator is None


def save_observations(obs: ObservationSet, prefix) -> Path:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_complex(Path(str(prefix) + ".bin"), obs.y)
    meta = {
        "format": "complex64-interleaved-le",
        "shape": list(obs.y.shape),
        "snr_db": obs.snr_db,
        "kind": obs.kind,
        "n_cols": obs.n_cols,
        "grid_shape": list(obs.grid_shape) if obs.grid_shape else None,
        "varying": obs.varying,
    }
    if obs.operator_seeds is not None:
        meta["operator_seeds"] = obs.operator_seeds
    if obs.pilot_indices is not None:
        write_ints(Path(str(prefix) + "_idx.bin"), obs.pilot_indices)
    if obs.shared_operator is not None:
        save_operator(obs.shared_operator, Path(str(prefix) + "_op"))
        meta["shared_operator"] = str(Path(str(prefix) + "_op").name)
    write_json(Path(str(prefix) + ".json"), meta)
    return Path(str(prefix) + ".json")


def load_observations(prefix) -> ObservationSet:
    prefix = Path(prefix)
    meta = read_json(Path(str(prefix) + ".json"))
    shape = tuple(meta["shape"])
    y = read_complex(Path(str(prefix) + ".bin"), shape)
    grid = tuple(meta["grid_shape"]) if meta.get("grid_shape") else None
    op_seeds = None
    pilot_idx = None
    shared = None
    if "operator_seeds" in meta:
        op_seeds = np.asarray(meta["operator_seeds"], dtype=np.int64)
    idx_path = Path(str(prefix) + "_idx.bin")
    if idx_path.exists():
        pilot_idx = read_ints(idx_path, shape)
    if meta.get("shared_operator"):
        shared = load_operator(prefix.parent / meta["shared_operator"])
    if op_seeds is None and pilot_idx is None and shared is None:
        raise InvalidParameterError(f"observation set {prefix} has no operator payload")
    return ObservationSet(
        y=y.astype(np.complex64),
        snr_db=np.asarray(meta["snr_db"], dtype=np.float64),
        kind=meta["kind"],
        n_cols=meta["n_cols"],
        operator_seeds=op_seeds,
        pilot_indices=pilot_idx,
        shared_operator=shared,
        grid_shape=grid,
    )
