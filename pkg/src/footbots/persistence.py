"""Dataset and checkpoint files, plus pitch normalisation.

Dataset file (``.fbds``)
    A text header line ``FBDS/<version> <json>\\n`` followed by one record
    per scene: ``R <nbytes>\\n<payload>\\n``. The payload is little-endian
    ``roles:int8[M] | ids:int32[M] | behaviors:int8[M] | positions:float32[M, t+T, 2]``.

Checkpoint file (``.fbck``)
    ``b"FBCK"``, ``uint32`` version, ``uint64`` header length, a JSON header
    listing every array (name, dtype, shape, offset), then the raw
    little-endian array bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .exceptions import (
    ConfigMismatchError,
    DataError,
    RecordShapeError,
    TruncatedFileError,
    VersionError,
)
from .model import FootBots, ModelConfig, SequenceSample
from .optim import OptimizerState

__all__ = [
    "Checkpoint",
    "DatasetFile",
    "DatasetHeader",
    "denormalize",
    "iter_dataset",
    "load_checkpoint",
    "load_dataset",
    "normalize_real_sequence",
    "read_dataset_header",
    "save_checkpoint",
    "save_dataset",
    "standardize_agent_order",
]

DATASET_MAGIC = "FBDS"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"FBCK"
CHECKPOINT_VERSION = 1
DEFAULT_PITCH = (105.0, 68.0)


# -- datasets --------------------------------------------------------------


@dataclass
class DatasetHeader:
    M: int
    t: int
    T: int
    k: int = 2
    count: int = 0
    units: str = "m"
    normalized: bool = False
    pitch: tuple[float, float] | None = None
    version: int = DATASET_VERSION

    @property
    def frames(self) -> int:
        return self.t + self.T

    @property
    def record_bytes(self) -> int:
        return self.M * (1 + 4 + 1) + 4 * self.M * self.frames * 2

    @property
    def unit_scale(self) -> float:
        """Meters per stored coordinate unit."""
        if not self.normalized:
            return 1.0
        length, width = self.pitch or DEFAULT_PITCH
        return max(length, width) / 2.0

    def to_json(self) -> str:
        data = {
            "version": self.version,
            "M": self.M,
            "t": self.t,
            "T": self.T,
            "k": self.k,
            "count": self.count,
            "units": self.units,
            "normalized": self.normalized,
            "pitch": list(self.pitch) if self.pitch else None,
        }
        return json.dumps(data, sort_keys=True)


@dataclass
class DatasetFile:
    header: DatasetHeader
    samples: list[SequenceSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)


def _encode_record(sample: SequenceSample, header: DatasetHeader) -> bytes:
    if (sample.M, sample.t, sample.T) != (header.M, header.t, header.T):
        raise RecordShapeError(
            f"scene (M={sample.M}, t={sample.t}, T={sample.T}) does not match header "
            f"(M={header.M}, t={header.t}, T={header.T})"
        )
    behaviors = sample.behaviors if sample.behaviors is not None else np.full(sample.M, -1)
    return b"".join(
        [
            sample.roles.astype("<i1").tobytes(),
            sample.agent_ids.astype("<i4").tobytes(),
            np.asarray(behaviors).astype("<i1").tobytes(),
            np.ascontiguousarray(sample.positions, dtype="<f4").tobytes(),
        ]
    )


def save_dataset(path, samples: Iterable[SequenceSample], k: int = 2, units: str = "m",
                 normalized: bool = False, pitch=None, shape: tuple[int, int, int] | None = None) -> DatasetHeader:
    """Write scenes to ``path``; all scenes must share ``(M, t, T)``.

    ``shape`` gives ``(M, t, T)`` explicitly, which an empty dataset needs.
    """
    samples = list(samples)
    if samples:
        first = samples[0]
        dims = (first.M, first.t, first.T)
    elif shape is not None:
        dims = tuple(shape)
    else:
        raise DataError("an empty dataset needs an explicit (M, t, T) shape")
    header = DatasetHeader(
        M=dims[0], t=dims[1], T=dims[2], k=k, count=len(samples), units=units,
        normalized=normalized, pitch=tuple(pitch) if pitch else None,
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"{DATASET_MAGIC}/{DATASET_VERSION} {header.to_json()}\n".encode())
        for sample in samples:
            payload = _encode_record(sample, header)
            fh.write(f"R {len(payload)}\n".encode())
            fh.write(payload)
            fh.write(b"\n")
    os.replace(tmp, path)
    return header


def _parse_header(line: bytes) -> DatasetHeader:
    try:
        text = line.decode("utf-8")
        tag, payload = text.rstrip("\n").split(" ", 1)
        magic, version = tag.split("/")
        data = json.loads(payload)
    except (UnicodeDecodeError, ValueError) as exc:
        raise VersionError(f"unrecognised dataset header: {line[:40]!r}") from exc
    if magic != DATASET_MAGIC:
        raise VersionError(f"bad dataset magic {magic!r}")
    if version != str(DATASET_VERSION) or data.get("version") != DATASET_VERSION:
        raise VersionError(f"unsupported dataset version {version!r}")
    try:
        header = DatasetHeader(
            M=int(data["M"]), t=int(data["t"]), T=int(data["T"]), k=int(data["k"]),
            count=int(data["count"]), units=str(data["units"]),
            normalized=bool(data["normalized"]),
            pitch=tuple(data["pitch"]) if data.get("pitch") else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise VersionError(f"dataset header is missing fields: {exc}") from exc
    if min(header.M, header.t, header.T) < 1 or header.count < 0:
        raise RecordShapeError(f"invalid dimensions in dataset header: {data}")
    return header


def read_dataset_header(path) -> DatasetHeader:
    with open(path, "rb") as fh:
        return _parse_header(fh.readline())


def iter_dataset(path) -> Iterator[SequenceSample]:
    """Stream scenes one at a time, validating each record."""
    with open(path, "rb") as fh:
        header = _parse_header(fh.readline())
        yield from _iter_records(fh, header)


def _iter_records(fh, header: DatasetHeader) -> Iterator[SequenceSample]:
    m, frames = header.M, header.frames
    for i in range(header.count):
        line = fh.readline()
        if not line:
            raise TruncatedFileError(f"file ends after {i} of {header.count} records")
        if not line.endswith(b"\n"):
            raise TruncatedFileError(f"record {i} has a truncated length prefix")
        try:
            tag, size = line.split()
            size = int(size)
        except ValueError:
            raise RecordShapeError(f"record {i} has a malformed prefix {line[:40]!r}") from None
        if tag != b"R":
            raise RecordShapeError(f"record {i} has a malformed prefix {line[:40]!r}")
        if size != header.record_bytes:
            raise RecordShapeError(
                f"record {i} holds {size} bytes, header dimensions imply {header.record_bytes}"
            )
        payload = fh.read(size + 1)
        if len(payload) < size + 1:
            raise TruncatedFileError(f"record {i} is truncated ({len(payload)} of {size + 1} bytes)")
        if payload[-1:] != b"\n":
            raise RecordShapeError(f"record {i} is not terminated by a newline")
        o = 0
        roles = np.frombuffer(payload, "<i1", m, o).astype(np.int64)
        o += m
        ids = np.frombuffer(payload, "<i4", m, o).astype(np.int64)
        o += 4 * m
        behaviors = np.frombuffer(payload, "<i1", m, o).astype(np.int64)
        o += m
        positions = np.frombuffer(payload, "<f4", m * frames * 2, o).reshape(m, frames, 2)
        try:
            yield SequenceSample(
                positions.astype(np.float32),
                roles,
                header.t,
                agent_ids=ids,
                behaviors=None if np.all(behaviors == -1) else behaviors,
            )
        except DataError as exc:
            raise RecordShapeError(f"record {i}: {exc}") from exc


def load_dataset(path) -> DatasetFile:
    """Read a whole dataset; any decoding error aborts before returning."""
    with open(path, "rb") as fh:
        header = _parse_header(fh.readline())
        samples = list(_iter_records(fh, header))
        if fh.read(1):
            raise RecordShapeError(f"trailing bytes after {header.count} records")
    return DatasetFile(header, samples)


# -- pitch normalisation ---------------------------------------------------


def normalize_real_sequence(raw, roles, t: int, pitch_length: float = DEFAULT_PITCH[0],
                            pitch_width: float = DEFAULT_PITCH[1], possession_side: str = "right",
                            agent_ids=None, margin: float = 0.1) -> SequenceSample:
    """Scale centre-origin pitch coordinates (meters) into ``[-1, 1]``.

    Coordinates are divided by half the larger pitch dimension. When the
    team in possession attacks towards negative x (``possession_side ==
    "left"``) every x coordinate is mirrored so play always runs rightward.
    Points further than ``margin`` (as a fraction of the half-extent) outside
    the pitch raise :class:`DataError`. Positions stay float64; storing them
    in a dataset file rounds them to float32 (about 3e-6 m at pitch scale).
    """
    if pitch_length <= 0 or pitch_width <= 0:
        raise DataError("pitch dimensions must be positive")
    if possession_side not in ("right", "left"):
        raise DataError(f"possession_side must be 'right' or 'left', got {possession_side!r}")
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[-1] != 2:
        raise DataError(f"raw positions must have shape [M, frames, 2], got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise DataError("raw positions contain NaN or infinite values")
    limits = np.array([pitch_length, pitch_width]) / 2.0 * (1.0 + margin)
    if np.any(np.abs(raw) > limits):
        raise DataError("positions lie more than the allowed margin outside the pitch")
    half = max(pitch_length, pitch_width) / 2.0
    out = raw / half
    if possession_side == "left":
        out[..., 0] = -out[..., 0]
    return SequenceSample(out, roles, t, agent_ids=agent_ids)


def denormalize(positions, pitch_length: float = DEFAULT_PITCH[0],
                pitch_width: float = DEFAULT_PITCH[1], possession_side: str = "right") -> np.ndarray:
    """Inverse of :func:`normalize_real_sequence` for coordinate arrays ``[..., 2]``."""
    out = np.array(positions, dtype=np.float64, copy=True)
    if possession_side == "left":
        out[..., 0] = -out[..., 0]
    return out * (max(pitch_length, pitch_width) / 2.0)


def standardize_agent_order(sample: SequenceSample) -> SequenceSample:
    """Reorder agents by (role, agent id): ball, then defense, then offense."""
    order = np.lexsort((sample.agent_ids, sample.roles))
    return sample.permuted(order)


# -- checkpoints -----------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    optimizer: OptimizerState | None = None
    metadata: dict = field(default_factory=dict)

    def build_model(self) -> FootBots:
        model = FootBots(self.config, rng=0)
        model.load_state_dict(self.params)
        return model


def _blobs(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    items = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    if ckpt.optimizer is not None:
        items += [(f"opt.m/{k}", v) for k, v in ckpt.optimizer.m.items()]
        items += [(f"opt.v/{k}", v) for k, v in ckpt.optimizer.v.items()]
    return items


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in _blobs(ckpt):
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    opt = None
    if ckpt.optimizer is not None:
        s = ckpt.optimizer
        opt = {"step": s.step, "lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps}
    header = json.dumps(
        {"config": ckpt.config.to_dict(), "metadata": ckpt.metadata, "optimizer": opt,
         "entries": entries},
        sort_keys=True,
    ).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; shapes are checked against a model built from its config.

    Raises :class:`ConfigMismatchError` when ``expected_config`` differs from
    the stored one or a parameter shape disagrees with the stored config.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise VersionError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    if len(data) < 16:
        raise TruncatedFileError(f"{path}: checkpoint header is truncated")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    if len(data) < 16 + hlen:
        raise TruncatedFileError(f"{path}: checkpoint header is truncated")
    try:
        header = json.loads(data[16 : 16 + hlen])
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise VersionError(f"{path}: unreadable checkpoint header ({exc})") from exc
    if expected_config is not None and expected_config.to_dict() != config.to_dict():
        raise ConfigMismatchError(
            f"{path}: stored config {config.to_dict()} differs from expected {expected_config.to_dict()}"
        )
    body = data[16 + hlen :]
    arrays: dict[str, np.ndarray] = {}
    for e in header["entries"]:
        end = e["offset"] + e["nbytes"]
        if end > len(body):
            raise TruncatedFileError(f"{path}: blob {e['name']!r} is truncated")
        arr = np.frombuffer(body, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=e["offset"]).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    expected_shapes = {k: p.shape for k, p in FootBots(config, rng=0).named_parameters().items()}
    actual_shapes = {k: v.shape for k, v in params.items()}
    if expected_shapes != actual_shapes:
        diff = sorted(set(expected_shapes.items()) ^ set(actual_shapes.items()))
        raise ConfigMismatchError(f"{path}: parameter shapes disagree with stored config: {diff[:4]}")
    optimizer = None
    if header.get("optimizer"):
        o = header["optimizer"]
        optimizer = OptimizerState(
            lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"],
            m={k[len("opt.m/"):]: v for k, v in arrays.items() if k.startswith("opt.m/")},
            v={k[len("opt.v/"):]: v for k, v in arrays.items() if k.startswith("opt.v/")},
        )
    return Checkpoint(config, params, optimizer, header.get("metadata", {}))
