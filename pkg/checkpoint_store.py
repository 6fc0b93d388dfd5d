# checkpoint_store.py

"""
Binary tensor-record files: checkpoints, standalone worlds and latent codes.

Layout (all integers little-endian):

    header    "IDSE"  u32 version
    config    u32 length, utf-8 key=value text (may be empty)
    metrics   u32 length, utf-8 key=value text (may be empty)
    count     u32 number of records
    record    u32 name length, name bytes, u32 rank, rank x u64 dims,
              prod(dims) x f8 payload

Records keep their insertion order, so save -> load -> save reproduces the
same bytes.
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from config import TrainConfig
from editor_model import PARAM_NAMES, EditorParams
from errors import CheckpointError, ErrorCode, LatentShapeError
from objectives import LossReport
from optimizer import OptimizerState
from synthetic_world import SyntheticWorld, world_from_records, world_to_records

logger = logging.getLogger(__name__)

MAGIC = b"IDSE"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sI")
U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")
MAX_RANK = 8

EDITOR_PREFIX = "editor/"
WORLD_PREFIX = "world/"
FIRST_MOMENT_PREFIX = "optimizer/first_moment/"
BELIEF_PREFIX = "optimizer/belief/"
STEP_RECORD = "optimizer/step"
LATENT_RECORD = "latent"

PathLike = Union[str, Path]


@dataclass
class RecordFile:
    """Decoded contents of one record file"""
    records: Dict[str, np.ndarray] = field(default_factory=dict)
    config_text: str = ""
    metrics: Dict[str, float] = field(default_factory=dict)


@dataclass
class Checkpoint:
    """Trained state: config snapshot, the world it was trained against, editor and optimizer"""
    config: TrainConfig
    world: SyntheticWorld
    params: EditorParams
    optimizer: Optional[OptimizerState] = None
    metrics: Dict[str, float] = field(default_factory=dict)
    history: List[LossReport] = field(default_factory=list)  # not persisted


# =============================================================================
# Codec
# =============================================================================

def _metrics_text(metrics: Dict[str, float]) -> str:
    return "".join(f"{key}={float(value)!r}\n" for key, value in metrics.items())


def _parse_metrics(text: str) -> Dict[str, float]:
    metrics = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        try:
            metrics[key] = float(value)
        except ValueError:
            raise CheckpointError(f"bad metric line {line!r}")
    return metrics


def encode_records(records: Dict[str, np.ndarray], config_text: str = "",
                   metrics: Optional[Dict[str, float]] = None) -> bytes:
    chunks = [HEADER.pack(MAGIC, FORMAT_VERSION)]
    for text in (config_text, _metrics_text(metrics or {})):
        raw = text.encode("utf-8")
        chunks += [U32.pack(len(raw)), raw]
    chunks.append(U32.pack(len(records)))
    for name, tensor in records.items():
        array = np.asarray(tensor, dtype=np.float64)
        encoded_name = name.encode("utf-8")
        chunks += [U32.pack(len(encoded_name)), encoded_name, U32.pack(array.ndim)]
        chunks += [U64.pack(dim) for dim in array.shape]
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.source = source
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointError(f"{self.source}: {what} truncated "
                                  f"(needs {size} bytes at offset {self.offset}, file has {len(self.data)})")
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return U32.unpack(self.take(U32.size, what))[0]


def decode_records(data: bytes, source: str = "<bytes>") -> RecordFile:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source} does not start with {MAGIC!r}", code=ErrorCode.NOT_A_CHECKPOINT)
    if len(data) < HEADER.size:
        raise CheckpointError(f"{source}: header truncated", code=ErrorCode.TRUNCATED_HEADER)
    _, version = HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source} has format version {version}, this build reads {FORMAT_VERSION}",
                              code=ErrorCode.UNSUPPORTED_VERSION)

    reader = _Reader(data, source)
    reader.offset = HEADER.size
    try:
        texts = []
        for block in ("config block", "metrics block"):
            texts.append(reader.take(reader.u32(block), block).decode("utf-8"))
        count = reader.u32("record count")
    except CheckpointError as e:
        raise CheckpointError(e.message, code=ErrorCode.TRUNCATED_HEADER)
    except UnicodeDecodeError:
        raise CheckpointError(f"{source}: header text is not utf-8", code=ErrorCode.TRUNCATED_HEADER)

    result = RecordFile(config_text=texts[0], metrics=_parse_metrics(texts[1]))
    for index in range(count):
        label = f"record #{index}"
        name_length = reader.u32(label)
        try:
            name = reader.take(name_length, label).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{source}: {label} has an undecodable name")
        rank = reader.u32(f"record {name!r}")
        if rank > MAX_RANK:
            raise CheckpointError(f"{source}: record {name!r} claims rank {rank}")
        dims = tuple(U64.unpack(reader.take(U64.size, f"record {name!r}"))[0] for _ in range(rank))
        size = math.prod(dims)
        remaining = len(data) - reader.offset
        if size > remaining // 8:
            raise CheckpointError(f"{source}: record {name!r} claims shape {dims}, "
                                  f"only {remaining} bytes remain")
        payload = reader.take(8 * size, f"record {name!r} payload")
        result.records[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if reader.offset != len(data):
        raise CheckpointError(f"{source}: {len(data) - reader.offset} trailing bytes after the last record")
    logger.debug(f"Decoded {count} records from {source}")
    return result


def write_records(path: PathLike, records: Dict[str, np.ndarray], config_text: str = "",
                  metrics: Optional[Dict[str, float]] = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_records(records, config_text, metrics))
    logger.debug(f"Wrote {len(records)} records to {path}")
    return path


def read_records(path: PathLike) -> RecordFile:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, "no such file", str(path))
    return decode_records(path.read_bytes(), str(path))


def _require(records: Dict[str, np.ndarray], name: str, source: str) -> np.ndarray:
    if name not in records:
        raise CheckpointError(f"{source}: missing record {name!r}")
    return records[name]


# =============================================================================
# Checkpoints
# =============================================================================

def checkpoint_records(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    records = {f"{EDITOR_PREFIX}{name}": value for name, value in ckpt.params.as_dict().items()}
    records.update(world_to_records(ckpt.world, WORLD_PREFIX))
    if ckpt.optimizer is not None:
        for name in PARAM_NAMES:
            records[f"{FIRST_MOMENT_PREFIX}{name}"] = ckpt.optimizer.first_moment[name]
        for name in PARAM_NAMES:
            records[f"{BELIEF_PREFIX}{name}"] = ckpt.optimizer.belief[name]
        records[STEP_RECORD] = np.array([[float(ckpt.optimizer.step)]])
    return records


def save_checkpoint(path: PathLike, ckpt: Checkpoint) -> Path:
    path = write_records(path, checkpoint_records(ckpt), ckpt.config.to_text(), ckpt.metrics)
    logger.info(f"Saved checkpoint {path}")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    source = str(path)
    contents = read_records(path)
    records = contents.records
    if not contents.config_text:
        raise CheckpointError(f"{source} has no config snapshot (a world or latent file?)",
                              code=ErrorCode.NOT_A_CHECKPOINT)
    config = TrainConfig.from_text(contents.config_text, source)
    params = EditorParams.from_dict({
        name: _require(records, f"{EDITOR_PREFIX}{name}", source) for name in PARAM_NAMES})
    world = world_from_records(records, WORLD_PREFIX)

    optimizer = None
    if STEP_RECORD in records:
        optimizer = OptimizerState(
            first_moment={name: _require(records, f"{FIRST_MOMENT_PREFIX}{name}", source) for name in PARAM_NAMES},
            belief={name: _require(records, f"{BELIEF_PREFIX}{name}", source) for name in PARAM_NAMES},
            step=int(records[STEP_RECORD][0, 0]),
        )
    logger.info(f"Loaded checkpoint {source} ({len(records)} records)")
    return Checkpoint(config=config, world=world, params=params, optimizer=optimizer,
                      metrics=contents.metrics)


def save_world(path: PathLike, world: SyntheticWorld) -> Path:
    return write_records(path, world_to_records(world, WORLD_PREFIX), metrics=world.diagnostics)


def load_world(path: PathLike) -> SyntheticWorld:
    return world_from_records(read_records(path).records, WORLD_PREFIX)


# =============================================================================
# Latent codes
# =============================================================================

def write_latent(path: PathLike, latent: np.ndarray) -> Path:
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 2:
        raise LatentShapeError(f"a latent code is rank 2 (L x d), got shape {latent.shape}")
    return write_records(path, {LATENT_RECORD: latent})


def read_latent(path: PathLike, expected_shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Read a single-record latent file; optionally check it against (L, d)."""
    records = read_records(path).records
    latent = _require(records, LATENT_RECORD, str(path))
    if latent.ndim != 2:
        raise LatentShapeError(f"{path}: latent must be rank 2, got rank {latent.ndim} {latent.shape}")
    if expected_shape is not None and latent.shape != tuple(expected_shape):
        raise LatentShapeError(f"{path}: latent shape {latent.shape} does not match "
                               f"checkpoint dims {tuple(expected_shape)}")
    return latent
