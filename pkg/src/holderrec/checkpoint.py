"""Portable binary checkpoint for trained models.

Layout: magic bytes ``HLRP``, little-endian u32 format version, a
length-prefixed UTF-8 JSON metadata document (schema columns, scaler
stats, training config, training quarter), then one record per parameter:
length-prefixed name, u32 rank, u64 dims, raw little-endian float64
payload.  Raw float bytes make the round-trip bit-exact by construction.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"HLRP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    version: int
    metadata: dict
    params: dict  # name -> float64 ndarray, insertion-ordered


def _config_metadata(config) -> dict:
    from .sage import AggregatorKind

    out = {}
    for key, val in vars(config).items():
        out[key] = val.value if isinstance(val, AggregatorKind) else val
    return out


def _scaler_metadata(scalers: dict) -> dict:
    return {kind: {"min": s.col_min.tolist(), "max": s.col_max.tolist()}
            for kind, s in sorted(scalers.items())}


def checkpoint_from_model(model) -> Checkpoint:
    metadata = {
        "schema": [list(c) for c in model.schema.columns] if model.schema else None,
        "scalers": _scaler_metadata(model.scalers),
        "config": _config_metadata(model.config),
        "train_quarter": model.train_quarter,
    }
    params = {name: p.data for name, p in model.store.items()}
    return Checkpoint(version=VERSION, metadata=metadata, params=params)


def write_checkpoint(checkpoint: Checkpoint, stream):
    meta = json.dumps(checkpoint.metadata, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    stream.write(MAGIC)
    stream.write(struct.pack("<I", checkpoint.version))
    stream.write(struct.pack("<I", len(meta)))
    stream.write(meta)
    stream.write(struct.pack("<I", len(checkpoint.params)))
    for name, arr in checkpoint.params.items():
        encoded = name.encode("utf-8")
        stream.write(struct.pack("<I", len(encoded)))
        stream.write(encoded)
        stream.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            stream.write(struct.pack("<Q", dim))
        stream.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, model_or_checkpoint):
    ckpt = (model_or_checkpoint if isinstance(model_or_checkpoint, Checkpoint)
            else checkpoint_from_model(model_or_checkpoint))
    with open(path, "wb") as fh:
        write_checkpoint(ckpt, fh)


def _read_exact(stream, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def read_checkpoint(stream) -> Checkpoint:
    if _read_exact(stream, 4, "magic bytes") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    version = struct.unpack("<I", _read_exact(stream, 4, "version"))[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    meta_len = struct.unpack("<I", _read_exact(stream, 4, "metadata length"))[0]
    try:
        metadata = json.loads(_read_exact(stream, meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    n_params = struct.unpack("<I", _read_exact(stream, 4, "parameter count"))[0]
    params = {}
    for _ in range(n_params):
        name_len = struct.unpack("<I", _read_exact(stream, 4, "name length"))[0]
        name = _read_exact(stream, name_len, "parameter name").decode("utf-8")
        rank = struct.unpack("<I", _read_exact(stream, 4, "rank"))[0]
        if rank != 2:
            raise CheckpointError(f"parameter '{name}' has unsupported rank {rank}")
        dims = tuple(struct.unpack("<Q", _read_exact(stream, 8, "dimension"))[0]
                     for _ in range(rank))
        count = int(np.prod(dims)) if dims else 0
        payload = _read_exact(stream, count * 8, f"payload of '{name}'")
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    trailing = stream.read(1)
    if trailing:
        raise CheckpointError("trailing bytes after the last parameter record")
    return Checkpoint(version=version, metadata=metadata, params=params)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return read_checkpoint(fh)


def model_from_checkpoint(checkpoint: Checkpoint):
    """Rebuild a usable TrainedModel from a checkpoint."""
    from .features import ColumnScaler, FeatureSchema
    from .optim import ParamStore
    from .predictor import MlpPredictor, TrainConfig, TrainedModel, create_mlp
    from .sage import create_sage

    meta = checkpoint.metadata
    config = TrainConfig(**meta["config"])
    schema = (FeatureSchema.from_columns(meta["schema"])
              if meta.get("schema") else None)
    scalers = {kind: ColumnScaler(col_min=np.asarray(s["min"], dtype=np.float64),
                                  col_max=np.asarray(s["max"], dtype=np.float64))
               for kind, s in meta.get("scalers", {}).items()}
    if schema is None:
        raise CheckpointError("checkpoint carries no feature schema")

    seeds = iter(np.random.SeedSequence(config.seed).generate_state(64).tolist())
    store = ParamStore()
    sage = create_sage(store, schema.width, config.hidden_dim, config.embedding_dim,
                       config.layers, config.aggregator, seeds)
    mlp: MlpPredictor = create_mlp(store, config.embedding_dim, config.mlp_hidden, seeds)

    expected = set(store.names())
    loaded = set(checkpoint.params)
    if expected != loaded:
        missing = sorted(expected - loaded)
        extra = sorted(loaded - expected)
        raise CheckpointError(
            f"checkpoint parameters do not match the configured model "
            f"(missing: {missing}, unexpected: {extra})")
    for name, arr in checkpoint.params.items():
        tensor = store[name]
        if tensor.data.shape != arr.shape:
            raise CheckpointError(
                f"parameter '{name}' shape {arr.shape} does not match model shape "
                f"{tensor.data.shape}")
        tensor.data[...] = arr
    return TrainedModel(sage=sage, mlp=mlp, store=store, config=config,
                        training_loss_curve=(), test_auc=float("nan"),
                        schema=schema, scalers=scalers,
                        train_quarter=meta.get("train_quarter"))


def checkpoint_bytes(model_or_checkpoint) -> bytes:
    buf = io.BytesIO()
    ckpt = (model_or_checkpoint if isinstance(model_or_checkpoint, Checkpoint)
            else checkpoint_from_model(model_or_checkpoint))
    write_checkpoint(ckpt, buf)
    return buf.getvalue()
