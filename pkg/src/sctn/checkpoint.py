"""Binary tensor container used for checkpoints and segment caches.

Layout: magic "SCTN", format version (u16 LE), entry count (u32 LE), then per
entry a length-prefixed name (u16 + utf-8), rank (u8), dims (u32 each) and a
payload offset (u64, bytes from payload start); after the manifest come the
flat little-endian float32 payloads. Seekable and diffable by manifest.
"""
from __future__ import annotations

import struct

import numpy as np

from . import data as data_mod
from .errors import DataError
from .model import Scene

MAGIC = b"SCTN"
VERSION = 1


def save_tensors(path, tensors):
    """Write an ordered {name: ndarray} mapping; payloads stored as float32."""
    entries = []
    offset = 0
    payloads = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
        entries.append((name, arr.shape, offset))
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(entries)))
        for name, shape, off in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(struct.pack("<Q", off))
        for blob in payloads:
            fh.write(blob)


def load_tensors(path):
    """Read a container back into an ordered {name: float32 ndarray} mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic bytes, not a tensor container")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    pos = 10
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        (offset,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        entries.append((name, shape, offset))
    payload_start = pos
    out = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        start = payload_start + offset
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=start)
        out[name] = arr.reshape(shape).copy()
    return out


# ---------------------------------------------------------------------------
# segment cache on top of the container
# ---------------------------------------------------------------------------

_SPLIT_CODES = {"train": 0.0, "validation": 1.0, "test": 2.0}
_SPLIT_NAMES = {v: k for k, v in _SPLIT_CODES.items()}


def save_segment_cache(path, split):
    """Serialize a DatasetSplit; a text manifest goes to path + '.manifest'."""
    tensors = {}
    files = []
    idx = 0
    for split_name in ("train", "validation", "test"):
        for sample in getattr(split, split_name):
            scene = sample.scene
            if sample.source_file not in files:
                files.append(sample.source_file)
            meta = np.array([
                scene.target_index, sample.vehicle_id, sample.start_frame,
                scene.origin[0], scene.origin[1],
                _SPLIT_CODES[split_name], files.index(sample.source_file),
            ])
            tensors[f"segment/{idx:05d}/positions"] = scene.positions
            tensors[f"segment/{idx:05d}/mask"] = scene.channel_mask.astype(np.float32)
            tensors[f"segment/{idx:05d}/meta"] = meta
            idx += 1
    tensors["split_seed"] = np.array([float(split.seed)])
    save_tensors(path, tensors)
    with open(str(path) + ".manifest", "w") as fh:
        fh.write(f"segments total: {idx}\n")
        for split_name in ("train", "validation", "test"):
            fh.write(f"segments {split_name}: {len(getattr(split, split_name))}\n")
        for i, name in enumerate(files):
            fh.write(f"source {i}: {name}\n")


def load_segment_cache(path):
    """Rebuild the DatasetSplit stored by save_segment_cache."""
    tensors = load_tensors(path)
    files = {}
    manifest_path = str(path) + ".manifest"
    try:
        with open(manifest_path) as fh:
            for line in fh:
                if line.startswith("source "):
                    key, name = line.split(":", 1)
                    files[int(key.split()[1])] = name.strip()
    except FileNotFoundError:
        pass
    split = data_mod.DatasetSplit(
        seed=int(tensors.get("split_seed", np.zeros(1))[0]))
    idx = 0
    while f"segment/{idx:05d}/positions" in tensors:
        positions = tensors[f"segment/{idx:05d}/positions"].astype(np.float64)
        mask = tensors[f"segment/{idx:05d}/mask"].astype(bool)
        meta = tensors[f"segment/{idx:05d}/meta"]
        scene = Scene(positions=positions, channel_mask=mask,
                      target_index=int(meta[0]), origin=meta[3:5].astype(np.float64))
        sample = data_mod.SegmentSample(
            scene=scene, source_file=files.get(int(meta[6]), ""),
            vehicle_id=int(meta[1]), start_frame=int(meta[2]))
        getattr(split, _SPLIT_NAMES[float(meta[5])]).append(sample)
        idx += 1
    if idx == 0:
        raise DataError(f"{path}: segment cache holds no segments")
    return split


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = ("n_agents", "t_obs", "t_pred", "model_dim", "heads", "layers",
                  "ffn_dim", "dropout", "se_reduction", "se_enabled",
                  "se_on_decoder", "embed_hidden", "predict_offsets", "seed", "dtype")


def save_model_checkpoint(path, weights):
    """Container of all learnable tensors plus a key=value config sidecar."""
    save_tensors(path, weights.state_dict())
    cfg = weights.config
    with open(str(path) + ".config", "w") as fh:
        for name in _CONFIG_FIELDS:
            fh.write(f"{name} = {getattr(cfg, name)}\n")


def load_model_checkpoint(path):
    """Rebuild ModelWeights from a checkpoint and its config sidecar."""
    from .model import ModelConfig, ModelWeights

    kwargs = {}
    try:
        with open(str(path) + ".config") as fh:
            for line in fh:
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key in ("se_enabled", "se_on_decoder", "embed_hidden",
                           "predict_offsets"):
                    kwargs[key] = value == "True"
                elif key == "dtype":
                    kwargs[key] = value
                elif key == "dropout":
                    kwargs[key] = float(value)
                elif key in _CONFIG_FIELDS:
                    kwargs[key] = int(value)
    except FileNotFoundError:
        raise DataError(f"{path}.config: checkpoint config sidecar missing") from None
    config = ModelConfig(**kwargs)
    weights = ModelWeights(config)
    weights.load_state_dict(load_tensors(path))
    return weights
