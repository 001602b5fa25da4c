"""Checkpoint archives.

A checkpoint is an uncompressed zip with fixed member timestamps holding

``format.json``
    format name, version and model kind (``hqnet`` or ``gvit``)
``config.json``
    the model configuration
``manifest.json``
    one record per tensor: name, shape, byte offset, byte length, SHA-256
``tensors.bin``
    little-endian float32 payloads in row-major order, concatenated

Saving the same parameters twice yields identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from ._validation import URGRError

FORMAT = "urgr-checkpoint"
VERSION = 1
_DATE = (1980, 1, 1, 0, 0, 0)


class CheckpointError(URGRError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointMismatch(CheckpointError):
    pass


def _dumps(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


def _member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(tensors: dict, config: dict, path, kind: str) -> None:
    """Write named tensors (anything ``np.asarray`` accepts) and a JSON config."""
    payload = io.BytesIO()
    records = []
    for name, value in tensors.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.array(value, dtype="<f4", order="C")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name!r} has non-finite entries")
        raw = arr.tobytes(order="C")
        records.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": payload.tell(),
            "nbytes": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        payload.write(raw)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        _member(zf, "format.json", _dumps({"format": FORMAT, "version": VERSION, "kind": kind}))
        _member(zf, "config.json", _dumps(config))
        _member(zf, "manifest.json", _dumps({"dtype": "<f4", "records": records}))
        _member(zf, "tensors.bin", payload.getvalue())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, kind: str | None = None, expected_config: dict | None = None):
    """Return ``(tensors, config, kind)``; tensors are float32 numpy arrays."""
    try:
        with zipfile.ZipFile(path) as zf:
            fmt = json.loads(zf.read("format.json"))
            config = json.loads(zf.read("config.json"))
            manifest = json.loads(zf.read("manifest.json"))
            payload = zf.read("tensors.bin")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError, EOFError) as exc:
        raise CheckpointIntegrityError(f"unreadable checkpoint {path}: {exc}") from exc
    if fmt.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} archive")
    if fmt.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {fmt.get('version')} (expected {VERSION})")
    if kind is not None and fmt.get("kind") != kind:
        raise CheckpointMismatch(f"checkpoint holds a {fmt.get('kind')!r} model, expected {kind!r}")
    if expected_config is not None and config != expected_config:
        raise CheckpointMismatch("checkpoint config differs from the requested config")
    tensors = {}
    end = 0
    for rec in manifest["records"]:
        raw = payload[rec["offset"]:rec["offset"] + rec["nbytes"]]
        if len(raw) != rec["nbytes"] or hashlib.sha256(raw).hexdigest() != rec["sha256"]:
            raise CheckpointIntegrityError(f"checksum mismatch in tensor {rec['name']!r}")
        count = int(np.prod(rec["shape"], dtype=np.int64))
        if count * 4 != rec["nbytes"]:
            raise CheckpointIntegrityError(f"tensor {rec['name']!r} shape disagrees with its size")
        tensors[rec["name"]] = np.frombuffer(raw, dtype="<f4").reshape(rec["shape"]).copy()
        end = max(end, rec["offset"] + rec["nbytes"])
    if end != len(payload):
        raise CheckpointIntegrityError("payload length disagrees with the tensor manifest")
    return tensors, config, fmt["kind"]


def load_state_into(model: torch.nn.Module, tensors: dict) -> None:
    state = model.state_dict()
    if set(state) != set(tensors):
        missing = sorted(set(state) - set(tensors))
        extra = sorted(set(tensors) - set(state))
        raise CheckpointMismatch(f"tensor names differ: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, ref in state.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointMismatch(
                f"tensor {name!r} has shape {arr.shape}, config implies {tuple(ref.shape)}")
        ref.copy_(torch.from_numpy(arr).to(ref.dtype))


def save_hqnet(model, path) -> None:
    save_checkpoint(model.state_dict(), {"hqnet": model.cfg.to_dict()}, path, "hqnet")


def load_hqnet(path, cfg=None):
    from .hqnet import HQNetConfig, build_hqnet

    expected = None if cfg is None else {"hqnet": cfg.to_dict()}
    tensors, config, _ = load_checkpoint(path, "hqnet", expected)
    model = build_hqnet(HQNetConfig.from_dict(config["hqnet"]))
    load_state_into(model, tensors)
    return model


def save_gvit(model, path, focus_cfg=None) -> None:
    config = {"gvit": model.cfg.to_dict()}
    if focus_cfg is not None:
        config["focus"] = focus_cfg.to_dict()
    save_checkpoint(model.state_dict(), config, path, "gvit")


def load_gvit(path, cfg=None):
    """Return ``(model, focus_cfg)``; ``focus_cfg`` is ``None`` when not recorded."""
    from .focus import FocusConfig
    from .gvit import GViTConfig, build_gvit

    tensors, config, _ = load_checkpoint(path, "gvit")
    if cfg is not None and config["gvit"] != cfg.to_dict():
        raise CheckpointMismatch("checkpoint config differs from the requested config")
    model = build_gvit(GViTConfig.from_dict(config["gvit"]))
    load_state_into(model, tensors)
    focus = FocusConfig.from_dict(config["focus"]) if "focus" in config else None
    return model, focus
