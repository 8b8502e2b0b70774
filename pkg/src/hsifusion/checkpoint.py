"""Named-tensor checkpoints: network config, weights, optimizer moments, step.

Layout (all little-endian):

    8 bytes   magic  b"HSIFCKPT"
    u32       format version (currently 1)
    u64       header length in bytes
    header    UTF-8 JSON: config, schedule hyperparameters, step,
              tensor manifest, optimizer manifest
    payload   raw tensor bytes in manifest order; for the optimizer, the
              first and second moment of each parameter in manifest order

Round-trips are bit-exact. A checkpoint saved without optimizer state loads
fine for inference but refuses to resume training.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .denoiser import DenoiserConfig

MAGIC = b"HSIFCKPT"
FORMAT_VERSION = 1

_DTYPE_TAGS = {"f4": "<f4", "f8": "<f8"}


class CheckpointFormatError(ValueError):
    """Raised for unreadable or version-incompatible checkpoint files."""


@dataclass
class Checkpoint:
    config: DenoiserConfig
    params: dict[str, Tensor]
    opt_state: dict | None
    step: int
    schedule: dict | None  # {"T": int, "beta_end": float} when saved by train()


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f4"
    if arr.dtype == np.float64:
        return "f8"
    raise CheckpointFormatError(f"unsupported tensor dtype {arr.dtype}")


def save_checkpoint(
    path,
    config: DenoiserConfig,
    params: dict[str, Tensor],
    opt_state: dict | None = None,
    step: int = 0,
    schedule: dict | None = None,
) -> None:
    names = sorted(params)
    tensors = [
        {"name": n, "shape": list(params[n].shape), "dtype": _dtype_tag(params[n].data)}
        for n in names
    ]
    header: dict = {
        "config": config.to_dict(),
        "schedule": schedule,
        "step": int(step),
        "tensors": tensors,
        "optimizer": None,
    }
    blobs = [np.ascontiguousarray(params[n].data).tobytes() for n in names]
    if opt_state is not None:
        header["optimizer"] = {
            "beta1": opt_state["beta1"],
            "beta2": opt_state["beta2"],
            "eps": opt_state["eps"],
            "step": int(opt_state["step"]),
        }
        for n in names:
            for key in ("m", "v"):
                mom = np.asarray(opt_state[key][n])
                if mom.shape != params[n].shape:
                    raise ValueError(f"optimizer moment '{key}' of '{n}' has wrong shape")
                blobs.append(np.ascontiguousarray(mom).tobytes())

    head = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"{path}: format version {version}, this build reads {FORMAT_VERSION}"
            )
        (head_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(head_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from None
        payload = fh.read()

    config = DenoiserConfig.from_dict(header["config"])
    params: dict[str, Tensor] = {}
    offset = 0

    def take(shape, tag) -> np.ndarray:
        nonlocal offset
        dt = _DTYPE_TAGS.get(tag)
        if dt is None:
            raise CheckpointFormatError(f"{path}: unknown dtype tag '{tag}'")
        n_bytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dt).itemsize
        if offset + n_bytes > len(payload):
            raise CheckpointFormatError(
                f"{path}: payload truncated at byte {offset} (+{n_bytes} needed)"
            )
        arr = np.frombuffer(payload, dtype=dt, count=int(np.prod(shape, dtype=np.int64)),
                            offset=offset).reshape(shape).copy()
        offset += n_bytes
        return arr

    for spec in header["tensors"]:
        params[spec["name"]] = Tensor(
            take(spec["shape"], spec["dtype"]), requires_grad=True,
            dtype=np.dtype(_DTYPE_TAGS[spec["dtype"]]).type,
        )

    opt_state = None
    if header["optimizer"] is not None:
        opt = header["optimizer"]
        m, v = {}, {}
        for spec in header["tensors"]:
            m[spec["name"]] = take(spec["shape"], spec["dtype"])
            v[spec["name"]] = take(spec["shape"], spec["dtype"])
        opt_state = {
            "beta1": opt["beta1"], "beta2": opt["beta2"], "eps": opt["eps"],
            "step": opt["step"], "m": m, "v": v,
        }
    if offset != len(payload):
        raise CheckpointFormatError(
            f"{path}: {len(payload) - offset} unexplained trailing payload bytes"
        )
    return Checkpoint(
        config=config, params=params, opt_state=opt_state,
        step=int(header["step"]), schedule=header.get("schedule"),
    )
