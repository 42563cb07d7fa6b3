"""Deterministic checkpoint container for model weights and optimizer state.

A checkpoint is a single binary file: an 8-byte magic, an 8-byte
little-endian header length, a JSON header describing every tensor
(name, dtype, shape, byte offset) plus the architecture and the scaler
sidecar text, then the raw C-order tensor bytes. The same model always
serializes to the same bytes, so checkpoint hashes are reproducible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .forecaster import ArchitectureSpec, ModelParams
from .neuralnet import AdamState, DenseLayerParams, LstmLayerParams
from .preprocess import scalers_from_json, scalers_to_json

MAGIC = b"VPFWCKP1"
FORMAT_VERSION = 1


def _arch_to_dict(arch: ArchitectureSpec) -> dict:
    return {
        "lstm_units": arch.lstm_units, "dense1": arch.dense1, "dense2": arch.dense2,
        "output_dim": arch.output_dim, "dropout": arch.dropout,
        "recurrent_dropout": arch.recurrent_dropout, "feat_dim": arch.feat_dim,
        "lookback": arch.lookback, "leaky_relu_alpha": arch.leaky_relu_alpha,
    }


def save_checkpoint(path, model: ModelParams, adam: AdamState | None = None,
                    meta: dict | None = None) -> None:
    """Write the model (and optionally optimizer state) to ``path``."""
    tensors: dict[str, np.ndarray] = dict(model.named_parameters())
    header: dict = {
        "version": FORMAT_VERSION,
        "arch": _arch_to_dict(model.arch),
        "scalers": scalers_to_json(model.power_scaler, model.feat_scaler),
        "meta": meta or {},
        "entries": [],
    }
    if adam is not None:
        header["adam"] = {"lr": adam.lr, "t": adam.t, "beta1": adam.beta1,
                          "beta2": adam.beta2, "eps": adam.eps}
        for name, arr in adam.m.items():
            tensors[f"adam.m/{name}"] = arr
        for name, arr in adam.v.items():
            tensors[f"adam.v/{name}"] = arr

    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        blob = arr.tobytes()
        header["entries"].append({"name": name, "dtype": "float64",
                                  "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)

    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (model, adam_or_None, meta)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise SchemaError(f"{path}: not a checkpoint file")
    head_len = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16:16 + head_len].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {header.get('version')}")
    base = 16 + head_len
    tensors: dict[str, np.ndarray] = {}
    for e in header["entries"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=start).reshape(e["shape"]).copy()
        tensors[e["name"]] = arr

    arch = ArchitectureSpec(**header["arch"])
    power_scaler, feat_scaler, _ = scalers_from_json(header["scalers"])
    model = ModelParams(
        arch=arch,
        lstm_power=LstmLayerParams(tensors["lstm_power/W"], tensors["lstm_power/U"], tensors["lstm_power/b"]),
        lstm_feat=LstmLayerParams(tensors["lstm_feat/W"], tensors["lstm_feat/U"], tensors["lstm_feat/b"]),
        dense1=DenseLayerParams(tensors["dense1/W"], tensors["dense1/b"]),
        dense2=DenseLayerParams(tensors["dense2/W"], tensors["dense2/b"]),
        out=DenseLayerParams(tensors["out/W"], tensors["out/b"]),
        power_scaler=power_scaler,
        feat_scaler=feat_scaler,
    )
    adam = None
    if "adam" in header:
        a = header["adam"]
        adam = AdamState(lr=a["lr"], t=a["t"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
        for name in model.named_parameters():
            adam.m[name] = tensors[f"adam.m/{name}"]
            adam.v[name] = tensors[f"adam.v/{name}"]
    return model, adam, header.get("meta", {})
