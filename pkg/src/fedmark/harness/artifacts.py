"""Model persistence and deterministic metric writers."""

import csv
import json
import os

import numpy as np

from fedmark.errors import FormatError
from fedmark.nn.arch import Arch, Conv, Dense, MaxPool, ModelParams


def arch_to_json(arch: Arch) -> str:
    out = []
    for layer in arch:
        if isinstance(layer, Conv):
            out.append(["conv", layer.out_channels, layer.kernel, layer.stride])
        elif isinstance(layer, MaxPool):
            out.append(["pool", layer.window])
        else:
            out.append(["dense", layer.out_features])
    return json.dumps(out)


def arch_from_json(text: str) -> Arch:
    layers = []
    for entry in json.loads(text):
        kind = entry[0]
        if kind == "conv":
            layers.append(Conv(entry[1], entry[2], entry[3]))
        elif kind == "pool":
            layers.append(MaxPool(entry[1]))
        elif kind == "dense":
            layers.append(Dense(entry[1]))
        else:
            raise FormatError(f"unknown layer kind {kind!r}")
    return tuple(layers)


def save_model(model: ModelParams, path: str) -> None:
    np.savez(
        path,
        values=model.values,
        arch=arch_to_json(model.arch),
        input_shape=np.array(model.input_shape, dtype=np.int64),
    )


def load_model(path: str) -> ModelParams:
    with np.load(path, allow_pickle=False) as blob:
        values = blob["values"]
        arch = arch_from_json(str(blob["arch"]))
        input_shape = tuple(int(v) for v in blob["input_shape"])
    return ModelParams(values, arch, input_shape)  # type: ignore[arg-type]


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def fmt(x: float | None, places: int = 6) -> str:
    return "" if x is None else f"{x:.{places}f}"
