"""Binary checkpoint format for :class:`MlpParams` records.

A file is a sequence of records. Each record is one header line of JSON
(layer dims, activation tags, optional metadata) followed by the raw
little-endian float64 entries of ``W0, b0, W1, b1, ...`` in row-major order.
"""

from __future__ import annotations

import json
from typing import BinaryIO

import numpy as np

from ..errors import ValidationError
from .mlp import MlpParams

MAGIC = b"MLPREC1 "


def write_record(fh: BinaryIO, params: MlpParams, meta: dict | None = None) -> None:
    header = {"dims": params.dims, "activations": params.activations, "meta": meta or {}}
    fh.write(MAGIC + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for arr in params.arrays():
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_record(fh: BinaryIO) -> tuple[MlpParams, dict]:
    line = fh.readline()
    if not line.startswith(MAGIC):
        raise ValidationError("not an MLP checkpoint record")
    header = json.loads(line[len(MAGIC):].decode("utf-8"))
    dims = header["dims"]
    arrays = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            count = int(np.prod(shape))
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValidationError("truncated checkpoint")
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
    params = MlpParams(arrays[0::2], arrays[1::2], header["activations"])
    return params, header.get("meta", {})
