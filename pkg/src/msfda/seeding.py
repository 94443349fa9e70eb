"""Named, order-independent random streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Generator for the stream named by ``keys`` under ``seed``.

    Streams with different keys are independent and do not depend on the
    order in which they are created.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *(_key(k) for k in keys)])
