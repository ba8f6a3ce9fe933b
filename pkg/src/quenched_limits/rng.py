"""Counter-based random streams.

Every random number in the package is a pure function of
``(seed, stream, chunk, position-in-chunk)``. Each chunk gets its own
``numpy.random.Philox`` generator whose key encodes ``(seed, stream)`` and
whose counter encodes the chunk index, so results never depend on how many
workers process the chunks or in which order.
"""
import logging
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)

CHUNK = 1 << 16

# Stream identifiers.
STREAM_DRIVING = 0
STREAM_START_POINTS = 1
STREAM_REFRESH = 2
STREAM_TEST_FUNCTIONS = 3
STREAM_SYNTHETIC = 4

_MASK64 = (1 << 64) - 1


def chunk_generator(seed: int, stream: int, chunk: int) -> np.random.Generator:
    """Generator for one chunk; ``chunk`` may be negative (two-sided sequences)."""
    key = (int(seed) & _MASK64) | ((int(stream) & _MASK64) << 64)
    counter = (int(chunk) & _MASK64) << 64
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@lru_cache(maxsize=256)
def _chunk_uniforms(seed: int, stream: int, chunk: int) -> np.ndarray:
    values = chunk_generator(seed, stream, chunk).random(CHUNK)
    values.setflags(write=False)
    return values


def uniforms(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Uniforms in [0, 1) for the absolute indices ``start .. start+count-1``."""
    if count <= 0:
        return np.empty(0)
    out = np.empty(count)
    index = start
    filled = 0
    while filled < count:
        chunk, offset = divmod(index, CHUNK)
        take = min(CHUNK - offset, count - filled)
        out[filled:filled + take] = _chunk_uniforms(seed, stream, chunk)[offset:offset + take]
        filled += take
        index += take
    return out
