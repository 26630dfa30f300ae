"""
Flat named-array checkpoints.

Layout (little endian): magic ``SVTCKPT1``, uint32 entry count, then per entry
uint16 name length, UTF-8 name, uint8 ndim, uint32 extents and the raw
float64 data in row-major order.
"""
import logging
import os
import struct
from collections import OrderedDict
from typing import Dict

import numpy as np

from ..core.module import Module
from ..errors import ConfigError

logger = logging.getLogger(__name__)

MAGIC = b'SVTCKPT1'


def encode_state(state: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack('<I', len(state))]
    for name, arr in state.items():
        raw = name.encode('utf-8')
        arr = np.ascontiguousarray(arr, dtype='<f8')
        chunks.append(struct.pack('<H', len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack('<B', arr.ndim))
        chunks.append(struct.pack(f'<{arr.ndim}I', *arr.shape))
        chunks.append(arr.tobytes())
    return b''.join(chunks)


def decode_state(blob: bytes, source: str = '<bytes>') -> Dict[str, np.ndarray]:
    if blob[:len(MAGIC)] != MAGIC:
        raise ConfigError(f"{source} is not a checkpoint (bad magic)")
    try:
        offset = len(MAGIC)
        (count,) = struct.unpack_from('<I', blob, offset)
        offset += 4
        state = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack_from('<H', blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (ndim,) = struct.unpack_from('<B', blob, offset)
            offset += 1
            shape = struct.unpack_from(f'<{ndim}I', blob, offset)
            offset += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(blob, dtype='<f8', count=size, offset=offset)
            offset += 8 * size
            state[name] = data.reshape(shape).astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise ConfigError(f"{source} is truncated or corrupt: {e}")
    if offset != len(blob):
        raise ConfigError(f"{source} has {len(blob) - offset} trailing bytes")
    return state


def save_checkpoint(model: Module, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    state = model.state()
    with open(path, 'wb') as f:
        f.write(encode_state(state))
    logger.info(f"Checkpoint with {len(state)} arrays written to {path}")


def load_checkpoint(model: Module, path: str) -> None:
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}")
    model.load_state(decode_state(blob, source=path))
    logger.info(f"Checkpoint {path} loaded")
