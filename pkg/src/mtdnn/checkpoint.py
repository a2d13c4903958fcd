"""Binary checkpoint files.

Layout: the 8-byte magic ``MTDNNCK1``, a UTF-8 manifest with one
``name<TAB>dim1,dim2,...`` line per array, an empty line, then every array's
values as little-endian float64 in manifest order. Files are written to a
temporary name and renamed into place.
"""
import os
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MTDNNCK1"


def dumps(named_arrays):
    manifest, payload = [], []
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype=np.float64)
        if not name or any(c in name for c in "\t\n\r"):
            raise CheckpointError(f"invalid parameter name {name!r}")
        if arr.ndim == 0 or 0 in arr.shape:
            raise CheckpointError(f"{name}: extents must be positive, got {arr.shape}")
        manifest.append(f"{name}\t{','.join(str(s) for s in arr.shape)}\n")
        payload.append(arr.astype("<f8", copy=False).tobytes(order="C"))
    return MAGIC + "".join(manifest).encode("utf-8") + b"\n" + b"".join(payload)


def loads(blob, source="<bytes>"):
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    end = blob.find(b"\n\n", len(MAGIC) - 1)
    if blob[len(MAGIC):len(MAGIC) + 1] == b"\n":
        end = len(MAGIC) - 1  # empty manifest
    if end < 0:
        raise CheckpointError(f"{source}: manifest is not terminated")
    header = blob[len(MAGIC):end + 1].decode("utf-8")
    offset = end + 2
    out = OrderedDict()
    for line in header.splitlines():
        try:
            name, dims = line.split("\t")
            shape = tuple(int(s) for s in dims.split(","))
        except ValueError:
            raise CheckpointError(f"{source}: malformed manifest line {line!r}") from None
        if name in out:
            raise CheckpointError(f"{source}: duplicate entry {name!r}")
        if any(s <= 0 for s in shape):
            raise CheckpointError(f"{source}: {name} has non-positive extents {shape}")
        nbytes = 8 * int(np.prod(shape))
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{source}: payload for {name} is truncated")
        out[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{source}: {len(blob) - offset} trailing bytes after payload")
    return out


def save_checkpoint(path, named_arrays):
    """Atomically write ``(name, array)`` pairs to ``path``."""
    path = Path(path)
    blob = dumps(named_arrays)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path):
    """Read a checkpoint into an ordered ``name -> array`` mapping."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads(blob, str(path))
