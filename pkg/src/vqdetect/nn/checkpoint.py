"""Binary checkpoint format.

Layout::

    b"VQDCKPT" + version byte
    uint32 LE   header length
    header      UTF-8 JSON: {"arch": {...}, "arrays": [[name, shape], ...], "meta": {...}}
    payload     float32 LE values of every array, concatenated in header order
"""
import json
import struct

import numpy as np

MAGIC = b"VQDCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ArchitectureMismatch(CheckpointError):
    pass


def save_arrays(path, arch, arrays, meta=None):
    names = list(arrays)
    header = {
        "arch": arch,
        "arrays": [[n, list(np.shape(arrays[n]))] for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())


def load_arrays(path, expect_arch=None):
    """Return ``(arch, arrays, meta)``; raise if ``expect_arch`` differs from the stored one."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 5 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if raw[len(MAGIC)] != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {raw[len(MAGIC)]}")
    pos = len(MAGIC) + 1
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    pos += hlen
    if expect_arch is not None and header["arch"] != expect_arch:
        raise ArchitectureMismatch(f"{path}: stored architecture {header['arch']} != expected {expect_arch}")
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return header["arch"], arrays, header["meta"]


def save_module(path, module, arch, extra=None, meta=None):
    arrays = {f"param.{n}": p.data for n, p in module.named_parameters()}
    arrays.update(extra or {})
    save_arrays(path, arch, arrays, meta)


def load_module(path, module, arch):
    """Load parameters into ``module`` in place; returns the non-parameter arrays and meta."""
    _, arrays, meta = load_arrays(path, expect_arch=arch)
    for n, p in module.named_parameters():
        key = f"param.{n}"
        if key not in arrays:
            raise ArchitectureMismatch(f"{path}: missing parameter {n}")
        if arrays[key].shape != p.data.shape:
            raise ArchitectureMismatch(f"{path}: shape of {n} is {arrays[key].shape}, expected {p.data.shape}")
        p.data = arrays[key].astype(p.data.dtype)
    extra = {k: v for k, v in arrays.items() if not k.startswith("param.")}
    return extra, meta
