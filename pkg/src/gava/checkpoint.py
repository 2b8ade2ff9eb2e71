"""Checkpoint container: a textual header followed by raw float32 arrays.

Layout (header is ASCII, one item per line, then a blank line, then binary):

    GAVA-CHECKPOINT 1
    fingerprint <16 hex chars>
    config-lines <n>
    <n config lines, verbatim>
    entries <count>
    <name> <dim0,dim1,...> <byte offset into the binary section>
    ...
    end

Arrays are little-endian IEEE-754 float32 in header order, so a checkpoint is
portable and diffable with nothing but a text editor and `xxd`.
"""

from __future__ import annotations

import sys

import numpy as np

from .config import TrainConfig, config_fingerprint, config_from_text, config_to_text
from .errors import DataError

FORMAT_VERSION = 1


def _entries(model):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, buf in model.named_buffers():
        yield "buffer:" + name, buf


def save_checkpoint(model, cfg: TrainConfig, path: str) -> None:
    header = [f"GAVA-CHECKPOINT {FORMAT_VERSION}",
              f"fingerprint {config_fingerprint(cfg)}"]
    cfg_lines = config_to_text(cfg).rstrip("\n").split("\n")
    header.append(f"config-lines {len(cfg_lines)}")
    header.extend(cfg_lines)

    blobs = []
    entry_lines = []
    offset = 0
    for name, arr in _entries(model):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        dims = ",".join(str(d) for d in arr.shape) or "0"
        entry_lines.append(f"{name} {dims} {offset}")
        blobs.append(raw)
        offset += len(raw)
    header.append(f"entries {len(entry_lines)}")
    header.extend(entry_lines)
    header.append("end")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for raw in blobs:
            fh.write(raw)


def _parse_header(path: str):
    with open(path, "rb") as fh:
        data = fh.read()
    end_marker = b"\nend\n"
    cut = data.find(end_marker)
    if cut < 0:
        raise DataError(f"'{path}': not a checkpoint (missing end marker)")
    lines = data[:cut].decode("ascii").split("\n")
    binary = data[cut + len(end_marker):]

    if not lines[0].startswith("GAVA-CHECKPOINT"):
        raise DataError(f"'{path}': not a checkpoint file")
    version = int(lines[0].split()[1])
    if version != FORMAT_VERSION:
        raise DataError(f"'{path}': unsupported checkpoint version {version}")
    fingerprint = lines[1].split()[1]
    n_cfg = int(lines[2].split()[1])
    cfg_text = "\n".join(lines[3:3 + n_cfg])
    idx = 3 + n_cfg
    n_entries = int(lines[idx].split()[1])
    entries = []
    for line in lines[idx + 1: idx + 1 + n_entries]:
        name, dims, offset = line.rsplit(" ", 2)
        shape = tuple(int(d) for d in dims.split(",")) if dims != "0" else ()
        entries.append((name, shape, int(offset)))
    return fingerprint, cfg_text, entries, binary


def load_checkpoint(path: str, expected_cfg: TrainConfig | None = None):
    """Rebuild the model recorded in a checkpoint; returns (model, config).

    If `expected_cfg` is given and its fingerprint differs from the stored
    one, a warning is printed and the stored config wins.
    """
    from .model import GavaModel  # local import to avoid a cycle

    fingerprint, cfg_text, entries, binary = _parse_header(path)
    cfg = config_from_text(cfg_text)
    if config_fingerprint(cfg) != fingerprint:
        raise DataError(f"'{path}': fingerprint does not match stored config")
    if expected_cfg is not None and config_fingerprint(expected_cfg) != fingerprint:
        print(f"warning: checkpoint '{path}' was written with a different config "
              f"(fingerprint {fingerprint}); using the stored one", file=sys.stderr)

    model = GavaModel(cfg)
    named = dict(_entries(model))
    seen = set()
    for name, shape, offset in entries:
        if name not in named:
            raise DataError(f"'{path}': unknown entry '{name}' for this config")
        target = named[name]
        count = int(np.prod(shape)) if shape else 1
        raw = binary[offset: offset + 4 * count]
        if len(raw) != 4 * count:
            raise DataError(f"'{path}': truncated data for entry '{name}'")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        if target.shape != arr.shape:
            raise DataError(
                f"'{path}': entry '{name}' has shape {arr.shape}, model expects {target.shape}")
        target[...] = arr
        seen.add(name)
    missing = set(named) - seen
    if missing:
        raise DataError(f"'{path}': checkpoint is missing entries {sorted(missing)}")
    return model, cfg


def checkpoint_io(model, path: str, direction: str, cfg: TrainConfig | None = None):
    """Spec-surface wrapper: direction 'save' writes, 'load' reads."""
    if direction == "save":
        if cfg is None:
            cfg = model.cfg
        save_checkpoint(model, cfg, path)
        return None
    if direction == "load":
        return load_checkpoint(path, cfg)
    raise DataError(f"unknown checkpoint direction '{direction}'")
