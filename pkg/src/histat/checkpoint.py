"""Binary checkpoint format.

Layout (little-endian)::

    b"HSTA" | u32 version | u32 config_len | config JSON (UTF-8)
    | f64 * n parameters in model order | u64 n

Parameter order: encoder layers, psi layers (weight, bias, bound), codebook Z,
omega layers, codebook A, spatial decoder, temporal decoder.
"""
import json
import struct

import numpy as np

from .errors import ConfigError, FormatError
from .model import HiSTAT, ModelConfig

MAGIC = b"HSTA"
VERSION = 1


def config_json(config):
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))


def dumps(model):
    cfg = config_json(model.config).encode("utf-8")
    params = model.get_flat()
    return b"".join([
        MAGIC,
        struct.pack("<II", VERSION, len(cfg)),
        cfg,
        params.astype("<f8").tobytes(),
        struct.pack("<Q", params.size),
    ])


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def read_header(blob):
    """Parse and validate the header; returns ``(version, config_dict, payload_offset)``."""
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError("bad magic", "not an HSTA checkpoint")
    if len(blob) < 12:
        raise FormatError("truncated", "header is incomplete")
    version, cfg_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError("version mismatch", f"file version {version}, expected {VERSION}")
    if len(blob) < 12 + cfg_len:
        raise FormatError("truncated", "config block is incomplete")
    try:
        cfg = json.loads(blob[12 : 12 + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("length mismatch", f"config block is not valid JSON ({exc})") from None
    return version, cfg, 12 + cfg_len


def loads(blob):
    _, cfg_dict, off = read_header(blob)
    try:
        config = ModelConfig.from_dict(cfg_dict)
    except (ConfigError, TypeError) as exc:
        raise FormatError("length mismatch", f"config does not describe a model ({exc})") from None
    model = HiSTAT(config)
    n = model.num_parameters()
    need = off + 8 * n + 8
    if len(blob) < need:
        raise FormatError("truncated", f"expected {need} bytes, got {len(blob)}")
    if len(blob) > need:
        raise FormatError("length mismatch", f"{len(blob) - need} unexpected trailing bytes")
    (count,) = struct.unpack_from("<Q", blob, off + 8 * n)
    if count != n:
        raise FormatError("length mismatch", f"footer counts {count} parameters, config implies {n}")
    model.set_flat(np.frombuffer(blob, "<f8", n, off).astype(np.float64))
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def inspect_checkpoint(path):
    """Header summary as a dict (no parameter decoding)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    version, cfg, off = read_header(blob)
    count = None
    if len(blob) >= off + 8:
        (count,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    return {"magic": MAGIC.decode(), "version": version, "config": cfg,
            "payload_bytes": len(blob) - off - 8, "parameter_count": count}
