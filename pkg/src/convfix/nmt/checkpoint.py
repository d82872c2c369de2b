"""Binary checkpoint container.

Layout: ``MAGIC`` | uint64 little-endian header length | canonical JSON header
| weight blobs.  The header lists every weight with its shape and byte offset;
blobs are little-endian row-major float32, written in sorted name order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hyper import HyperParams
from .model import Network

FORMAT_VERSION = 1
MAGIC = b"CONVFIXCKPT\x00"
_DTYPE = np.dtype("<f4")


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


@dataclass
class ModelCheckpoint:
    hyper: HyperParams
    src_vocab_size: int
    trg_vocab_size: int
    max_positions: int
    weights: dict[str, np.ndarray]
    src_fingerprint: str = ""
    trg_fingerprint: str = ""
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_network(cls, net: Network, src_fingerprint: str = "", trg_fingerprint: str = "",
                     metadata: dict | None = None) -> "ModelCheckpoint":
        return cls(net.hyper, net.src_vocab_size, net.trg_vocab_size, net.max_positions,
                   {k: v.astype(_DTYPE) for k, v in net.params.items()},
                   src_fingerprint, trg_fingerprint, dict(metadata or {}))

    def to_network(self, dtype=np.float32) -> Network:
        return Network(self.hyper, self.src_vocab_size, self.trg_vocab_size, self.max_positions,
                       {k: v.astype(dtype) for k, v in self.weights.items()}, dtype)

    def to_bytes(self) -> bytes:
        entries = []
        blobs = []
        offset = 0
        for name in sorted(self.weights):
            arr = np.ascontiguousarray(self.weights[name], dtype=_DTYPE)
            raw = arr.tobytes(order="C")
            entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        header = _canonical({
            "format_version": FORMAT_VERSION,
            "hyper": self.hyper.to_dict(),
            "src_vocab_size": self.src_vocab_size,
            "trg_vocab_size": self.trg_vocab_size,
            "max_positions": self.max_positions,
            "vocab_fingerprints": {"src": self.src_fingerprint, "trg": self.trg_fingerprint},
            "metadata": self.metadata,
            "weights": entries,
        })
        return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        if not data.startswith(MAGIC):
            raise ValueError("not a checkpoint file (bad magic)")
        pos = len(MAGIC)
        (hlen,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        header = json.loads(data[pos : pos + hlen].decode("ascii"))
        pos += hlen
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {header['format_version']}")
        weights = {}
        for entry in header["weights"]:
            start = pos + entry["offset"]
            arr = np.frombuffer(data, dtype=_DTYPE, count=entry["nbytes"] // 4, offset=start)
            weights[entry["name"]] = arr.reshape(entry["shape"]).copy()
        return cls(
            HyperParams.from_dict(header["hyper"]),
            header["src_vocab_size"], header["trg_vocab_size"], header["max_positions"], weights,
            header["vocab_fingerprints"]["src"], header["vocab_fingerprints"]["trg"], header["metadata"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())
