"""Spike event containers and their CSV / packed-binary formats.

CSV: header ``t_ns,channel,polarity``, one event per line.

Binary: headerless little-endian records of 10 bytes each::

    u64 t_ns | u8 channel | i8 polarity
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

RECORD_DTYPE = np.dtype([("t_ns", "<u8"), ("channel", "u1"), ("polarity", "i1")])
CSV_HEADER = "t_ns,channel,polarity"


class SpikeEvent(NamedTuple):
    t_ns: int
    channel: int
    polarity: int


@dataclass(frozen=True, eq=False)
class Events:
    """Column-oriented list of spike events."""

    t_ns: np.ndarray
    channel: np.ndarray
    polarity: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_ns, dtype=np.int64).reshape(-1)
        c = np.asarray(self.channel, dtype=np.int64).reshape(-1)
        p = np.asarray(self.polarity, dtype=np.int8).reshape(-1)
        if not (len(t) == len(c) == len(p)):
            raise ValueError("event columns must have equal length")
        if len(p) and not np.all((p == 1) | (p == -1)):
            raise ValueError("polarity must be +1 or -1")
        for a in (t, c, p):
            a.setflags(write=False)
        object.__setattr__(self, "t_ns", t)
        object.__setattr__(self, "channel", c)
        object.__setattr__(self, "polarity", p)

    @classmethod
    def empty(cls) -> Events:
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int8))

    @classmethod
    def single_channel(cls, t_ns, polarity, channel: int) -> Events:
        t_ns = np.asarray(t_ns, dtype=np.int64)
        return cls(t_ns, np.full(len(t_ns), channel, dtype=np.int64), polarity)

    @classmethod
    def merge(cls, parts) -> Events:
        """Concatenate and order by ``(t_ns, channel)``; stable for equal keys."""
        parts = list(parts)
        if not parts:
            return cls.empty()
        t = np.concatenate([p.t_ns for p in parts])
        c = np.concatenate([p.channel for p in parts])
        pol = np.concatenate([p.polarity for p in parts])
        order = np.lexsort((c, t))
        return cls(t[order], c[order], pol[order])

    def __len__(self):
        return len(self.t_ns)

    def __iter__(self):
        for t, c, p in zip(self.t_ns.tolist(), self.channel.tolist(), self.polarity.tolist()):
            yield SpikeEvent(t, c, p)

    def __eq__(self, other):
        if not isinstance(other, Events):
            return NotImplemented
        return (np.array_equal(self.t_ns, other.t_ns) and np.array_equal(self.channel, other.channel)
                and np.array_equal(self.polarity, other.polarity))

    def select(self, mask) -> Events:
        return Events(self.t_ns[mask], self.channel[mask], self.polarity[mask])

    def for_channel(self, channel: int) -> Events:
        return self.select(self.channel == channel)

    def times_s(self) -> np.ndarray:
        return self.t_ns * 1e-9

    # --- serialization ---------------------------------------------------

    def to_csv(self, path):
        lines = [CSV_HEADER]
        lines.extend(f"{t},{c},{p}" for t, c, p in
                     zip(self.t_ns.tolist(), self.channel.tolist(), self.polarity.tolist()))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path) -> Events:
        text = Path(path).read_text().splitlines()
        if not text or text[0].strip() != CSV_HEADER:
            raise ValueError(f"{path}: expected header {CSV_HEADER!r}")
        rows = [line.split(",") for line in text[1:] if line.strip()]
        if not rows:
            return cls.empty()
        arr = np.array(rows, dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def to_bytes(self) -> bytes:
        if len(self) and (self.t_ns.min() < 0 or self.channel.min() < 0 or self.channel.max() > 255):
            raise ValueError("events out of range for the binary record format")
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["t_ns"] = self.t_ns
        rec["channel"] = self.channel
        rec["polarity"] = self.polarity
        return rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> Events:
        if len(data) % RECORD_DTYPE.itemsize:
            raise ValueError("binary event data is not a whole number of records")
        rec = np.frombuffer(data, dtype=RECORD_DTYPE)
        return cls(rec["t_ns"].astype(np.int64), rec["channel"].astype(np.int64), rec["polarity"])

    def to_binary(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read_binary(cls, path) -> Events:
        return cls.from_bytes(Path(path).read_bytes())
