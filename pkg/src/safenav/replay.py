"""Replay dataset D: ordered transition records with binary persistence.

Records store observations in digest form: the aligned frame stack packed
to one bit per cell plus the relative goal and velocity, which is enough
to rebuild an Observation for world-model evaluation. Every record must
satisfy r = r_g + r_c exactly.

File layout (little endian):
    header: magic 'SNRD', version u32, H u16, W u16, frame_count u8,
            cell_size f64, record_count u64
    then record_count length-prefixed records (u32 length + payload).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .observation import Costmap, GridSpec, Observation
from .world import Action

MAGIC = b"SNRD"
VERSION = 1
_HEADER = struct.Struct("<4sIHHBdQ")


@dataclass(frozen=True)
class ObservationDigest:
    frames_packed: tuple[bytes, ...]   # one bit per cell, np.packbits order
    goal_rel: tuple[float, float]
    velocity: tuple[float, float]

    @staticmethod
    def from_observation(obs: Observation) -> "ObservationDigest":
        packed = tuple(np.packbits(f.grid.ravel()).tobytes() for f in obs.frames)
        return ObservationDigest(
            frames_packed=packed,
            goal_rel=(float(obs.goal_rel[0]), float(obs.goal_rel[1])),
            velocity=(float(obs.velocity[0]), float(obs.velocity[1])),
        )

    def to_observation(self, spec: GridSpec) -> Observation:
        frames = []
        cells = spec.height * spec.width
        for blob in self.frames_packed:
            bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), count=cells)
            frames.append(Costmap(grid=bits.reshape(spec.height, spec.width),
                                  spec=spec))
        return Observation(frames=tuple(frames), goal_rel=self.goal_rel,
                           velocity=self.velocity)


@dataclass(frozen=True)
class ReplayRecord:
    obs: ObservationDigest
    a_nom: Action
    a_star: Action
    next_obs: ObservationDigest
    reward: float
    r_goal: float
    r_cbf: float
    done: bool


class ReplayDataset:
    """Ordered transition store; appends validate the reward invariant."""

    def __init__(self, spec: GridSpec, frame_count: int):
        self.spec = spec
        self.frame_count = frame_count
        self.records: list[ReplayRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: ReplayRecord) -> None:
        if record.reward != record.r_goal + record.r_cbf:
            raise ValueError(
                f"reward invariant violated: r={record.reward!r} != "
                f"r_g + r_c = {record.r_goal + record.r_cbf!r}")
        if len(record.obs.frames_packed) != self.frame_count:
            raise ValueError(
                f"record has {len(record.obs.frames_packed)} frames, "
                f"dataset expects {self.frame_count}")
        self.records.append(record)

    def sample(self, n: int, seed: int) -> list[ReplayRecord]:
        """Seeded uniform sample without replacement."""
        if n > len(self.records):
            raise ValueError(f"cannot sample {n} of {len(self.records)} records")
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(self.records), size=n, replace=False)
        return [self.records[i] for i in idx]

    def transitions(self, records: list[ReplayRecord] | None = None):
        """(observation, applied action, next observation) tuples."""
        for rec in records if records is not None else self.records:
            yield (rec.obs.to_observation(self.spec), rec.a_star,
                   rec.next_obs.to_observation(self.spec))

    # -- persistence ---------------------------------------------------

    def save(self, path: str | Path) -> None:
        frame_bytes = -(-self.spec.height * self.spec.width // 8)
        chunks = [_HEADER.pack(MAGIC, VERSION, self.spec.height, self.spec.width,
                               self.frame_count, self.spec.cell_size,
                               len(self.records))]
        for rec in self.records:
            payload = _pack_record(rec, frame_bytes)
            chunks.append(struct.pack("<I", len(payload)))
            chunks.append(payload)
        Path(path).write_bytes(b"".join(chunks))

    @staticmethod
    def load(path: str | Path) -> "ReplayDataset":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated replay file")
        magic, version, h, w, k, cell, count = _HEADER.unpack_from(raw, 0)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a replay file (magic {magic!r})")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported replay version {version}")
        spec = GridSpec(height=h, width=w, cell_size=cell)
        ds = ReplayDataset(spec, k)
        offset = _HEADER.size
        frame_bytes = -(-h * w // 8)
        for _ in range(count):
            (length,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            ds.append(_unpack_record(raw[offset:offset + length], k, frame_bytes))
            offset += length
        return ds


def _pack_record(rec: ReplayRecord, frame_bytes: int) -> bytes:
    parts = []
    for digest in (rec.obs, rec.next_obs):
        for blob in digest.frames_packed:
            if len(blob) != frame_bytes:
                raise ValueError(f"frame digest has {len(blob)} bytes, "
                                 f"expected {frame_bytes}")
            parts.append(blob)
        parts.append(struct.pack("<4d", *digest.goal_rel, *digest.velocity))
    parts.append(struct.pack(
        "<7dB",
        rec.a_nom.linear, rec.a_nom.angular,
        rec.a_star.linear, rec.a_star.angular,
        rec.reward, rec.r_goal, rec.r_cbf,
        1 if rec.done else 0))
    return b"".join(parts)


def _unpack_record(payload: bytes, frame_count: int, frame_bytes: int) -> ReplayRecord:
    offset = 0
    digests = []
    for _ in range(2):
        frames = []
        for _ in range(frame_count):
            frames.append(payload[offset:offset + frame_bytes])
            offset += frame_bytes
        gx, gy, vl, va = struct.unpack_from("<4d", payload, offset)
        offset += 32
        digests.append(ObservationDigest(
            frames_packed=tuple(frames), goal_rel=(gx, gy), velocity=(vl, va)))
    nl, na, sl, sa, r, rg, rc = struct.unpack_from("<7d", payload, offset)
    offset += 56
    (done,) = struct.unpack_from("<B", payload, offset)
    return ReplayRecord(
        obs=digests[0],
        a_nom=Action(nl, na),
        a_star=Action(sl, sa),
        next_obs=digests[1],
        reward=r,
        r_goal=rg,
        r_cbf=rc,
        done=bool(done),
    )
