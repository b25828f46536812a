"""Generated datasets and their binary file format.

File layout (little-endian)::

    b"E2H1"
    task id u8 | difficulty u32 | count u32 | seed u64 | version u16
    payload

Prefix-sum payload: per instance, the input bits then the target bits,
each packed 8 per byte (``ceil(L/8)`` bytes). Maze payload: per instance,
the open-wall bitmask (two bits per cell in row-major order, "right" then
"down", packed 8 per byte) followed by start and end cell indices as u32.
Maze renderings are recomputed on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .maze import MazeInstance, gen_maze
from .prefix import encode_bits, prefix_sum_target, random_bit_strings

MAGIC = b"E2H1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<BIIQH")
TASK_IDS = {"prefix": 0, "maze": 1}
TASK_NAMES = {v: k for k, v in TASK_IDS.items()}


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class DatasetFile:
    task: str
    difficulty: int
    seed: int
    version: int = FORMAT_VERSION
    bits: np.ndarray | None = None
    targets_bits: np.ndarray | None = None
    mazes: list[MazeInstance] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.bits) if self.task == "prefix" else len(self.mazes)

    def inputs(self) -> np.ndarray:
        if self.task == "prefix":
            return encode_bits(self.bits)
        return np.stack([m.image for m in self.mazes])

    def targets(self) -> np.ndarray:
        if self.task == "prefix":
            return self.targets_bits
        return np.stack([m.target for m in self.mazes])

    def __eq__(self, other):
        if not isinstance(other, DatasetFile):
            return NotImplemented
        head = (self.task, self.difficulty, self.seed, self.version, self.count)
        if head != (other.task, other.difficulty, other.seed, other.version, other.count):
            return False
        if self.task == "prefix":
            return np.array_equal(self.bits, other.bits) and np.array_equal(self.targets_bits, other.targets_bits)
        return all(a == b for a, b in zip(self.mazes, other.mazes))


def instance_seeds(seed: int, count: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2**63 - 1, size=count, dtype=np.int64)


def gen_prefix_sum_dataset(length: int, count: int, seed: int) -> DatasetFile:
    bits = random_bit_strings(length, count, np.random.default_rng(seed))
    return DatasetFile("prefix", length, seed, bits=bits, targets_bits=prefix_sum_target(bits))


def gen_maze_dataset(n: int, count: int, seed: int) -> DatasetFile:
    if count < 1:
        raise ValueError("count must be >= 1")
    mazes = [gen_maze(n, int(s)) for s in instance_seeds(seed, count)]
    return DatasetFile("maze", n, seed, mazes=mazes)


def generate(task: str, difficulty: int, count: int, seed: int) -> DatasetFile:
    if task == "prefix":
        return gen_prefix_sum_dataset(difficulty, count, seed)
    if task == "maze":
        return gen_maze_dataset(difficulty, count, seed)
    raise ValueError(f"unknown task {task!r}")


def _pack(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def _unpack(buf: bytes, nbits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=nbits, bitorder="little")


def _maze_wall_bits(m: MazeInstance) -> np.ndarray:
    return np.stack([m.right, m.down], axis=-1).reshape(-1)


def save_dataset(data: DatasetFile, path) -> None:
    out = bytearray(MAGIC)
    out += HEADER.pack(TASK_IDS[data.task], data.difficulty, data.count, data.seed, data.version)
    if data.task == "prefix":
        for b, t in zip(data.bits, data.targets_bits):
            out += _pack(b)
            out += _pack(t)
    else:
        n = data.difficulty
        for m in data.mazes:
            out += _pack(_maze_wall_bits(m))
            out += struct.pack("<II", m.start[0] * n + m.start[1], m.end[0] * n + m.end[1])
    Path(path).write_bytes(bytes(out))


def load_dataset(path) -> DatasetFile:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 4 + HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    task_id, difficulty, count, seed, version = HEADER.unpack_from(raw, 4)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    if task_id not in TASK_NAMES:
        raise DatasetFormatError(f"{path}: unknown task id {task_id}")
    task = TASK_NAMES[task_id]
    body = memoryview(raw)[4 + HEADER.size :]
    if task == "prefix":
        nbytes = (difficulty + 7) // 8
        per = 2 * nbytes
    else:
        nbytes = (2 * difficulty * difficulty + 7) // 8
        per = nbytes + 8
    if len(body) != per * count:
        raise DatasetFormatError(
            f"{path}: payload is {len(body)} bytes, header promises {count} x {per} = {per * count}"
        )
    if task == "prefix":
        bits = np.empty((count, difficulty), dtype=np.uint8)
        targets = np.empty((count, difficulty), dtype=np.uint8)
        for i in range(count):
            chunk = body[i * per : (i + 1) * per]
            bits[i] = _unpack(chunk[:nbytes], difficulty)
            targets[i] = _unpack(chunk[nbytes:], difficulty)
        return DatasetFile(task, difficulty, seed, version, bits=bits, targets_bits=targets)
    n = difficulty
    mazes = []
    for i in range(count):
        chunk = body[i * per : (i + 1) * per]
        walls = _unpack(chunk[:nbytes], 2 * n * n).reshape(n, n, 2).astype(bool)
        s, e = struct.unpack("<II", chunk[nbytes:])
        mazes.append(MazeInstance(n, walls[..., 0].copy(), walls[..., 1].copy(), divmod(s, n), divmod(e, n)))
    return DatasetFile(task, difficulty, seed, version, mazes=mazes)
