"""Spanning-tree mazes, their exact solver and the pixel rendering.

Geometry: an ``n x n`` cell grid is drawn on a ``(3n+1) x (3n+1)`` image.
Each cell is a 2x2 pixel block whose top-left pixel sits at
``(3r+1, 3c+1)``; walls are one pixel thick and the grid is framed by a
one-pixel outer wall. Images are channels-last with 3 channels:

    wall      (0, 0, 0)
    corridor  (1, 1, 1)
    start     (1, 0, 0)
    end       (0, 1, 0)
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

Cell = tuple[int, int]

WALL = (0.0, 0.0, 0.0)
CORRIDOR = (1.0, 1.0, 1.0)
START = (1.0, 0.0, 0.0)
END = (0.0, 1.0, 0.0)
BLOCK = 2
PITCH = BLOCK + 1


def image_side(n: int) -> int:
    return PITCH * n + 1


def cell_origin(cell: Cell) -> tuple[int, int]:
    r, c = cell
    return PITCH * r + 1, PITCH * c + 1


@dataclass(frozen=True, eq=False)
class MazeInstance:
    """A maze over an ``n x n`` cell grid.

    ``right[r, c]`` is True when the wall between ``(r, c)`` and
    ``(r, c+1)`` is open; ``down[r, c]`` likewise for ``(r+1, c)``.
    """

    n: int
    right: np.ndarray
    down: np.ndarray
    start: Cell
    end: Cell
    _render: dict = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other):
        if not isinstance(other, MazeInstance):
            return NotImplemented
        return (
            self.n == other.n
            and self.start == other.start
            and self.end == other.end
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.down, other.down)
        )

    @property
    def open_walls(self) -> int:
        return int(self.right.sum() + self.down.sum())

    def neighbors(self, cell: Cell) -> list[Cell]:
        r, c = cell
        out = []
        if c + 1 < self.n and self.right[r, c]:
            out.append((r, c + 1))
        if r + 1 < self.n and self.down[r, c]:
            out.append((r + 1, c))
        if c > 0 and self.right[r, c - 1]:
            out.append((r, c - 1))
        if r > 0 and self.down[r - 1, c]:
            out.append((r - 1, c))
        return out

    def with_end(self, end: Cell) -> "MazeInstance":
        if end == self.start:
            raise ValueError("end must differ from start")
        return MazeInstance(self.n, self.right, self.down, self.start, end)

    @property
    def image(self) -> np.ndarray:
        if "image" not in self._render:
            self._render["image"], self._render["target"] = render_maze(self)
        return self._render["image"]

    @property
    def target(self) -> np.ndarray:
        self.image
        return self._render["target"]


def carve_spanning_tree(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Randomized depth-first carving; returns the (right, down) open-wall masks."""
    right = np.zeros((n, n), dtype=bool)
    down = np.zeros((n, n), dtype=bool)
    visited = np.zeros((n, n), dtype=bool)
    first = (int(rng.integers(n)), int(rng.integers(n)))
    visited[first] = True
    stack = [first]
    while stack:
        r, c = stack[-1]
        options = [
            (rr, cc)
            for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
            if 0 <= rr < n and 0 <= cc < n and not visited[rr, cc]
        ]
        if not options:
            stack.pop()
            continue
        rr, cc = options[int(rng.integers(len(options)))]
        if rr == r:
            right[r, min(c, cc)] = True
        else:
            down[min(r, rr), c] = True
        visited[rr, cc] = True
        stack.append((rr, cc))
    return right, down


def gen_maze(n: int, seed: int) -> MazeInstance:
    if n < 3:
        raise ValueError(f"maze size must be >= 3, got {n}")
    rng = np.random.default_rng(seed)
    right, down = carve_spanning_tree(n, rng)
    cells = n * n
    s = int(rng.integers(cells))
    e = int(rng.integers(cells - 1))
    if e >= s:
        e += 1
    return MazeInstance(n, right, down, divmod(s, n), divmod(e, n))


def maze_oracle_path(maze: MazeInstance) -> list[Cell]:
    """The unique start-to-end cell path, found by breadth-first search."""
    parent: dict[Cell, Cell | None] = {maze.start: None}
    queue = deque([maze.start])
    while queue:
        cell = queue.popleft()
        if cell == maze.end:
            break
        for nxt in maze.neighbors(cell):
            if nxt not in parent:
                parent[nxt] = cell
                queue.append(nxt)
    if maze.end not in parent:
        raise ValueError("maze_oracle_path: end is unreachable from start (not a spanning-tree maze)")
    path = [maze.end]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def _paint_cell(img: np.ndarray, cell: Cell, color) -> None:
    y, x = cell_origin(cell)
    img[y : y + BLOCK, x : x + BLOCK] = color


def _opening(a: Cell, b: Cell) -> tuple[slice, slice]:
    """Pixel slice of the wall segment between two adjacent cells."""
    (r1, c1), (r2, c2) = sorted([a, b])
    y, x = cell_origin((r1, c1))
    if r1 == r2:
        return slice(y, y + BLOCK), slice(x + BLOCK, x + BLOCK + 1)
    return slice(y + BLOCK, y + BLOCK + 1), slice(x, x + BLOCK)


def render_maze(maze: MazeInstance) -> tuple[np.ndarray, np.ndarray]:
    """Return the (H, W, 3) float32 input image and (H, W) uint8 path mask."""
    n = maze.n
    side = image_side(n)
    img = np.zeros((side, side, 3), dtype=np.float32)
    for r in range(n):
        for c in range(n):
            _paint_cell(img, (r, c), CORRIDOR)
            if c + 1 < n and maze.right[r, c]:
                img[_opening((r, c), (r, c + 1))] = CORRIDOR
            if r + 1 < n and maze.down[r, c]:
                img[_opening((r, c), (r + 1, c))] = CORRIDOR
    _paint_cell(img, maze.start, START)
    _paint_cell(img, maze.end, END)

    mask = np.zeros((side, side), dtype=np.uint8)
    path = maze_oracle_path(maze)
    for a, b in zip(path, path[1:]):
        mask[_opening(a, b)] = 1
    for cell in path:
        y, x = cell_origin(cell)
        mask[y : y + BLOCK, x : x + BLOCK] = 1
    return img, mask


def locate_endpoints(image: np.ndarray) -> tuple[Cell, Cell]:
    """Recover (start, end) cells from a rendered image."""
    found = {}
    for key, color in (("start", START), ("end", END)):
        hits = np.argwhere(np.all(image == np.asarray(color, dtype=image.dtype), axis=-1))
        if hits.size == 0:
            raise ValueError(f"no {key} pixels in image")
        y, x = hits.min(axis=0)
        found[key] = ((y - 1) // PITCH, (x - 1) // PITCH)
    return found["start"], found["end"]


def move_end_toward_start(maze: MazeInstance, steps: int = 2) -> MazeInstance:
    """Relocate the end ``steps`` cells back along the solution path."""
    path = maze_oracle_path(maze)
    if len(path) - 1 <= steps:
        raise ValueError(f"path has {len(path) - 1} steps; need more than {steps} to move the end")
    return maze.with_end(path[-1 - steps])
