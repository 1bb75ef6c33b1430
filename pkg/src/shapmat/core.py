"""Domain types and the maintained player-by-task Shapley matrix.

The matrix is dense float64 with NaN as the internal encoding of the ABSENT
sentinel (self-valuation diagonals).  Every non-absent entry is finite, so
NaN is unambiguous.  All mutation primitives take a matrix and return a new
one; the single-writer contract means callers never alias a mutable matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import AlreadyExists, NotFound

PlayerId = int
TaskId = int

# Column provenance tags.
EXACT_LOCAL = "EXACT_LOCAL"
MC = "MC"
INTERPOLATED = "INTERPOLATED"
REUSED = "REUSED"


class _Absent:
    """Singleton marking undefined self-valuation diagonal entries."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ABSENT"

    def __bool__(self):
        return False


ABSENT = _Absent()


class Coalition(tuple):
    """A duplicate-free player subset in canonical ascending-id order.

    The canonical ordering gives every coalition exactly one serialized
    form, which pivot assignment and the trained-model cache rely on.
    """

    __slots__ = ()

    def __new__(cls, members: Iterable[PlayerId] = ()):
        ms = tuple(sorted(members))
        for a, b in zip(ms, ms[1:]):
            if a == b:
                raise ValueError(f"duplicate member {a} in coalition")
        return super().__new__(cls, ms)

    def add(self, z: PlayerId) -> "Coalition":
        if z in self:
            raise ValueError(f"member {z} already in coalition")
        return Coalition(self + (z,))

    def drop(self, z: PlayerId) -> "Coalition":
        if z not in self:
            raise ValueError(f"member {z} not in coalition")
        return Coalition(m for m in self if m != z)


@dataclass(frozen=True)
class SupportSet:
    """The players that determine a task's utility (its local game)."""

    task: TaskId
    members: Coalition
    epoch: int = 0

    def __len__(self):
        return len(self.members)


@dataclass
class ValueColumn:
    """One task's Shapley column; players absent from ``entries`` are zero."""

    task: TaskId
    entries: dict[PlayerId, float]
    provenance: str = EXACT_LOCAL


class ShapleyMatrix:
    """Dense player-by-task grid of Shapley values with anchor metadata.

    ``values[i, j]`` is the contribution of player ``players[i]`` to task
    ``tasks[j]``; it is ABSENT exactly when task ``j`` is the self-valuation
    proxy of player ``i``.  ``anchor_order`` lists the anchor tasks in their
    fixed pivot ordering and is kept consistent by every mutation.
    """

    def __init__(
        self,
        players: Iterable[PlayerId] = (),
        tasks: Iterable[TaskId] = (),
        values: np.ndarray | None = None,
        anchor_order: Iterable[TaskId] = (),
        proxy_for: Mapping[TaskId, PlayerId] | None = None,
        label_of_task: Mapping[TaskId, int] | None = None,
        label_of_player: Mapping[PlayerId, int] | None = None,
        provenance: Mapping[TaskId, str] | None = None,
    ):
        self.players = list(players)
        self.tasks = list(tasks)
        if values is None:
            values = np.zeros((len(self.players), len(self.tasks)))
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(self.players), len(self.tasks)):
            raise ValueError("values shape does not match players x tasks")
        self.anchor_order = list(anchor_order)
        self.proxy_for = dict(proxy_for or {})
        self.label_of_task = dict(label_of_task or {})
        self.label_of_player = dict(label_of_player or {})
        self.provenance = dict(provenance or {})
        self._reindex()
        self._check()

    # -- bookkeeping ----------------------------------------------------

    def _reindex(self):
        self._row = {z: i for i, z in enumerate(self.players)}
        self._col = {t: j for j, t in enumerate(self.tasks)}
        if len(self._row) != len(self.players):
            raise ValueError("duplicate player ids")
        if len(self._col) != len(self.tasks):
            raise ValueError("duplicate task ids")

    def _check(self):
        seen = set(self.anchor_order)
        if len(seen) != len(self.anchor_order):
            raise ValueError("anchor_order contains duplicates")
        for t in self.anchor_order:
            if t not in self._col:
                raise ValueError(f"anchor task {t} is not a matrix column")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def is_anchor(self, t: TaskId) -> bool:
        return t in set(self.anchor_order)

    def copy(self) -> "ShapleyMatrix":
        return ShapleyMatrix(
            self.players,
            self.tasks,
            self.values.copy(),
            self.anchor_order,
            self.proxy_for,
            self.label_of_task,
            self.label_of_player,
            self.provenance,
        )

    # -- reads ------------------------------------------------------------

    def get_entry(self, z: PlayerId, t: TaskId):
        """Return the stored value, or ABSENT for an undefined diagonal."""
        try:
            v = self.values[self._row[z], self._col[t]]
        except KeyError as exc:
            raise NotFound(f"unknown id {exc.args[0]}") from None
        return ABSENT if np.isnan(v) else float(v)

    def column(self, t: TaskId) -> np.ndarray:
        if t not in self._col:
            raise NotFound(f"unknown task {t}")
        return self.values[:, self._col[t]].copy()

    def row(self, z: PlayerId) -> np.ndarray:
        if z not in self._row:
            raise NotFound(f"unknown player {z}")
        return self.values[self._row[z], :].copy()

    def column_dict(self, t: TaskId) -> dict[PlayerId, float]:
        """Column as a map, skipping ABSENT entries."""
        col = self.column(t)
        return {z: float(v) for z, v in zip(self.players, col) if not np.isnan(v)}

    # -- mutations (value semantics) ------------------------------------

    def set_column(self, t: TaskId, entries: Mapping[PlayerId, float]) -> "ShapleyMatrix":
        """Overwrite one column; unlisted players become 0, diagonal stays ABSENT."""
        if t not in self._col:
            raise NotFound(f"unknown task {t}")
        m = self.copy()
        m._write_column(t, entries)
        return m

    def _write_column(self, t: TaskId, entries: Mapping[PlayerId, float]):
        j = self._col[t]
        col = np.zeros(len(self.players))
        for z, v in entries.items():
            if z not in self._row:
                raise NotFound(f"unknown player {z}")
            if not np.isfinite(v):
                raise ValueError(f"non-finite value for player {z}")
            col[self._row[z]] = v
        owner = self.proxy_for.get(t)
        if owner is not None and owner in self._row:
            col[self._row[owner]] = np.nan
        self.values[:, j] = col

    def append_column(
        self,
        t: TaskId,
        col: ValueColumn,
        as_anchor: bool = False,
        proxy_for: PlayerId | None = None,
        label: int | None = None,
    ) -> "ShapleyMatrix":
        if t in self._col:
            raise AlreadyExists(f"task {t} already present")
        m = self.copy()
        m.tasks.append(t)
        m.values = np.hstack([m.values, np.zeros((len(m.players), 1))])
        m._reindex()
        if proxy_for is not None:
            m.proxy_for[t] = proxy_for
        if label is not None:
            m.label_of_task[t] = label
        m.provenance[t] = col.provenance
        if as_anchor:
            m.anchor_order.append(t)
        m._write_column(t, col.entries)
        return m

    def append_row(self, z: PlayerId, label: int | None = None) -> "ShapleyMatrix":
        """Add a new player as an all-zero row."""
        if z in self._row:
            raise AlreadyExists(f"player {z} already present")
        m = self.copy()
        m.players.append(z)
        m.values = np.vstack([m.values, np.zeros((1, len(m.tasks)))])
        if label is not None:
            m.label_of_player[z] = label
        m._reindex()
        return m

    def remove_column(self, t: TaskId) -> "ShapleyMatrix":
        if t not in self._col:
            raise NotFound(f"unknown task {t}")
        j = self._col[t]
        m = self.copy()
        m.tasks.pop(j)
        m.values = np.delete(m.values, j, axis=1)
        m.anchor_order = [a for a in m.anchor_order if a != t]
        m.proxy_for.pop(t, None)
        m.label_of_task.pop(t, None)
        m.provenance.pop(t, None)
        m._reindex()
        return m

    def remove_row(self, z: PlayerId) -> "ShapleyMatrix":
        if z not in self._row:
            raise NotFound(f"unknown player {z}")
        i = self._row[z]
        m = self.copy()
        m.players.pop(i)
        m.values = np.delete(m.values, i, axis=0)
        m.label_of_player.pop(z, None)
        m._reindex()
        return m

    # -- comparison -------------------------------------------------------

    def equals(self, other: "ShapleyMatrix", atol: float = 0.0) -> bool:
        """Entrywise comparison (NaN-aware); atol=0 demands bit equality."""
        if self.players != other.players or self.tasks != other.tasks:
            return False
        if self.anchor_order != other.anchor_order:
            return False
        if atol == 0.0:
            return bool(np.array_equal(self.values, other.values, equal_nan=True))
        same_nan = np.isnan(self.values) == np.isnan(other.values)
        if not same_nan.all():
            return False
        mask = ~np.isnan(self.values)
        return bool(np.allclose(self.values[mask], other.values[mask], atol=atol, rtol=0.0))


# -- persistence ----------------------------------------------------------
#
# Text grid, bit-exact: a header line carrying the anchor order, then a
# tab-separated grid whose first row holds task ids (anchors carry a ``*``
# suffix) and whose first column holds player ids.  Cells are decimal
# floats printed with 17 significant digits, or the literal ``NA`` for
# ABSENT entries.


def _fmt(v: float) -> str:
    return "NA" if np.isnan(v) else format(float(v), ".17g")


def save_matrix(m: ShapleyMatrix, path) -> None:
    lines = ["# anchor_order:" + "".join(f"\t{t}" for t in m.anchor_order)]
    anchors = set(m.anchor_order)
    header = [""] + [f"{t}*" if t in anchors else str(t) for t in m.tasks]
    lines.append("\t".join(header))
    for i, z in enumerate(m.players):
        cells = [str(z)] + [_fmt(v) for v in m.values[i]]
        lines.append("\t".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_matrix(path) -> ShapleyMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# anchor_order:"):
        raise ValueError(f"{path}: missing anchor_order header")
    rest = lines[0][len("# anchor_order:"):]
    anchor_order = [int(x) for x in rest.split("\t") if x]
    header = lines[1].split("\t")
    tasks = [int(h.rstrip("*")) for h in header[1:]]
    players: list[PlayerId] = []
    rows = []
    for line in lines[2:]:
        if not line:
            continue
        cells = line.split("\t")
        players.append(int(cells[0]))
        rows.append([np.nan if c == "NA" else float(c) for c in cells[1:]])
    values = np.asarray(rows, dtype=float) if rows else np.zeros((0, len(tasks)))
    proxy = {}
    for j, t in enumerate(tasks):
        if len(players) and np.isnan(values[:, j]).any():
            i = int(np.flatnonzero(np.isnan(values[:, j]))[0])
            proxy[t] = players[i]
    return ShapleyMatrix(players, tasks, values, anchor_order, proxy_for=proxy)
