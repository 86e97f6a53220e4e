"""Partial Latin squares: validation, generation, and hole poking.

A quasigroup-with-holes instance is built by generating a complete Latin
square and then erasing cells, which keeps the instance satisfiable by
construction.  Balanced erasure (the same number of holes in every row and
every column) produces markedly harder search problems than unconstrained
erasure at the same hole count.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

from .seeds import normalize_seed

# Marker for an unfilled cell.  Symbols are 1..n, so None can never collide.
HOLE: Optional[int] = None

Cells = Tuple[Tuple[Optional[int], ...], ...]

UNBALANCED = "unbalanced"
BALANCED = "balanced"


class StructureError(ValueError):
    """Raised for malformed grids: bad shape, bad symbol range, bad hole spec."""


class Violation(NamedTuple):
    """One Latin-property violation: a symbol repeated within a line."""

    kind: str  # "row" or "column"
    index: int
    symbol: int


@dataclass(frozen=True)
class PartialLatinSquare:
    """An order-n grid whose cells hold a symbol in 1..n or HOLE.

    Construction checks structure only (shape and symbol range); the Latin
    property itself is checked by validate(), so that squares with duplicate
    symbols are representable and reportable.
    """

    order: int
    cells: Cells

    def __post_init__(self) -> None:
        n = self.order
        if not isinstance(n, int) or n < 1:
            raise StructureError(f"order must be a positive int, got {n!r}")
        if not isinstance(self.cells, tuple) or len(self.cells) != n:
            raise StructureError(f"expected {n} rows, got {len(self.cells)}")
        for r, row in enumerate(self.cells):
            if not isinstance(row, tuple) or len(row) != n:
                raise StructureError(f"row {r} has {len(row)} cells, expected {n}")
            for c, v in enumerate(row):
                if v is HOLE:
                    continue
                if not isinstance(v, int) or isinstance(v, bool) or not (1 <= v <= n):
                    raise StructureError(
                        f"cell ({r},{c}) holds {v!r}, expected 1..{n} or HOLE"
                    )

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[Optional[int]]]) -> "PartialLatinSquare":
        cells = tuple(tuple(row) for row in rows)
        return cls(order=len(cells), cells=cells)

    def cell(self, r: int, c: int) -> Optional[int]:
        return self.cells[r][c]

    def holes(self) -> Iterator[Tuple[int, int]]:
        for r, row in enumerate(self.cells):
            for c, v in enumerate(row):
                if v is HOLE:
                    yield (r, c)

    def hole_count(self) -> int:
        return sum(1 for _ in self.holes())

    def is_complete(self) -> bool:
        return self.hole_count() == 0


def validate(square: PartialLatinSquare) -> List[Violation]:
    """Return every duplicated (line, symbol) pair; empty list means valid.

    Holes are ignored.  Structural problems raise StructureError (via the
    PartialLatinSquare constructor) rather than being reported as violations.
    """
    n = square.order
    out: List[Violation] = []
    for r in range(n):
        seen = {}
        for v in square.cells[r]:
            if v is not HOLE:
                seen[v] = seen.get(v, 0) + 1
        for v, k in sorted(seen.items()):
            if k > 1:
                out.append(Violation("row", r, v))
    for c in range(n):
        seen = {}
        for r in range(n):
            v = square.cells[r][c]
            if v is not HOLE:
                seen[v] = seen.get(v, 0) + 1
        for v, k in sorted(seen.items()):
            if k > 1:
                out.append(Violation("column", c, v))
    return out


def _bits_to_symbols(mask: int) -> List[int]:
    out = []
    while mask:
        b = mask & -mask
        out.append(b.bit_length())
        mask ^= b
    return out


def generate_complete(n: int, seed: int) -> PartialLatinSquare:
    """Generate a complete order-n Latin square by randomized backtracking.

    Cells are filled in row-major order; each cell draws a uniformly random
    symbol among those still legal for its row and column, backtracking on
    dead ends.  Any complete Latin rectangle extends to a full square, so the
    search never has to retreat past a completed row and always terminates.
    The construction is deterministic per seed but does not sample uniformly
    from all Latin squares.
    """
    if n < 1:
        raise StructureError(f"order must be >= 1, got {n}")
    rng = random.Random(normalize_seed(seed))
    size = n * n
    full = (1 << n) - 1
    row_used = [0] * n
    col_used = [0] * n
    flat = [0] * size
    stack: List[List[int]] = []  # remaining candidates per filled prefix cell
    i = 0
    while i < size:
        r, c = divmod(i, n)
        if len(stack) == i:
            avail = full & ~(row_used[r] | col_used[c])
            cands = _bits_to_symbols(avail)
            rng.shuffle(cands)
            stack.append(cands)
        cands = stack[i]
        if cands:
            s = cands.pop()
            flat[i] = s
            bit = 1 << (s - 1)
            row_used[r] |= bit
            col_used[c] |= bit
            i += 1
        else:
            stack.pop()
            i -= 1
            if i < 0:
                raise RuntimeError("backtracked past the first cell")
            r, c = divmod(i, n)
            bit = 1 << (flat[i] - 1)
            row_used[r] &= ~bit
            col_used[c] &= ~bit
    cells = tuple(tuple(flat[r * n + c] for c in range(n)) for r in range(n))
    return PartialLatinSquare(order=n, cells=cells)


@dataclass(frozen=True)
class HoleSpec:
    """How to erase cells: a flat total, or a per-line count for balance."""

    mode: str
    total_holes: Optional[int] = None
    holes_per_line: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode == UNBALANCED:
            if self.total_holes is None or self.total_holes < 0:
                raise StructureError("unbalanced spec needs total_holes >= 0")
        elif self.mode == BALANCED:
            if self.holes_per_line is None or self.holes_per_line < 0:
                raise StructureError("balanced spec needs holes_per_line >= 0")
        else:
            raise StructureError(f"unknown hole mode {self.mode!r}")

    @classmethod
    def unbalanced(cls, total_holes: int) -> "HoleSpec":
        return cls(mode=UNBALANCED, total_holes=total_holes)

    @classmethod
    def balanced(cls, holes_per_line: int) -> "HoleSpec":
        return cls(mode=BALANCED, holes_per_line=holes_per_line)


_PATTERN_RETRIES = 1000


def _balanced_holes(n: int, h: int, rng: random.Random) -> List[Tuple[int, int]]:
    """Support of h pairwise-disjoint random permutation matrices.

    Each permutation is drawn by rejection against the cells already taken,
    with the whole pattern restarted after 1000 failed draws for one slot.
    h == n and h == n-1 admit essentially one shape (everything, or all but
    one permutation), where rejection would almost never terminate, so those
    are drawn directly with the same distribution.
    """
    if h == 0:
        return []
    if h == n:
        return [(r, c) for r in range(n) for c in range(n)]
    if h == n - 1:
        keep = list(range(n))
        rng.shuffle(keep)
        return [(r, c) for r in range(n) for c in range(n) if c != keep[r]]
    while True:
        taken: List[set] = [set() for _ in range(n)]
        count = 0
        restart = False
        for _ in range(h):
            for _ in range(_PATTERN_RETRIES):
                p = list(range(n))
                rng.shuffle(p)
                if all(p[r] not in taken[r] for r in range(n)):
                    for r in range(n):
                        taken[r].add(p[r])
                    count += 1
                    break
            else:
                restart = True
                break
        if not restart and count == h:
            return [(r, c) for r in range(n) for c in sorted(taken[r])]


def poke_holes(square: PartialLatinSquare, spec: HoleSpec, seed: int) -> PartialLatinSquare:
    """Erase cells from a complete square according to spec, deterministically.

    Unbalanced mode samples total_holes cell positions uniformly without
    replacement.  Balanced mode erases holes_per_line cells in every row and
    every column by composing disjoint random permutation matrices.
    """
    if not square.is_complete():
        raise StructureError("poke_holes requires a complete square")
    n = square.order
    rng = random.Random(normalize_seed(seed))
    if spec.mode == UNBALANCED:
        k = spec.total_holes
        if k > n * n:
            raise StructureError(f"total_holes {k} exceeds {n * n} cells")
        positions = rng.sample(range(n * n), k)
        holes = {divmod(p, n) for p in positions}
    else:
        h = spec.holes_per_line
        if h > n:
            raise StructureError(f"holes_per_line {h} exceeds order {n}")
        holes = set(_balanced_holes(n, h, rng))
    cells = tuple(
        tuple(HOLE if (r, c) in holes else square.cells[r][c] for c in range(n))
        for r in range(n)
    )
    return PartialLatinSquare(order=n, cells=cells)


def iter_completions(instance: PartialLatinSquare) -> Iterator[PartialLatinSquare]:
    """Yield every completion of the instance, by exhaustive search.

    Plain depth-first enumeration: holes in row-major order, symbols in
    ascending order, row/column consistency checks only.  Intended as an
    oracle for small orders, not as a solver.
    """
    if validate(instance):
        raise StructureError("instance violates the Latin property")
    n = instance.order
    full = (1 << n) - 1
    row_used = [0] * n
    col_used = [0] * n
    flat: List[int] = [0] * (n * n)
    holes: List[Tuple[int, int]] = []
    for r in range(n):
        for c in range(n):
            v = instance.cells[r][c]
            if v is HOLE:
                holes.append((r, c))
            else:
                flat[r * n + c] = v
                bit = 1 << (v - 1)
                row_used[r] |= bit
                col_used[c] |= bit
    m = len(holes)
    if m == 0:
        yield instance
        return
    # stack[d] = remaining candidate mask for hole d
    stack: List[int] = [0] * m
    d = 0
    stack[0] = full & ~(row_used[holes[0][0]] | col_used[holes[0][1]])
    placed: List[int] = [0] * m  # bit placed at depth d
    while d >= 0:
        r, c = holes[d]
        if placed[d]:
            bit = placed[d]
            row_used[r] &= ~bit
            col_used[c] &= ~bit
            placed[d] = 0
        mask = stack[d]
        if mask == 0:
            d -= 1
            continue
        bit = mask & -mask  # lowest symbol first
        stack[d] = mask ^ bit
        placed[d] = bit
        row_used[r] |= bit
        col_used[c] |= bit
        flat[r * n + c] = bit.bit_length()
        if d == m - 1:
            yield PartialLatinSquare(
                order=n,
                cells=tuple(tuple(flat[i * n + j] for j in range(n)) for i in range(n)),
            )
            # undo happens at loop top on revisit
        else:
            d += 1
            nr, nc = holes[d]
            stack[d] = full & ~(row_used[nr] | col_used[nc])
    return


def count_completions(instance: PartialLatinSquare, cap: int = 1_000_000) -> int:
    """Count completions of the instance, truncated at cap."""
    if cap < 0:
        raise StructureError(f"cap must be >= 0, got {cap}")
    count = 0
    for _ in iter_completions(instance):
        count += 1
        if count >= cap:
            break
    return count
