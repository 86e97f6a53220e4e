"""Maximum bipartite matching via Hopcroft-Karp.

Used by the alldiff filtering step of the solver, where each line of the
square induces a bipartite graph between its open cells and the symbols they
can still take.
"""

from __future__ import annotations

from collections import deque
from typing import Dict, Hashable, Iterable, List, Set, Tuple

_INF = float("inf")


def max_matching(
    left_vertices: Iterable[Hashable],
    right_vertices: Iterable[Hashable],
    edges: Iterable[Tuple[Hashable, Hashable]],
) -> Set[Tuple[Hashable, Hashable]]:
    """Return a maximum matching as a set of (left, right) edges.

    Vertices may be any hashable values.  Edges referencing unknown vertices
    raise ValueError.  The result is deterministic for a fixed input order:
    ties are resolved by the order in which vertices and edges are listed.
    """
    left: List[Hashable] = list(dict.fromkeys(left_vertices))
    right: List[Hashable] = list(dict.fromkeys(right_vertices))
    lindex = {v: i for i, v in enumerate(left)}
    rindex = {v: i for i, v in enumerate(right)}
    adj: List[List[int]] = [[] for _ in left]
    seen_edges = set()
    for l, r in edges:
        if l not in lindex or r not in rindex:
            raise ValueError(f"edge ({l!r}, {r!r}) references unknown vertices")
        li, ri = lindex[l], rindex[r]
        if (li, ri) not in seen_edges:
            seen_edges.add((li, ri))
            adj[li].append(ri)

    match_l: List[int] = [-1] * len(left)
    match_r: List[int] = [-1] * len(right)
    dist: List[float] = [0.0] * len(left)

    def bfs() -> bool:
        q = deque()
        for u in range(len(left)):
            if match_l[u] == -1:
                dist[u] = 0.0
                q.append(u)
            else:
                dist[u] = _INF
        found = False
        while q:
            u = q.popleft()
            for v in adj[u]:
                w = match_r[v]
                if w == -1:
                    found = True
                elif dist[w] == _INF:
                    dist[w] = dist[u] + 1
                    q.append(w)
        return found

    def dfs(u: int) -> bool:
        for v in adj[u]:
            w = match_r[v]
            if w == -1 or (dist[w] == dist[u] + 1 and dfs(w)):
                match_l[u] = v
                match_r[v] = u
                return True
        dist[u] = _INF
        return False

    while bfs():
        for u in range(len(left)):
            if match_l[u] == -1:
                dfs(u)

    return {(left[u], right[v]) for u, v in enumerate(match_l) if v != -1}
