"""Conforming triangulations with edge topology and boundary tags.

Edges are globally oriented from the lower to the higher vertex index. Local
edge ``i`` of a triangle is the edge opposite its local vertex ``i`` and is
traversed from vertex ``i+1`` to vertex ``i+2`` (counterclockwise). Its sign
is ``+1`` when that traversal agrees with the global orientation, so the
global unit normal of edge ``(a, b)``, the tangent ``b - a`` rotated
clockwise, is the outward normal of every triangle with sign ``+1``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "EdgeTag",
    "Mesh",
    "SIDES",
    "generate_unit_square",
    "generate_lshape",
    "refine_uniform",
    "refine_bisection",
]

SIDES = ("left", "right", "bottom", "top")


class EdgeTag(enum.IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D triangulation.

    Use :meth:`from_triangles` to build one; the topology arrays are derived
    there and validated.
    """

    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counterclockwise
    edges: np.ndarray  # (ne, 2), low -> high
    triangle_edges: np.ndarray  # (nt, 3), local edge i opposite vertex i
    edge_signs: np.ndarray  # (nt, 3), +1 / -1
    edge_tags: np.ndarray  # (ne,), EdgeTag values
    edge_triangles: np.ndarray  # (ne, 2), second entry -1 on the boundary
    refinement_edge: np.ndarray  # (nt,), local index of the bisection edge
    parent: np.ndarray | None = None  # (nt,), triangle index in the coarser mesh
    generation: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # ------------------------------------------------------------------ build
    @classmethod
    def from_triangles(
        cls,
        vertices,
        triangles,
        boundary_tags: Mapping[tuple[int, int], int] | None = None,
        *,
        default_tag: EdgeTag | None = None,
        refinement_edge=None,
        parent=None,
        generation: int = 0,
    ) -> "Mesh":
        """Build the edge topology of a triangulation and tag its boundary.

        ``boundary_tags`` maps sorted vertex pairs to an :class:`EdgeTag`;
        boundary edges absent from it receive ``default_tag`` (an error if
        that is ``None``).
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise ValueError("triangles must have shape (nt, 3) with nt >= 1")
        nt = len(triangles)

        local_from = triangles[:, [1, 2, 0]]
        local_to = triangles[:, [2, 0, 1]]
        lo = np.minimum(local_from, local_to).ravel()
        hi = np.maximum(local_from, local_to).ravel()
        edges, inverse, counts = np.unique(
            np.column_stack([lo, hi]), axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(nt, 3)
        if np.any(counts > 2):
            raise ValueError("non-manifold triangulation: an edge is shared by more than 2 triangles")
        signs = np.where(local_from < local_to, 1, -1).astype(np.int8)

        edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
        flat_tri = np.repeat(np.arange(nt), 3)
        flat_edge = inverse.ravel()
        order = np.argsort(flat_edge, kind="stable")
        starts = np.searchsorted(flat_edge[order], np.arange(len(edges)))
        edge_triangles[:, 0] = flat_tri[order[starts]]
        second = starts + 1
        twin = counts == 2
        edge_triangles[twin, 1] = flat_tri[order[second[twin]]]

        tags = np.zeros(len(edges), dtype=np.int8)
        boundary_tags = boundary_tags or {}
        for e in np.flatnonzero(counts == 1):
            key = (int(edges[e, 0]), int(edges[e, 1]))
            tag = boundary_tags.get(key, default_tag)
            if tag is None:
                raise ValueError(f"boundary edge {key} has no tag")
            if tag not in (EdgeTag.DIRICHLET, EdgeTag.NEUMANN):
                raise ValueError(f"boundary edge {key} has invalid tag {tag!r}")
            tags[e] = tag

        if refinement_edge is None:
            refinement_edge = _longest_local_edge(vertices, triangles)
        mesh = cls(
            vertices=vertices,
            triangles=triangles,
            edges=edges.astype(np.int64),
            triangle_edges=inverse.astype(np.int64),
            edge_signs=signs,
            edge_tags=tags,
            edge_triangles=edge_triangles,
            refinement_edge=np.asarray(refinement_edge, dtype=np.int8),
            parent=None if parent is None else np.asarray(parent, dtype=np.int64),
            generation=generation,
        )
        mesh.validate()
        return mesh

    def validate(self) -> None:
        area = self.signed_areas
        scale = np.max(np.ptp(self.vertices, axis=0)) ** 2
        if np.any(area <= 1e-14 * scale):
            raise ValueError("triangles must be counterclockwise with positive area")
        if not np.any(self.edge_tags == EdgeTag.DIRICHLET):
            raise ValueError("the Dirichlet boundary must be nonempty")

    # ------------------------------------------------------------- geometry
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def coords(self) -> np.ndarray:
        """Triangle vertex coordinates, shape ``(nt, 3, 2)``."""
        return self.vertices[self.triangles]

    @property
    def signed_areas(self) -> np.ndarray:
        c = self.coords
        d1 = c[:, 1] - c[:, 0]
        d2 = c[:, 2] - c[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            self._cache["areas"] = np.abs(self.signed_areas)
        return self._cache["areas"]

    @property
    def diameters(self) -> np.ndarray:
        """Per-triangle diameter ``h_K`` (longest edge)."""
        return self.edge_lengths[self.triangle_edges].max(axis=1)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_normals(self) -> np.ndarray:
        """Unit normals of the globally oriented edges."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.column_stack([d[:, 1], -d[:, 0]]) / self.edge_lengths[:, None]

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_triangles[:, 1] < 0)

    @property
    def dirichlet_vertices(self) -> np.ndarray:
        """Vertices on the closure of the Dirichlet boundary."""
        e = self.edges[self.edge_tags == EdgeTag.DIRICHLET]
        return np.unique(e.ravel())

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in radians."""
        c = self.coords
        angles = []
        for i in range(3):
            u = c[:, (i + 1) % 3] - c[:, i]
            v = c[:, (i + 2) % 3] - c[:, i]
            cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    def boundary_tag_map(self) -> dict[tuple[int, int], int]:
        return {
            (int(self.edges[e, 0]), int(self.edges[e, 1])): int(self.edge_tags[e])
            for e in self.boundary_edges
        }

    def __repr__(self) -> str:
        return (
            f"Mesh(nv={self.n_vertices}, nt={self.n_triangles}, ne={self.n_edges}, "
            f"generation={self.generation})"
        )


def _longest_local_edge(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    c = vertices[triangles]
    lengths = np.stack(
        [np.linalg.norm(c[:, (i + 2) % 3] - c[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1
    )
    # ties go to the lowest local index; a relative slack absorbs rounding
    longest = lengths.max(axis=1, keepdims=True)
    return np.argmax(lengths >= longest * (1 - 1e-12), axis=1)


# --------------------------------------------------------------- generators
def _normalize_sides(dirichlet_spec) -> set[str]:
    if dirichlet_spec is None or dirichlet_spec == "all":
        return set(SIDES)
    if isinstance(dirichlet_spec, str):
        dirichlet_spec = [s.strip() for s in dirichlet_spec.split(",") if s.strip()]
    sides = set(dirichlet_spec)
    unknown = sides - set(SIDES)
    if unknown:
        raise ValueError(f"unknown boundary sides {sorted(unknown)}; expected a subset of {SIDES}")
    if not sides:
        raise ValueError("dirichlet_spec selects no boundary side")
    return sides


def generate_unit_square(n: int, dirichlet_spec: Iterable[str] | str | None = "all") -> Mesh:
    """Structured ``2 n^2``-triangle mesh of the unit square.

    Every cell is split along its lower-left to upper-right diagonal.
    ``dirichlet_spec`` is ``"all"`` or a collection of side names from
    :data:`SIDES`; the remaining sides are Neumann.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    sides = _normalize_sides(dirichlet_spec)
    t = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(t, t)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    def side_of(a, b):
        (xa, ya), (xb, yb) = vertices[a], vertices[b]
        if xa == xb == 0.0:
            return "left"
        if xa == xb == 1.0:
            return "right"
        if ya == yb == 0.0:
            return "bottom"
        return "top"

    tags = {}
    idx = np.arange(n + 1)
    for line in (idx, idx * (n + 1), idx + n * (n + 1), idx * (n + 1) + n):
        for a, b in zip(line[:-1], line[1:]):
            key = _edge_key(int(a), int(b))
            tags[key] = EdgeTag.DIRICHLET if side_of(*key) in sides else EdgeTag.NEUMANN
    return Mesh.from_triangles(vertices, triangles, tags)


def generate_lshape(n: int) -> Mesh:
    """Mesh of ``(-1,1)^2`` minus ``[0,1) x (-1,0]`` with pure Dirichlet boundary.

    Each of the three unit cells is divided into ``n x n`` squares, each split
    along its lower-left to upper-right diagonal (``6 n^2`` triangles).
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    m = 2 * n
    t = np.linspace(-1.0, 1.0, m + 1)
    xx, yy = np.meshgrid(t, t)
    grid = np.column_stack([xx.ravel(), yy.ravel()])

    tris = []
    for j in range(m):
        for i in range(m):
            if i >= n and j < n:
                continue  # removed quadrant
            v00 = j * (m + 1) + i
            v10, v01, v11 = v00 + 1, v00 + m + 1, v00 + m + 2
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    tris = np.array(tris, dtype=np.int64)
    used, compact = np.unique(tris, return_inverse=True)
    return Mesh.from_triangles(
        grid[used], compact.reshape(tris.shape), default_tag=EdgeTag.DIRICHLET
    )


# --------------------------------------------------------------- refinement
def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into four similar children."""
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    v = mesh.triangles
    m = nv + mesh.triangle_edges  # m[:, i] is the midpoint of the edge opposite vertex i
    children = np.stack(
        [
            np.column_stack([v[:, 0], m[:, 2], m[:, 1]]),
            np.column_stack([m[:, 2], v[:, 1], m[:, 0]]),
            np.column_stack([m[:, 1], m[:, 0], v[:, 2]]),
            np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_triangles), 4)

    tags = {}
    for e in mesh.boundary_edges:
        a, b = (int(x) for x in mesh.edges[e])
        mid = nv + int(e)
        tags[_edge_key(a, mid)] = tags[_edge_key(mid, b)] = int(mesh.edge_tags[e])
    return Mesh.from_triangles(
        vertices, children, tags, parent=parent, generation=mesh.generation + 1
    )


def refine_bisection(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Newest-vertex bisection of the marked triangles with conforming closure.

    Every marked triangle is bisected at least once; neighbours are bisected
    as needed so that no hanging nodes remain.
    """
    marked = np.unique(np.fromiter((int(k) for k in marked), dtype=np.int64))
    if marked.size and (marked[0] < 0 or marked[-1] >= mesh.n_triangles):
        raise ValueError("marked triangle index out of range")
    if marked.size == 0:
        return mesh

    tri_idx = np.arange(mesh.n_triangles)
    ref_global = mesh.triangle_edges[tri_idx, mesh.refinement_edge]
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[ref_global[marked]] = True
    while True:
        touched = edge_marked[mesh.triangle_edges].any(axis=1)
        pending = touched & ~edge_marked[ref_global]
        if not pending.any():
            break
        edge_marked[ref_global[pending]] = True

    nv = mesh.n_vertices
    new_ids = np.full(mesh.n_edges, -1, dtype=np.int64)
    split = np.flatnonzero(edge_marked)
    new_ids[split] = nv + np.arange(split.size)
    mids = 0.5 * (mesh.vertices[mesh.edges[split, 0]] + mesh.vertices[mesh.edges[split, 1]])
    vertices = np.vstack([mesh.vertices, mids])

    edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(mesh.edges)}

    def midpoint(a, b):
        k = edge_index.get(_edge_key(a, b))
        return -1 if k is None else int(new_ids[k])

    triangles, ref_edges, parents = [], [], []

    def bisect(tri, ref, owner):
        # tri is counterclockwise; ref is the local index of its refinement edge
        c = tri[ref]
        a = tri[(ref + 1) % 3]
        b = tri[(ref + 2) % 3]
        mid = midpoint(a, b)
        if mid < 0:
            triangles.append(tri)
            ref_edges.append(ref)
            parents.append(owner)
            return
        bisect((a, mid, c), 1, owner)
        bisect((mid, b, c), 0, owner)

    for k in range(mesh.n_triangles):
        bisect(tuple(int(x) for x in mesh.triangles[k]), int(mesh.refinement_edge[k]), k)

    tags = {}
    for e in mesh.boundary_edges:
        a, b = (int(x) for x in mesh.edges[e])
        t = int(mesh.edge_tags[e])
        if edge_marked[e]:
            mid = int(new_ids[e])
            tags[_edge_key(a, mid)] = tags[_edge_key(mid, b)] = t
        else:
            tags[(a, b)] = t
    return Mesh.from_triangles(
        vertices,
        np.array(triangles, dtype=np.int64),
        tags,
        refinement_edge=np.array(ref_edges),
        parent=np.array(parents),
        generation=mesh.generation + 1,
    )
