"""Binary forest of triangles generated by newest vertex bisection.

Vertices carry exact dyadic coordinates.  They are stored as Python integers
at the fixed scale ``2**-SCALE_BITS``, so midpoints are computed by an exact
shift and vertex deduplication is exact equality of integer pairs.

Triangles live in an append-only arena of flat arrays and are referred to by
integer handles.  A triangle stores ``(peak1, peak2, newest)`` with the two
peaks sorted by vertex id; its refinement edge is ``(peak1, peak2)``.

Examples
--------
>>> f = unit_square()
>>> c0, c1 = f.bisect(0)
>>> f.coords(f.newest(c0))
(Fraction(1, 2), Fraction(1, 2))
"""
from __future__ import annotations

import math
from array import array
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import AlreadyBisected, MatchingViolation, NonConforming, ParseError, PrecisionExhausted

SCALE_BITS = 128
SCALE = 1 << SCALE_BITS

Edge = tuple  # sorted pair of vertex ids


def edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _to_scaled(value: Fraction) -> int:
    den = value.denominator
    if den & (den - 1):
        raise ParseError(f"coordinate {value} is not dyadic")
    exp = den.bit_length() - 1
    if exp > SCALE_BITS // 2:
        raise ParseError(f"coordinate {value} needs too many bits")
    return value.numerator << (SCALE_BITS - exp)


def _dyadic_exponent(x: int) -> int:
    """Denominator exponent of the dyadic number ``x / SCALE``."""
    if x == 0:
        return 0
    low = (x & -x).bit_length() - 1
    return max(SCALE_BITS - low, 0)


class Forest:
    """Lazily materialised NVB forest rooted at an initial triangulation.

    Parameters
    ----------
    coords : sequence of (Fraction, Fraction)
        Dyadic vertex coordinates of the initial mesh.
    triangles : sequence of (int, int, int)
        Vertex indices; the third entry is the newest vertex.
    """

    def __init__(self, coords: Sequence[tuple[Fraction, Fraction]],
                 triangles: Sequence[tuple[int, int, int]]):
        self.p1 = array("q")
        self.p2 = array("q")
        self.nw = array("q")
        self.tgen = array("q")
        self.tparent = array("q")
        self.tchild = array("q")

        self.vx: list[int] = []
        self.vy: list[int] = []
        self.vxf = array("d")
        self.vyf = array("d")
        self.vgen = array("q")
        self.vcreator = array("q")
        self.vbnd: list[int] = []  # bitmask of root boundary edges through the vertex
        self._vindex: dict[tuple[int, int], int] = {}
        self._nbr: dict[tuple[int, tuple[int, int]], int] = {}
        self.float_exact = True
        self.e0 = 0
        self.genealogy: dict[str, dict] = {}  # memo tables owned by the population module

        for x, y in coords:
            xs, ys = _to_scaled(Fraction(x)), _to_scaled(Fraction(y))
            if (xs, ys) in self._vindex:
                raise ParseError(f"duplicate vertex ({x}, {y})")
            self.e0 = max(self.e0, _dyadic_exponent(xs), _dyadic_exponent(ys))
            self._new_vertex(xs, ys, 0, -1, 0)

        for tri in triangles:
            a, b, n = (int(i) for i in tri)
            if len({a, b, n}) != 3 or max(a, b, n) >= len(self.vx) or min(a, b, n) < 0:
                raise ParseError(f"bad triangle {tri}")
            self._new_tri(a, b, n, 0, -1)
            if self.area2(len(self.p1) - 1) == 0:
                raise ParseError(f"degenerate triangle {tri}")
        if not len(self.p1):
            raise ParseError("no triangles")
        self.roots = list(range(len(self.p1)))
        self.n_root_vertices = len(self.vx)

        self._root_adj: dict[tuple[int, int], list[int]] = {}
        for t in self.roots:
            for e in self.edges_of(t):
                self._root_adj.setdefault(e, []).append(t)
        self.boundary_segments: list[tuple[int, int]] = []
        for e, ts in sorted(self._root_adj.items()):
            if len(ts) > 2:
                raise NonConforming(e, f"edge {e} shared by {len(ts)} triangles")
            if len(ts) == 1:
                bit = 1 << len(self.boundary_segments)
                self.boundary_segments.append(e)
                self.vbnd[e[0]] |= bit
                self.vbnd[e[1]] |= bit
        self._check_root_conformity()
        self._check_root_matching()
        self.root_area2 = sum(self.area2(t) for t in self.roots)

    # ------------------------------------------------------------------ store
    def _new_vertex(self, x: int, y: int, gen: int, creator: int, bnd: int) -> int:
        vid = len(self.vx)
        self.vx.append(x)
        self.vy.append(y)
        xf, yf = x / SCALE, y / SCALE
        if self.float_exact and (int(xf * SCALE) != x or int(yf * SCALE) != y):
            self.float_exact = False
        self.vxf.append(xf)
        self.vyf.append(yf)
        self.vgen.append(gen)
        self.vcreator.append(creator)
        self.vbnd.append(bnd)
        self._vindex[(x, y)] = vid
        return vid

    def _new_tri(self, a: int, b: int, n: int, gen: int, parent: int) -> int:
        if a > b:
            a, b = b, a
        self.p1.append(a)
        self.p2.append(b)
        self.nw.append(n)
        self.tgen.append(gen)
        self.tparent.append(parent)
        self.tchild.append(-1)
        return len(self.p1) - 1

    # ------------------------------------------------------------- accessors
    @property
    def n_tris(self) -> int:
        return len(self.p1)

    @property
    def n_vertices(self) -> int:
        return len(self.vx)

    def vertices(self, t: int) -> tuple[int, int, int]:
        return self.p1[t], self.p2[t], self.nw[t]

    def newest(self, t: int) -> int:
        return self.nw[t]

    def gen(self, t: int) -> int:
        return self.tgen[t]

    def parent(self, t: int) -> int | None:
        p = self.tparent[t]
        return None if p < 0 else p

    def children(self, t: int) -> tuple[int, int] | None:
        c = self.tchild[t]
        return None if c < 0 else (c, c + 1)

    def refinement_edge(self, t: int) -> tuple[int, int]:
        return self.p1[t], self.p2[t]

    def edges_of(self, t: int) -> tuple[tuple[int, int], ...]:
        a, b, n = self.p1[t], self.p2[t], self.nw[t]
        return (a, b), edge_key(a, n), edge_key(b, n)

    def coords(self, v: int) -> tuple[Fraction, Fraction]:
        return Fraction(self.vx[v], SCALE), Fraction(self.vy[v], SCALE)

    def scaled(self, v: int) -> tuple[int, int]:
        return self.vx[v], self.vy[v]

    def vertex_id(self, x, y) -> int | None:
        """Id of the vertex at exact coordinates ``(x, y)``, if materialised."""
        return self._vindex.get((_to_scaled(Fraction(x)), _to_scaled(Fraction(y))))

    def vertex_exponent(self, v: int) -> int:
        return max(_dyadic_exponent(self.vx[v]), _dyadic_exponent(self.vy[v]))

    def on_boundary(self, v: int) -> bool:
        return self.vbnd[v] != 0

    def edge_on_boundary(self, a: int, b: int) -> bool:
        return (self.vbnd[a] & self.vbnd[b]) != 0

    def area2(self, t: int) -> int:
        """Twice the area of ``t`` at scale ``SCALE**2`` (exact)."""
        a, b, c = self.p1[t], self.p2[t], self.nw[t]
        vx, vy = self.vx, self.vy
        cr = (vx[b] - vx[a]) * (vy[c] - vy[a]) - (vy[b] - vy[a]) * (vx[c] - vx[a])
        return abs(cr)

    def area(self, t: int) -> Fraction:
        return Fraction(self.area2(t), 2 * SCALE * SCALE)

    def midpoint_id(self, t: int) -> int | None:
        """Vertex at the midpoint of the refinement edge, without creating it."""
        c = self.tchild[t]
        if c >= 0:
            return self.nw[c]
        a, b = self.p1[t], self.p2[t]
        sx, sy = self.vx[a] + self.vx[b], self.vy[a] + self.vy[b]
        if sx & 1 or sy & 1:
            return None
        return self._vindex.get((sx >> 1, sy >> 1))

    # --------------------------------------------------------------- bisect
    def bisect(self, t: int) -> tuple[int, int]:
        """Split ``t`` by newest vertex bisection and return the two children.

        Raises
        ------
        AlreadyBisected
            If ``t`` already has children.
        """
        if self.tchild[t] >= 0:
            raise AlreadyBisected(f"triangle {t} already bisected")
        a, b, n = self.p1[t], self.p2[t], self.nw[t]
        sx, sy = self.vx[a] + self.vx[b], self.vy[a] + self.vy[b]
        if sx & 1 or sy & 1:
            raise PrecisionExhausted(f"midpoint of ({a}, {b}) beyond 2^-{SCALE_BITS}")
        key = (sx >> 1, sy >> 1)
        m = self._vindex.get(key)
        g = self.tgen[t] + 1
        if m is None:
            m = self._new_vertex(key[0], key[1], g, t, self.vbnd[a] & self.vbnd[b])
        c0 = self._new_tri(a, n, m, g, t)
        self._new_tri(n, b, m, g, t)
        self.tchild[t] = c0
        return c0, c0 + 1

    def ensure_children(self, t: int) -> tuple[int, int]:
        c = self.tchild[t]
        if c >= 0:
            return c, c + 1
        return self.bisect(t)

    def child_containing(self, t: int, e: tuple[int, int]) -> int:
        """The child of ``t`` having ``e`` as a side (bisects ``t`` if needed)."""
        c0, c1 = self.ensure_children(t)
        if e in self.edges_of(c0):
            return c0
        if e in self.edges_of(c1):
            return c1
        raise ValueError(f"edge {e} is not a side of a child of {t}")

    # ------------------------------------------------------------ neighbours
    def neighbor(self, t: int, e: tuple[int, int]) -> int | None:
        """Triangle of generation ``gen(t)`` across side ``e`` of ``t``.

        Works in the uniform refinement of level ``gen(t)``, which is
        conforming and satisfies the matching condition; materialises the
        forest along the way.  Returns None for boundary sides.
        """
        key = (t, e)
        hit = self._nbr.get(key)
        if hit is not None:
            return None if hit < 0 else hit
        res = self._neighbor(t, e)
        self._nbr[key] = -1 if res is None else res
        if res is not None:
            self._nbr[(res, e)] = t
        return res

    def _neighbor(self, t: int, e: tuple[int, int]) -> int | None:
        p = self.tparent[t]
        if p < 0:
            for r in self._root_adj[e]:
                if r != t:
                    return r
            return None
        a, b, n = self.p1[p], self.p2[p], self.nw[p]
        m = self.nw[t]
        c0 = self.tchild[p]
        if e == edge_key(n, m):
            return c0 + 1 if t == c0 else c0
        if m in e:
            # half of the parent's refinement edge
            q = self.neighbor(p, (a, b))
        else:
            q = self.neighbor(p, e)
        if q is None:
            return None
        return self.child_containing(q, e)

    def twin(self, t: int) -> int | None:
        """Same-generation neighbour across the refinement edge."""
        return self.neighbor(t, self.refinement_edge(t))

    # ------------------------------------------------------------- uniform
    def uniform(self, k: int) -> list[int]:
        """Handles of all triangles of generation ``k`` (materialised)."""
        level = list(self.roots)
        for _ in range(k):
            nxt = []
            for t in level:
                nxt.extend(self.ensure_children(t))
            level = nxt
        return sorted(level)

    # -------------------------------------------------------------- checks
    def _check_root_conformity(self) -> None:
        for e in self._root_adj:
            a, b = e
            for v in range(len(self.vx)):
                if v in e:
                    continue
                if _strictly_inside(self.vx, self.vy, a, b, v):
                    raise NonConforming(e)

    def _check_root_matching(self) -> None:
        for e, ts in self._root_adj.items():
            if len(ts) != 2:
                continue
            t1, t2 = ts
            r1 = self.refinement_edge(t1) == e
            r2 = self.refinement_edge(t2) == e
            if r1 and not r2:
                raise MatchingViolation(t1, t2)
            if r2 and not r1:
                raise MatchingViolation(t2, t1)


def _strictly_inside(vx, vy, a: int, b: int, v: int) -> bool:
    ax, ay, bx, by, px, py = vx[a], vy[a], vx[b], vy[b], vx[v], vy[v]
    if (bx - ax) * (py - ay) - (by - ay) * (px - ax) != 0:
        return False
    dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay)
    return 0 < dot < (bx - ax) ** 2 + (by - ay) ** 2


# --------------------------------------------------------------------- I/O
def parse_initial(text: str) -> tuple[list[tuple[Fraction, Fraction]], list[tuple[int, int, int]]]:
    """Parse the initial mesh text format.

    Line 1 holds ``nv``, then ``nv`` lines ``x_num x_den_exp y_num y_den_exp``,
    then ``nt`` and ``nt`` lines ``v0 v1 v2`` where ``v2`` is the newest vertex.
    ``#`` starts a comment.
    """
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    try:
        pos = 0
        (nv,) = rows[pos]
        nv = int(nv)
        pos += 1
        coords = []
        for _ in range(nv):
            xn, xe, yn, ye = (int(s) for s in rows[pos])
            if xe < 0 or ye < 0:
                raise ParseError(f"negative exponent on line {pos + 1}")
            coords.append((Fraction(xn, 1 << xe), Fraction(yn, 1 << ye)))
            pos += 1
        (nt,) = rows[pos]
        nt = int(nt)
        pos += 1
        tris = []
        for _ in range(nt):
            a, b, c = (int(s) for s in rows[pos])
            tris.append((a, b, c))
            pos += 1
    except ParseError:
        raise
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed mesh file: {exc}") from exc
    if pos != len(rows):
        raise ParseError("trailing data after triangle list")
    return coords, tris


def load_initial(source: str | Path) -> Forest:
    """Build a forest from a mesh file path or from the mesh text itself."""
    if isinstance(source, Path) or ("\n" not in str(source) and Path(str(source)).is_file()):
        text = Path(source).read_text()
    else:
        text = str(source)
    coords, tris = parse_initial(text)
    return Forest(coords, tris)


def format_initial(coords: Iterable[tuple[Fraction, Fraction]], tris: Iterable[Sequence[int]]) -> str:
    coords = list(coords)
    tris = list(tris)
    out = [str(len(coords))]
    for x, y in coords:
        out.append(" ".join(str(v) for v in (*_num_exp(x), *_num_exp(y))))
    out.append(str(len(tris)))
    out.extend(" ".join(str(i) for i in t) for t in tris)
    return "\n".join(out) + "\n"


def _num_exp(v: Fraction) -> tuple[int, int]:
    v = Fraction(v)
    return v.numerator, v.denominator.bit_length() - 1


UNIT2_TEXT = """\
# unit square split along the diagonal (0,0)-(1,1)
4
0 0 0 0
1 0 0 0
1 0 1 0
0 0 1 0
2
0 2 1
0 2 3
"""

LSHAPE_TEXT = """\
# (-1,1)^2 minus [0,1]x[-1,0], six triangles around the reentrant corner
8
0 0 0 0
1 0 0 0
1 0 1 0
0 0 1 0
-1 0 1 0
-1 0 0 0
-1 0 -1 0
0 0 -1 0
6
0 2 1
0 2 3
0 4 3
0 4 5
0 6 5
0 6 7
"""


def unit_square() -> Forest:
    return load_initial(UNIT2_TEXT)


def lshape() -> Forest:
    return load_initial(LSHAPE_TEXT)


FIXTURES = {"unit2": UNIT2_TEXT, "lshape": LSHAPE_TEXT}


def shape_regularity(forest: Forest, k_max: int) -> float:
    """Max of ``diam(T) / |T|**0.5`` over all triangles of generation <= k_max."""
    best = Fraction(0)
    level = list(forest.roots)
    for k in range(k_max + 1):
        for t in level:
            a, b, c = forest.vertices(t)
            d2 = max(_dist2(forest, a, b), _dist2(forest, a, c), _dist2(forest, b, c))
            best = max(best, Fraction(2 * d2, forest.area2(t)))
        if k < k_max:
            level = [c for t in level for c in forest.ensure_children(t)]
    return math.sqrt(best)


def _dist2(forest: Forest, a: int, b: int) -> int:
    return (forest.vx[a] - forest.vx[b]) ** 2 + (forest.vy[a] - forest.vy[b]) ** 2
