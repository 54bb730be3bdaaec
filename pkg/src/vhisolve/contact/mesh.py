"""Structured crossed-triangle meshes of a rectangle with tagged boundary edges."""

from dataclasses import dataclass

import numpy as np

from vhisolve.exceptions import ConfigurationError

GAMMA1, GAMMA2, GAMMA3 = "gamma1", "gamma2", "gamma3"
SIDES = ("left", "right", "bottom", "top")
DEFAULT_TAGS = {"left": GAMMA1, "top": GAMMA2, "right": GAMMA2, "bottom": GAMMA3}
_NORMALS = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "bottom": (0.0, -1.0),
            "top": (0.0, 1.0)}


@dataclass(frozen=True)
class Mesh:
    """P1 triangulation; ``edges`` are boundary edges with tag, side and outward normal."""

    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: tuple
    edge_sides: tuple
    edge_normals: np.ndarray
    width: float
    height: float

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.triangles.shape[0]

    @property
    def areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self):
        p = self.nodes[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def tagged_edges(self, tag):
        return np.array([i for i, t in enumerate(self.edge_tags) if t == tag], dtype=int)

    def tagged_nodes(self, tag):
        idx = self.tagged_edges(tag)
        if idx.size == 0:
            return np.zeros(0, dtype=int)
        return np.unique(self.edges[idx].ravel())

    def measure(self, tag):
        idx = self.tagged_edges(tag)
        return float(self.edge_lengths()[idx].sum()) if idx.size else 0.0


def build_mesh(width, height, nx, ny, tags=None):
    """Rectangle ``[0, width] x [0, height]`` split into ``nx x ny`` cells.

    Each cell gets a center node and four triangles.  ``tags`` maps the
    sides ``left/right/bottom/top`` to ``gamma1/gamma2/gamma3``; missing
    sides default to the clamp on the left, contact at the bottom and free
    traction elsewhere.
    """
    if not (width > 0 and height > 0):
        raise ConfigurationError("rectangle dimensions must be positive", field="width")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ConfigurationError("nx and ny must be positive integers", field="nx")
    nx, ny = int(nx), int(ny)
    rule = dict(DEFAULT_TAGS)
    if tags:
        for side, tag in tags.items():
            if side not in SIDES or tag not in (GAMMA1, GAMMA2, GAMMA3):
                raise ConfigurationError(f"bad boundary tag {side}={tag}", field="tags")
            rule[side] = tag

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    corners = np.column_stack([X.ravel(), Y.ravel()])
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy, indexing="xy")
    centers = np.column_stack([CX.ravel(), CY.ravel()])
    nodes = np.vstack([corners, centers])

    def corner(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            c = (nx + 1) * (ny + 1) + j * nx + i
            a, b = corner(i, j), corner(i + 1, j)
            d, e = corner(i + 1, j + 1), corner(i, j + 1)
            tris.extend([(a, b, c), (b, d, c), (d, e, c), (e, a, c)])
    tris = np.array(tris, dtype=int)

    edges, sides = [], []
    for i in range(nx):
        edges.append((corner(i, 0), corner(i + 1, 0)))
        sides.append("bottom")
    for j in range(ny):
        edges.append((corner(nx, j), corner(nx, j + 1)))
        sides.append("right")
    for i in range(nx, 0, -1):
        edges.append((corner(i, ny), corner(i - 1, ny)))
        sides.append("top")
    for j in range(ny, 0, -1):
        edges.append((corner(0, j), corner(0, j - 1)))
        sides.append("left")
    edges = np.array(edges, dtype=int)
    normals = np.array([_NORMALS[s] for s in sides])
    mesh = Mesh(nodes=nodes, triangles=tris, edges=edges,
                edge_tags=tuple(rule[s] for s in sides), edge_sides=tuple(sides),
                edge_normals=normals, width=float(width), height=float(height))
    if mesh.measure(GAMMA1) <= 0:
        raise ConfigurationError("the clamped boundary must have positive length",
                                 field="tags")
    return mesh
