"""Sensor graph construction and spectral transforms.

A :class:`SensorGraph` holds a weighted adjacency matrix, its symmetric
normalized Laplacian, and the Laplacian's eigendecomposition (the orthonormal
basis of the graph Fourier transform). Graphs are built either from an
explicit adjacency matrix or from node coordinates through a Gaussian
distance kernel with thresholded sparsification.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DegenerateInputError
from .numerics import DTYPE, as_array, eigh_symmetric

EARTH_RADIUS_KM = 6371.0


def euclidean_distances(coords) -> np.ndarray:
    """Pairwise Euclidean distances for an (N, dims) coordinate array."""
    coords = as_array(coords, "coords")
    if coords.ndim != 2:
        raise ContractViolation(f"coords must be 2-D (nodes x dims), got shape {coords.shape}")
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def great_circle_distances(latlon_degrees, radius_km: float = EARTH_RADIUS_KM) -> np.ndarray:
    """Pairwise great-circle (haversine) distances in km for (N, 2) arrays of
    latitude/longitude in degrees."""
    ll = as_array(latlon_degrees, "latlon")
    if ll.ndim != 2 or ll.shape[1] != 2:
        raise ContractViolation(f"latlon must have shape (N, 2), got {ll.shape}")
    lat = np.radians(ll[:, 0])
    lon = np.radians(ll[:, 1])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * radius_km * np.arcsin(np.sqrt(h))


def adjacency_from_distances(
    distances, kernel_width: float | None = None, threshold: float = 0.1
) -> np.ndarray:
    """Gaussian kernel weights ``w_ij = exp(-d_ij^2 / width^2)`` with
    sparsification.

    When ``kernel_width`` is not given it defaults to the population standard
    deviation of the off-diagonal distances. Weights below ``threshold`` are
    zeroed, the diagonal is forced to zero, and the result is symmetric.
    """
    d = as_array(distances, "distances")
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise ContractViolation(f"distance matrix must be square, got shape {d.shape}")
    if np.abs(d - d.T).max(initial=0.0) > 1e-10:
        raise ContractViolation("distance matrix must be symmetric")
    if np.any(d < 0):
        raise ContractViolation("distances must be non-negative")
    if n < 2:
        raise ContractViolation("need at least two nodes to build a graph")
    off = d[~np.eye(n, dtype=bool)]
    if kernel_width is None:
        kernel_width = float(off.std())
        if kernel_width <= 0.0:
            raise DegenerateInputError(
                "off-diagonal distances have zero spread; the default kernel width "
                "collapses (pass kernel_width explicitly)"
            )
    if kernel_width <= 0.0:
        raise ContractViolation("kernel_width must be positive")
    w = np.exp(-(d**2) / (kernel_width**2))
    w[w < threshold] = 0.0
    np.fill_diagonal(w, 0.0)
    return (w + w.T) / 2.0


def normalized_laplacian(adjacency) -> np.ndarray:
    """Symmetric normalized Laplacian ``I - D^{-1/2} A D^{-1/2}``.

    Isolated nodes (zero degree) produce an all-zero row and column. The
    eigenvalues of the result lie in [0, 2].
    """
    a = as_array(adjacency, "adjacency")
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ContractViolation(f"adjacency must be square, got shape {a.shape}")
    if np.abs(a - a.T).max(initial=0.0) > 1e-10:
        raise ContractViolation("adjacency must be symmetric")
    if np.any(a < 0):
        raise ContractViolation("adjacency weights must be non-negative")
    degrees = a.sum(axis=1)
    connected = degrees > 0
    dinv_sqrt = np.zeros(n, dtype=DTYPE)
    dinv_sqrt[connected] = 1.0 / np.sqrt(degrees[connected])
    lap = -dinv_sqrt[:, None] * a * dinv_sqrt[None, :]
    lap[connected, connected] += 1.0
    # Symmetrize away round-off so the eigensolver sees an exactly symmetric
    # operator.
    return (lap + lap.T) / 2.0


@dataclass(frozen=True)
class SensorGraph:
    """A sensor network with its spectral decomposition precomputed."""

    adjacency: np.ndarray = field(repr=False)
    laplacian: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    node_ids: tuple[str, ...] = ()

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_adjacency(cls, adjacency, node_ids=None) -> "SensorGraph":
        a = as_array(adjacency, "adjacency")
        lap = normalized_laplacian(a)
        w, v = eigh_symmetric(lap)
        ids = tuple(node_ids) if node_ids is not None else tuple(str(i) for i in range(a.shape[0]))
        if len(ids) != a.shape[0]:
            raise ContractViolation("node_ids length does not match adjacency size")
        return cls(adjacency=a, laplacian=lap, eigenvalues=w, eigenvectors=v, node_ids=ids)

    @classmethod
    def from_distances(
        cls, distances, kernel_width=None, threshold=0.1, node_ids=None
    ) -> "SensorGraph":
        return cls.from_adjacency(
            adjacency_from_distances(distances, kernel_width, threshold), node_ids
        )

    @classmethod
    def from_coordinates(
        cls,
        coords,
        metric: str = "euclidean",
        kernel_width=None,
        threshold=0.1,
        node_ids=None,
    ) -> "SensorGraph":
        if metric == "euclidean":
            d = euclidean_distances(coords)
        elif metric in ("greatcircle", "great-circle", "haversine"):
            d = great_circle_distances(coords)
        else:
            raise ContractViolation(f"unknown distance metric {metric!r}")
        return cls.from_distances(d, kernel_width, threshold, node_ids)

    def hash(self) -> str:
        """Stable content hash of the adjacency matrix."""
        h = hashlib.sha256()
        h.update(str(self.adjacency.shape).encode())
        h.update(np.ascontiguousarray(self.adjacency).tobytes())
        return h.hexdigest()


def gft(graph: SensorGraph, signal, axis: int = 0) -> np.ndarray:
    """Graph Fourier transform: project ``signal`` onto the Laplacian
    eigenbasis along ``axis`` (the node axis)."""
    x = np.asarray(signal, dtype=DTYPE)
    if x.shape[axis] != graph.n_nodes:
        raise ContractViolation(
            f"signal axis {axis} has size {x.shape[axis]}, expected {graph.n_nodes} nodes"
        )
    moved = np.moveaxis(x, axis, 0)
    out = np.tensordot(graph.eigenvectors.T, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def igft(graph: SensorGraph, coeffs, axis: int = 0) -> np.ndarray:
    """Inverse graph Fourier transform along ``axis``."""
    c = np.asarray(coeffs, dtype=DTYPE)
    if c.shape[axis] != graph.n_nodes:
        raise ContractViolation(
            f"coefficient axis {axis} has size {c.shape[axis]}, expected {graph.n_nodes}"
        )
    moved = np.moveaxis(c, axis, 0)
    out = np.tensordot(graph.eigenvectors, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


# ---------------------------------------------------------------------------
# CSV interfaces


def load_coordinates_csv(path) -> tuple[list[str], np.ndarray, str]:
    """Read a node coordinate table.

    Expects a header of ``node_id,x,y`` (planar) or ``node_id,lat,lon``
    (geographic). Returns node ids, an (N, 2) array, and which convention the
    file used (``"xy"`` or ``"latlon"``).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ContractViolation(f"{path}: empty coordinate file") from None
        if header == ["node_id", "x", "y"]:
            kind = "xy"
        elif header == ["node_id", "lat", "lon"]:
            kind = "latlon"
        else:
            raise ContractViolation(
                f"{path}: expected header node_id,x,y or node_id,lat,lon, got {','.join(header)}"
            )
        ids: list[str] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ContractViolation(f"{path}:{line_no}: expected 3 columns, got {len(row)}")
            ids.append(row[0].strip())
            try:
                rows.append([float(row[1]), float(row[2])])
            except ValueError as exc:
                raise ContractViolation(f"{path}:{line_no}: non-numeric coordinate") from exc
    if len(ids) != len(set(ids)):
        raise ContractViolation(f"{path}: duplicate node ids")
    return ids, np.asarray(rows, dtype=DTYPE), kind


def save_coordinates_csv(path, node_ids, coords, kind: str = "xy") -> None:
    header = {"xy": "node_id,x,y", "latlon": "node_id,lat,lon"}[kind]
    coords = as_array(coords, "coords")
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for nid, (a, b) in zip(node_ids, coords):
            fh.write(f"{nid},{a:.17g},{b:.17g}\n")


def load_matrix_csv(path) -> np.ndarray:
    """Read a plain numeric CSV matrix (no header)."""
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2, dtype=DTYPE)
    except ValueError as exc:
        raise ContractViolation(f"{path}: could not parse numeric matrix: {exc}") from exc
    return m


def save_matrix_csv(path, matrix) -> None:
    np.savetxt(path, np.asarray(matrix, dtype=DTYPE), delimiter=",", fmt="%.17g")


def geometric_coordinates(n_nodes: int, stream) -> np.ndarray:
    """Uniform random planar coordinates in the unit square, for synthetic
    networks."""
    if n_nodes < 2:
        raise ContractViolation("need at least two nodes")
    return stream.uniform(0.0, 1.0, (n_nodes, 2))


def synthetic_graph(n_nodes: int, stream, threshold: float = 0.1) -> tuple[SensorGraph, np.ndarray]:
    """A random geometric sensor graph on the unit square. Returns the graph
    and the coordinates it was built from.

    Uses the mean pairwise distance as the kernel width (the
    spread-of-distances default degenerates for small point clouds) and
    retries the draw until no node is isolated, so synthetic runs always
    exercise a connected spatial operator."""
    for _ in range(64):
        coords = geometric_coordinates(n_nodes, stream)
        dist = euclidean_distances(coords)
        width = float(dist[~np.eye(n_nodes, dtype=bool)].mean())
        adj = adjacency_from_distances(dist, kernel_width=width, threshold=threshold)
        if (adj.sum(axis=1) > 0).all():
            return SensorGraph.from_adjacency(adj), coords
    raise DegenerateInputError(
        f"could not draw a geometric graph without isolated nodes for n={n_nodes}"
    )
