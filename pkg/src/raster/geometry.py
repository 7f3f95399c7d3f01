import numpy as np

from scipy.spatial import ConvexHull

from utility.errors import DegenerateInputError


def _canonical_start(vertices: np.ndarray) -> np.ndarray:
    """Rotates a vertex cycle so that it starts at the lexicographically smallest (row, col)."""
    start = np.lexsort((vertices[:, 1], vertices[:, 0]))[0]
    return np.roll(vertices, -start, axis=0)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull of pixel coordinates.
    :param points: (n, 2) integer (row, col) coordinates, n >= 1
    :return
        (k, 2) hull vertices as (row, col), counter-clockwise in the x = col, y = row frame, starting at the
        smallest (row, col); 1 vertex for a single point, 2 for collinear input
    """
    points = np.unique(np.asarray(points, dtype=np.int64).reshape(-1, 2), axis=0)
    if len(points) == 0:
        raise DegenerateInputError("convex hull of an empty point set")
    if len(points) == 1:
        return points
    if np.linalg.matrix_rank(points - points[0]) < 2:
        return points[[0, -1]]
    hull = ConvexHull(points[:, ::-1].astype(np.float64))
    return _canonical_start(points[hull.vertices])


def hull_area(vertices: np.ndarray) -> float:
    """Shoelace area of a hull polygon, 0 for points and segments."""
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 1].astype(np.float64), vertices[:, 0].astype(np.float64)
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _edge_cross(vertices: np.ndarray,
                rows: np.ndarray,
                cols: np.ndarray) -> np.ndarray:
    """Cross products of every edge with every query point, shape (edges, points)."""
    start = vertices
    end = np.roll(vertices, -1, axis=0)
    ex = (end[:, 1] - start[:, 1])[:, None]
    ey = (end[:, 0] - start[:, 0])[:, None]
    px = cols[None, :] - start[:, 1][:, None]
    py = rows[None, :] - start[:, 0][:, None]
    return ex * py - ey * px


def points_in_hull(vertices: np.ndarray,
                   points: np.ndarray) -> np.ndarray:
    """True for points inside or on the hull.
    :param vertices: hull vertices from convex_hull
    :param points: (n, 2) integer (row, col) coordinates
    :return
        (n,) boolean array
    """
    vertices = np.asarray(vertices, dtype=np.int64)
    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    rows, cols = points[:, 0], points[:, 1]
    if len(vertices) == 1:
        return (rows == vertices[0, 0]) & (cols == vertices[0, 1])
    if len(vertices) == 2:
        cross = _edge_cross(vertices[:1], rows, cols)[0]
        (r0, c0), (r1, c1) = vertices
        within = (rows >= min(r0, r1)) & (rows <= max(r0, r1)) & (cols >= min(c0, c1)) & (cols <= max(c0, c1))
        return (cross == 0) & within
    return np.all(_edge_cross(vertices, rows, cols) >= 0, axis=0)


def rasterize_hull(vertices: np.ndarray,
                   extent: tuple) -> np.ndarray:
    """Mask of all pixels whose centres lie inside or on the hull, clipped to the extent.
    :param vertices: hull vertices from convex_hull
    :param extent: (height, width)
    :return
        boolean mask
    """
    mask = np.zeros(extent, dtype=bool)
    vertices = np.asarray(vertices, dtype=np.int64)
    r0, c0 = np.maximum(vertices.min(axis=0), 0)
    r1, c1 = np.minimum(vertices.max(axis=0), np.array(extent) - 1)
    if r0 > r1 or c0 > c1:
        return mask
    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    inside = points_in_hull(vertices, np.stack([rr.ravel(), cc.ravel()], axis=1))
    mask[r0:r1 + 1, c0:c1 + 1] = inside.reshape(rr.shape)
    return mask
