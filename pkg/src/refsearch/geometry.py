"""Triangle meshes: loading from OBJ/STL files and procedural primitives.

Meshes are plain vertex/triangle arrays. Face normals are recomputed from
winding order whenever they are not supplied; zero-area triangles are kept
but flagged so the rasterizer can skip them (CAD exports routinely contain
them).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Double the triangle area below this is treated as degenerate (model units^2).
DEGENERATE_AREA_EPS = 1e-12


class MeshError(ValueError):
    """Unreadable file, unsupported format, bad indices, or empty geometry."""


@dataclass
class Mesh:
    """Indexed triangle mesh in model units.

    vertices:     (n, 3) float64
    triangles:    (m, 3) int64 indices into vertices
    face_normals: (m, 3) float64 unit vectors; recomputed from winding if None
    degenerate:   (m,) bool, True for zero-area faces (normal left as zeros)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    face_normals: np.ndarray | None = None
    degenerate: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.isfinite(self.vertices).all():
            raise MeshError("mesh has non-finite vertex coordinates")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise MeshError(
                f"triangle index out of range (vertex count {len(self.vertices)})"
            )
        normals, degenerate = _face_normals(self.vertices, self.triangles)
        self.degenerate = degenerate
        if self.face_normals is None:
            self.face_normals = normals
        else:
            self.face_normals = np.asarray(self.face_normals, dtype=np.float64).reshape(-1, 3)
            if len(self.face_normals) != len(self.triangles):
                raise MeshError("face normal count does not match triangle count")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)


def _face_normals(vertices: np.ndarray, triangles: np.ndarray):
    if len(triangles) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    norms = np.linalg.norm(cross, axis=1)
    degenerate = norms <= DEGENERATE_AREA_EPS
    normals = np.zeros_like(cross)
    ok = ~degenerate
    normals[ok] = cross[ok] / norms[ok, None]
    return normals, degenerate


def load_mesh(path: str | Path) -> Mesh:
    """Load a mesh from an ASCII OBJ (v/f records) or binary STL file."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".stl":
        return _load_stl(path)
    raise MeshError(f"unsupported mesh format {suffix!r} (expected .obj or .stl)")


def _load_obj(path: Path) -> Mesh:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise MeshError(f"cannot read {path}: {exc}") from exc

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshError(f"{path}:{lineno}: malformed vertex record")
            try:
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: bad vertex coordinate") from exc
        elif parts[0] == "f":
            if len(parts) < 4:
                raise MeshError(f"{path}:{lineno}: face with fewer than 3 vertices")
            idx = [_obj_index(tok, len(vertices), path, lineno) for tok in parts[1:]]
            # Fan-triangulate polygons; triangulated input passes through as-is.
            for i in range(1, len(idx) - 1):
                faces.append((idx[0], idx[i], idx[i + 1]))
        # vn/vt/usemtl/o/g/s/mtllib records carry no geometry we use.

    if not faces:
        raise MeshError(f"{path}: no triangles")
    return Mesh(np.array(vertices), np.array(faces))


def _obj_index(token: str, vertex_count: int, path: Path, lineno: int) -> int:
    # Face tokens look like "3", "3/1", "3/1/2" or "3//2"; negative indices
    # count back from the most recent vertex.
    head = token.split("/", 1)[0]
    try:
        raw = int(head)
    except ValueError as exc:
        raise MeshError(f"{path}:{lineno}: bad face index {token!r}") from exc
    if raw == 0:
        raise MeshError(f"{path}:{lineno}: OBJ indices are 1-based, got 0")
    idx = raw - 1 if raw > 0 else vertex_count + raw
    if idx < 0 or idx >= vertex_count:
        raise MeshError(f"{path}:{lineno}: face index {raw} out of range")
    return idx


def _load_stl(path: Path) -> Mesh:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise MeshError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 84:
        if blob[:5] == b"solid":
            raise MeshError(f"{path}: ASCII STL is not supported (binary only)")
        raise MeshError(f"{path}: truncated STL (no header)")
    (count,) = struct.unpack_from("<I", blob, 80)
    expected = 84 + 50 * count
    if len(blob) != expected:
        if blob[:5] == b"solid":
            raise MeshError(f"{path}: ASCII STL is not supported (binary only)")
        raise MeshError(
            f"{path}: STL size mismatch (expected {expected} bytes, got {len(blob)})"
        )
    if count == 0:
        raise MeshError(f"{path}: no triangles")

    records = np.frombuffer(blob, dtype=np.uint8, offset=84).reshape(count, 50)
    floats = (
        records[:, :48]
        .reshape(-1)
        .view(np.dtype("<f4"))
        .reshape(count, 12)
        .astype(np.float64)
    )
    corners = floats[:, 3:12].reshape(count, 3, 3)

    # Weld exactly-equal corners so shared edges index shared vertices.
    seen: dict[bytes, int] = {}
    vertices: list[np.ndarray] = []
    faces = np.empty((count, 3), dtype=np.int64)
    for f in range(count):
        for c in range(3):
            key = corners[f, c].tobytes()
            slot = seen.get(key)
            if slot is None:
                slot = len(vertices)
                seen[key] = slot
                vertices.append(corners[f, c])
            faces[f, c] = slot
    return Mesh(np.array(vertices), faces)


def save_obj(mesh: Mesh, path: str | Path) -> None:
    """Write the mesh as a minimal ASCII OBJ file."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def generate_primitive(kind: str, detail: int = 0) -> Mesh:
    """Procedural watertight test meshes, centered at origin, max extent 1.

    kind: "cube" (grid-subdivided faces), "icosphere" (subdivided icosahedron)
    or "cone" (radial segments double per detail level).
    """
    if detail < 0:
        raise ValueError("detail must be >= 0")
    if kind == "cube":
        mesh = _cube(detail)
    elif kind == "icosphere":
        mesh = _icosphere(detail)
    elif kind == "cone":
        mesh = _cone(detail)
    else:
        raise ValueError(f"unknown primitive kind {kind!r}")
    extent = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    mesh.vertices *= 1.0 / extent.max()
    return mesh


def _cube(detail: int) -> Mesh:
    segments = detail + 1
    vert_ids: dict[tuple[float, float, float], int] = {}
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []

    def vid(p: np.ndarray) -> int:
        key = (round(float(p[0]), 12), round(float(p[1]), 12), round(float(p[2]), 12))
        if key not in vert_ids:
            vert_ids[key] = len(vertices)
            vertices.append(key)
        return vert_ids[key]

    # Six faces, each a grid of quads split into two triangles with outward winding.
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_axis, v_axis = [a for a in range(3) if a != axis]
            for i in range(segments):
                for j in range(segments):
                    corners = []
                    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = 0.5 * sign
                        p[u_axis] = -0.5 + (i + du) / segments
                        p[v_axis] = -0.5 + (j + dv) / segments
                        corners.append(vid(p))
                    a, b, c, d = corners
                    if sign > 0:
                        faces += [(a, b, c), (a, c, d)]
                    else:
                        faces += [(a, c, b), (a, d, c)]
    return Mesh(np.array(vertices), np.array(faces))


def _icosphere(detail: int) -> Mesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    raw = np.array(
        [
            (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
            (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
            (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
        ],
        dtype=np.float64,
    )
    vertices = [v / np.linalg.norm(v) for v in raw]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    for _ in range(detail):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = vertices[a] + vertices[b]
                vertices.append(m / np.linalg.norm(m))
                midpoint[key] = len(vertices) - 1
            return midpoint[key]

        split = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            split += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = split

    return Mesh(np.array(vertices) * 0.5, np.array(faces))


def _cone(detail: int) -> Mesh:
    segments = 8 * (2**detail)
    angles = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack(
        [0.5 * np.cos(angles), 0.5 * np.sin(angles), np.full(segments, -0.5)], axis=1
    )
    apex = np.array([[0.0, 0.0, 0.5]])
    base_center = np.array([[0.0, 0.0, -0.5]])
    vertices = np.vstack([ring, apex, base_center])
    apex_id, center_id = segments, segments + 1

    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append((i, j, apex_id))       # side, outward
        faces.append((j, i, center_id))     # base cap, facing -z
    return Mesh(vertices, np.array(faces))
