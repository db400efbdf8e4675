"""Voxelized point clouds and PLY ingestion/emission."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class PlyError(ValueError):
    """Raised when a PLY file cannot be parsed or violates the voxel grid."""


def _unique_rows(pts: np.ndarray, r: int) -> np.ndarray:
    """Deduplicate and sort (x, y, z) rows lexicographically."""
    if 3 * r > 63:
        return np.unique(pts, axis=0)
    # one int64 key per point sorts far faster than row-wise unique
    key = np.unique((pts[:, 0] << (2 * r)) | (pts[:, 1] << r) | pts[:, 2])
    mask = (1 << r) - 1
    return np.stack([key >> (2 * r), (key >> r) & mask, key & mask], axis=1)


@dataclass(frozen=True, eq=False)
class VoxelPointCloud:
    """Set of occupied voxels on a ``2**resolution_bits`` grid per axis.

    Points are stored as a read-only ``(N, 3)`` int64 array, deduplicated and
    sorted lexicographically by (x, y, z), so two clouds holding the same set
    compare equal.
    """

    resolution_bits: int
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        r = int(self.resolution_bits)
        if r < 2:
            raise ValueError(f"resolution_bits must be >= 2, got {r}")
        pts = np.asarray(self.points)
        if pts.size == 0:
            pts = np.zeros((0, 3), dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.issubdtype(pts.dtype, np.integer):
            raise ValueError("points must be integer coordinates")
        pts = pts.astype(np.int64, copy=False)
        if pts.size:
            bad = np.flatnonzero(((pts < 0) | (pts >= (1 << r))).any(axis=1))
            if bad.size:
                raise ValueError(
                    f"point {tuple(int(v) for v in pts[bad[0]])} outside [0, 2**{r})"
                )
            pts = _unique_rows(pts, r)
        pts.setflags(write=False)
        object.__setattr__(self, "resolution_bits", r)
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls, resolution_bits: int) -> VoxelPointCloud:
        return cls(resolution_bits, np.zeros((0, 3), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelPointCloud):
            return NotImplemented
        return (
            self.resolution_bits == other.resolution_bits
            and np.array_equal(self.points, other.points)
        )

    def __hash__(self):
        return hash((self.resolution_bits, self.points.tobytes()))

    @property
    def size(self) -> int:
        return 1 << self.resolution_bits

    def to_set(self) -> set[tuple[int, int, int]]:
        return {tuple(p) for p in self.points.tolist()}

    def permute_axes(self, order) -> VoxelPointCloud:
        return VoxelPointCloud(self.resolution_bits, self.points[:, list(order)])


# ---------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    # (name, dtype) for scalars, (name, count_dtype, item_dtype) for lists
    props: list = field(default_factory=list)

    @property
    def has_list(self) -> bool:
        return any(len(p) == 3 for p in self.props)


def _parse_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyError("missing 'ply' magic")
    fmt = None
    elements: list[_Element] = []
    comments: list[str] = []
    n_lines = 1
    while True:
        raw = fh.readline()
        n_lines += 1
        if not raw:
            raise PlyError("unexpected end of file inside header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith(("comment", "obj_info")):
            comments.append(line)
            continue
        tok = line.split()
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise PlyError(f"unsupported format line: {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise PlyError(f"bad element line: {line!r}")
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"bad element line: {line!r}")
            elements.append(_Element(tok[1], int(tok[2])))
        elif tok[0] == "property":
            if not elements:
                raise PlyError("property before any element")
            try:
                if tok[1] == "list":
                    elements[-1].props.append((tok[4], _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
                else:
                    elements[-1].props.append((tok[2], _PLY_TYPES[tok[1]]))
            except (KeyError, IndexError):
                raise PlyError(f"bad property line: {line!r}") from None
        elif tok[0] == "end_header":
            break
        else:
            raise PlyError(f"unexpected header line: {line!r}")
    if fmt is None:
        raise PlyError("missing format line")
    return fmt, elements, n_lines, comments


def _resolution_hint(comments) -> int | None:
    for c in comments:
        tok = c.split()
        if len(tok) == 3 and tok[1] == "resolution_bits" and tok[2].isdigit():
            return int(tok[2])
    return None


def _read_ascii_vertices(fh, elements, header_lines):
    line_no = header_lines
    for el in elements:
        if el.name != "vertex":
            for _ in range(el.count):
                fh.readline()
            line_no += el.count
            continue
        names = [p[0] for p in el.props]
        if el.has_list:
            raise PlyError("list properties on vertex element are not supported")
        try:
            cols = [names.index(c) for c in "xyz"]
        except ValueError:
            raise PlyError("vertex element lacks x/y/z properties") from None
        rows = []
        for k in range(el.count):
            raw = fh.readline()
            if not raw:
                raise PlyError(f"line {line_no + k + 1}: file ends after {k} of {el.count} vertices")
            tok = raw.split()
            try:
                rows.append([float(tok[c]) for c in cols])
            except (IndexError, ValueError):
                raise PlyError(f"line {line_no + k + 1}: cannot parse vertex {raw!r}") from None
        coords = np.array(rows, dtype=np.float64).reshape(-1, 3)
        return coords, line_no + 1
    raise PlyError("no vertex element")


def _read_binary_vertices(fh, elements, fmt):
    endian = "<" if fmt == "binary_little_endian" else ">"
    for el in elements:
        if el.has_list:
            if el.name == "vertex":
                raise PlyError("list properties on vertex element are not supported")
            _skip_list_element(fh, el, endian)
            continue
        dt = np.dtype([(p[0], endian + p[1]) for p in el.props])
        if el.name != "vertex":
            fh.seek(dt.itemsize * el.count, os.SEEK_CUR)
            continue
        buf = fh.read(dt.itemsize * el.count)
        if len(buf) != dt.itemsize * el.count:
            raise PlyError(f"truncated vertex data: need {el.count} vertices")
        arr = np.frombuffer(buf, dtype=dt)
        try:
            coords = np.stack([arr[c].astype(np.float64) for c in "xyz"], axis=1)
        except ValueError:
            raise PlyError("vertex element lacks x/y/z properties") from None
        return coords
    raise PlyError("no vertex element")


def _skip_list_element(fh, el, endian):
    for _ in range(el.count):
        for p in el.props:
            if len(p) == 2:
                fh.seek(np.dtype(p[1]).itemsize, os.SEEK_CUR)
            else:
                cdt = np.dtype(endian + p[1])
                n = int(np.frombuffer(fh.read(cdt.itemsize), dtype=cdt)[0])
                fh.seek(n * np.dtype(p[2]).itemsize, os.SEEK_CUR)


def load_voxelized_cloud(path, r: int | None = None) -> VoxelPointCloud:
    """Read integer vertex coordinates from a PLY file at resolution ``r``.

    With ``r`` omitted, a ``comment resolution_bits N`` header line is used if
    present, else the smallest depth (at least 2) that holds every coordinate.

    Non-vertex elements and extra vertex properties (colors, normals) are
    ignored. Non-integral or out-of-grid coordinates raise :class:`PlyError`
    naming the offending vertex and, for ASCII files, its line number.
    """
    with open(path, "rb") as fh:
        fmt, elements, header_lines, comments = _parse_header(fh)
        if fmt == "ascii":
            coords, first_line = _read_ascii_vertices(fh, elements, header_lines)
            where = lambda k: f"line {first_line + k}"  # noqa: E731
        else:
            coords = _read_binary_vertices(fh, elements, fmt)
            where = lambda k: f"vertex {k}"  # noqa: E731

    if coords.size:
        frac = np.flatnonzero((coords != np.round(coords)).any(axis=1))
        if frac.size:
            k = int(frac[0])
            raise PlyError(f"{where(k)}: non-integer coordinate {tuple(coords[k])}")
    if r is None:
        r = _resolution_hint(comments)
    if r is None:
        top = int(coords.max()) if coords.size else 0
        r = max(2, top.bit_length())
    if coords.size:
        bad = np.flatnonzero(((coords < 0) | (coords >= (1 << r))).any(axis=1))
        if bad.size:
            k = int(bad[0])
            c = tuple(int(v) for v in coords[k])
            raise PlyError(f"{where(k)}: coordinate {c} outside [0, 2**{r})")
    return VoxelPointCloud(r, coords.astype(np.int64).reshape(-1, 3))


def save_voxelized_cloud(cloud: VoxelPointCloud, path, binary: bool = True) -> None:
    """Write ``cloud`` as a PLY file with int32 x/y/z vertex properties."""
    pts = cloud.points.astype(np.int32)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"comment resolution_bits {cloud.resolution_bits}\n"
        f"element vertex {len(pts)}\n"
        "property int x\nproperty int y\nproperty int z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(pts.astype("<i4").tobytes())
        elif len(pts):
            np.savetxt(fh, pts, fmt="%d")
