import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snoc.core import PlyError, VoxelPointCloud, load_voxelized_cloud, save_voxelized_cloud


def write_ascii(path, rows, extra_header=""):
    lines = ["ply", "format ascii 1.0", f"element vertex {len(rows)}",
             "property int x", "property int y", "property int z"]
    if extra_header:
        lines.append(extra_header)
    lines.append("end_header")
    lines += [" ".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def test_two_vertices_read(tmp_path):
    p = tmp_path / "a.ply"
    write_ascii(p, [(0, 0, 0), (1, 2, 3)])
    cloud = load_voxelized_cloud(p, 2)
    assert len(cloud) == 2
    assert cloud.to_set() == {(0, 0, 0), (1, 2, 3)}


def test_duplicate_vertex_collapses(tmp_path):
    p = tmp_path / "a.ply"
    write_ascii(p, [(1, 1, 1), (1, 1, 1)])
    assert len(load_voxelized_cloud(p, 2)) == 1


def test_out_of_grid_vertex_reports_line_and_coordinate(tmp_path):
    p = tmp_path / "a.ply"
    write_ascii(p, [(0, 0, 0), (4, 0, 0)])
    with pytest.raises(PlyError, match=r"line 9: coordinate \(4, 0, 0\)"):
        load_voxelized_cloud(p, 2)


def test_negative_and_fractional_coordinates_rejected(tmp_path):
    p = tmp_path / "a.ply"
    write_ascii(p, [(0, -1, 0)])
    with pytest.raises(PlyError):
        load_voxelized_cloud(p, 3)
    lines = p.read_text().replace("property int", "property float").replace("0 -1 0", "0.5 1 0")
    p.write_text(lines)
    with pytest.raises(PlyError, match="non-integer"):
        load_voxelized_cloud(p, 3)


def test_binary_big_endian_with_extra_properties_and_faces(tmp_path):
    pts = np.array([[3, 1, 2], [7, 0, 5]])
    header = (
        "ply\nformat binary_big_endian 1.0\ncomment made by hand\n"
        "element vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
    )
    vdt = np.dtype([("x", ">f4"), ("y", ">f4"), ("z", ">f4"), ("red", "u1")])
    v = np.zeros(2, dtype=vdt)
    v["x"], v["y"], v["z"], v["red"] = pts[:, 0], pts[:, 1], pts[:, 2], 200
    face = bytes([3]) + np.array([0, 1, 0], dtype=">i4").tobytes()
    p = tmp_path / "b.ply"
    p.write_bytes(header.encode() + v.tobytes() + face)
    assert load_voxelized_cloud(p, 3).to_set() == {(3, 1, 2), (7, 0, 5)}


@pytest.mark.parametrize(
    "text",
    ["plx\n", "ply\nformat ascii 1.0\nelement vertex 1\n", "ply\nformat weird 1.0\nend_header\n",
     "ply\nformat ascii 1.0\nelement vertex two\nend_header\n"],
)
def test_malformed_headers(tmp_path, text):
    p = tmp_path / "bad.ply"
    p.write_text(text)
    with pytest.raises(PlyError):
        load_voxelized_cloud(p, 4)


def test_truncated_ascii_body(tmp_path):
    p = tmp_path / "a.ply"
    write_ascii(p, [(0, 0, 0), (1, 1, 1)])
    p.write_text(p.read_text().rsplit("\n", 2)[0] + "\n")
    with pytest.raises(PlyError):
        load_voxelized_cloud(p, 2)


def test_empty_cloud_round_trip(tmp_path):
    p = tmp_path / "e.ply"
    save_voxelized_cloud(VoxelPointCloud.empty(5), p)
    assert "element vertex 0" in p.read_bytes().decode("ascii", "replace")
    back = load_voxelized_cloud(p)
    assert len(back) == 0 and back.resolution_bits == 5


def test_large_cloud_round_trip_r9(tmp_path):
    rng = np.random.default_rng(9)
    cloud = VoxelPointCloud(9, rng.integers(0, 512, size=(100_000, 3)))
    p = tmp_path / "big.ply"
    save_voxelized_cloud(cloud, p)
    assert load_voxelized_cloud(p, 9) == cloud


def test_resolution_inferred_without_comment(tmp_path):
    p = tmp_path / "a.ply"
    write_ascii(p, [(0, 0, 0), (9, 2, 3)])
    assert load_voxelized_cloud(p).resolution_bits == 4


@settings(max_examples=40, deadline=None)
@given(
    r=st.integers(2, 7),
    data=st.data(),
    binary=st.booleans(),
)
def test_save_load_identity(tmp_path_factory, r, data, binary):
    n = data.draw(st.integers(0, 60))
    pts = data.draw(st.lists(st.tuples(*[st.integers(0, (1 << r) - 1)] * 3), min_size=n, max_size=n))
    cloud = VoxelPointCloud(r, np.array(pts, dtype=np.int64).reshape(-1, 3))
    p = tmp_path_factory.mktemp("rt") / "c.ply"
    save_voxelized_cloud(cloud, p, binary=binary)
    assert load_voxelized_cloud(p, r) == cloud


def test_cloud_validation():
    with pytest.raises(ValueError):
        VoxelPointCloud(1, np.zeros((0, 3), dtype=int))
    with pytest.raises(ValueError):
        VoxelPointCloud(3, np.array([[8, 0, 0]]))
    with pytest.raises(ValueError):
        VoxelPointCloud(3, np.array([[0.0, 1.0, 2.0]]))
    c = VoxelPointCloud(3, np.array([[1, 2, 3], [1, 2, 3], [0, 0, 0]]))
    assert len(c) == 2
    assert not c.points.flags.writeable
    assert c == VoxelPointCloud(3, np.array([[0, 0, 0], [1, 2, 3]]))
    assert c != VoxelPointCloud(4, c.points)
