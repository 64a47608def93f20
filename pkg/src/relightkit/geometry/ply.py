"""Binary little-endian PLY with a fixed vertex/face schema.

Vertices carry position and normal as float32 plus albedo quantized to
8-bit red/green/blue (round(albedo * 255)).  Faces are uchar-counted
int32 index lists, always length 3.  The reader is strict: headers that
do not match this schema are rejected with the offending line quoted.
"""

from __future__ import annotations

import numpy as np

from relightkit.errors import FileFormatError
from relightkit.geometry.mesh import TriangleMesh

_VERTEX_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
])
_FACE_DTYPE = np.dtype([("count", "u1"), ("i0", "<i4"), ("i1", "<i4"),
                        ("i2", "<i4")])

# (name, accepted type spellings) in required order.
_VERTEX_PROPS = [
    ("x", ("float", "float32")), ("y", ("float", "float32")),
    ("z", ("float", "float32")),
    ("nx", ("float", "float32")), ("ny", ("float", "float32")),
    ("nz", ("float", "float32")),
    ("red", ("uchar", "uint8")), ("green", ("uchar", "uint8")),
    ("blue", ("uchar", "uint8")),
]


def save_ply(path, mesh: TriangleMesh) -> None:
    """Write a mesh in the fixed binary schema."""
    header = "\n".join([
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x", "property float y", "property float z",
        "property float nx", "property float ny", "property float nz",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]) + "\n"
    vdata = np.empty(mesh.n_vertices, dtype=_VERTEX_DTYPE)
    v32 = mesh.vertices.astype(np.float32)
    n32 = mesh.normals.astype(np.float32)
    rgb = np.clip(np.rint(mesh.albedo * 255.0), 0, 255).astype(np.uint8)
    for i, name in enumerate(("x", "y", "z")):
        vdata[name] = v32[:, i]
    for i, name in enumerate(("nx", "ny", "nz")):
        vdata[name] = n32[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        vdata[name] = rgb[:, i]
    fdata = np.empty(mesh.n_faces, dtype=_FACE_DTYPE)
    fdata["count"] = 3
    f32 = mesh.faces.astype(np.int32)
    fdata["i0"], fdata["i1"], fdata["i2"] = f32[:, 0], f32[:, 1], f32[:, 2]
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vdata.tobytes())
        fh.write(fdata.tobytes())


def _read_header(path, blob: bytes):
    """Parse the text header; return (vertex_count, face_count, body_offset)."""
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise FileFormatError(path, "not a PLY file (missing ply/end_header)",
                              line=1)
    header = blob[:end].decode("ascii", errors="replace")
    lines = header.split("\n")
    n_vertex = n_face = None
    vprop_cursor = 0
    face_list_seen = False
    current = None
    for idx, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("comment"):
            continue
        tok = line.split()
        if tok[0] == "format":
            if tok[1:] != ["binary_little_endian", "1.0"]:
                raise FileFormatError(
                    path, f"unsupported format {line!r}; "
                    "expected 'format binary_little_endian 1.0'", line=idx)
        elif tok[0] == "element":
            if tok[1] == "vertex":
                n_vertex, current = int(tok[2]), "vertex"
            elif tok[1] == "face":
                n_face, current = int(tok[2]), "face"
            else:
                raise FileFormatError(path, f"unexpected element {line!r}",
                                      line=idx)
        elif tok[0] == "property":
            if current == "vertex":
                if vprop_cursor >= len(_VERTEX_PROPS):
                    raise FileFormatError(
                        path, f"extra vertex property {line!r}", line=idx)
                name, types = _VERTEX_PROPS[vprop_cursor]
                if len(tok) != 3 or tok[2] != name or tok[1] not in types:
                    raise FileFormatError(
                        path, f"vertex property {vprop_cursor + 1} must be "
                        f"'property {types[0]} {name}', got {line!r}", line=idx)
                vprop_cursor += 1
            elif current == "face":
                ok = (len(tok) == 5 and tok[1] == "list"
                      and tok[2] in ("uchar", "uint8")
                      and tok[3] in ("int", "int32")
                      and tok[4] in ("vertex_indices", "vertex_index"))
                if not ok:
                    raise FileFormatError(
                        path, "face property must be "
                        f"'property list uchar int vertex_indices', got {line!r}",
                        line=idx)
                face_list_seen = True
            else:
                raise FileFormatError(
                    path, f"property before any element: {line!r}", line=idx)
        else:
            raise FileFormatError(path, f"unexpected header line {line!r}",
                                  line=idx)
    if n_vertex is None or n_face is None:
        raise FileFormatError(path, "header lacks vertex or face element")
    if vprop_cursor != len(_VERTEX_PROPS):
        raise FileFormatError(
            path, f"vertex element lists {vprop_cursor} of "
            f"{len(_VERTEX_PROPS)} required properties")
    if n_face > 0 and not face_list_seen:
        raise FileFormatError(path, "face element lacks its index-list property")
    return n_vertex, n_face, end + len(b"end_header\n")


def load_ply(path) -> TriangleMesh:
    """Read a mesh written by save_ply (or any conforming file)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    n_vertex, n_face, offset = _read_header(path, blob)
    need = n_vertex * _VERTEX_DTYPE.itemsize + n_face * _FACE_DTYPE.itemsize
    body = blob[offset:]
    if len(body) < need:
        raise FileFormatError(
            path, f"body truncated: expected {need} bytes, found {len(body)}")
    vdata = np.frombuffer(body, dtype=_VERTEX_DTYPE, count=n_vertex)
    fdata = np.frombuffer(body, dtype=_FACE_DTYPE, count=n_face,
                          offset=n_vertex * _VERTEX_DTYPE.itemsize)
    if n_face and not (fdata["count"] == 3).all():
        bad = int(np.argmax(fdata["count"] != 3))
        raise FileFormatError(
            path, f"face {bad} has {int(fdata['count'][bad])} indices; "
            "only triangles are supported")
    vertices = np.stack([vdata["x"], vdata["y"], vdata["z"]], axis=1)
    normals = np.stack([vdata["nx"], vdata["ny"], vdata["nz"]], axis=1)
    albedo = np.stack([vdata["red"], vdata["green"], vdata["blue"]],
                      axis=1).astype(np.float64) / 255.0
    faces = np.stack([fdata["i0"], fdata["i1"], fdata["i2"]],
                     axis=1).astype(np.int32)
    if n_face and (faces.min() < 0 or faces.max() >= n_vertex):
        raise FileFormatError(path, "face indices out of range")
    return TriangleMesh(vertices.astype(np.float64), faces,
                        normals.astype(np.float64), albedo)
