"""File formats: OBJ and PLY geometry, versioned JSON artifacts.

JSON is written with sorted keys and fixed float formatting so that equal
content gives equal bytes.  Every write goes to a temporary file in the
target directory and is then renamed into place.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import MissingArtifact
from .geometry import ConvexPolyhedron, OrientedPointCloud, TriangleMesh
from .tessellation.types import ClippedCell, ClippedCVT

FORMAT_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, kind: str, payload: dict) -> None:
    atomic_write_text(path, dumps_json({"format": kind, "version": FORMAT_VERSION, **payload}))


def read_json(path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(str(path))
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if kind is not None and d.get("format") != kind:
        raise ValueError(f"{path}: expected format {kind!r}, found {d.get('format')!r}")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {d.get('version')!r}")
    return d


# ---------------------------------------------------------------- OBJ

def obj_text(polyhedra, shrink: float = 1.0) -> str:
    """OBJ with one ``o`` group per polyhedron, polygon faces, 1-based indices."""
    lines = []
    base = 1
    for k, P in enumerate(polyhedra):
        V = P.vertices
        if shrink != 1.0:
            c = P.volume_centroid()[1]
            V = c + shrink * (V - c)
        lines.append(f"o cell{k}")
        lines.extend(f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in V)
        lines.extend("f " + " ".join(str(base + int(i)) for i in f) for f in P.faces)
        base += len(V)
    return "\n".join(lines) + "\n"


def write_obj(path, polyhedra, shrink: float = 1.0) -> None:
    if isinstance(polyhedra, ConvexPolyhedron):
        polyhedra = [polyhedra]
    atomic_write_text(path, obj_text(polyhedra, shrink))


def write_mesh_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    """Triangle mesh from OBJ (polygons fan-triangulated, ``v/vt/vn`` tokens accepted)."""
    verts, tris = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = []
                for t in tok[1:]:
                    i = int(t.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for j in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[j], idx[j + 1]])
    return TriangleMesh(np.array(verts, dtype=float), np.array(tris, dtype=np.int64))


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise ValueError("not a PLY file")
    fmt = None
    elements = []
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PLY header")
        tok = line.decode("ascii").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[4], ("list", tok[2], tok[3])))
            else:
                elements[-1][2].append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path) -> dict:
    """Element name -> dict of property arrays (lists become lists of arrays)."""
    out: dict = {}
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        if fmt == "ascii":
            tokens = fh.read().split()
            pos = 0
            for name, count, props in elements:
                cols: dict = {p: [] for p, _ in props}
                for _ in range(count):
                    for p, t in props:
                        if isinstance(t, tuple):
                            m = int(tokens[pos])
                            cols[p].append(np.array([float(x) for x in tokens[pos + 1:pos + 1 + m]]))
                            pos += 1 + m
                        else:
                            cols[p].append(float(tokens[pos]))
                            pos += 1
                out[name] = {p: (v if isinstance(t, tuple) else np.asarray(v))
                             for (p, t), v in zip(props, cols.values())}
        else:
            for name, count, props in elements:
                if all(not isinstance(t, tuple) for _, t in props):
                    dt = np.dtype([(p, "<" + _PLY_TYPES[t]) for p, t in props])
                    arr = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt, count=count)
                    out[name] = {p: arr[p].astype(float) for p, _ in props}
                    continue
                cols = {p: [] for p, _ in props}
                for _ in range(count):
                    for p, t in props:
                        if isinstance(t, tuple):
                            ct = np.dtype("<" + _PLY_TYPES[t[1]])
                            it = np.dtype("<" + _PLY_TYPES[t[2]])
                            m = int(np.frombuffer(fh.read(ct.itemsize), dtype=ct)[0])
                            cols[p].append(np.frombuffer(fh.read(it.itemsize * m), dtype=it).astype(np.int64))
                        else:
                            d = np.dtype("<" + _PLY_TYPES[t])
                            cols[p].append(float(np.frombuffer(fh.read(d.itemsize), dtype=d)[0]))
                out[name] = {p: (v if isinstance(t, tuple) else np.asarray(v))
                             for (p, t), v in zip(props, cols.values())}
    return out


def read_point_cloud(path) -> OrientedPointCloud:
    v = read_ply(path)["vertex"]
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1)
    if "nx" in v:
        n = np.stack([v["nx"], v["ny"], v["nz"]], axis=1)
        n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    else:
        raise ValueError(f"{path}: point cloud has no normals")
    return OrientedPointCloud(pts, n)


def write_point_cloud(path, cloud: OrientedPointCloud, binary: bool = True) -> None:
    n = len(cloud.points)
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
              f"element vertex {n}"]
    header += [f"property double {c}" for c in ("x", "y", "z", "nx", "ny", "nz")]
    header.append("end_header")
    data = np.hstack([cloud.points, cloud.normals]).astype("<f8")
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        body = data.tobytes()
    else:
        body = "".join(" ".join(repr(float(x)) for x in row) + "\n" for row in data).encode("ascii")
    atomic_write_bytes(path, head + body)


# ---------------------------------------------------------------- CVT

def cvt_to_dict(cvt: ClippedCVT) -> dict:
    cells = []
    for c in cvt.cells:
        P = c.cell
        cells.append({
            "vertices": P.vertices.tolist(),
            "faces": [np.asarray(f).tolist() for f in P.faces],
            "labels": (np.asarray(P.face_labels).tolist() if P.face_labels is not None else None),
            "boundary": bool(c.is_boundary),
        })
    return {
        "sites": cvt.sites.tolist(),
        "adjacency": cvt.adjacency.tolist(),
        "energy_history": [float(e) for e in cvt.energy_history],
        "cells": cells,
    }


def cvt_from_dict(d: dict) -> ClippedCVT:
    sites = np.asarray(d["sites"], dtype=float).reshape(-1, 3)
    cells = []
    for i, c in enumerate(d["cells"]):
        labels = None if c["labels"] is None else np.asarray(c["labels"], dtype=np.int64)
        P = ConvexPolyhedron(np.asarray(c["vertices"], dtype=float),
                             tuple(np.asarray(f, dtype=np.int64) for f in c["faces"]), labels)
        cells.append(ClippedCell(P, sites[i], bool(c["boundary"])))
    return ClippedCVT(sites, cells, np.asarray(d["adjacency"], dtype=np.int64), list(d["energy_history"]))


def save_cvt(path, cvt: ClippedCVT) -> None:
    write_json(path, "cvt", cvt_to_dict(cvt))


def load_cvt(path) -> ClippedCVT:
    return cvt_from_dict(read_json(path, "cvt"))
