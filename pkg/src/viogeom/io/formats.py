"""Binary file formats: .flo optical flow, PFM, 16-bit PNG disparity,
mask PNG and PLY point clouds.

All formats round-trip bit-exactly at the file level; values are stored in
the precision the format defines (float32 for .flo/PFM/PLY, 1/256 px for
PNG disparity).
"""

from __future__ import annotations

import re

import cv2
import numpy as np

from viogeom.errors import FormatError
from viogeom.flow import MASK_DYNAMIC, MASK_INVALID, MASK_VALID, FlowField2D
from viogeom.stereo import DisparityMap, PointCloud

FLO_MAGIC = 202021.25  # float32 that reads "PIEH" as ASCII
PNG16_DISPARITY_SCALE = 256.0

# mask PNG grey levels
_MASK_TO_PNG = {MASK_INVALID: 0, MASK_DYNAMIC: 128, MASK_VALID: 255}
_PNG_TO_MASK = {v: k for k, v in _MASK_TO_PNG.items()}


# --------------------------------------------------------------------------
# Middlebury .flo
# --------------------------------------------------------------------------

def write_flo(path, flow):
    """Write an (H, W, 2) float32 flow array."""
    flow = np.ascontiguousarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow array must have shape (H, W, 2)")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        np.array([FLO_MAGIC], dtype="<f4").tofile(f)
        np.array([w, h], dtype="<i4").tofile(f)
        flow.astype("<f4").tofile(f)


def read_flo(path):
    """Read a .flo file into an (H, W, 2) float32 array."""
    with open(path, "rb") as f:
        magic = np.fromfile(f, dtype="<f4", count=1)
        if len(magic) != 1 or magic[0] != np.float32(FLO_MAGIC):
            raise FormatError("bad .flo magic", path=str(path))
        dims = np.fromfile(f, dtype="<i4", count=2)
        if len(dims) != 2 or dims[0] <= 0 or dims[1] <= 0:
            raise FormatError("bad .flo dimensions", path=str(path))
        w, h = int(dims[0]), int(dims[1])
        data = np.fromfile(f, dtype="<f4", count=2 * w * h)
        if data.size != 2 * w * h:
            raise FormatError(
                f"truncated .flo payload: expected {2 * w * h} floats, got {data.size}",
                path=str(path),
            )
    return data.reshape(h, w, 2)


def write_mask_png(path, mask):
    """Tri-state mask as an 8-bit PNG: 0 invalid, 128 dynamic, 255 valid."""
    mask = np.asarray(mask, dtype=np.uint8)
    img = np.zeros_like(mask)
    for state, grey in _MASK_TO_PNG.items():
        img[mask == state] = grey
    if not cv2.imwrite(str(path), img):
        raise OSError(f"failed to write {path}")


def read_mask_png(path):
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError("unreadable mask PNG", path=str(path))
    if img.ndim != 2:
        raise FormatError("mask PNG must be single-channel", path=str(path))
    mask = np.zeros(img.shape, dtype=np.uint8)
    unknown = np.ones(img.shape, dtype=bool)
    for grey, state in _PNG_TO_MASK.items():
        sel = img == grey
        mask[sel] = state
        unknown &= ~sel
    if unknown.any():
        raise FormatError("mask PNG contains grey levels outside {0, 128, 255}",
                          path=str(path))
    return mask


def save_flow_field(field: FlowField2D, flo_path, mask_path):
    write_flo(flo_path, field.values)
    write_mask_png(mask_path, field.mask)


def load_flow_field(flo_path, mask_path=None) -> FlowField2D:
    """Load flow; without a sidecar mask every pixel counts as valid."""
    values = read_flo(flo_path)
    if mask_path is None:
        mask = np.full(values.shape[:2], MASK_VALID, np.uint8)
    else:
        mask = read_mask_png(mask_path)
        if mask.shape != values.shape[:2]:
            raise FormatError("mask size does not match flow", path=str(mask_path))
    return FlowField2D(values, mask)


# --------------------------------------------------------------------------
# PFM
# --------------------------------------------------------------------------

def read_pfm(path):
    """Read a PFM image as (H, W) or (H, W, 3) float32, top row first."""
    with open(path, "rb") as f:
        header = f.readline().decode("latin-1").rstrip()
        if header == "PF":
            channels = 3
        elif header == "Pf":
            channels = 1
        else:
            raise FormatError(f"not a PFM file (header {header!r})", path=str(path))
        dim_line = f.readline().decode("latin-1")
        match = re.match(r"^(\d+)\s+(\d+)\s*$", dim_line)
        if not match:
            raise FormatError("malformed PFM dimensions", path=str(path))
        w, h = int(match.group(1)), int(match.group(2))
        scale = float(f.readline().decode("latin-1").rstrip())
        endian = "<" if scale < 0 else ">"
        data = np.fromfile(f, dtype=endian + "f4", count=w * h * channels)
        if data.size != w * h * channels:
            raise FormatError("truncated PFM payload", path=str(path))
    shape = (h, w) if channels == 1 else (h, w, 3)
    # PFM stores rows bottom-up
    return np.flipud(data.reshape(shape)).copy()


def write_pfm(path, image):
    """Write a little-endian single-channel PFM."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("write_pfm supports single-channel images")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("latin-1"))
        f.write(b"-1.0\n")
        np.flipud(image).astype("<f4").tofile(f)


def read_disparity_pfm(path) -> DisparityMap:
    data = read_pfm(path)
    if data.ndim != 2:
        raise FormatError("disparity PFM must be single-channel", path=str(path))
    valid = np.isfinite(data) & (data > 0)
    return DisparityMap(np.where(valid, data, 0.0), valid)


# --------------------------------------------------------------------------
# 16-bit PNG disparity (value / 256 px, 0 = invalid)
# --------------------------------------------------------------------------

def write_disparity_png16(path, disp: DisparityMap):
    raw = np.zeros(disp.values.shape, dtype=np.uint16)
    quantized = np.rint(disp.values * PNG16_DISPARITY_SCALE)
    quantized = np.clip(quantized, 0, 65535)
    raw[disp.valid] = quantized[disp.valid].astype(np.uint16)
    if not cv2.imwrite(str(path), raw):
        raise OSError(f"failed to write {path}")


def read_disparity_png16(path) -> DisparityMap:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError("unreadable disparity PNG", path=str(path))
    if raw.dtype != np.uint16 or raw.ndim != 2:
        raise FormatError("disparity PNG must be single-channel 16-bit", path=str(path))
    valid = raw > 0
    return DisparityMap(raw.astype(np.float64) / PNG16_DISPARITY_SCALE, valid)


# --------------------------------------------------------------------------
# Binary little-endian PLY
# --------------------------------------------------------------------------

_PLY_XYZ_UV = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("u", "<u4"), ("v", "<u4")]
_PLY_FLOW = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
             ("vx", "<f4"), ("vy", "<f4"), ("vz", "<f4"),
             ("u", "<u4"), ("v", "<u4")]
_PLY_TYPE_NAMES = {"<f4": "float", "<u4": "uint"}


def _ply_header(count, fields):
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    lines += [f"property {_PLY_TYPE_NAMES[dtype]} {name}" for name, dtype in fields]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ply(path, cloud: PointCloud):
    """Point cloud with float32 xyz and uint32 source-pixel u, v."""
    rec = np.zeros(len(cloud), dtype=_PLY_XYZ_UV)
    rec["x"], rec["y"], rec["z"] = cloud.points.astype(np.float32).T
    uv = np.rint(cloud.source_pixels).astype(np.uint32)
    rec["u"], rec["v"] = uv.T
    with open(path, "wb") as f:
        f.write(_ply_header(len(cloud), _PLY_XYZ_UV))
        rec.tofile(f)


def write_flow_ply(path, anchors, vectors, source_pixels):
    """3-D flow as a PLY: anchor xyz, flow vx vy vz, source pixel u v."""
    anchors = np.asarray(anchors, dtype=np.float32).reshape(-1, 3)
    vectors = np.asarray(vectors, dtype=np.float32).reshape(-1, 3)
    pixels = np.rint(np.asarray(source_pixels)).astype(np.uint32).reshape(-1, 2)
    if not (len(anchors) == len(vectors) == len(pixels)):
        raise ValueError("anchors, vectors and source pixels must have equal length")
    rec = np.zeros(len(anchors), dtype=_PLY_FLOW)
    rec["x"], rec["y"], rec["z"] = anchors.T
    rec["vx"], rec["vy"], rec["vz"] = vectors.T
    rec["u"], rec["v"] = pixels.T
    with open(path, "wb") as f:
        f.write(_ply_header(len(anchors), _PLY_FLOW))
        rec.tofile(f)


def _read_ply_records(path):
    with open(path, "rb") as f:
        line = f.readline().strip()
        if line != b"ply":
            raise FormatError("not a PLY file", path=str(path))
        fmt = f.readline().strip()
        if fmt != b"format binary_little_endian 1.0":
            raise FormatError("unsupported PLY format (need binary little-endian)",
                              path=str(path))
        count = None
        fields = []
        while True:
            line = f.readline()
            if not line:
                raise FormatError("PLY header without end_header", path=str(path))
            line = line.strip().decode("ascii")
            if line == "end_header":
                break
            parts = line.split()
            if parts[0] == "element":
                if parts[1] != "vertex":
                    raise FormatError(f"unsupported PLY element {parts[1]}", path=str(path))
                count = int(parts[2])
            elif parts[0] == "property":
                kind = {"float": "<f4", "uint": "<u4"}.get(parts[1])
                if kind is None:
                    raise FormatError(f"unsupported PLY property type {parts[1]}",
                                      path=str(path))
                fields.append((parts[2], kind))
        if count is None:
            raise FormatError("PLY header missing vertex element", path=str(path))
        rec = np.fromfile(f, dtype=fields, count=count)
        if len(rec) != count:
            raise FormatError(f"truncated PLY payload: {len(rec)}/{count} vertices",
                              path=str(path))
    return rec


def read_ply(path) -> PointCloud:
    rec = _read_ply_records(path)
    for name in ("x", "y", "z", "u", "v"):
        if name not in rec.dtype.names:
            raise FormatError(f"PLY missing property {name}", path=str(path))
    points = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    pixels = np.column_stack([rec["u"], rec["v"]]).astype(np.float64)
    return PointCloud(points, pixels)


def read_flow_ply(path):
    """Returns (anchors, vectors, source_pixels) float64/float64/float64."""
    rec = _read_ply_records(path)
    for name in ("x", "y", "z", "vx", "vy", "vz", "u", "v"):
        if name not in rec.dtype.names:
            raise FormatError(f"flow PLY missing property {name}", path=str(path))
    anchors = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    vectors = np.column_stack([rec["vx"], rec["vy"], rec["vz"]]).astype(np.float64)
    pixels = np.column_stack([rec["u"], rec["v"]]).astype(np.float64)
    return anchors, vectors, pixels
