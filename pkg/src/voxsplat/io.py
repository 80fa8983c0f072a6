"""File formats used by the command line: PFM, raster tensors, PLY, PNG.

Everything here is interchange plumbing; the voxel-grid binary format lives
next to the grid code in :mod:`voxsplat.grid` and the splat PLY next to the
Gaussian code in :mod:`voxsplat.splats`.
"""

from __future__ import annotations

import io as _io
import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .points import LabeledPointCloud
from .sky import CONVENTION, SkyPanorama


class FormatError(ValueError):
    """Malformed interchange file."""


# ---------------------------------------------------------------------------
# Raster tensor container: magic | u32 version | u32 dtype tag | u32 rank
# | rank x u64 shape | row-major payload, all little-endian.
# ---------------------------------------------------------------------------

RASTER_MAGIC = b"VXRT"
_DTYPE_TAGS = {1: "<f4", 2: "<f8", 3: "<i4", 4: "<i8", 5: "u1"}
_TAG_OF_DTYPE = {np.dtype(v): k for k, v in _DTYPE_TAGS.items()}


def write_raster_tensor(path: Union[str, Path], array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    tag = _TAG_OF_DTYPE.get(array.dtype.newbyteorder("<"))
    if tag is None:
        raise ValueError(f"unsupported raster tensor dtype {array.dtype}")
    with open(path, "wb") as f:
        f.write(RASTER_MAGIC)
        f.write(struct.pack("<III", 1, tag, array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(array.astype(_DTYPE_TAGS[tag]).tobytes())


def read_raster_tensor(path: Union[str, Path]) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != RASTER_MAGIC:
        raise FormatError(f"bad raster tensor magic {blob[:4]!r}")
    try:
        version, tag, rank = struct.unpack_from("<III", blob, 4)
        shape = struct.unpack_from(f"<{rank}Q", blob, 16)
    except struct.error as exc:
        raise FormatError(f"truncated raster tensor header: {exc}") from exc
    if version != 1:
        raise FormatError(f"unsupported raster tensor version {version}")
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag}")
    dtype = np.dtype(_DTYPE_TAGS[tag])
    offset = 16 + 8 * rank
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise FormatError(f"raster tensor payload is {len(payload)} bytes, "
                          f"expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# PFM (portable float map), 1 or 3 channels, plus a JSON sidecar that lets a
# panorama round-trip arbitrary channel counts through a grayscale PFM.
# ---------------------------------------------------------------------------


def write_pfm(path: Union[str, Path], data: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float32 PFM (little-endian, top row last)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if data.ndim == 2:
        header = b"Pf\n"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF\n"
    else:
        raise ValueError(f"PFM supports 1 or 3 channels, got shape {data.shape}")
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(np.flipud(data).tobytes())


def read_pfm(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise FormatError(f"bad PFM magic {kind!r}")
        try:
            width, height = map(int, f.readline().split())
            scale = float(f.readline())
        except ValueError as exc:
            raise FormatError(f"bad PFM header: {exc}") from exc
        channels = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read(width * height * channels * 4)
        if len(payload) != width * height * channels * 4:
            raise FormatError("truncated PFM payload")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    data = np.flipud(data).astype(np.float64)
    return data[:, :, 0] if channels == 1 else data


def save_panorama(path: Union[str, Path], pano: SkyPanorama) -> None:
    """PFM (3-channel when C_p = 3, otherwise grayscale of width W * C_p)
    plus a `<path>.json` sidecar recording the true layout."""
    path = Path(path)
    if pano.channels == 3:
        write_pfm(path, pano.data)
    else:
        write_pfm(path, pano.data.reshape(pano.height, pano.width * pano.channels))
    sidecar = {"height": pano.height, "width": pano.width,
               "channels": pano.channels, "convention": CONVENTION,
               "uncovered_value": pano.uncovered_value}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_panorama(path: Union[str, Path]) -> SkyPanorama:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"missing panorama sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    if sidecar.get("convention") != CONVENTION:
        raise FormatError(f"unknown panorama convention {sidecar.get('convention')!r}")
    data = read_pfm(path)
    h, w, c = sidecar["height"], sidecar["width"], sidecar["channels"]
    data = data.reshape(h, w, c)
    return SkyPanorama(data, None, float(sidecar.get("uncovered_value", 0.5)))


# ---------------------------------------------------------------------------
# Point-cloud PLY (binary little-endian, double positions)
# ---------------------------------------------------------------------------


def write_point_ply(path: Union[str, Path], cloud: LabeledPointCloud,
                    ranges: Optional[np.ndarray] = None) -> None:
    n = len(cloud)
    props = [("x", "double"), ("y", "double"), ("z", "double")]
    columns = [cloud.positions[:, 0], cloud.positions[:, 1], cloud.positions[:, 2]]
    if ranges is not None:
        props.append(("range", "double"))
        columns.append(np.asarray(ranges, dtype=np.float64))
    if cloud.labels is not None:
        props.append(("label", "int"))
        columns.append(cloud.labels)
    if cloud.timestamps is not None:
        props.append(("timestamp", "double"))
        columns.append(cloud.timestamps)
    if cloud.frame_ids is not None:
        props.append(("frame", "int"))
        columns.append(cloud.frame_ids)

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {t} {name}" for name, t in props]
    header.append("end_header")
    dtype = np.dtype([(name, "<f8" if t == "double" else "<i4")
                      for name, t in props])
    rec = np.empty(n, dtype=dtype)
    for (name, _), col in zip(props, columns):
        rec[name] = col
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def read_point_ply(path: Union[str, Path]):
    """Returns (LabeledPointCloud, ranges-or-None)."""
    blob = Path(path).read_bytes()
    stream = _io.BytesIO(blob)
    if stream.readline().strip() != b"ply":
        raise FormatError("not a PLY file")
    count = None
    props: list[tuple[str, str]] = []
    fmt = None
    while True:
        line = stream.readline()
        if not line:
            raise FormatError("unterminated PLY header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            if tokens[1] != "vertex":
                raise FormatError(f"unsupported element {tokens[1]!r}")
            count = int(tokens[2])
        elif tokens[0] == "property":
            props.append((tokens[2], tokens[1]))
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise FormatError(f"unsupported PLY format {fmt!r}")
    if count is None:
        raise FormatError("missing vertex element")
    type_map = {"double": "<f8", "float": "<f4", "int": "<i4", "uint": "<u4",
                "uchar": "u1", "short": "<i2", "ushort": "<u2"}
    try:
        dtype = np.dtype([(name, type_map[t]) for name, t in props])
    except KeyError as exc:
        raise FormatError(f"unsupported property type {exc}") from exc
    payload = stream.read()
    if len(payload) < count * dtype.itemsize:
        raise FormatError("truncated PLY payload")
    rec = np.frombuffer(payload[:count * dtype.itemsize], dtype=dtype)
    names = [name for name, _ in props]
    for needed in ("x", "y", "z"):
        if needed not in names:
            raise FormatError(f"missing required property {needed!r}")
    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    cloud = LabeledPointCloud(
        positions,
        rec["label"].astype(np.int32) if "label" in names else None,
        rec["timestamp"].astype(np.float64) if "timestamp" in names else None,
        rec["frame"].astype(np.int32) if "frame" in names else None,
    )
    ranges = rec["range"].astype(np.float64) if "range" in names else None
    return cloud, ranges


# ---------------------------------------------------------------------------
# PNG images (unit-range float <-> 8-bit)
# ---------------------------------------------------------------------------


def write_png(path: Union[str, Path], image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    arr8 = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(arr8).save(path, format="PNG")


def read_png(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.float64) / 255.0
