"""On-disk formats: binary scenes, PFM grids, PNM masks/previews, JSON calibration.

Scene file (little-endian)::

    b"GSBV" | u32 version=1 | u32 count | u32 C
    count x [center f32x3 | scale f32x3 | quat (w,x,y,z) f32x4 | opacity f32 | embedding f32xC]

Grids with C in {1, 3} are plain PFM (``Pf``/``PF``). Any other C is written as
``PFSTACK <C>\\n`` followed by C complete single-channel ``Pf`` images.
All writers go through a temporary file and an atomic rename.
"""
import json
import os
import struct
import tempfile

import numpy as np

from .bev_rasterizer import BevGrid, RenderConfig
from .camera_geometry import CameraCalib
from .errors import (BadMagic, CalibError, MalformedHeader, TruncatedFile, ValidationFailed,
                     VersionUnsupported)
from .gaussian_scene import GaussianScene, validate

SCENE_MAGIC = b"GSBV"
SCENE_VERSION = 1
_HEADER = struct.Struct("<4sIII")
# f32 storage cannot hold a unit quaternion to 1e-9
LOAD_QUAT_TOL = 1e-6


def atomic_write(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- scenes

def scene_to_bytes(scene):
    C = scene.feature_dim
    body = scene.as_matrix().astype("<f4")
    return _HEADER.pack(SCENE_MAGIC, SCENE_VERSION, len(scene), C) + body.tobytes()


def scene_from_bytes(data, check=True):
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"scene header needs {_HEADER.size} bytes, got {len(data)}")
    magic, version, count, C = _HEADER.unpack_from(data)
    if magic != SCENE_MAGIC:
        raise BadMagic(f"expected magic {SCENE_MAGIC!r}, found {magic!r}")
    if version != SCENE_VERSION:
        raise VersionUnsupported(f"scene version {version} (supported: {SCENE_VERSION})")
    need = _HEADER.size + count * (11 + C) * 4
    if len(data) < need:
        raise TruncatedFile(f"scene body needs {need} bytes, got {len(data)}")
    if len(data) > need:
        raise TruncatedFile(f"{len(data) - need} trailing bytes after scene body")
    body = np.frombuffer(data, dtype="<f4", count=count * (11 + C), offset=_HEADER.size)
    m = body.reshape(count, 11 + C).astype(np.float64)
    scene = GaussianScene(m[:, 0:3], m[:, 3:6], m[:, 6:10], m[:, 10], m[:, 11:])
    if check:
        problems = validate(scene, quat_tol=LOAD_QUAT_TOL)
        if problems:
            raise ValidationFailed(problems)
    return scene


def save_scene(path, scene):
    atomic_write(path, scene_to_bytes(scene))


def load_scene(path, check=True):
    with open(path, "rb") as fh:
        return scene_from_bytes(fh.read(), check=check)


# ---------------------------------------------------------------- PFM

def _pfm_plane(img):
    """One PFM image from an ``(H, W)`` or ``(H, W, 3)`` array, rows bottom-up."""
    img = np.asarray(img, dtype="<f4")
    tag = b"Pf" if img.ndim == 2 else b"PF"
    h, w = img.shape[:2]
    head = tag + b"\n%d %d\n-1.0\n" % (w, h)
    return head + np.ascontiguousarray(img[::-1]).tobytes()


def grid_to_pfm_bytes(data):
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, :, None]
    C = data.shape[2]
    if C == 1:
        return _pfm_plane(data[:, :, 0])
    if C == 3:
        return _pfm_plane(data)
    return b"PFSTACK %d\n" % C + b"".join(_pfm_plane(data[:, :, k]) for k in range(C))


def _read_line(data, pos):
    end = data.find(b"\n", pos)
    if end < 0:
        raise MalformedHeader("unterminated header line")
    return data[pos:end].decode("ascii", errors="replace").strip(), end + 1


def _parse_plane(data, pos):
    tag, pos = _read_line(data, pos)
    if tag not in ("Pf", "PF"):
        raise MalformedHeader(f"unexpected PFM tag {tag!r}")
    dims, pos = _read_line(data, pos)
    scale, pos = _read_line(data, pos)
    try:
        w, h = (int(v) for v in dims.split())
        scale = float(scale)
    except ValueError as exc:
        raise MalformedHeader(f"bad PFM header: {dims!r} / {scale!r}") from exc
    if w <= 0 or h <= 0 or scale == 0.0:
        raise MalformedHeader("PFM dimensions must be positive and scale non-zero")
    ch = 1 if tag == "Pf" else 3
    n = w * h * ch
    if len(data) < pos + 4 * n:
        raise MalformedHeader("PFM pixel data is truncated")
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(h, w, ch)[::-1]
    return img.astype(np.float32), pos + 4 * n


def grid_from_pfm_bytes(data):
    """Returns an ``(H, W, C)`` float32 array."""
    first, pos = _read_line(data, 0)
    if first.startswith("PFSTACK"):
        parts = first.split()
        if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) < 1:
            raise MalformedHeader(f"bad PFSTACK header {first!r}")
        planes = []
        for _ in range(int(parts[1])):
            img, pos = _parse_plane(data, pos)
            if img.shape[2] != 1:
                raise MalformedHeader("PFSTACK planes must be single-channel")
            planes.append(img[:, :, 0])
        if len({p.shape for p in planes}) != 1:
            raise MalformedHeader("PFSTACK planes differ in size")
        return np.stack(planes, axis=2)
    img, _ = _parse_plane(data, 0)
    return img


def save_grid_pfm(path, grid):
    data = grid.data if isinstance(grid, BevGrid) else grid
    atomic_write(path, grid_to_pfm_bytes(data))


def load_grid_pfm(path):
    with open(path, "rb") as fh:
        return grid_from_pfm_bytes(fh.read())


# ---------------------------------------------------------------- PNM

def pgm_bytes(mask):
    m = np.asarray(mask)
    img = np.where(m.astype(bool), 255, 0).astype(np.uint8) if m.dtype == bool else m.astype(np.uint8)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def ppm_bytes(rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb).tobytes()


def read_pnm(data):
    """Decode binary P5/P6 bytes into a uint8 array."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in ("P5", "P6") or maxval != 255:
        raise MalformedHeader(f"unsupported PNM {magic} maxval {maxval}")
    ch = 1 if magic == "P5" else 3
    img = np.frombuffer(data, dtype=np.uint8, count=w * h * ch, offset=pos)
    return img.reshape(h, w) if ch == 1 else img.reshape(h, w, 3)


# ---------------------------------------------------------------- JSON

def calibs_to_dict(calibs):
    if not calibs:
        raise CalibError("need at least one camera")
    f_ref = calibs[0].f_ref
    return {
        "f_ref": f_ref,
        "cameras": [
            {"name": c.name, "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
             "R": [float(v) for v in c.R.ravel()], "t": [float(v) for v in c.t],
             "width": c.width, "height": c.height}
            for c in calibs
        ],
    }


def calibs_from_dict(doc, tol=1e-6):
    try:
        f_ref = float(doc["f_ref"])
        cams = doc["cameras"]
        out = []
        for i, cam in enumerate(cams):
            R = np.asarray(cam["R"], dtype=np.float64)
            t = np.asarray(cam["t"], dtype=np.float64)
            if R.size != 9 or t.size != 3:
                raise CalibError(f"camera {i}: R needs 9 numbers and t 3")
            calib = CameraCalib(float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]),
                                R.reshape(3, 3), t, int(cam["width"]), int(cam["height"]), f_ref,
                                str(cam["name"]))
            problems = calib.check(tol)
            if problems:
                raise CalibError(f"camera {i} ({calib.name}): " + ", ".join(problems))
            out.append(calib)
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibError(f"malformed calibration document: {exc!r}") from exc
    return out


def save_calibs(path, calibs):
    atomic_write(path, (json.dumps(calibs_to_dict(calibs), indent=2) + "\n").encode())


def load_calibs(path):
    with open(path, "rb") as fh:
        return calibs_from_dict(json.loads(fh.read()))


def load_render_config(path):
    with open(path, "rb") as fh:
        return RenderConfig.from_dict(json.loads(fh.read()))
