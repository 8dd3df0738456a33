"""File formats: grayscale images, flux arrays, lens OBJ files, partition SVGs.

Gray images are returned as floats in ``[0, 1]`` (value / maxval).

The flux binary layout is a 16-byte header of the ASCII magic ``CLFLUX01``
followed by little-endian ``uint32`` width and height, then
``width * height`` little-endian float64 values in row-major order
(row 0 first).
"""
import os
import struct

import numpy as np

from .errors import ConfigurationError
from .mesh import HeightFieldMesh

FLUX_MAGIC = b"CLFLUX01"


# --------------------------------------------------------------------------
# images
# --------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ConfigurationError("truncated PGM header")
        out.append(data[start:pos])
    return out, pos


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ConfigurationError(f"{path}: not a PGM file")
    (w, h, mx), pos = _pgm_tokens(data, 3, 2)
    w, h, mx = int(w), int(h), int(mx)
    if not 0 < mx < 65536:
        raise ConfigurationError(f"{path}: bad maxval {mx}")
    if magic == b"P2":
        vals = np.array(data[pos:].split()[:w * h], dtype=float)
    else:
        pos += 1  # single whitespace byte after maxval
        dt = np.dtype(">u2") if mx > 255 else np.dtype("u1")
        vals = np.frombuffer(data, dtype=dt, count=w * h, offset=pos).astype(float)
    if vals.size != w * h:
        raise ConfigurationError(f"{path}: expected {w * h} samples, found {vals.size}")
    return vals.reshape(h, w) / mx


def write_pgm(path, image, bits: int = 8, binary: bool = True):
    """Write values in ``[0, 1]`` (clamped) as an 8- or 16-bit PGM."""
    mx = 255 if bits == 8 else 65535
    q = np.rint(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * mx).astype(np.int64)
    h, w = q.shape
    with open(path, "wb") as fh:
        if binary:
            fh.write(b"P5\n%d %d\n%d\n" % (w, h, mx))
            fh.write(q.astype(">u2" if mx > 255 else "u1").tobytes())
        else:
            fh.write(b"P2\n%d %d\n%d\n" % (w, h, mx))
            for row in q:
                fh.write((" ".join(map(str, row)) + "\n").encode())


def read_png(path) -> np.ndarray:
    from PIL import Image
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=float)
            return arr / 65535.0
        return np.asarray(im.convert("L"), dtype=float) / 255.0


def write_png(path, image, bits: int = 8):
    from PIL import Image
    v = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if bits == 16:
        Image.fromarray(np.rint(v * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.rint(v * 255).astype(np.uint8), mode="L").save(path)


def read_image(path) -> np.ndarray:
    ext = os.path.splitext(str(path))[1].lower()
    if not os.path.exists(path):
        raise ConfigurationError(f"image not found: {path}")
    if ext in (".pgm", ".pnm"):
        return read_pgm(path)
    if ext == ".png":
        return read_png(path)
    raise ConfigurationError(f"unsupported image format {ext!r} (use .pgm or .png)")


def write_image(path, image):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".png":
        write_png(path, image)
    elif ext in (".pgm", ".pnm"):
        write_pgm(path, image)
    else:
        raise ConfigurationError(f"unsupported image format {ext!r}")


# --------------------------------------------------------------------------
# flux arrays
# --------------------------------------------------------------------------

def write_flux(path, flux):
    f = np.ascontiguousarray(flux, dtype="<f8")
    h, w = f.shape
    with open(path, "wb") as fh:
        fh.write(FLUX_MAGIC + struct.pack("<II", w, h))
        fh.write(f.tobytes())


def read_flux(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:8] != FLUX_MAGIC:
            raise ConfigurationError(f"{path}: not a flux file")
        w, h = struct.unpack("<II", head[8:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != w * h:
        raise ConfigurationError(f"{path}: expected {w * h} values, found {data.size}")
    return data.reshape(h, w).astype(float)


# --------------------------------------------------------------------------
# OBJ
# --------------------------------------------------------------------------

def _boundary_loop(nx, ny):
    """Boundary vertex indices, counter-clockwise seen from +z."""
    bottom = [i for i in range(nx)]
    right = [j * nx + nx - 1 for j in range(1, ny)]
    top = [(ny - 1) * nx + i for i in range(nx - 2, -1, -1)]
    left = [j * nx for j in range(ny - 2, 0, -1)]
    return bottom + right + top + left


def write_obj(path, mesh: HeightFieldMesh, front_z: float = None, thickness: float = 1.0):
    """Write the lens as OBJ groups ``back``, ``front`` and ``sides``.

    The back group is the optimized surface in grid order. The front group
    repeats the grid on the flat entry plane: at the incoming points for a
    point-light mesh, at the back surface's x-y positions otherwise. When
    ``front_z`` is None the plane sits ``thickness`` below the lowest back
    vertex (parallel light) or at z = 0 (point light).
    """
    V = mesh.vertices
    n = len(V)
    if mesh.front_params is not None:
        fz = 0.0 if front_z is None else front_z
        Fv = np.column_stack([mesh.front_params[:, :2], np.full(n, fz)])
    else:
        fz = V[:, 2].min() - thickness if front_z is None else front_z
        Fv = np.column_stack([V[:, :2], np.full(n, fz)])
    F = mesh.faces
    loop = _boundary_loop(mesh.nx, mesh.ny)
    with open(path, "w", newline="\n") as fh:
        fh.write("# causticlens lens surface\n")
        fh.write("# axes: x, y span the lens aperture; light travels along +z\n")
        fh.write(f"# grid {mesh.nx} {mesh.ny} {mesh.width!r} {mesh.height!r}\n")
        fh.write(f"# point_light {int(mesh.front_params is not None)}\n")
        for v in V:
            fh.write("v %.17g %.17g %.17g\n" % tuple(v))
        for v in Fv:
            fh.write("v %.17g %.17g %.17g\n" % tuple(v))
        fh.write("g back\n")
        for f in F + 1:
            fh.write("f %d %d %d\n" % tuple(f))
        fh.write("g front\n")
        for f in F + 1 + n:
            fh.write("f %d %d %d\n" % (f[0], f[2], f[1]))  # faces down, away from the glass
        fh.write("g sides\n")
        for a, b in zip(loop, loop[1:] + loop[:1]):
            a1, b1 = a + 1, b + 1
            fh.write("f %d %d %d\n" % (a1, a1 + n, b1 + n))
            fh.write("f %d %d %d\n" % (a1, b1 + n, b1))


def read_obj(path) -> HeightFieldMesh:
    """Load a lens written by :func:`write_obj`."""
    grid = None
    point = False
    verts = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# grid"):
                p = line.split()
                grid = (int(p[2]), int(p[3]), float(p[4]), float(p[5]))
            elif line.startswith("# point_light"):
                point = line.split()[2] == "1"
            elif line.startswith("v "):
                verts.append([float(t) for t in line.split()[1:4]])
    if grid is None:
        raise ConfigurationError(f"{path}: missing '# grid' header, not a causticlens OBJ")
    nx, ny, W, H = grid
    V = np.asarray(verts, dtype=float)
    n = nx * ny
    if len(V) < n:
        raise ConfigurationError(f"{path}: expected at least {n} vertices, found {len(V)}")
    back = V[:n]
    fp = None
    if point:
        if len(V) < 2 * n:
            raise ConfigurationError(f"{path}: point-light OBJ lacks its front grid")
        fp = np.column_stack([V[n:2 * n, :2], back[:, 2]])
    return HeightFieldMesh(nx, ny, back, W, H, front_params=fp)


# --------------------------------------------------------------------------
# SVG
# --------------------------------------------------------------------------

def write_partition_svg(path, partition, density_flux=None, scale: float = None):
    """Draw power cells (and optionally the target density as gray cells)."""
    x0, y0, x1, y1 = partition.region
    W, H = x1 - x0, y1 - y0
    s = scale if scale is not None else 512.0 / max(W, H)

    def pt(p):
        # image row r covers y in [r dy, (r + 1) dy], drawn top-down like the PNG renders
        return "%.4f,%.4f" % ((p[0] - x0) * s, (p[1] - y0) * s)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W * s:.1f}" height="{H * s:.1f}">']
    if density_flux is not None:
        f = np.asarray(density_flux, dtype=float)
        nh, nw = f.shape
        top = f.max() if f.max() > 0 else 1.0
        dx, dy = W / nw * s, H / nh * s
        for r in range(nh):
            for c in range(nw):
                g = int(round(255 * f[r, c] / top))
                out.append(f'<rect x="{c * dx:.4f}" y="{r * dy:.4f}" width="{dx:.4f}" '
                           f'height="{dy:.4f}" fill="rgb({g},{g},{g})"/>')
    for i in range(len(partition)):
        c = partition.cell(i)
        if len(c) >= 3:
            out.append('<polygon points="%s" fill="none" stroke="red" stroke-width="0.5"/>'
                       % " ".join(pt(p) for p in c))
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
