"""Smooth synthetic inputs: diffuse-shaded ellipsoid images and videos under a
moving point light, rotated-template image sets, and linear noise-trajectory
videos whose per-pixel series are exactly affine in time.
"""

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from nslab.errors import FormatError, ShapeError
from nslab.idx import load_idx_images
from nslab.rng import derive_rng


@dataclass(frozen=True)
class EllipsoidSpec:
    """Half ellipsoid (x/a)^2 + (y/b)^2 + (z/c)^2 = 1, z > 0, rendered
    orthographically on an R x R grid covering [-window, window]^2."""

    a: float = 2.5
    b: float = 4.0
    c: float = 1.0
    resolution: int = 28
    window: float = 4.5

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError(f"semi-axes must be positive, got {(self.a, self.b, self.c)}")
        if self.resolution < 1 or self.window <= 0:
            raise ValueError("resolution and window must be positive")

    def pixel_centers(self) -> np.ndarray:
        """1-D world coordinates of pixel centers along one axis."""
        r, w = self.resolution, self.window
        return -w + (np.arange(r) + 0.5) * (2.0 * w / r)


@dataclass(frozen=True)
class LightPath:
    """Linear light motion at constant height z=20, advancing a fixed step
    (world units) per frame; the final frame lands exactly on the end point."""

    start: tuple
    end: tuple
    step: float = 0.1
    n_frames: int | None = None  # override for degenerate (zero-length) paths

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")

    def length(self) -> float:
        return math.dist(self.start, self.end)

    def positions(self) -> np.ndarray:
        """(T, 3) light positions. Frame count derives from length/step unless
        n_frames overrides it."""
        length = self.length()
        if self.n_frames is not None:
            if self.n_frames < 1:
                raise ValueError("n_frames must be >= 1")
            ts = np.linspace(0.0, 1.0, self.n_frames)
        elif length == 0.0:
            raise ValueError("zero-length light path; pass n_frames explicitly")
        else:
            n_steps = math.ceil(length / self.step)
            dist = np.minimum(np.arange(n_steps + 1) * self.step, length)
            ts = dist / length
        start = np.asarray(self.start, dtype=np.float64)
        end = np.asarray(self.end, dtype=np.float64)
        return start[None, :] + ts[:, None] * (end - start)[None, :]


@dataclass
class VideoSequence:
    """Ordered single-channel frames (T, H, W) with a uniform frame period."""

    frames: np.ndarray
    delta: float = 1.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ShapeError(f"frames must be (T, H, W), got {self.frames.shape}")
        if self.delta <= 0:
            raise ValueError("frame period must be positive")

    def __len__(self):
        return self.frames.shape[0]

    def save(self, directory) -> None:
        """Raw little-endian float64 frame dumps plus a text manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        t, h, w = self.frames.shape
        manifest = (
            f"count={t}\nheight={h}\nwidth={w}\ndelta={self.delta!r}\n"
        )
        (directory / "manifest.txt").write_text(manifest)
        for i in range(t):
            frame = np.ascontiguousarray(self.frames[i], dtype="<f8")
            (directory / f"frame_{i:06d}.f64").write_bytes(frame.tobytes())

    @staticmethod
    def load(directory) -> "VideoSequence":
        directory = Path(directory)
        manifest_path = directory / "manifest.txt"
        if not manifest_path.is_file():
            raise FormatError(f"no video manifest in {directory}", 0)
        fields = dict(
            re.fullmatch(r"(\w+)=(.*)", line).groups()
            for line in manifest_path.read_text().splitlines()
            if line
        )
        t, h, w = int(fields["count"]), int(fields["height"]), int(fields["width"])
        frames = np.empty((t, h, w))
        for i in range(t):
            raw = (directory / f"frame_{i:06d}.f64").read_bytes()
            if len(raw) != 8 * h * w:
                raise FormatError(f"frame {i} has {len(raw)} bytes, expected {8*h*w}", 0)
            frames[i] = np.frombuffer(raw, dtype="<f8").reshape(h, w)
        return VideoSequence(frames, delta=float(fields["delta"]))


def ellipsoid_intensity(light, x, y, spec: EllipsoidSpec) -> np.ndarray:
    """Diffuse intensity max(v.n, 0) at world points (x, y) on the upper half
    ellipsoid; 0 outside its footprint. light is (lx, ly, lz), lz > 0."""
    lx, ly, lz = (float(v) for v in light)
    if lz <= 0:
        raise ValueError("light must sit above the xy-plane")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    foot = (x / spec.a) ** 2 + (y / spec.b) ** 2
    inside = foot <= 1.0
    z = spec.c * np.sqrt(np.maximum(1.0 - foot, 0.0))
    # outward normal direction: gradient of the implicit surface
    nx, ny, nz = x / spec.a**2, y / spec.b**2, z / spec.c**2
    n_norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    vx, vy, vz = lx - x, ly - y, lz - z
    v_norm = np.sqrt(vx * vx + vy * vy + vz * vz)
    with np.errstate(invalid="ignore", divide="ignore"):
        dot = (vx * nx + vy * ny + vz * nz) / (n_norm * v_norm)
    return np.where(inside, np.clip(dot, 0.0, 1.0), 0.0)


def render_ellipsoid_frame(light, spec: EllipsoidSpec = EllipsoidSpec()) -> np.ndarray:
    """Orthographic render of the lit ellipsoid on the spec's pixel grid.
    Row index maps to y, column index to x, both ascending."""
    coords = spec.pixel_centers()
    xs, ys = np.meshgrid(coords, coords, indexing="xy")
    return ellipsoid_intensity(light, xs, ys, spec)


def generate_ellipsoid_dataset(
    n: int, seed: int, spec: EllipsoidSpec = EllipsoidSpec(),
    coord_range: float = 10.0, light_z: float = 20.0, stream: str = "train",
) -> np.ndarray:
    """n rendered frames with light (x_i, y_i, light_z), x_i, y_i iid uniform
    on (-coord_range, coord_range)."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = derive_rng(seed, "ellipsoid-lights", stream)
    coords = rng.uniform(-coord_range, coord_range, size=(n, 2))
    frames = np.empty((n, spec.resolution, spec.resolution))
    for i, (x, y) in enumerate(coords):
        frames[i] = render_ellipsoid_frame((x, y, light_z), spec)
    return frames


def generate_light_path_video(
    path: LightPath, spec: EllipsoidSpec = EllipsoidSpec()
) -> VideoSequence:
    """Render the ellipsoid for each light position along the path."""
    positions = path.positions()
    frames = np.empty((positions.shape[0], spec.resolution, spec.resolution))
    for i, pos in enumerate(positions):
        frames[i] = render_ellipsoid_frame(pos, spec)
    return VideoSequence(frames)


def random_light_path(seed: int, index: int, step: float = 0.1,
                      coord_range: float = 10.0, light_z: float = 20.0) -> LightPath:
    """Random start/end in the light plane, iid uniform per coordinate.
    Degenerate draws are rejected so the video always has >= 3 frames."""
    rng = derive_rng(seed, "light-path", index)
    min_length = max(2.0 * step, 1e-3 * coord_range)
    while True:
        sx, sy, ex, ey = rng.uniform(-coord_range, coord_range, size=4)
        path = LightPath((sx, sy, light_z), (ex, ey, light_z), step=step)
        if path.length() >= min_length:
            return path


def rotate_image(img, angle: float) -> np.ndarray:
    """Bilinear rotation about the image center; out-of-bounds reads are 0.
    Angles are taken modulo 360 into (-180, 180]."""
    angle = math.remainder(float(angle), 360.0)
    img = np.asarray(img, dtype=np.float64)
    if angle == 0.0:
        return img.copy()
    return ndimage.rotate(
        img, angle, reshape=False, order=1, mode="constant", cval=0.0, prefilter=False
    )


def generate_rotation_dataset(templates, angles_per_template: int, seed: int,
                              stream: str = "train") -> np.ndarray:
    """Each template rotated by iid U(-30, 30) degree angles."""
    templates = np.asarray(templates, dtype=np.float64)
    rng = derive_rng(seed, "rotation-angles", stream)
    out = np.empty(
        (templates.shape[0] * angles_per_template, *templates.shape[1:])
    )
    k = 0
    for template in templates:
        for angle in rng.uniform(-30.0, 30.0, size=angles_per_template):
            out[k] = rotate_image(template, angle)
            k += 1
    return out


NOISE_FRAME_COUNT = 100


def noise_alpha(t) -> np.ndarray:
    """Mixing weight 1e-2 * (0.02 t - 1) for frame times t = 1..100."""
    return 1e-2 * (0.02 * np.asarray(t, dtype=np.float64) - 1.0)


def generate_noise_trajectory_video(template, seed: int,
                                    n_frames: int = NOISE_FRAME_COUNT,
                                    stream: int = 0) -> VideoSequence:
    """template + alpha(t) * noise for t = 1..n_frames, noise pixels iid
    standard normal. Every pixel series is affine in t, so its second-order
    difference is identically zero; frames are deliberately not clipped."""
    template = np.asarray(template, dtype=np.float64)
    noise = derive_rng(seed, "trajectory-noise", stream).standard_normal(template.shape)
    ts = np.arange(1, n_frames + 1)
    frames = template[None, :, :] + noise_alpha(ts)[:, None, None] * noise[None, :, :]
    return VideoSequence(frames)


def digit_template(seed: int, resolution: int = 28) -> np.ndarray:
    """Procedural digit-7-like image: two anti-aliased strokes with jittered
    endpoints, used when no IDX template file is supplied."""
    rng = derive_rng(seed, "digit-template")
    j = rng.uniform(-1.5, 1.5, size=8)
    scale = resolution / 28.0
    top = ((5 + j[0]) * scale, (5 + j[1]) * scale, (6 + j[2]) * scale, (22 + j[3]) * scale)
    diag = (top[2], top[3], (24 + j[4]) * scale, (11 + j[5]) * scale)
    rows, cols = np.mgrid[0:resolution, 0:resolution].astype(np.float64)

    def stroke(r0, c0, r1, c1):
        dr, dc = r1 - r0, c1 - c0
        seg_len2 = dr * dr + dc * dc
        t = np.clip(((rows - r0) * dr + (cols - c0) * dc) / seg_len2, 0.0, 1.0)
        dist = np.hypot(rows - (r0 + t * dr), cols - (c0 + t * dc))
        half, aa = 0.9 * scale, 1.0 * scale
        return np.clip((half + aa - dist) / aa, 0.0, 1.0)

    return np.maximum(stroke(*top), stroke(*diag))


def load_templates(idx_path, labels_path, digit: int | None, count: int | None,
                   seed: int, resolution: int = 28) -> np.ndarray:
    """Template images from an IDX file, or procedural digit-7 fallbacks when
    no file is configured."""
    if idx_path:
        images = load_idx_images(idx_path, labels_path or None, digit)
        return images if count is None else images[:count]
    n = count if count else 1
    return np.stack([digit_template(seed + i, resolution) for i in range(n)])
