"""Free-space acoustic field synthesis for small transducer arrays.

Elements are monopoles summed as ``p(r) = sum_j w_j exp(i(k R_j + phi_j)) / R_j``
with an optional far-field circular-piston directivity multiplier per
element.  A binary aperture mask models blockage by the shield's spiral
structure: elements whose (x, y) falls outside the central opening are
attenuated by a fixed number of dB.  On top of the field solver sit a
plane-wave quality metric (RMS phase deviation across the aperture), a
layout ranking, and the transmitter parameter-sweep table utilities.

Field evaluation is a pure map over grid points; disjoint point subsets
may be evaluated concurrently and merged by index.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import j1

SPEED_OF_SOUND_MPS = 343.0

#: Default attenuation applied to elements blocked by the spiral structure.
DEFAULT_BLOCKED_ATTENUATION_DB = 40.0

#: Ranking metrics are rounded to this many decimals before sorting so that
#: physically degenerate layouts (e.g. 90-degree rotations of each other)
#: tie exactly and fall through to the name tie-break.
_RANK_DECIMALS = 9


@dataclass
class ArrayLayout:
    """Transducer positions (meters) with per-element weights and phases."""

    name: str
    elements: np.ndarray  # (n, 3) positions in m
    element_radius_m: float = 0.0
    amplitude_weights: np.ndarray | None = None
    phase_offsets_rad: np.ndarray | None = None

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=np.float64).reshape(-1, 3)
        n = self.elements.shape[0]
        if n == 0:
            raise ValueError("layout needs at least one element")
        if self.amplitude_weights is None:
            self.amplitude_weights = np.ones(n)
        if self.phase_offsets_rad is None:
            self.phase_offsets_rad = np.zeros(n)
        self.amplitude_weights = np.asarray(self.amplitude_weights, dtype=np.float64)
        self.phase_offsets_rad = np.asarray(self.phase_offsets_rad, dtype=np.float64)
        if self.amplitude_weights.shape != (n,) or self.phase_offsets_rad.shape != (n,):
            raise ValueError("weights/phases must match element count")
        if self.element_radius_m < 0:
            raise ValueError("element_radius_m must be >= 0")
        if self.element_radius_m > 0 and n > 1:
            deltas = self.elements[:, None, :] - self.elements[None, :, :]
            dist = np.sqrt(np.sum(deltas ** 2, axis=-1))
            dist[np.diag_indices(n)] = np.inf
            closest = float(dist.min())
            if closest < 2.0 * self.element_radius_m - 1e-12:
                raise ValueError(
                    f"layout {self.name!r}: elements overlap (min spacing {closest * 1e3:.3f} mm "
                    f"< diameter {2e3 * self.element_radius_m:.3f} mm)")

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def translated(self, dx: float, dy: float, dz: float = 0.0, name: str | None = None) -> "ArrayLayout":
        return ArrayLayout(name or self.name, self.elements + np.array([dx, dy, dz]),
                           self.element_radius_m, self.amplitude_weights.copy(),
                           self.phase_offsets_rad.copy())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "elements_mm": (self.elements * 1e3).tolist(),
            "element_radius_mm": self.element_radius_m * 1e3,
            "weights": self.amplitude_weights.tolist(),
            "phases_rad": self.phase_offsets_rad.tolist(),
        }


def load_layout_json(path) -> ArrayLayout:
    """Load a layout file: name, element positions in mm, weights, phases."""
    with open(path) as fh:
        data = json.load(fh)
    unknown = set(data) - {"name", "elements_mm", "element_radius_mm", "weights", "phases_rad"}
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    elements = np.asarray(data["elements_mm"], dtype=np.float64) * 1e-3
    return ArrayLayout(
        name=data.get("name", "layout"),
        elements=elements,
        element_radius_m=float(data.get("element_radius_mm", 0.0)) * 1e-3,
        amplitude_weights=np.asarray(data["weights"], dtype=np.float64) if "weights" in data else None,
        phase_offsets_rad=np.asarray(data["phases_rad"], dtype=np.float64) if "phases_rad" in data else None,
    )


def save_layout_json(path, layout: ArrayLayout) -> None:
    with open(path, "w") as fh:
        json.dump(layout.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class FieldGrid:
    """Complex relative pressure sampled at arbitrary points."""

    points: np.ndarray  # (n, 3) m
    pressure: np.ndarray  # (n,) complex

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.pressure = np.asarray(self.pressure, dtype=np.complex128).reshape(-1)
        if self.points.shape[0] != self.pressure.shape[0]:
            raise ValueError("points and pressure lengths differ")
        if not np.all(np.isfinite(self.pressure)):
            raise ValueError("pressure values must be finite")


@dataclass(frozen=True)
class ObstructionMask:
    """Binary aperture: elements outside the open disk are attenuated."""

    open_disk_center: tuple = (0.0, 0.0)
    open_disk_diameter_m: float = 0.0225
    blocked_attenuation_db: float = DEFAULT_BLOCKED_ATTENUATION_DB

    def __post_init__(self):
        if self.open_disk_diameter_m <= 0:
            raise ValueError("open disk diameter must be > 0")
        if self.blocked_attenuation_db < 0:
            raise ValueError("blocked attenuation must be >= 0 dB")

    def element_gains(self, elements: np.ndarray) -> np.ndarray:
        cx, cy = self.open_disk_center
        r2 = (elements[:, 0] - cx) ** 2 + (elements[:, 1] - cy) ** 2
        inside = r2 <= (self.open_disk_diameter_m / 2.0) ** 2 + 1e-15
        gains = np.where(inside, 1.0, 10.0 ** (-self.blocked_attenuation_db / 20.0))
        return gains


def array_field(layout: ArrayLayout, f: float, grid_points,
                mask: ObstructionMask | None = None,
                c: float = SPEED_OF_SOUND_MPS,
                element_ka: float | None = None) -> FieldGrid:
    """Sum monopole contributions over a point set.

    Parameters
    ----------
    layout : ArrayLayout
    f : float
        Frequency in Hz; the wavenumber is ``k = 2*pi*f/c``.
    grid_points : array_like (n, 3)
        Evaluation points in meters; none may coincide with an element.
    mask : ObstructionMask, optional
        Applies the blocked-element attenuation.
    element_ka : float, optional
        When given, each element radiates with the far-field circular-piston
        pattern of this ``ka`` about the +z axis instead of omnidirectionally.
    """
    if f <= 0:
        raise ValueError(f"frequency must be > 0, got {f:g}")
    pts = np.asarray(grid_points, dtype=np.float64).reshape(-1, 3)
    k = 2.0 * np.pi * f / c
    deltas = pts[:, None, :] - layout.elements[None, :, :]  # (npts, nelem, 3)
    dist = np.sqrt(np.sum(deltas ** 2, axis=-1))
    coincident = np.argwhere(dist < 1e-12)
    if coincident.size:
        pt_i, el_j = coincident[0]
        raise ValueError(
            f"grid point {int(pt_i)} coincides with element {int(el_j)} of layout {layout.name!r}")
    weights = layout.amplitude_weights.copy()
    if mask is not None:
        weights = weights * mask.element_gains(layout.elements)
    phases = k * dist + layout.phase_offsets_rad[None, :]
    contrib = weights[None, :] * np.exp(1j * phases) / dist
    if element_ka is not None:
        sin_theta = np.sqrt(deltas[:, :, 0] ** 2 + deltas[:, :, 1] ** 2) / dist
        contrib = contrib * piston_directivity(element_ka, np.arcsin(np.clip(sin_theta, 0.0, 1.0)))
    return FieldGrid(pts, np.sum(contrib, axis=1))


def piston_directivity(ka: float, theta_rad):
    """Far-field circular-piston pattern ``|2 J1(ka sin t) / (ka sin t)|``.

    Returns 1 at ``theta = 0`` (the removable singularity is evaluated by
    series) and for ``ka -> 0``; values always lie in [0, 1].  Accepts
    scalar or array ``theta_rad``.
    """
    if ka < 0:
        raise ValueError("ka must be >= 0")
    theta = np.asarray(theta_rad, dtype=np.float64)
    x = ka * np.sin(theta)
    ax = np.abs(x)
    out = np.empty_like(ax)
    small = ax < 1e-6
    # 2 J1(x)/x = 1 - x^2/8 + x^4/192 - ...
    out[small] = 1.0 - ax[small] ** 2 / 8.0
    xs = ax[~small]
    out[~small] = np.abs(2.0 * j1(xs) / xs)
    result = np.clip(out, 0.0, 1.0)
    return float(result) if np.isscalar(theta_rad) else result


def planarity(grid: FieldGrid, aperture_diameter_m: float,
              center: tuple | None = None) -> float:
    """RMS deviation of the field's phase from its best-fit constant.

    All points must lie on a single plane (checked to 1e-9 m); the metric
    is evaluated over points inside the aperture disk (center defaults to
    the in-plane centroid of the point set).  Phases are measured relative
    to the circular-mean phasor, then re-centered on their arithmetic
    mean, which equals deviation from the best-fit constant provided the
    spread stays within one branch (< pi).  Zero for an ideal plane wave.
    The result is invariant under a global phase rotation and under rigid
    rotation of the points about the aperture normal.
    """
    pts = grid.points
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 points to define the aperture plane")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    # Plane check: residual along the smallest principal direction.
    _, svals, vecs = np.linalg.svd(centered, full_matrices=False)
    normal = vecs[-1]
    residual = float(np.max(np.abs(centered @ normal)))
    if residual > 1e-9:
        raise ValueError(f"points are not coplanar (residual {residual:.3e} m)")
    if center is None:
        in_plane_center = centroid
    else:
        in_plane_center = np.asarray(center, dtype=np.float64)
    offsets = pts - in_plane_center
    offsets -= np.outer(offsets @ normal, normal)
    radius2 = np.sum(offsets ** 2, axis=1)
    inside = radius2 <= (aperture_diameter_m / 2.0) ** 2 + 1e-15
    if int(np.sum(inside)) < 16:
        raise ValueError(f"only {int(np.sum(inside))} points inside the aperture; need >= 16")
    p = grid.pressure[inside]
    mags = np.abs(p)
    if np.any(mags == 0):
        raise ValueError("zero pressure inside aperture; phase undefined")
    mean_phasor = np.sum(p / mags)
    if np.abs(mean_phasor) == 0:
        raise ValueError("degenerate field: phases cancel completely")
    dev = np.angle(p * np.conj(mean_phasor / np.abs(mean_phasor)))
    dev = dev - np.mean(dev)
    return float(np.sqrt(np.mean(dev ** 2)))


def aperture_sample_points(center_xy: tuple, diameter_m: float, z_m: float,
                           n_across: int = 11) -> np.ndarray:
    """Deterministic Cartesian lattice covering the aperture disk at plane z."""
    cx, cy = center_xy
    half = diameter_m / 2.0
    axis = np.linspace(-half, half, n_across)
    xs, ys = np.meshgrid(axis, axis)
    keep = xs ** 2 + ys ** 2 <= half ** 2 + 1e-15
    pts = np.column_stack([xs[keep] + cx, ys[keep] + cy, np.full(int(keep.sum()), z_m)])
    return pts


@dataclass(frozen=True)
class RankedLayout:
    name: str
    on_axis_spl_db: float
    planarity_rad: float


def rank_layouts(layouts, f: float, range_r_m: float,
                 mask: ObstructionMask,
                 n_across: int = 11) -> list[RankedLayout]:
    """Order layouts by plane-wave quality across the shield opening.

    Each layout's field is sampled on a lattice spanning the mask's open
    disk at distance ``range_r_m`` from the array plane.  Layouts are
    sorted by planarity ascending, then on-axis SPL descending, with a
    deterministic name tie-break (metrics are rounded to 1e-9 first so
    that rotation-degenerate layouts tie exactly).  The result is always
    a permutation of the input.
    """
    layouts = list(layouts)
    if len(layouts) < 2:
        raise ValueError("need at least two layouts to rank")
    pts = aperture_sample_points(mask.open_disk_center, mask.open_disk_diameter_m,
                                 range_r_m, n_across)
    axis_pt = np.array([[mask.open_disk_center[0], mask.open_disk_center[1], range_r_m]])
    rows = []
    for layout in layouts:
        grid = array_field(layout, f, pts, mask=mask)
        flatness = planarity(grid, mask.open_disk_diameter_m,
                             center=(mask.open_disk_center[0], mask.open_disk_center[1], range_r_m))
        on_axis = array_field(layout, f, axis_pt, mask=mask)
        spl = 20.0 * math.log10(max(float(np.abs(on_axis.pressure[0])), 1e-300))
        rows.append(RankedLayout(layout.name,
                                 round(spl, _RANK_DECIMALS),
                                 round(flatness, _RANK_DECIMALS)))
    rows.sort(key=lambda r: (r.planarity_rad, -r.on_axis_spl_db, r.name))
    return rows


# --- shipped layouts ------------------------------------------------------

#: Element pitch used by the shipped 12-element layouts.  The physical
#: module footprint (120 mm x 14 mm) cannot fit inside the 22.5 mm shield
#: opening, so shipped coordinates scale the pitch down until the preferred
#: two-row arrangement sits well inside it; the nominal footprint is kept in
#: :class:`~metasonic.acoustics.ShieldGeometry` for reporting.
LAYOUT_PITCH_M = 0.003
LAYOUT_ELEMENT_RADIUS_M = 0.0015


def _grid_layout(name: str, rows: int, cols: int,
                 pitch: float = LAYOUT_PITCH_M) -> ArrayLayout:
    xs = (np.arange(cols) - (cols - 1) / 2.0) * pitch
    ys = (np.arange(rows) - (rows - 1) / 2.0) * pitch
    elements = [(x, y, 0.0) for y in ys for x in xs]
    return ArrayLayout(name, np.array(elements), LAYOUT_ELEMENT_RADIUS_M)


def _ring_layout(name: str, n: int, radius: float) -> ArrayLayout:
    angles = 2.0 * np.pi * np.arange(n) / n
    elements = np.column_stack([radius * np.cos(angles), radius * np.sin(angles),
                                np.zeros(n)])
    return ArrayLayout(name, elements, LAYOUT_ELEMENT_RADIUS_M)


def builtin_layouts() -> list[ArrayLayout]:
    """The six shipped 12-element candidate layouts."""
    return [
        _grid_layout("grid_2x6", 2, 6),
        _grid_layout("grid_3x4", 3, 4),
        _grid_layout("grid_4x3", 4, 3),
        _grid_layout("grid_6x2", 6, 2),
        _grid_layout("line_1x12", 1, 12),
        _ring_layout("circle_12", 12, 0.008),
    ]


def default_mask() -> ObstructionMask:
    return ObstructionMask(open_disk_center=(0.0, 0.0), open_disk_diameter_m=0.0225,
                           blocked_attenuation_db=DEFAULT_BLOCKED_ATTENUATION_DB)


# --- transmitter parameter sweep ------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    n_speakers: int
    range_mm: float
    carrier_hz: float
    max_spl_db: float


#: Bundled sweep of transmitter configurations: element count, optimal
#: array-to-opening range, carrier, and the peak level each achieves.
DEFAULT_ENHANCEMENT_TABLE = (
    SweepRow(2, 22.0, 40_500.0, 128.0),
    SweepRow(4, 14.0, 40_000.0, 130.0),
    SweepRow(6, 14.0, 40_000.0, 134.0),
    SweepRow(8, 11.0, 39_500.0, 135.0),
    SweepRow(10, 15.0, 40_500.0, 138.0),
    SweepRow(12, 18.0, 40_200.0, 142.0),
    SweepRow(14, 18.0, 40_200.0, 142.0),
    SweepRow(16, 18.0, 40_200.0, 142.0),
)


def sweep_parameters(table) -> SweepRow:
    """Pick the best transmitter configuration from a sweep table.

    Maximizes peak SPL; ties break toward fewer speakers (compactness),
    then lower carrier frequency.  Rows must be unique in speaker count.
    """
    rows = [r if isinstance(r, SweepRow) else SweepRow(int(r[0]), float(r[1]), float(r[2]), float(r[3]))
            for r in table]
    if not rows:
        raise ValueError("sweep table is empty")
    counts = [r.n_speakers for r in rows]
    if len(set(counts)) != len(counts):
        raise ValueError("sweep table rows must be unique in n_speakers")
    return min(rows, key=lambda r: (-r.max_spl_db, r.n_speakers, r.carrier_hz))


def load_sweep_table_csv(path) -> list[SweepRow]:
    """Read a sweep table CSV with header ``n_speakers,range_mm,carrier_hz,max_spl_db``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["n_speakers", "range_mm", "carrier_hz", "max_spl_db"]
        if header is None or [h.strip() for h in header] != expected:
            raise ValueError(f"{path}: expected header {','.join(expected)}, got {header}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{i}: expected four columns")
            rows.append(SweepRow(int(row[0]), float(row[1]), float(row[2]), float(row[3])))
    return rows


def field_to_csv(path, grid: FieldGrid) -> None:
    """Export a field as ``x_mm,y_mm,z_mm,re,im,magnitude_db`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_mm", "y_mm", "z_mm", "re", "im", "magnitude_db"])
        for pt, p in zip(grid.points, grid.pressure):
            mag_db = 20.0 * math.log10(max(abs(p), 1e-300))
            writer.writerow([f"{pt[0] * 1e3:.6f}", f"{pt[1] * 1e3:.6f}", f"{pt[2] * 1e3:.6f}",
                             f"{p.real:.9e}", f"{p.imag:.9e}", f"{mag_db:.6f}"])
