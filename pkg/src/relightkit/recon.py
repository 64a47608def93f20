"""Digital-twin reconstruction: SDF fitting from range data, albedo baking.

fit_sdf performs plain gradient descent on the grid node values with
three terms: squared depth error at the first zero crossing along each
observed ray (differentiated through the crossing with the implicit
function theorem), an eikonal penalty pulling interior gradients to unit
norm, and a hinge pushing the field above a margin at points sampled in
observed free space.  Everything is single-threaded numpy with fixed
accumulation order, so a given input always produces the same grid.

bake_vertex_albedo projects mesh vertices into posed linear-RGB images
and averages the bilinear samples from every camera that actually sees
the vertex (inside the frame and unoccluded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from relightkit.camera import CameraModel
from relightkit.errors import FileFormatError, PreconditionError, RelightKitError
from relightkit.geometry import Ray, SdfGrid, TriangleMesh, occluded, sample_sdf

_CORNER_OFFSETS = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
     [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=np.int64)

_SLOPE_FLOOR = 0.05      # |grad . dir| clamp in the depth-term chain rule
_UNSEEN_ALBEDO = 0.5


@dataclass(frozen=True)
class RangeSample:
    """One range observation: a ray and its measured depth (inf = sky)."""

    ray: Ray
    depth: float

    def __post_init__(self):
        d = np.asarray(self.ray.direction, dtype=np.float64)
        norm = float(np.linalg.norm(d))
        if norm < 1e-12:
            raise PreconditionError("range sample has a zero direction")
        object.__setattr__(self, "ray",
                           Ray(np.asarray(self.ray.origin, dtype=np.float64),
                               d / norm))
        if math.isnan(self.depth) or self.depth <= 0.0:
            raise PreconditionError("depth must be positive (inf for sky)")

    @property
    def is_sky(self) -> bool:
        return math.isinf(self.depth)

    @property
    def hit_point(self) -> np.ndarray:
        if self.is_sky:
            raise PreconditionError("sky sample has no hit point")
        return self.ray.origin + self.depth * self.ray.direction


@dataclass(frozen=True)
class ReconConfig:
    """Weights and schedule for fit_sdf."""

    lambda_lidar: float = 1.0
    lambda_eikonal: float = 0.1
    lambda_freespace: float = 0.1
    iterations: int = 24
    step_size: float = 1.0
    margin: float = 0.1
    freespace_samples: int = 8

    def __post_init__(self):
        if min(self.lambda_lidar, self.lambda_eikonal,
               self.lambda_freespace) < 0:
            raise PreconditionError("loss weights must be >= 0")
        if self.iterations < 0:
            raise PreconditionError("iterations must be >= 0")
        if self.step_size <= 0:
            raise PreconditionError("step_size must be positive")
        if self.margin < 0 or self.freespace_samples < 0:
            raise PreconditionError("margin and freespace_samples must be >= 0")


# ------------------------------------------------------------------ file I/O

def load_range_samples(path) -> list[RangeSample]:
    """Read `ox oy oz dx dy dz depth|sky` lines; # comments allowed."""
    samples = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise FileFormatError(
                    path, f"range sample needs 7 fields, got {len(parts)}",
                    line=lineno)
            try:
                nums = [float(p) for p in parts[:6]]
                depth = math.inf if parts[6] == "sky" else float(parts[6])
            except ValueError as exc:
                raise FileFormatError(path, f"bad number: {exc}",
                                      line=lineno) from None
            try:
                samples.append(RangeSample(Ray(nums[0:3], nums[3:6]), depth))
            except PreconditionError as exc:
                raise FileFormatError(path, str(exc), line=lineno) from None
    if not samples:
        raise FileFormatError(path, "no range samples found")
    return samples


def save_range_samples(path, samples: list[RangeSample]) -> None:
    with open(path, "w") as fh:
        fh.write("# ox oy oz dx dy dz depth|sky\n")
        for s in samples:
            o, d = s.ray.origin, s.ray.direction
            depth = "sky" if s.is_sky else f"{s.depth:.17g}"
            fh.write(" ".join(f"{v:.17g}" for v in (*o, *d)) + f" {depth}\n")


def write_loss_trace(path, rows) -> None:
    """CSV trace of raw (unweighted) per-term means per iteration."""
    with open(path, "w") as fh:
        fh.write("iter,loss_lidar,loss_eik,loss_free\n")
        for it, ll, le, lf in rows:
            fh.write(f"{it},{ll:.17g},{le:.17g},{lf:.17g}\n")


# --------------------------------------------------------- trilinear helpers

def _corner_weights(grid: SdfGrid, points: np.ndarray):
    """Flat node ids, weights, and weight gradients of the trilinear stencil.

    Returns (idx (n,8) into values.ravel(), w (n,8), gw (n,8,3)); gw is the
    spatial gradient of each corner weight, giving the exact in-cell
    gradient of the interpolant as sum_k v_k gw_k.
    """
    shape = np.array(grid.values.shape)
    cell = np.asarray(grid.cell_size)
    rel = (points - grid.bounds_min) / cell
    base = np.clip(np.floor(rel).astype(np.int64), 0, shape - 2)
    frac = np.clip(rel - base, 0.0, 1.0)

    corners = base[:, None, :] + _CORNER_OFFSETS[None, :, :]    # (n,8,3)
    idx = (corners[..., 0] * shape[1] + corners[..., 1]) * shape[2] \
        + corners[..., 2]
    # Per-axis factor: f when the corner offset is 1, (1-f) otherwise.
    off = _CORNER_OFFSETS[None, :, :]
    fac = np.where(off == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    w = fac[..., 0] * fac[..., 1] * fac[..., 2]
    sign = np.where(off == 1, 1.0, -1.0) / cell
    gw = np.empty(fac.shape)
    gw[..., 0] = sign[..., 0] * fac[..., 1] * fac[..., 2]
    gw[..., 1] = fac[..., 0] * sign[..., 1] * fac[..., 2]
    gw[..., 2] = fac[..., 0] * fac[..., 1] * sign[..., 2]
    return idx, w, gw


def _ray_grid_span(grid: SdfGrid, origins, dirs):
    """Per-ray [entry, exit] parameter window against the grid bounds."""
    safe = np.where(np.abs(dirs) > 1e-300, dirs, 1e-300)
    inv = 1.0 / safe
    t1 = (grid.bounds_min - origins) * inv
    t2 = (grid.bounds_max - origins) * inv
    lo = np.minimum(t1, t2).max(axis=1)
    hi = np.maximum(t1, t2).min(axis=1)
    return np.maximum(lo, 0.0), hi


def _trace_first_crossing(grid: SdfGrid, origins, dirs, t_start, t_stop,
                          min_step, max_steps: int = 512):
    """Batched sphere trace to the first s <= 0 crossing; inf when none."""
    n = origins.shape[0]
    t_hit = np.full(n, np.inf)
    idx = np.nonzero(t_stop > t_start)[0]
    if idx.size == 0:
        return t_hit
    t_cur = t_start[idx].copy()
    s_cur = sample_sdf(grid, origins[idx] + t_cur[:, None] * dirs[idx])
    inside = s_cur <= 0.0
    t_hit[idx[inside]] = t_cur[inside]
    keep = ~inside
    idx, t_cur, s_cur = idx[keep], t_cur[keep], s_cur[keep]

    bidx, bta, bsa, btb, bsb = [], [], [], [], []
    for _ in range(max_steps):
        if idx.size == 0:
            break
        stop = t_stop[idx]
        t_next = np.minimum(t_cur + np.maximum(s_cur, min_step), stop)
        s_next = sample_sdf(grid, origins[idx] + t_next[:, None] * dirs[idx])
        crossed = s_next <= 0.0
        if np.any(crossed):
            bidx.append(idx[crossed])
            bta.append(t_cur[crossed])
            bsa.append(s_cur[crossed])
            btb.append(t_next[crossed])
            bsb.append(s_next[crossed])
        live = ~crossed & (t_next < stop)
        idx, t_cur, s_cur = idx[live], t_next[live], s_next[live]

    if not bidx:
        return t_hit
    ridx = np.concatenate(bidx)
    ta, sa = np.concatenate(bta), np.concatenate(bsa)
    tb, sb = np.concatenate(btb), np.concatenate(bsb)
    o, d = origins[ridx], dirs[ridx]
    for _ in range(12):
        tm = ta + sa * (tb - ta) / np.maximum(sa - sb, 1e-300)
        sm = sample_sdf(grid, o + tm[:, None] * d)
        pos = sm > 0.0
        ta, sa = np.where(pos, tm, ta), np.where(pos, sm, sa)
        tb, sb = np.where(pos, tb, tm), np.where(pos, sb, sm)
    t_hit[ridx] = ta + sa * (tb - ta) / np.maximum(sa - sb, 1e-300)
    return t_hit


# ------------------------------------------------------------- loss pieces

def eikonal_penalty(grid: SdfGrid):
    """Mean (|grad s| - 1)^2 over interior nodes and its node gradient."""
    v = grid.values
    grad = np.zeros_like(v)
    if min(v.shape) < 3:
        return 0.0, grad
    hx, hy, hz = grid.cell_size
    c = (slice(1, -1),)
    gx = (v[2:, 1:-1, 1:-1] - v[:-2, 1:-1, 1:-1]) / (2.0 * hx)
    gy = (v[1:-1, 2:, 1:-1] - v[1:-1, :-2, 1:-1]) / (2.0 * hy)
    gz = (v[1:-1, 1:-1, 2:] - v[1:-1, 1:-1, :-2]) / (2.0 * hz)
    norm = np.sqrt(gx * gx + gy * gy + gz * gz)
    resid = norm - 1.0
    value = float(np.mean(resid * resid))
    # d/dg of (|g|-1)^2 = 2(|g|-1) g/|g|; zero-gradient nodes contribute
    # a flat (subgradient-zero) direction.
    coef = np.where(norm > 1e-12, 2.0 * resid / np.maximum(norm, 1e-12), 0.0)
    coef /= resid.size
    cx = coef * gx / (2.0 * hx)
    cy = coef * gy / (2.0 * hy)
    cz = coef * gz / (2.0 * hz)
    grad[2:, 1:-1, 1:-1] += cx
    grad[:-2, 1:-1, 1:-1] -= cx
    grad[1:-1, 2:, 1:-1] += cy
    grad[1:-1, :-2, 1:-1] -= cy
    grad[1:-1, 1:-1, 2:] += cz
    grad[1:-1, 1:-1, :-2] -= cz
    return value, grad


def _scatter(idx, weights, n_nodes):
    return np.bincount(idx.ravel(), weights=weights.ravel(),
                       minlength=n_nodes)


class _FitProblem:
    """Precomputed ray data shared across fit iterations."""

    def __init__(self, samples, grid: SdfGrid, config: ReconConfig):
        self.config = config
        self.n_nodes = grid.values.size
        self.origins = np.array([s.ray.origin for s in samples])
        self.dirs = np.array([s.ray.direction for s in samples])
        self.depth = np.array([s.depth for s in samples])
        self.finite = np.isfinite(self.depth)
        self.min_step = min(grid.cell_size) / 4.0
        lo, hi = _ray_grid_span(grid, self.origins, self.dirs)
        self.t_start, self.t_stop = lo, hi

        # Free-space probes are geometric, not field-dependent: fixed
        # stratified midpoints strictly before each hit (backed off by
        # two margins so the hinge never fights the surface itself) and
        # across the full in-grid span of sky rays.
        m = config.freespace_samples
        pts = []
        if m > 0:
            back = 2.0 * config.margin
            f_hi = np.where(self.finite, np.minimum(self.depth - back, hi), hi)
            span = f_hi - lo
            ok = span > 0
            if np.any(ok):
                frac = (np.arange(m) + 0.5) / m
                t = lo[ok, None] + span[ok, None] * frac[None, :]
                pts = (self.origins[ok, None, :]
                       + t[:, :, None] * self.dirs[ok, None, :]).reshape(-1, 3)
        if len(pts):
            self.free_idx, self.free_w, _ = _corner_weights(grid, pts)
        else:
            self.free_idx = np.zeros((0, 8), dtype=np.int64)
            self.free_w = np.zeros((0, 8))

    def lidar_loss(self, grid: SdfGrid, want_grad: bool):
        f = self.finite
        t_hit = _trace_first_crossing(grid, self.origins[f], self.dirs[f],
                                      self.t_start[f], self.t_stop[f],
                                      self.min_step)
        hit = np.isfinite(t_hit)
        if not np.any(hit):
            return 0.0, None
        resid = t_hit[hit] - self.depth[f][hit]
        value = float(np.mean(resid * resid))
        if not want_grad:
            return value, None
        o = self.origins[f][hit]
        d = self.dirs[f][hit]
        x = o + t_hit[hit][:, None] * d
        idx, w, gw = _corner_weights(grid, x)
        corner_v = grid.values.ravel()[idx]
        slope = np.einsum("nk,nk->n", corner_v,
                          np.einsum("nkd,nd->nk", gw, d))
        sgn = np.where(slope > 0.0, 1.0, -1.0)
        slope = sgn * np.maximum(np.abs(slope), _SLOPE_FLOOR)
        coef = -2.0 * resid / (slope * resid.size)
        grad_flat = _scatter(idx, w * coef[:, None], self.n_nodes)
        return value, grad_flat.reshape(grid.values.shape)

    def free_loss(self, grid: SdfGrid, want_grad: bool):
        if self.free_idx.shape[0] == 0:
            return 0.0, None
        s = np.einsum("nk,nk->n", grid.values.ravel()[self.free_idx],
                      self.free_w)
        gap = self.config.margin - s
        viol = gap > 0.0
        value = float(np.sum(gap[viol] ** 2) / s.size)
        if not want_grad:
            return value, None
        coef = np.zeros_like(s)
        coef[viol] = -2.0 * gap[viol] / s.size
        grad_flat = _scatter(self.free_idx, self.free_w * coef[:, None],
                             self.n_nodes)
        return value, grad_flat.reshape(grid.values.shape)

    def evaluate(self, grid: SdfGrid, want_grad: bool):
        cfg = self.config
        ll, gl = self.lidar_loss(grid, want_grad)
        le, ge = eikonal_penalty(grid) if want_grad else \
            (eikonal_penalty(grid)[0], None)
        lf, gf = self.free_loss(grid, want_grad)
        total = (cfg.lambda_lidar * ll + cfg.lambda_eikonal * le
                 + cfg.lambda_freespace * lf)
        if not want_grad:
            return total, (ll, le, lf), None
        grad = cfg.lambda_eikonal * ge
        if gl is not None:
            grad = grad + cfg.lambda_lidar * gl
        if gf is not None:
            grad = grad + cfg.lambda_freespace * gf
        return total, (ll, le, lf), grad


def init_sdf(samples, bounds, resolution) -> SdfGrid:
    """Signed distance to the hit cloud.

    Magnitude is the unsigned KD distance to the nearest hit point; the
    sign comes from the observing rays: a point past a hit along its ray
    is interior (negative).  A single nearest hit is unreliable when its
    ray grazed the surface, so the sign is a cosine-weighted vote over
    the nearest eight hits, which suppresses tangential observations.
    """
    bounds_min = np.asarray(bounds[0], dtype=np.float64)
    bounds_max = np.asarray(bounds[1], dtype=np.float64)
    finite = [s for s in samples if not s.is_sky]
    if not finite:
        raise PreconditionError("need at least one finite-depth sample")
    hits = np.array([s.hit_point for s in finite])
    if np.any(hits < bounds_min - 1e-9) or np.any(hits > bounds_max + 1e-9):
        raise PreconditionError("bounds do not contain all sample hit points")
    dirs = np.array([s.ray.direction for s in finite])

    res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (3,))
    shape = res + 1
    axes = [np.linspace(bounds_min[a], bounds_max[a], shape[a])
            for a in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    k = min(8, len(finite))
    dist, j = cKDTree(hits).query(nodes, k=k)
    if k == 1:
        dist, j = dist[:, None], j[:, None]
    vec = nodes[:, None, :] - hits[j]
    along = np.einsum("nkd,nkd->nk", vec, dirs[j])
    vote = (along / np.maximum(np.linalg.norm(vec, axis=2), 1e-12)).sum(axis=1)
    values = np.where(vote > 0.0, -dist[:, 0], dist[:, 0]).reshape(tuple(shape))
    return SdfGrid(bounds_min, bounds_max, values)


def fit_sdf(samples, bounds, resolution, config: ReconConfig | None = None,
            trace_rows: list | None = None) -> SdfGrid:
    """Fit an SDF grid to range samples; see the module docstring.

    trace_rows, when given, receives (iter, loss_lidar, loss_eik,
    loss_free) tuples of raw per-term means: one row per iteration start
    plus a final row for the returned state.
    """
    config = config or ReconConfig()
    grid = init_sdf(samples, bounds, resolution)
    problem = _FitProblem(samples, grid, config)
    values = grid.values

    # The step is renormalized every iteration so the worst node moves
    # about scale * 0.25 cells; a frozen absolute step would starve
    # low-gradient terms (free-space carving) once the range residuals
    # collapse and the overall gradient shrinks.  Backtracking halves
    # persist through the multiplier, so accepted loss never increases.
    scale = config.step_size
    scale_cap = 10.0 * config.step_size
    quarter_cell = 0.25 * min(grid.cell_size)
    for it in range(config.iterations):
        cur = SdfGrid(grid.bounds_min, grid.bounds_max, values)
        total, parts, grad = problem.evaluate(cur, want_grad=True)
        if trace_rows is not None:
            trace_rows.append((it, *parts))
        if not math.isfinite(total):
            raise RelightKitError(
                "fit_sdf loss became non-finite; lower step_size")
        gmax = float(np.max(np.abs(grad)))
        if gmax == 0.0:
            break
        stalled = False
        while True:
            cand = values - (quarter_cell / gmax * scale) * grad
            new_total, _, _ = problem.evaluate(
                SdfGrid(grid.bounds_min, grid.bounds_max, cand),
                want_grad=False)
            if math.isfinite(new_total) and new_total <= total:
                values = cand
                scale = min(scale * 1.1, scale_cap)
                break
            scale *= 0.5
            if scale < 1e-14 * config.step_size:
                stalled = True
                break
        if stalled:
            break

    final = SdfGrid(grid.bounds_min, grid.bounds_max, values)
    if trace_rows is not None:
        _, parts, _ = problem.evaluate(final, want_grad=False)
        trace_rows.append((config.iterations, *parts))
    return final


# ------------------------------------------------------------------- baking

@dataclass
class BakeResult:
    """Baked mesh plus the per-vertex mask of never-observed vertices."""

    mesh: TriangleMesh
    unseen: np.ndarray


def _bilinear(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample at continuous pixel coords over the pixel-center grid."""
    h, w = image.shape[:2]
    x = np.clip(uv[:, 0] - 0.5, 0.0, w - 1.0)
    y = np.clip(uv[:, 1] - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(x.astype(np.int64), w - 2) if w > 1 else np.zeros_like(x, np.int64)
    y0 = np.minimum(y.astype(np.int64), h - 2) if h > 1 else np.zeros_like(y, np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    return ((1 - fy) * ((1 - fx) * image[y0, x0] + fx * image[y0, x1])
            + fy * ((1 - fx) * image[y1, x0] + fx * image[y1, x1]))


def bake_vertex_albedo(mesh: TriangleMesh, images, cameras, bvh) -> BakeResult:
    """Average visible bilinear image samples into per-vertex albedo."""
    if len(images) != len(cameras):
        raise PreconditionError("images and cameras must pair up")
    if mesh.n_vertices == 0:
        raise PreconditionError("mesh is empty")
    verts = mesh.vertices
    acc = np.zeros((mesh.n_vertices, 3))
    count = np.zeros(mesh.n_vertices)
    for image, cam in zip(images, cameras):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (cam.height, cam.width, 3):
            raise PreconditionError(
                f"image shape {image.shape} does not match its camera "
                f"({cam.height}, {cam.width}, 3)")
        uv, z = cam.project(verts)
        inside = ((z > 1e-9)
                  & (uv[:, 0] >= 0.0) & (uv[:, 0] < cam.width)
                  & (uv[:, 1] >= 0.0) & (uv[:, 1] < cam.height))
        if not np.any(inside):
            continue
        # Unnormalized directions make the vertex sit at t = 1, so one
        # scalar window (0, 1 - eps) tests every segment.
        seg = verts[inside] - cam.center
        occ = occluded(bvh, np.broadcast_to(cam.center, seg.shape), seg,
                       t_min=0.0, t_max=1.0 - 1e-4)
        vis_idx = np.nonzero(inside)[0][~occ]
        if vis_idx.size == 0:
            continue
        acc[vis_idx] += _bilinear(image, uv[vis_idx])
        count[vis_idx] += 1.0
    seen = count > 0
    albedo = np.full((mesh.n_vertices, 3), _UNSEEN_ALBEDO)
    albedo[seen] = acc[seen] / count[seen, None]
    baked = mesh.copy()
    baked.albedo[:] = np.clip(albedo, 0.0, 1.0)
    return BakeResult(mesh=baked, unseen=~seen)
