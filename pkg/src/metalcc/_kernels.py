"""Compiled inner loops shared by the geometry and projector modules.

Every parallel loop distributes independent output elements; the reduction
inside one element is sequential, so results do not depend on the thread
count.
"""

import math

import numba as nb
import numpy as np


@nb.njit(cache=True)
def project_point(x, y, z, ca, sa, sad, sdd, pitch, cols, rows):
    depth = sad - (x * ca - y * sa)
    if not depth > 0.0:
        return math.nan, math.nan, False
    scale = sdd / (depth * pitch)
    u = 0.5 * cols + (x * sa + y * ca) * scale
    v = 0.5 * rows + z * scale
    inside = 0.0 <= u < cols and 0.0 <= v < rows
    return u, v, inside


@nb.njit(parallel=True, cache=True)
def backproject(masks, use_mask, cos_t, sin_t, xs, ys, zs, sad, sdd, pitch, cols, rows):
    """Count, per voxel center, the views that see it and the masked hits."""
    nz, ny, nx = zs.size, ys.size, xs.size
    n_views = cos_t.size
    visits = np.zeros((nz, ny, nx), dtype=np.int32)
    seen = np.zeros((nz, ny, nx), dtype=np.int32)
    for kj in nb.prange(nz * ny):
        k = kj // ny
        j = kj - k * ny
        z = zs[k]
        y = ys[j]
        for i in range(nx):
            x = xs[i]
            n_seen = 0
            n_hit = 0
            for view in range(n_views):
                u, v, ok = project_point(x, y, z, cos_t[view], sin_t[view],
                                         sad, sdd, pitch, cols, rows)
                if ok:
                    n_seen += 1
                    if use_mask and masks[view, int(v), int(u)] != 0:
                        n_hit += 1
            visits[k, j, i] = n_hit
            seen[k, j, i] = n_seen
    return visits, seen


@nb.njit(cache=True)
def _ray_sum(vol, ox, oy, oz, h, sx, sy, sz, dx, dy, dz):
    """Exact line integral of a voxelized field along S + a*d, a in [0, 1]."""
    nz, ny, nx = vol.shape
    a_lo = 0.0
    a_hi = 1.0
    bounds_lo = (ox, oy, oz)
    counts = (nx, ny, nz)
    starts = (sx, sy, sz)
    dirs = (dx, dy, dz)
    for ax in range(3):
        d = dirs[ax]
        lo = bounds_lo[ax]
        hi = lo + counts[ax] * h
        s = starts[ax]
        if d == 0.0:
            if s <= lo or s >= hi:
                return 0.0
        else:
            a0 = (lo - s) / d
            a1 = (hi - s) / d
            if a0 > a1:
                a0, a1 = a1, a0
            if a0 > a_lo:
                a_lo = a0
            if a1 < a_hi:
                a_hi = a1
    if a_lo >= a_hi:
        return 0.0

    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    # entry on the far boundary plane floors to n; clamp back inside
    px = sx + a_lo * dx
    py = sy + a_lo * dy
    pz = sz + a_lo * dz
    i = min(max(int(math.floor((px - ox) / h)), 0), nx - 1)
    j = min(max(int(math.floor((py - oy) / h)), 0), ny - 1)
    k = min(max(int(math.floor((pz - oz) / h)), 0), nz - 1)

    inf = math.inf
    if dx > 0.0:
        ax_next = (ox + (i + 1) * h - sx) / dx
        ax_step = h / dx
        si = 1
    elif dx < 0.0:
        ax_next = (ox + i * h - sx) / dx
        ax_step = -h / dx
        si = -1
    else:
        ax_next = inf
        ax_step = inf
        si = 0
    if dy > 0.0:
        ay_next = (oy + (j + 1) * h - sy) / dy
        ay_step = h / dy
        sj = 1
    elif dy < 0.0:
        ay_next = (oy + j * h - sy) / dy
        ay_step = -h / dy
        sj = -1
    else:
        ay_next = inf
        ay_step = inf
        sj = 0
    if dz > 0.0:
        az_next = (oz + (k + 1) * h - sz) / dz
        az_step = h / dz
        sk = 1
    elif dz < 0.0:
        az_next = (oz + k * h - sz) / dz
        az_step = -h / dz
        sk = -1
    else:
        az_next = inf
        az_step = inf
        sk = 0

    total = 0.0
    a = a_lo
    while a < a_hi:
        a_next = min(ax_next, ay_next, az_next, a_hi)
        if a_next > a:
            total += vol[k, j, i] * (a_next - a)
        a = a_next
        if a >= a_hi:
            break
        if ax_next <= a:
            i += si
            ax_next += ax_step
        elif ay_next <= a:
            j += sj
            ay_next += ay_step
        else:
            k += sk
            az_next += az_step
        if i < 0 or i >= nx or j < 0 or j >= ny or k < 0 or k >= nz:
            break
    return total * length


@nb.njit(parallel=True, cache=True)
def forward(vol, ox, oy, oz, h, cos_t, sin_t, sad, sdd, pitch, cols, rows):
    n_views = cos_t.size
    out = np.zeros((n_views, rows, cols), dtype=np.float64)
    idd = sdd - sad
    for vr in nb.prange(n_views * rows):
        view = vr // rows
        r = vr - view * rows
        ca = cos_t[view]
        sa = sin_t[view]
        sx = sad * ca
        sy = -sad * sa
        # detector center is opposite the source on the central ray
        cx = -idd * ca
        cy = idd * sa
        v_mm = (r + 0.5 - 0.5 * rows) * pitch
        for c in range(cols):
            u_mm = (c + 0.5 - 0.5 * cols) * pitch
            px = cx + u_mm * sa
            py = cy + u_mm * ca
            out[view, r, c] = _ray_sum(vol, ox, oy, oz, h, sx, sy, 0.0,
                                       px - sx, py - sy, v_mm)
    return out
