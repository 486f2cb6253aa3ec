"""Compiled inner loops.

Everything here works in plain arrays so the public modules can keep their
dataclass surfaces. Cell states use the same integer codes as
``grid_map.CellState``: 0 unknown, 1 free, 2 occupied.
"""

from __future__ import annotations

import math

import numba
import numpy as np

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

# Offset (in cell units) used to pick up every cell touching a grid-line
# crossing, including cells touched only at a corner.
_EPS = 1e-7

_jit = numba.njit(cache=True, nogil=True)


@_jit
def _cell_dist(field, col, row):
    if row < 0 or col < 0 or row >= field.shape[0] or col >= field.shape[1]:
        return np.inf
    return field[row, col]


@_jit
def _probe(field, gx, gy, r_robot):
    return _cell_dist(field, int(math.floor(gx)), int(math.floor(gy))) >= r_robot


@_jit
def segment_clear(field, ox, oy, res, x0, y0, x1, y1, r_robot):
    """True when no cell touched by the closed segment is closer than r_robot."""
    # canonical endpoint order keeps the check symmetric bit-for-bit
    if (x1, y1) < (x0, y0):
        x0, y0, x1, y1 = x1, y1, x0, y0
    gx0 = (x0 - ox) / res
    gy0 = (y0 - oy) / res
    gx1 = (x1 - ox) / res
    gy1 = (y1 - oy) / res
    if not _probe(field, gx0, gy0, r_robot) or not _probe(field, gx1, gy1, r_robot):
        return False
    dgx = gx1 - gx0
    dgy = gy1 - gy0
    if dgx != 0.0:
        lo = min(gx0, gx1)
        hi = max(gx0, gx1)
        for line in range(int(math.ceil(lo)), int(math.floor(hi)) + 1):
            t = (line - gx0) / dgx
            y = gy0 + t * dgy
            for sx in (-_EPS, _EPS):
                for sy in (-_EPS, _EPS):
                    if not _probe(field, line + sx, y + sy, r_robot):
                        return False
    if dgy != 0.0:
        lo = min(gy0, gy1)
        hi = max(gy0, gy1)
        for line in range(int(math.ceil(lo)), int(math.floor(hi)) + 1):
            t = (line - gy0) / dgy
            x = gx0 + t * dgx
            for sx in (-_EPS, _EPS):
                for sy in (-_EPS, _EPS):
                    if not _probe(field, x + sx, line + sy, r_robot):
                        return False
    return True


@_jit
def segments_clear(field, ox, oy, res, p0, p1, r_robot):
    out = np.empty(p0.shape[0], dtype=np.bool_)
    for k in range(p0.shape[0]):
        out[k] = segment_clear(field, ox, oy, res, p0[k, 0], p0[k, 1], p1[k, 0], p1[k, 1], r_robot)
    return out


# ---------------------------------------------------------------------------
# ray casting

# corner snapping distance in cell units; far above float rounding of a
# range stored in meters, far below anything geometric
CORNER_TOL = 1e-9


@_jit
def _ray_setup(g, d):
    cell = int(math.floor(g))
    if d > 0.0:
        step = 1
        t_max = (cell + 1 - g) / d
        t_delta = 1.0 / d
    elif d < 0.0:
        step = -1
        t_max = (g - cell) / -d
        t_delta = -1.0 / d
    else:
        step = 0
        t_max = np.inf
        t_delta = np.inf
    return cell, step, t_max, t_delta


@_jit
def _ray_step(ix, iy, sx, sy, tmx, tmy, tdx, tdy):
    """Advance one cell; crossings within CORNER_TOL of a corner step diagonally.

    Shared by casting and integration so both walk the same cells, and so
    successive entry distances differ by more than CORNER_TOL.
    """
    if tmx < tmy - CORNER_TOL:
        return tmx, ix + sx, iy, tmx + tdx, tmy
    if tmy < tmx - CORNER_TOL:
        return tmy, ix, iy + sy, tmx, tmy + tdy
    return min(tmx, tmy), ix + sx, iy + sy, tmx + tdx, tmy + tdy


@_jit
def cast_rays(occ, gx, gy, angles, max_cells):
    """Range (cell units) to the entry point of the first occupied cell per beam."""
    h, w = occ.shape
    out = np.empty(angles.shape[0])
    for b in range(angles.shape[0]):
        dx = math.cos(angles[b])
        dy = math.sin(angles[b])
        ix, sx, tmx, tdx = _ray_setup(gx, dx)
        iy, sy, tmy, tdy = _ray_setup(gy, dy)
        t = 0.0
        rng = max_cells
        while t < max_cells:
            if ix < 0 or iy < 0 or ix >= w or iy >= h:
                break
            if occ[iy, ix]:
                rng = t
                break
            t, ix, iy, tmx, tmy = _ray_step(ix, iy, sx, sy, tmx, tmy, tdx, tdy)
        out[b] = rng
    return out


@_jit
def integrate_rays(state, gx, gy, angles, ranges, max_cells):
    """Mark traversed cells free and hit cells occupied, in place.

    Returns (cells that left the unknown state, cells whose state changed).
    """
    h, w = state.shape
    newly = 0
    changed = 0
    for b in range(angles.shape[0]):
        rng = ranges[b]
        dx = math.cos(angles[b])
        dy = math.sin(angles[b])
        ix, sx, tmx, tdx = _ray_setup(gx, dx)
        iy, sy, tmy, tdy = _ray_setup(gy, dy)
        # ranges round-trip through meters; tol absorbs that rounding only
        tol = 1e-12 * max(1.0, rng)
        hit = rng < max_cells - tol
        t = 0.0
        while True:
            if ix < 0 or iy < 0 or ix >= w or iy >= h:
                break
            s = state[iy, ix]
            if t >= rng - tol:
                if not hit:
                    break
                if s == UNKNOWN:
                    newly += 1
                if s != OCCUPIED:
                    changed += 1
                state[iy, ix] = OCCUPIED
                break
            if s == UNKNOWN:
                state[iy, ix] = FREE
                newly += 1
                changed += 1
            t, ix, iy, tmx, tmy = _ray_step(ix, iy, sx, sy, tmx, tmy, tdx, tdy)
    return newly, changed


# ---------------------------------------------------------------------------
# RRT expansion


@_jit
def _bucket_of(x, y, x0, y0, size, nx, ny):
    bx = int(math.floor((x - x0) / size))
    by = int(math.floor((y - y0) / size))
    bx = min(max(bx, 0), nx - 1)
    by = min(max(by, 0), ny - 1)
    return bx, by


@_jit
def nearest_alive(pos, alive, head, nxt, x0, y0, size, nx, ny, qx, qy):
    bx, by = _bucket_of(qx, qy, x0, y0, size, nx, ny)
    best = -1
    best_d2 = np.inf
    k = 0
    kmax = max(nx, ny)
    while k <= kmax:
        if best >= 0 and k >= 1:
            lb = (k - 1) * size
            if best_d2 < lb * lb:
                break
        for cy in range(by - k, by + k + 1):
            if cy < 0 or cy >= ny:
                continue
            edge_row = cy == by - k or cy == by + k
            cx = bx - k
            while cx <= bx + k:
                if 0 <= cx < nx:
                    node = head[cy * nx + cx]
                    while node >= 0:
                        if alive[node]:
                            ddx = pos[node, 0] - qx
                            ddy = pos[node, 1] - qy
                            d2 = ddx * ddx + ddy * ddy
                            if d2 < best_d2 or (d2 == best_d2 and node < best):
                                best_d2 = d2
                                best = node
                        node = nxt[node]
                if edge_row or k == 0:
                    cx += 1
                else:
                    cx += 2 * k
        k += 1
    return best


@_jit
def _state_at(state, ox, oy, res, x, y):
    col = int(math.floor((x - ox) / res))
    row = int(math.floor((y - oy) / res))
    if row < 0 or col < 0 or row >= state.shape[0] or col >= state.shape[1]:
        return UNKNOWN
    return state[row, col]


@_jit
def expand(
    pos, parent, alive, counts,
    head, nxt, nn_x0, nn_y0, nn_size, nn_nx, nn_ny,
    field, state, ox, oy, res,
    rect, disc, use_disc,
    samples,
    r_robot, eta_max, theta_cov, theta_fl, local_mode, s_free_cells,
    f_node, f_bucket, fb_occ, fb_x0, fb_y0, fb_nx, fb_ny, fb_size,
):
    """Grow the tree from pre-drawn samples until the termination test passes.

    ``counts`` holds [n_nodes, n_alive, n_frontiers, consumed] and is updated
    in place. Returns 0 when complete, 1 when samples ran out, 2 when node or
    frontier capacity is exhausted.
    """
    cap = pos.shape[0]
    fcap = f_node.shape[0]
    while True:
        n_alive = counts[1]
        n_front = counts[2]
        if s_free_cells <= 0.0:
            return 0
        if n_alive / s_free_cells > theta_cov:
            return 0
        if local_mode and n_front > theta_fl:
            return 0
        s = counts[3]
        if s >= samples.shape[0]:
            return 1
        if counts[0] >= cap or n_front >= fcap:
            return 2
        counts[3] = s + 1
        rx = samples[s, 0]
        ry = samples[s, 1]
        near = nearest_alive(pos, alive, head, nxt, nn_x0, nn_y0, nn_size, nn_nx, nn_ny, rx, ry)
        if near < 0:
            return 1
        px = pos[near, 0]
        py = pos[near, 1]
        d_obs = _cell_dist(field, int(math.floor((px - ox) / res)), int(math.floor((py - oy) / res)))
        if d_obs >= 2.0 * r_robot:
            eta = eta_max
        elif d_obs <= r_robot:
            eta = r_robot
        else:
            eta = r_robot + (eta_max - r_robot) * (d_obs - r_robot) / r_robot
        vx = rx - px
        vy = ry - py
        dist = math.sqrt(vx * vx + vy * vy)
        if dist <= eta:
            nx_ = rx
            ny_ = ry
        else:
            nx_ = px + eta * vx / dist
            ny_ = py + eta * vy / dist
        if not (rect[0] <= nx_ <= rect[2] and rect[1] <= ny_ <= rect[3]):
            continue
        if use_disc:
            ex = nx_ - disc[0]
            ey = ny_ - disc[1]
            if ex * ex + ey * ey > disc[2] * disc[2]:
                continue
        st_near = _state_at(state, ox, oy, res, px, py)
        st_new = _state_at(state, ox, oy, res, nx_, ny_)
        if st_near == UNKNOWN and st_new == UNKNOWN:
            continue
        if not segment_clear(field, ox, oy, res, px, py, nx_, ny_, r_robot):
            continue
        node = counts[0]
        pos[node, 0] = nx_
        pos[node, 1] = ny_
        parent[node] = near
        alive[node] = True
        bx, by = _bucket_of(nx_, ny_, nn_x0, nn_y0, nn_size, nn_nx, nn_ny)
        b = by * nn_nx + bx
        nxt[node] = head[b]
        head[b] = node
        counts[0] = node + 1
        counts[1] = n_alive + 1
        if st_near != UNKNOWN and st_new == UNKNOWN:
            fbx = int(math.floor(nx_ / fb_size)) - fb_x0
            fby = int(math.floor(ny_ / fb_size)) - fb_y0
            if 0 <= fbx < fb_nx and 0 <= fby < fb_ny:
                fb = fby * fb_nx + fbx
                if fb_occ[fb] < 0:
                    f_node[n_front] = node
                    f_bucket[n_front] = fb
                    fb_occ[fb] = n_front
                    counts[2] = n_front + 1


@_jit
def propagate_removal(parent, alive, removed, n):
    """Extend ``removed`` to all descendants (parents always precede children) and kill them."""
    killed = 0
    for i in range(n):
        if not alive[i]:
            continue
        p = parent[i]
        if p >= 0 and removed[p]:
            removed[i] = True
        if removed[i]:
            alive[i] = False
            killed += 1
    return killed
