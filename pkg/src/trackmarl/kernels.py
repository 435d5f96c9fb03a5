"""Hot numeric kernels: rasterization, blob labeling, assignment solving.

Every kernel exists in two flavors: a numba ``@njit`` build and a pure
NumPy/Python fallback. The public names (``rasterize_frame``, ``role_match_map``,
``blob_stats``, ``lap_solve``, ``lex_min_matching``) are bound to the numba
build when numba is importable and ``TRACKMARL_DISABLE_NUMBA`` is unset;
otherwise they fall back transparently. Both flavors produce bitwise-identical
results (same IEEE-754 op order, no fastmath), which the test suite pins.

``benchmarks/bench_kernels.py`` times the two flavors against each other.
"""

from __future__ import annotations

import os

import numpy as np


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and not _env_flag("TRACKMARL_DISABLE_NUMBA")


def _jit(fn):
    if _HAVE_NUMBA:
        return _njit(cache=True)(fn)
    return None


# ---------------------------------------------------------------------------
# Rasterization: filled circles on a uint8 canvas, later entries drawn on top.
# ---------------------------------------------------------------------------


def _rasterize_core(img, rows, cols, radii, colors):
    h, w = img.shape[0], img.shape[1]
    for k in range(rows.shape[0]):
        cy = rows[k]
        cx = cols[k]
        r = radii[k]
        r2 = r * r
        ri = int(r) + 1
        y0 = cy - ri
        if y0 < 0:
            y0 = 0
        y1 = cy + ri + 1
        if y1 > h:
            y1 = h
        x0 = cx - ri
        if x0 < 0:
            x0 = 0
        x1 = cx + ri + 1
        if x1 > w:
            x1 = w
        for y in range(y0, y1):
            dy = float(y - cy)
            for x in range(x0, x1):
                dx = float(x - cx)
                if dx * dx + dy * dy <= r2:
                    img[y, x, 0] = colors[k, 0]
                    img[y, x, 1] = colors[k, 1]
                    img[y, x, 2] = colors[k, 2]


def rasterize_frame_numpy(img, rows, cols, radii, colors):
    """Vectorized fallback: per-entity disk masks over the bounding box."""
    h, w = img.shape[:2]
    for k in range(rows.shape[0]):
        cy, cx, r = int(rows[k]), int(cols[k]), float(radii[k])
        ri = int(r) + 1
        y0, y1 = max(0, cy - ri), min(h, cy + ri + 1)
        x0, x1 = max(0, cx - ri), min(w, cx + ri + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        mask = ((yy - cy).astype(np.float64) ** 2 + (xx - cx).astype(np.float64) ** 2) <= r * r
        img[y0:y1, x0:x1][mask] = colors[k]


rasterize_frame_numba = _jit(_rasterize_core)
rasterize_frame = rasterize_frame_numba if NUMBA_ENABLED else rasterize_frame_numpy


# ---------------------------------------------------------------------------
# Per-pixel role matching: map each pixel to the first role color it matches
# within a per-channel tolerance, -1 for background. Role colors are required
# (by the ColorMap invariant) to be separated enough that at most one matches.
# ---------------------------------------------------------------------------


def _role_map_core(img, colors, tol):
    h, w = img.shape[0], img.shape[1]
    nroles = colors.shape[0]
    out = np.full((h, w), -1, np.int32)
    for y in range(h):
        for x in range(w):
            p0 = np.int64(img[y, x, 0])
            p1 = np.int64(img[y, x, 1])
            p2 = np.int64(img[y, x, 2])
            for r in range(nroles):
                d0 = p0 - colors[r, 0]
                if d0 < 0:
                    d0 = -d0
                if d0 > tol:
                    continue
                d1 = p1 - colors[r, 1]
                if d1 < 0:
                    d1 = -d1
                if d1 > tol:
                    continue
                d2 = p2 - colors[r, 2]
                if d2 < 0:
                    d2 = -d2
                if d2 <= tol:
                    out[y, x] = r
                    break
    return out


def role_map_numpy(img, colors, tol):
    """Vectorized fallback of the per-pixel role matcher."""
    diff = np.abs(img.astype(np.int64)[:, :, None, :] - colors.astype(np.int64)[None, None, :, :])
    hits = (diff <= tol).all(axis=3)  # (H, W, R)
    out = np.where(hits.any(axis=2), hits.argmax(axis=2), -1).astype(np.int32)
    return out


role_map_numba = _jit(_role_map_core)
role_match_map = role_map_numba if NUMBA_ENABLED else role_map_numpy


# ---------------------------------------------------------------------------
# Connected components over the role map (4-connectivity, same role only),
# reported in scanline discovery order with pixel counts and coordinate sums.
# ---------------------------------------------------------------------------


def _blob_stats_core(rmap):
    h, w = rmap.shape
    labels = np.full(h * w, -1, np.int32)
    stack = np.empty(h * w, np.int64)
    cap = h * w
    roles = np.empty(cap, np.int32)
    areas = np.empty(cap, np.int64)
    sum_y = np.empty(cap, np.int64)
    sum_x = np.empty(cap, np.int64)
    ncomp = 0
    for sy in range(h):
        for sx in range(w):
            sp = sy * w + sx
            role = rmap[sy, sx]
            if role < 0 or labels[sp] >= 0:
                continue
            labels[sp] = ncomp
            top = 0
            stack[top] = sp
            top += 1
            area = np.int64(0)
            ssy = np.int64(0)
            ssx = np.int64(0)
            while top > 0:
                top -= 1
                p = stack[top]
                py = p // w
                px = p % w
                area += 1
                ssy += py
                ssx += px
                if py > 0 and rmap[py - 1, px] == role and labels[p - w] < 0:
                    labels[p - w] = ncomp
                    stack[top] = p - w
                    top += 1
                if py < h - 1 and rmap[py + 1, px] == role and labels[p + w] < 0:
                    labels[p + w] = ncomp
                    stack[top] = p + w
                    top += 1
                if px > 0 and rmap[py, px - 1] == role and labels[p - 1] < 0:
                    labels[p - 1] = ncomp
                    stack[top] = p - 1
                    top += 1
                if px < w - 1 and rmap[py, px + 1] == role and labels[p + 1] < 0:
                    labels[p + 1] = ncomp
                    stack[top] = p + 1
                    top += 1
            roles[ncomp] = role
            areas[ncomp] = area
            sum_y[ncomp] = ssy
            sum_x[ncomp] = ssx
            ncomp += 1
    return roles[:ncomp].copy(), areas[:ncomp].copy(), sum_y[:ncomp].copy(), sum_x[:ncomp].copy()


blob_stats_numpy = _blob_stats_core
blob_stats_numba = _jit(_blob_stats_core)
blob_stats = blob_stats_numba if NUMBA_ENABLED else blob_stats_numpy


# ---------------------------------------------------------------------------
# Square linear assignment, Jonker-Volgenant shortest augmenting paths.
# Returns the matching plus the optimal dual potentials (u, v); the duals
# certify optimality and let the caller enumerate all optimal matchings via
# the zero-reduced-cost subgraph.
# ---------------------------------------------------------------------------


def _lap_core(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)  # p[j] = row (1-based) matched to column j
    way = np.zeros(n + 1, np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:].copy(), v[1:].copy()


lap_solve_numpy = _lap_core
lap_solve_numba = _jit(_lap_core)
lap_solve = lap_solve_numba if NUMBA_ENABLED else lap_solve_numpy


# ---------------------------------------------------------------------------
# Lexicographically smallest perfect matching inside an admissibility graph
# (rows x cols bool). `assign` must already be one valid perfect matching; it
# is rewired in place toward the lexicographic minimum. Feasibility probes use
# BFS augmenting paths.
# ---------------------------------------------------------------------------


def _lex_min_core(adm, assign):
    n = adm.shape[0]
    col_used = np.zeros(n, np.bool_)
    row_match = np.empty(n, np.int64)
    col_match = np.empty(n, np.int64)
    prev_row = np.empty(n, np.int64)
    visited = np.empty(n, np.bool_)
    queue = np.empty(n, np.int64)
    for i in range(n):
        for j in range(assign[i]):
            if not adm[i, j] or col_used[j]:
                continue
            # probe: fix i->j, rematch rows i+1..n-1 into the remaining columns
            for k in range(n):
                row_match[k] = -1
                col_match[k] = -1
            ok = True
            for r in range(i + 1, n):
                visited[:] = False
                queue[0] = r
                qlen = 1
                qi = 0
                found = np.int64(-1)
                while qi < qlen and found < 0:
                    row = queue[qi]
                    qi += 1
                    for c in range(n):
                        if c == j or col_used[c] or visited[c] or not adm[row, c]:
                            continue
                        visited[c] = True
                        prev_row[c] = row
                        if col_match[c] < 0:
                            found = c
                            break
                        queue[qlen] = col_match[c]
                        qlen += 1
                if found < 0:
                    ok = False
                    break
                c = found
                while True:
                    row = prev_row[c]
                    old = row_match[row]
                    row_match[row] = c
                    col_match[c] = row
                    if old < 0:
                        break
                    c = old
            if ok:
                assign[i] = j
                for r in range(i + 1, n):
                    assign[r] = row_match[r]
                break
        col_used[assign[i]] = True
    return assign


lex_min_matching_numpy = _lex_min_core
lex_min_matching_numba = _jit(_lex_min_core)
lex_min_matching = lex_min_matching_numba if NUMBA_ENABLED else lex_min_matching_numpy


# ---------------------------------------------------------------------------
# Double-integrator physics update with soft pairwise contacts. Velocities
# damp, accelerate, absorb contact impulses, clip to per-entity speed limits;
# positions clamp to the arena box. One scalar pass keeps both flavors
# bitwise identical (sqrt is correctly rounded; no hypot).
# ---------------------------------------------------------------------------


def _physics_core(pos, vel, acc, radii, vmax, mass, movable, collidable, damping, dt, stiffness, half):
    m = pos.shape[0]
    new_vel = np.zeros((m, 2))
    for i in range(m):
        if movable[i]:
            new_vel[i, 0] = vel[i, 0] * (1.0 - damping) + acc[i, 0] * dt
            new_vel[i, 1] = vel[i, 1] * (1.0 - damping) + acc[i, 1] * dt
    for i in range(m):
        if not collidable[i]:
            continue
        for j in range(i + 1, m):
            if not collidable[j]:
                continue
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dist = np.sqrt(dx * dx + dy * dy)
            depth = radii[i] + radii[j] - dist
            if depth <= 0.0:
                continue
            if dist < 1e-12:
                ux, uy = 1.0, 0.0
            else:
                ux, uy = dx / dist, dy / dist
            fx = stiffness * depth * ux
            fy = stiffness * depth * uy
            if movable[i]:
                new_vel[i, 0] += fx * dt / mass[i]
                new_vel[i, 1] += fy * dt / mass[i]
            if movable[j]:
                new_vel[j, 0] -= fx * dt / mass[j]
                new_vel[j, 1] -= fy * dt / mass[j]
    new_pos = np.empty((m, 2))
    for i in range(m):
        speed = np.sqrt(new_vel[i, 0] ** 2 + new_vel[i, 1] ** 2)
        if speed > vmax[i]:
            scale = vmax[i] / speed
            new_vel[i, 0] *= scale
            new_vel[i, 1] *= scale
        for c in range(2):
            p = pos[i, c] + new_vel[i, c] * dt if movable[i] else pos[i, c]
            if p < -half:
                p = -half
            elif p > half:
                p = half
            new_pos[i, c] = p
    return new_pos, new_vel


physics_step_numpy = _physics_core
physics_step_numba = _jit(_physics_core)
physics_step = physics_step_numba if NUMBA_ENABLED else physics_step_numpy


# ---------------------------------------------------------------------------
# Single-graph policy forwards for the rollout hot loop. These mirror the
# batched NumPy implementations in nets.py (same matmul associativity); they
# exist because per-step B=1 forwards dominate collection time otherwise.
# ---------------------------------------------------------------------------


def _gcn_policy_core(phi, adj, wo0, ws0, wo1, ws1, pw1, pb1, pw2, pb2, vw1, vb1, vw2, vb2):
    n = phi.shape[0]
    h = np.maximum(((adj @ phi) @ wo0 + phi @ ws0) / n, 0.0)
    h = np.maximum(((adj @ h) @ wo1 + h @ ws1) / n, 0.0)
    width = h.shape[1]
    pooled = np.empty(width)
    for f in range(width):
        best = h[0, f]
        for i in range(1, n):
            if h[i, f] > best:
                best = h[i, f]
        pooled[f] = best
    hp = np.maximum(pooled @ pw1 + pb1, 0.0)
    logits = hp @ pw2 + pb2
    hv = np.maximum(pooled @ vw1 + vb1, 0.0)
    value = (hv @ vw2 + vb2)[0]
    n_act = logits.shape[0]
    zmax = logits[0]
    for a in range(1, n_act):
        if logits[a] > zmax:
            zmax = logits[a]
    exps = np.exp(logits - zmax)
    total = exps.sum()
    probs = exps / total
    log_probs = (logits - zmax) - np.log(total)
    entropy = 0.0
    for a in range(n_act):
        if probs[a] > 0.0:
            entropy -= probs[a] * log_probs[a]
    return probs, log_probs, value, entropy


gcn_policy_numpy = _gcn_policy_core
gcn_policy_numba = _jit(_gcn_policy_core)
gcn_policy_forward = gcn_policy_numba if NUMBA_ENABLED else gcn_policy_numpy


def _mlp_policy_core(phi, w0, b0, w1, b1, pw, pb, vw, vb):
    x = phi.ravel()
    h = np.maximum(x @ w0 + b0, 0.0)
    h = np.maximum(h @ w1 + b1, 0.0)
    logits = h @ pw + pb
    value = (h @ vw + vb)[0]
    n_act = logits.shape[0]
    zmax = logits[0]
    for a in range(1, n_act):
        if logits[a] > zmax:
            zmax = logits[a]
    exps = np.exp(logits - zmax)
    total = exps.sum()
    probs = exps / total
    log_probs = (logits - zmax) - np.log(total)
    entropy = 0.0
    for a in range(n_act):
        if probs[a] > 0.0:
            entropy -= probs[a] * log_probs[a]
    return probs, log_probs, value, entropy


mlp_policy_numpy = _mlp_policy_core
mlp_policy_numba = _jit(_mlp_policy_core)
mlp_policy_forward = mlp_policy_numba if NUMBA_ENABLED else mlp_policy_numpy


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    img = np.zeros((8, 8, 3), np.uint8)
    rasterize_frame(img, np.array([4]), np.array([4]), np.array([2.0]), np.array([[200, 10, 10]], np.uint8))
    rmap = role_match_map(img, np.array([[200, 10, 10]], np.int64), 10)
    blob_stats(rmap)
    cost = np.array([[1.0, 2.0], [2.0, 1.0]])
    assign, u, v = lap_solve(cost)
    lex_min_matching(np.ones((2, 2), np.bool_), assign)
    phi = np.zeros((2, 3))
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    w = np.zeros((3, 4))
    w2 = np.zeros((4, 4))
    gcn_policy_forward(
        phi, adj, w, w, w2, w2, w2, np.zeros(4), np.zeros((4, 2)), np.zeros(2), w2, np.zeros(4), np.zeros((4, 1)), np.zeros(1)
    )
    mlp_policy_forward(
        phi, np.zeros((6, 4)), np.zeros(4), w2, np.zeros(4), np.zeros((4, 2)), np.zeros(2), np.zeros((4, 1)), np.zeros(1)
    )
