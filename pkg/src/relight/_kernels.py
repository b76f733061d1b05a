"""JIT ray-march kernels for the interactive path.

Float32 throughout for speed; the float64 numpy renderer in render.py is the
reference these kernels are tested against.  Samples whose raw density
response falls below SKIP_RAW contribute less than float32 rounding and are
skipped; a coarse occupancy mask (an upper bound on that response per cell,
built in fast.py) lets the march skip the plane fetch for such samples
entirely, so masking changes no output bit.  Rays stop once transmittance
drops under STOP_TRANS.  Each pixel is computed independently, so outputs
are bitwise reproducible for any thread count.
"""

import math

import numpy as np
from numba import njit, prange

F0 = np.float32(0.0)
F1 = np.float32(1.0)
FH = np.float32(0.5)
THIRD = np.float32(1.0 / 3.0)
SKIP_RAW = np.float32(-18.0)
STOP_TRANS = np.float32(1e-4)
EPS_WSUM = np.float32(1e-8)

SH_C0 = np.float32(0.28209479177387814)
SH_C1 = np.float32(0.4886025119029199)
SH_C2 = np.float32(1.0925484305920792)
SH_C3 = np.float32(0.31539156525252005)
SH_C4 = np.float32(0.5462742152960396)


@njit(inline="always")
def _lattice(u, Rf, Ri):
    t = (u + F1) * (FH * Rf) - FH
    i0 = int(math.floor(t))
    f = np.float32(t) - np.float32(i0)
    if i0 < 0:
        i0 = 0
        f = F0
    elif i0 > Ri - 2:
        i0 = Ri - 2
        f = F1
    if f < F0:
        f = F0
    elif f > F1:
        f = F1
    return i0, f


@njit(inline="always")
def _sample_plane_sum(planes, p, i0, j0, fu, fv, out):
    w00 = (F1 - fu) * (F1 - fv)
    w01 = (F1 - fu) * fv
    w10 = fu * (F1 - fv)
    w11 = fu * fv
    C = planes.shape[3]
    for c in range(C):
        out[c] += (w00 * planes[p, i0, j0, c] + w01 * planes[p, i0, j0 + 1, c]
                   + w10 * planes[p, i0 + 1, j0, c] + w11 * planes[p, i0 + 1, j0 + 1, c])


@njit(inline="always")
def _triplane_features(planes, x, y, z, out):
    Ri = planes.shape[1]
    Rf = np.float32(Ri)
    for c in range(planes.shape[3]):
        out[c] = F0
    ix, fx = _lattice(x, Rf, Ri)
    iy, fy = _lattice(y, Rf, Ri)
    iz, fz = _lattice(z, Rf, Ri)
    _sample_plane_sum(planes, 0, ix, iy, fx, fy, out)
    _sample_plane_sum(planes, 1, ix, iz, fx, fz, out)
    _sample_plane_sum(planes, 2, iy, iz, fy, fz, out)


@njit(inline="always")
def _softplus(x):
    if x > np.float32(20.0):
        return x
    return np.float32(math.log1p(math.exp(x)))


@njit(inline="always")
def _sigmoid(x):
    if x >= F0:
        return F1 / (F1 + np.float32(math.exp(-x)))
    e = np.float32(math.exp(x))
    return e / (F1 + e)


@njit(inline="always")
def _clampc(v):
    if v < -F1:
        return -F1
    if v > F1:
        return F1
    return v


@njit(inline="always")
def _raw_density(planes_a, wa, ba, x, y, z, feat):
    _triplane_features(planes_a, _clampc(x), _clampc(y), _clampc(z), feat)
    raw = ba[0]
    for c in range(planes_a.shape[3]):
        raw += wa[0, c] * (feat[c] * THIRD)
    return raw


@njit(inline="always")
def _stratum(seed, ray_id, k):
    x = (np.uint64(ray_id) * np.uint64(0x100000001B3) + np.uint64(k)
         + (np.uint64(seed) << np.uint64(20)))
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = z ^ (z >> np.uint64(31))
    return np.float32((z >> np.uint64(11)) * (1.0 / 9007199254740992.0))


@njit(inline="always")
def _cell(u, Gh, Gmax):
    g = int((u + F1) * Gh)
    if g > Gmax:
        g = Gmax
    return g


@njit(cache=True, parallel=True, fastmath=True)
def march_fixed(planes_a, planes_s, wa, ba, ws, bs, occ, origins, dirs,
                ray_ids, near, far, spp, stratified, seed, out):
    """Fixed-lighting march: shading comes from the shading tri-plane.

    out rows: (albedo r, albedo g, albedo b, shading_acc, weights_sum,
    depth_acc).
    """
    n_rays = origins.shape[0]
    ca = planes_a.shape[3]
    cs = planes_s.shape[3]
    Ra = planes_a.shape[1]
    Rs = planes_s.shape[1]
    Raf = np.float32(Ra)
    Rsf = np.float32(Rs)
    same_grid = Ra == Rs
    dt = (far - near) / np.float32(spp)
    Gh = np.float32(occ.shape[0]) * FH
    Gmax = occ.shape[0] - 1
    # one frame-level scratch row per ray; per-ray np.empty costs NRT churn
    feat_rows_a = np.empty((n_rays, ca), np.float32)
    feat_rows_s = np.empty((n_rays, cs), np.float32)
    for r in prange(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        feat_a = feat_rows_a[r]
        feat_s = feat_rows_s[r]
        trans = F1
        acc0 = F0
        acc1 = F0
        acc2 = F0
        accs = F0
        accw = F0
        accd = F0
        for k in range(spp):
            if stratified:
                u = _stratum(seed, ray_ids[r], k)
            else:
                u = FH
            t = near + (np.float32(k) + u) * dt
            x = _clampc(ox + t * dx)
            y = _clampc(oy + t * dy)
            z = _clampc(oz + t * dz)
            if occ[_cell(x, Gh, Gmax), _cell(y, Gh, Gmax), _cell(z, Gh, Gmax)] == 0:
                continue
            ix, fx = _lattice(x, Raf, Ra)
            iy, fy = _lattice(y, Raf, Ra)
            iz, fz = _lattice(z, Raf, Ra)
            for c in range(ca):
                feat_a[c] = F0
            _sample_plane_sum(planes_a, 0, ix, iy, fx, fy, feat_a)
            _sample_plane_sum(planes_a, 1, ix, iz, fx, fz, feat_a)
            _sample_plane_sum(planes_a, 2, iy, iz, fy, fz, feat_a)
            raw_sigma = ba[0]
            for c in range(ca):
                raw_sigma += wa[0, c] * (feat_a[c] * THIRD)
            if raw_sigma < SKIP_RAW:
                continue
            a0 = ba[1]
            a1 = ba[2]
            a2 = ba[3]
            for c in range(ca):
                fc = feat_a[c] * THIRD
                a0 += wa[1, c] * fc
                a1 += wa[2, c] * fc
                a2 += wa[3, c] * fc
            for c in range(cs):
                feat_s[c] = F0
            if same_grid:
                _sample_plane_sum(planes_s, 0, ix, iy, fx, fy, feat_s)
                _sample_plane_sum(planes_s, 1, ix, iz, fx, fz, feat_s)
                _sample_plane_sum(planes_s, 2, iy, iz, fy, fz, feat_s)
            else:
                jx, gx = _lattice(x, Rsf, Rs)
                jy, gy = _lattice(y, Rsf, Rs)
                jz, gz = _lattice(z, Rsf, Rs)
                _sample_plane_sum(planes_s, 0, jx, jy, gx, gy, feat_s)
                _sample_plane_sum(planes_s, 1, jx, jz, gx, gz, feat_s)
                _sample_plane_sum(planes_s, 2, jy, jz, gy, gz, feat_s)
            raw_sh = bs[0]
            for c in range(cs):
                raw_sh += ws[0, c] * (feat_s[c] * THIRD)
            sigma = _softplus(raw_sigma)
            alpha = -np.float32(math.expm1(-sigma * dt))
            w = alpha * trans
            acc0 += w * _sigmoid(a0)
            acc1 += w * _sigmoid(a1)
            acc2 += w * _sigmoid(a2)
            accs += w * _softplus(raw_sh)
            accw += w
            accd += w * t
            trans *= F1 - alpha
            if trans < STOP_TRANS:
                break
        out[r, 0] = acc0
        out[r, 1] = acc1
        out[r, 2] = acc2
        out[r, 3] = accs
        out[r, 4] = accw
        out[r, 5] = accd


@njit(cache=True, parallel=True, fastmath=True)
def march_relight(planes_a, planes_s, wa, ba, ws, bs, occ, light, grad_h,
                  origins, dirs, ray_ids, near, far, spp, stratified, seed,
                  out):
    """Analytic-relight march: per-sample Lambertian shading of the density
    normal under the 9 SH coefficients in `light`."""
    n_rays = origins.shape[0]
    ca = planes_a.shape[3]
    Ra = planes_a.shape[1]
    Raf = np.float32(Ra)
    dt = (far - near) / np.float32(spp)
    Gh = np.float32(occ.shape[0]) * FH
    Gmax = occ.shape[0] - 1
    feat_rows_a = np.empty((n_rays, ca), np.float32)
    feat_rows_t = np.empty((n_rays, ca), np.float32)
    for r in prange(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        feat_a = feat_rows_a[r]
        feat_tmp = feat_rows_t[r]
        trans = F1
        acc0 = F0
        acc1 = F0
        acc2 = F0
        accs = F0
        accw = F0
        accd = F0
        for k in range(spp):
            if stratified:
                u = _stratum(seed, ray_ids[r], k)
            else:
                u = FH
            t = near + (np.float32(k) + u) * dt
            x = ox + t * dx
            y = oy + t * dy
            z = oz + t * dz
            # probes below take unclamped coords; cell test wants clamped
            cx = _clampc(x)
            cy = _clampc(y)
            cz = _clampc(z)
            if occ[_cell(cx, Gh, Gmax), _cell(cy, Gh, Gmax), _cell(cz, Gh, Gmax)] == 0:
                continue
            ix, fx = _lattice(cx, Raf, Ra)
            iy, fy = _lattice(cy, Raf, Ra)
            iz, fz = _lattice(cz, Raf, Ra)
            for c in range(ca):
                feat_a[c] = F0
            _sample_plane_sum(planes_a, 0, ix, iy, fx, fy, feat_a)
            _sample_plane_sum(planes_a, 1, ix, iz, fx, fz, feat_a)
            _sample_plane_sum(planes_a, 2, iy, iz, fy, fz, feat_a)
            raw_sigma = ba[0]
            for c in range(ca):
                raw_sigma += wa[0, c] * (feat_a[c] * THIRD)
            if raw_sigma < SKIP_RAW:
                continue
            a0 = ba[1]
            a1 = ba[2]
            a2 = ba[3]
            for c in range(ca):
                fc = feat_a[c] * THIRD
                a0 += wa[1, c] * fc
                a1 += wa[2, c] * fc
                a2 += wa[3, c] * fc
            sigma = _softplus(raw_sigma)
            alpha = -np.float32(math.expm1(-sigma * dt))
            w = alpha * trans
            # central differences of the decoded density
            gx = (_softplus(_raw_density(planes_a, wa, ba, x + grad_h, y, z, feat_tmp))
                  - _softplus(_raw_density(planes_a, wa, ba, x - grad_h, y, z, feat_tmp)))
            gy = (_softplus(_raw_density(planes_a, wa, ba, x, y + grad_h, z, feat_tmp))
                  - _softplus(_raw_density(planes_a, wa, ba, x, y - grad_h, z, feat_tmp)))
            gz = (_softplus(_raw_density(planes_a, wa, ba, x, y, z + grad_h, feat_tmp))
                  - _softplus(_raw_density(planes_a, wa, ba, x, y, z - grad_h, feat_tmp)))
            gn = np.float32(math.sqrt(gx * gx + gy * gy + gz * gz))
            shade = F0
            if gn > np.float32(1e-12):
                nx = -gx / gn
                ny = -gy / gn
                nz = -gz / gn
                s = (light[0] * SH_C0
                     + light[1] * SH_C1 * ny
                     + light[2] * SH_C1 * nz
                     + light[3] * SH_C1 * nx
                     + light[4] * SH_C2 * nx * ny
                     + light[5] * SH_C2 * ny * nz
                     + light[6] * SH_C3 * (np.float32(3.0) * nz * nz - F1)
                     + light[7] * SH_C2 * nx * nz
                     + light[8] * SH_C4 * (nx * nx - ny * ny))
                if s > F0:
                    shade = s
            acc0 += w * _sigmoid(a0)
            acc1 += w * _sigmoid(a1)
            acc2 += w * _sigmoid(a2)
            accs += w * shade
            accw += w
            accd += w * t
            trans *= F1 - alpha
            if trans < STOP_TRANS:
                break
        out[r, 0] = acc0
        out[r, 1] = acc1
        out[r, 2] = acc2
        out[r, 3] = accs
        out[r, 4] = accw
        out[r, 5] = accd
