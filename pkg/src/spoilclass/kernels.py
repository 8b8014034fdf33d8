"""Hot numeric kernels with a numba path and a vectorised numpy path.

Every public function here dispatches on :func:`spoilclass._accel.get_backend`.
Both paths implement the same arithmetic; they are not guaranteed to agree to
the last bit because summation order differs.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import get_backend, njit

TWO_PI = 2.0 * math.pi
ORIENT_STEP = 0.15
ORIENT_WINDOW = math.pi / 3.0


# ---------------------------------------------------------------------------
# integral images and box sums
# ---------------------------------------------------------------------------

def integral_image(gray: np.ndarray) -> np.ndarray:
    """Zero-padded summed-area table, shape ``(H + 1, W + 1)``, float64."""
    gray = np.asarray(gray, dtype=np.float64)
    ii = np.zeros((gray.shape[0] + 1, gray.shape[1] + 1), dtype=np.float64)
    ii[1:, 1:] = gray.cumsum(axis=0).cumsum(axis=1)
    return ii


@njit
def _box_nb(ii, row, col, nrows, ncols):
    h = ii.shape[0] - 1
    w = ii.shape[1] - 1
    r0 = min(max(row, 0), h)
    r1 = min(max(row + nrows, 0), h)
    c0 = min(max(col, 0), w)
    c1 = min(max(col + ncols, 0), w)
    return ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0]


def _box_np(ii, row, col, nrows, ncols):
    h = ii.shape[0] - 1
    w = ii.shape[1] - 1
    r0 = np.clip(row, 0, h)
    r1 = np.clip(row + nrows, 0, h)
    c0 = np.clip(col, 0, w)
    c1 = np.clip(col + ncols, 0, w)
    return ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0]


# ---------------------------------------------------------------------------
# fast-Hessian responses
# ---------------------------------------------------------------------------

@njit
def _hessian_nb(ii, filter_size, step, out_rows, out_cols):
    det = np.zeros((out_rows, out_cols))
    lap = np.zeros((out_rows, out_cols), dtype=np.bool_)
    b = (filter_size - 1) // 2
    lobe = filter_size // 3
    half = lobe // 2
    inv_area = 1.0 / (filter_size * filter_size)
    for i in range(out_rows):
        r = i * step
        for j in range(out_cols):
            c = j * step
            dxx = (_box_nb(ii, r - lobe + 1, c - b, 2 * lobe - 1, filter_size)
                   - 3.0 * _box_nb(ii, r - lobe + 1, c - half, 2 * lobe - 1, lobe))
            dyy = (_box_nb(ii, r - b, c - lobe + 1, filter_size, 2 * lobe - 1)
                   - 3.0 * _box_nb(ii, r - half, c - lobe + 1, lobe, 2 * lobe - 1))
            dxy = (_box_nb(ii, r - lobe, c + 1, lobe, lobe)
                   + _box_nb(ii, r + 1, c - lobe, lobe, lobe)
                   - _box_nb(ii, r - lobe, c - lobe, lobe, lobe)
                   - _box_nb(ii, r + 1, c + 1, lobe, lobe))
            dxx *= inv_area
            dyy *= inv_area
            dxy *= inv_area
            det[i, j] = dxx * dyy - 0.81 * dxy * dxy
            lap[i, j] = (dxx + dyy) >= 0.0
    return det, lap


def _hessian_np(ii, filter_size, step, out_rows, out_cols):
    b = (filter_size - 1) // 2
    lobe = filter_size // 3
    half = lobe // 2
    inv_area = 1.0 / (filter_size * filter_size)
    r = (np.arange(out_rows) * step)[:, None]
    c = (np.arange(out_cols) * step)[None, :]
    r, c = np.broadcast_arrays(r, c)
    dxx = (_box_np(ii, r - lobe + 1, c - b, 2 * lobe - 1, filter_size)
           - 3.0 * _box_np(ii, r - lobe + 1, c - half, 2 * lobe - 1, lobe))
    dyy = (_box_np(ii, r - b, c - lobe + 1, filter_size, 2 * lobe - 1)
           - 3.0 * _box_np(ii, r - half, c - lobe + 1, lobe, 2 * lobe - 1))
    dxy = (_box_np(ii, r - lobe, c + 1, lobe, lobe)
           + _box_np(ii, r + 1, c - lobe, lobe, lobe)
           - _box_np(ii, r - lobe, c - lobe, lobe, lobe)
           - _box_np(ii, r + 1, c + 1, lobe, lobe))
    dxx = dxx * inv_area
    dyy = dyy * inv_area
    dxy = dxy * inv_area
    return dxx * dyy - 0.81 * dxy * dxy, (dxx + dyy) >= 0.0


def hessian_response(ii: np.ndarray, filter_size: int, step: int):
    """Approximate det(Hessian) on a grid sampled every ``step`` pixels.

    Returns ``(det, laplacian_sign)``; grid point ``(i, j)`` sits at pixel
    ``(i * step, j * step)``.
    """
    h = ii.shape[0] - 1
    w = ii.shape[1] - 1
    out_rows = (h - 1) // step + 1
    out_cols = (w - 1) // step + 1
    if get_backend() == "numba":
        return _hessian_nb(ii, int(filter_size), int(step), out_rows, out_cols)
    return _hessian_np(ii, int(filter_size), int(step), out_rows, out_cols)


# ---------------------------------------------------------------------------
# Haar wavelets, orientation and descriptors
# ---------------------------------------------------------------------------

@njit
def _haar_x_nb(ii, row, col, size):
    half = size // 2
    return (_box_nb(ii, row - half, col, size, half)
            - _box_nb(ii, row - half, col - half, size, half))


@njit
def _haar_y_nb(ii, row, col, size):
    half = size // 2
    return (_box_nb(ii, row, col - half, half, size)
            - _box_nb(ii, row - half, col - half, half, size))


def _haar_x_np(ii, row, col, size):
    half = size // 2
    return (_box_np(ii, row - half, col, size, half)
            - _box_np(ii, row - half, col - half, size, half))


def _haar_y_np(ii, row, col, size):
    half = size // 2
    return (_box_np(ii, row, col - half, half, size)
            - _box_np(ii, row - half, col - half, half, size))


def _orientation_offsets():
    offs = [(i, j) for i in range(-6, 7) for j in range(-6, 7) if i * i + j * j < 36]
    arr = np.array(offs, dtype=np.float64)
    weights = np.exp(-(arr[:, 0] ** 2 + arr[:, 1] ** 2) / (2.0 * 2.5 ** 2))
    return arr[:, 0].copy(), arr[:, 1].copy(), weights


_OR_I, _OR_J, _OR_W = _orientation_offsets()
_OR_STARTS = np.arange(0.0, TWO_PI, ORIENT_STEP)


@njit
def _angle_nb(x, y):
    a = math.atan2(y, x)
    if a < 0.0:
        a += 2.0 * math.pi
    return a


@njit
def _orientation_nb(ii, rows, cols, scales, off_i, off_j, off_w, starts, window):
    n = rows.shape[0]
    m = off_i.shape[0]
    out = np.zeros(n)
    resx = np.empty(m)
    resy = np.empty(m)
    ang = np.empty(m)
    for k in range(n):
        s = scales[k]
        size = max(int(math.floor(4.0 * s + 0.5)), 2)
        for q in range(m):
            rr = int(math.floor(rows[k] + off_j[q] * s + 0.5))
            cc = int(math.floor(cols[k] + off_i[q] * s + 0.5))
            resx[q] = off_w[q] * _haar_x_nb(ii, rr, cc, size)
            resy[q] = off_w[q] * _haar_y_nb(ii, rr, cc, size)
            ang[q] = _angle_nb(resx[q], resy[q])
        best = 0.0
        best_x = 0.0
        best_y = 0.0
        for t in range(starts.shape[0]):
            a1 = starts[t]
            a2 = a1 + window
            if a2 > 2.0 * math.pi:
                a2 -= 2.0 * math.pi
            sx = 0.0
            sy = 0.0
            for q in range(m):
                a = ang[q]
                if a1 < a2:
                    inside = a1 < a and a < a2
                else:
                    inside = (a > 0.0 and a < a2) or (a > a1 and a < 2.0 * math.pi)
                if inside:
                    sx += resx[q]
                    sy += resy[q]
            mag = sx * sx + sy * sy
            if mag > best:
                best = mag
                best_x = sx
                best_y = sy
        out[k] = _angle_nb(best_x, best_y)
    return out


def _orientation_np(ii, rows, cols, scales):
    s = scales[:, None]
    size = np.maximum(np.floor(4.0 * scales + 0.5).astype(np.int64), 2)[:, None]
    rr = np.floor(rows[:, None] + _OR_J[None, :] * s + 0.5).astype(np.int64)
    cc = np.floor(cols[:, None] + _OR_I[None, :] * s + 0.5).astype(np.int64)
    resx = _OR_W[None, :] * _haar_x_np(ii, rr, cc, size)
    resy = _OR_W[None, :] * _haar_y_np(ii, rr, cc, size)
    ang = np.arctan2(resy, resx)
    ang = np.where(ang < 0.0, ang + TWO_PI, ang)
    a1 = _OR_STARTS[:, None, None]
    a2 = a1 + ORIENT_WINDOW
    a2 = np.where(a2 > TWO_PI, a2 - TWO_PI, a2)
    a = ang[None, :, :]
    inside = np.where(
        a1 < a2,
        (a1 < a) & (a < a2),
        ((a > 0.0) & (a < a2)) | ((a > a1) & (a < TWO_PI)),
    )
    sx = np.where(inside, resx[None], 0.0).sum(axis=2)
    sy = np.where(inside, resy[None], 0.0).sum(axis=2)
    mag = sx * sx + sy * sy
    # first window attaining a strictly positive maximum, matching the loop
    best = np.argmax(mag, axis=0)
    idx = np.arange(rows.shape[0])
    bx = np.where(mag[best, idx] > 0.0, sx[best, idx], 0.0)
    by = np.where(mag[best, idx] > 0.0, sy[best, idx], 0.0)
    out = np.arctan2(by, bx)
    return np.where(out < 0.0, out + TWO_PI, out)


def dominant_orientation(ii, rows, cols, scales) -> np.ndarray:
    """Dominant gradient angle in ``[0, 2*pi)`` for each keypoint."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    scales = np.ascontiguousarray(scales, dtype=np.float64)
    if rows.size == 0:
        return np.zeros(0)
    if get_backend() == "numba":
        return _orientation_nb(ii, rows, cols, scales, _OR_I, _OR_J, _OR_W,
                               _OR_STARTS, ORIENT_WINDOW)
    return _orientation_np(ii, rows, cols, scales)


def _descriptor_grid():
    u = np.arange(20, dtype=np.float64) - 9.5
    uu, vv = np.meshgrid(u, u, indexing="ij")
    cell = (np.arange(20) // 5)
    ci, cj = np.meshgrid(cell, cell, indexing="ij")
    return uu.ravel(), vv.ravel(), (ci * 4 + cj).ravel().astype(np.int64)


_DG_U, _DG_V, _DG_CELL = _descriptor_grid()


@njit
def _descriptor_nb(ii, rows, cols, scales, angles, grid_u, grid_v, grid_cell):
    n = rows.shape[0]
    out = np.zeros((n, 64))
    for k in range(n):
        s = scales[k]
        co = math.cos(angles[k])
        si = math.sin(angles[k])
        size = max(int(math.floor(2.0 * s + 0.5)), 2)
        for q in range(grid_u.shape[0]):
            u = grid_u[q] * s
            v = grid_v[q] * s
            x = cols[k] + u * co - v * si
            y = rows[k] + u * si + v * co
            rr = int(math.floor(y + 0.5))
            cc = int(math.floor(x + 0.5))
            g = math.exp(-(grid_u[q] * grid_u[q] + grid_v[q] * grid_v[q]) / (2.0 * 3.3 * 3.3))
            dx = _haar_x_nb(ii, rr, cc, size)
            dy = _haar_y_nb(ii, rr, cc, size)
            tx = g * (dx * co + dy * si)
            ty = g * (-dx * si + dy * co)
            base = grid_cell[q] * 4
            out[k, base] += tx
            out[k, base + 1] += ty
            out[k, base + 2] += abs(tx)
            out[k, base + 3] += abs(ty)
        norm = 0.0
        for d in range(64):
            norm += out[k, d] * out[k, d]
        if norm > 0.0:
            norm = math.sqrt(norm)
            for d in range(64):
                out[k, d] /= norm
    return out


def _descriptor_np(ii, rows, cols, scales, angles):
    s = scales[:, None]
    co = np.cos(angles)[:, None]
    si = np.sin(angles)[:, None]
    size = np.maximum(np.floor(2.0 * scales + 0.5).astype(np.int64), 2)[:, None]
    u = _DG_U[None, :] * s
    v = _DG_V[None, :] * s
    x = cols[:, None] + u * co - v * si
    y = rows[:, None] + u * si + v * co
    rr = np.floor(y + 0.5).astype(np.int64)
    cc = np.floor(x + 0.5).astype(np.int64)
    g = np.exp(-(_DG_U ** 2 + _DG_V ** 2) / (2.0 * 3.3 * 3.3))[None, :]
    dx = _haar_x_np(ii, rr, cc, size)
    dy = _haar_y_np(ii, rr, cc, size)
    tx = g * (dx * co + dy * si)
    ty = g * (-dx * si + dy * co)
    n = rows.shape[0]
    out = np.zeros((n, 16, 4))
    for cell in range(16):
        m = _DG_CELL == cell
        out[:, cell, 0] = tx[:, m].sum(axis=1)
        out[:, cell, 1] = ty[:, m].sum(axis=1)
        out[:, cell, 2] = np.abs(tx[:, m]).sum(axis=1)
        out[:, cell, 3] = np.abs(ty[:, m]).sum(axis=1)
    out = out.reshape(n, 64)
    norm = np.sqrt((out ** 2).sum(axis=1, keepdims=True))
    return np.divide(out, norm, out=out, where=norm > 0.0)


def haar_descriptors(ii, rows, cols, scales, angles) -> np.ndarray:
    """64-d oriented Haar-wavelet descriptors, unit L2 norm (zero rows stay zero)."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    scales = np.ascontiguousarray(scales, dtype=np.float64)
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    if rows.size == 0:
        return np.zeros((0, 64))
    if get_backend() == "numba":
        return _descriptor_nb(ii, rows, cols, scales, angles, _DG_U, _DG_V, _DG_CELL)
    return _descriptor_np(ii, rows, cols, scales, angles)


# ---------------------------------------------------------------------------
# nearest centroid (k-means assignment)
# ---------------------------------------------------------------------------

@njit
def _nearest_nb(x, c):
    n = x.shape[0]
    k = c.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    c_sq = np.empty(k)
    for j in range(k):
        c_sq[j] = np.dot(c[j], c[j])
    ct = np.ascontiguousarray(c.T)
    chunk = 1024
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        cross = np.dot(x[start:stop], ct)
        for i in range(start, stop):
            x_sq = np.dot(x[i], x[i])
            best = np.inf
            arg = 0
            for j in range(k):
                d = x_sq - 2.0 * cross[i - start, j] + c_sq[j]
                if d < best:
                    best = d
                    arg = j
            labels[i] = arg
            dist[i] = max(best, 0.0)
    return labels, dist


def _nearest_np(x, c, chunk=4096):
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    c_sq = (c * c).sum(axis=1)
    for start in range(0, n, chunk):
        xb = x[start:start + chunk]
        d2 = (xb * xb).sum(axis=1)[:, None] - 2.0 * xb @ c.T + c_sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        arg = d2.argmin(axis=1)
        labels[start:start + chunk] = arg
        dist[start:start + chunk] = d2[np.arange(xb.shape[0]), arg]
    return labels, dist


def nearest_centroid(x: np.ndarray, centroids: np.ndarray):
    """Index of, and squared distance to, the closest centroid for each row."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    if get_backend() == "numba":
        return _nearest_nb(x, centroids)
    return _nearest_np(x, centroids)


# ---------------------------------------------------------------------------
# k-nearest-neighbour vote
# ---------------------------------------------------------------------------

@njit
def _knn_nb(train, labels, queries, k, n_classes):
    n, d = train.shape
    m = queries.shape[0]
    out = np.empty(m, dtype=np.int64)
    dist = np.empty(n)
    counts = np.zeros(n_classes, dtype=np.int64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(d):
                diff = queries[i, t] - train[j, t]
                acc += diff * diff
            dist[j] = acc
        order = np.argsort(dist, kind="mergesort")
        counts[:] = 0
        for r in range(k):
            counts[labels[order[r]]] += 1
        top = counts.max()
        # among tied classes, the one owning the nearest neighbour wins
        for r in range(k):
            lab = labels[order[r]]
            if counts[lab] == top:
                out[i] = lab
                break
    return out


def _knn_np(train, labels, queries, k, n_classes, chunk=64):
    m = queries.shape[0]
    out = np.empty(m, dtype=np.int64)
    for start in range(0, m, chunk):
        qb = queries[start:start + chunk]
        dist = ((qb[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        near = labels[order]
        counts = np.zeros((qb.shape[0], n_classes), dtype=np.int64)
        np.add.at(counts, (np.arange(qb.shape[0])[:, None], near), 1)
        top = counts.max(axis=1, keepdims=True)
        tied = np.take_along_axis(counts, near, axis=1) == top
        first = tied.argmax(axis=1)
        out[start:start + chunk] = near[np.arange(qb.shape[0]), first]
    return out


def knn_vote(train, labels, queries, k: int, n_classes: int) -> np.ndarray:
    """Majority vote of the ``k`` Euclidean-nearest training rows.

    Ties between classes go to the class of the closest neighbour; equal
    distances are ordered by training index.
    """
    train = np.ascontiguousarray(train, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if queries.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if get_backend() == "numba":
        return _knn_nb(train, labels, queries, int(k), int(n_classes))
    return _knn_np(train, labels, queries, int(k), int(n_classes))


# ---------------------------------------------------------------------------
# confusion tally
# ---------------------------------------------------------------------------

@njit
def _tally_nb(true_idx, pred_idx, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for i in range(true_idx.shape[0]):
        cm[true_idx[i], pred_idx[i]] += 1
    return cm


def confusion_tally(true_idx, pred_idx, n_classes: int) -> np.ndarray:
    true_idx = np.ascontiguousarray(true_idx, dtype=np.int64)
    pred_idx = np.ascontiguousarray(pred_idx, dtype=np.int64)
    if get_backend() == "numba":
        return _tally_nb(true_idx, pred_idx, int(n_classes))
    flat = np.bincount(true_idx * n_classes + pred_idx, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes).astype(np.int64)
