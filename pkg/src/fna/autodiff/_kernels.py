"""Compiled inner loops for depthwise convolution and batch norm.

Loop order is fixed and fastmath stays off, so results do not depend on call
history. Reductions accumulate into per-column rows first (vectorizable
without reassociation) and fold the row in a fixed order at the end.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def dw_forward(xp, taps, stride, ho, wo):
    n_, c_, _, _ = xp.shape
    k = taps.shape[1]
    out = np.zeros((n_, c_, ho, wo), dtype=xp.dtype)
    for n in range(n_):
        for c in range(c_):
            o = out[n, c]
            xs = xp[n, c]
            for i in range(k):
                for j in range(k):
                    t = taps[c, i, j]
                    if t == 0:
                        continue
                    for y in range(ho):
                        r = xs[y * stride + i]
                        orow = o[y]
                        if stride == 1:
                            for x in range(wo):
                                orow[x] += t * r[x + j]
                        else:
                            for x in range(wo):
                                orow[x] += t * r[x * stride + j]
    return out

@njit(cache=True)
def dw_backward(g, xp, taps, stride, need_w, need_x):
    n_, c_, ho, wo = g.shape
    k = taps.shape[1]
    gw = np.zeros(taps.shape if need_w else (0, 0, 0), dtype=xp.dtype)
    gxp = np.zeros(xp.shape if need_x else (0, 0, 0, 0), dtype=xp.dtype)
    acc = np.zeros(wo, dtype=xp.dtype)
    for c in range(c_ if need_w else 0):
        for i in range(k):
            for j in range(k):
                acc[:] = 0
                for n in range(n_):
                    gs = g[n, c]
                    xs = xp[n, c]
                    for y in range(ho):
                        r = xs[y * stride + i]
                        grow = gs[y]
                        if stride == 1:
                            for x in range(wo):
                                acc[x] += grow[x] * r[x + j]
                        else:
                            for x in range(wo):
                                acc[x] += grow[x] * r[x * stride + j]
                s = 0.0
                for x in range(wo):
                    s += acc[x]
                gw[c, i, j] = s
    for n in range(n_ if need_x else 0):
        for c in range(c_):
            gs = g[n, c]
            gx = gxp[n, c]
            for i in range(k):
                for j in range(k):
                    t = taps[c, i, j]
                    if t == 0:
                        continue
                    for y in range(ho):
                        r = gx[y * stride + i]
                        grow = gs[y]
                        if stride == 1:
                            for x in range(wo):
                                r[x + j] += grow[x] * t
                        else:
                            for x in range(wo):
                                r[x * stride + j] += grow[x] * t
    return gw, gxp


@njit(cache=True)
def _channel_sums(x3, c):
    # x3: [N, C, HW]
    n_, _, m_ = x3.shape
    acc = np.zeros(m_, dtype=np.float64)
    for n in range(n_):
        row = x3[n, c]
        for z in range(m_):
            acc[z] += row[z]
    s = 0.0
    for z in range(m_):
        s += acc[z]
    return s


@njit(cache=True)
def bn_train_forward(x, gamma, beta, eps):
    n_, c_, h_, w_ = x.shape
    x3 = x.reshape(n_, c_, h_ * w_)
    m_ = h_ * w_
    m = n_ * m_
    mu = np.zeros(c_, dtype=np.float64)
    var = np.zeros(c_, dtype=np.float64)
    acc = np.zeros(m_, dtype=np.float64)
    for c in range(c_):
        mu[c] = _channel_sums(x3, c) / m
        acc[:] = 0.0
        b = mu[c]
        for n in range(n_):
            row = x3[n, c]
            for z in range(m_):
                d = row[z] - b
                acc[z] += d * d
        s2 = 0.0
        for z in range(m_):
            s2 += acc[z]
        var[c] = s2 / m
    inv = 1.0 / np.sqrt(var + eps)
    xhat = np.empty_like(x3)
    out = np.empty_like(x3)
    for n in range(n_):
        for c in range(c_):
            a = x.dtype.type(inv[c])
            b = x.dtype.type(mu[c])
            gm = gamma[c]
            bt = beta[c]
            row = x3[n, c]
            hrow = xhat[n, c]
            orow = out[n, c]
            for z in range(m_):
                v = (row[z] - b) * a
                hrow[z] = v
                orow[z] = gm * v + bt
    return out.reshape(x.shape), xhat.reshape(x.shape), mu, var, inv


@njit(cache=True)
def bn_train_backward(g, xhat, gamma, inv):
    n_, c_, h_, w_ = g.shape
    m_ = h_ * w_
    m = n_ * m_
    g3 = g.reshape(n_, c_, m_)
    h3 = xhat.reshape(n_, c_, m_)
    gx = np.empty_like(g3)
    gg = np.zeros(c_, dtype=g.dtype)
    gb = np.zeros(c_, dtype=g.dtype)
    acc_g = np.zeros(m_, dtype=g.dtype)
    acc_gx = np.zeros(m_, dtype=g.dtype)
    for c in range(c_):
        acc_g[:] = 0
        acc_gx[:] = 0
        for n in range(n_):
            grow = g3[n, c]
            hrow = h3[n, c]
            for z in range(m_):
                acc_g[z] += grow[z]
                acc_gx[z] += grow[z] * hrow[z]
        sg = 0.0
        sgx = 0.0
        for z in range(m_):
            sg += acc_g[z]
            sgx += acc_gx[z]
        gb[c] = sg
        gg[c] = sgx
        scale = g.dtype.type(gamma[c] * inv[c] / m)
        fm = g.dtype.type(m)
        fsg = g.dtype.type(sg)
        fsgx = g.dtype.type(sgx)
        for n in range(n_):
            grow = g3[n, c]
            hrow = h3[n, c]
            orow = gx[n, c]
            for z in range(m_):
                orow[z] = scale * (fm * grow[z] - fsg - hrow[z] * fsgx)
    return gx.reshape(g.shape), gg, gb


@njit(cache=True)
def relu6_forward(x):
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    lo = x.dtype.type(0)
    hi = x.dtype.type(6)
    for z in range(flat.size):
        v = flat[z]
        out[z] = lo if v < lo else (hi if v > hi else v)
    return out.reshape(x.shape)


@njit(cache=True)
def relu6_backward(g, x):
    gf = g.reshape(-1)
    xf = x.reshape(-1)
    out = np.empty_like(gf)
    zero = g.dtype.type(0)
    for z in range(gf.size):
        v = xf[z]
        out[z] = gf[z] if (v > 0 and v < 6) else zero
    return out.reshape(g.shape)
