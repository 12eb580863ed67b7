# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loops in ``_pykernels``; same signatures and semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, M_PI

cnp.import_array()

cdef double HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)


def gae_segments(rewards, values, bootstrap, counts, double gamma, double lam):
    cdef const double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[::1] boot = np.ascontiguousarray(bootstrap, dtype=np.float64)
    cdef const long long[::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    out = np.empty(r.shape[0], dtype=np.float64)
    cdef double[::1] adv = out
    cdef Py_ssize_t i, j, offset = 0
    cdef long long c
    cdef double acc, next_v, delta
    for i in range(cnt.shape[0]):
        c = cnt[i]
        acc = 0.0
        next_v = boot[i]
        j = offset + c - 1
        while j >= offset:
            delta = r[j] + gamma * next_v - v[j]
            acc = delta + gamma * lam * acc
            adv[j] = acc
            next_v = v[j]
            j -= 1
        offset += c
    return out


def chainwalker_rollout(weights, double bias, double log_std, morph_feats, double mass,
                        double gain, noise, double dt, double effort_weight, double force_limit):
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[::1] mf = np.ascontiguousarray(morph_feats, dtype=np.float64)
    cdef const double[::1] z = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t horizon = z.shape[0], k, i
    xs_a = np.zeros(horizon + 1)
    vs_a = np.zeros(horizon + 1)
    acts_a = np.empty(horizon)
    rews_a = np.empty(horizon)
    lps_a = np.empty(horizon)
    cdef double[::1] xs = xs_a, vs = vs_a, acts = acts_a, rews = rews_a, lps = lps_a
    cdef double std = exp(log_std)
    cdef double const = bias
    for i in range(mf.shape[0]):
        const += w[i + 1] * mf[i]
    cdef double x = 0.0, v = 0.0, mean, a, zz, f, x_new
    cdef double accel = dt * gain / mass
    for k in range(horizon):
        mean = w[0] * v + const
        a = mean + std * z[k]
        zz = (a - mean) / std
        lps[k] = -0.5 * zz * zz - log_std - HALF_LOG_2PI
        f = a
        if force_limit > 0.0:
            if f > force_limit:
                f = force_limit
            elif f < -force_limit:
                f = -force_limit
        x_new = x + dt * v
        rews[k] = (x_new - x) / dt - effort_weight * a * a
        v = v + accel * f
        x = x_new
        xs[k + 1] = x
        vs[k + 1] = v
        acts[k] = a
    return xs_a, vs_a, acts_a, rews_a, lps_a
