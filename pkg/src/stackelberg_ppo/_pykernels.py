"""Pure-Python reference implementations of the sequential inner loops.

These are the fallback when the compiled ``_ckernels`` extension is not
available, and the ground truth the compiled versions are tested against.
"""

import math

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def gae_segments(rewards, values, bootstrap, counts, gamma, lam):
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    bootstrap = np.ascontiguousarray(bootstrap, dtype=np.float64)
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    adv = np.empty_like(rewards)
    r, v, out = rewards.tolist(), values.tolist(), [0.0] * len(rewards)
    offset = 0
    for i, c in enumerate(counts.tolist()):
        acc = 0.0
        next_v = float(bootstrap[i])
        for j in range(offset + c - 1, offset - 1, -1):
            delta = r[j] + gamma * next_v - v[j]
            acc = delta + gamma * lam * acc
            out[j] = acc
            next_v = v[j]
        offset += c
    adv[:] = out
    return adv


def chainwalker_rollout(weights, bias, log_std, morph_feats, mass, gain, noise, dt, effort_weight, force_limit):
    """Simulate one ChainWalker follower phase under a 1-D linear Gaussian policy.

    Observation layout is ``(v, *morph_feats)``.  Returns positions,
    velocities (length ``H + 1``), actions, rewards and log-probs (length ``H``).
    """
    w = [float(x) for x in weights]
    mf = [float(x) for x in morph_feats]
    z = [float(x) for x in noise]
    horizon = len(z)
    std = math.exp(log_std)
    const = bias
    for i in range(len(mf)):
        const += w[i + 1] * mf[i]
    xs = [0.0] * (horizon + 1)
    vs = [0.0] * (horizon + 1)
    acts = [0.0] * horizon
    rews = [0.0] * horizon
    lps = [0.0] * horizon
    x = 0.0
    v = 0.0
    accel = dt * gain / mass
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
    return np.array(xs), np.array(vs), np.array(acts), np.array(rews), np.array(lps)
