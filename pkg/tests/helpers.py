"""Brute-force oracles and gradient-check plumbing shared by the test modules."""

import numpy as np

from vsdistill import numerics as nx


def conv3d_oracle(x, w, b):
    """Nested-loop same-padded 3-D convolution (cross-correlation)."""
    B, T, Ci, H, W = x.shape
    Co, _, kt, kh, kw = w.shape
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    out = np.zeros((B, T, Co, H, W))
    for bi in range(B):
        for t in range(T):
            for o in range(Co):
                for i in range(H):
                    for j in range(W):
                        acc = b[o]
                        for c in range(Ci):
                            for dt in range(kt):
                                for di in range(kh):
                                    for dj in range(kw):
                                        tt, ii, jj = t + dt - pt, i + di - ph, j + dj - pw
                                        if 0 <= tt < T and 0 <= ii < H and 0 <= jj < W:
                                            acc += w[o, c, dt, di, dj] * x[bi, tt, c, ii, jj]
                        out[bi, t, o, i, j] = acc
    return out


def temporal_conv_oracle(x, k, bias, stride):
    K = len(k)
    T_out = (x.shape[0] - K) // stride + 1
    out = np.zeros((T_out,) + x.shape[1:])
    for t in range(T_out):
        acc = np.full(x.shape[1:], float(bias))
        for j in range(K):
            acc = acc + k[j] * x[t * stride + j]
        out[t] = acc
    return out


def interp_oracle(series, T_out):
    """Scalar linear interpolation of a 1-D series at t*(T_in-1)/(T_out-1)."""
    T_in = len(series)
    if T_in == 1:
        return np.full(T_out, series[0])
    out = np.zeros(T_out)
    for t in range(T_out):
        pos = t * (T_in - 1) / (T_out - 1) if T_out > 1 else 0.0
        lo = int(np.floor(pos))
        hi = min(lo + 1, T_in - 1)
        frac = pos - lo
        out[t] = (1 - frac) * series[lo] + frac * series[hi]
    return out


def resample_oracle(video, T_out):
    flat = video.reshape(video.shape[0], -1)
    out = np.stack([interp_oracle(flat[:, p], T_out) for p in range(flat.shape[1])], axis=1)
    return out.reshape((T_out,) + video.shape[1:])


def mix_oracle(pool, sel_w, sel_b):
    K, T_seg, T_pool = sel_w.shape
    out = np.zeros((K, T_seg) + pool.shape[1:])
    for k in range(K):
        for t in range(T_seg):
            acc = np.full(pool.shape[1:], sel_b[k, t])
            for j in range(T_pool):
                acc = acc + sel_w[k, t, j] * pool[j]
            out[k, t] = acc
    return out


def diversity_oracle(feats):
    """Mean over all pairs k<q of -||u_k - u_q||^2 with row-normalised features."""
    u = [f / max(np.sqrt(sum(v * v for v in f)), 1e-12) for f in np.asarray(feats, dtype=np.float64)]
    K = len(u)
    total, pairs = 0.0, 0
    for k in range(K):
        for q in range(k + 1, K):
            total -= float(sum((a - b) ** 2 for a, b in zip(u[k], u[q])))
            pairs += 1
    return total / pairs if pairs else 0.0


def variance_loop(values):
    m = sum(values) / len(values)
    return sum((v - m) ** 2 for v in values) / len(values)


def temporal_redundancy_oracle(F_t):
    B, t, d = F_t.shape
    per_sample = []
    for b in range(B):
        per_sample.append(sum(variance_loop([F_t[b, s, j] for s in range(t)]) for j in range(d)) / d)
    v = sum(per_sample) / B
    return 1.0 if v == 0 else float(np.tanh(1.0 / v))


def inter_sample_redundancy_oracle(F_IC):
    B, d = F_IC.shape
    v = sum(variance_loop([F_IC[b, j] for b in range(B)]) for j in range(d)) / d
    return 1.0 if v == 0 else float(np.tanh(B / v))


def random_projection_loss(out: nx.Node, rng):
    """Scalar ``sum(out * R)`` with a fixed random ``R`` so every output entry matters."""
    r = rng.standard_normal(out.shape)
    return nx.sum_(nx.mul(out, nx.constant(r)))


def gradient_check(build, arrays, rng, which=None):
    """Compare backward() against central differences for each input array.

    ``build(*nodes)`` returns an output node; returns the worst relative error.
    """
    r_seed = int(rng.integers(1 << 31))
    worst = 0.0
    which = range(len(arrays)) if which is None else which
    for i in which:
        def f(x, i=i):
            xs = [nx.constant(a) for a in arrays]
            xs[i] = nx.constant(x)
            return random_projection_loss(build(*xs), np.random.default_rng(r_seed)).value

        leaves = [nx.leaf(a, requires_grad=(j == i)) for j, a in enumerate(arrays)]
        loss = random_projection_loss(build(*leaves), np.random.default_rng(r_seed))
        nx.backward(loss)
        numeric = nx.finite_difference_gradient(f, arrays[i])
        analytic = leaves[i].grad
        scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-8)
        worst = max(worst, float(np.linalg.norm(numeric - analytic) / scale))
    return worst
