"""Shared test oracles: brute-force reference implementations and a central
finite-difference gradient checker. These deliberately avoid the library's
own kernels so the two routes stay independent."""

import numpy as np

FD_EPS = 1e-5
FD_TOL = 1e-5


def _central(fn, flat, i, eps):
    orig = flat[i]
    flat[i] = orig + eps
    fp = fn()
    flat[i] = orig - eps
    fm = fn()
    flat[i] = orig
    return (fp - fm) / (2.0 * eps)


def numeric_grad(fn, tensor, eps=FD_EPS, indices=None, refine=False):
    """Central finite differences of scalar fn() w.r.t. tensor.data.

    fn re-evaluates the loss from the tensor's current contents. If
    `indices` (flat) is given, only those coordinates are probed and a dict
    {flat_index: derivative} is returned; otherwise a full array.

    With refine=True each probe is validated by comparing the eps and eps/2
    estimates; probes that disagree straddle a non-smooth point (ReLU or
    max-pool kink), where central differences are not a valid oracle, and
    are reported as None.
    """
    flat = tensor.data.reshape(-1)
    if indices is None:
        out = np.zeros_like(flat)
        probe = range(flat.size)
    else:
        out = {}
        probe = indices
    for i in probe:
        d = _central(fn, flat, i, eps)
        if refine:
            d_half = _central(fn, flat, i, eps / 2.0)
            if abs(d - d_half) > 1e-3 * max(1.0, abs(d_half)):
                d = None  # kink inside the probe interval
            else:
                d = d_half
        if indices is None:
            out[i] = d if d is not None else np.nan
        else:
            out[int(i)] = d
    if indices is None:
        return out.reshape(tensor.data.shape)
    return out


def rel_close(a, n, tol=FD_TOL):
    """Relative closeness used for all gradient checks: |a-n| within
    tol * max(1, |a|, |n|)."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.all(np.abs(a - n) <= tol * np.maximum(1.0, np.maximum(np.abs(a), np.abs(n))))


def check_grad(make_loss, params, rng, n_probe=12, tol=FD_TOL, refine=False):
    """Compare analytic gradients against finite differences on a random
    subset of coordinates of every tensor in `params`.

    make_loss() must run a fresh forward pass under a fresh graph and return
    (loss_value: float, grads: dict id(tensor) -> ndarray). With refine=True,
    probes straddling non-smooth points are discarded (at most half may be).
    """
    _, grads = make_loss()

    def scalar():
        v, _ = make_loss()
        return v

    total, skipped = 0, 0
    for t in params:
        analytic = grads[id(t)]
        size = t.data.size
        idx = np.arange(size) if size <= n_probe else rng.choice(size, size=n_probe, replace=False)
        numeric = numeric_grad(scalar, t, indices=idx, refine=refine)
        for i, nv in numeric.items():
            total += 1
            if nv is None:
                skipped += 1
                continue
            av = analytic.reshape(-1)[i]
            assert rel_close(av, nv, tol), (
                f"grad mismatch at flat index {i}: analytic {av!r} vs numeric {nv!r}")
    assert skipped <= total // 2, f"too many non-smooth probes ({skipped}/{total})"


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += float(a[i, p]) * float(b[p, j])
            out[i, j] = s
    return out


def loop_conv_spatial(x, k):
    """Direct 6-nested-loop [1,kh,kw] convolution, zero same-padding."""
    b, t, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((b, t, h, w, cout), dtype=np.float64)
    for bi in range(b):
        for ti in range(t):
            for y in range(h):
                for xx in range(w):
                    for co in range(cout):
                        s = 0.0
                        for dy in range(kh):
                            for dx in range(kw):
                                yy, xx2 = y + dy - ph, xx + dx - pw
                                if 0 <= yy < h and 0 <= xx2 < w:
                                    for ci in range(cin):
                                        s += float(x[bi, ti, yy, xx2, ci]) * float(k[dy, dx, ci, co])
                        out[bi, ti, y, xx, co] = s
    return out


def loop_conv_temporal(x, k):
    """Direct nested-loop [kt,1,1] convolution along T, edge-replicated
    same-padding."""
    b, t, h, w, cin = x.shape
    kt, _, cout = k.shape
    pt = (kt - 1) // 2
    out = np.zeros((b, t, h, w, cout), dtype=np.float64)
    for bi in range(b):
        for ti in range(t):
            for y in range(h):
                for xx in range(w):
                    for co in range(cout):
                        s = 0.0
                        for dt in range(kt):
                            tt = min(max(ti + dt - pt, 0), t - 1)
                            for ci in range(cin):
                                s += float(x[bi, tt, y, xx, ci]) * float(k[dt, ci, co])
                        out[bi, ti, y, xx, co] = s
    return out


def loop_maxpool(x):
    """Windowed-loop 2x2/stride-2 max over H, W of (B,T,H,W,C)."""
    b, t, h, w, c = x.shape
    out = np.zeros((b, t, h // 2, w // 2, c), dtype=x.dtype)
    for bi in range(b):
        for ti in range(t):
            for y in range(h // 2):
                for xx in range(w // 2):
                    for ci in range(c):
                        out[bi, ti, y, xx, ci] = max(
                            x[bi, ti, 2 * y, 2 * xx, ci],
                            x[bi, ti, 2 * y, 2 * xx + 1, ci],
                            x[bi, ti, 2 * y + 1, 2 * xx, ci],
                            x[bi, ti, 2 * y + 1, 2 * xx + 1, ci],
                        )
    return out


def enumerate_transducer_paths(log_probs, labels):
    """Brute-force RNN-T loss: sum probability over every monotone alignment
    of `labels` (length U) against T frames by explicit path enumeration.

    log_probs: (T, U+1, V) log-softmaxed joint outputs; blank id 0.
    Returns -log(total probability).
    """
    t_len, u_plus_1, _ = log_probs.shape
    u_len = u_plus_1 - 1
    assert len(labels) == u_len
    total = []

    def walk(t, u, acc):
        if t == t_len - 1 and u == u_len:
            total.append(acc + log_probs[t, u, 0])
            return
        if t < t_len - 1:
            walk(t + 1, u, acc + log_probs[t, u, 0])
        if u < u_len:
            walk(t, u + 1, acc + log_probs[t, u, labels[u]])

    walk(0, 0, 0.0)
    m = max(total)
    return -(m + np.log(np.sum(np.exp(np.array(total) - m))))
