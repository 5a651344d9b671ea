r"""Stacked bidirectional GRU with a linear log-softmax head, in plain numpy.

Gate convention (reset applied to the previous state before the recurrent
product, update gate interpolating toward the candidate):

.. math::

    z_t &= \sigma(W_z x_t + U_z h_{t-1} + b_z) \\
    r_t &= \sigma(W_r x_t + U_r h_{t-1} + b_r) \\
    n_t &= \tanh(W_n x_t + U_n (r_t \odot h_{t-1}) + b_n) \\
    h_t &= (1 - z_t) \odot h_{t-1} + z_t \odot n_t

Per direction a layer stores ``W`` (in, 3H), ``U`` (H, 3H) and ``b`` (3H,)
with gate blocks ordered z, r, n. Batches are time-major (T, B, D) and padded
at the end; the backward direction reverses each sequence within its own
length, so padding never leaks into valid frames.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .exceptions import ParameterError

DIRECTIONS = ("fwd", "bwd")


def parameter_shapes(input_dim, hidden, n_layers, output_dim, bidirectional=True) -> dict:
    shapes = {}
    dirs = DIRECTIONS if bidirectional else DIRECTIONS[:1]
    width = len(dirs) * hidden
    for layer in range(n_layers):
        in_dim = input_dim if layer == 0 else width
        for d in dirs:
            shapes[f"l{layer}.{d}.W"] = (in_dim, 3 * hidden)
            shapes[f"l{layer}.{d}.U"] = (hidden, 3 * hidden)
            shapes[f"l{layer}.{d}.b"] = (3 * hidden,)
    shapes["out.W"] = (width, output_dim)
    shapes["out.b"] = (output_dim,)
    return shapes


def parameter_count(input_dim, hidden, n_layers, output_dim, bidirectional=True) -> int:
    """Closed form: per layer and direction 3H(in + H + 1), plus the head."""
    n_dir = 2 if bidirectional else 1
    total = 0
    for layer in range(n_layers):
        in_dim = input_dim if layer == 0 else n_dir * hidden
        total += n_dir * 3 * hidden * (in_dim + hidden + 1)
    return total + (n_dir * hidden + 1) * output_dim


def init_params(input_dim, hidden, n_layers, output_dim, bidirectional=True, seed=0) -> dict:
    """Uniform(-1/sqrt(fan), 1/sqrt(fan)) init, fan = H for GRU blocks and 2H for the head."""
    rng = np.random.default_rng(seed)
    params = {}
    head_fan = (2 if bidirectional else 1) * hidden
    for name, shape in parameter_shapes(input_dim, hidden, n_layers, output_dim,
                                         bidirectional).items():
        bound = 1.0 / np.sqrt(head_fan if name.startswith("out.") else hidden)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def infer_architecture(params) -> dict:
    layers = sorted({int(k.split(".")[0][1:]) for k in params if k.startswith("l")})
    hidden = params["l0.fwd.U"].shape[0]
    return {
        "n_layers": len(layers),
        "hidden": hidden,
        "input_dim": params["l0.fwd.W"].shape[0],
        "output_dim": params["out.W"].shape[1],
        "bidirectional": "l0.bwd.W" in params,
    }


# ---------------------------------------------------------------------------
# single-direction GRU


def gru_forward(x, W, U, b):
    """Run one GRU direction over time-major ``x`` (T, B, I) from a zero state."""
    T, B, _ = x.shape
    H = U.shape[0]
    xp = x @ W + b
    U_zr, U_n = U[:, :2 * H], U[:, 2 * H:]
    hs = np.empty((T, B, H))
    zs = np.empty((T, B, H))
    rs = np.empty((T, B, H))
    ns = np.empty((T, B, H))
    h = np.zeros((B, H))
    for t in range(T):
        zr = expit(xp[t, :, :2 * H] + h @ U_zr)
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(xp[t, :, 2 * H:] + (r * h) @ U_n)
        h = (1.0 - z) * h + z * n
        hs[t], zs[t], rs[t], ns[t] = h, z, r, n
    return hs, (x, hs, zs, rs, ns)


def gru_backward(dhs, cache, W, U):
    """Backpropagate ``dL/dh_t`` (T, B, H) through time; returns dx, dW, dU, db."""
    x, hs, zs, rs, ns = cache
    T, B, H = hs.shape
    U_zr, U_n = U[:, :2 * H], U[:, 2 * H:]
    dxp = np.empty((T, B, 3 * H))
    dU_zr = np.zeros_like(U_zr)
    dU_n = np.zeros_like(U_n)
    dh_next = np.zeros((B, H))
    zero = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else zero
        z, r, n = zs[t], rs[t], ns[t]
        dh = dhs[t] + dh_next
        dz = dh * (n - h_prev)
        dan = dh * z * (1.0 - n * n)
        dh_prev = dh * (1.0 - z)
        rh = r * h_prev
        dU_n += rh.T @ dan
        drh = dan @ U_n.T
        dh_prev += drh * r
        dar = drh * h_prev * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dazr = np.concatenate([daz, dar], axis=1)
        dU_zr += h_prev.T @ dazr
        dh_prev += dazr @ U_zr.T
        dxp[t, :, :2 * H] = dazr
        dxp[t, :, 2 * H:] = dan
        dh_next = dh_prev
    flat = dxp.reshape(-1, 3 * H)
    dW = x.reshape(-1, x.shape[-1]).T @ flat
    db = flat.sum(axis=0)
    dx = dxp @ W.T
    return dx, dW, np.concatenate([dU_zr, dU_n], axis=1), db


# ---------------------------------------------------------------------------
# full network


def _reverse_index(lengths, T):
    t = np.arange(T)[:, None]
    L = np.asarray(lengths)[None, :]
    return np.where(t < L, L - 1 - t, t)


def _reverse(x, rev_idx):
    return x[rev_idx, np.arange(x.shape[1])[None, :]]


def network_forward(params, x, lengths=None):
    """Log-probabilities (T, B, O) for a padded time-major batch ``x`` (T, B, I).

    Returns ``(log_probs, cache)``; pass the cache to :func:`network_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, None, :]
    T, B, I = x.shape
    arch = infer_architecture(params)
    if I != arch["input_dim"]:
        raise ParameterError(f"input has {I} features, model expects {arch['input_dim']}")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    rev_idx = _reverse_index(lengths, T)
    caches = []
    inp = x
    for layer in range(arch["n_layers"]):
        p = f"l{layer}."
        hf, cf = gru_forward(inp, params[p + "fwd.W"], params[p + "fwd.U"], params[p + "fwd.b"])
        if arch["bidirectional"]:
            hb, cb = gru_forward(_reverse(inp, rev_idx), params[p + "bwd.W"],
                                 params[p + "bwd.U"], params[p + "bwd.b"])
            out = np.concatenate([hf, _reverse(hb, rev_idx)], axis=-1)
        else:
            cb, out = None, hf
        caches.append((cf, cb))
        inp = out
    logits = inp @ params["out.W"] + params["out.b"]
    m = logits.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    log_probs = logits - lse
    return log_probs, (caches, inp, log_probs, rev_idx, arch)


def network_backward(params, cache, dlog_probs) -> dict:
    """Parameter gradients given ``dL/dlog_probs`` (T, B, O); zero rows at padding."""
    caches, top, log_probs, rev_idx, arch = cache
    dlog_probs = np.asarray(dlog_probs, dtype=np.float64)
    if dlog_probs.ndim == 2:
        dlog_probs = dlog_probs[:, None, :]
    probs = np.exp(log_probs)
    dlogits = dlog_probs - probs * dlog_probs.sum(axis=-1, keepdims=True)
    O = dlogits.shape[-1]
    grads = {
        "out.W": top.reshape(-1, top.shape[-1]).T @ dlogits.reshape(-1, O),
        "out.b": dlogits.reshape(-1, O).sum(axis=0),
    }
    dinp = dlogits @ params["out.W"].T
    H = arch["hidden"]
    for layer in range(arch["n_layers"] - 1, -1, -1):
        p = f"l{layer}."
        cf, cb = caches[layer]
        dx, grads[p + "fwd.W"], grads[p + "fwd.U"], grads[p + "fwd.b"] = gru_backward(
            dinp[..., :H], cf, params[p + "fwd.W"], params[p + "fwd.U"])
        if arch["bidirectional"]:
            dxb, grads[p + "bwd.W"], grads[p + "bwd.U"], grads[p + "bwd.b"] = gru_backward(
                _reverse(dinp[..., H:], rev_idx), cb, params[p + "bwd.W"], params[p + "bwd.U"])
            dx = dx + _reverse(dxb, rev_idx)
        dinp = dx
    return grads


def pad_batch(sequences):
    """Stack (T_i, D) arrays into a zero-padded time-major (T_max, B, D) batch."""
    lengths = np.array([len(s) for s in sequences])
    T = int(lengths.max())
    batch = np.zeros((T, len(sequences), sequences[0].shape[1]))
    for i, s in enumerate(sequences):
        batch[:len(s), i] = s
    return batch, lengths


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state: AdamState, lr=1e-3, weight_decay=0.0,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with decoupled weight decay."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ParameterError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def clip_gradients(grads, max_norm):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
