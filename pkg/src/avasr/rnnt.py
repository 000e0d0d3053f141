"""RNN-T transducer loss: log-space forward/backward dynamic programming
over the T x (U+1) lattice, with gradients from the beta recursion.

Blank id is 0. alpha[t][u] is the log-probability of consuming t frames and
emitting the first u labels; beta[t][u] the log-probability of completing
from node (t, u). The total path probability satisfies
alpha[T-1][U] + blank(T-1, U) == beta[0][0].
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError, InputError
from .tensor import Tensor, _apply

BLANK = 0

# normalization check tolerance; stated for double, relaxed for single
_NORM_TOL = {np.dtype(np.float64): 1e-6, np.dtype(np.float32): 1e-4}


def check_log_probs_normalized(log_probs: np.ndarray) -> None:
    tol = _NORM_TOL.get(log_probs.dtype, 1e-6)
    m = log_probs.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(log_probs - m).sum(axis=-1))
    worst = float(np.max(np.abs(lse)))
    if worst > tol:
        raise ContractError(
            f"joint outputs are not log-softmaxed (max |logsumexp| = {worst:.3e})")


def transducer_alpha(log_probs: np.ndarray, labels) -> np.ndarray:
    t_len, u_plus_1, _ = log_probs.shape
    u_len = u_plus_1 - 1
    alpha = np.full((t_len, u_plus_1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(t_len):
        for u in range(u_len + 1):
            if t == 0 and u == 0:
                continue
            terms = []
            if t > 0:
                terms.append(alpha[t - 1, u] + log_probs[t - 1, u, BLANK])
            if u > 0:
                terms.append(alpha[t, u - 1] + log_probs[t, u - 1, labels[u - 1]])
            alpha[t, u] = np.logaddexp.reduce(terms) if terms else -np.inf
    return alpha


def transducer_beta(log_probs: np.ndarray, labels) -> np.ndarray:
    """(T+1, U+1) completion log-probabilities; beta[T][U] = 0 is the
    virtual terminal reached by the final blank."""
    t_len, u_plus_1, _ = log_probs.shape
    u_len = u_plus_1 - 1
    beta = np.full((t_len + 1, u_plus_1), -np.inf)
    beta[t_len, u_len] = 0.0
    for t in range(t_len - 1, -1, -1):
        for u in range(u_len, -1, -1):
            blank_term = log_probs[t, u, BLANK] + beta[t + 1, u]
            if u < u_len:
                label_term = log_probs[t, u, labels[u]] + beta[t, u + 1]
                beta[t, u] = np.logaddexp(blank_term, label_term)
            else:
                beta[t, u] = blank_term
    return beta


def transducer_loss_grad(log_probs: np.ndarray, labels):
    """Single-lattice loss and gradient w.r.t. the log-probabilities.

    Returns (loss, grad, loss_from_beta); loss is computed from the alpha
    recursion, the gradient from posterior arc occupancies via beta.
    """
    labels = [int(v) for v in labels]
    t_len, u_plus_1, _ = log_probs.shape
    u_len = u_plus_1 - 1
    if len(labels) != u_len:
        raise InputError(f"labels length {len(labels)} != U {u_len}")
    if any(v == BLANK for v in labels):
        raise InputError("blank id inside a label sequence")
    lp = log_probs.astype(np.float64, copy=False)
    alpha = transducer_alpha(lp, labels)
    beta = transducer_beta(lp, labels)
    loss_alpha = -(alpha[t_len - 1, u_len] + lp[t_len - 1, u_len, BLANK])
    loss_beta = -beta[0, 0]
    log_z = beta[0, 0]
    grad = np.zeros_like(lp)
    for t in range(t_len):
        for u in range(u_len + 1):
            occ_blank = alpha[t, u] + lp[t, u, BLANK] + beta[t + 1, u] - log_z
            grad[t, u, BLANK] -= np.exp(occ_blank)
            if u < u_len:
                occ_label = alpha[t, u] + lp[t, u, labels[u]] + beta[t, u + 1] - log_z
                grad[t, u, labels[u]] -= np.exp(occ_label)
    return loss_alpha, grad.astype(log_probs.dtype, copy=False), loss_beta


class RnntLossBatch:
    """Per-utterance transducer losses over a padded (B, T, U+1, V) lattice.
    Lattice nodes beyond (t_lens[b], u_lens[b]) receive zero gradient.
    Cost: 12 pointwise FLOPs per padded lattice node."""

    @staticmethod
    def forward(ctx, log_probs, labels, t_lens, u_lens):
        check_log_probs_normalized(log_probs)
        b = log_probs.shape[0]
        losses = np.zeros(b, dtype=log_probs.dtype)
        grads = np.zeros_like(log_probs)
        for i in range(b):
            t_len, u_len = int(t_lens[i]), int(u_lens[i])
            if t_len < 1:
                raise InputError(f"utterance {i}: T must be >= 1")
            sub = log_probs[i, :t_len, :u_len + 1, :]
            loss, grad, _ = transducer_loss_grad(sub, labels[i][:u_len])
            losses[i] = loss
            grads[i, :t_len, :u_len + 1, :] = grad
        ctx["grads"] = grads
        return losses

    @staticmethod
    def backward(ctx, g, labels, t_lens, u_lens):
        return (ctx["grads"] * g[:, None, None, None],)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        b, t_len, u_plus_1, _ = in_shapes[0]
        return 0, 12 * b * t_len * u_plus_1


def rnnt_loss_batch(log_probs: Tensor, labels, t_lens, u_lens) -> Tensor:
    """(B,) per-utterance losses; labels is a list of int sequences."""
    return _apply(RnntLossBatch, (log_probs,), labels=[list(map(int, l)) for l in labels],
                  t_lens=list(map(int, t_lens)), u_lens=list(map(int, u_lens)))


def rnnt_loss(log_probs: Tensor, labels) -> Tensor:
    """Scalar loss for a single (T, U+1, V) lattice."""
    t_len, u_plus_1, v = log_probs.shape
    batched = T.reshape(log_probs, (1, t_len, u_plus_1, v))
    losses = rnnt_loss_batch(batched, [labels], [t_len], [u_plus_1 - 1])
    return T.reshape(losses, ())
