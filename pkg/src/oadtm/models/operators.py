"""Temporal modeling operators.

Every operator takes a window ``F`` of shape ``[L, d]`` or a batch of windows
``[B, L, d]`` and returns either a same-length sequence or one vector per
window.  Parameters are passed in as :class:`DiffTensor` objects; weight
matrices are stored input-major (``x @ W``).
"""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError, ContractError, DimensionError

WINDOW_NORM_EPS = 1e-5


def _batched(F):
    if F.ndim == 2:
        return ad.reshape(F, (1,) + F.shape), True
    if F.ndim == 3:
        return F, False
    raise DimensionError(f"expected a [L, d] window or [B, L, d] batch, got shape {F.shape}")


def _unbatch(x, squeeze):
    return ad.reshape(x, x.shape[1:]) if squeeze else x


def _check_nonempty(F):
    if F.shape[-2] < 1:
        raise ContractError("empty window")


def linear(x, W, b=None):
    y = ad.matmul(x, W)
    return y if b is None else ad.add(y, b)


# --- temporal pooling -----------------------------------------------------


def pool_forward(kind, F):
    """Average or max over the temporal axis: ``[.., L, d] -> [.., d]``."""
    _check_nonempty(F)
    if kind in ("avg", "avgpool"):
        return ad.mean(F, axis=-2)
    if kind in ("max", "maxpool"):
        return ad.max_reduce(F, axis=-2)
    raise ValueError(f"unknown pooling kind {kind!r}")


# --- temporal convolution -------------------------------------------------


def causal_conv(F, W, b, rate):
    """Dilated causal convolution.

    ``W`` stacks the ``s`` tap matrices row-wise, tap ``i`` (rows
    ``i*d_in:(i+1)*d_in``) reading frame ``t - rate*i``; frames before the
    window start are zero.
    """
    d_in = F.shape[-1]
    if W.shape[0] % d_in:
        raise DimensionError(f"kernel rows {W.shape[0]} are not a multiple of input dim {d_in}")
    taps = [ad.shift(F, rate * i, axis=-2) for i in range(W.shape[0] // d_in)]
    x = taps[0] if len(taps) == 1 else ad.concat(taps, axis=-1)
    return linear(x, W, b)


def tc_forward(F, r, W, b):
    """Single dilated causal convolution; output length equals input length."""
    if r < 1:
        raise ValueError("dilation rate must be >= 1")
    return causal_conv(F, W, b, r)


def pdc_forward(F, rates, branches, reduce_W, reduce_b):
    """Parallel dilated branches, concatenated per frame, then a 1x1 reduction.

    ``branches`` is a list of ``(W, b)`` pairs, one per rate.
    """
    if not rates:
        raise ConfigError("PDC needs at least one dilation rate")
    if len(branches) != len(rates):
        raise ConfigError(f"{len(rates)} rates but {len(branches)} branches")
    outs = [causal_conv(F, W, b, r) for r, (W, b) in zip(rates, branches)]
    cat = outs[0] if len(outs) == 1 else ad.concat(outs, axis=-1)
    return linear(cat, reduce_W, reduce_b)


def dcc_forward(F, layers, dropout=0.0, rng=None):
    """Stacked dilated causal convolutions with learned 1x1 residual maps.

    Each entry of ``layers`` is a mapping with ``W``, ``b`` (the dilated
    convolution), ``W_res``, ``b_res`` (the residual map) and ``rate``.
    """
    x = F
    for layer in layers:
        h = ad.relu(causal_conv(x, layer["W"], layer["b"], layer["rate"]))
        h = ad.dropout(h, dropout, rng)
        x = ad.add(h, linear(x, layer["W_res"], layer["b_res"]))
    return x


# --- recurrent ------------------------------------------------------------


def _as_rows(x):
    return (ad.reshape(x, (1,) + x.shape), True) if x.ndim == 1 else (x, False)


def lstm_cell(f, h_prev, c_prev, p):
    """One LSTM step with diagonal peepholes.

    ``p`` maps ``W_*`` (input), ``U_*`` (recurrent), ``V_*`` (peephole rows)
    and ``b_*`` for gates ``i`` (input), ``g`` (forget), ``c`` (cell) and
    ``o`` (output).  The output gate peeks at the *new* cell state.
    """
    f, squeeze = _as_rows(f)
    h_prev, _ = _as_rows(h_prev)
    c_prev, _ = _as_rows(c_prev)

    def pre(gate):
        return ad.add(ad.add(ad.matmul(f, p[f"W_{gate}"]), ad.matmul(h_prev, p[f"U_{gate}"])), p[f"b_{gate}"])

    i = ad.sigmoid(ad.add(pre("i"), ad.mul(c_prev, p["V_i"])))
    g = ad.sigmoid(ad.add(pre("g"), ad.mul(c_prev, p["V_g"])))
    c = ad.add(ad.mul(g, c_prev), ad.mul(i, ad.tanh(pre("c"))))
    o = ad.sigmoid(ad.add(pre("o"), ad.mul(c, p["V_o"])))
    h = ad.mul(o, ad.tanh(c))
    if squeeze:
        return ad.reshape(h, h.shape[1:]), ad.reshape(c, c.shape[1:])
    return h, c


def gru_cell(f, h_prev, p):
    f, squeeze = _as_rows(f)
    h_prev, _ = _as_rows(h_prev)
    r = ad.sigmoid(ad.add(ad.matmul(f, p["W_r"]), ad.matmul(h_prev, p["U_r"])))
    cand = ad.tanh(ad.add(ad.matmul(f, p["W_h"]), ad.matmul(ad.mul(r, h_prev), p["U_h"])))
    z = ad.sigmoid(ad.add(ad.matmul(f, p["W_z"]), ad.matmul(h_prev, p["U_z"])))
    h = ad.add(ad.mul(1.0 - z, h_prev), ad.mul(z, cand))
    return ad.reshape(h, h.shape[1:]) if squeeze else h


def rnn_forward(F, cell, layers, output="last"):
    """Run stacked recurrent layers from zero state.

    ``layers`` holds one parameter mapping per layer.  ``output`` is
    ``"last"`` (top-layer h_L), ``"average"`` (mean of top-layer h_t) or
    ``"sequence"`` (all top-layer h_t as ``[.., L, D_h]``).
    """
    F, squeeze = _batched(F)
    _check_nonempty(F)
    batch, length = F.shape[0], F.shape[1]
    seq = [F[:, t, :] for t in range(length)]
    for p in layers:
        hidden = p["U_r" if cell == "gru" else "U_i"].shape[0]
        zeros = ad.tensor(np.zeros((batch, hidden), dtype=F.dtype))
        h, c = zeros, zeros
        outs = []
        for x in seq:
            if cell == "lstm":
                h, c = lstm_cell(x, h, c, p)
            elif cell == "gru":
                h = gru_cell(x, h, p)
            else:
                raise ValueError(f"unknown recurrent cell {cell!r}")
            outs.append(h)
        seq = outs
    if output == "last":
        out = seq[-1]
    elif output == "average":
        out = ad.mean(ad.stack(seq, axis=1), axis=1)
    elif output == "sequence":
        out = ad.stack(seq, axis=1)
    else:
        raise ValueError(f"unknown rnn output strategy {output!r}")
    return _unbatch(out, squeeze)


# --- attention ------------------------------------------------------------


def _weighted_sum(a, F):
    # a: [B, L] weights, F: [B, L, d] -> [B, d]
    b, length = a.shape
    s = ad.matmul(ad.reshape(a, (b, 1, length)), F)
    return ad.reshape(s, (b, F.shape[-1]))


def naive_sa(F, W, b, return_weights=False):
    """Softmax of a linear frame score, then the weighted frame sum."""
    F, squeeze = _batched(F)
    _check_nonempty(F)
    scores = ad.reshape(linear(F, W, b), F.shape[:2])
    a = ad.softmax(scores, axis=-1)
    out = _unbatch(_weighted_sum(a, F), squeeze)
    return (out, _unbatch(a, squeeze)) if return_weights else out


def nonlinear_sa(F, U1, b1, U2, b2, return_weights=False):
    """FC-tanh-FC-softmax frame scores, then the weighted frame sum."""
    F, squeeze = _batched(F)
    _check_nonempty(F)
    scores = ad.reshape(linear(ad.tanh(linear(F, U1, b1)), U2, b2), F.shape[:2])
    a = ad.softmax(scores, axis=-1)
    out = _unbatch(_weighted_sum(a, F), squeeze)
    return (out, _unbatch(a, squeeze)) if return_weights else out


def window_norm(x, eps=WINDOW_NORM_EPS):
    """Standardise each feature over the window's frames (axis -2)."""
    centred = ad.sub(x, ad.mean(x, axis=-2, keepdims=True))
    var = ad.mean(ad.mul(centred, centred), axis=-2, keepdims=True)
    return ad.mul(centred, ad.power(ad.add_scalar(var, eps), -0.5))


def nonlocal_forward(F, W_q, W_k, return_weights=False):
    """Self-attention over the window with a skip connection, then average pooling."""
    F, squeeze = _batched(F)
    _check_nonempty(F)
    q = ad.relu(window_norm(ad.matmul(F, W_q)))
    k = ad.relu(window_norm(ad.matmul(F, W_k)))
    logits = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(W_q.shape[-1]))
    A = ad.softmax(logits, axis=-1)
    mixed = ad.add(ad.matmul(A, F), F)
    out = _unbatch(ad.mean(mixed, axis=-2), squeeze)
    return (out, _unbatch(A, squeeze)) if return_weights else out


def transformer_q(F, W_q, W_k, return_weights=False):
    """The current (last) frame attends over the window's history.

    Returns ``a @ history + f_L``; with a single frame there is no history and
    the output is ``f_L``.
    """
    F, squeeze = _batched(F)
    _check_nonempty(F)
    batch, length, d = F.shape
    current = F[:, length - 1, :]
    if length == 1:
        out = _unbatch(current, squeeze)
        if return_weights:
            return out, None
        return out
    history = F[:, : length - 1, :]
    q = ad.reshape(ad.matmul(current, W_q), (batch, W_q.shape[-1], 1))
    k = ad.matmul(history, W_k)
    scores = ad.scale(ad.reshape(ad.matmul(k, q), (batch, length - 1)), 1.0 / math.sqrt(W_q.shape[-1]))
    a = ad.softmax(scores, axis=-1)
    out = _unbatch(ad.add(_weighted_sum(a, history), current), squeeze)
    return (out, _unbatch(a, squeeze)) if return_weights else out


# --- classification -------------------------------------------------------


def classify(S_out, W, b):
    """Linear head; returns logits over the K+1 classes (index 0 is background)."""
    if S_out.shape[-1] != W.shape[0]:
        raise ConfigError(f"head expects input dim {W.shape[0]}, got representation of shape {S_out.shape}")
    x, squeeze = _as_rows(S_out)
    logits = linear(x, W, b)
    return ad.reshape(logits, logits.shape[1:]) if squeeze else logits
