"""Assemble operators into a window -> logits model described by a ModelSpec.

Parameter naming scheme (all names are ``<prefix>.<leaf>``):

* single-operator models use the operator kind as prefix: ``tc.W``,
  ``pdc.branch1.W``, ``pdc.reduce.W``, ``dcc.layer0.W_res``,
  ``lstm.layer0.W_i``, ``gru.layer0.U_z``, ``naive_sa.W``,
  ``nonlinear_sa.U1``, ``nonlocal.W_q``, ``transformer.W_k``;
* hybrid stages are prefixed by position: ``stage0.lstm.layer0.W_i``,
  ``stage1.dcc.layer2.b``;
* the classifier is always ``head.W`` / ``head.b``.

Leaves starting with ``b`` are biases; everything else is a weight.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import autodiff as ad
from ..errors import ConfigError
from . import operators as ops
from .spec import ModelSpec

LSTM_GATES = ("i", "g", "c", "o")
GRU_GATES = ("r", "h", "z")


@dataclass(frozen=True)
class Stage:
    kind: str
    prefix: str
    in_dim: int
    out_dim: int
    mode: str  # "sequence" or "aggregate"


def _plan(spec: ModelSpec):
    d = spec.feature_dim
    if spec.kind == "hybrid":
        chain = [(kind, f"stage{i}.{kind}") for i, kind in enumerate(spec.hybrid_chain)]
    elif spec.kind in ("tc", "pdc", "dcc"):
        # convolutional outputs are average-pooled into one representation
        chain = [(spec.kind, spec.kind), ("avgpool", "avgpool")]
    else:
        chain = [(spec.kind, spec.kind)]
    stages = []
    dim = d
    for pos, (kind, prefix) in enumerate(chain):
        final = pos == len(chain) - 1
        mode = "aggregate" if final else "sequence"
        if kind in ("lstm", "gru"):
            out = spec.effective_hidden
        elif kind == "dcc":
            out = spec.effective_dcc_widths[-1]
        else:
            out = dim
        stages.append(Stage(kind, prefix, dim, out, mode))
        dim = out
    return stages


def _stage_shapes(spec: ModelSpec, st: Stage):
    s, k = spec.kernel_size, st.in_dim
    p = st.prefix
    if st.kind in ("avgpool", "maxpool"):
        return []
    if st.kind == "tc":
        return [(f"{p}.W", (s * k, k)), (f"{p}.b", (k,))]
    if st.kind == "pdc":
        shapes = []
        for j, _ in enumerate(spec.dilation_rates):
            shapes += [(f"{p}.branch{j}.W", (s * k, k)), (f"{p}.branch{j}.b", (k,))]
        n = len(spec.dilation_rates)
        return shapes + [(f"{p}.reduce.W", (n * k, k)), (f"{p}.reduce.b", (k,))]
    if st.kind == "dcc":
        shapes = []
        dim = k
        for i, width in enumerate(spec.effective_dcc_widths):
            shapes += [
                (f"{p}.layer{i}.W", (s * dim, width)),
                (f"{p}.layer{i}.b", (width,)),
                (f"{p}.layer{i}.W_res", (dim, width)),
                (f"{p}.layer{i}.b_res", (width,)),
            ]
            dim = width
        return shapes
    if st.kind == "lstm":
        shapes = []
        dim, hid = k, spec.effective_hidden
        for j in range(spec.num_layers):
            q = f"{p}.layer{j}"
            for gate in LSTM_GATES:
                shapes += [(f"{q}.W_{gate}", (dim, hid)), (f"{q}.U_{gate}", (hid, hid))]
                if gate != "c":
                    shapes.append((f"{q}.V_{gate}", (1, hid)))
                shapes.append((f"{q}.b_{gate}", (hid,)))
            dim = hid
        return shapes
    if st.kind == "gru":
        shapes = []
        dim, hid = k, spec.effective_hidden
        for j in range(spec.num_layers):
            q = f"{p}.layer{j}"
            for gate in GRU_GATES:
                shapes += [(f"{q}.W_{gate}", (dim, hid)), (f"{q}.U_{gate}", (hid, hid))]
            dim = hid
        return shapes
    if st.kind == "naive_sa":
        return [(f"{p}.W", (k, 1)), (f"{p}.b", (1,))]
    if st.kind == "nonlinear_sa":
        d1 = spec.effective_attn_hidden
        return [(f"{p}.U1", (k, d1)), (f"{p}.b1", (d1,)), (f"{p}.U2", (d1, 1)), (f"{p}.b2", (1,))]
    if st.kind in ("nonlocal", "transformer"):
        dm = spec.projection_dim(k)
        return [(f"{p}.W_q", (k, dm)), (f"{p}.W_k", (k, dm))]
    raise ConfigError(f"no stage named {st.kind!r}")


class TemporalModel:
    """Window-to-class-scores network for one :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.stages = _plan(spec)

    @property
    def representation_dim(self) -> int:
        return self.stages[-1].out_dim

    def param_shapes(self) -> dict:
        """Ordered ``name -> shape``; a pure function of the ModelSpec."""
        shapes = {}
        for st in self.stages:
            for name, shape in _stage_shapes(self.spec, st):
                shapes[name] = shape
        shapes["head.W"] = (self.representation_dim, self.spec.num_classes + 1)
        shapes["head.b"] = (self.spec.num_classes + 1,)
        return shapes

    def _run_stage(self, st: Stage, params, x, rng):
        p, spec = st.prefix, self.spec
        if st.kind in ("avgpool", "maxpool"):
            return ops.pool_forward(st.kind, x)
        if st.kind == "tc":
            return ops.tc_forward(x, spec.tc_dilation, params[f"{p}.W"], params[f"{p}.b"])
        if st.kind == "pdc":
            branches = [(params[f"{p}.branch{j}.W"], params[f"{p}.branch{j}.b"]) for j in range(len(spec.dilation_rates))]
            return ops.pdc_forward(x, spec.dilation_rates, branches, params[f"{p}.reduce.W"], params[f"{p}.reduce.b"])
        if st.kind == "dcc":
            layers = [
                {
                    "W": params[f"{p}.layer{i}.W"],
                    "b": params[f"{p}.layer{i}.b"],
                    "W_res": params[f"{p}.layer{i}.W_res"],
                    "b_res": params[f"{p}.layer{i}.b_res"],
                    "rate": rate,
                }
                for i, rate in enumerate(spec.dilation_rates)
            ]
            return ops.dcc_forward(x, layers, dropout=spec.dcc_dropout, rng=rng)
        if st.kind in ("lstm", "gru"):
            layers = []
            for j in range(spec.num_layers):
                prefix = f"{p}.layer{j}."
                layers.append({n[len(prefix):]: params[n] for n in params if n.startswith(prefix)})
            output = "sequence" if st.mode == "sequence" else spec.rnn_output
            return ops.rnn_forward(x, st.kind, layers, output)
        if st.kind == "naive_sa":
            return ops.naive_sa(x, params[f"{p}.W"], params[f"{p}.b"])
        if st.kind == "nonlinear_sa":
            return ops.nonlinear_sa(x, params[f"{p}.U1"], params[f"{p}.b1"], params[f"{p}.U2"], params[f"{p}.b2"])
        if st.kind == "nonlocal":
            return ops.nonlocal_forward(x, params[f"{p}.W_q"], params[f"{p}.W_k"])
        if st.kind == "transformer":
            return ops.transformer_q(x, params[f"{p}.W_q"], params[f"{p}.W_k"])
        raise ConfigError(f"no stage named {st.kind!r}")

    def represent(self, params, F, rng=None):
        """Map windows ``[L, d]`` / ``[B, L, d]`` to S_out ``[D]`` / ``[B, D]``.

        ``rng`` enables training-time dropout; leave it ``None`` for inference.
        """
        if F.shape[-1] != self.spec.feature_dim:
            raise ConfigError(f"model expects feature dim {self.spec.feature_dim}, got {F.shape[-1]}")
        x = F
        for st in self.stages:
            x = self._run_stage(st, params, x, rng)
        return x

    def logits(self, params, F, rng=None):
        return ops.classify(self.represent(params, F, rng), params["head.W"], params["head.b"])

    def probabilities(self, params, F):
        return ad.softmax(self.logits(params, F), axis=-1)
