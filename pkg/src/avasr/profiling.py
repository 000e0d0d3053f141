"""Analytic parameter / FLOP accounting.

Every formula here mirrors the exact op sequence its module executes, so the
analytic report must equal the instrumented tape counts bit for bit; the test
suite enforces that for all shipped presets.

Convention (also recorded on every report): 1 multiply-add = 2 FLOPs;
pointwise ops cost 1 FLOP/element; fused ops use fixed per-element constants
(softmax/log-softmax 5, layer-norm normalize 6, 2x2 max-pool 3 per output,
LSTM gate activation 9 per hidden unit).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import DecoderConfig, EncoderConfig, RunConfig, Vgg21dConfig, VitConfig
from .errors import ConfigError

FLOP_CONVENTION = (
    "1 mult-add = 2 FLOPs; pointwise = 1 FLOP/elem; "
    "softmax 5/elem, layer-norm 6/elem, 2x2 max-pool 3/out-elem, LSTM activation 9/unit"
)


@dataclass
class CostRow:
    name: str
    params: int = 0
    mult_adds: int = 0
    pointwise: int = 0

    @property
    def flops(self) -> int:
        return 2 * self.mult_adds + self.pointwise

    def __iadd__(self, other: "CostRow"):
        self.params += other.params
        self.mult_adds += other.mult_adds
        self.pointwise += other.pointwise
        return self


@dataclass
class CostReport:
    """Per-layer cost breakdown; totals are always the sum of the rows."""
    per_layer: list = field(default_factory=list)
    convention: str = FLOP_CONVENTION

    def add(self, row: CostRow) -> None:
        self.per_layer.append(row)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.per_layer)

    @property
    def mult_adds(self) -> int:
        return sum(r.mult_adds for r in self.per_layer)

    @property
    def pointwise(self) -> int:
        return sum(r.pointwise for r in self.per_layer)

    @property
    def flops(self) -> int:
        return 2 * self.mult_adds + self.pointwise


def linear_cost(rows: int, d_in: int, d_out: int, bias: bool = True) -> CostRow:
    return CostRow("linear",
                   params=d_in * d_out + (d_out if bias else 0),
                   mult_adds=rows * d_in * d_out,
                   pointwise=rows * d_out if bias else 0)


def layer_norm_cost(rows: int, dim: int) -> CostRow:
    # fused normalize (6/elem) + gamma mul + beta add
    return CostRow("layer_norm", params=2 * dim, pointwise=8 * rows * dim)


def attention_cost(n: int, s: int, d: int, heads: int) -> CostRow:
    row = CostRow("attention")
    for _ in range(4):  # q, k, v, out projections
        row += linear_cost(n * s, d, d)
    row.mult_adds += 2 * n * s * s * d   # scores and context batched matmuls
    row.pointwise += 6 * n * heads * s * s  # scale (1) + softmax (5)
    return row


def feed_forward_cost(rows: int, d: int, d_ff: int) -> CostRow:
    row = CostRow("feed_forward")
    row += linear_cost(rows, d, d_ff)
    row.pointwise += rows * d_ff  # activation
    row += linear_cost(rows, d_ff, d)
    return row


def transformer_block_cost(n: int, s: int, d: int, heads: int, d_ff: int) -> CostRow:
    row = CostRow("block")
    row += layer_norm_cost(n * s, d)
    row += attention_cost(n, s, d, heads)
    row.pointwise += n * s * d  # residual add
    row += layer_norm_cost(n * s, d)
    row += feed_forward_cost(n * s, d, d_ff)
    row.pointwise += n * s * d  # residual add
    return row


def lstm_cell_cost(batch: int, d_in: int, d_h: int, steps: int = 1) -> CostRow:
    row = CostRow("lstm_cell")
    row.params = d_in * 4 * d_h + d_h * 4 * d_h + 4 * d_h
    per_step_ma = batch * d_in * 4 * d_h + batch * d_h * 4 * d_h
    per_step_pw = 2 * batch * 4 * d_h + 9 * batch * d_h  # two adds + fused activation
    row.mult_adds = steps * per_step_ma
    row.pointwise = steps * per_step_pw
    return row


def conv_spatial_cost(b: int, t: int, h: int, w: int, c_in: int, c_out: int) -> CostRow:
    row = CostRow("conv_spatial", params=9 * c_in * c_out + c_out,
                  mult_adds=b * t * h * w * 9 * c_in * c_out)
    row.pointwise = 2 * b * t * h * w * c_out  # bias add + relu
    return row


def conv_temporal_cost(b: int, t: int, h: int, w: int, c_in: int, c_out: int) -> CostRow:
    row = CostRow("conv_temporal", params=3 * c_in * c_out + c_out,
                  mult_adds=b * t * h * w * 3 * c_in * c_out)
    row.pointwise = 2 * b * t * h * w * c_out
    return row


def conv3d_fused_cost(b: int, t: int, h: int, w: int, c_in: int, c_out: int) -> CostRow:
    """Cost of the undecomposed [3,3,3] kernel at the same width, used for
    the separable-decomposition accounting study (no runtime op)."""
    row = CostRow("conv3d", params=27 * c_in * c_out + c_out,
                  mult_adds=b * t * h * w * 27 * c_in * c_out)
    row.pointwise = 2 * b * t * h * w * c_out
    return row


def vgg21d_cost(cfg: Vgg21dConfig, batch: int, t_steps: int) -> CostReport:
    cfg.validate()
    report = CostReport()
    h = w = cfg.input_hw
    c_in = 3
    for pair in range(1, 6):
        c_spatial = cfg.layer_channels[2 * (pair - 1)]
        c_temporal = cfg.layer_channels[2 * pair - 1]
        row = conv_spatial_cost(batch, t_steps, h, w, c_in, c_spatial)
        row.name = f"conv{2 * pair - 1:02d}_spatial"
        report.add(row)
        row = conv_temporal_cost(batch, t_steps, h, w, c_spatial, c_temporal)
        row.name = f"conv{2 * pair:02d}_temporal"
        report.add(row)
        c_in = c_temporal
        if pair in cfg.pool_after_pairs:
            h, w = h // 2, w // 2
            report.add(CostRow(f"pool{pair}", pointwise=3 * batch * t_steps * h * w * c_in))
    head = CostRow("head", pointwise=batch * t_steps * h * w * c_in)  # global average
    head += linear_cost(batch * t_steps, c_in, cfg.output_dim)
    report.add(head)
    return report


def vit_cost(cfg: VitConfig, batch: int, t_steps: int) -> CostReport:
    cfg.validate()
    report = CostReport()
    n = batch * t_steps
    tokens = cfg.tokens_per_step
    seq = cfg.seq_len
    embed = linear_cost(n * tokens, cfg.token_dim, cfg.d_model)
    embed.name = "embed"
    if cfg.pool == "prepended-token":
        embed.params += cfg.d_model  # learned pooling token
    report.add(embed)
    pos = CostRow("positional", params=seq * cfg.d_model, pointwise=n * seq * cfg.d_model)
    report.add(pos)
    for i in range(cfg.layers):
        row = transformer_block_cost(n, seq, cfg.d_model, cfg.heads, cfg.d_ff)
        row.name = f"block{i + 1}"
        report.add(row)
    final = layer_norm_cost(n * seq, cfg.d_model)
    final.name = "ln_out"
    report.add(final)
    return report


def av_encoder_cost(cfg: EncoderConfig, batch: int, t_steps: int, input_dim: int) -> CostReport:
    cfg.validate()
    report = CostReport()
    proj = linear_cost(batch * t_steps, input_dim, cfg.d_model)
    proj.name = "input_proj"
    report.add(proj)
    for i in range(cfg.layers):
        row = transformer_block_cost(batch, t_steps, cfg.d_model, cfg.heads, cfg.d_ff)
        row.name = f"block{i + 1}"
        report.add(row)
    final = layer_norm_cost(batch * t_steps, cfg.d_model)
    final.name = "ln_out"
    report.add(final)
    return report


def prediction_cost(cfg: DecoderConfig, vocab: int, batch: int, u_plus_1: int) -> CostReport:
    cfg.validate()
    report = CostReport()
    report.add(CostRow("embedding", params=vocab * cfg.pred_units))
    for i in range(cfg.pred_layers):
        d_in = cfg.pred_units
        row = lstm_cell_cost(batch, d_in, cfg.pred_units, steps=u_plus_1)
        row.name = f"lstm{i + 1}"
        report.add(row)
    return report


def joint_cost(cfg: DecoderConfig, vocab: int, batch: int, t_steps: int, u_plus_1: int,
               d_enc: int) -> CostReport:
    cfg.validate()
    report = CostReport()
    dj = cfg.joint_dim
    row = CostRow("joint")
    row += linear_cost(batch * t_steps, d_enc, dj, bias=False)
    row += linear_cost(batch * u_plus_1, cfg.pred_units, dj, bias=False)
    cells = batch * t_steps * u_plus_1
    row.params += dj  # shared bias
    row.pointwise += cells * dj  # broadcast enc+pred add
    row.pointwise += cells * dj  # bias add
    row.pointwise += cells * dj  # tanh
    row += linear_cost(cells, dj, vocab)
    row.pointwise += 5 * cells * vocab  # log-softmax
    report.add(row)
    return report


def front_end_cost(run_cfg: RunConfig, batch: int | None = None,
                   t_steps: int | None = None) -> CostReport:
    """Analytic cost of the configured video front-end at the profiling
    shape. This is count_costs for the profiler surface."""
    batch = run_cfg.profile.batch if batch is None else batch
    t_steps = run_cfg.profile.t_steps if t_steps is None else t_steps
    if run_cfg.front_end == "vgg21d":
        return vgg21d_cost(run_cfg.vgg, batch, t_steps)
    if run_cfg.front_end == "vit":
        return vit_cost(run_cfg.vit, batch, t_steps)
    raise ConfigError(f"front end {run_cfg.front_end!r} has no video cost profile")


def model_cost(run_cfg: RunConfig, batch: int, t_steps: int, u_len: int) -> CostReport:
    """Analytic cost of one full forward pass (front-end + encoder +
    prediction + joint) excluding the loss DP."""
    report = CostReport()
    if run_cfg.front_end != "audio-only":
        fe = front_end_cost(run_cfg, batch, t_steps)
        total = CostRow(run_cfg.front_end)
        for r in fe.per_layer:
            total += r
        report.add(total)
    enc = av_encoder_cost(run_cfg.encoder, batch, t_steps, run_cfg.fused_dim)
    enc_total = CostRow("encoder")
    for r in enc.per_layer:
        enc_total += r
    report.add(enc_total)
    vocab = run_cfg.vocab_size()
    pred = prediction_cost(run_cfg.decoder, vocab, batch, u_len + 1)
    pred_total = CostRow("prediction")
    for r in pred.per_layer:
        pred_total += r
    report.add(pred_total)
    joint = joint_cost(run_cfg.decoder, vocab, batch, t_steps, u_len + 1,
                       run_cfg.encoder.d_model)
    report.add(joint.per_layer[0])
    return report
