"""Encoder/decoder network with per-segment latent weights.

The encoder runs over the SEP-joined concatenation of context utterances and
knowledge sentences, then splits the result back into per-segment views so
each utterance and sentence keeps a representation that saw the full input.
Two trainable latent vectors cross-attend to those views: the context latent
vector yields two weight sets (one for response generation, one for
conditioning knowledge weighting) and the knowledge latent vector, optionally
conditioned on the context via latent-weight-enhanced attention, yields one
weight per knowledge sentence. The decoder's cross-attention computes softmax
attention within each segment separately, scales each segment's output by its
latent weight, and sums - no renormalisation across segments, so a zero
weight removes a segment's contribution exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS, EOS, EncodeConfig, EncodedSample
from .tensor import (
    ShapeError,
    Tensor,
    add,
    add_row,
    cols,
    concat_cols,
    concat_vec,
    element,
    embedding_lookup,
    layer_norm,
    matmul,
    mul,
    relu,
    rows,
    scale,
    sigmoid,
    softmax_lastdim,
    transpose,
)

MASK_VALUE = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 128
    max_source_len: int = 1024
    max_target_len: int = 64
    m_max: int = 10
    top_n: int = 1
    use_loss_klw: bool = True
    use_loss_clwr: bool = True
    use_loss_clwk: bool = True
    use_ck_dep: bool = True

    def __post_init__(self):
        dims = {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "d_ff": self.d_ff,
            "max_source_len": self.max_source_len,
            "max_target_len": self.max_target_len,
            "m_max": self.m_max,
            "top_n": self.top_n,
        }
        for name, value in dims.items():
            if int(value) < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )

    def encode_config(self) -> EncodeConfig:
        return EncodeConfig(
            m_max=self.m_max,
            max_source_len=self.max_source_len,
            max_target_len=self.max_target_len,
        )

    _BOOL_FIELDS = ("use_loss_klw", "use_loss_clwr", "use_loss_clwk", "use_ck_dep")

    def to_dict(self) -> dict[str, str]:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = str(int(value)) if name in self._BOOL_FIELDS else str(value)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for name in cls.__dataclass_fields__:
            raw = d[name]
            kwargs[name] = bool(int(raw)) if name in cls._BOOL_FIELDS else int(raw)
        return cls(**kwargs)


@dataclass
class SegmentedEncoding:
    """Encoder output plus per-segment views (offset, length, tensor)."""

    full_rep: Tensor
    context_segments: list[tuple[int, int]]
    knowledge_segments: list[tuple[int, int]]
    context_views: list[Tensor] = field(repr=False, default_factory=list)
    knowledge_views: list[Tensor] = field(repr=False, default_factory=list)

    @property
    def m(self) -> int:
        return len(self.context_views)

    @property
    def l(self) -> int:  # noqa: E741
        return len(self.knowledge_views)


@dataclass
class LatentWeights:
    clwr: Tensor
    clwk: Tensor
    klw: Tensor

    def lists(self) -> dict[str, list[float]]:
        return {
            "clwr": self.clwr.tolist(),
            "clwk": self.clwk.tolist(),
            "klw": self.klw.tolist(),
        }


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v for 2-D operands; mask is additive."""
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention needs 2-D q, k, v")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError(
            f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}"
        )
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(k.shape[1]))
    if mask is not None:
        scores = add(scores, Tensor(mask))
    return matmul(softmax_lastdim(scores), v)


def lwe_attention(q: Tensor, segments: list[tuple[Tensor, Tensor]], lw: list) -> Tensor:
    """Per-segment attention outputs scaled by latent weights, then summed.

    The softmax runs within each segment independently; entries of ``lw`` may
    be floats or scalar tensors (so gradients can flow into learned weights).
    """
    if not segments:
        raise ShapeError("lwe_attention needs at least one segment")
    if len(segments) != len(lw):
        raise ShapeError(f"{len(segments)} segments but {len(lw)} latent weights")
    total = None
    for (k, v), w in zip(segments, lw):
        out = attention(q, k, v)
        part = mul(out, w) if isinstance(w, Tensor) else scale(out, float(w))
        total = part if total is None else add(total, part)
    return total


def _causal_mask(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), MASK_VALUE), k=1)


class CKLModel:
    """Parameter container plus the forward passes of every component."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        self._build(rng)

    # ----- parameter construction -------------------------------------

    def _emb(self, name: str, shape, rng) -> None:
        self.params[name] = Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)

    def _linear(self, name: str, fan_in: int, fan_out: int, rng) -> None:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        self.params[f"{name}.w"] = Tensor(
            rng.uniform(-limit, limit, (fan_in, fan_out)), requires_grad=True
        )
        self.params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    def _ln(self, name: str, rng) -> None:
        d = self.config.d_model
        self.params[f"{name}.g"] = Tensor(np.ones(d), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(d), requires_grad=True)

    def _attn_params(self, name: str, rng) -> None:
        d = self.config.d_model
        for proj in ("wq", "wk", "wv", "wo"):
            self._linear(f"{name}.{proj}", d, d, rng)

    def _ffn_params(self, name: str, rng) -> None:
        self._linear(f"{name}.in", self.config.d_model, self.config.d_ff, rng)
        self._linear(f"{name}.out", self.config.d_ff, self.config.d_model, rng)

    def _block_params(self, name: str, rng) -> None:
        self._attn_params(f"{name}.attn", rng)
        self._ln(f"{name}.ln1", rng)
        self._ffn_params(f"{name}.ffn", rng)
        self._ln(f"{name}.ln2", rng)

    def _build(self, rng) -> None:
        cfg = self.config
        self._emb("emb.token", (cfg.vocab_size, cfg.d_model), rng)
        self._emb("emb.pos_src", (cfg.max_source_len, cfg.d_model), rng)
        self._emb("emb.pos_tgt", (cfg.max_target_len, cfg.d_model), rng)
        for i in range(cfg.n_encoder_layers):
            self._block_params(f"enc{i}", rng)
        # Distinct latent vectors: the knowledge one is not the context one.
        self._emb("clw.latent", (1, cfg.d_model), rng)
        self._emb("klw.latent", (1, cfg.d_model), rng)
        self._block_params("clw.block", rng)
        # The two context heads share the block but not their parameters.
        self._linear("clw.head_r", cfg.d_model, 1, rng)
        self._linear("clw.head_k", cfg.d_model, 1, rng)
        self._block_params("klw.ck", rng)
        self._block_params("klw.know", rng)
        self._linear("klw.head", cfg.d_model, 1, rng)
        for i in range(cfg.n_decoder_layers):
            self._attn_params(f"dec{i}.self", rng)
            self._ln(f"dec{i}.ln1", rng)
            self._attn_params(f"dec{i}.cross", rng)
            self._ln(f"dec{i}.ln2", rng)
            self._ffn_params(f"dec{i}.ffn", rng)
            self._ln(f"dec{i}.ln3", rng)
        self._linear("out", cfg.d_model, cfg.vocab_size, rng)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    # ----- shared sublayers --------------------------------------------

    def _project(self, name: str, x: Tensor) -> Tensor:
        return add_row(matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"])

    def _ffn(self, name: str, x: Tensor) -> Tensor:
        return self._project(f"{name}.out", relu(self._project(f"{name}.in", x)))

    def _norm(self, name: str, x: Tensor) -> Tensor:
        return layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _mha(self, name, x_q, x_kv, mask=None, n_heads=None) -> Tensor:
        n_heads = n_heads or self.config.n_heads
        q = self._project(f"{name}.wq", x_q)
        k = self._project(f"{name}.wk", x_kv)
        v = self._project(f"{name}.wv", x_kv)
        dh = self.config.d_model // n_heads
        heads = [
            attention(cols(q, h * dh, dh), cols(k, h * dh, dh), cols(v, h * dh, dh), mask)
            for h in range(n_heads)
        ]
        merged = heads[0] if len(heads) == 1 else concat_cols(heads)
        return self._project(f"{name}.wo", merged)

    def _mha_lwe(self, name, x_q, views, lw, n_heads=None) -> Tensor:
        n_heads = n_heads or self.config.n_heads
        q = self._project(f"{name}.wq", x_q)
        ks = [self._project(f"{name}.wk", view) for view in views]
        vs = [self._project(f"{name}.wv", view) for view in views]
        dh = self.config.d_model // n_heads
        heads = []
        for h in range(n_heads):
            segs = [
                (cols(k, h * dh, dh), cols(v, h * dh, dh)) for k, v in zip(ks, vs)
            ]
            heads.append(lwe_attention(cols(q, h * dh, dh), segs, lw))
        merged = heads[0] if len(heads) == 1 else concat_cols(heads)
        return self._project(f"{name}.wo", merged)

    def _cross_block(self, name, q, kv=None, views=None, lw=None) -> Tensor:
        """Single-head cross-attention block with residuals and layer norms."""
        if views is None:
            attn = self._mha(f"{name}.attn", q, kv, n_heads=1)
        else:
            attn = self._mha_lwe(f"{name}.attn", q, views, lw, n_heads=1)
        h = self._norm(f"{name}.ln1", add(q, attn))
        return self._norm(f"{name}.ln2", add(h, self._ffn(f"{name}.ffn", h)))

    # ----- components ---------------------------------------------------

    def encode(self, sample: EncodedSample) -> SegmentedEncoding:
        src = sample.source_ids()
        if len(src) > self.config.max_source_len:
            raise ShapeError(
                f"source of {len(src)} tokens exceeds max_source_len="
                f"{self.config.max_source_len}"
            )
        x = add(
            embedding_lookup(self.params["emb.token"], src),
            rows(self.params["emb.pos_src"], 0, len(src)),
        )
        for i in range(self.config.n_encoder_layers):
            x = self._norm(f"enc{i}.ln1", add(x, self._mha(f"enc{i}.attn", x, x)))
            x = self._norm(f"enc{i}.ln2", add(x, self._ffn(f"enc{i}.ffn", x)))
        offsets = sample.segment_offsets()
        views = [rows(x, off, length) for off, length in offsets]
        m = sample.m
        return SegmentedEncoding(
            full_rep=x,
            context_segments=offsets[:m],
            knowledge_segments=offsets[m:],
            context_views=views[:m],
            knowledge_views=views[m:],
        )

    def clw_generate(self, enc: SegmentedEncoding) -> tuple[Tensor, Tensor]:
        """One response weight and one knowledge weight per context utterance."""
        q = self.params["clw.latent"]
        r_parts, k_parts = [], []
        for view in enc.context_views:
            h = self._cross_block("clw.block", q, kv=view)
            r_parts.append(sigmoid(self._project("clw.head_r", h)))
            k_parts.append(sigmoid(self._project("clw.head_k", h)))
        return concat_vec(r_parts), concat_vec(k_parts)

    def klw_generate(self, enc: SegmentedEncoding, clwk: Tensor, use_ck_dep: bool | None = None) -> Tensor:
        """One weight per knowledge sentence, optionally context-conditioned."""
        if use_ck_dep is None:
            use_ck_dep = self.config.use_ck_dep
        z = self.params["klw.latent"]
        if use_ck_dep:
            lw = [element(clwk, i) for i in range(enc.m)]
            z = self._cross_block("klw.ck", z, views=enc.context_views, lw=lw)
        parts = []
        for view in enc.knowledge_views:
            h = self._cross_block("klw.know", z, kv=view)
            parts.append(sigmoid(self._project("klw.head", h)))
        return concat_vec(parts)

    def decoder_forward(self, prefix_ids: list[int], enc: SegmentedEncoding, clwr: Tensor, klw: Tensor) -> Tensor:
        """Teacher-forced decoder logits, one row per prefix position."""
        if not prefix_ids:
            raise ShapeError("decoder prefix must be non-empty")
        t = len(prefix_ids)
        if t > self.config.max_target_len:
            raise ShapeError(
                f"prefix of {t} tokens exceeds max_target_len={self.config.max_target_len}"
            )
        y = add(
            embedding_lookup(self.params["emb.token"], prefix_ids),
            rows(self.params["emb.pos_tgt"], 0, t),
        )
        mask = _causal_mask(t)
        views = enc.context_views + enc.knowledge_views
        lw = [element(clwr, i) for i in range(enc.m)] + [
            element(klw, j) for j in range(enc.l)
        ]
        for i in range(self.config.n_decoder_layers):
            y = self._norm(f"dec{i}.ln1", add(y, self._mha(f"dec{i}.self", y, y, mask)))
            cross = self._mha_lwe(f"dec{i}.cross", y, views, lw)
            y = self._norm(f"dec{i}.ln2", add(y, cross))
            y = self._norm(f"dec{i}.ln3", add(y, self._ffn(f"dec{i}.ffn", y)))
        return self._project("out", y)

    def forward(self, sample: EncodedSample) -> tuple[Tensor, LatentWeights]:
        """Teacher-forced pass over the response; logits predict the next id."""
        enc = self.encode(sample)
        clwr, clwk = self.clw_generate(enc)
        klw = self.klw_generate(enc, clwk)
        logits = self.decoder_forward(sample.response_ids[:-1], enc, clwr, klw)
        return logits, LatentWeights(clwr=clwr, clwk=clwk, klw=klw)

    def latent_weights(self, sample: EncodedSample) -> LatentWeights:
        enc = self.encode(sample)
        clwr, clwk = self.clw_generate(enc)
        return LatentWeights(clwr=clwr, clwk=clwk, klw=self.klw_generate(enc, clwk))

    # ----- inference ------------------------------------------------------

    def _next_log_probs(self, prefix, enc, clwr, klw) -> np.ndarray:
        logits = self.decoder_forward(prefix, enc, clwr, klw).data[-1]
        shifted = logits - logits.max()
        return shifted - math.log(np.exp(shifted).sum())

    def generate(
        self,
        sample: EncodedSample,
        mode: str = "greedy",
        beam_size: int = 1,
        max_len: int | None = None,
    ) -> list[int]:
        """Decode from BOS until EOS or the length budget is exhausted.

        Returns ids including the leading BOS and, when reached, the final
        EOS. Beam search ranks hypotheses by per-token mean log-probability.
        """
        if mode not in ("greedy", "beam"):
            raise ValueError(f"unknown decode mode {mode!r}")
        if mode == "beam" and beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        max_len = max_len or self.config.max_target_len
        enc = self.encode(sample)
        clwr, clwk = self.clw_generate(enc)
        klw = self.klw_generate(enc, clwk)

        if mode == "greedy" or beam_size == 1:
            prefix = [BOS]
            while len(prefix) < max_len:
                next_id = int(np.argmax(self._next_log_probs(prefix, enc, clwr, klw)))
                prefix.append(next_id)
                if next_id == EOS:
                    break
            return prefix

        beams = [([BOS], 0.0)]
        finished: list[tuple[list[int], float]] = []
        while beams and len(beams[0][0]) < max_len:
            candidates = []
            for ids, logp in beams:
                lp = self._next_log_probs(ids, enc, clwr, klw)
                top = np.argsort(-lp, kind="stable")[:beam_size]
                for token in top:
                    candidates.append((ids + [int(token)], logp + float(lp[token])))
            candidates.sort(key=lambda c: -(c[1] / (len(c[0]) - 1)))
            beams = []
            for ids, logp in candidates[:beam_size]:
                if ids[-1] == EOS:
                    finished.append((ids, logp))
                else:
                    beams.append((ids, logp))
        finished.extend(beams)
        finished.sort(key=lambda c: -(c[1] / max(1, len(c[0]) - 1)))
        return finished[0][0]
