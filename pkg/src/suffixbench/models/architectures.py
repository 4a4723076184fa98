"""The seven sequence architectures.

Every model exposes ``forward(batch) -> (logits, times)`` aligned with the
batch targets of its layout, plus the pieces the decoders in
``suffixbench.inference`` need.
"""

from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from ..diffcore import Module, Tensor
from ..preprocess import Batch
from .config import Architecture, ModelConfig
from .layers import (
    CausalConvLayer,
    EmbeddingFusion,
    LayerNorm,
    Linear,
    LSTMLayer,
    LSTMStack,
    Readout,
    TransformerBlock,
    attention_mask,
    sinusoidal_positions,
)


def length_mask(lengths, n: int) -> np.ndarray:
    return (np.arange(n)[None, :] < np.asarray(lengths)[:, None]).astype(dc.get_dtype())


class SuffixModel(Module):
    autoregressive = True

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.embed = EmbeddingFusion(config.vocab_size, config.d_z, rng)

    def _drop(self, x: Tensor) -> Tensor:
        return dc.dropout(x, self.config.dropout, self.drop_rng, self.training)


# --- recurrent -----------------------------------------------------------------

class LSTMModel(SuffixModel):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        self.rnn = LSTMStack(config.layers, config.d_z, config.d_z, config.dropout, rng)
        self.readout = Readout(config.d_z, config.vocab_size, rng)

    def forward(self, batch: Batch):
        return self.predict_sequence(batch.activity_inputs, batch.time_inputs)

    def predict_sequence(self, activities, times):
        latents, _ = self.rnn(self.embed(activities, times))
        return self.readout(latents)

    def start(self, activities, times):
        """Consume a prefix; return logits/time of the last position and the state."""
        latents, states = self.rnn(self.embed(activities, times))
        logits, t = self.readout(dc.getitem(latents, (slice(None), slice(-1, None))))
        return logits, t, states

    def step(self, activity, time, states):
        out, states = self.rnn.step(self.embed(activity, time), states)
        logits, t = self.readout(out)
        return logits, t, states


class Discriminator(Module):
    """Single-layer recurrent encoder over (activity simplex, time) with a sigmoid head."""

    def __init__(self, vocab_size: int, d: int, rng: np.random.Generator):
        self.proj = Linear(vocab_size + 1, d, rng)
        self.rnn = LSTMLayer(d, d, rng)
        self.head = Linear(d, 1, rng)

    def logit(self, simplex, times, lengths) -> Tensor:
        t = dc.as_tensor(times)
        x = self.proj(dc.concat([dc.as_tensor(simplex), dc.reshape(t, t.shape + (1,))], axis=-1))
        _, (h, _) = self.rnn(x, step_mask=length_mask(lengths, x.shape[1]))
        return dc.reshape(self.head(h), (h.shape[0],))

    def __call__(self, simplex, times, lengths) -> Tensor:
        return dc.sigmoid(self.logit(simplex, times, lengths))


class AEModel(SuffixModel):
    """LSTM encoder-decoder; the encoder's final (h, c) per layer seeds the decoder."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        self.encoder = LSTMStack(config.layers, config.d_z, config.d_z, config.dropout, rng)
        self.decoder = LSTMStack(config.layers, config.d_z, config.d_z, config.dropout, rng)
        self.readout = Readout(config.d_z, config.vocab_size, rng)

    def encode(self, activities, times, lengths):
        z = self.embed(activities, times)
        _, states = self.encoder(z, step_mask=length_mask(lengths, z.shape[1]))
        return states

    def decode(self, context, activities, times):
        latents, _ = self.decoder(self.embed(activities, times), states=context)
        return self.readout(latents)

    def decode_start(self, context):
        return context

    def decode_step(self, state, activity, time):
        out, state = self.decoder.step(self.embed(activity, time), state)
        logits, t = self.readout(out)
        return logits, t, state

    def forward(self, batch: Batch):
        context = self.encode(batch.activity_inputs, batch.time_inputs, batch.lengths)
        return self.decode(context, batch.dec_activity_inputs, batch.dec_time_inputs)

    def forward_open_loop(self, batch: Batch, open_rows: np.ndarray, tau: float, rng: np.random.Generator):
        """Decode step by step; rows flagged in ``open_rows`` consume their own
        Gumbel-Softmax sample and predicted time instead of the ground truth.

        Returns logits ``[B, n, V]``, times ``[B, n]`` and the samples ``[B, n, V]``.
        """
        states = self.encode(batch.activity_inputs, batch.time_inputs, batch.lengths)
        open_col = np.asarray(open_rows, dtype=dc.get_dtype())[:, None]
        teacher = self.embed(batch.dec_activity_inputs, batch.dec_time_inputs)
        n = teacher.shape[1]
        x_t = dc.getitem(teacher, (slice(None), 0))
        logits, times, samples = [], [], []
        for t in range(n):
            out, states = self.decoder.step(x_t, states)
            lg, tm = self.readout(out)
            sample = dc.gumbel_softmax_sample(lg, tau, rng)
            logits.append(lg)
            times.append(tm)
            samples.append(sample)
            if t + 1 < n:
                own = self.embed.soft(sample, tm)
                x_t = own * open_col + dc.getitem(teacher, (slice(None), t + 1)) * (1.0 - open_col)
        return dc.stack(logits, axis=1), dc.stack(times, axis=1), dc.stack(samples, axis=1)


class AEGANModel(AEModel):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        self.discriminator = Discriminator(config.vocab_size, config.d_z, rng)

    def generator_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("discriminator.")]

    def discriminator_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if n.startswith("discriminator.")]


# --- attention -----------------------------------------------------------------

class _AttentionModel(SuffixModel):
    def _embed_positions(self, activities, times) -> Tensor:
        z = self.embed(activities, times)
        return z + sinusoidal_positions(z.shape[1], self.config.d_z)[None]

    def _blocks(self, rng, cross: bool = False):
        c = self.config
        return [TransformerBlock(c.d_z, c.heads, c.ffn_mult * c.d_z, c.dropout, rng, cross) for _ in range(c.layers)]


class TransformerModel(_AttentionModel):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        self.encoder = self._blocks(rng)
        self.encoder_norm = LayerNorm(config.d_z)
        self.decoder = self._blocks(rng, cross=True)
        self.decoder_norm = LayerNorm(config.d_z)
        self.readout = Readout(config.d_z, config.vocab_size, rng)

    def encode(self, activities, times, lengths):
        x = self._embed_positions(activities, times)
        n = x.shape[1]
        mask = attention_mask(lengths, lengths, n, n, causal=False)
        for block in self.encoder:
            x = block(x, mask)
        return self.encoder_norm(x), np.asarray(lengths)

    def decode(self, context, activities, times, lengths=None):
        memory, memory_lengths = context
        y = self._embed_positions(activities, times)
        m = y.shape[1]
        lengths = np.full(y.shape[0], m) if lengths is None else lengths
        self_mask = attention_mask(lengths, lengths, m, m, causal=True)
        cross_mask = attention_mask(lengths, memory_lengths, m, memory.shape[1], causal=False)
        for block in self.decoder:
            y = block(y, self_mask, memory, cross_mask)
        return self.readout(self.decoder_norm(y))

    def forward(self, batch: Batch):
        context = self.encode(batch.activity_inputs, batch.time_inputs, batch.lengths)
        return self.decode(context, batch.dec_activity_inputs, batch.dec_time_inputs, batch.dec_lengths)


class GPTModel(_AttentionModel):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        self.blocks = self._blocks(rng)
        self.norm = LayerNorm(config.d_z)
        self.readout = Readout(config.d_z, config.vocab_size, rng)

    causal = True

    def predict_sequence(self, activities, times, lengths=None):
        x = self._embed_positions(activities, times)
        n = x.shape[1]
        lengths = np.full(x.shape[0], n) if lengths is None else lengths
        mask = attention_mask(lengths, lengths, n, n, causal=self.causal)
        for block in self.blocks:
            x = block(x, mask)
        return self.readout(self.norm(x))

    def forward(self, batch: Batch):
        return self.predict_sequence(batch.activity_inputs, batch.time_inputs, batch.lengths)


class BERTModel(GPTModel):
    """Bidirectional encoder trained to reconstruct masked events."""

    causal = False
    autoregressive = False


# --- convolutional ---------------------------------------------------------------

class WaveNetModel(SuffixModel):
    """Causal dilated convolutions (dilation 1, 2, 4, ...) with residual connections."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        self.convs = [CausalConvLayer(config.d_z, config.filter_size, 2**i, rng) for i in range(config.layers)]
        self.readout = Readout(config.d_z, config.vocab_size, rng)
        self.drop_rng = np.random.default_rng(rng.integers(2**63))

    def predict_sequence(self, activities, times, lengths=None):
        x = self.embed(activities, times)
        for conv in self.convs:
            x = x + self._drop(dc.tanh(conv(x)))
        return self.readout(x)

    def forward(self, batch: Batch):
        return self.predict_sequence(batch.activity_inputs, batch.time_inputs)


MODEL_CLASSES = {
    Architecture.LSTM: LSTMModel,
    Architecture.AE: AEModel,
    Architecture.AEGAN: AEGANModel,
    Architecture.TRANSFORMER: TransformerModel,
    Architecture.GPT: GPTModel,
    Architecture.BERT: BERTModel,
    Architecture.WAVENET: WaveNetModel,
}


def build_model(config: ModelConfig, seed: int = 0) -> SuffixModel:
    """Instantiate and initialise the architecture named in ``config``."""
    rng = np.random.default_rng(seed)
    return MODEL_CLASSES[config.architecture](config, rng)
