"""Building blocks shared by the architectures."""

from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from ..diffcore import Module, Parameter, Tensor, uniform_fan_in


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_fan_in(rng, (d_in, d_out), d_in, "weight")
        self.bias = uniform_fan_in(rng, (d_out,), d_in, "bias") if bias else None

    def __call__(self, x) -> Tensor:
        y = dc.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Parameter(np.ones(d), "gamma", init="ones")
        self.beta = Parameter(np.zeros(d), "beta", init="zeros")

    def __call__(self, x) -> Tensor:
        return dc.layer_norm(x, self.gamma, self.beta)


class EmbeddingFusion(Module):
    """Sum fusion ``z = Theta_a . onehot(a) + Theta_t * t``."""

    def __init__(self, vocab_size: int, d_z: int, rng: np.random.Generator):
        self.activity = uniform_fan_in(rng, (vocab_size, d_z), vocab_size, "activity")
        self.time = uniform_fan_in(rng, (1, d_z), 1, "time")

    def __call__(self, activities: np.ndarray, times) -> Tensor:
        t = dc.as_tensor(times)
        return dc.embedding(activities, self.activity) + dc.reshape(t, t.shape + (1,)) * self.time

    def soft(self, simplex: Tensor, times) -> Tensor:
        """Embed a distribution over activities (e.g. a Gumbel-Softmax sample)."""
        t = dc.as_tensor(times)
        return dc.matmul(simplex, self.activity) + dc.reshape(t, t.shape + (1,)) * self.time


class Readout(Module):
    """Activity logits and a scalar duration per position from one latent state."""

    def __init__(self, d_z: int, vocab_size: int, rng: np.random.Generator):
        self.activity = Linear(d_z, vocab_size, rng)
        self.time = Linear(d_z, 1, rng)

    def __call__(self, latents: Tensor) -> tuple[Tensor, Tensor]:
        t = self.time(latents)
        return self.activity(latents), dc.reshape(t, t.shape[:-1])


class LSTMLayer(Module):
    def __init__(self, d_in: int, d: int, rng: np.random.Generator):
        self.W = uniform_fan_in(rng, (d_in, 4 * d), d_in, "W")
        self.U = uniform_fan_in(rng, (d, 4 * d), d, "U")
        self.b = uniform_fan_in(rng, (4 * d,), d, "b")
        self.d = d

    def zero_state(self, batch: int) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.d), dtype=dc.get_dtype())
        return Tensor(z), Tensor(z.copy())

    def step(self, x_t: Tensor, state, keep: np.ndarray | None = None):
        return self._cell(dc.matmul(x_t, self.W) + self.b, state, keep)

    def _cell(self, pre: Tensor, state, keep):
        h, c = state
        hc = dc.lstm_cell(pre + dc.matmul(h, self.U), h, c, keep)
        return dc.getitem(hc, (slice(None), slice(None, self.d))), dc.getitem(hc, (slice(None), slice(self.d, None)))

    def __call__(self, x: Tensor, state=None, step_mask: np.ndarray | None = None):
        """Run over ``x`` ``[B, n, d_in]``; returns (outputs ``[B, n, d]``, final state)."""
        batch, n, _ = x.shape
        state = state or self.zero_state(batch)
        pre = dc.matmul(x, self.W) + self.b
        outputs = []
        for t in range(n):
            keep = None if step_mask is None else step_mask[:, t]
            state = self._cell(dc.getitem(pre, (slice(None), t)), state, keep)
            outputs.append(state[0])
        return dc.stack(outputs, axis=1), state


class LSTMStack(Module):
    """Stacked LSTM with dropout on every layer's output."""

    def __init__(self, layers: int, d_in: int, d: int, dropout: float, rng: np.random.Generator):
        self.layers = [LSTMLayer(d_in if i == 0 else d, d, rng) for i in range(layers)]
        self.p = dropout
        self.rng = np.random.default_rng(rng.integers(2**63))

    def zero_states(self, batch: int):
        return [layer.zero_state(batch) for layer in self.layers]

    def __call__(self, x: Tensor, states=None, step_mask=None):
        states = states or self.zero_states(x.shape[0])
        finals = []
        for layer, state in zip(self.layers, states):
            x, final = layer(x, state, step_mask)
            x = dc.dropout(x, self.p, self.rng, self.training)
            finals.append(final)
        return x, finals

    def step(self, x_t: Tensor, states, keep=None):
        """One time step for ``x_t`` ``[B, d_in]``."""
        new_states = []
        for layer, state in zip(self.layers, states):
            h, c = layer.step(x_t, state, keep)
            new_states.append((h, c))
            x_t = dc.dropout(h, self.p, self.rng, self.training)
        return x_t, new_states


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dc.get_dtype())


def attention_mask(q_lengths, k_lengths, n_q: int, n_k: int, causal: bool) -> np.ndarray:
    """Additive mask ``[B, 1, n_q, n_k]`` with 0 (attend) or -inf (blocked).

    Key columns beyond each row's true length are blocked for every query;
    ``causal`` additionally blocks keys to the right of the query.
    """
    k_lengths = np.asarray(k_lengths)
    blocked = np.arange(n_k)[None, None, :] >= k_lengths[:, None, None]
    blocked = np.broadcast_to(blocked, (len(k_lengths), n_q, n_k))
    if causal:
        blocked = blocked | np.triu(np.ones((n_q, n_k), dtype=bool), k=1)[None]
    mask = np.where(blocked, -np.inf, 0.0).astype(dc.get_dtype())
    return mask[:, None]


def causal_mask(n: int) -> np.ndarray:
    return np.where(np.triu(np.ones((n, n), dtype=bool), k=1), -np.inf, 0.0)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.heads = heads
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return dc.transpose(dc.reshape(x, (b, n, self.heads, d // self.heads)), (0, 2, 1, 3))

    def __call__(self, queries: Tensor, memory: Tensor, mask: np.ndarray) -> Tensor:
        b, n_q, d = queries.shape
        q = self._split(self.q(queries))
        k = dc.transpose(self._split(self.k(memory)), (0, 1, 3, 2))
        v = self._split(self.v(memory))
        scores = dc.matmul(q, k) * (1.0 / np.sqrt(d // self.heads)) + mask
        weights = dc.softmax(scores, axis=-1)
        self.last_weights = weights.data
        mixed = dc.transpose(dc.matmul(weights, v), (0, 2, 1, 3))
        return self.out(dc.reshape(mixed, (b, n_q, d)))


class TransformerBlock(Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""

    def __init__(self, d: int, heads: int, ffn: int, dropout: float, rng: np.random.Generator, cross: bool = False):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm_cross = LayerNorm(d) if cross else None
        self.cross = MultiHeadAttention(d, heads, rng) if cross else None
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, ffn, rng)
        self.ff2 = Linear(ffn, d, rng)
        self.p = dropout
        self.rng = np.random.default_rng(rng.integers(2**63))

    def _drop(self, x: Tensor) -> Tensor:
        return dc.dropout(x, self.p, self.rng, self.training)

    def __call__(self, x: Tensor, mask: np.ndarray, memory: Tensor | None = None, memory_mask=None) -> Tensor:
        h = self.norm1(x)
        x = x + self._drop(self.attn(h, h, mask))
        if self.cross is not None:
            x = x + self._drop(self.cross(self.norm_cross(x), memory, memory_mask))
        x = x + self._drop(self.ff2(dc.relu(self.ff1(self.norm2(x)))))
        return x


class CausalConvLayer(Module):
    def __init__(self, d: int, filter_size: int, dilation: int, rng: np.random.Generator):
        self.weight = uniform_fan_in(rng, (filter_size, d, d), filter_size * d, "weight")
        self.bias = uniform_fan_in(rng, (d,), filter_size * d, "bias")
        self.dilation = dilation

    def __call__(self, x: Tensor) -> Tensor:
        return dc.causal_conv1d(x, self.weight, self.dilation) + self.bias
