"""Context encoder: temporal encoding of target and neighbors into a fused
per-step context feature.

Each vehicle's state sequence is embedded by a small MLP with ELU output,
encoded by a GRU shared across vehicles, and the target's per-step states
attend over the neighbors' final states. A gated linear unit fuses the
attended neighborhood summary with the target's own encoding.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import GRUCell, Linear, Module, masked_softmax, merge_heads, run_gru, split_heads
from .tensor import Tensor


class StateEmbed(Module):
    """One-hidden-layer perceptron with ELU activations (embedding of raw states)."""

    def __init__(self, in_dim: int, out_dim: int, rng, alpha: float = 1.0):
        super().__init__()
        self.l1 = Linear(in_dim, out_dim, rng)
        self.l2 = Linear(out_dim, out_dim, rng)
        self.alpha = alpha

    def __call__(self, x: Tensor) -> Tensor:
        return T.elu(self.l2(T.elu(self.l1(x), self.alpha)), self.alpha)


class NeighborAttention(Module):
    """Per-step scaled dot-product attention from the target onto neighbor
    final states; multi-head, heads concatenated."""

    def __init__(self, dim: int, n_heads: int, rng):
        super().__init__()
        self.n_heads = n_heads
        self.w_q = Linear(dim, dim, rng)
        self.w_k = Linear(dim, dim, rng)
        self.w_v = Linear(dim, dim, rng)

    def __call__(self, target_states: Tensor, nbr_finals: Tensor,
                 nbr_mask: np.ndarray) -> Tensor:
        # target_states (B,T,H), nbr_finals (B,N,H), nbr_mask (B,N)
        n = nbr_finals.shape[1]
        if n == 0:
            return Tensor(np.zeros(target_states.shape))
        hd = target_states.shape[-1] // self.n_heads
        q = split_heads(self.w_q(target_states), self.n_heads)   # (B,h,T,hd)
        k = split_heads(self.w_k(nbr_finals), self.n_heads)      # (B,h,N,hd)
        v = split_heads(self.w_v(nbr_finals), self.n_heads)
        scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(hd))
        valid = np.broadcast_to(nbr_mask[:, None, None, :], scores.shape).copy()
        att = masked_softmax(scores, valid, axis=-1)
        return merge_heads(T.matmul(att, v))                     # (B,T,H)


class ContextEncoder(Module):
    def __init__(self, state_dim: int, embed_dim: int, dim: int, n_heads: int,
                 rng, alpha: float = 1.0):
        super().__init__()
        self.embed = StateEmbed(state_dim, embed_dim, rng, alpha)
        self.gru = GRUCell(embed_dim, dim, rng)
        self.attention = NeighborAttention(dim, n_heads, rng)
        self.fuse = Linear(2 * dim, 2 * dim, rng)

    def encode_target(self, target_feats: Tensor) -> Tensor:
        """Embed and GRU-encode the target history; returns per-step states."""
        if target_feats.shape[-2] == 0:
            raise DimensionError("cannot encode an empty history")
        states, _ = run_gru(self.gru, self.embed(target_feats))
        return states

    def encode_neighbors(self, nbr_feats: Tensor, frame_mask: np.ndarray) -> Tensor:
        """Embed and GRU-encode neighbor cell histories; returns final states.

        The frame mask gates the recurrence so frames where a cell is empty
        carry the previous hidden state through.
        """
        emb = self.embed(nbr_feats)
        _, finals = run_gru(self.gru, emb, frame_mask=frame_mask)
        return finals

    def __call__(self, target_feats: Tensor, nbr_feats: Tensor,
                 nbr_frame_mask: np.ndarray, nbr_mask: np.ndarray) -> Tensor:
        # target_feats (B,T,D); nbr_feats (B,N,T,D). Target and neighbors run
        # through one fused GRU unroll (shared parameters either way).
        b, t_steps, d = target_feats.shape
        n = nbr_feats.shape[1]
        if n > 0:
            joint = T.concat([target_feats.reshape((b, 1, t_steps, d)),
                              nbr_feats], axis=1)
            mask = np.concatenate([np.ones((b, 1, t_steps)), nbr_frame_mask],
                                  axis=1)
            states, finals_all = run_gru(self.gru, self.embed(joint),
                                         frame_mask=mask)
            target_states = states[:, 0]
            finals = finals_all[:, 1:]
        else:
            target_states = self.encode_target(target_feats)
            finals = Tensor(np.zeros((b, 0, target_states.shape[-1])))
        heads = self.attention(target_states, finals, nbr_mask)
        fused = self.fuse(T.concat([target_states, heads], axis=-1))
        return T.glu(fused, axis=-1)                              # (B,T,dim)
