"""Full trajectory-prediction model: composition of the four encoders/decoders
plus the ablation variants.

Variants (selected by config):
  gava      — full model.
  gava-iam  — interaction encoder removed; graph nodes carry each occupant's
              independently embedded raw state (still visually weighted).
  gava-vam  — visual matrix forced to all-ones.
  gava-nvm  — node set doubled: masked and unmasked interaction features both
              enter the graph.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .batch import Batch, make_batch
from .config import TrainConfig
from .context import ContextEncoder, StateEmbed
from .decoder import (ContextDecoder, GaussianEmitter, GaussianTrajectory,
                      IntentionFuse, ManeuverDistribution, ManeuverHeads,
                      VisualEncoder, gaussian_constrain)
from .interaction import InteractionEncoder, build_interaction_tensor
from .nn import Module
from .scene import N_CONTINUOUS, STATE_DIM, SceneSample
from .tensor import Tensor, no_grad
from .vision import VisionModule, build_visual_matrix, nearby_radius


class GavaModel(Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        ss = np.random.SeedSequence(cfg.seed)
        init_ss, drop_ss = ss.spawn(2)
        rng = np.random.default_rng(init_ss)
        self.dropout_rng = np.random.default_rng(drop_ss)

        self.register_buffer("feat_mean", np.zeros(STATE_DIM))
        self.register_buffer("feat_scale", np.ones(STATE_DIM))

        self.context = ContextEncoder(STATE_DIM, cfg.embed_dim, cfg.dim,
                                      cfg.n_heads, rng, cfg.elu_alpha)
        if cfg.variant == "gava-iam":
            self.node_embed = StateEmbed(STATE_DIM, cfg.iam_embed_dim, rng,
                                         cfg.elu_alpha)
            node_dim = cfg.iam_embed_dim
        else:
            self.interaction = InteractionEncoder(
                cfg.interaction_channels, cfg.interaction_gru_hidden,
                cfg.dropout, rng, self.dropout_rng, cfg.elu_alpha,
                cfg.interaction_norm_after_act)
            node_dim = cfg.node_window
        self.vision = VisionModule(node_dim, cfg.dim, cfg.dropout, rng,
                                   self.dropout_rng, cfg.gat_leaky_slope,
                                   cfg.elu_alpha, cfg.gat_raw_score_norm)
        self.encoder = VisualEncoder(cfg.dim, cfg.n_heads, cfg.ff_dim,
                                     cfg.n_layers, rng, cfg.elu_alpha)
        self.decoder = ContextDecoder(cfg.dim, cfg.n_heads, cfg.ff_dim,
                                      cfg.n_layers, cfg.history_steps,
                                      cfg.dropout, rng, self.dropout_rng,
                                      cfg.elu_alpha)
        self.heads = ManeuverHeads(cfg.dim, rng)
        self.intent = IntentionFuse(cfg.dim, cfg.history_steps,
                                    cfg.future_steps, rng, cfg.elu_alpha)
        self.emit = GaussianEmitter(cfg.dim, rng, cfg.emitter_mu_gain)

    # ---- normalization -----------------------------------------------------

    def set_normalization(self, mean: np.ndarray, scale: np.ndarray) -> None:
        """Install train-split feature statistics (continuous features only)."""
        full_mean = np.zeros(STATE_DIM)
        full_scale = np.ones(STATE_DIM)
        full_mean[:N_CONTINUOUS] = mean
        full_scale[:N_CONTINUOUS] = scale
        self.set_buffer("feat_mean", full_mean)
        self.set_buffer("feat_scale", full_scale)

    def _normalized_inputs(self, batch: Batch) -> tuple[Tensor, Tensor]:
        tf = (batch.target_feats - self.feat_mean) / self.feat_scale
        nf = (batch.nbr_feats - self.feat_mean) / self.feat_scale
        nf = nf * batch.nbr_frame_mask[..., None]
        return Tensor(tf), Tensor(nf)

    # ---- graph assembly -----------------------------------------------------

    def _visual_matrix(self, batch: Batch) -> np.ndarray:
        if self.cfg.variant == "gava-vam":
            return np.ones((batch.size, batch.history_steps,
                            batch.grid_slots, batch.grid_lanes))
        return build_visual_matrix(batch, self.cfg)

    def _gather_cells(self, grid_values: Tensor | np.ndarray, batch: Batch):
        """(B,T,cells) -> (B,T,N) at each packed entry's slot."""
        b, n = batch.nbr_slot.shape
        bi = np.broadcast_to(np.arange(b)[:, None, None],
                             (b, batch.history_steps, n))
        ti = np.broadcast_to(np.arange(batch.history_steps)[None, :, None],
                             (b, batch.history_steps, n))
        slots = np.broadcast_to(batch.nbr_slot[:, None, :],
                                (b, batch.history_steps, n))
        return grid_values[bi, ti, slots]

    def _conv_windows(self, h_conv: Tensor, batch: Batch) -> Tensor:
        """Per-frame node features derived from the conv feature: the cell's
        H_conv values over a centered window of frames, edge-clamped.

        (B,T,cells) -> (B,T,N,window)."""
        w = self.cfg.node_window
        b, n = batch.nbr_slot.shape
        t_steps = batch.history_steps
        offsets = np.arange(-(w // 2), w // 2 + 1)
        bi = np.broadcast_to(np.arange(b)[:, None, None, None],
                             (b, t_steps, n, w))
        ti = np.clip(np.arange(t_steps)[None, :, None, None]
                     + offsets[None, None, None, :], 0, t_steps - 1)
        ti = np.broadcast_to(ti, (b, t_steps, n, w))
        slots = np.broadcast_to(batch.nbr_slot[:, None, :, None],
                                (b, t_steps, n, w))
        return h_conv[bi, ti, slots]

    def _graph_inputs(self, batch: Batch, nf: Tensor):
        """Node features, validity, nearby bias, and slot map for the GAT."""
        cfg = self.cfg
        b, t_steps, n = batch.size, batch.history_steps, batch.n_nbrs
        visual = self._visual_matrix(batch)
        vis_flat = visual.reshape(b, t_steps, -1)
        vis_cells = self._gather_cells(vis_flat, batch)             # (B,T,N) np
        frame_mask = batch.nbr_frame_mask.transpose(0, 2, 1)        # (B,T,N)

        if cfg.variant == "gava-iam":
            # independent per-vehicle data only: the relational position
            # features are zeroed, leaving own kinematics and labels
            own = np.ones(STATE_DIM)
            own[:2] = 0.0
            emb_n = self.node_embed(nf * Tensor(own))               # (B,N,T,e)
            emb_n = emb_n.transpose((0, 2, 1, 3))                   # (B,T,N,e)
            cell_nodes = [emb_n * Tensor((vis_cells * frame_mask)[..., None])]
            tf_emb = self.node_embed(Tensor(
                own * (batch.target_feats - self.feat_mean) / self.feat_scale))
            target_node = tf_emb.reshape((b, t_steps, 1, cfg.iam_embed_dim))
        elif n == 0:
            # nothing occupied anywhere in the batch: the interaction branch
            # could only produce unused values, so skip it entirely
            cell_nodes = [Tensor(np.zeros((b, t_steps, 0, cfg.node_window)))]
            target_node = Tensor(np.ones((b, t_steps, 1, cfg.node_window)))
            if cfg.variant == "gava-nvm":
                cell_nodes.append(cell_nodes[0])
        else:
            d = build_interaction_tensor(batch)
            h_conv = self.interaction(d)                            # (B,T,cells)
            h_cells = self._conv_windows(h_conv, batch)             # (B,T,N,w)
            masked = h_cells * Tensor((vis_cells * frame_mask)[..., None])
            cell_nodes = [masked]
            target_node = Tensor(np.ones((b, t_steps, 1, h_cells.shape[-1])))
            if cfg.variant == "gava-nvm":
                unmasked = h_cells * Tensor(frame_mask[..., None])
                cell_nodes.append(unmasked)
        copies = len(cell_nodes)
        nodes = T.concat([target_node] + cell_nodes, axis=-2)

        valid = np.concatenate(
            [np.ones((b, t_steps, 1))] + [frame_mask] * copies, axis=-1)
        slot_tiled = np.broadcast_to(batch.nbr_slot[:, None, :], (b, t_steps, n))
        slot_index = np.concatenate([slot_tiled] * copies, axis=-1).astype(np.int64) \
            if n else np.zeros((b, t_steps, 0), dtype=np.int64)
        node_frame_mask = np.concatenate([frame_mask] * copies, axis=-1) \
            if n else frame_mask

        # nearby-area bias: both endpoints inside max(safety_time*v, floor)
        radius = nearby_radius(batch.target_speed, cfg.safety_time,
                               cfg.safety_floor)                    # (B,T)
        dist = batch.nbr_dist.transpose(0, 2, 1)                    # (B,T,N)
        inside_cells = (dist <= radius[..., None]) & (frame_mask > 0)
        inside = np.concatenate(
            [np.ones((b, t_steps, 1), dtype=bool)] + [inside_cells] * copies, axis=-1)
        nearby = (inside[..., :, None] & inside[..., None, :]).astype(np.float64)
        return nodes, valid, nearby, slot_index, node_frame_mask, copies

    # ---- forward ------------------------------------------------------------

    def forward(self, batch: Batch):
        """Returns (mu, sigma, rho, p_lat, p_lon) tensors.

        mu/sigma: (B, N_MODES, F, 2); rho: (B, N_MODES, F);
        p_lat: (B, 3); p_lon: (B, 2).
        """
        cfg = self.cfg
        tf, nf = self._normalized_inputs(batch)
        context = self.context(tf, nf, batch.nbr_frame_mask, batch.nbr_mask)

        nodes, valid, nearby, slot_index, node_fm, copies = self._graph_inputs(batch, nf)
        z = self.vision(nodes, valid, nearby, cfg.nearby_bias, slot_index,
                        node_fm, batch.n_cells, copies)             # (B,cells,dim)
        # padding mask: zero rows of never-occupied slots stay out of attention
        slot_valid = np.zeros((batch.size, batch.n_cells))
        np.maximum.at(slot_valid,
                      (np.arange(batch.size)[:, None], batch.nbr_slot),
                      batch.nbr_mask)
        memory = self.encoder(z, slot_valid)
        hidden = self.decoder(memory, context, slot_valid)          # (B,T,dim)
        p_lat, p_lon = self.heads(hidden)
        fused = self.intent(hidden)                                 # (B,M,F,dim)
        raw = self.emit(fused)                                      # (B,M,F,5)
        mu, sigma, rho = gaussian_constrain(raw, cfg.sigma_min, cfg.sigma_max,
                                            cfg.rho_max)
        return mu, sigma, rho, p_lat, p_lon

    __call__ = forward

    # ---- prediction ---------------------------------------------------------

    def predict_batch(self, samples: list[SceneSample]) -> list[GaussianTrajectory]:
        """Run in eval mode without recording; returns one trajectory per sample."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                batch = make_batch(samples)
                mu, sigma, rho, p_lat, p_lon = self.forward(batch)
        finally:
            self.train(was_training)
        out = []
        for i in range(batch.size):
            out.append(GaussianTrajectory(
                means=mu.data[i].copy(), sigmas=sigma.data[i].copy(),
                rhos=rho.data[i].copy(),
                maneuvers=ManeuverDistribution(
                    p_lateral=p_lat.data[i].copy(),
                    p_longitudinal=p_lon.data[i].copy())))
        return out

    def predict(self, sample: SceneSample) -> GaussianTrajectory:
        return self.predict_batch([sample])[0]
