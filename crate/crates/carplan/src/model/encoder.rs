//! Displacement-aware predictive encoder: modality-specific token embedding,
//! a masked transformer over scene tokens, and a train-only displacement head
//! that reads (but never writes) the encoded features.

use rand_chacha::ChaCha8Rng;

use crate::numerics::{Binding, ParamStore, Tape, ValueId};
use crate::scene::{AgentTrack, Category, Scenario};

use super::blocks::{AttnP, LayerNormP, LinearP, MlpP};
use super::ModelConfig;

const AV_FEATS: usize = 8;
const AGENT_STEP_FEATS: usize = 12;
const MAP_POINT_FEATS: usize = 7;
const POS_SCALE: f64 = 10.0;

/// Concatenated scene tokens: row 0 is the AV, then agents, then map
/// polylines, in fixed order.
pub struct SceneTokens {
    pub tokens: ValueId,
    pub valid: Vec<bool>,
    pub n_agents: usize,
    pub n_map: usize,
}

/// Encoder output, one feature row per token; masked rows are never read
/// downstream.
pub struct SceneFeatures {
    pub features: ValueId,
    pub valid: Vec<bool>,
    pub n_agents: usize,
    pub n_map: usize,
}

struct EncLayer {
    ln_attn: LayerNormP,
    attn: AttnP,
    ln_ffn: LayerNormP,
    ffn: MlpP,
}

pub struct Encoder {
    av_embed: MlpP,
    agent_step: LinearP,
    map_point: LinearP,
    layers: Vec<EncLayer>,
    final_ln: LayerNormP,
    disp_head: MlpP,
    history_steps: usize,
    future_steps: usize,
}

impl Encoder {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let av_embed = MlpP::new(ps, rng, "enc.av", AV_FEATS, d, d);
        let agent_step = LinearP::new(ps, rng, "enc.agent_step", AGENT_STEP_FEATS, d);
        let map_point = LinearP::new(ps, rng, "enc.map_point", MAP_POINT_FEATS, d);
        let layers = (0..cfg.enc_layers)
            .map(|i| EncLayer {
                ln_attn: LayerNormP::new(ps, &format!("enc.layer{i}.ln_attn"), d),
                attn: AttnP::new(ps, rng, &format!("enc.layer{i}.attn"), d, cfg.n_heads),
                ln_ffn: LayerNormP::new(ps, &format!("enc.layer{i}.ln_ffn"), d),
                ffn: MlpP::new(ps, rng, &format!("enc.layer{i}.ffn"), d, cfg.ffn_width, d),
            })
            .collect();
        let final_ln = LayerNormP::new(ps, "enc.final_ln", d);
        let disp_head =
            MlpP::new(ps, rng, "disp_head", 2 * d, 2 * d, cfg.future_steps * 2);
        Encoder {
            av_embed,
            agent_step,
            map_point,
            layers,
            final_ln,
            disp_head,
            history_steps: cfg.history_steps,
            future_steps: cfg.future_steps,
        }
    }

    /// Embed the AV (current state only), agent histories, and map polylines
    /// into one token each.
    pub fn embed(&self, t: &mut Tape, bind: &Binding, scenario: &Scenario) -> SceneTokens {
        let mut rows = Vec::with_capacity(1 + scenario.agents.len() + scenario.map.len());
        let mut valid = Vec::with_capacity(rows.capacity());

        let av_now = scenario.av.current(scenario.history_steps);
        let av_in = t.leaf_row(av_features(av_now));
        rows.push(self.av_embed.fwd(t, bind, av_in));
        valid.push(true);

        for track in &scenario.agents {
            rows.push(self.embed_agent(t, bind, track, scenario.history_steps));
            valid.push(true);
        }
        for pl in &scenario.map {
            let mut feats = Vec::with_capacity(pl.points.len() * MAP_POINT_FEATS);
            for p in &pl.points {
                feats.extend_from_slice(&map_point_features(p.x, p.y, pl.kind as usize));
            }
            let pts = t.leaf(pl.points.len(), MAP_POINT_FEATS, feats);
            let h = self.map_point.fwd(t, bind, pts);
            let h = t.relu(h);
            rows.push(t.max_pool_rows(h, None));
            valid.push(true);
        }

        let tokens = t.concat_rows(&rows);
        SceneTokens {
            tokens,
            valid,
            n_agents: scenario.agents.len(),
            n_map: scenario.map.len(),
        }
    }

    fn embed_agent(
        &self,
        t: &mut Tape,
        bind: &Binding,
        track: &AgentTrack,
        history_steps: usize,
    ) -> ValueId {
        let steps = history_steps + 1;
        let mut feats = Vec::with_capacity(steps * AGENT_STEP_FEATS);
        let mut mask = Vec::with_capacity(steps);
        for i in 0..steps {
            let ok = track.valid[i];
            mask.push(ok);
            if ok {
                feats.extend_from_slice(&agent_step_features(&track.states[i]));
            } else {
                feats.extend_from_slice(&[0.0; AGENT_STEP_FEATS]);
            }
        }
        let x = t.leaf(steps, AGENT_STEP_FEATS, feats);
        let h = self.agent_step.fwd(t, bind, x);
        let h = t.relu(h);
        t.max_pool_rows(h, Some(&mask))
    }

    /// The transformer over scene tokens; identical for training and
    /// inference (the displacement head is a separate read-only consumer).
    pub fn encode(&self, t: &mut Tape, bind: &Binding, tokens: &SceneTokens) -> SceneFeatures {
        let mut x = tokens.tokens;
        for layer in &self.layers {
            let normed = layer.ln_attn.fwd(t, bind, x);
            let att = layer.attn.fwd(t, bind, normed, normed, normed, Some(&tokens.valid));
            x = t.add(x, att);
            let normed = layer.ln_ffn.fwd(t, bind, x);
            let ff = layer.ffn.fwd(t, bind, normed);
            x = t.add(x, ff);
        }
        let features = self.final_ln.fwd(t, bind, x);
        SceneFeatures {
            features,
            valid: tokens.valid.clone(),
            n_agents: tokens.n_agents,
            n_map: tokens.n_map,
        }
    }

    /// Train-only displacement predictions: each agent/map feature row is
    /// concatenated channel-wise with the AV row and mapped to T_f future
    /// displacement vectors. Output is (N_a+N_p) × (T_f·2).
    pub fn predict_displacements(
        &self,
        t: &mut Tape,
        bind: &Binding,
        f: &SceneFeatures,
    ) -> ValueId {
        let n_elems = f.n_agents + f.n_map;
        assert!(n_elems > 0, "displacement head needs at least one scene element");
        let av_row = t.slice_rows(f.features, 0, 1);
        let elems = t.slice_rows(f.features, 1, n_elems);
        let mut paired = Vec::with_capacity(n_elems);
        for i in 0..n_elems {
            let row = t.slice_rows(elems, i, 1);
            paired.push(t.concat_cols(&[av_row, row]));
        }
        let stacked = t.concat_rows(&paired);
        self.disp_head.fwd(t, bind, stacked)
    }

    pub fn future_steps(&self) -> usize {
        self.future_steps
    }

    pub fn history_steps(&self) -> usize {
        self.history_steps
    }
}

fn av_features(s: &crate::scene::AgentState) -> Vec<f64> {
    vec![
        s.x / POS_SCALE,
        s.y / POS_SCALE,
        s.heading.cos(),
        s.heading.sin(),
        s.vx / POS_SCALE,
        s.vy / POS_SCALE,
        s.length / 5.0,
        s.width / 2.0,
    ]
}

fn agent_step_features(s: &crate::scene::AgentState) -> [f64; AGENT_STEP_FEATS] {
    let (cv, cp, cb) = match s.category {
        Category::Vehicle => (1.0, 0.0, 0.0),
        Category::Pedestrian => (0.0, 1.0, 0.0),
        Category::Bicycle => (0.0, 0.0, 1.0),
    };
    [
        s.x / POS_SCALE,
        s.y / POS_SCALE,
        s.heading.cos(),
        s.heading.sin(),
        s.vx / POS_SCALE,
        s.vy / POS_SCALE,
        s.length / 5.0,
        s.width / 2.0,
        cv,
        cp,
        cb,
        1.0,
    ]
}

fn map_point_features(x: f64, y: f64, kind: usize) -> [f64; MAP_POINT_FEATS] {
    let mut f = [x / POS_SCALE, y / POS_SCALE, 0.0, 0.0, 0.0, 0.0, 0.0];
    f[2 + kind] = 1.0;
    // Coarse range bucket helps separate near and far geometry.
    f[5] = (x * x + y * y).sqrt() / 50.0;
    f[6] = 1.0;
    f
}
