//! The planner model: a displacement-aware scene encoder feeding a
//! mixture-of-experts trajectory decoder. The displacement head is a
//! train-only consumer of the encoded features; skipping it cannot change
//! planner output.

pub mod blocks;
pub mod decoder;
pub mod encoder;

pub use decoder::{
    accumulate_usage, expert_mix, route_queries, select_top_k, Decoder, ExpertUsage,
    RoutingDecision,
};
pub use encoder::{Encoder, SceneFeatures, SceneTokens};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::numerics::{
    load_checkpoint, save_checkpoint, Binding, NumericsError, ParamStore, Tape, ValueId,
};
use crate::scene::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpeMode {
    Off,
    AgentOnly,
    MapOnly,
    AgentMap,
}

impl std::str::FromStr for DpeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(DpeMode::Off),
            "agent" => Ok(DpeMode::AgentOnly),
            "map" => Ok(DpeMode::MapOnly),
            "agent_map" => Ok(DpeMode::AgentMap),
            other => Err(format!("unknown dpe mode: {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterMode {
    SceneAware,
    PlainMlp,
}

impl std::str::FromStr for RouterMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scene_aware" => Ok(RouterMode::SceneAware),
            "mlp" => Ok(RouterMode::PlainMlp),
            other => Err(format!("unknown router mode: {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub num_modes: usize,
    /// 0 disables the mixture entirely (plain FFN decoder).
    pub routed_experts: usize,
    pub top_k: usize,
    pub shared_experts: usize,
    pub router: RouterMode,
    pub dpe: DpeMode,
    pub history_steps: usize,
    pub future_steps: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            ffn_width: 256,
            enc_layers: 4,
            dec_layers: 4,
            num_modes: 6,
            routed_experts: 16,
            top_k: 2,
            shared_experts: 2,
            router: RouterMode::SceneAware,
            dpe: DpeMode::AgentMap,
            history_steps: 20,
            future_steps: 40,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The tiny configuration used for end-to-end gradient verification.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            ffn_width: 16,
            enc_layers: 2,
            dec_layers: 2,
            num_modes: 2,
            routed_experts: 4,
            top_k: 2,
            shared_experts: 1,
            future_steps: 5,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_model % self.n_heads != 0 {
            return Err(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.routed_experts > 0 && self.top_k > self.routed_experts {
            return Err(format!(
                "top_k {} exceeds routed expert count {}",
                self.top_k, self.routed_experts
            ));
        }
        if self.routed_experts > 0 && self.top_k == 0 && self.shared_experts == 0 {
            return Err("mixture needs top_k > 0 or shared experts".into());
        }
        if self.dec_layers == 0 || self.enc_layers == 0 {
            return Err("need at least one encoder and decoder layer".into());
        }
        Ok(())
    }
}

/// M candidate trajectories with confidence logits, as plain values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    /// M × T_f rows of (x, y, heading).
    pub trajectories: Vec<Vec<[f64; 3]>>,
    pub scores: Vec<f64>,
}

impl PlanOutput {
    pub fn best_mode(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mx = self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.scores.iter().map(|s| (s - mx).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

/// Tape handles produced by one forward pass.
pub struct ForwardOutput {
    pub features: SceneFeatures,
    /// M×(T_f·3) trajectory regression.
    pub traj: ValueId,
    /// M×1 confidence logits.
    pub score_logits: ValueId,
    /// (N_a+N_p)×(T_f·2) displacement predictions, when evaluated.
    pub disp: Option<ValueId>,
    pub decisions: Vec<RoutingDecision>,
}

pub struct CarPlan {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

impl CarPlan {
    pub fn new(config: ModelConfig) -> Self {
        config.validate().expect("invalid model config");
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Encoder::new(&mut params, &mut rng, &config);
        let decoder = Decoder::new(&mut params, &mut rng, &config);
        CarPlan { config, params, encoder, decoder }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    fn check_compat(&self, scenario: &Scenario) {
        assert_eq!(
            scenario.history_steps, self.config.history_steps,
            "scenario history length does not match model"
        );
    }

    /// Forward pass on an existing tape. `eval_disp` controls whether the
    /// displacement head runs; the planner path is identical either way.
    pub fn forward(
        &self,
        t: &mut Tape,
        bind: &Binding,
        scenario: &Scenario,
        eval_disp: bool,
    ) -> ForwardOutput {
        self.check_compat(scenario);
        let tokens = self.encoder.embed(t, bind, scenario);
        let features = self.encoder.encode(t, bind, &tokens);
        let disp = if eval_disp && (features.n_agents + features.n_map) > 0 {
            Some(self.encoder.predict_displacements(t, bind, &features))
        } else {
            None
        };
        let queries = self.decoder.init_queries(t, bind, &scenario.centerlines);
        let (f_sa, decisions) = self.decoder.decode(t, bind, queries, &features);
        let traj = self.decoder.trajectory_head(t, bind, f_sa);
        let score_logits = self.decoder.score_head(t, bind, f_sa);
        ForwardOutput { features, traj, score_logits, disp, decisions }
    }

    /// Inference: fresh tape, no displacement head, plain-value outputs.
    pub fn infer(&self, scenario: &Scenario) -> (PlanOutput, Vec<RoutingDecision>) {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &bind, scenario, false);
        (self.extract_plan(&tape, &out), out.decisions)
    }

    pub fn extract_plan(&self, t: &Tape, out: &ForwardOutput) -> PlanOutput {
        let tf = self.config.future_steps;
        let m = self.config.num_modes;
        let traj = t.data(out.traj);
        let mut trajectories = Vec::with_capacity(m);
        for mode in 0..m {
            let row = &traj[mode * tf * 3..(mode + 1) * tf * 3];
            trajectories.push((0..tf).map(|k| [row[k * 3], row[k * 3 + 1], row[k * 3 + 2]]).collect());
        }
        let scores = t.data(out.score_logits).to_vec();
        PlanOutput { trajectories, scores }
    }

    /// A fresh model with identical configuration and parameter values.
    pub fn fork(&self) -> CarPlan {
        let mut fresh = CarPlan::new(self.config.clone());
        for i in 0..self.params.len() {
            let id = crate::numerics::ParamId(i);
            fresh.params.tensor_mut(id).data.clone_from(&self.params.tensor(id).data);
        }
        fresh
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        save_checkpoint(path, &cfg, &self.params)
    }

    /// Rebuild a model from a checkpoint. Displacement-head parameters may be
    /// absent (they are train-only); anything else missing is an error.
    pub fn load(path: &Path) -> Result<CarPlan, NumericsError> {
        let ck = load_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_str(&ck.config_json)
            .map_err(|e| NumericsError::Checkpoint(format!("bad embedded config: {e}")))?;
        let mut model = CarPlan::new(config);
        model
            .params
            .load_from(&ck.params, &["disp_head."])
            .map_err(NumericsError::Checkpoint)?;
        Ok(model)
    }
}
