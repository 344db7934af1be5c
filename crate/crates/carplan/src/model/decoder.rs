//! Context-adaptive multi-expert decoder: centerline-initialized trajectory
//! queries refined by stacked layers whose FFN sublayer is a mixture of
//! experts. A scene-aware router picks the top-K routed experts per query;
//! shared experts always run. The first layer uses a single plain FFN.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Binding, ParamStore, Tape, ValueId};
use crate::scene::Centerline;

use super::blocks::{AttnP, LayerNormP, LinearP, MlpP};
use super::encoder::SceneFeatures;
use super::{ModelConfig, RouterMode};

const CL_POINT_FEATS: usize = 4;
const POS_SCALE: f64 = 10.0;

/// One decode layer's routing outcome. `selected` orders experts by
/// descending score with ties broken toward the lower index; `weights` are
/// the raw softmax scores of the selected experts (not renormalized).
#[derive(Debug, Clone)]
pub struct RoutingDecision {
    pub num_experts: usize,
    pub num_queries: usize,
    /// Full per-query softmax distribution, row-major M×N.
    pub scores: Vec<f64>,
    pub selected: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
    /// Tape node of the M×N score matrix (for the balance loss).
    pub scores_node: ValueId,
    /// Tape nodes of each selected weight (for expert mixing).
    pub weight_nodes: Vec<Vec<ValueId>>,
}

/// Per-layer expert-selection counts for telemetry and reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertUsage {
    pub layer: usize,
    pub counts: Vec<u64>,
}

/// Indices of the K largest scores, descending by score; equal scores favor
/// the lower index.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    assert!(k <= scores.len(), "top-k: k={k} exceeds {} experts", scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap().then_with(|| a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

struct Router {
    mode: RouterMode,
    ln_sa: LayerNormP,
    sa: AttnP,
    ln_ca: LayerNormP,
    ca: AttnP,
    mlp: MlpP,
}

impl Router {
    fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Router {
            mode: cfg.router,
            ln_sa: LayerNormP::new(ps, &format!("{name}.ln_sa"), d),
            sa: AttnP::new(ps, rng, &format!("{name}.sa"), d, cfg.n_heads),
            ln_ca: LayerNormP::new(ps, &format!("{name}.ln_ca"), d),
            ca: AttnP::new(ps, rng, &format!("{name}.ca"), d, cfg.n_heads),
            mlp: MlpP::new(ps, rng, &format!("{name}.mlp"), d, d, cfg.routed_experts),
        }
    }

    /// Softmax scores over the routed experts, M×N.
    fn scores(
        &self,
        t: &mut Tape,
        bind: &Binding,
        queries: ValueId,
        scene: &SceneFeatures,
    ) -> ValueId {
        let routed_q = match self.mode {
            RouterMode::SceneAware => {
                let n = self.ln_sa.fwd(t, bind, queries);
                let sa = self.sa.fwd(t, bind, n, n, n, None);
                let q = t.add(queries, sa);
                let n = self.ln_ca.fwd(t, bind, q);
                let ca = self.ca.fwd(t, bind, n, scene.features, scene.features, Some(&scene.valid));
                t.add(q, ca)
            }
            // Plain variant: an MLP on the queries alone, no attention.
            RouterMode::PlainMlp => queries,
        };
        let logits = self.mlp.fwd(t, bind, routed_q);
        t.softmax_rows(logits)
    }
}

struct MoeBlock {
    router: Router,
    ln: LayerNormP,
    shared: Vec<MlpP>,
    routed: Vec<MlpP>,
    top_k: usize,
}

impl MoeBlock {
    fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        MoeBlock {
            router: Router::new(ps, rng, &format!("{name}.router"), cfg),
            ln: LayerNormP::new(ps, &format!("{name}.ln"), d),
            shared: (0..cfg.shared_experts)
                .map(|i| MlpP::new(ps, rng, &format!("{name}.shared{i}"), d, cfg.ffn_width, d))
                .collect(),
            routed: (0..cfg.routed_experts)
                .map(|i| MlpP::new(ps, rng, &format!("{name}.routed{i}"), d, cfg.ffn_width, d))
                .collect(),
            top_k: cfg.top_k,
        }
    }
}

/// Route a query block against the scene: softmax over experts, then top-K
/// per query with deterministic tie-breaking.
pub fn route_queries(
    t: &mut Tape,
    scores_node: ValueId,
    top_k: usize,
) -> RoutingDecision {
    let (m, n) = t.shape(scores_node);
    let scores = t.data(scores_node).to_vec();
    let mut selected = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let mut weight_nodes = Vec::with_capacity(m);
    for q in 0..m {
        let row = &scores[q * n..(q + 1) * n];
        let top = select_top_k(row, top_k);
        let w: Vec<f64> = top.iter().map(|&i| row[i]).collect();
        let nodes: Vec<ValueId> = top.iter().map(|&i| t.get_elem(scores_node, q, i)).collect();
        selected.push(top);
        weights.push(w);
        weight_nodes.push(nodes);
    }
    RoutingDecision {
        num_experts: n,
        num_queries: m,
        scores,
        selected,
        weights,
        scores_node,
        weight_nodes,
    }
}

/// Eq.-style sparse mixture: every shared expert plus the selected routed
/// experts, each routed output weighted by its raw router score. Each query
/// row is processed independently.
pub fn expert_mix(
    t: &mut Tape,
    bind: &Binding,
    x: ValueId,
    decision: &RoutingDecision,
    shared: &[MlpP],
    routed: &[MlpP],
) -> ValueId {
    let (m, _d) = t.shape(x);
    assert_eq!(m, decision.num_queries);
    let mut out_rows = Vec::with_capacity(m);
    for q in 0..m {
        let row = t.slice_rows(x, q, 1);
        let mut acc: Option<ValueId> = None;
        for s in shared {
            let y = s.fwd(t, bind, row);
            acc = Some(match acc {
                None => y,
                Some(a) => t.add(a, y),
            });
        }
        for (slot, &expert_idx) in decision.selected[q].iter().enumerate() {
            let y = routed[expert_idx].fwd(t, bind, row);
            let wy = t.mul_scalar_node(y, decision.weight_nodes[q][slot]);
            acc = Some(match acc {
                None => wy,
                Some(a) => t.add(a, wy),
            });
        }
        out_rows.push(acc.expect("expert bank cannot be empty"));
    }
    t.concat_rows(&out_rows)
}

enum FfnKind {
    Plain { ln: LayerNormP, ffn: MlpP },
    Moe(MoeBlock),
}

struct DecLayer {
    ln_sa: LayerNormP,
    sa: AttnP,
    ln_ca: LayerNormP,
    ca: AttnP,
    ffn: FfnKind,
}

pub struct Decoder {
    cl_point: LinearP,
    mode_embed: crate::numerics::ParamId,
    layers: Vec<DecLayer>,
    final_ln: LayerNormP,
    traj_head: MlpP,
    score_head: MlpP,
    num_modes: usize,
    future_steps: usize,
}

impl Decoder {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let cl_point = LinearP::new(ps, rng, "dec.cl_point", CL_POINT_FEATS, d);
        let mode_embed = ps.register("dec.mode_embed", cfg.num_modes, d, d, rng);
        let layers = (0..cfg.dec_layers)
            .map(|i| {
                let name = format!("dec.layer{i}");
                let ffn = if i == 0 || cfg.routed_experts == 0 {
                    FfnKind::Plain {
                        ln: LayerNormP::new(ps, &format!("{name}.ln_ffn"), d),
                        ffn: MlpP::new(ps, rng, &format!("{name}.ffn"), d, cfg.ffn_width, d),
                    }
                } else {
                    FfnKind::Moe(MoeBlock::new(ps, rng, &format!("{name}.moe"), cfg))
                };
                DecLayer {
                    ln_sa: LayerNormP::new(ps, &format!("{name}.ln_sa"), d),
                    sa: AttnP::new(ps, rng, &format!("{name}.sa"), d, cfg.n_heads),
                    ln_ca: LayerNormP::new(ps, &format!("{name}.ln_ca"), d),
                    ca: AttnP::new(ps, rng, &format!("{name}.ca"), d, cfg.n_heads),
                    ffn,
                }
            })
            .collect();
        Decoder {
            cl_point,
            mode_embed,
            layers,
            final_ln: LayerNormP::new(ps, "dec.final_ln", d),
            traj_head: MlpP::new(ps, rng, "dec.traj_head", d, cfg.ffn_width, cfg.future_steps * 3),
            score_head: MlpP::new(ps, rng, "dec.score_head", d, d, 1),
            num_modes: cfg.num_modes,
            future_steps: cfg.future_steps,
        }
    }

    /// M mode queries: centerline encodings assigned round-robin plus a
    /// learned per-mode embedding.
    pub fn init_queries(
        &self,
        t: &mut Tape,
        bind: &Binding,
        centerlines: &[Centerline],
    ) -> ValueId {
        assert!(!centerlines.is_empty(), "query init needs at least one centerline");
        let encodings: Vec<ValueId> = centerlines
            .iter()
            .map(|cl| {
                let n = cl.points.len();
                let total = (n - 1).max(1) as f64;
                let mut feats = Vec::with_capacity(n * CL_POINT_FEATS);
                for (i, p) in cl.points.iter().enumerate() {
                    feats.extend_from_slice(&[
                        p.x / POS_SCALE,
                        p.y / POS_SCALE,
                        i as f64 / total,
                        1.0,
                    ]);
                }
                let x = t.leaf(n, CL_POINT_FEATS, feats);
                let h = self.cl_point.fwd(t, bind, x);
                let h = t.relu(h);
                t.max_pool_rows(h, None)
            })
            .collect();
        let modes = bind.id(self.mode_embed);
        let rows: Vec<ValueId> = (0..self.num_modes)
            .map(|m| {
                let base = encodings[m % encodings.len()];
                let embed = t.slice_rows(modes, m, 1);
                t.add(base, embed)
            })
            .collect();
        t.concat_rows(&rows)
    }

    /// Full decode pass. Returns the final scene-aware features and the
    /// per-MoE-layer routing decisions in layer order.
    pub fn decode(
        &self,
        t: &mut Tape,
        bind: &Binding,
        queries: ValueId,
        scene: &SceneFeatures,
    ) -> (ValueId, Vec<RoutingDecision>) {
        let mut q = queries;
        let mut decisions = Vec::new();
        for layer in &self.layers {
            let n = layer.ln_sa.fwd(t, bind, q);
            let sa = layer.sa.fwd(t, bind, n, n, n, None);
            q = t.add(q, sa);
            let n = layer.ln_ca.fwd(t, bind, q);
            let ca = layer.ca.fwd(t, bind, n, scene.features, scene.features, Some(&scene.valid));
            q = t.add(q, ca);
            match &layer.ffn {
                FfnKind::Plain { ln, ffn } => {
                    let n = ln.fwd(t, bind, q);
                    let f = ffn.fwd(t, bind, n);
                    q = t.add(q, f);
                }
                FfnKind::Moe(moe) => {
                    let scores = moe.router.scores(t, bind, q, scene);
                    let decision = route_queries(t, scores, moe.top_k);
                    let n = moe.ln.fwd(t, bind, q);
                    let mixed = expert_mix(t, bind, n, &decision, &moe.shared, &moe.routed);
                    q = t.add(q, mixed);
                    decisions.push(decision);
                }
            }
        }
        (self.final_ln.fwd(t, bind, q), decisions)
    }

    /// Per-mode trajectory regression, M×(T_f·3).
    pub fn trajectory_head(&self, t: &mut Tape, bind: &Binding, f_sa: ValueId) -> ValueId {
        self.traj_head.fwd(t, bind, f_sa)
    }

    /// Per-mode confidence logits, M×1.
    pub fn score_head(&self, t: &mut Tape, bind: &Binding, f_sa: ValueId) -> ValueId {
        self.score_head.fwd(t, bind, f_sa)
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn future_steps(&self) -> usize {
        self.future_steps
    }
}

/// Aggregate selection counts per MoE layer across forwards.
pub fn accumulate_usage(usage: &mut Vec<ExpertUsage>, decisions: &[RoutingDecision]) {
    if usage.is_empty() {
        for (i, d) in decisions.iter().enumerate() {
            usage.push(ExpertUsage { layer: i, counts: vec![0; d.num_experts] });
        }
    }
    for (u, d) in usage.iter_mut().zip(decisions) {
        for sel in &d.selected {
            for &e in sel {
                u.counts[e] += 1;
            }
        }
    }
}
