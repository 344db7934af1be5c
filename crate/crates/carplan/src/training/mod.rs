//! Training loop: the composed objective, Adam with gradient-norm clipping,
//! per-step loss logging, and open-loop evaluation.

mod losses;

pub use losses::{balance_loss, disp_loss, plan_loss, winner_mode, LossBreakdown, LossWeights, SMOOTH_L1_BETA};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{accumulate_usage, CarPlan, DpeMode, ExpertUsage, RoutingDecision};
use crate::numerics::{Binding, NumericsError, Tape, ValueId};
use crate::scene::{compute_displacement_targets, DisplacementTargets, Scenario};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            steps: 500,
            batch_size: 8,
            seed: 0,
            weights: LossWeights::default(),
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub usage: Vec<ExpertUsage>,
}

/// One scenario with its precomputed supervision.
pub struct TrainSample {
    pub scenario: Scenario,
    pub targets: DisplacementTargets,
    pub gt: Vec<[f64; 3]>,
}

pub fn prepare_samples(
    corpus: &[Scenario],
    model: &CarPlan,
) -> Result<Vec<TrainSample>, TrainError> {
    let tf = model.config.future_steps;
    corpus
        .iter()
        .map(|s| {
            if s.future_steps < tf {
                return Err(TrainError::Data(format!(
                    "scenario horizon {} shorter than model horizon {tf}",
                    s.future_steps
                )));
            }
            if s.history_steps != model.config.history_steps {
                return Err(TrainError::Data(format!(
                    "scenario history {} does not match model {}",
                    s.history_steps, model.config.history_steps
                )));
            }
            Ok(TrainSample {
                targets: compute_displacement_targets(s, tf),
                gt: s.gt_future(tf),
                scenario: s.clone(),
            })
        })
        .collect()
}

/// Loss nodes for one batch, composed per the configured toggles.
pub struct BatchLoss {
    pub total: ValueId,
    pub plan: ValueId,
    pub disp: Option<ValueId>,
    pub bal: Option<ValueId>,
    pub decisions: Vec<Vec<RoutingDecision>>,
}

/// Build the full objective for a batch on an existing tape. This is the
/// exact function the end-to-end gradient check differentiates.
pub fn build_total_loss(
    model: &CarPlan,
    t: &mut Tape,
    bind: &Binding,
    batch: &[&TrainSample],
    weights: &LossWeights,
) -> BatchLoss {
    assert!(!batch.is_empty());
    let use_disp = model.config.dpe != DpeMode::Off;
    let mut plan_terms = Vec::with_capacity(batch.len());
    let mut disp_terms = Vec::with_capacity(batch.len());
    let mut decisions_per_scenario: Vec<Vec<RoutingDecision>> = Vec::with_capacity(batch.len());

    for sample in batch {
        let out = model.forward(t, bind, &sample.scenario, use_disp);
        let (pl, _winner) = plan_loss(t, out.traj, out.score_logits, &sample.gt);
        plan_terms.push(pl);
        if let Some(disp) = out.disp {
            disp_terms.push(disp_loss(
                t,
                disp,
                &sample.targets,
                sample.scenario.num_agents(),
                model.config.dpe,
            ));
        }
        decisions_per_scenario.push(out.decisions);
    }

    let stack = t.concat_rows(&plan_terms);
    let plan = t.mean_all(stack);

    let disp = if use_disp && !disp_terms.is_empty() {
        let stack = t.concat_rows(&disp_terms);
        Some(t.mean_all(stack))
    } else {
        None
    };

    let n_moe_layers = decisions_per_scenario[0].len();
    let bal = if n_moe_layers > 0 {
        let per_layer: Vec<Vec<&RoutingDecision>> = (0..n_moe_layers)
            .map(|l| decisions_per_scenario.iter().map(|d| &d[l]).collect())
            .collect();
        Some(balance_loss(t, &per_layer))
    } else {
        None
    };

    let mut total = t.scale(plan, weights.plan);
    if let Some(d) = disp {
        if weights.disp != 0.0 {
            let w = t.scale(d, weights.disp);
            total = t.add(total, w);
        }
    }
    if let Some(b) = bal {
        if weights.bal != 0.0 {
            let w = t.scale(b, weights.bal);
            total = t.add(total, w);
        }
    }
    BatchLoss { total, plan, disp, bal, decisions: decisions_per_scenario }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(param_sizes: &[usize]) -> Self {
        Adam {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, model: &mut CarPlan, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, grad) in grads.iter().enumerate() {
            let id = crate::numerics::ParamId(p);
            let data = &mut model.params.tensor_mut(id).data;
            for (k, &g) in grad.iter().enumerate() {
                self.m[p][k] = self.beta1 * self.m[p][k] + (1.0 - self.beta1) * g;
                self.v[p][k] = self.beta2 * self.v[p][k] + (1.0 - self.beta2) * g * g;
                let mh = self.m[p][k] / bc1;
                let vh = self.v[p][k] / bc2;
                data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

pub fn train(
    model: &mut CarPlan,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Data("empty training corpus".into()));
    }
    let sizes: Vec<usize> =
        (0..model.params.len()).map(|i| model.params.tensor(crate::numerics::ParamId(i)).numel()).collect();
    let mut adam = Adam::new(&sizes);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = samples.len(); // force shuffle on first step
    let mut log = TrainLog { steps: Vec::with_capacity(cfg.steps), usage: Vec::new() };

    for step in 0..cfg.steps {
        let batch_size = cfg.batch_size.min(samples.len());
        let mut batch: Vec<&TrainSample> = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(&samples[order[cursor]]);
            cursor += 1;
        }

        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape);
        let batch_loss = build_total_loss(model, &mut tape, &bind, &batch, &cfg.weights);

        let breakdown = LossBreakdown {
            plan: tape.scalar(batch_loss.plan),
            disp: batch_loss.disp.map_or(0.0, |d| tape.scalar(d)),
            bal: batch_loss.bal.map_or(0.0, |b| tape.scalar(b)),
            total: tape.scalar(batch_loss.total),
        };
        if !breakdown.total.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                detail: format!(
                    "plan={} disp={} bal={}",
                    breakdown.plan, breakdown.disp, breakdown.bal
                ),
            });
        }

        let grads = tape.backward(batch_loss.total);
        let mut flat: Vec<Vec<f64>> =
            bind.ids().iter().map(|&id| grads.of(id).to_vec()).collect();
        let norm: f64 = flat
            .iter()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > cfg.clip_norm && norm > 0.0 {
            let scale = cfg.clip_norm / norm;
            for g in flat.iter_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        }
        adam.step(model, &flat, cfg.lr);

        for d in &batch_loss.decisions {
            accumulate_usage(&mut log.usage, d);
        }
        log.steps.push(StepLog { step, loss: breakdown, grad_norm: norm });
    }
    Ok(log)
}

/// Verify the tape gradient of the full objective against central finite
/// differences over every model parameter.
pub fn grad_check_total_loss(
    model: &mut CarPlan,
    samples: &[TrainSample],
    weights: &LossWeights,
    epsilon: f64,
) -> Result<crate::numerics::GradCheckReport, TrainError> {
    let batch: Vec<&TrainSample> = samples.iter().collect();
    // The forward pass reads parameters through the binding alone, so the
    // store can be lent to the checker while the model keeps its wiring.
    let mut params = std::mem::take(&mut model.params);
    let result = crate::numerics::grad_check(&mut params, epsilon, |t, bind| {
        build_total_loss(model, t, bind, &batch, weights).total
    });
    model.params = params;
    Ok(result?)
}

/// Open-loop metrics for one scenario under the model's top-scored mode.
#[derive(Debug, Clone)]
pub struct OpenLoopRow {
    pub seed: u64,
    pub ade: f64,
    pub fde: f64,
    /// Best over all modes, for reference.
    pub min_ade: f64,
}

pub fn open_loop_eval(model: &CarPlan, corpus: &[Scenario]) -> Result<Vec<OpenLoopRow>, TrainError> {
    let tf = model.config.future_steps;
    corpus
        .iter()
        .map(|s| {
            if s.future_steps < tf {
                return Err(TrainError::Data(format!(
                    "scenario horizon {} shorter than model horizon {tf}",
                    s.future_steps
                )));
            }
            let gt = s.gt_future(tf);
            let (plan, _) = model.infer(s);
            let ade_of = |mode: usize| -> (f64, f64) {
                let traj = &plan.trajectories[mode];
                let mut acc = 0.0;
                for (p, g) in traj.iter().zip(&gt) {
                    acc += ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
                }
                let last = traj.len() - 1;
                let fde = ((traj[last][0] - gt[last][0]).powi(2)
                    + (traj[last][1] - gt[last][1]).powi(2))
                .sqrt();
                (acc / tf as f64, fde)
            };
            let best = plan.best_mode();
            let (ade, fde) = ade_of(best);
            let min_ade = (0..plan.trajectories.len())
                .map(|m| ade_of(m).0)
                .fold(f64::INFINITY, f64::min);
            Ok(OpenLoopRow { seed: s.seed, ade, fde, min_ade })
        })
        .collect()
}

/// Coefficient of variation of expert-usage counts, averaged over layers.
pub fn usage_cv(usage: &[ExpertUsage]) -> f64 {
    if usage.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for u in usage {
        let n = u.counts.len() as f64;
        let mean = u.counts.iter().sum::<u64>() as f64 / n;
        if mean == 0.0 {
            continue;
        }
        let var = u
            .counts
            .iter()
            .map(|&c| (c as f64 - mean) * (c as f64 - mean))
            .sum::<f64>()
            / n;
        acc += var.sqrt() / mean;
    }
    acc / usage.len() as f64
}
