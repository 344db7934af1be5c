//! Contract tests for the scene encoder and the multi-expert decoder:
//! masking exactness, displacement-head independence, routing semantics,
//! sparse/dense agreement, and gradient support.

use carplan::model::blocks::MlpP;
use carplan::model::{
    expert_mix, route_queries, CarPlan, DpeMode, ModelConfig, RouterMode, SceneTokens,
};
use carplan::numerics::{ParamStore, Tape};
use carplan::scene::{generate_scenario, GeneratorConfig, Scenario, Topology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        ffn_width: 32,
        enc_layers: 2,
        dec_layers: 3,
        num_modes: 3,
        routed_experts: 4,
        top_k: 2,
        shared_experts: 1,
        future_steps: 10,
        dpe: DpeMode::AgentMap,
        router: RouterMode::SceneAware,
        ..ModelConfig::default()
    }
}

fn gen(seed: u64, agents: usize) -> Scenario {
    generate_scenario(
        &GeneratorConfig {
            topology: Some(Topology::Straight),
            min_agents: agents,
            max_agents: agents,
            ..GeneratorConfig::default()
        },
        seed,
    )
    .unwrap()
}

fn zero_params(model: &mut CarPlan, prefix: &str) {
    for id in model.params.ids_with_prefix(prefix) {
        for v in model.params.tensor_mut(id).data.iter_mut() {
            *v = 0.0;
        }
    }
}

// ── Encoder contracts ───────────────────────────────────────────────

#[test]
fn identical_agent_histories_embed_identically() {
    let model = CarPlan::new(small_config());
    let mut s = gen(4, 2);
    s.agents[1] = s.agents[0].clone();
    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape);
    let tokens = model.encoder().embed(&mut tape, &bind, &s);
    let d = model.config.d_model;
    let data = tape.data(tokens.tokens);
    assert_eq!(data[d..2 * d], data[2 * d..3 * d]);
}

#[test]
fn av_token_ignores_history_perturbation() {
    let model = CarPlan::new(small_config());
    let s = gen(4, 2);
    let mut perturbed = s.clone();
    for i in 0..perturbed.history_steps {
        perturbed.av.states[i].x += 3.7;
        perturbed.av.states[i].vy -= 1.1;
        perturbed.av.states[i].heading = 0.4;
    }
    let (p1, _) = model.infer(&s);
    let (p2, _) = model.infer(&perturbed);
    assert_eq!(p1, p2, "planner must read only the current AV state");
}

#[test]
fn single_token_scene_is_finite() {
    let model = CarPlan::new(small_config());
    let mut s = gen(7, 0);
    s.map.clear(); // AV token only
    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape);
    let tokens = model.encoder().embed(&mut tape, &bind, &s);
    let features = model.encoder().encode(&mut tape, &bind, &tokens);
    assert!(tape.data(features.features).iter().all(|v| v.is_finite()));
    assert_eq!(tape.shape(features.features), (1, model.config.d_model));
}

#[test]
fn shape_preserved_through_encoder() {
    let model = CarPlan::new(small_config());
    for (seed, agents) in [(1u64, 0usize), (2, 3), (3, 6)] {
        let s = gen(seed, agents);
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape);
        let tokens = model.encoder().embed(&mut tape, &bind, &s);
        let features = model.encoder().encode(&mut tape, &bind, &tokens);
        let n = 1 + s.agents.len() + s.map.len();
        assert_eq!(tape.shape(tokens.tokens), (n, model.config.d_model));
        assert_eq!(tape.shape(features.features), (n, model.config.d_model));
    }
}

#[test]
fn agent_permutation_equivariance() {
    let model = CarPlan::new(small_config());
    let s = gen(11, 4);
    let mut permuted = s.clone();
    permuted.agents.swap(0, 3);
    permuted.agents.swap(1, 2);

    let run = |scn: &Scenario| -> Vec<f64> {
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape);
        let tokens = model.encoder().embed(&mut tape, &bind, scn);
        let f = model.encoder().encode(&mut tape, &bind, &tokens);
        tape.data(f.features).to_vec()
    };
    let base = run(&s);
    let perm = run(&permuted);
    let d = model.config.d_model;
    let row = |data: &[f64], i: usize| data[i * d..(i + 1) * d].to_vec();
    // Agent rows permute with the inputs; AV and map rows stay put.
    let pairs = [(1, 4), (2, 3), (3, 2), (4, 1)];
    for (orig, new) in pairs {
        for (a, b) in row(&base, orig).iter().zip(row(&perm, new)) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
    for (a, b) in row(&base, 0).iter().zip(row(&perm, 0)) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn masked_padding_has_exactly_zero_influence() {
    let model = CarPlan::new(small_config());
    let s = gen(13, 2);
    let d = model.config.d_model;

    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape);
    let tokens = model.encoder().embed(&mut tape, &bind, &s);
    let n = tape.shape(tokens.tokens).0;
    let base = model.encoder().encode(&mut tape, &bind, &tokens);
    let base_data = tape.data(base.features).to_vec();

    // Same scene plus five masked pad tokens appended.
    let mut tape2 = Tape::new();
    let bind2 = model.params.bind(&mut tape2);
    let tokens2 = model.encoder().embed(&mut tape2, &bind2, &s);
    let pad = tape2.zeros(5, d);
    let padded = tape2.concat_rows(&[tokens2.tokens, pad]);
    let mut valid = tokens2.valid.clone();
    valid.extend([false; 5]);
    let padded_tokens = SceneTokens {
        tokens: padded,
        valid,
        n_agents: tokens2.n_agents,
        n_map: tokens2.n_map,
    };
    let out = model.encoder().encode(&mut tape2, &bind2, &padded_tokens);
    let padded_data = tape2.data(out.features);
    for i in 0..n * d {
        assert_eq!(base_data[i], padded_data[i], "valid row changed at flat index {i}");
    }
}

#[test]
fn displacement_head_evaluation_cannot_change_the_plan() {
    let model = CarPlan::new(small_config());
    for seed in 0..20u64 {
        let s = gen(seed, (seed % 4) as usize);
        // Training path: head evaluated.
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape);
        let out = model.forward(&mut tape, &bind, &s, true);
        assert!(out.disp.is_some());
        let train_plan = model.extract_plan(&tape, &out);
        // Inference path: head skipped.
        let (infer_plan, _) = model.infer(&s);
        assert_eq!(train_plan, infer_plan, "seed {seed}");
    }
}

#[test]
fn zero_disp_head_weights_give_zero_predictions() {
    let mut model = CarPlan::new(small_config());
    zero_params(&mut model, "disp_head.");
    let s = gen(3, 2);
    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape);
    let out = model.forward(&mut tape, &bind, &s, true);
    assert!(tape.data(out.disp.unwrap()).iter().all(|&v| v == 0.0));
}

#[test]
fn disp_loss_gradient_reaches_every_encoder_layer() {
    let model = CarPlan::new(small_config());
    let s = gen(5, 3);
    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape);
    let out = model.forward(&mut tape, &bind, &s, true);
    let disp = out.disp.unwrap();
    let (r, c) = tape.shape(disp);
    let target = vec![0.25; r * c];
    let loss = tape.smooth_l1(disp, &target, 1.0);
    let grads = tape.backward(loss);
    for layer in 0..model.config.enc_layers {
        let ids = model.params.ids_with_prefix(&format!("enc.layer{layer}."));
        assert!(!ids.is_empty());
        let norm: f64 = ids
            .iter()
            .map(|&id| grads.of(bind.id(id)).iter().map(|g| g * g).sum::<f64>())
            .sum();
        assert!(norm > 0.0, "encoder layer {layer} receives no displacement gradient");
    }
}

// ── Decoder contracts ───────────────────────────────────────────────

#[test]
fn queries_share_centerline_encoding_up_to_mode_embedding() {
    let model = CarPlan::new(small_config());
    let mut s = gen(6, 1);
    s.centerlines.truncate(1);
    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape);
    let q = model.decoder().init_queries(&mut tape, &bind, &s.centerlines);
    let d = model.config.d_model;
    assert_eq!(tape.shape(q), (3, d));
    let qd = tape.data(q).to_vec();
    let embed_id = model.params.index_of("dec.mode_embed").unwrap();
    let embed = &model.params.tensor(embed_id).data;
    // Subtracting each mode's embedding leaves the shared encoding.
    let base: Vec<f64> = (0..d).map(|j| qd[j] - embed[j]).collect();
    for mode in 1..3 {
        for j in 0..d {
            let b = qd[mode * d + j] - embed[mode * d + j];
            assert!((b - base[j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn identical_centerlines_encode_identically() {
    let model = CarPlan::new(small_config());
    let mut s = gen(6, 1);
    let cl = s.centerlines[0].clone();
    s.centerlines = vec![cl.clone(), cl];
    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape);
    let q = model.decoder().init_queries(&mut tape, &bind, &s.centerlines);
    let d = model.config.d_model;
    let qd = tape.data(q).to_vec();
    let embed_id = model.params.index_of("dec.mode_embed").unwrap();
    let embed = &model.params.tensor(embed_id).data;
    let stripped = |mode: usize, j: usize| qd[mode * d + j] - embed[mode * d + j];
    for j in 0..d {
        // Subtracting the mode embedding back out reintroduces one rounding
        // step, so compare at f64 noise level rather than bitwise.
        assert!((stripped(0, j) - stripped(1, j)).abs() <= 1e-12);
    }
}

fn random_bank(
    ps: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    d: usize,
    n_shared: usize,
    n_routed: usize,
) -> (Vec<MlpP>, Vec<MlpP>) {
    let shared: Vec<MlpP> =
        (0..n_shared).map(|i| MlpP::new(ps, rng, &format!("s{i}"), d, 2 * d, d)).collect();
    let routed: Vec<MlpP> =
        (0..n_routed).map(|i| MlpP::new(ps, rng, &format!("e{i}"), d, 2 * d, d)).collect();
    (shared, routed)
}

#[test]
fn expert_mix_matches_dense_masked_oracle() {
    use rand::Rng;
    let d = 6;
    let (m, n, k) = (4, 5, 2);
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut ps = ParamStore::new();
        let (shared, routed) = random_bank(&mut ps, &mut rng, d, 2, n);
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let x = tape.leaf(m, d, (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let logits = tape.leaf(m, n, (0..m * n).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let scores = tape.softmax_rows(logits);
        let decision = route_queries(&mut tape, scores, k);

        let sparse = expert_mix(&mut tape, &bind, x, &decision, &shared, &routed);

        // Dense oracle: evaluate all N experts, weight by mask · score.
        let mut dense = vec![0.0; m * d];
        for q in 0..m {
            let row = tape.slice_rows(x, q, 1);
            for s in &shared {
                let y = s.fwd(&mut tape, &bind, row);
                for j in 0..d {
                    dense[q * d + j] += tape.data(y)[j];
                }
            }
            for e in 0..n {
                let mask = if decision.selected[q].contains(&e) { 1.0 } else { 0.0 };
                let score = decision.scores[q * n + e];
                let y = routed[e].fwd(&mut tape, &bind, row);
                for j in 0..d {
                    dense[q * d + j] += mask * score * tape.data(y)[j];
                }
            }
        }
        for (a, b) in tape.data(sparse).iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-12, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn shared_and_routed_terms_decompose() {
    use rand::Rng;
    let d = 6;
    let (m, n, k) = (3, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ps = ParamStore::new();
    let (shared, routed) = random_bank(&mut ps, &mut rng, d, 2, n);
    let zero_bank = |ps: &mut ParamStore, prefix: &str| {
        for id in ps.ids_with_prefix(prefix) {
            for v in ps.tensor_mut(id).data.iter_mut() {
                *v = 0.0;
            }
        }
    };

    let eval = |ps: &ParamStore| -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let x = tape.leaf(m, d, (0..m * d).map(|_| rng2.gen_range(-1.0..1.0)).collect());
        let logits = tape.leaf(m, n, (0..m * n).map(|_| rng2.gen_range(-2.0..2.0)).collect());
        let scores = tape.softmax_rows(logits);
        let decision = route_queries(&mut tape, scores, k);
        let out = expert_mix(&mut tape, &bind, x, &decision, &shared, &routed);
        (tape.data(out).to_vec(), tape.data(x).to_vec())
    };

    let (full, _) = eval(&ps);
    let mut no_routed = ParamStore::new();
    let mut rng_a = ChaCha8Rng::seed_from_u64(77);
    random_bank(&mut no_routed, &mut rng_a, d, 2, n);
    zero_bank(&mut no_routed, "e");
    let (shared_only, _) = eval(&no_routed);

    let mut no_shared = ParamStore::new();
    let mut rng_b = ChaCha8Rng::seed_from_u64(77);
    random_bank(&mut no_shared, &mut rng_b, d, 2, n);
    zero_bank(&mut no_shared, "s");
    let (routed_only, _) = eval(&no_shared);

    // Zeroed-expert outputs are exactly zero, so the two halves add back up.
    for i in 0..full.len() {
        assert!((full[i] - shared_only[i] - routed_only[i]).abs() <= 1e-12);
    }
}

#[test]
fn relabeling_experts_with_scores_is_invariant() {
    use rand::Rng;
    let d = 5;
    let (m, n, k) = (3, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ps = ParamStore::new();
    let (shared, routed) = random_bank(&mut ps, &mut rng, d, 1, n);
    let xv: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let lv: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-2.0..2.0)).collect();

    // Swap experts 0↔2 together with their score columns.
    let perm = [2usize, 1, 0, 3];
    let routed_perm: Vec<MlpP> = perm.iter().map(|&i| routed[i].clone()).collect();
    let lv_perm: Vec<f64> = (0..m * n)
        .map(|idx| {
            let (q, e) = (idx / n, idx % n);
            lv[q * n + perm[e]]
        })
        .collect();

    let eval = |routed: &[MlpP], logits_data: &[f64]| -> Vec<f64> {
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let x = tape.leaf(m, d, xv.clone());
        let logits = tape.leaf(m, n, logits_data.to_vec());
        let scores = tape.softmax_rows(logits);
        let decision = route_queries(&mut tape, scores, k);
        let out = expert_mix(&mut tape, &bind, x, &decision, &shared, routed);
        tape.data(out).to_vec()
    };
    let base = eval(&routed, &lv);
    let permuted = eval(&routed_perm, &lv_perm);
    for (a, b) in base.iter().zip(&permuted) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn unselected_experts_get_exactly_zero_gradient() {
    use rand::Rng;
    let d = 6;
    let (m, n, k) = (2, 6, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamStore::new();
    let (shared, routed) = random_bank(&mut ps, &mut rng, d, 1, n);
    let mut tape = Tape::new();
    let bind = ps.bind(&mut tape);
    let x = tape.leaf(m, d, (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let logits = tape.leaf(m, n, (0..m * n).map(|_| rng.gen_range(-3.0..3.0)).collect());
    let scores = tape.softmax_rows(logits);
    let decision = route_queries(&mut tape, scores, k);
    let out = expert_mix(&mut tape, &bind, x, &decision, &shared, &routed);
    let loss = tape.sum_all(out);
    let grads = tape.backward(loss);

    let mut selected_any = vec![false; n];
    for sel in &decision.selected {
        for &e in sel {
            selected_any[e] = true;
        }
    }
    assert!(selected_any.iter().any(|&v| !v), "test needs an unselected expert");
    for e in 0..n {
        let ids = ps.ids_with_prefix(&format!("e{e}."));
        let norm: f64 = ids
            .iter()
            .map(|&id| grads.of(bind.id(id)).iter().map(|g| g * g).sum::<f64>())
            .sum();
        if selected_any[e] {
            assert!(norm > 0.0, "selected expert {e} should receive gradient");
        } else {
            assert_eq!(norm, 0.0, "unselected expert {e} must get exactly zero gradient");
        }
    }
}

#[test]
fn zeroed_experts_leave_attention_residual_stream_finite() {
    let mut model = CarPlan::new(small_config());
    for layer in 0..model.config.dec_layers {
        zero_params(&mut model, &format!("dec.layer{layer}.ffn"));
        zero_params(&mut model, &format!("dec.layer{layer}.moe.shared"));
        zero_params(&mut model, &format!("dec.layer{layer}.moe.routed"));
    }
    let s = gen(8, 2);
    let (plan, _) = model.infer(&s);
    for traj in &plan.trajectories {
        for p in traj {
            assert!(p.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn zero_heads_give_zero_trajectories_and_uniform_scores() {
    let mut model = CarPlan::new(small_config());
    zero_params(&mut model, "dec.traj_head.");
    zero_params(&mut model, "dec.score_head.");
    let s = gen(8, 1);
    let (plan, _) = model.infer(&s);
    for traj in &plan.trajectories {
        for p in traj {
            assert_eq!(p, &[0.0, 0.0, 0.0]);
        }
    }
    let probs = plan.probabilities();
    for p in &probs {
        assert!((p - 1.0 / 3.0).abs() <= 1e-12);
    }
}

#[test]
fn score_argmax_invariant_to_logit_shift() {
    let plan = carplan::model::PlanOutput {
        trajectories: vec![vec![[0.0; 3]]; 3],
        scores: vec![0.4, 1.9, -0.3],
    };
    let shifted = carplan::model::PlanOutput {
        trajectories: plan.trajectories.clone(),
        scores: plan.scores.iter().map(|s| s + 123.0).collect(),
    };
    assert_eq!(plan.best_mode(), shifted.best_mode());
}

#[test]
fn routing_differs_across_different_scenes() {
    let model = CarPlan::new(small_config());
    let a = gen(1, 0);
    let b = gen(2, 5);
    let (_, da) = model.infer(&a);
    let (_, db) = model.infer(&b);
    let differs = da
        .iter()
        .zip(&db)
        .any(|(x, y)| x.selected != y.selected);
    assert!(differs, "expected scene-dependent expert selection");
}
