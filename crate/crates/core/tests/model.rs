use mixedit_core::flow::loss_masked_var;
use mixedit_core::instruction::PAD;
use mixedit_core::model::{rope_angles, rope_rotate, Dit, ModelConfig, Prediction};
use mixedit_core::sequence::{build_layout, TemporalMask};
use mixedit_tensor::{ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        depth: 1,
        d_model: 32,
        heads: 2,
        d_text: 8,
        time_dim: 8,
        ..ModelConfig::default()
    }
}

/// Parameters with every entry random, so no gradient path is blocked by a
/// zero or unit initialization.
fn random_params(dit: &Dit, seed: u64) -> ParamStore<f64> {
    let mut p = dit.init::<f64>(seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.4..0.4));
    }
    p
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn end_to_end_loss_gradient_matches_finite_differences() {
    for prediction in [Prediction::Clean, Prediction::Velocity] {
        let cfg = ModelConfig { prediction, ..tiny() };
        let d_lat = 6;
        let dit = Dit::new(cfg, d_lat, 7, 4).unwrap();
        let mut params = random_params(&dit, 0);
        let mask = TemporalMask {
            bits: vec![false, true, false],
            ratio: 0.25,
        };
        let layout = build_layout(&[2], 3, 1, 2, d_lat, Some(&mask)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tokens: Vec<f64> = (0..layout.num_tokens() * d_lat).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..layout.target_tokens() * d_lat).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ids = [3, 5, 2, PAD];

        let loss_of = |p: &ParamStore<f64>| -> f64 {
            let tape = Tape::new();
            let pred = dit.forward(&tape, p, &tokens, &layout, &ids, 0.4).unwrap();
            let l = loss_masked_var(pred, &v, &layout.loss_weight).unwrap();
            l.value().item().unwrap()
        };
        let tape = Tape::new();
        let pred = dit.forward(&tape, &params, &tokens, &layout, &ids, 0.4).unwrap();
        let loss = loss_masked_var(pred, &v, &layout.loss_weight).unwrap();
        let grads = tape.backward(loss).unwrap().for_store(&params);

        let eps = 1e-3;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let ids_list: Vec<_> = params.ids().collect();
        for (k, id) in ids_list.into_iter().enumerate() {
            let n = params.get(id).numel();
            // Up to 6 coordinates per tensor keep the check under a second.
            for j in 0..n.min(6) {
                let i = (j * 7919 + k) % n;
                let x = params.get(id).data()[i];
                params.get_mut(id).data_mut()[i] = x + eps;
                let up = loss_of(&params);
                params.get_mut(id).data_mut()[i] = x - eps;
                let down = loss_of(&params);
                params.get_mut(id).data_mut()[i] = x;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads[k].data()[i];
                let rel = (analytic - numeric).abs() / (numeric.abs() + 1e-8);
                worst = worst.max(rel);
                checked += 1;
            }
        }
        assert!(checked > 100);
        assert!(worst < 1e-3, "{prediction:?}: max relative error {worst}");
    }
}

#[test]
fn rope_logits_are_shift_invariant() {
    let cfg = ModelConfig::default();
    let hd = cfg.head_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q: Vec<f64> = (0..hd).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..hd).map(|_| rng.random_range(-1.0..1.0)).collect();
    for (a, b) in [((0, 0, 0), (3, 1, 1)), ((2, 1, 0), (0, 0, 1)), ((12, 1, 1), (5, 0, 0))] {
        let base = dot(&rope_rotate(&q, &cfg, a.0, a.1, a.2), &rope_rotate(&k, &cfg, b.0, b.1, b.2));
        for s in [(1, 0, 0), (4, 2, 3), (40, 7, 9)] {
            let shifted = dot(
                &rope_rotate(&q, &cfg, a.0 + s.0, a.1 + s.1, a.2 + s.2),
                &rope_rotate(&k, &cfg, b.0 + s.0, b.1 + s.1, b.2 + s.2),
            );
            assert!((base - shifted).abs() < 1e-5, "{a:?} {b:?} shift {s:?}: {base} vs {shifted}");
        }
    }
}

#[test]
fn reset_indices_share_temporal_phases() {
    let cfg = ModelConfig::default();
    let layout = build_layout(&[4, 4], 4, 2, 2, 8, None).unwrap();
    let tpf = layout.tokens_per_frame();
    let bands = cfg.rope_bands();
    let temporal = bands[0] / 2;
    for a in 0..4 {
        for seg in 0..3 {
            let tok = seg * 4 * tpf + a * tpf;
            assert_eq!(layout.t_idx[tok], a);
            let ang = rope_angles(&cfg, layout.t_idx[tok], layout.h_idx[tok], layout.w_idx[tok]);
            let target_tok = 2 * 4 * tpf + a * tpf;
            let target = rope_angles(&cfg, layout.t_idx[target_tok], layout.h_idx[target_tok], layout.w_idx[target_tok]);
            assert_eq!(ang[..temporal], target[..temporal]);
        }
    }
}

#[test]
fn pad_positions_do_not_change_the_output() {
    let dit = Dit::new(tiny(), 6, 7, 4).unwrap();
    let params = random_params(&dit, 3);
    let layout = build_layout(&[1], 1, 1, 2, 6, None).unwrap();
    let tokens: Vec<f64> = (0..layout.num_tokens() * 6).map(|i| (i as f64).cos()).collect();
    let run = |p: &ParamStore<f64>| {
        let tape = Tape::new();
        dit.forward(&tape, p, &tokens, &layout, &[4, 2, PAD, PAD], 0.5).unwrap().value().data().to_vec()
    };
    let before = run(&params);
    // Changing positional rows of PAD slots must not matter.
    let (_, pos) = dit.text_params();
    let mut moved = params.clone();
    let d = moved.get(pos).shape()[1];
    for x in &mut moved.get_mut(pos).data_mut()[2 * d..] {
        *x += 5.0;
    }
    let after = run(&moved);
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn embedding_gradient_reaches_only_used_rows() {
    let dit = Dit::new(tiny(), 6, 7, 4).unwrap();
    let params = random_params(&dit, 5);
    let layout = build_layout(&[1], 1, 1, 2, 6, None).unwrap();
    let tokens: Vec<f64> = (0..layout.num_tokens() * 6).map(|i| (i as f64).sin()).collect();
    let tape = Tape::new();
    let out = dit.forward(&tape, &params, &tokens, &layout, &[4, 2, 4, PAD], 0.5).unwrap();
    let g = tape.backward(out.sqr().sum_all()).unwrap();
    let (table, _) = dit.text_params();
    let gt = g.param(table).unwrap();
    let d = gt.shape()[1];
    for row in 0..7 {
        let norm: f64 = gt.data()[row * d..(row + 1) * d].iter().map(|x| x.abs()).sum();
        // PAD is masked out of attention, so only rows 2 and 4 learn.
        assert_eq!(norm > 0.0, row == 2 || row == 4, "row {row}: {norm}");
    }
}
