mod common;

use common::{oracle_forward, random_config, random_metas, random_sample, rng};
use domst::eval::model_grad_check;
use domst::model::{backward, build_model, forward, predict_series, ConvLayerConfig, DomStModel, ModelConfig, Variant};
use domst::numerics::ParamSet;
use rand::Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn multihead_matches_straight_line_oracle() {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let variant = Variant::ALL[case % 3];
        let p = r.random_range(2..=10);
        let metas = random_metas(p, &mut r);
        let cfg = random_config(variant, p, &mut r);
        let Ok(model) = build_model(&cfg, &metas) else {
            panic!("case {case}: config {cfg:?} rejected");
        };
        let s = random_sample(p, cfg.lookback, &mut r);
        let (y, _) = forward(&model, &s).unwrap();
        let o = oracle_forward(&model, &s);
        let e = (y - o).abs() / o.abs().max(1.0);
        worst = worst.max(e);
        assert!(e < 1e-12, "case {case} {variant}: {y} vs {o}");
    }
    println!("worst oracle discrepancy {worst:e}");
}

#[test]
fn saturated_pixcon_is_transparent() {
    let mut r = rng(5);
    for _ in 0..10 {
        let metas = random_metas(8, &mut r);
        let mut cfg = random_config(Variant::MultiheadPlusP, 8, &mut r);
        cfg.heads = 2;
        let mut with = build_model(&cfg, &metas).unwrap();
        for h in &mut with.heads {
            h.pixcon.as_mut().unwrap().logits.fill(40.0);
        }
        let mut without = with.clone();
        without.config.use_pixcon = false;
        for h in &mut without.heads {
            h.pixcon = None;
        }
        let s = random_sample(8, cfg.lookback, &mut r);
        let a = forward(&with, &s).unwrap().0;
        let b = forward(&without, &s).unwrap().0;
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn singlehead_ignores_target_precip() {
    let mut r = rng(6);
    let metas = random_metas(6, &mut r);
    let cfg = random_config(Variant::Singlehead, 6, &mut r);
    let m = build_model(&cfg, &metas).unwrap();
    let s = random_sample(6, cfg.lookback, &mut r);
    let mut t = s.clone();
    t.p_target.iter_mut().for_each(|v| *v = 100.0);
    assert_eq!(forward(&m, &s).unwrap().0, forward(&m, &t).unwrap().0);
}

#[test]
fn random_small_models_pass_gradient_check() {
    let mut r = rng(7);
    for case in 0..24 {
        let variant = Variant::ALL[case % 3];
        let p = r.random_range(2..=6);
        let metas = random_metas(p, &mut r);
        let mut cfg = random_config(variant, p, &mut r);
        // shallow stacks keep gradient components well above the rounding noise
        // of central differences
        cfg.conv_layers.truncate(2);
        cfg.lstm_layers = 1;
        cfg.dense_hidden.truncate(1);
        if cfg.temporal_len().is_err() {
            cfg.conv_layers.iter_mut().for_each(|c| c.stride = 1);
        }
        let mut m = build_model(&cfg, &metas).unwrap();
        // positive biases keep every ReLU away from its kink
        for h in &mut m.heads {
            for c in &mut h.convs {
                c.bias.fill(0.5);
            }
        }
        for d in &mut m.temporal.dense {
            d.bias.fill(0.5);
        }
        let s = random_sample(p, cfg.lookback, &mut r);
        let report = model_grad_check(&m, &s, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "case {case} {variant}: {report:?}");
    }
}

#[test]
fn every_tensor_receives_gradient() {
    let mut r = rng(8);
    let metas = random_metas(8, &mut r);
    let cfg = ModelConfig::new(Variant::MultiheadPlusP).with_heads(2).with_lookback(16);
    let m = build_model(&cfg, &metas).unwrap();
    let s = random_sample(8, 16, &mut r);
    let (_, cache) = forward(&m, &s).unwrap();
    let g = backward(&m, &cache, 1.0).unwrap();
    assert_eq!(g.tensors().len(), m.tensors().len());
    for (i, t) in g.tensors().iter().enumerate() {
        assert!(t.max_abs() > 0.0, "tensor {i} got no gradient");
    }
    for h in &g.heads {
        assert!(h.pixcon.is_some());
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let mut r = rng(9);
    let metas = random_metas(8, &mut r);
    let mut cfg = ModelConfig::new(Variant::MultiheadPlusP).with_heads(3).with_lookback(12);
    cfg.conv_layers = vec![ConvLayerConfig::new(3, 3)];
    let m = build_model(&cfg, &metas).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let back = DomStModel::load(&path).unwrap();
    assert_eq!(back, m);
    let s: Vec<_> = (0..5).map(|_| random_sample(8, 12, &mut r)).collect();
    assert_eq!(predict_series(&back, &s).unwrap(), predict_series(&m, &s).unwrap());

    let text = std::fs::read_to_string(&path).unwrap().replace("\"format_version\":1", "\"format_version\":7");
    assert!(DomStModel::from_checkpoint_json(&text).is_err());
}

#[test]
fn build_is_deterministic_and_seed_sensitive() {
    let mut r = rng(10);
    let metas = random_metas(8, &mut r);
    let cfg = ModelConfig::new(Variant::MultiheadPlusP).with_heads(2).with_seed(42);
    let a = build_model(&cfg, &metas).unwrap();
    let b = build_model(&cfg, &metas).unwrap();
    assert_eq!(a.flatten(), b.flatten());
    let c = build_model(&cfg.clone().with_seed(43), &metas).unwrap();
    assert_ne!(a.flatten(), c.flatten());
    // shuffled metadata order gives the same model
    let mut shuffled = metas.clone();
    shuffled.reverse();
    assert_eq!(build_model(&cfg, &shuffled).unwrap(), a);
    let _ = rel(1.0, 1.0);
}
