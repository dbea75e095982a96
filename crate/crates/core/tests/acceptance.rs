//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the test harness capture) before asserting.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{oracle_forward, random_config, random_metas, random_sample, rng};
use domst::data::{generate_corpus, generate_synthetic, load_watershed_dir, window_samples, write_watershed_csv, GenConfig};
use domst::eval::{heavy_model_config, pixcon_recovery_score, run_comparison, run_grad_check, run_model_parallel_bench, run_timing_table, GradCheckSpec};
use domst::exec::{run_distributed, run_sequential, ExecutorKind, TrainConfig};
use domst::model::{build_model, forward, ModelConfig, Variant};
use domst::pipeline::{prepare_samples, train_watershed, JobSettings, DEFAULT_TRAIN_FRACTION};
use domst::pixcon::{partition_pixels, PartitionStrategy, PixelMeta};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;
use serde_json::Value;

fn verdict(id: u32, name: &str, pass: bool, detail: impl AsRef<str>) {
    let line = format!("{} [{id:>2}] {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn criterion_01_gradient_check() {
    let start = Instant::now();
    let spec = GradCheckSpec {
        pixels: 8,
        lookback: 16,
        heads: 2,
        seed: 42,
        eps: 1e-5,
        tolerance: 1e-4,
        ..Default::default()
    };
    let suite = run_grad_check(&spec, &Variant::ALL).unwrap();
    let elapsed = start.elapsed();
    let worst = suite.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let pass = suite.results.len() == 3 && worst < 1e-4 && elapsed < Duration::from_secs(60);
    verdict(1, "gradient correctness", pass, format!("max rel error {worst:.3e} over 3 variants, {:.2}s", secs(elapsed)));
}

#[test]
fn criterion_02_executor_equivalence() {
    let start = Instant::now();
    let ds = generate_synthetic(&GenConfig { days: 300, ..GenConfig::default() }).unwrap();
    let mut worst: f64 = 0.0;
    let mut min_steps = usize::MAX;
    for heads in [1, 2, 4] {
        let cfg = ModelConfig::new(Variant::MultiheadPlusP).with_heads(heads).with_seed(42);
        let data = prepare_samples(&ds, cfg.lookback, DEFAULT_TRAIN_FRACTION).unwrap();
        let model = build_model(&cfg, &ds.pixels).unwrap();
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 4,
            shuffle_seed: 42,
            ..TrainConfig::default()
        };
        let seq = run_sequential(model.clone(), &data.train, &tc).unwrap();
        let dist = run_distributed(model, &data.train, &tc).unwrap();
        assert_eq!(seq.step_losses.len(), dist.step_losses.len());
        min_steps = min_steps.min(seq.step_losses.len());
        for (a, b) in seq.step_losses.iter().zip(&dist.step_losses) {
            worst = worst.max(rel(*a, *b));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && min_steps >= 50 && elapsed < Duration::from_secs(120);
    verdict(
        2,
        "executor equivalence",
        pass,
        format!("H in {{1,2,4}}, {min_steps} steps each, max loss rel diff {worst:.1e}, {:.2}s", secs(elapsed)),
    );
}

#[test]
fn criterion_03_oracle_forward() {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    let mut multi = 0;
    for _ in 0..100 {
        let p = r.random_range(2..=10);
        let metas = random_metas(p, &mut r);
        let cfg = random_config(Variant::MultiheadPlusP, p, &mut r);
        multi += usize::from(cfg.heads > 1);
        let model = build_model(&cfg, &metas).unwrap();
        let s = random_sample(p, cfg.lookback, &mut r);
        let (y, _) = forward(&model, &s).unwrap();
        worst = worst.max((y - oracle_forward(&model, &s)).abs());
    }
    verdict(3, "oracle forward equivalence", worst <= 1e-12, format!("100 instances ({multi} with H > 1), max abs diff {worst:.1e}"));
}

#[test]
fn criterion_04_learning_sanity() {
    let start = Instant::now();
    let gen = GenConfig {
        pixels: 16,
        days: 2000,
        noise_rel: 0.05,
        seed: 42,
        ..GenConfig::default()
    };
    let ds = generate_synthetic(&gen).unwrap();
    let model = ModelConfig::new(Variant::MultiheadPlusP).with_lookback(30).with_seed(42);
    let tc = TrainConfig {
        shuffle_seed: 42,
        executor: ExecutorKind::Distributed,
        ..TrainConfig::default()
    };
    let t = train_watershed(&ds, &model, &tc, DEFAULT_TRAIN_FRACTION).unwrap();
    let elapsed = start.elapsed();
    let pass = t.nse_test >= 0.8 && elapsed < Duration::from_secs(300);
    verdict(
        4,
        "learning sanity",
        pass,
        format!("held-out NSE {:.4} after {} epochs, {:.1}s", t.nse_test, tc.epochs, secs(elapsed)),
    );
}

#[test]
fn criterion_05_variant_comparison() {
    let datasets: Vec<_> = generate_corpus(&GenConfig::default(), 4, 42).unwrap().into_iter().map(Arc::new).collect();
    let seeds: Vec<u64> = (42..47).collect();
    let settings = JobSettings::default();
    let table = run_comparison(&datasets, &Variant::ALL, &seeds, &settings, 4).unwrap();
    let median = |i: usize| table.columns[i].median_nse.unwrap_or(f64::NEG_INFINITY);
    let (single, plus_p, multi) = (median(0), median(1), median(2));
    let wins = table.pair(1, 0).and_then(|p| p.win_fraction_cells).unwrap_or(0.0);
    let failures: usize = table.columns.iter().map(|c| c.failures.len()).sum();
    let pass = multi >= single && wins >= 0.6;
    verdict(
        5,
        "three-variant comparison",
        pass,
        format!(
            "median NSE singlehead {single:.4}, +P {plus_p:.4}, multihead {multi:.4}; +P >= singlehead on {:.0}% of cells; {failures} failed cells",
            wins * 100.0
        ),
    );
}

#[test]
fn criterion_06_pipeline_speedup() {
    let datasets: Vec<_> = generate_corpus(&GenConfig::default(), 8, 42).unwrap().into_iter().map(Arc::new).collect();
    let settings = JobSettings {
        train: TrainConfig { epochs: 3, ..TrainConfig::default() },
        ..JobSettings::default()
    };
    let table = run_timing_table(&datasets, &[Variant::MultiheadPlusP], &settings, 42, 4).unwrap();
    let row = &table.rows[0];
    let pass = row.speedup >= 2.5 && row.results_match && row.failures.is_empty();
    verdict(
        6,
        "input-pipeline speedup",
        pass,
        format!(
            "8 jobs, pool 4, {} hardware threads: S {:.2}s, IP-D {:.2}s, speedup {:.1}x, results identical: {}",
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            row.time_s_secs,
            row.time_ipd_secs,
            row.speedup,
            row.results_match
        ),
    );
}

#[test]
fn criterion_07_model_parallel_speedup() {
    let ds = generate_synthetic(&GenConfig { days: 800, ..GenConfig::default() }).unwrap();
    let model = heavy_model_config(4).with_seed(42);
    let tc = TrainConfig {
        epochs: 1,
        workers: 4,
        shuffle_seed: 42,
        ..TrainConfig::default()
    };
    let r = run_model_parallel_bench(&ds, &model, &tc, DEFAULT_TRAIN_FRACTION).unwrap();
    verdict(
        7,
        "model-parallel speedup",
        r.speedup >= 1.5,
        format!(
            "H=4 heavy model, 4 workers, {} hardware threads: sequential {:.2}s, distributed {:.2}s, speedup {:.2}x",
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            r.sequential_secs,
            r.distributed_secs,
            r.speedup
        ),
    );
}

#[test]
fn criterion_08_pixcon_recovery() {
    let gen = GenConfig {
        noise_rel: 0.0,
        seed: 42,
        ..GenConfig::default()
    };
    let ds = generate_synthetic(&gen).unwrap();
    let model = ModelConfig::new(Variant::MultiheadPlusP).with_seed(42);
    let tc = TrainConfig {
        epochs: 20,
        shuffle_seed: 42,
        ..TrainConfig::default()
    };
    let t = train_watershed(&ds, &model, &tc, DEFAULT_TRAIN_FRACTION).unwrap();
    let rho = pixcon_recovery_score(&t.outcome.model, ds.truth.as_ref()).unwrap();
    verdict(8, "pixel contribution recovery", rho >= 0.6, format!("Spearman {rho:.3} after {} epochs", tc.epochs));
}

fn metas_strategy() -> impl Strategy<Value = (Vec<PixelMeta>, usize, PartitionStrategy)> {
    (1usize..40).prop_flat_map(|p| {
        (
            prop::collection::vec(0.0f64..50.0, p),
            1..=p,
            prop_oneof![Just(PartitionStrategy::DistanceQuantile), Just(PartitionStrategy::RoundRobin), Just(PartitionStrategy::ContiguousBlock)],
        )
            .prop_map(move |(d, h, s)| {
                let metas = d
                    .into_iter()
                    .enumerate()
                    .map(|(i, distance_km)| PixelMeta {
                        pixel_id: i,
                        row: i / 6,
                        col: i % 6,
                        distance_km,
                    })
                    .collect();
                (metas, h, s)
            })
    })
}

#[test]
fn criterion_09_data_integrity() {
    const CASES: u32 = 1000;
    let mut outcomes = Vec::new();
    let mut run = |name: &str, f: &dyn Fn(&mut TestRunner) -> Result<(), String>| {
        let mut runner = TestRunner::new(Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        });
        outcomes.push((name.to_string(), f(&mut runner)));
    };

    let small_gen = (2usize..60, 1usize..5, any::<u64>(), 0.0f64..0.3);

    run("windowing leakage freedom", &|runner| {
        runner
            .run(&(small_gen.clone(), 1usize..40), |((days, pixels, seed, noise), lookback)| {
                let ds = generate_synthetic(&GenConfig { days, pixels, seed, noise_rel: noise, ..GenConfig::default() }).unwrap();
                let Ok(samples) = window_samples(&ds, lookback) else {
                    prop_assert!(lookback >= days);
                    return Ok(());
                };
                for s in &samples {
                    let t = s.target_index;
                    for j in 0..lookback {
                        let day = t + j - lookback;
                        prop_assert!(day < t);
                        for p in 0..pixels {
                            prop_assert_eq!(s.x.row(p)[j], ds.precipitation.row(day)[p]);
                        }
                    }
                    prop_assert_eq!(s.y, ds.discharge[t]);
                }
                Ok(())
            })
            .map_err(|e| e.to_string())
    });

    run("sample-count law", &|runner| {
        runner
            .run(&(small_gen.clone(), 1usize..40), |((days, pixels, seed, noise), lookback)| {
                let ds = generate_synthetic(&GenConfig { days, pixels, seed, noise_rel: noise, ..GenConfig::default() }).unwrap();
                match window_samples(&ds, lookback) {
                    Ok(s) => {
                        prop_assert!(days > lookback);
                        prop_assert_eq!(s.len(), days - lookback);
                        let targets: Vec<usize> = s.iter().map(|s| s.target_index).collect();
                        prop_assert_eq!(targets, (lookback..days).collect::<Vec<_>>());
                    }
                    Err(_) => prop_assert!(days <= lookback),
                }
                Ok(())
            })
            .map_err(|e| e.to_string())
    });

    run("CSV round-trip identity", &|runner| {
        runner
            .run(&small_gen, |(days, pixels, seed, noise)| {
                let ds = generate_synthetic(&GenConfig { days, pixels, seed, noise_rel: noise, ..GenConfig::default() }).unwrap();
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join(&ds.watershed_id);
                write_watershed_csv(&ds, &path).unwrap();
                let back = load_watershed_dir(&path).unwrap();
                prop_assert_eq!(back, ds);
                Ok(())
            })
            .map_err(|e| e.to_string())
    });

    run("partition exact cover", &|runner| {
        runner
            .run(&metas_strategy(), |(metas, heads, strategy)| {
                let part = partition_pixels(&metas, heads, strategy).unwrap();
                prop_assert_eq!(part.heads.len(), heads);
                prop_assert!(part.heads.iter().all(|h| !h.is_empty()));
                let mut seen = BTreeSet::new();
                for &px in part.heads.iter().flatten() {
                    prop_assert!(seen.insert(px), "pixel {} assigned twice", px);
                }
                prop_assert_eq!(seen, (0..metas.len()).collect::<BTreeSet<_>>());
                Ok(())
            })
            .map_err(|e| e.to_string())
    });

    let failed: Vec<String> = outcomes.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect();
    let names: Vec<&str> = outcomes.iter().map(|(n, _)| n.as_str()).collect();
    verdict(
        9,
        "data integrity",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} properties x {CASES} cases ({})", outcomes.len(), names.join(", "))
        } else {
            failed.join("; ")
        },
    );
}

/// Drops wall-clock derived fields so reports can be compared bit-for-bit.
fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !(k.ends_with("_secs") || k == "speedup" || k == "head_imbalance"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn cli_report(out: &Path, args: &[&str], name: &str) -> Value {
    let status = Command::new(env!("CARGO_BIN_EXE_domst"))
        .arg("--seed")
        .arg("7")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(out.join(format!("{name}.json"))).unwrap()).unwrap();
    strip_timing(&mut v);
    v
}

#[test]
fn criterion_10_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let config = out.join("small.toml");
    std::fs::write(&config, "[gen]\ndays = 300\n\n[train]\nepochs = 2\n").unwrap();
    let config = config.to_str().unwrap();
    let commands: Vec<(Vec<&str>, &str)> = vec![
        (vec!["--config", config, "gen-data", "--watersheds", "2"], "gen-data"),
        (vec!["--config", config, "train", "--executor", "distributed", "--emit-traces", "--dump-partition"], "train"),
        (vec!["--config", config, "compare", "--watersheds", "2", "--seeds", "2"], "compare"),
        (vec!["--config", config, "bench", "--jobs", "2", "--pool", "2"], "bench"),
        (vec!["grad-check"], "grad-check"),
    ];
    let mut diverged = Vec::new();
    for (args, name) in &commands {
        let first = cli_report(out, args, name);
        let second = cli_report(out, args, name);
        if first != second {
            diverged.push(*name);
        }
    }
    verdict(
        10,
        "CLI determinism",
        diverged.is_empty(),
        if diverged.is_empty() {
            format!("{} commands, reports identical across reruns", commands.len())
        } else {
            format!("reports differ for {diverged:?}")
        },
    );
}
