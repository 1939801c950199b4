//! Toy-policy training runs on the synthetic needle corpus.

use crate::Outcome;
use std::time::Instant;
use twg_core::data::synthetic::SyntheticConfig;
use twg_core::data::Source;
use twg_core::harness::{run_train_toy, EngineConfig, MetricsRow, TrainStop};
use twg_core::policy::ToyPolicyParams;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const STEPS: usize = 200;
const CORPUS_SIZE: usize = 128;

/// Mean accuracy reward over the last steps must reach this.
const LEARNED_ACCURACY: f64 = 0.60;
const LEARNING_BUDGET_S: f64 = 300.0;
/// Steps averaged at the start and the end of a run.
const EARLY_STEPS: usize = 10;
const LATE_STEPS: usize = 20;
/// Late grounded fraction of the soft-only arm must fall to this or below.
const VANISHED_GROUNDING: f64 = 0.05;
/// Late grounded fraction of the soft + hard arm must stay at or above this.
const SUSTAINED_GROUNDING: f64 = 0.25;

fn train(samples: &[twg_core::Sample], config: &EngineConfig, init: Option<ToyPolicyParams>) -> Vec<MetricsRow> {
    let out = run_train_toy(samples, config, init).expect("training run");
    assert_eq!(out.stop, TrainStop::Completed, "seed {}", config.seed);
    out.metrics
}

fn window(rows: &[MetricsRow], from: usize, to: usize, f: fn(&MetricsRow) -> f64) -> f64 {
    rows[from..to].iter().map(f).sum::<f64>() / (to - from) as f64
}

fn early(rows: &[MetricsRow], f: fn(&MetricsRow) -> f64) -> f64 {
    window(rows, 0, EARLY_STEPS, f)
}

fn late(rows: &[MetricsRow], f: fn(&MetricsRow) -> f64) -> f64 {
    window(rows, rows.len() - LATE_STEPS, rows.len(), f)
}

fn all(rows: &[MetricsRow], f: fn(&MetricsRow) -> f64) -> f64 {
    window(rows, 0, rows.len(), f)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn acc(r: &MetricsRow) -> f64 {
    r.mean_acc
}

fn grounded(r: &MetricsRow) -> f64 {
    r.grounded_fraction
}

fn base_config(seed: u64) -> EngineConfig {
    let mut c = EngineConfig::default();
    c.seed = seed;
    c.train.steps = STEPS;
    c.curriculum.stage1_sources = vec![Source::Synthetic];
    c
}

pub fn learning() -> Outcome {
    let start = Instant::now();
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let samples = SyntheticConfig { n_samples: CORPUS_SIZE, seed, ..SyntheticConfig::default() }.generate();
        let rows = train(&samples, &base_config(seed), None);
        first.push(early(&rows, acc));
        last.push(late(&rows, acc));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let (before, after) = (mean(&first), mean(&last));
    Outcome::new(
        after >= LEARNED_ACCURACY && elapsed < LEARNING_BUDGET_S,
        format!(
            "accuracy reward over {} seeds: first {EARLY_STEPS} steps {before:.3}, last {LATE_STEPS} steps {after:.3} \
             (per seed {last:.3?}, need >= {LEARNED_ACCURACY}); {elapsed:.0} s for all runs (limit {LEARNING_BUDGET_S} s)",
            SEEDS.len()
        ),
    )
}

pub fn pseudo_direction() -> Outcome {
    let mut on = (Vec::new(), Vec::new());
    let mut off = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let samples = SyntheticConfig {
            n_samples: CORPUS_SIZE,
            seed,
            labeled_fraction: 0.0,
            coarse_legible_fraction: 0.5,
            lookalike_prob: 0.2,
            ..SyntheticConfig::default()
        }
        .generate();
        for (use_pseudo, arm) in [(true, &mut on), (false, &mut off)] {
            let mut c = base_config(seed);
            c.curriculum.skip_stage1 = true;
            c.rewards.use_pseudo = use_pseudo;
            let rows = train(&samples, &c, None);
            arm.0.push(all(&rows, grounded));
            arm.1.push(all(&rows, acc));
        }
    }
    let (g_on, g_off, a_on, a_off) = (mean(&on.0), mean(&off.0), mean(&on.1), mean(&off.1));
    Outcome::new(
        g_on < g_off && a_on >= a_off,
        format!(
            "over {} seeds and all steps: grounded fraction with pseudo {g_on:.4} vs without {g_off:.4}; \
             accuracy reward {a_on:.4} vs {a_off:.4}",
            SEEDS.len()
        ),
    )
}

pub fn shaping_direction() -> Outcome {
    let mut soft = (Vec::new(), Vec::new());
    let mut both = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let samples = SyntheticConfig {
            n_samples: CORPUS_SIZE,
            seed,
            labeled_fraction: 1.0,
            coarse_legible_fraction: 1.0,
            lookalike_prob: 0.5,
            ..SyntheticConfig::default()
        }
        .generate();
        for (use_hard, arm) in [(false, &mut soft), (true, &mut both)] {
            let mut c = base_config(seed);
            c.curriculum.stage1_steps = STEPS;
            c.train.step_size = 0.3;
            c.rewards.use_hard = use_hard;
            // start out grounding on most first turns
            let mut init = ToyPolicyParams::zeros(&c.toy);
            init.theta[c.toy.depth_index(0)] = 2.0;
            let rows = train(&samples, &c, Some(init));
            arm.0.push(early(&rows, grounded));
            arm.1.push(late(&rows, grounded));
        }
    }
    let (soft_early, soft_late) = (mean(&soft.0), mean(&soft.1));
    let (both_early, both_late) = (mean(&both.0), mean(&both.1));
    Outcome::new(
        soft_late <= VANISHED_GROUNDING && soft_late < soft_early && both_late >= SUSTAINED_GROUNDING,
        format!(
            "grounded fraction over {} seeds, first {EARLY_STEPS} -> last {LATE_STEPS} steps: soft only {soft_early:.3} -> {soft_late:.3} \
             (need <= {VANISHED_GROUNDING}), soft + hard {both_early:.3} -> {both_late:.3} (need >= {SUSTAINED_GROUNDING}, per seed {:.3?})",
            SEEDS.len(),
            both.1
        ),
    )
}
