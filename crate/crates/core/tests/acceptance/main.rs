//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.
//!
//! Run alone with `cargo test -p twg-core --test acceptance`.

mod closed_loop;
mod corpus;
mod reward_oracle;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Mutex;
use std::time::Instant;
use twg_core::data::{filter_label_coverage, filter_min_duration, Sample};
use twg_core::grpo::{
    clipped_objective, finite_difference_gradient, group_advantages, toy_batch, GrpoConfig, GrpoError, Group,
};
use twg_core::harness::rollout_group;
use twg_core::policy::{
    Capabilities, GenerationRequest, GenerationResponse, Policy, PolicyError, PolicyKind, SamplingParams, Script,
    ScriptedPolicy, ToyConfig, ToyPolicy, ToyPolicyParams,
};
use twg_core::rewards::{grounding_reward, temporal_iou, total_reward, GroundingTerms, RewardCase, RewardConfig};
use twg_core::rollout::{run_trajectory, RolloutConfig, RolloutError, StopReason, Trajectory};
use twg_core::tagfmt::{
    parse_turn_output, render_action, AnswerAction, GroundAction, ParsedTurn, ThinkText, TurnKind,
};
use twg_core::Interval;

/// Criterion 3: largest allowed |library - oracle| for grounding rewards.
const IOU_TOLERANCE: f64 = 1e-12;
/// Criterion 4: allowed deviation of advantage mean from 0 and std from 1.
const STANDARDIZATION_TOLERANCE: f64 = 1e-9;
/// Criterion 5: hand-computed objective values.
const OBJECTIVE_TOLERANCE: f64 = 1e-12;
/// Criterion 5: finite-difference vs analytic gradient, relative.
const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Criterion 1: wall-clock budget for logging and replaying the corpus.
const REPLAY_BUDGET_S: f64 = 10.0;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("reward oracle equivalence", reward_oracle::run),
        ("gate soundness", gate_soundness),
        ("grounding reward table", grounding_table),
        ("advantage standardization", advantage_standardization),
        ("objective math", objective_math),
        ("rollout state machine", rollout_state_machine),
        ("dataset filters", dataset_filters),
        ("closed-loop learning", closed_loop::learning),
        ("pseudo-reward direction", closed_loop::pseudo_direction),
        ("stage-1 reward shaping direction", closed_loop::shaping_direction),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!outcome.pass);
        println!(
            "criterion {:>2} [{verdict}] {name}: {} ({:.1} s)",
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn gate_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rollout = RolloutConfig::default();
    let rewards = RewardConfig::default();
    let mut per_case = [0usize; 3];
    let mut gated_zero_acc = [0usize; 3];
    let mut violations = Vec::new();
    let n = 10_000;
    for i in 0..n {
        let sample = corpus::random_sample(&mut rng, &format!("gate-{i}"));
        let script = corpus::random_script(&mut rng, &sample);
        let policy = ScriptedPolicy::new(Script::Fixed(script))
            .with_self_confirm(Script::Repeat(corpus::random_reply(&mut rng, &sample)));
        let traj = run_trajectory(&policy, &sample, &rollout, &SamplingParams::training(), i).expect("scripted rollout");
        let bd = total_reward(&traj, &sample, &policy, &rewards).expect("reward");
        let c = match bd.case {
            RewardCase::NoGrounding => 0,
            RewardCase::Labeled => 1,
            RewardCase::Unlabeled => 2,
        };
        per_case[c] += 1;
        if bd.r_acc == 0.0 {
            gated_zero_acc[c] += 1;
            if bd.total != bd.r_format {
                violations.push(sample.sample_id.clone());
            }
        }
    }
    let covered = gated_zero_acc.iter().all(|&k| k > 0);
    Outcome::new(
        violations.is_empty() && covered,
        format!(
            "{n} trajectories, cases (none/labeled/unlabeled) {per_case:?}, with r_acc = 0 {gated_zero_acc:?}, {} violations",
            violations.len()
        ),
    )
}

fn exact_iou(a: (i64, i64), b: (i64, i64)) -> Rational64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        Rational64::from_integer(0)
    } else {
        Rational64::new(inter, union)
    }
}

fn grounding_table() -> Outcome {
    // Endpoints on a 1/64 s grid so the oracle can work in exact rationals.
    const GRID: i64 = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_err: f64 = 0.0;
    let mut flips_ok = true;
    let (mut zero, mut positive) = (0, 0);
    let mut pairs: Vec<((i64, i64), (i64, i64))> = Vec::new();
    for _ in 0..1000 {
        let a0 = rng.random_range(0..600 * GRID);
        let a1 = a0 + rng.random_range(1..120 * GRID);
        let b = match rng.random_range(0..4) {
            // touching on either side
            0 => (a1, a1 + rng.random_range(1..60 * GRID)),
            1 if a0 > 0 => (rng.random_range(0..a0), a0),
            _ => {
                let b0 = rng.random_range(0..600 * GRID);
                (b0, b0 + rng.random_range(1..120 * GRID))
            }
        };
        pairs.push(((a0, a1), b));
    }
    // one grid step of overlap and the matching touch
    pairs.push(((0, GRID), (GRID - 1, 2 * GRID)));
    pairs.push(((0, GRID), (GRID, 2 * GRID)));
    for &(a, b) in &pairs {
        let f = |(s, e): (i64, i64)| Interval::new(s as f64 / GRID as f64, e as f64 / GRID as f64).unwrap();
        let (ia, ib) = (f(a), f(b));
        let oracle = exact_iou(a, b);
        let oracle_f = *oracle.numer() as f64 / *oracle.denom() as f64;
        let hard_oracle = if oracle > Rational64::from_integer(0) { 0.5 } else { 0.0 };
        let reward = grounding_reward(&ia, &ib);
        let terms = GroundingTerms::between(&ia, &ib);
        max_err = max_err
            .max((reward - (oracle_f + hard_oracle)).abs())
            .max((temporal_iou(&ia, &ib) - temporal_iou(&ib, &ia)).abs());
        flips_ok &= terms.hard == hard_oracle;
        if hard_oracle == 0.0 {
            zero += 1;
        } else {
            positive += 1;
        }
    }
    Outcome::new(
        max_err < IOU_TOLERANCE && flips_ok && zero > 0 && positive > 0,
        format!(
            "{} pairs ({zero} with IoU = 0, {positive} with IoU > 0), max abs error {max_err:.3e} (limit {IOU_TOLERANCE:e}), hard term flips at 0: {flips_ok}",
            pairs.len()
        ),
    )
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn advantage_standardization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    let mut groups = 0;
    while groups < 10_000 {
        let g = rng.random_range(2..=64);
        let rewards: Vec<f64> = if rng.random_bool(0.5) {
            (0..g).map(|_| rng.random_range(-3.0..3.0)).collect()
        } else {
            // values a reward breakdown can actually take
            let lattice = [0.0, 0.2, 1.0, 1.1, 1.2, 1.7, 2.2, 2.7, 1.7375];
            (0..g).map(|_| lattice[rng.random_range(0..lattice.len())]).collect()
        };
        let Ok(adv) = group_advantages(&rewards) else {
            continue;
        };
        let (m, s) = mean_std(&adv);
        worst_mean = worst_mean.max(m.abs());
        worst_std = worst_std.max((s - 1.0).abs());
        groups += 1;
    }

    let mut degenerate_ok = true;
    for _ in 0..1000 {
        let g = rng.random_range(2..=64);
        let v = rng.random_range(-3.0..3.0);
        degenerate_ok &= group_advantages(&vec![v; g]) == Err(GrpoError::DegenerateGroup);
    }

    // Shifts and power-of-two scales that are exact on a 1/16 reward grid.
    let mut invariance_ok = true;
    let mut invariance_checked = 0;
    for _ in 0..2000 {
        let g = rng.random_range(2..=64);
        let base: Vec<f64> = (0..g).map(|_| f64::from(rng.random_range(0..48)) / 16.0).collect();
        let Ok(a) = group_advantages(&base) else {
            continue;
        };
        let shift = f64::from(rng.random_range(-64..64)) / 16.0;
        let scale = 2f64.powi(rng.random_range(-6..=6));
        let shifted: Vec<f64> = base.iter().map(|r| r + shift).collect();
        let scaled: Vec<f64> = base.iter().map(|r| r * scale).collect();
        invariance_ok &= group_advantages(&shifted).as_ref() == Ok(&a);
        invariance_ok &= group_advantages(&scaled).as_ref() == Ok(&a);
        invariance_checked += 1;
    }

    Outcome::new(
        worst_mean < STANDARDIZATION_TOLERANCE && worst_std < STANDARDIZATION_TOLERANCE && degenerate_ok && invariance_ok,
        format!(
            "{groups} groups: max |mean| {worst_mean:.2e}, max |std - 1| {worst_std:.2e} (limit {STANDARDIZATION_TOLERANCE:e}); \
             1000 constant groups degenerate: {degenerate_ok}; exact shift/scale on {invariance_checked} grid groups: {invariance_ok}"
        ),
    )
}

fn objective_math() -> Outcome {
    let examples = [(1.0f64, 1.0, 1.0), (2.0, 1.0, 1.2), (0.5, -1.0, -0.8)];
    let mut worst: f64 = 0.0;
    for (r, a, expected) in examples {
        let j = clipped_objective(&[r.ln()], &[0.0], &[a], 0.2).expect("objective");
        worst = worst.max((j - expected).abs());
    }

    // Analytic gradient of the unclipped objective at r = 1:
    // mean_i A_i * sum_t (phi(o_t, a_t) - E_pi[phi(o_t, .)]).
    let config = ToyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ToyPolicyParams::zeros(&config);
    params.theta.iter_mut().for_each(|t| *t = rng.random_range(-1.0..1.0));
    let policy = ToyPolicy::new(config, params.clone()).expect("toy policy");
    let samples = twg_core::data::synthetic::SyntheticConfig {
        n_samples: 24,
        coarse_legible_fraction: 0.5,
        lookalike_prob: 0.3,
        ..Default::default()
    }
    .generate();
    let rollout = RolloutConfig::default();
    let rewards = RewardConfig::default();
    let mut groups: Vec<Group> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let mut g = rollout_group(&policy, s, &rollout, &SamplingParams::training(), &rewards, 8, i as u64).expect("group");
        if g.compute_advantages(Default::default()).is_ok() {
            g.logp_ref = g.logp_old.clone();
            groups.push(g);
        }
    }
    let grpo = GrpoConfig::default();
    let batch = toy_batch(&policy, &groups).expect("batch");
    let fd = finite_difference_gradient(&config, &params, &batch, &grpo, 1e-5).expect("gradient");
    let mut analytic = vec![0.0; params.theta.len()];
    for item in &batch {
        for (obs, action) in &item.steps {
            let actions = config.actions(obs);
            let logits: Vec<f64> = actions
                .iter()
                .map(|&b| config.features(obs, b).iter().map(|&(j, v)| params.theta[j] * v).sum())
                .collect();
            let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - zmax).exp()).sum();
            for &(j, v) in &config.features(obs, *action) {
                analytic[j] += item.advantage * v;
            }
            for (b, l) in actions.iter().zip(&logits) {
                let p = (l - zmax).exp() / z;
                for &(j, v) in &config.features(obs, *b) {
                    analytic[j] -= item.advantage * p * v;
                }
            }
        }
    }
    analytic.iter_mut().for_each(|g| *g /= batch.len() as f64);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = fd.iter().zip(&analytic).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&analytic);
    Outcome::new(
        worst < OBJECTIVE_TOLERANCE && rel < GRADIENT_TOLERANCE && norm(&analytic) > 0.0,
        format!(
            "worked examples max error {worst:.1e} (limit {OBJECTIVE_TOLERANCE:e}); gradient over {} trajectories, relative error {rel:.2e} (limit {GRADIENT_TOLERANCE:e})",
            batch.len()
        ),
    )
}

/// Records the context size of every request it forwards.
struct Recording<'a> {
    inner: &'a dyn Policy,
    seen: Mutex<Vec<(usize, usize, usize)>>,
}

impl Policy for Recording<'_> {
    fn kind(&self) -> PolicyKind {
        self.inner.kind()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, PolicyError> {
        self.seen
            .lock()
            .unwrap()
            .push((request.turn_index(), request.messages.len(), request.views().count()));
        self.inner.generate(request)
    }

    fn score_trajectory(&self, t: &Trajectory) -> Result<f64, PolicyError> {
        self.inner.score_trajectory(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sym {
    Ground,
    Answer,
    Malformed,
}

fn rollout_state_machine() -> Outcome {
    let sample = corpus::fixed_sample("fsm", 96.0, Some((10.0, 20.0)), "C");
    let text = |s: Sym| match s {
        Sym::Ground => "<think>zoom</think><ground>8, 23</ground>".to_string(),
        Sym::Answer => "<think>seen</think><answer>C</answer>".to_string(),
        Sym::Malformed => "<think>oops</think><ground>30, 2</ground>".to_string(),
    };
    let syms = [Sym::Ground, Sym::Answer, Sym::Malformed];
    let mut patterns: Vec<Vec<Sym>> = Vec::new();
    for len in 1..=3u32 {
        for code in 0..3usize.pow(len) {
            let mut c = code;
            patterns.push(
                (0..len)
                    .map(|_| {
                        let s = syms[c % 3];
                        c /= 3;
                        s
                    })
                    .collect(),
            );
        }
    }
    let rollout = RolloutConfig::default();
    let mut failures = Vec::new();
    for p in &patterns {
        let scripted = ScriptedPolicy::new(Script::Fixed(p.iter().map(|&s| text(s)).collect()));
        let rec = Recording {
            inner: &scripted,
            seen: Mutex::new(Vec::new()),
        };
        let first_terminal = p.iter().position(|&s| s != Sym::Ground);
        let result = run_trajectory(&rec, &sample, &rollout, &SamplingParams::training(), 0);
        let ok = match (first_terminal, result) {
            (None, Err(RolloutError::Policy(PolicyError::ScriptExhausted { turn }))) if p.len() < 3 => turn == p.len(),
            (_, Err(e)) => {
                failures.push(format!("{p:?}: {e}"));
                continue;
            }
            (first, Ok(t)) => {
                let expected_len = first.map_or(3, |i| i + 1);
                let expected_stop = match first.map(|i| p[i]) {
                    None => StopReason::MaxTurns,
                    Some(Sym::Answer) => StopReason::Answered,
                    _ => StopReason::Malformed,
                };
                let seen = rec.seen.lock().unwrap().clone();
                let growth = seen.iter().enumerate().all(|(k, &(turn, msgs, views))| {
                    turn == k && msgs == 1 + 2 * k && views == 1 + k && t.context_before(k).len() == msgs
                });
                t.turns.len() <= 3
                    && t.turns.len() == expected_len
                    && t.stop == expected_stop
                    && t.check_invariants().is_ok()
                    && seen.len() == expected_len
                    && growth
                    && t.grounding_count() == t.turns.iter().filter(|x| x.injected_view.is_some()).count()
            }
        };
        if !ok {
            failures.push(format!("{p:?}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut round_trip_failures = 0;
    let words = ["look", "the sign", "red car", "zoom in", "maybe C?", "frames 3-9", "  spaced  "];
    for _ in 0..10_000 {
        let think = ThinkText::new(words[rng.random_range(0..words.len())]).unwrap();
        let turn = if rng.random_bool(0.5) {
            let s = rng.random_range(0..64);
            let e = rng.random_range(s..64);
            ParsedTurn::grounding(think, GroundAction::new(s, e, 64).unwrap())
        } else {
            let letter = char::from(b'A' + rng.random_range(0..26u8));
            let text = if rng.random_bool(0.5) {
                letter.to_string()
            } else {
                format!("({letter}) option")
            };
            ParsedTurn::answering(think, AnswerAction::new(text).unwrap())
        };
        let parsed = parse_turn_output(&turn.raw, 64);
        let ok = parsed == turn && parsed.kind() != TurnKind::Malformed && render_action(&parsed).as_deref() == Ok(turn.raw.as_str());
        round_trip_failures += usize::from(!ok);
    }

    Outcome::new(
        failures.is_empty() && round_trip_failures == 0,
        format!(
            "{} script patterns, {} failures{}; 10000 turns round-tripped, {round_trip_failures} failures",
            patterns.len(),
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn dataset_filters() -> Outcome {
    let cases: [(&str, f64, Option<(f64, f64)>); 10] = [
        ("short-15", 15.0, None),
        ("just-under-20", 19.999, None),
        ("exactly-20", 20.0, None),
        ("long-unlabeled", 300.0, None),
        ("coverage-0.005", 100.0, Some((40.0, 40.5))),
        ("coverage-0.0099", 100.0, Some((40.0, 40.99))),
        ("coverage-0.01", 100.0, Some((10.0, 11.0))),
        ("coverage-0.06", 100.0, Some((50.0, 56.0))),
        ("short-and-thin", 15.0, Some((1.0, 1.01))),
        ("whole-video", 64.0, Some((0.0, 64.0))),
    ];
    let corpus: Vec<Sample> = cases
        .iter()
        .map(|&(id, d, label)| corpus::fixed_sample(id, d, label, "A"))
        .collect();
    let kept: Vec<String> = filter_label_coverage(filter_min_duration(corpus.clone(), 20.0).unwrap(), 0.01)
        .unwrap()
        .into_iter()
        .map(|s| s.sample_id)
        .collect();
    let oracle: Vec<String> = cases
        .iter()
        .filter(|(_, d, label)| {
            let millis = |x: f64| (x * 1000.0).round() as i64;
            *d >= 20.0 && label.is_none_or(|(s, e)| Rational64::new(millis(e - s), millis(*d)) >= Rational64::new(1, 100))
        })
        .map(|(id, _, _)| id.to_string())
        .collect();
    let spot = kept.contains(&"exactly-20".to_string())
        && !kept.contains(&"short-15".to_string())
        && kept.contains(&"coverage-0.06".to_string())
        && !kept.contains(&"coverage-0.005".to_string());
    Outcome::new(
        kept == oracle && spot,
        format!("{} of {} samples kept, recount {}: {kept:?}", kept.len(), corpus.len(), if kept == oracle { "matches" } else { "differs" }),
    )
}
