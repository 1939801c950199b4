//! Logs scripted trajectories with their rewards, replays the log, and
//! checks every logged breakdown against a straight-line recomputation from
//! the raw script text.

use crate::corpus::{self, COARSE_FRAMES};
use crate::{Outcome, REPLAY_BUDGET_S};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::time::Instant;
use twg_core::data::Sample;
use twg_core::harness::{read_records, replay_rewards, TrajectoryRecord};
use twg_core::policy::{SamplingParams, Script, ScriptedPolicy};
use twg_core::rewards::{total_reward, RewardBreakdown, RewardCase, RewardConfig, SelfConfirm};
use twg_core::rollout::{run_trajectory, RolloutConfig};

const GAMMA: f64 = 0.1;
const TAGS: [&str; 6] = ["<think>", "</think>", "<ground>", "</ground>", "<answer>", "</answer>"];

#[derive(Debug, Clone, PartialEq)]
enum Turn {
    Ground(i64, i64),
    Answer(String),
    Bad,
}

/// `(name, content)` for each tag block, or `None` when the tags do not nest.
fn blocks(text: &str) -> Option<Vec<(&'static str, String)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let Some(&tag) = TAGS.iter().find(|t| rest.starts_with(**t)) else {
            i += rest.chars().next().unwrap().len_utf8();
            continue;
        };
        if tag.starts_with("</") {
            return None;
        }
        let name = &tag[1..tag.len() - 1];
        let close = format!("</{name}>");
        let body = &rest[tag.len()..];
        let end = body.find(&close)?;
        let content = &body[..end];
        if TAGS.iter().any(|t| content.contains(t)) {
            return None;
        }
        out.push((name, content.to_string()));
        i += tag.len() + end + close.len();
    }
    Some(out)
}

fn parse(text: &str) -> Turn {
    let Some(b) = blocks(text) else {
        return Turn::Bad;
    };
    if b.len() != 2 || b[0].0 != "think" || b[0].1.trim().is_empty() {
        return Turn::Bad;
    }
    match b[1].0 {
        "ground" => {
            let parts: Vec<&str> = b[1].1.split(',').map(str::trim).collect();
            let nums: Option<Vec<i64>> = parts.iter().map(|p| p.parse().ok()).collect();
            match nums.as_deref() {
                Some(&[s, e]) if parts.len() == 2 && 0 <= s && s <= e && e < COARSE_FRAMES => Turn::Ground(s, e),
                _ => Turn::Bad,
            }
        }
        "answer" if !b[1].1.trim().is_empty() => Turn::Answer(b[1].1.trim().to_string()),
        _ => Turn::Bad,
    }
}

fn option_letter(text: &str) -> Option<char> {
    let c: Vec<char> = text.chars().collect();
    (0..c.len()).find_map(|i| {
        let alone = (i == 0 || !c[i - 1].is_alphanumeric()) && (i + 1 == c.len() || !c[i + 1].is_alphanumeric());
        (c[i].is_ascii_uppercase() && alone).then_some(c[i])
    })
}

fn reply_letter(reply: &str) -> Option<char> {
    let b = blocks(reply)?;
    let answers: Vec<&String> = b.iter().filter(|(n, _)| *n == "answer").map(|(_, c)| c).collect();
    if answers.len() != 1 || b.iter().any(|(n, _)| *n == "ground") || answers[0].trim().is_empty() {
        return None;
    }
    option_letter(answers[0].trim())
}

fn boundary(index: i64, duration: f64) -> f64 {
    if index == COARSE_FRAMES {
        duration
    } else {
        duration * index as f64 / COARSE_FRAMES as f64
    }
}

pub struct Expected {
    pub breakdown: RewardBreakdown,
    pub groundings: usize,
    pub max_turns: bool,
    pub malformed: bool,
}

/// Recomputes the reward of a script run on `sample` from scratch.
pub fn expected(sample: &Sample, script: &[String], reply: &str) -> Expected {
    let key = sample.answer_key.chars().next().unwrap();
    let d = sample.video.duration_s;
    let mut turns = Vec::new();
    for text in script.iter().take(3) {
        let t = parse(text);
        let stop = !matches!(t, Turn::Ground(..));
        turns.push(t);
        if stop {
            break;
        }
    }
    let malformed = turns.contains(&Turn::Bad);
    let r_acc = match turns.last() {
        Some(Turn::Answer(a)) if option_letter(a) == Some(key) => 1.0,
        _ => 0.0,
    };
    let r_format = if malformed { 0.0 } else { 0.2 };
    let groundings: Vec<(i64, i64)> = turns
        .iter()
        .filter_map(|t| match t {
            Turn::Ground(s, e) => Some((*s, *e)),
            _ => None,
        })
        .collect();
    let mut b = RewardBreakdown {
        case: RewardCase::NoGrounding,
        r_acc,
        r_format,
        iou: None,
        r_soft: None,
        r_hard: None,
        r_grounding: None,
        r_pseudo: None,
        self_confirm: None,
        gated: false,
        total: r_acc + r_format,
    };
    if let Some(&(gs, ge)) = groundings.last() {
        let term = if let Some(label) = sample.gt_grounding {
            let (mut ls, mut le) = (label.start_s, label.end_s);
            if ls == le {
                let half = d / COARSE_FRAMES as f64 / 2.0;
                (ls, le) = ((ls - half).max(0.0), (le + half).min(d));
            }
            let (ps, pe) = (boundary(gs, d), boundary(ge + 1, d));
            let overlap = pe.min(le) - ps.max(ls);
            let inter = if overlap > 0.0 { overlap } else { 0.0 };
            let union = (pe - ps) + (le - ls) - inter;
            let iou = if union > 0.0 { inter / union } else { 0.0 };
            let hard = if iou > 0.0 { 0.5 } else { 0.0 };
            b.case = RewardCase::Labeled;
            b.iou = Some(iou);
            b.r_soft = Some(iou);
            b.r_hard = Some(hard);
            b.r_grounding = Some(iou + hard);
            iou + hard
        } else {
            let answer = reply_letter(reply);
            let correct = answer == Some(key);
            let p = if correct { 0.0 } else { -GAMMA };
            b.case = RewardCase::Unlabeled;
            b.r_pseudo = Some(p);
            b.self_confirm = Some(SelfConfirm {
                raw: reply.to_string(),
                answer,
                correct,
                unparseable: answer.is_none(),
            });
            p
        };
        if r_acc > 0.0 {
            b.total += term;
        } else {
            b.gated = true;
        }
    }
    Expected {
        breakdown: b,
        groundings: groundings.len(),
        max_turns: turns.len() == 3 && matches!(turns[2], Turn::Ground(..)),
        malformed,
    }
}

pub fn run() -> Outcome {
    let n = 240;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples = Vec::new();
    let mut scripts = Vec::new();
    let mut replies = Vec::new();
    let mut policy = ScriptedPolicy::default();
    for i in 0..n {
        let s = corpus::random_sample(&mut rng, &format!("oracle-{i:03}"));
        let script = corpus::random_script(&mut rng, &s);
        let reply = corpus::random_reply(&mut rng, &s);
        policy = policy
            .with_video(s.video.source_uri.clone(), Script::Fixed(script.clone()))
            .with_self_confirm_video(s.video.source_uri.clone(), Script::Repeat(reply.clone()));
        samples.push(s);
        scripts.push(script);
        replies.push(reply);
    }

    let start = Instant::now();
    let config = RewardConfig::default();
    let records: Vec<TrajectoryRecord> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = rng.random();
            let t = run_trajectory(&policy, s, &RolloutConfig::default(), &SamplingParams::training(), seed).unwrap();
            let b = total_reward(&t, s, &policy, &config).unwrap();
            TrajectoryRecord::new(s, t, Some(b), seed, i as u32 % 2)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rewards.jsonl");
    twg_core::harness::write_records(&path, &records).unwrap();
    let logged = read_records(&path).unwrap();
    let report = replay_rewards(&logged, &samples, &config).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut oracle_mismatch = Vec::new();
    let mut coverage = BTreeSet::new();
    for (i, r) in logged.iter().enumerate() {
        let e = expected(&samples[i], &scripts[i], &replies[i]);
        if r.reward.as_ref() != Some(&e.breakdown) {
            oracle_mismatch.push(r.sample_id().to_string());
        }
        let b = &e.breakdown;
        coverage.insert(format!("{:?}/correct={}", b.case, b.r_acc > 0.0));
        coverage.insert(format!("groundings={}", e.groundings));
        if e.max_turns {
            coverage.insert("max_turns".into());
        }
        if e.malformed {
            coverage.insert("malformed".into());
        }
        if b.self_confirm.as_ref().is_some_and(|s| s.unparseable) {
            coverage.insert("unparseable_reply".into());
        }
    }
    let needed = [
        "Labeled/correct=true",
        "Labeled/correct=false",
        "Unlabeled/correct=true",
        "Unlabeled/correct=false",
        "NoGrounding/correct=true",
        "NoGrounding/correct=false",
        "groundings=0",
        "groundings=1",
        "groundings=2",
        "groundings=3",
        "max_turns",
        "malformed",
        "unparseable_reply",
    ];
    let missing: Vec<&str> = needed.iter().copied().filter(|k| !coverage.contains(*k)).collect();
    Outcome::new(
        report.all_matched()
            && report.matched == n
            && oracle_mismatch.is_empty()
            && missing.is_empty()
            && elapsed < REPLAY_BUDGET_S,
        format!(
            "{n} trajectories, replay matched {}/{n} with {} field mismatches, oracle disagreed on {}, uncovered cases {missing:?}, log+replay {elapsed:.2} s (limit {REPLAY_BUDGET_S} s)",
            report.matched,
            report.mismatches.len(),
            oracle_mismatch.len()
        ),
    )
}
