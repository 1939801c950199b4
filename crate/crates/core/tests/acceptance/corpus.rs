//! Randomized samples, scripts and self-confirmation replies shared by the
//! scripted criteria.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use twg_core::data::{Sample, Source};
use twg_core::videorep::VideoMeta;
use twg_core::Interval;

pub const COARSE_FRAMES: i64 = 64;
const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

pub fn fixed_sample(id: &str, duration: f64, label: Option<(f64, f64)>, key: &str) -> Sample {
    Sample {
        sample_id: id.to_string(),
        video: VideoMeta::new(format!("{id}-video"), duration, format!("file:///videos/{id}.mp4")).unwrap(),
        question: "What is written on the sign?".into(),
        options: ["red", "green", "blue", "yellow"].iter().map(|s| s.to_string()).collect(),
        answer_key: key.to_string(),
        gt_grounding: label.map(|(s, e)| Interval::new(s, e).unwrap()),
        source: if label.is_some() { Source::NextGqa } else { Source::GeneralQa },
    }
}

fn eighths(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo..hi) * 8.0).round() / 8.0
}

/// Labeled (sometimes with a zero-length label) or unlabeled, with a
/// duration and endpoints on a 1/8 s grid.
pub fn random_sample(rng: &mut ChaCha8Rng, id: &str) -> Sample {
    let duration = eighths(rng, 20.0, 900.0);
    let label = match rng.random_range(0..10) {
        0..4 => None,
        4 => {
            let t = eighths(rng, 0.0, duration);
            Some((t, t))
        }
        _ => {
            let s = eighths(rng, 0.0, duration - 1.0);
            let e = eighths(rng, s, duration);
            Some((s, e))
        }
    };
    let key = LETTERS[rng.random_range(0..LETTERS.len())];
    fixed_sample(id, duration, label, &key.to_string())
}

fn wrong_letter(rng: &mut ChaCha8Rng, key: char) -> char {
    let others: Vec<char> = LETTERS.iter().copied().filter(|&c| c != key).collect();
    others[rng.random_range(0..others.len())]
}

pub fn ground_text(rng: &mut ChaCha8Rng) -> String {
    let s = rng.random_range(0..COARSE_FRAMES);
    let e = rng.random_range(s..COARSE_FRAMES);
    let think = ["the sign is small", "zoom", "check the middle"][rng.random_range(0..3)];
    format!("<think>{think}</think><ground>{s}, {e}</ground>")
}

pub fn answer_text(rng: &mut ChaCha8Rng, letter: char) -> String {
    let body = match rng.random_range(0..3) {
        0 => letter.to_string(),
        1 => format!("({letter}) it is that one"),
        _ => format!(" {letter} "),
    };
    format!("<think>I can read it now</think><answer>{body}</answer>")
}

pub fn malformed_text(rng: &mut ChaCha8Rng) -> String {
    let options = [
        "B".to_string(),
        "<think>only thinking</think>".to_string(),
        "<think>backwards</think><ground>40, 12</ground>".to_string(),
        "<think>past the end</think><ground>3, 64</ground>".to_string(),
        "<answer>C</answer>".to_string(),
        "<think>two</think><answer>A</answer><answer>B</answer>".to_string(),
        "<think>empty</think><answer>  </answer>".to_string(),
    ];
    options[rng.random_range(0..options.len())].clone()
}

/// Zero to three groundings, then a correct answer, a wrong answer, or a
/// malformed turn (nothing after three groundings). Occasionally trailing
/// outputs the loop never reaches are appended.
pub fn random_script(rng: &mut ChaCha8Rng, sample: &Sample) -> Vec<String> {
    let key = sample.answer_key.chars().next().unwrap();
    let groundings = rng.random_range(0..=3);
    let mut script: Vec<String> = (0..groundings).map(|_| ground_text(rng)).collect();
    if groundings < 3 {
        let last = match rng.random_range(0..3) {
            0 => answer_text(rng, key),
            1 => {
                let w = wrong_letter(rng, key);
                answer_text(rng, w)
            }
            _ => malformed_text(rng),
        };
        script.push(last);
    }
    if rng.random_bool(0.1) {
        script.push(answer_text(rng, key));
    }
    script
}

/// A correct, wrong, or unreadable self-confirmation reply.
pub fn random_reply(rng: &mut ChaCha8Rng, sample: &Sample) -> String {
    let key = sample.answer_key.chars().next().unwrap();
    match rng.random_range(0..5) {
        0 => format!("<answer>{key}</answer>"),
        1 => format!("<think>the sign says so</think><answer>({key}) that colour</answer>"),
        2 => format!("<answer>{}</answer>", wrong_letter(rng, key)),
        3 => "I cannot tell".into(),
        _ => "<answer>maybe</answer>".into(),
    }
}
