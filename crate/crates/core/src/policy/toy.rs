//! A log-linear softmax policy over a handful of action templates.
//!
//! The policy reads a small summary of its context (how deep it has zoomed,
//! whether an option letter is legible in the newest informative view, and
//! where the coarse view shows something) and chooses either to ground one
//! of `windows` equal slices of the coarse timeline or to answer one of the
//! options. Every action renders to a fixed text, so text and action are in
//! one-to-one correspondence and log-probabilities are exact.

use super::{Capabilities, GenerationRequest, GenerationResponse, Policy, PolicyError, PolicyKind};
use crate::data::synthetic::{EventHandle, Percept};
use crate::rollout::Trajectory;
use crate::tagfmt::{AnswerAction, GroundAction, ParsedTurn, ThinkText, TurnAction};
use crate::videorep::{Grain, ViewSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// Number of equal grounding windows over the coarse timeline.
    pub windows: u32,
    pub options: usize,
    pub coarse_frames: u32,
    /// Zoom depths beyond this share one bias parameter.
    pub max_depth: u32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            windows: 4,
            options: 4,
            coarse_frames: 64,
            max_depth: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyAction {
    Ground(u32),
    Answer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToyObservation {
    /// Fine views in context.
    pub depth: u32,
    /// Option index of the letter legible in the newest view showing one.
    pub letter: Option<usize>,
    /// Window holding the first thing the coarse view shows.
    pub hint: Option<u32>,
    pub self_confirm: bool,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.windows == 0 || self.coarse_frames % self.windows != 0 {
            return Err(format!("{} windows do not tile {} frames", self.windows, self.coarse_frames));
        }
        if !(2..=26).contains(&self.options) {
            return Err(format!("{} options", self.options));
        }
        Ok(())
    }

    fn depth_params(&self) -> usize {
        self.max_depth as usize + 1
    }

    pub fn param_count(&self) -> usize {
        self.depth_params() + 3 + self.windows as usize
    }

    /// Index of the "ground while a letter is visible" weight.
    pub fn letter_ground_index(&self) -> usize {
        self.depth_params()
    }

    pub fn hint_ground_index(&self) -> usize {
        self.depth_params() + 1
    }

    pub fn answer_letter_index(&self) -> usize {
        self.depth_params() + 2
    }

    pub fn window_index(&self, w: u32) -> usize {
        self.depth_params() + 3 + w as usize
    }

    pub fn depth_index(&self, depth: u32) -> usize {
        depth.min(self.max_depth) as usize
    }

    pub fn actions(&self, obs: &ToyObservation) -> Vec<ToyAction> {
        let answers = (0..self.options).map(ToyAction::Answer);
        if obs.self_confirm {
            answers.collect()
        } else {
            (0..self.windows).map(ToyAction::Ground).chain(answers).collect()
        }
    }

    /// Sparse feature vector `phi(obs, action)`.
    pub fn features(&self, obs: &ToyObservation, action: ToyAction) -> Vec<(usize, f64)> {
        match action {
            ToyAction::Ground(w) => {
                let mut f = vec![(self.depth_index(obs.depth), 1.0), (self.window_index(w), 1.0)];
                if obs.letter.is_some() {
                    f.push((self.letter_ground_index(), 1.0));
                }
                if obs.hint == Some(w) {
                    f.push((self.hint_ground_index(), 1.0));
                }
                f
            }
            ToyAction::Answer(o) if obs.letter == Some(o) => vec![(self.answer_letter_index(), 1.0)],
            ToyAction::Answer(_) => Vec::new(),
        }
    }

    pub fn window_frames(&self, w: u32) -> (u32, u32) {
        let per = self.coarse_frames / self.windows;
        (w * per, (w + 1) * per - 1)
    }

    pub fn render(&self, action: ToyAction) -> String {
        match action {
            ToyAction::Ground(w) => {
                let (s, e) = self.window_frames(w);
                format!("<think>zoom into part {w}</think><ground>{s}, {e}</ground>")
            }
            ToyAction::Answer(o) => {
                let letter = char::from(b'A' + o as u8);
                format!("<think>answer from what is visible</think><answer>{letter}</answer>")
            }
        }
    }

    pub fn to_turn(&self, action: ToyAction) -> ParsedTurn {
        let think = |t: &str| ThinkText::new(t).expect("fixed think text");
        match action {
            ToyAction::Ground(w) => {
                let (s, e) = self.window_frames(w);
                let g = GroundAction::new(s.into(), e.into(), self.coarse_frames).expect("window in range");
                ParsedTurn::grounding(think(&format!("zoom into part {w}")), g)
            }
            ToyAction::Answer(o) => {
                let a = AnswerAction::new(char::from(b'A' + o as u8).to_string()).expect("letter");
                ParsedTurn::answering(think("answer from what is visible"), a)
            }
        }
    }

    pub fn decode(&self, turn: &ParsedTurn) -> Option<ToyAction> {
        match &turn.action {
            TurnAction::Grounding { ground, .. } => (0..self.windows)
                .find(|&w| self.window_frames(w) == (ground.start_frame, ground.end_frame))
                .map(ToyAction::Ground),
            TurnAction::Answering { answer, .. } => {
                let o = (answer.option? as u8).checked_sub(b'A')? as usize;
                (o < self.options).then_some(ToyAction::Answer(o))
            }
            TurnAction::Malformed => None,
        }
    }

    fn percepts(view: &ViewSpec) -> impl Iterator<Item = Percept> + '_ {
        view.frames.iter().map(move |h| {
            h.parse::<EventHandle>()
                .unwrap_or(EventHandle::Background)
                .perceive(view.tokens_per_frame)
        })
    }

    fn letter_in(&self, view: &ViewSpec) -> Option<Option<usize>> {
        Self::percepts(view).find_map(|p| match p {
            Percept::Letter(c) => {
                let o = (c as u8 - b'A') as usize;
                Some((o < self.options).then_some(o))
            }
            _ => None,
        })
    }

    /// Summarizes an ordered list of views (coarse first).
    pub fn observe<'a>(&self, views: impl IntoIterator<Item = &'a ViewSpec>, self_confirm: bool) -> ToyObservation {
        let mut obs = ToyObservation {
            depth: 0,
            letter: None,
            hint: None,
            self_confirm,
        };
        for view in views {
            match view.grain {
                Grain::Fine => obs.depth += 1,
                Grain::Coarse => {
                    if obs.hint.is_none() && view.frame_count > 0 {
                        obs.hint = Self::percepts(view)
                            .position(|p| p != Percept::Nothing)
                            .map(|i| (i as u64 * u64::from(self.windows) / u64::from(view.frame_count)) as u32);
                    }
                }
            }
            if let Some(letter) = self.letter_in(view) {
                obs.letter = letter;
            }
        }
        obs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicyParams {
    pub theta: Vec<f64>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ToyPolicyParams {
    pub fn zeros(config: &ToyConfig) -> Self {
        Self {
            theta: vec![0.0; config.param_count()],
        }
    }

    pub fn logit(&self, config: &ToyConfig, obs: &ToyObservation, action: ToyAction) -> f64 {
        config.features(obs, action).iter().map(|&(i, v)| self.theta[i] * v).sum()
    }

    /// `(action, log pi(action | obs))` over the admissible actions.
    pub fn log_probs(&self, config: &ToyConfig, obs: &ToyObservation) -> Vec<(ToyAction, f64)> {
        let logits: Vec<(ToyAction, f64)> = config
            .actions(obs)
            .into_iter()
            .map(|a| (a, self.logit(config, obs, a)))
            .collect();
        let z = log_sum_exp(logits.iter().map(|p| p.1));
        logits.into_iter().map(|(a, l)| (a, l - z)).collect()
    }

    pub fn log_prob(&self, config: &ToyConfig, obs: &ToyObservation, action: ToyAction) -> Option<f64> {
        self.log_probs(config, obs)
            .into_iter()
            .find(|(a, _)| *a == action)
            .map(|(_, lp)| lp)
    }

    pub fn validate(&self, config: &ToyConfig) -> Result<(), String> {
        if self.theta.len() != config.param_count() {
            return Err(format!("expected {} parameters, got {}", config.param_count(), self.theta.len()));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub config: ToyConfig,
    pub params: ToyPolicyParams,
}

impl ToyPolicy {
    pub fn new(config: ToyConfig, params: ToyPolicyParams) -> Result<Self, PolicyError> {
        config.validate().map_err(PolicyError::InvalidRequest)?;
        params.validate(&config).map_err(PolicyError::InvalidRequest)?;
        Ok(Self { config, params })
    }

    pub fn untrained(config: ToyConfig) -> Result<Self, PolicyError> {
        Self::new(config, ToyPolicyParams::zeros(&config))
    }

    /// The observation and action behind each turn of `trajectory`.
    pub fn decode_trajectory(&self, trajectory: &Trajectory) -> Result<Vec<(ToyObservation, ToyAction)>, PolicyError> {
        let mut views: Vec<&ViewSpec> = vec![&trajectory.initial_view];
        let mut out = Vec::with_capacity(trajectory.turns.len());
        for (k, turn) in trajectory.turns.iter().enumerate() {
            let obs = self.config.observe(views.iter().copied(), false);
            let action = self
                .config
                .decode(&turn.parsed)
                .ok_or_else(|| PolicyError::NotInSupport(format!("turn {k}: {:?}", turn.parsed.raw)))?;
            out.push((obs, action));
            if let Some(v) = &turn.injected_view {
                views.push(v);
            }
        }
        Ok(out)
    }

    fn choose(&self, log_probs: &[(ToyAction, f64)], temperature: f64, seed: u64) -> (ToyAction, f64) {
        if temperature <= 0.0 {
            let mut best = log_probs[0];
            for &p in &log_probs[1..] {
                if p.1 > best.1 {
                    best = p;
                }
            }
            return best;
        }
        let z = log_sum_exp(log_probs.iter().map(|p| p.1 / temperature));
        let mut u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
        for &p in log_probs {
            u -= (p.1 / temperature - z).exp();
            if u < 0.0 {
                return p;
            }
        }
        *log_probs.last().expect("non-empty action set")
    }
}

impl Policy for ToyPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Toy
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            reports_logprobs: true,
            scores_trajectories: true,
        }
    }

    /// Samples from the tempered softmax. The reported log-prob is always the
    /// untempered model probability of the chosen action.
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, PolicyError> {
        if request.messages.is_empty() {
            return Err(PolicyError::InvalidRequest("empty context".into()));
        }
        let self_confirm = request.is_self_confirm();
        let obs = self.config.observe(request.views(), self_confirm);
        let lps = self.params.log_probs(&self.config, &obs);
        let temperature = if self_confirm { 0.0 } else { request.sampling.temperature };
        let (action, lp) = self.choose(&lps, temperature, request.seed);
        Ok(GenerationResponse {
            text: self.config.render(action),
            total_logprob: Some(lp),
            token_count: 1,
        })
    }

    fn score_trajectory(&self, trajectory: &Trajectory) -> Result<f64, PolicyError> {
        let mut total = 0.0;
        for (obs, action) in self.decode_trajectory(trajectory)? {
            total += self
                .params
                .log_prob(&self.config, &obs, action)
                .ok_or_else(|| PolicyError::NotInSupport(format!("{action:?}")))?;
        }
        Ok(total)
    }
}
