use super::{DataError, Sample, Source};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Cold start on labeled grounded-QA data.
    Stage1,
    /// Everything.
    Stage2,
}

/// Which samples a training stage may draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub stage: Stage,
    pub admitted_sources: BTreeSet<Source>,
    pub labeled_only: bool,
}

impl CurriculumStage {
    /// Labeled NExT-GQA samples only.
    pub fn stage1() -> Self {
        Self::stage1_from([Source::NextGqa])
    }

    /// Labeled samples from the given sources (e.g. synthetic corpora).
    pub fn stage1_from(sources: impl IntoIterator<Item = Source>) -> Self {
        Self {
            stage: Stage::Stage1,
            admitted_sources: sources.into_iter().collect(),
            labeled_only: true,
        }
    }

    pub fn stage2() -> Self {
        Self {
            stage: Stage::Stage2,
            admitted_sources: Source::ALL.into_iter().collect(),
            labeled_only: false,
        }
    }

    pub fn admits(&self, sample: &Sample) -> bool {
        self.admitted_sources.contains(&sample.source) && (!self.labeled_only || sample.is_labeled())
    }
}

/// Relative draw weights for the per-epoch shuffle. Equal weights give a
/// uniform permutation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixWeights {
    pub labeled: f64,
    pub unlabeled: f64,
}

impl Default for MixWeights {
    fn default() -> Self {
        Self {
            labeled: 1.0,
            unlabeled: 1.0,
        }
    }
}

/// Indices into the sample slice handed to [`curriculum_batches`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub epoch: u64,
    pub index: usize,
    pub members: Vec<usize>,
}

/// Endless, deterministic stream of batches. Each epoch is a permutation of
/// the admitted samples cut into consecutive batches; the last batch of an
/// epoch may be short.
#[derive(Debug, Clone)]
pub struct CurriculumStream {
    admitted: Vec<usize>,
    labeled: Vec<bool>,
    weights: MixWeights,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    batch_index: usize,
}

pub fn curriculum_batches(
    stage: &CurriculumStage,
    samples: &[Sample],
    batch_size: usize,
    seed: u64,
) -> Result<CurriculumStream, DataError> {
    CurriculumStream::new(stage, samples, batch_size, seed, MixWeights::default())
}

impl CurriculumStream {
    pub fn new(
        stage: &CurriculumStage,
        samples: &[Sample],
        batch_size: usize,
        seed: u64,
        weights: MixWeights,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::ZeroBatch);
        }
        let admitted: Vec<usize> = (0..samples.len()).filter(|&i| stage.admits(&samples[i])).collect();
        if admitted.is_empty() {
            return Err(DataError::NothingAdmitted(stage.stage));
        }
        let labeled = admitted.iter().map(|&i| samples[i].is_labeled()).collect();
        let mut stream = Self {
            admitted,
            labeled,
            weights,
            batch_size,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            batch_index: 0,
        };
        stream.shuffle_epoch();
        Ok(stream)
    }

    pub fn admitted_count(&self) -> usize {
        self.admitted.len()
    }

    fn shuffle_epoch(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        // Weighted random permutation: sort by u^(1/w), largest first.
        let mut keyed: Vec<(f64, usize)> = self
            .admitted
            .iter()
            .zip(&self.labeled)
            .map(|(&idx, &lab)| {
                let w = if lab { self.weights.labeled } else { self.weights.unlabeled };
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                (u.ln() / w.max(f64::MIN_POSITIVE), idx)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        self.order = keyed.into_iter().map(|(_, i)| i).collect();
        self.cursor = 0;
        self.batch_index = 0;
    }
}

impl Iterator for CurriculumStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.shuffle_epoch();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = Batch {
            epoch: self.epoch,
            index: self.batch_index,
            members: self.order[self.cursor..end].to_vec(),
        };
        self.cursor = end;
        self.batch_index += 1;
        Some(batch)
    }
}
