//! Metrics for generated motions against a labelled dataset.
//!
//! Classes are keyed by sentence. Trajectories are compared flattened, in
//! Euclidean distance.

use serde::{Deserialize, Serialize};

use crate::data::{ActionSequence, DatasetRecord};

/// Mean trajectory of every sentence in the dataset, in first-seen order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMeans {
    pub sentences: Vec<String>,
    pub means: Vec<Vec<f64>>,
    pub members: Vec<Vec<Vec<f64>>>,
}

impl ClassMeans {
    /// Records whose trajectories differ in length from the first are skipped.
    pub fn from_records(records: &[DatasetRecord]) -> Self {
        let mut sentences: Vec<String> = Vec::new();
        let mut members: Vec<Vec<Vec<f64>>> = Vec::new();
        let len = records.first().map(|r| r.action.flatten().len()).unwrap_or(0);
        for r in records {
            let flat = r.action.flatten();
            if flat.len() != len {
                continue;
            }
            let key = r.sentence_text();
            match sentences.iter().position(|s| *s == key) {
                Some(i) => members[i].push(flat),
                None => {
                    sentences.push(key);
                    members.push(vec![flat]);
                }
            }
        }
        let means = members
            .iter()
            .map(|m| {
                let mut acc = vec![0.0; len];
                for v in m {
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += x;
                    }
                }
                acc.iter().map(|a| a / m.len() as f64).collect()
            })
            .collect();
        Self {
            sentences,
            means,
            members,
        }
    }

    pub fn class_of(&self, sentence: &str) -> Option<usize> {
        self.sentences.iter().position(|s| s == sentence)
    }

    /// Index of the nearest class mean.
    pub fn nearest(&self, trajectory: &[f64]) -> usize {
        self.means
            .iter()
            .enumerate()
            .map(|(i, m)| (i, l2(trajectory, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean L2 distance over all unordered pairs; 0 for fewer than two samples.
pub fn mean_pairwise_distance(samples: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            total += l2(&samples[i], &samples[j]);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub sentence: String,
    pub samples: usize,
    pub accuracy: f64,
    pub diversity: f64,
    pub proximity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub diversity: f64,
    pub proximity: f64,
    pub classes: Vec<ClassReport>,
}

/// Scores generations, given as `(sentence, samples)` per class.
///
/// Accuracy counts samples whose nearest class mean is their own sentence's.
/// Diversity is the mean pairwise distance within a sentence's samples.
/// Proximity is the mean distance to the nearest training sample of the
/// same sentence.
pub fn evaluate_generations(records: &[DatasetRecord], generations: &[(String, Vec<ActionSequence>)]) -> EvalReport {
    let means = ClassMeans::from_records(records);
    let mut classes = Vec::with_capacity(generations.len());
    let (mut correct, mut total) = (0usize, 0usize);
    for (sentence, samples) in generations {
        let flat: Vec<Vec<f64>> = samples.iter().map(ActionSequence::flatten).collect();
        let own = means.class_of(sentence);
        let hits = flat.iter().filter(|f| Some(means.nearest(f)) == own).count();
        let proximity = match own {
            Some(c) if !flat.is_empty() => {
                flat.iter()
                    .map(|f| means.members[c].iter().map(|m| l2(f, m)).fold(f64::INFINITY, f64::min))
                    .sum::<f64>()
                    / flat.len() as f64
            }
            _ => f64::NAN,
        };
        correct += hits;
        total += flat.len();
        classes.push(ClassReport {
            sentence: sentence.clone(),
            samples: flat.len(),
            accuracy: ratio(hits, flat.len()),
            diversity: mean_pairwise_distance(&flat),
            proximity,
        });
    }
    let mean_of = |f: fn(&ClassReport) -> f64| {
        if classes.is_empty() {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / classes.len() as f64
        }
    };
    EvalReport {
        accuracy: ratio(correct, total),
        diversity: mean_of(|c| c.diversity),
        proximity: mean_of(|c| c.proximity),
        classes,
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
