use std::sync::Arc;

use rand::Rng as _;

use super::{Policy, Sampled};
use crate::nn::Tensor2D;
use crate::reward::{parse_cot, render_cot, FormatSchema};
use crate::synth::SentimentLexicon;
use crate::{Error, Result, Rng, Scalar};

/// Number of rating cells: 1.0, 1.5, ..., 5.0.
pub const GRID_CELLS: usize = 9;
/// Sentiment-class histogram (5) plus a bias.
pub(crate) const FEATURES: usize = 6;

const CELL_PHRASES: [&str; GRID_CELLS] = [
    "the reviewer is furious and calls the purchase a complete failure",
    "the reviewer is very unhappy and regrets the purchase",
    "the reviewer is disappointed and lists several real problems",
    "the reviewer leans negative with a few mild positives",
    "the reviewer is lukewarm and finds the experience average",
    "the reviewer leans positive with a few minor complaints",
    "the reviewer is pleased and would likely buy again",
    "the reviewer is very happy with only a small reservation",
    "the reviewer is delighted and praises the product without reservation",
];

const FILLER: &str = "the wording, the specific details and the overall tone of the review point the same way";

/// The rating grid values.
pub fn rating_grid() -> [f64; GRID_CELLS] {
    std::array::from_fn(|i| 1.0 + 0.5 * i as f64)
}

fn grid_index(rating: f64) -> Option<usize> {
    let twice = rating * 2.0;
    let idx = twice.round();
    ((twice - idx).abs() < 1e-9 && (2.0..=10.0).contains(&idx)).then(|| idx as usize - 2)
}

/// Normalised sentiment-class histogram of the prompt's words, followed by a bias of 1.
pub fn prompt_features(text: &str, lexicon: &SentimentLexicon) -> [f64; FEATURES] {
    let mut counts = [0.0; FEATURES];
    let mut total = 0.0;
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        if let Some(class) = lexicon.class_of(&token.to_lowercase()) {
            counts[class as usize - 1] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        for c in &mut counts[..5] {
            *c /= total;
        }
    }
    counts[5] = 1.0;
    counts
}

/// Categorical policy over the rating grid, conditioned on lexicon features
/// of the review and emitting templated rationales.
#[derive(Clone, Debug)]
pub struct ToyTemplatePolicy<T> {
    weights: Tensor2D<T>,
    lexicon: Arc<SentimentLexicon>,
    analysis_len: usize,
}

impl<T: Scalar> ToyTemplatePolicy<T> {
    /// Uniform policy (all-zero logits).
    pub fn new(lexicon: Arc<SentimentLexicon>, analysis_len: usize) -> Self {
        Self {
            weights: Tensor2D::zeros(FEATURES, GRID_CELLS),
            lexicon,
            analysis_len,
        }
    }

    pub fn analysis_len(&self) -> usize {
        self.analysis_len
    }

    pub fn lexicon(&self) -> &Arc<SentimentLexicon> {
        &self.lexicon
    }

    pub fn weights(&self) -> &Tensor2D<T> {
        &self.weights
    }

    fn features(&self, prompt: &str) -> [T; FEATURES] {
        prompt_features(prompt, &self.lexicon).map(T::of)
    }

    /// Softmax over grid cells.
    pub fn probabilities(&self, prompt: &str) -> Vec<T> {
        let logits = self.weights.vec_mul(&self.features(prompt));
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z = exps.iter().copied().sum::<T>();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// The templated rationale for one grid cell.
    pub fn render(&self, cell: usize) -> String {
        render_cot(&analysis_text(cell, self.analysis_len), rating_grid()[cell])
    }

    fn cell_of(&self, output: &str) -> Option<usize> {
        parse_cot(output, &FormatSchema::default()).and_then(|p| grid_index(p.rating))
    }
}

/// Analysis text for `cell`, padded with neutral filler and cut to `len` characters.
fn analysis_text(cell: usize, len: usize) -> String {
    let mut text = CELL_PHRASES[cell].to_string();
    while text.len() < len {
        text.push_str(", ");
        text.push_str(FILLER);
    }
    text.truncate(len.max(CELL_PHRASES[cell].len()));
    text.trim_end_matches([' ', ',']).to_string()
}

impl<T: Scalar> Policy<T> for ToyTemplatePolicy<T> {
    fn sample(&self, prompt: &str, count: usize, rng: &mut Rng) -> Vec<Sampled<T>> {
        let probs = self.probabilities(prompt);
        (0..count)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut cell = GRID_CELLS - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p.as_f64();
                    if u < acc {
                        cell = i;
                        break;
                    }
                }
                Sampled {
                    output: self.render(cell),
                    log_prob: probs[cell].ln(),
                }
            })
            .collect()
    }

    /// Log-softmax of the output's grid cell; `-inf` for outputs off the grid.
    fn log_prob(&self, prompt: &str, output: &str) -> T {
        match self.cell_of(output) {
            Some(cell) => self.probabilities(prompt)[cell].ln(),
            None => T::neg_infinity(),
        }
    }

    fn parameters(&self) -> Vec<T> {
        self.weights.data().to_vec()
    }

    fn set_parameters(&mut self, params: &[T]) -> Result<()> {
        if params.len() != FEATURES * GRID_CELLS {
            return Err(Error::Shape(format!(
                "toy policy takes {} parameters, got {}",
                FEATURES * GRID_CELLS,
                params.len()
            )));
        }
        self.weights = Tensor2D::from_vec(FEATURES, GRID_CELLS, params.to_vec())?;
        Ok(())
    }

    /// `x ⊗ (onehot(cell) − π)`.
    fn grad_log_prob(&self, prompt: &str, output: &str) -> Option<Vec<T>> {
        let cell = self.cell_of(output)?;
        let x = self.features(prompt);
        let probs = self.probabilities(prompt);
        let mut g = Vec::with_capacity(FEATURES * GRID_CELLS);
        for xf in x {
            for (j, &p) in probs.iter().enumerate() {
                let indicator = if j == cell { T::one() } else { T::zero() };
                g.push(xf * (indicator - p));
            }
        }
        Some(g)
    }

    fn decode(&self, prompt: &str) -> String {
        let probs = self.probabilities(prompt);
        let best = (0..GRID_CELLS)
            .fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        self.render(best)
    }
}
