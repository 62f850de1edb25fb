//! Synthetic corpora with planted signal, and the sentiment lexicon that
//! stands in for a language model's prior knowledge of review wording.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::ReviewRecord;
use crate::{seeded_rng, Error, Result, Rng};

const ENGLISH: [[&str; 10]; 5] = [
    ["terrible", "awful", "horrible", "useless", "broken", "garbage", "worst", "defective", "junk", "disgusting"],
    ["disappointing", "poor", "flimsy", "mediocre", "subpar", "lacking", "weak", "annoying", "faulty", "overpriced"],
    ["okay", "average", "decent", "fine", "acceptable", "ordinary", "passable", "adequate", "middling", "unremarkable"],
    ["good", "nice", "solid", "pleasant", "reliable", "sturdy", "comfortable", "handy", "useful", "satisfying"],
    ["excellent", "amazing", "perfect", "fantastic", "outstanding", "superb", "wonderful", "brilliant", "flawless", "incredible"],
];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ei"];

/// Sentiment words grouped by rating class 1..=5.
#[derive(Clone, Debug, PartialEq)]
pub struct SentimentLexicon {
    classes: [Vec<String>; 5],
    index: HashMap<String, u8>,
}

impl SentimentLexicon {
    /// Ten common English words per class.
    pub fn english() -> Self {
        Self::from_classes(ENGLISH.map(|ws| ws.iter().map(|w| w.to_string()).collect()))
    }

    /// The English words plus invented ones, `words_per_class` in total per class.
    pub fn generated(words_per_class: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut classes = ENGLISH.map(|ws| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>());
        let mut seen: BTreeSet<String> = classes.iter().flatten().cloned().collect();
        for class in &mut classes {
            while class.len() < words_per_class {
                let syllables = rng.gen_range(2..=3);
                let word: String = (0..syllables)
                    .map(|_| format!("{}{}", ONSETS.choose(&mut rng).unwrap(), VOWELS.choose(&mut rng).unwrap()))
                    .collect::<String>()
                    + ["x", "n", "th", "sk"].choose(&mut rng).unwrap();
                if seen.insert(word.clone()) {
                    class.push(word);
                }
            }
        }
        Self::from_classes(classes)
    }

    fn from_classes(classes: [Vec<String>; 5]) -> Self {
        let index = classes
            .iter()
            .enumerate()
            .flat_map(|(c, ws)| ws.iter().map(move |w| (w.clone(), c as u8 + 1)))
            .collect();
        Self { classes, index }
    }

    /// Rating class of a lowercase token.
    pub fn class_of(&self, token: &str) -> Option<u8> {
        self.index.get(token).copied()
    }

    pub fn words(&self, class: u8) -> &[String] {
        &self.classes[class as usize - 1]
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

const NOUNS: [&str; 8] = ["jacket", "watch", "bag", "scarf", "lamp", "kettle", "shoe", "belt"];
const ASPECTS: [&str; 8] = ["fit", "material", "stitching", "color", "finish", "size", "packaging", "strap"];
const OPENERS: [&str; 5] = [
    "i ordered this {noun} last month",
    "bought the {noun} as a gift",
    "this {noun} arrived on time",
    "picked up this {noun} after reading about it",
    "my second {noun} from this shop",
];
const CUE_FRAMES: [&str; 4] = ["the {aspect} is {w}", "honestly the {aspect} feels {w}", "overall {w}", "i found the {aspect} {w}"];

/// How review text carries the rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    /// Sentiment words per review.
    pub cue_words: usize,
    /// Probability that a sentiment word comes from the true rating's class.
    pub cue_accuracy: f64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            cue_words: 2,
            cue_accuracy: 0.85,
        }
    }
}

/// Review text whose sentiment words point at `rating` with probability `cue_accuracy` each.
pub fn review_text(rating: u8, lexicon: &SentimentLexicon, cfg: &TextConfig, rng: &mut Rng) -> String {
    let noun = NOUNS.choose(rng).unwrap();
    let mut parts = vec![OPENERS.choose(rng).unwrap().replace("{noun}", noun)];
    for _ in 0..cfg.cue_words {
        let class = if rng.gen::<f64>() < cfg.cue_accuracy {
            rating
        } else {
            let others: Vec<u8> = (1..=5).filter(|&c| c != rating).collect();
            *others.choose(rng).unwrap()
        };
        let word = lexicon.words(class).choose(rng).unwrap();
        parts.push(
            CUE_FRAMES
                .choose(rng)
                .unwrap()
                .replace("{aspect}", ASPECTS.choose(rng).unwrap())
                .replace("{w}", word),
        );
    }
    parts.join(". ") + "."
}

/// Draws a category from `(rating, probability)` pairs.
fn draw_rating(distribution: &[(u8, f64)], rng: &mut Rng) -> u8 {
    let u: f64 = rng.gen::<f64>() * distribution.iter().map(|d| d.1).sum::<f64>();
    let mut acc = 0.0;
    for &(r, p) in distribution {
        acc += p;
        if u < acc {
            return r;
        }
    }
    distribution.last().map(|d| d.0).unwrap_or(5)
}

/// Long-tail corpus for reward experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongTailConfig {
    pub reviews: usize,
    /// `(rating, probability)`; defaults to 90% fives.
    pub distribution: Vec<(u8, f64)>,
    pub text: TextConfig,
    pub seed: u64,
}

impl Default for LongTailConfig {
    fn default() -> Self {
        Self {
            reviews: 2000,
            distribution: vec![(1, 0.04), (2, 0.02), (3, 0.02), (4, 0.02), (5, 0.90)],
            text: TextConfig::default(),
            seed: 0,
        }
    }
}

pub fn long_tail_corpus(cfg: &LongTailConfig, lexicon: &SentimentLexicon) -> Result<Vec<ReviewRecord>> {
    if cfg.distribution.iter().any(|&(r, p)| !(1..=5).contains(&r) || !(p >= 0.0)) {
        return Err(Error::Config("distribution needs ratings 1..=5 with non-negative mass".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    Ok((0..cfg.reviews)
        .map(|n| {
            let rating = draw_rating(&cfg.distribution, &mut rng);
            ReviewRecord {
                user_id: format!("u{}", rng.gen_range(0..cfg.reviews / 5 + 1)),
                item_id: format!("i{}", rng.gen_range(0..cfg.reviews / 5 + 1)),
                rating: rating as f64,
                review_text: review_text(rating, lexicon, &cfg.text, &mut rng),
                timestamp: Some(n as i64),
                ordinal: n as u64,
                item_text: None,
            }
        })
        .collect())
}

/// Ratings from latent user/item factors, with review text carrying the rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub min_per_user: usize,
    pub max_per_user: usize,
    pub latent_dim: usize,
    pub global_mean: f64,
    pub user_bias_std: f64,
    pub item_bias_std: f64,
    pub factor_std: f64,
    pub noise_std: f64,
    pub text: TextConfig,
    /// Size of each sentiment class in the lexicon.
    pub words_per_class: usize,
    pub lexicon_seed: u64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 300,
            items: 150,
            min_per_user: 8,
            max_per_user: 20,
            latent_dim: 4,
            global_mean: 3.4,
            user_bias_std: 0.7,
            item_bias_std: 0.7,
            factor_std: 0.5,
            noise_std: 0.3,
            text: TextConfig::default(),
            words_per_class: 400,
            lexicon_seed: 7,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn lexicon(&self) -> SentimentLexicon {
        SentimentLexicon::generated(self.words_per_class, self.lexicon_seed)
    }
}

const TIERS: [&str; 3] = ["budget", "standard", "premium"];

pub fn planted_corpus(cfg: &PlantedConfig, lexicon: &SentimentLexicon) -> Result<Vec<ReviewRecord>> {
    if cfg.users == 0 || cfg.items == 0 || cfg.min_per_user == 0 || cfg.min_per_user > cfg.max_per_user {
        return Err(Error::Config("planted corpus needs users, items and 0 < min_per_user <= max_per_user".into()));
    }
    if cfg.max_per_user > cfg.items {
        return Err(Error::Config("max_per_user cannot exceed the item count".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let normal = |std: f64| Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()));
    let (ub, ib, fac, noise) = (
        normal(cfg.user_bias_std)?,
        normal(cfg.item_bias_std)?,
        normal(cfg.factor_std)?,
        normal(cfg.noise_std)?,
    );
    let user_bias: Vec<f64> = (0..cfg.users).map(|_| ub.sample(&mut rng)).collect();
    let item_bias: Vec<f64> = (0..cfg.items).map(|_| ib.sample(&mut rng)).collect();
    let mut factors = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..cfg.latent_dim).map(|_| fac.sample(&mut rng)).collect())
            .collect()
    };
    let user_f = factors(cfg.users);
    let item_f = factors(cfg.items);
    let item_text: Vec<String> = item_bias
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let tier = if b < -0.4 { 0 } else if b > 0.4 { 2 } else { 1 };
            format!("{} {} number {i}", TIERS[tier], NOUNS[i % NOUNS.len()])
        })
        .collect();

    let mut events = Vec::new();
    let items: Vec<usize> = (0..cfg.items).collect();
    for u in 0..cfg.users {
        let n = rng.gen_range(cfg.min_per_user..=cfg.max_per_user);
        for &i in items.choose_multiple(&mut rng, n) {
            let dot: f64 = user_f[u].iter().zip(&item_f[i]).map(|(a, b)| a * b).sum();
            let raw = cfg.global_mean + user_bias[u] + item_bias[i] + dot + noise.sample(&mut rng);
            let rating = raw.round().clamp(1.0, 5.0) as u8;
            events.push((rng.gen::<u32>(), u, i, rating));
        }
    }
    // Interleave users in time.
    events.sort();
    Ok(events
        .into_iter()
        .enumerate()
        .map(|(n, (_, u, i, rating))| ReviewRecord {
            user_id: format!("u{u}"),
            item_id: format!("i{i}"),
            rating: rating as f64,
            review_text: review_text(rating, lexicon, &cfg.text, &mut rng),
            timestamp: Some(n as i64),
            ordinal: n as u64,
            item_text: Some(item_text[i].clone()),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_is_deterministic_and_disjoint() {
        let a = SentimentLexicon::generated(50, 3);
        assert_eq!(a, SentimentLexicon::generated(50, 3));
        assert_eq!(a.len(), 250);
        for c in 1..=5u8 {
            assert_eq!(a.words(c).len(), 50);
            assert!(a.words(c).iter().all(|w| a.class_of(w) == Some(c)));
        }
        assert_eq!(a.class_of("excellent"), Some(5));
    }

    #[test]
    fn perfect_cues_match_rating() {
        let lex = SentimentLexicon::english();
        let cfg = TextConfig { cue_words: 3, cue_accuracy: 1.0 };
        let mut rng = seeded_rng(1);
        for r in 1..=5u8 {
            let text = review_text(r, &lex, &cfg, &mut rng);
            let classes: Vec<u8> = text
                .split(|c: char| !c.is_alphanumeric())
                .filter_map(|t| lex.class_of(t))
                .collect();
            assert_eq!(classes, vec![r; 3], "{text}");
        }
    }

    #[test]
    fn long_tail_mass() {
        let recs = long_tail_corpus(&LongTailConfig::default(), &SentimentLexicon::english()).unwrap();
        let fives = recs.iter().filter(|r| r.rating == 5.0).count() as f64 / recs.len() as f64;
        assert!((fives - 0.9).abs() < 0.03, "{fives}");
    }

    #[test]
    fn planted_corpus_shape() {
        let cfg = PlantedConfig { users: 20, items: 30, ..PlantedConfig::default() };
        let recs = planted_corpus(&cfg, &cfg.lexicon()).unwrap();
        assert_eq!(recs, planted_corpus(&cfg, &cfg.lexicon()).unwrap());
        let mut per_user: HashMap<&str, usize> = HashMap::new();
        for r in &recs {
            *per_user.entry(&r.user_id).or_default() += 1;
            assert!((1.0..=5.0).contains(&r.rating));
        }
        assert_eq!(per_user.len(), 20);
        assert!(per_user.values().all(|&n| (8..=20).contains(&n)));
        let pairs: BTreeSet<(&str, &str)> = recs.iter().map(|r| (r.user_id.as_str(), r.item_id.as_str())).collect();
        assert_eq!(pairs.len(), recs.len());
    }
}
