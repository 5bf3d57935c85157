//! Diagnostics over captions and score tables: number-presence rates,
//! score histograms, report deltas, and a labeled synthetic corpus for
//! measuring filters at desk scale.

use std::collections::HashMap;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::datamodel::{EmbeddingMatrix, Sample, Shard};
use crate::embedding::{toy_embed, Providers, ToyProvider};
use crate::filters::{evaluate, FilterContext, FilterError, FilterResult, FilterSpec};
use crate::masker::{contains_digit_token, MaskRules};
use crate::scoring::{Channel, ScoreTable, SENTINEL};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("bad histogram bins: {0}")]
    BadBinSpec(String),
    #[error("reports use different channels ({before} vs {after})")]
    ChannelMismatch { before: Channel, after: Channel },
    #[error("reports use different histogram bins")]
    BinMismatch,
    #[error("no quality label for uid {uid:?}")]
    MissingLabel { uid: String },
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumberPresence {
    pub with_number: usize,
    pub total: usize,
    /// `with_number / total`, or 0 for an empty input.
    pub rate: f64,
}

pub fn number_presence<'a, I>(captions: I) -> NumberPresence
where
    I: IntoIterator<Item = &'a str>,
{
    let (mut with_number, mut total) = (0usize, 0usize);
    for c in captions {
        total += 1;
        with_number += contains_digit_token(c) as usize;
    }
    let rate = if total == 0 {
        0.0
    } else {
        with_number as f64 / total as f64
    };
    NumberPresence {
        with_number,
        total,
        rate,
    }
}

/// Fraction of samples whose caption has a digit-bearing token.
pub fn number_presence_rate(samples: &[Sample]) -> f64 {
    number_presence(samples.iter().map(|s| s.caption.as_str())).rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub bin_width: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec {
            bin_width: 0.01,
            lo: -1.0,
            hi: 1.0,
        }
    }
}

const MAX_BINS: usize = 10_000_000;

impl BinSpec {
    /// Enough half-open bins `[lo + i·w, lo + (i+1)·w)` to cover `[lo, hi]`
    /// including `hi` itself.
    pub fn bin_count(&self) -> Result<usize, StatsError> {
        let BinSpec { bin_width, lo, hi } = *self;
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(StatsError::BadBinSpec(format!(
                "bin width {bin_width} must be positive and finite"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(StatsError::BadBinSpec(format!(
                "range [{lo}, {hi}] is empty or not finite"
            )));
        }
        let span = (hi - lo) / bin_width;
        let snapped = if (span - span.round()).abs() <= 1e-9 * span.max(1.0) {
            span.round()
        } else {
            span.floor()
        };
        let n = snapped as usize + 1;
        if n > MAX_BINS {
            return Err(StatsError::BadBinSpec(format!("{n} bins is too many")));
        }
        Ok(n)
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.bin_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub start: f64,
    pub end: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: BinSpec,
    pub bins: Vec<Bin>,
    pub sentinel_count: u64,
    /// Finite, non-sentinel scores outside `[lo, hi]`.
    pub out_of_range: u64,
}

impl Histogram {
    pub fn empty(spec: BinSpec) -> Result<Self, StatsError> {
        let n = spec.bin_count()?;
        let bins = (0..n)
            .map(|i| Bin {
                start: spec.edge(i),
                end: spec.edge(i + 1),
                count: 0,
            })
            .collect();
        Ok(Histogram {
            spec,
            bins,
            sentinel_count: 0,
            out_of_range: 0,
        })
    }

    pub fn add(&mut self, score: f32) {
        if score == SENTINEL {
            self.sentinel_count += 1;
            return;
        }
        let s = score as f64;
        let BinSpec { bin_width, lo, hi } = self.spec;
        if !(s >= lo && s <= hi) {
            self.out_of_range += 1;
            return;
        }
        let last = self.bins.len() - 1;
        let mut i = (((s - lo) / bin_width).floor() as usize).min(last);
        // Agree exactly with the edge comparisons despite rounding in the division.
        while i > 0 && s < self.spec.edge(i) {
            i -= 1;
        }
        while i < last && s >= self.spec.edge(i + 1) {
            i += 1;
        }
        self.bins[i].count += 1;
    }

    pub fn binned_count(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Adds another histogram over identical bins.
    pub fn merge(&mut self, other: &Histogram) -> Result<(), StatsError> {
        if self.spec != other.spec {
            return Err(StatsError::BinMismatch);
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.count += b.count;
        }
        self.sentinel_count += other.sentinel_count;
        self.out_of_range += other.out_of_range;
        Ok(())
    }

    /// `bin_start,bin_end,count` with edges rounded for display.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_start,bin_end,count")?;
        for b in &self.bins {
            writeln!(w, "{},{},{}", tidy(b.start), tidy(b.end), b.count)?;
        }
        w.flush()
    }
}

/// Rounds away float noise from computed bin edges (`0.10000000000000009`).
pub fn tidy(x: f64) -> f64 {
    let r = (x * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn score_histogram(scores: &[f32], spec: BinSpec) -> Result<Histogram, StatsError> {
    let mut h = Histogram::empty(spec)?;
    for &s in scores {
        h.add(s);
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset_label: String,
    pub channel: Channel,
    pub sample_count: usize,
    pub num_presence: NumberPresence,
    pub histogram: Histogram,
}

impl Report {
    pub fn build(
        label: impl Into<String>,
        samples: &[Sample],
        scores: &ScoreTable,
        bins: BinSpec,
    ) -> Result<Report, StatsError> {
        let s: Vec<f32> = scores.scores().collect();
        Ok(Report {
            dataset_label: label.into(),
            channel: scores.channel,
            sample_count: samples.len(),
            num_presence: number_presence(samples.iter().map(|s| s.caption.as_str())),
            histogram: score_histogram(&s, bins)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinDelta {
    pub start: f64,
    pub end: f64,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub before_label: String,
    pub after_label: String,
    pub channel: Channel,
    pub sample_count_delta: i64,
    /// `after − before`, as a fraction.
    pub num_presence_rate_delta: f64,
    /// Same delta in percentage points.
    pub num_presence_points_delta: f64,
    pub sentinel_delta: i64,
    pub bins: Vec<BinDelta>,
}

pub fn compare_reports(before: &Report, after: &Report) -> Result<ReportDelta, StatsError> {
    if before.channel != after.channel {
        return Err(StatsError::ChannelMismatch {
            before: before.channel,
            after: after.channel,
        });
    }
    if before.histogram.spec != after.histogram.spec {
        return Err(StatsError::BinMismatch);
    }
    let rate = after.num_presence.rate - before.num_presence.rate;
    Ok(ReportDelta {
        before_label: before.dataset_label.clone(),
        after_label: after.dataset_label.clone(),
        channel: before.channel,
        sample_count_delta: after.sample_count as i64 - before.sample_count as i64,
        num_presence_rate_delta: rate,
        num_presence_points_delta: rate * 100.0,
        sentinel_delta: after.histogram.sentinel_count as i64
            - before.histogram.sentinel_count as i64,
        bins: before
            .histogram
            .bins
            .iter()
            .zip(&after.histogram.bins)
            .map(|(b, a)| BinDelta {
                start: b.start,
                end: b.end,
                delta: a.count as i64 - b.count as i64,
            })
            .collect(),
    })
}

/// Parameters of the labeled synthetic corpus.
///
/// Every sample has a latent clean caption; its image vector is the toy
/// embedding of that caption (plus any text rendered into the image) with
/// Gaussian noise. Good samples are captioned with the clean caption, bad
/// ones with a corrupted copy. A `contamination_rate` share of all samples
/// gets digit tokens and a bracketed aside injected into the caption, and a
/// `rendered_text_rate` share of those also shows the injected text in the
/// image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    /// Seed of the toy embedder that image vectors are derived with; score
    /// with `ToyProvider::new(dim, embed_seed)`.
    pub embed_seed: u64,
    pub contamination_rate: f64,
    /// Share of samples labeled `quality=good` (assigned by count).
    pub good_fraction: f64,
    /// Per-token replacement probability when corrupting a bad caption.
    pub mismatch_rate: f64,
    /// Expected L2 norm of the noise added to unit image vectors.
    pub image_noise: f64,
    pub rendered_text_rate: f64,
    pub vocab_size: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n: 1000,
            dim: 128,
            seed: 0,
            embed_seed: 7,
            contamination_rate: 0.5,
            good_fraction: 0.3,
            mismatch_rate: 0.7,
            image_noise: 1.0,
            rendered_text_rate: 0.5,
            vocab_size: 2000,
            min_words: 4,
            max_words: 12,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), StatsError> {
        let bad = |m: String| Err(StatsError::InvalidSpec(m));
        for (name, v) in [
            ("contamination_rate", self.contamination_rate),
            ("good_fraction", self.good_fraction),
            ("mismatch_rate", self.mismatch_rate),
            ("rendered_text_rate", self.rendered_text_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if !(self.image_noise >= 0.0 && self.image_noise.is_finite()) {
            return bad("image_noise must be finite and non-negative".into());
        }
        if self.vocab_size < 2 || self.min_words == 0 || self.min_words > self.max_words {
            return bad("need vocab_size >= 2 and 1 <= min_words <= max_words".into());
        }
        Ok(())
    }
}

fn make_vocab(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    const ONSETS: &[&str] = &[
        "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br",
        "st", "tr", "ch", "sh",
    ];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    let mut seen = std::collections::HashSet::with_capacity(size);
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let syllables = rng.gen_range(1..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Digit-bearing tokens plus a bracketed aside, as separate token lists.
fn contamination(rng: &mut ChaCha8Rng, vocab: &[String]) -> (Vec<String>, Vec<String>) {
    let n_digit = rng.gen_range(1..=2);
    let digit_tokens = (0..n_digit)
        .map(|_| match rng.gen_range(0..6) {
            0 => format!("S{}", rng.gen_range(1..100)),
            1 => format!("{}", rng.gen_range(1950..2024)),
            2 => format!("IMG_{:04}", rng.gen_range(0..10000)),
            3 => format!("{}x{}", rng.gen_range(1..20), rng.gen_range(1..20)),
            4 => format!("No.{}", rng.gen_range(1..50)),
            _ => format!("{}%", rng.gen_range(5..95)),
        })
        .collect();
    let a = rng.gen_range(1..50);
    let span = match rng.gen_range(0..3) {
        0 => format!("(View {a} of {})", a + rng.gen_range(0..50)),
        1 => format!("[{} {}]", vocab.choose(rng).unwrap(), a),
        _ => format!("({})", rng.gen_range(1..100)),
    };
    (
        digit_tokens,
        span.split_whitespace().map(str::to_string).collect(),
    )
}

/// Deterministic labeled corpus; the label lives in the `quality` field.
pub fn generate_synthetic(spec: &SyntheticCorpusSpec) -> Result<Shard, StatsError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = make_vocab(&mut rng, spec.vocab_size);

    let n_good = (spec.n as f64 * spec.good_fraction).round() as usize;
    let n_cont = (spec.n as f64 * spec.contamination_rate).round() as usize;
    let mut good = vec![false; spec.n];
    good[..n_good].iter_mut().for_each(|g| *g = true);
    good.shuffle(&mut rng);
    let mut contaminated = vec![false; spec.n];
    contaminated[..n_cont].iter_mut().for_each(|c| *c = true);
    contaminated.shuffle(&mut rng);

    let noise =
        Normal::new(0.0, spec.image_noise / (spec.dim as f64).sqrt()).expect("valid normal");
    let mut samples = Vec::with_capacity(spec.n);
    let mut image_rows: Vec<f32> = Vec::with_capacity(spec.n * spec.dim);

    for i in 0..spec.n {
        let len = rng.gen_range(spec.min_words..=spec.max_words);
        let clean: Vec<String> = (0..len)
            .map(|_| vocab.choose(&mut rng).unwrap().clone())
            .collect();
        let mut caption = clean.clone();
        if !good[i] {
            for tok in caption.iter_mut() {
                if rng.gen_bool(spec.mismatch_rate) {
                    *tok = vocab.choose(&mut rng).unwrap().clone();
                }
            }
        }
        let mut latent = clean.clone();
        let mut rendered = false;
        if contaminated[i] {
            let (digits, span) = contamination(&mut rng, &vocab);
            rendered = rng.gen_bool(spec.rendered_text_rate);
            if rendered {
                latent.extend(digits.iter().cloned());
                latent.extend(span.iter().cloned());
            }
            for d in digits {
                let at = rng.gen_range(0..=caption.len());
                caption.insert(at, d);
            }
            let at = rng.gen_range(0..=caption.len());
            caption.splice(at..at, span);
        }

        let base = toy_embed(&latent.join(" "), spec.dim, spec.embed_seed)
            .into_vec()
            .expect("latent caption is non-empty");
        let mut img: Vec<f64> = base
            .iter()
            .map(|&v| v as f64 + noise.sample(&mut rng))
            .collect();
        let norm = img.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            img.iter_mut().for_each(|v| *v /= norm);
        }
        image_rows.extend(img.iter().map(|&v| v as f32));

        let mut s = Sample::new(format!("syn{:x}-{i:06}", spec.seed), caption.join(" "))
            .with_size(rng.gen_range(180..1200), rng.gen_range(180..1200));
        s.extra.insert(
            "quality".into(),
            Value::from(if good[i] { "good" } else { "bad" }),
        );
        s.extra
            .insert("contaminated".into(), Value::from(contaminated[i]));
        s.extra
            .insert("rendered_text".into(), Value::from(rendered));
        samples.push(s);
    }

    let images = EmbeddingMatrix::new(spec.dim, image_rows).expect("finite image vectors");
    Ok(Shard::with_embeddings(
        format!("synthetic-{}", spec.seed),
        samples,
        None,
        Some(images),
    )
    .expect("generated shard is consistent"))
}

fn is_good(s: &Sample) -> Option<bool> {
    match s.extra.get("quality")?.as_str()? {
        "good" => Some(true),
        "bad" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// Good kept / kept; 0 when nothing is kept.
    pub precision: f64,
    /// Good kept / good; 1 when the shard has no good samples.
    pub recall: f64,
}

pub fn precision_recall(
    result: &FilterResult,
    labeled: &Shard,
) -> Result<PrecisionRecall, StatsError> {
    let labels: HashMap<&str, Option<bool>> = labeled
        .samples()
        .iter()
        .map(|s| (s.uid.as_str(), is_good(s)))
        .collect();
    let mut kept_good = 0usize;
    for uid in &result.kept_uids {
        match labels.get(uid.as_str()) {
            Some(Some(g)) => kept_good += *g as usize,
            _ => return Err(StatsError::MissingLabel { uid: uid.clone() }),
        }
    }
    let total_good = labels.values().filter(|l| **l == Some(true)).count();
    let precision = if result.kept_uids.is_empty() {
        0.0
    } else {
        kept_good as f64 / result.kept_uids.len() as f64
    };
    let recall = if total_good == 0 {
        1.0
    } else {
        kept_good as f64 / total_good as f64
    };
    Ok(PrecisionRecall { precision, recall })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub corpus: SyntheticCorpusSpec,
    pub alpha: f64,
    pub rules: MaskRules,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            corpus: SyntheticCorpusSpec::default(),
            alpha: 0.4,
            rules: MaskRules::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchArm {
    pub spec: FilterSpec,
    pub kept_count: usize,
    pub threshold_used: Option<f32>,
    pub precision: f64,
    pub recall: f64,
    pub num_presence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    pub pool_num_presence_rate: f64,
    pub clip_fraction: BenchArm,
    pub text_masked: BenchArm,
}

fn bench_arm(
    spec: FilterSpec,
    shard: &Shard,
    ctx: &FilterContext<'_>,
) -> Result<BenchArm, StatsError> {
    let result = evaluate(&spec, shard, ctx)?;
    let pr = precision_recall(&result, shard)?;
    let by_uid: HashMap<&str, &Sample> = shard
        .samples()
        .iter()
        .map(|s| (s.uid.as_str(), s))
        .collect();
    let kept = number_presence(
        result
            .kept_uids
            .iter()
            .map(|u| by_uid[u.as_str()].caption.as_str()),
    );
    Ok(BenchArm {
        spec,
        kept_count: result.kept_count,
        threshold_used: result.threshold_used,
        precision: pr.precision,
        recall: pr.recall,
        num_presence_rate: kept.rate,
    })
}

/// Generate, score and filter one synthetic corpus under the plain
/// original-caption fraction filter and the text-masked one.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchResult, StatsError> {
    let shard = generate_synthetic(&spec.corpus)?;
    let toy = ToyProvider::new(spec.corpus.dim, spec.corpus.embed_seed);
    let ctx = FilterContext::new(Providers::single(&toy));
    let plain = FilterSpec::ClipScoreFraction {
        alpha: spec.alpha,
        channel: Channel::Original,
        rules: spec.rules.clone(),
        round_mode: Default::default(),
        tie_mode: Default::default(),
    };
    let tmc = FilterSpec::TextMaskedClipFraction {
        alpha: spec.alpha,
        rules: spec.rules.clone(),
        round_mode: Default::default(),
        tie_mode: Default::default(),
    };
    Ok(BenchResult {
        n: shard.len(),
        seed: spec.corpus.seed,
        alpha: spec.alpha,
        pool_num_presence_rate: number_presence_rate(shard.samples()),
        clip_fraction: bench_arm(plain, &shard, &ctx)?,
        text_masked: bench_arm(tmc, &shard, &ctx)?,
    })
}
