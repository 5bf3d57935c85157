//! Filter engine: fractional (top-α) selection on masked or original
//! scores, fixed-threshold selection, the caption/image-size and synset
//! baselines, the fraction-plus-floor composite, and chains of these.
//!
//! Fractional selection keeps every sample whose score is at least the
//! k-th largest score, `k = clamp(⌊n·α⌋, 1, n)`, so ties at the threshold
//! are all kept unless [`TieMode::Strict`] is requested.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Sample, Shard};
use crate::embedding::Providers;
use crate::masker::{MaskRules, RulesError};
use crate::scoring::{score_rows, Channel, ScoreError, ScoreTable};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("cannot select a threshold from an empty score table")]
    EmptyTable,
    #[error("scores are not aligned with samples: {0}")]
    AlignmentError(String),
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("invalid mask rules: {0}")]
    Rules(#[from] RulesError),
    #[error("cannot read wordlist {path}: {source}")]
    WordlistIoError {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("filter needs an embedding provider but none was configured")]
    MissingProvider,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// How `n·α` becomes an integer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundMode {
    #[default]
    Floor,
    Round,
    Ceil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    /// Keep every sample tied with the threshold score.
    #[default]
    KeepAll,
    /// Keep exactly k samples, breaking ties by shard order.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasicParams {
    pub min_words: usize,
    pub min_chars: usize,
    pub check_image_size: bool,
    pub min_smaller_dim: u32,
    /// Exclusive upper bound on `max(w, h) / min(w, h)`.
    pub max_aspect: f64,
    pub require_language_pass: bool,
}

impl Default for BasicParams {
    fn default() -> Self {
        BasicParams {
            min_words: 3,
            min_chars: 6,
            check_image_size: true,
            min_smaller_dim: 201,
            max_aspect: 3.0,
            require_language_pass: true,
        }
    }
}

fn default_channel() -> Channel {
    Channel::Original
}

fn default_masked() -> Channel {
    Channel::Masked
}

/// Declarative filter description; the JSON form uses a `type` tag, e.g.
/// `{"type": "text_masked_clip_fraction", "alpha": 0.3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    TextMaskedClipFraction {
        alpha: f64,
        #[serde(default)]
        rules: MaskRules,
        #[serde(default)]
        round_mode: RoundMode,
        #[serde(default)]
        tie_mode: TieMode,
    },
    ClipScoreFraction {
        alpha: f64,
        #[serde(default = "default_channel")]
        channel: Channel,
        #[serde(default)]
        rules: MaskRules,
        #[serde(default)]
        round_mode: RoundMode,
        #[serde(default)]
        tie_mode: TieMode,
    },
    ClipScoreThreshold {
        theta: f64,
        #[serde(default = "default_channel")]
        channel: Channel,
        #[serde(default)]
        rules: MaskRules,
    },
    Basic(BasicParams),
    SynsetOverlap {
        wordlist_path: PathBuf,
    },
    CompositeFloor {
        alpha: f64,
        #[serde(default)]
        rules: MaskRules,
        floor_theta: f64,
        #[serde(default = "default_masked")]
        floor_channel: Channel,
        #[serde(default)]
        round_mode: RoundMode,
        #[serde(default)]
        tie_mode: TieMode,
    },
    Chain {
        filters: Vec<FilterSpec>,
    },
}

impl FilterSpec {
    pub fn text_masked(alpha: f64) -> Self {
        FilterSpec::TextMaskedClipFraction {
            alpha,
            rules: MaskRules::default(),
            round_mode: RoundMode::Floor,
            tie_mode: TieMode::KeepAll,
        }
    }

    pub fn clip_fraction(alpha: f64, channel: Channel) -> Self {
        FilterSpec::ClipScoreFraction {
            alpha,
            channel,
            rules: MaskRules::default(),
            round_mode: RoundMode::Floor,
            tie_mode: TieMode::KeepAll,
        }
    }

    pub fn clip_threshold(theta: f64, channel: Channel) -> Self {
        FilterSpec::ClipScoreThreshold {
            theta,
            channel,
            rules: MaskRules::default(),
        }
    }

    pub fn composite(alpha: f64, floor_theta: f64, floor_channel: Channel) -> Self {
        FilterSpec::CompositeFloor {
            alpha,
            rules: MaskRules::default(),
            floor_theta,
            floor_channel,
            round_mode: RoundMode::Floor,
            tie_mode: TieMode::KeepAll,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let alpha_ok = |a: f64| {
            if a > 0.0 && a <= 1.0 {
                Ok(())
            } else {
                Err(FilterError::InvalidSpec(format!(
                    "alpha {a} is outside (0, 1]"
                )))
            }
        };
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(FilterError::InvalidSpec(format!("{name} must be finite")))
            }
        };
        match self {
            FilterSpec::TextMaskedClipFraction { alpha, rules, .. }
            | FilterSpec::ClipScoreFraction { alpha, rules, .. } => {
                alpha_ok(*alpha)?;
                rules.validate()?;
            }
            FilterSpec::ClipScoreThreshold { theta, rules, .. } => {
                finite("theta", *theta)?;
                rules.validate()?;
            }
            FilterSpec::Basic(params) => {
                finite("max_aspect", params.max_aspect)?;
            }
            FilterSpec::SynsetOverlap { .. } => {}
            FilterSpec::CompositeFloor {
                alpha,
                rules,
                floor_theta,
                ..
            } => {
                alpha_ok(*alpha)?;
                finite("floor_theta", *floor_theta)?;
                rules.validate()?;
            }
            FilterSpec::Chain { filters } => {
                if filters.is_empty() {
                    return Err(FilterError::InvalidSpec("chain is empty".into()));
                }
                for f in filters {
                    f.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn needs_provider(&self) -> bool {
        match self {
            FilterSpec::Basic(_) | FilterSpec::SynsetOverlap { .. } => false,
            FilterSpec::Chain { filters } => filters.iter().any(FilterSpec::needs_provider),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub kept_uids: Vec<String>,
    pub threshold_used: Option<f32>,
    pub input_count: usize,
    pub kept_count: usize,
    pub spec_echo: FilterSpec,
}

/// Stand-in for a language identifier; see [`AlwaysPass`].
pub trait LanguagePredicate: Sync {
    fn passes(&self, caption: &str) -> bool;
}

/// Accepts every caption.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysPass;

impl LanguagePredicate for AlwaysPass {
    fn passes(&self, _caption: &str) -> bool {
        true
    }
}

/// `clamp(round(n·α), 1, n)`. Products within 1e-9 (relative) of an
/// integer or half-integer snap to it, so `100 × 0.29` counts as 29 and
/// `5 × 0.7` rounds like 3.5.
pub fn fraction_count(n: usize, alpha: f64, mode: RoundMode) -> usize {
    if n == 0 {
        return 0;
    }
    let mut x = n as f64 * alpha;
    let halves = (2.0 * x).round();
    if (2.0 * x - halves).abs() <= 2e-9 * x.abs().max(1.0) {
        x = halves / 2.0;
    }
    let k = match mode {
        RoundMode::Floor => x.floor(),
        RoundMode::Round => x.round(),
        RoundMode::Ceil => x.ceil(),
    };
    (k.max(0.0) as usize).clamp(1, n)
}

/// The k-th largest of `scores` for `k = fraction_count(n, α)`.
pub fn select_threshold_scores(
    scores: &[f32],
    alpha: f64,
    mode: RoundMode,
) -> Result<f32, FilterError> {
    if scores.is_empty() {
        return Err(FilterError::EmptyTable);
    }
    let k = fraction_count(scores.len(), alpha, mode);
    let mut buf = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

pub fn select_threshold(scores: &ScoreTable, alpha: f64) -> Result<f32, FilterError> {
    let s: Vec<f32> = scores.scores().collect();
    select_threshold_scores(&s, alpha, RoundMode::Floor)
}

/// Indices (ascending) kept by top-α selection over `scores`.
pub fn fraction_keep(
    scores: &[f32],
    alpha: f64,
    mode: RoundMode,
    ties: TieMode,
) -> Result<(Vec<usize>, f32), FilterError> {
    let threshold = select_threshold_scores(scores, alpha, mode)?;
    let kept = match ties {
        TieMode::KeepAll => (0..scores.len())
            .filter(|&i| scores[i] >= threshold)
            .collect(),
        TieMode::Strict => {
            let k = fraction_count(scores.len(), alpha, mode);
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            order.truncate(k);
            order.sort_unstable();
            order
        }
    };
    Ok((kept, threshold))
}

/// Reorders `table` to follow `samples`, failing unless both carry the
/// same uid set.
fn aligned_scores(samples: &[Sample], table: &ScoreTable) -> Result<Vec<f32>, FilterError> {
    if samples.len() != table.len() {
        return Err(FilterError::AlignmentError(format!(
            "{} samples but {} scores",
            samples.len(),
            table.len()
        )));
    }
    if samples
        .iter()
        .zip(&table.entries)
        .all(|(s, e)| s.uid == e.uid)
    {
        return Ok(table.scores().collect());
    }
    let by_uid: HashMap<&str, f32> = table
        .entries
        .iter()
        .map(|e| (e.uid.as_str(), e.score))
        .collect();
    if by_uid.len() != table.len() {
        return Err(FilterError::AlignmentError(
            "duplicate uid in score table".into(),
        ));
    }
    samples
        .iter()
        .map(|s| {
            by_uid
                .get(s.uid.as_str())
                .copied()
                .ok_or_else(|| FilterError::AlignmentError(format!("no score for uid {:?}", s.uid)))
        })
        .collect()
}

fn result_from_rows(
    samples: &[Sample],
    kept: &[usize],
    threshold: Option<f32>,
    spec: FilterSpec,
) -> FilterResult {
    FilterResult {
        kept_uids: kept.iter().map(|&i| samples[i].uid.clone()).collect(),
        threshold_used: threshold,
        input_count: samples.len(),
        kept_count: kept.len(),
        spec_echo: spec,
    }
}

pub fn apply_fraction_filter(
    samples: &[Sample],
    scores: &ScoreTable,
    alpha: f64,
) -> Result<FilterResult, FilterError> {
    apply_fraction_filter_with(samples, scores, alpha, RoundMode::Floor, TieMode::KeepAll)
}

pub fn apply_fraction_filter_with(
    samples: &[Sample],
    scores: &ScoreTable,
    alpha: f64,
    round_mode: RoundMode,
    tie_mode: TieMode,
) -> Result<FilterResult, FilterError> {
    let spec = FilterSpec::ClipScoreFraction {
        alpha,
        channel: scores.channel,
        rules: MaskRules::default(),
        round_mode,
        tie_mode,
    };
    spec.validate()?;
    let s = aligned_scores(samples, scores)?;
    let (kept, threshold) = fraction_keep(&s, alpha, round_mode, tie_mode)?;
    Ok(result_from_rows(samples, &kept, Some(threshold), spec))
}

pub fn apply_threshold_filter(
    samples: &[Sample],
    scores: &ScoreTable,
    theta: f64,
) -> Result<FilterResult, FilterError> {
    let spec = FilterSpec::clip_threshold(theta, scores.channel);
    spec.validate()?;
    let s = aligned_scores(samples, scores)?;
    let kept: Vec<usize> = (0..s.len()).filter(|&i| s[i] as f64 >= theta).collect();
    Ok(result_from_rows(samples, &kept, Some(theta as f32), spec))
}

fn passes_basic(s: &Sample, p: &BasicParams, language: &dyn LanguagePredicate) -> bool {
    if s.caption.split_whitespace().count() < p.min_words {
        return false;
    }
    if s.caption.chars().count() < p.min_chars {
        return false;
    }
    if p.check_image_size {
        let (Some(w), Some(h)) = (s.width, s.height) else {
            return false;
        };
        let (lo, hi) = (w.min(h), w.max(h));
        if lo < p.min_smaller_dim || hi as f64 / lo as f64 >= p.max_aspect {
            return false;
        }
    }
    !p.require_language_pass || language.passes(&s.caption)
}

pub fn basic_filter(samples: &[Sample], params: &BasicParams) -> FilterResult {
    basic_filter_with(samples, params, &AlwaysPass)
}

pub fn basic_filter_with(
    samples: &[Sample],
    params: &BasicParams,
    language: &dyn LanguagePredicate,
) -> FilterResult {
    let kept: Vec<usize> = (0..samples.len())
        .filter(|&i| passes_basic(&samples[i], params, language))
        .collect();
    result_from_rows(samples, &kept, None, FilterSpec::Basic(*params))
}

/// Terms for synset matching. Multi-word terms match contiguous token runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Wordlist {
    source: Option<PathBuf>,
    by_first: HashMap<String, Vec<Vec<String>>>,
}

impl Wordlist {
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        let mut seen = HashSet::new();
        for t in terms {
            let tokens: Vec<String> = t
                .as_ref()
                .to_lowercase()
                .split_whitespace()
                .map(str::to_string)
                .collect();
            if tokens.is_empty() || !seen.insert(tokens.clone()) {
                continue;
            }
            by_first.entry(tokens[0].clone()).or_default().push(tokens);
        }
        Wordlist {
            source: None,
            by_first,
        }
    }

    pub fn load(path: &Path) -> Result<Self, FilterError> {
        let text = fs::read_to_string(path).map_err(|source| FilterError::WordlistIoError {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = Self::from_terms(text.lines());
        w.source = Some(path.to_path_buf());
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.by_first.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }

    pub fn matches(&self, caption: &str) -> bool {
        let lowered = caption.to_lowercase();
        let tokens: Vec<&str> = lowered.split_whitespace().collect();
        tokens.iter().enumerate().any(|(i, tok)| {
            self.by_first.get(*tok).is_some_and(|terms| {
                terms.iter().any(|term| {
                    tokens.len() - i >= term.len()
                        && term.iter().zip(&tokens[i..]).all(|(a, b)| a == b)
                })
            })
        })
    }
}

pub fn synset_filter(samples: &[Sample], wordlist: &Wordlist) -> FilterResult {
    let kept: Vec<usize> = (0..samples.len())
        .filter(|&i| wordlist.matches(&samples[i].caption))
        .collect();
    let spec = FilterSpec::SynsetOverlap {
        wordlist_path: wordlist.source.clone().unwrap_or_default(),
    };
    result_from_rows(samples, &kept, None, spec)
}

/// What a filter needs besides the samples themselves.
#[derive(Clone, Copy)]
pub struct FilterContext<'a> {
    pub providers: Option<Providers<'a>>,
    pub language: &'a dyn LanguagePredicate,
}

impl<'a> FilterContext<'a> {
    pub fn new(providers: Providers<'a>) -> Self {
        FilterContext {
            providers: Some(providers),
            language: &AlwaysPass,
        }
    }

    pub fn without_provider() -> Self {
        FilterContext {
            providers: None,
            language: &AlwaysPass,
        }
    }
}

struct Stage {
    kept: Vec<usize>,
    threshold: Option<f32>,
}

fn scores_for(
    shard: &Shard,
    rows: &[usize],
    ctx: &FilterContext<'_>,
    rules: &MaskRules,
    channel: Channel,
) -> Result<Vec<f32>, FilterError> {
    let providers = ctx.providers.ok_or(FilterError::MissingProvider)?;
    Ok(score_rows(shard, rows, providers, rules, channel)?)
}

#[allow(clippy::too_many_arguments)]
fn fraction_stage(
    shard: &Shard,
    rows: &[usize],
    ctx: &FilterContext<'_>,
    rules: &MaskRules,
    channel: Channel,
    alpha: f64,
    round_mode: RoundMode,
    tie_mode: TieMode,
) -> Result<Stage, FilterError> {
    if rows.is_empty() {
        return Ok(Stage {
            kept: vec![],
            threshold: None,
        });
    }
    let scores = scores_for(shard, rows, ctx, rules, channel)?;
    let (kept, threshold) = fraction_keep(&scores, alpha, round_mode, tie_mode)?;
    Ok(Stage {
        kept: kept.into_iter().map(|i| rows[i]).collect(),
        threshold: Some(threshold),
    })
}

/// Runs `spec` over `rows` of `shard`, returning surviving rows in order.
fn eval_rows(
    spec: &FilterSpec,
    shard: &Shard,
    rows: &[usize],
    ctx: &FilterContext<'_>,
) -> Result<Stage, FilterError> {
    let samples = shard.samples();
    match spec {
        FilterSpec::TextMaskedClipFraction {
            alpha,
            rules,
            round_mode,
            tie_mode,
        } => fraction_stage(
            shard,
            rows,
            ctx,
            rules,
            Channel::Masked,
            *alpha,
            *round_mode,
            *tie_mode,
        ),
        FilterSpec::ClipScoreFraction {
            alpha,
            channel,
            rules,
            round_mode,
            tie_mode,
        } => fraction_stage(
            shard,
            rows,
            ctx,
            rules,
            *channel,
            *alpha,
            *round_mode,
            *tie_mode,
        ),
        FilterSpec::ClipScoreThreshold {
            theta,
            channel,
            rules,
        } => {
            let scores = if rows.is_empty() {
                vec![]
            } else {
                scores_for(shard, rows, ctx, rules, *channel)?
            };
            Ok(Stage {
                kept: rows
                    .iter()
                    .zip(&scores)
                    .filter(|(_, &s)| s as f64 >= *theta)
                    .map(|(&r, _)| r)
                    .collect(),
                threshold: Some(*theta as f32),
            })
        }
        FilterSpec::Basic(params) => Ok(Stage {
            kept: rows
                .iter()
                .copied()
                .filter(|&r| passes_basic(&samples[r], params, ctx.language))
                .collect(),
            threshold: None,
        }),
        FilterSpec::SynsetOverlap { wordlist_path } => {
            let words = Wordlist::load(wordlist_path)?;
            Ok(Stage {
                kept: rows
                    .iter()
                    .copied()
                    .filter(|&r| words.matches(&samples[r].caption))
                    .collect(),
                threshold: None,
            })
        }
        FilterSpec::CompositeFloor {
            alpha,
            rules,
            floor_theta,
            floor_channel,
            round_mode,
            tie_mode,
        } => {
            let first = fraction_stage(
                shard,
                rows,
                ctx,
                rules,
                Channel::Masked,
                *alpha,
                *round_mode,
                *tie_mode,
            )?;
            if first.kept.is_empty() {
                return Ok(first);
            }
            let floor_scores = scores_for(shard, &first.kept, ctx, rules, *floor_channel)?;
            Ok(Stage {
                kept: first
                    .kept
                    .iter()
                    .zip(&floor_scores)
                    .filter(|(_, &s)| s as f64 >= *floor_theta)
                    .map(|(&r, _)| r)
                    .collect(),
                threshold: first.threshold,
            })
        }
        FilterSpec::Chain { filters } => {
            let mut current = rows.to_vec();
            let mut threshold = None;
            for f in filters {
                let stage = eval_rows(f, shard, &current, ctx)?;
                current = stage.kept;
                threshold = stage.threshold.or(threshold);
            }
            Ok(Stage {
                kept: current,
                threshold,
            })
        }
    }
}

/// Evaluates any filter spec against a whole shard.
pub fn evaluate(
    spec: &FilterSpec,
    shard: &Shard,
    ctx: &FilterContext<'_>,
) -> Result<FilterResult, FilterError> {
    spec.validate()?;
    let rows: Vec<usize> = (0..shard.len()).collect();
    let stage = eval_rows(spec, shard, &rows, ctx)?;
    Ok(result_from_rows(
        shard.samples(),
        &stage.kept,
        stage.threshold,
        spec.clone(),
    ))
}

/// Masked-channel top-α selection; kept samples keep their original captions.
pub fn text_masked_clip_filter(
    shard: &Shard,
    providers: Providers<'_>,
    rules: &MaskRules,
    alpha: f64,
) -> Result<FilterResult, FilterError> {
    let spec = FilterSpec::TextMaskedClipFraction {
        alpha,
        rules: rules.clone(),
        round_mode: RoundMode::Floor,
        tie_mode: TieMode::KeepAll,
    };
    evaluate(&spec, shard, &FilterContext::new(providers))
}

/// Text-masked top-α selection followed by removal of kept samples scoring
/// below `floor_theta` on `floor_channel`.
pub fn composite_floor_filter(
    shard: &Shard,
    providers: Providers<'_>,
    rules: &MaskRules,
    alpha: f64,
    floor_theta: f64,
    floor_channel: Channel,
) -> Result<FilterResult, FilterError> {
    let spec = FilterSpec::CompositeFloor {
        alpha,
        rules: rules.clone(),
        floor_theta,
        floor_channel,
        round_mode: RoundMode::Floor,
        tie_mode: TieMode::KeepAll,
    };
    evaluate(&spec, shard, &FilterContext::new(providers))
}

/// Applies `specs` left to right, each on the previous stage's survivors.
pub fn chain(
    specs: &[FilterSpec],
    shard: &Shard,
    ctx: &FilterContext<'_>,
) -> Result<FilterResult, FilterError> {
    evaluate(
        &FilterSpec::Chain {
            filters: specs.to_vec(),
        },
        shard,
        ctx,
    )
}

/// Rows of `shard` whose uid is in `result.kept_uids`, in shard order.
pub fn kept_rows(shard: &Shard, result: &FilterResult) -> Vec<usize> {
    let keep: HashSet<&str> = result.kept_uids.iter().map(String::as_str).collect();
    (0..shard.len())
        .filter(|&r| keep.contains(shard.samples()[r].uid.as_str()))
        .collect()
}
