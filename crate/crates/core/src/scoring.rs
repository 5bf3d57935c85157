//! Cosine similarity and per-shard score tables.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::Shard;
use crate::embedding::{EmbedError, Providers};
use crate::masker::{mask, MaskRules};

/// Score given to samples whose caption is empty after masking. It sits
/// below the cosine range so such samples rank last in any selection.
pub const SENTINEL: f32 = -2.0;

const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("cannot take cosine with a zero-norm vector")]
    ZeroNormVector,
    #[error("vector lengths differ ({left} vs {right})")]
    DimMismatch { left: usize, right: usize },
    #[error("embedding failed{}: {source}", for_uid(.uid))]
    Embed {
        uid: Option<String>,
        #[source]
        source: EmbedError,
    },
    #[error("sample {uid:?}: {source}")]
    Sample {
        uid: String,
        #[source]
        source: Box<ScoreError>,
    },
    #[error("malformed score record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}

fn for_uid(uid: &Option<String>) -> String {
    uid.as_ref()
        .map(|u| format!(" for sample {u:?}"))
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Raw caption.
    Original,
    /// Caption after masking.
    Masked,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::Original => "original",
            Channel::Masked => "masked",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub uid: String,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub channel: Channel,
    pub entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    pub fn new(channel: Channel, entries: Vec<ScoreEntry>) -> Self {
        ScoreTable { channel, entries }
    }

    /// Table with uids `0..n` for the given scores; handy in tests.
    pub fn from_scores(channel: Channel, scores: &[f32]) -> Self {
        ScoreTable {
            channel,
            entries: scores
                .iter()
                .enumerate()
                .map(|(i, &score)| ScoreEntry {
                    uid: i.to_string(),
                    score,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = f32> + '_ {
        self.entries.iter().map(|e| e.score)
    }

    pub fn sentinel_count(&self) -> usize {
        self.scores().filter(|&s| s == SENTINEL).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "uid,score")?;
        for e in &self.entries {
            writeln!(w, "{},{}", csv_field(&e.uid), e.score)?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(reader: R, channel: Channel) -> Result<Self, ScoreError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let malformed = |message: String| ScoreError::MalformedRecord {
                line: i + 1,
                message,
            };
            let line = line.map_err(|e| malformed(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ScoreEntry =
                serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            if !(e.score == SENTINEL || (-1.0..=1.0).contains(&e.score)) {
                return Err(malformed(format!("score {} out of range", e.score)));
            }
            entries.push(e);
        }
        Ok(ScoreTable { channel, entries })
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `u·v / (‖u‖‖v‖)`, accumulated in f64 and clamped to [−1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f32, ScoreError> {
    if u.len() != v.len() || u.is_empty() {
        return Err(ScoreError::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Err(ScoreError::ZeroNormVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0) as f32)
}

/// The caption a channel scores.
pub fn channel_text(caption: &str, channel: Channel, rules: &MaskRules) -> String {
    match channel {
        Channel::Original => caption.to_string(),
        Channel::Masked => mask(caption, rules),
    }
}

/// Scores the given shard rows, in the given order.
///
/// Rows whose channel text is whitespace-only get [`SENTINEL`] and are never
/// sent to either provider.
pub fn score_rows(
    shard: &Shard,
    rows: &[usize],
    providers: Providers<'_>,
    rules: &MaskRules,
    channel: Channel,
) -> Result<Vec<f32>, ScoreError> {
    let samples = shard.samples();
    let texts: Vec<String> = rows
        .iter()
        .map(|&r| channel_text(&samples[r].caption, channel, rules))
        .collect();
    let live: Vec<usize> = (0..rows.len())
        .filter(|&i| !texts[i].trim().is_empty())
        .collect();
    let mut scores = vec![SENTINEL; rows.len()];
    if live.is_empty() {
        return Ok(scores);
    }

    let uid_at = |i: Option<usize>| {
        i.and_then(|i| live.get(i))
            .map(|&j| samples[rows[j]].uid.clone())
    };
    let live_texts: Vec<&str> = live.iter().map(|&i| texts[i].as_str()).collect();
    let text_vecs = providers
        .text
        .embed_texts(&live_texts)
        .map_err(|e| ScoreError::Embed {
            uid: uid_at(e.input_index()),
            source: e,
        })?;
    let live_rows: Vec<usize> = live.iter().map(|&i| rows[i]).collect();
    let image_vecs = providers
        .image
        .embed_images(shard, &live_rows)
        .map_err(|e| ScoreError::Embed {
            // Image errors carry shard row numbers.
            uid: e
                .input_index()
                .and_then(|r| samples.get(r))
                .map(|s| s.uid.clone()),
            source: e,
        })?;

    for ((&i, t), img) in live.iter().zip(&text_vecs).zip(&image_vecs) {
        let uid = &samples[rows[i]].uid;
        scores[i] = match t.as_slice() {
            None => SENTINEL,
            Some(t) => cosine(t, img).map_err(|e| ScoreError::Sample {
                uid: uid.clone(),
                source: Box::new(e),
            })?,
        };
    }
    Ok(scores)
}

/// One score per sample, in shard order.
pub fn score_shard(
    shard: &Shard,
    providers: Providers<'_>,
    rules: &MaskRules,
    channel: Channel,
) -> Result<ScoreTable, ScoreError> {
    let rows: Vec<usize> = (0..shard.len()).collect();
    let scores = score_rows(shard, &rows, providers, rules, channel)?;
    Ok(ScoreTable {
        channel,
        entries: shard
            .samples()
            .iter()
            .zip(scores)
            .map(|(s, score)| ScoreEntry {
                uid: s.uid.clone(),
                score,
            })
            .collect(),
    })
}
