use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::Override;

#[derive(Parser, Debug)]
#[command(
    name = "mmfilter",
    about = "Mask, score and filter image-text datasets",
    disable_version_flag = true
)]
pub struct Cli {
    /// JSON config file; flags and MMFILTER_* variables override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print the resolved config as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Print toolkit and file-format versions.
    #[arg(short = 'V', long)]
    pub version: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Mask captions of a JSONL stream.
    Mask(MaskArgs),
    /// Write one image-text score per sample.
    Score(ScoreArgs),
    /// Select samples and print the kept uids.
    Filter(FilterArgs),
    /// Number-presence and score-histogram report.
    Stats(StatsArgs),
    /// Write a labeled synthetic shard.
    Gen(GenArgs),
    /// Compare the plain and text-masked fraction filters on synthetic data.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Default)]
pub struct RulesArgs {
    /// Bracket families to strip, e.g. "()[]{}"; empty disables.
    #[arg(long, value_name = "PAIRS")]
    pub brackets: Option<String>,

    /// Keep digit-bearing tokens.
    #[arg(long)]
    pub no_digit_tokens: bool,

    /// What an unclosed opening bracket does.
    #[arg(long, value_parser = ["truncate", "ignore"])]
    pub unmatched: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct ProviderArgs {
    #[arg(long, value_parser = ["toy", "remote"])]
    pub provider: Option<String>,

    /// Image vectors from the sidecar, the backend, or whichever exists.
    #[arg(long, value_parser = ["auto", "backend", "precomputed"])]
    pub image_source: Option<String>,

    #[arg(long)]
    pub dim: Option<usize>,

    /// Toy embedder seed.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,

    #[arg(long)]
    pub model: Option<String>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub max_retries: Option<usize>,

    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    /// Input JSONL; standard input when omitted.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// Output JSONL; standard output when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub rules: RulesArgs,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Shard metadata JSONL; "-" or omitted reads standard input.
    pub input: Option<PathBuf>,

    #[arg(long, value_parser = ["original", "masked"])]
    pub channel: Option<String>,

    #[arg(long, value_parser = ["jsonl", "csv"])]
    pub format: Option<String>,

    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Image embedding sidecar, overriding `<stem>.image.emb`.
    #[arg(long, value_name = "FILE")]
    pub image_emb: Option<PathBuf>,

    #[command(flatten)]
    pub provider: ProviderArgs,

    #[command(flatten)]
    pub rules: RulesArgs,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    /// One or more shard metadata files, pooled for fractional selection.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,

    /// JSON filter spec; replaces --method and its parameters.
    #[arg(long, value_name = "FILE", conflicts_with = "method")]
    pub spec: Option<PathBuf>,

    #[arg(long, value_parser = ["tmc", "clip-fraction", "clip-threshold", "basic", "synset", "composite"])]
    pub method: Option<String>,

    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long)]
    pub theta: Option<f64>,

    #[arg(long, value_parser = ["original", "masked"])]
    pub channel: Option<String>,

    #[arg(long, value_parser = ["floor", "round", "ceil"])]
    pub round_mode: Option<String>,

    #[arg(long, value_parser = ["keep-all", "strict"])]
    pub tie_mode: Option<String>,

    #[arg(long)]
    pub floor_theta: Option<f64>,

    #[arg(long, value_parser = ["original", "masked"])]
    pub floor_channel: Option<String>,

    /// Term list for the synset method.
    #[arg(long, value_name = "FILE")]
    pub wordlist: Option<PathBuf>,

    /// Kept uids, one per line; standard output when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Summary JSON; defaults to standard output when --out is a file,
    /// standard error otherwise.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,

    /// Write each filtered shard (metadata and sidecars) into this directory.
    #[arg(long, value_name = "DIR")]
    pub emit_shard: Option<PathBuf>,

    #[command(flatten)]
    pub provider: ProviderArgs,

    #[command(flatten)]
    pub rules: RulesArgs,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Shard metadata JSONL.
    pub input: PathBuf,

    /// Score file (JSONL); scores are computed when omitted.
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,

    /// Restrict the report to the uids listed in this file.
    #[arg(long, value_name = "FILE")]
    pub kept: Option<PathBuf>,

    /// Report label; defaults to the shard name (plus the kept-set file).
    #[arg(long)]
    pub label: Option<String>,

    #[arg(long, value_parser = ["original", "masked"])]
    pub channel: Option<String>,

    /// Report JSON; standard output when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Histogram CSV.
    #[arg(long, value_name = "FILE")]
    pub hist: Option<PathBuf>,

    #[arg(long)]
    pub bin_width: Option<f64>,

    #[command(flatten)]
    pub provider: ProviderArgs,

    #[command(flatten)]
    pub rules: RulesArgs,
}

#[derive(Args, Debug, Default)]
pub struct CorpusArgs {
    #[arg(long)]
    pub n: Option<usize>,

    /// Corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Vector dimension (also `provider.dim`).
    #[arg(long)]
    pub dim: Option<usize>,

    /// Toy embedder seed (also `provider.seed`).
    #[arg(long)]
    pub embed_seed: Option<u64>,

    #[arg(long)]
    pub contamination_rate: Option<f64>,

    #[arg(long)]
    pub good_fraction: Option<f64>,

    #[arg(long)]
    pub mismatch_rate: Option<f64>,

    #[arg(long)]
    pub image_noise: Option<f64>,

    #[arg(long)]
    pub rendered_text_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,

    /// Shard name; defaults to `synthetic-<seed>`.
    #[arg(long)]
    pub name: Option<String>,

    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub corpus: CorpusArgs,

    #[command(flatten)]
    pub rules: RulesArgs,
}

fn push<T: serde::Serialize>(out: &mut Vec<Override>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, serde_json::to_value(v).expect("flag serializes")));
    }
}

fn snake(v: &Option<String>) -> Option<Value> {
    v.as_ref().map(|s| Value::String(s.replace('-', "_")))
}

impl RulesArgs {
    pub fn overrides(&self, out: &mut Vec<Override>) -> Result<(), String> {
        if let Some(b) = &self.brackets {
            let families = mmfilter_core::MaskRules::parse_families(b)
                .map_err(|e| format!("--brackets: {e}"))?;
            out.push(("rules.bracket_families", json!(families)));
        }
        if self.no_digit_tokens {
            out.push(("rules.remove_digit_tokens", json!(false)));
        }
        if let Some(u) = &self.unmatched {
            let policy = if u == "truncate" {
                "truncate_to_end"
            } else {
                u.as_str()
            };
            out.push(("rules.unmatched_open_policy", json!(policy)));
        }
        Ok(())
    }
}

impl ProviderArgs {
    pub fn overrides(&self, out: &mut Vec<Override>) {
        push(out, "provider.kind", &self.provider);
        push(out, "provider.image_source", &self.image_source);
        push(out, "provider.dim", &self.dim);
        push(out, "provider.seed", &self.seed);
        push(out, "provider.endpoint", &self.endpoint);
        push(out, "provider.model", &self.model);
        push(out, "provider.batch_size", &self.batch_size);
        push(out, "provider.max_retries", &self.max_retries);
        push(out, "provider.max_in_flight", &self.max_in_flight);
    }
}

impl CorpusArgs {
    pub fn overrides(&self, out: &mut Vec<Override>) {
        push(out, "provider.dim", &self.dim);
        push(out, "provider.seed", &self.embed_seed);
    }
}

impl Cli {
    /// Flag values that map onto config keys.
    pub fn overrides(&self) -> Result<Vec<Override>, String> {
        let mut out = Vec::new();
        push(&mut out, "io.jobs", &self.jobs);
        match &self.command {
            None => {}
            Some(Command::Mask(a)) => a.rules.overrides(&mut out)?,
            Some(Command::Score(a)) => {
                push(&mut out, "score.channel", &a.channel);
                push(&mut out, "score.format", &a.format);
                a.provider.overrides(&mut out);
                a.rules.overrides(&mut out)?;
            }
            Some(Command::Filter(a)) => {
                push(&mut out, "filter.method", &a.method);
                push(&mut out, "filter.alpha", &a.alpha);
                push(&mut out, "filter.theta", &a.theta);
                push(&mut out, "filter.channel", &a.channel);
                push(&mut out, "filter.round_mode", &a.round_mode);
                if let Some(v) = snake(&a.tie_mode) {
                    out.push(("filter.tie_mode", v));
                }
                push(&mut out, "filter.floor_theta", &a.floor_theta);
                push(&mut out, "filter.floor_channel", &a.floor_channel);
                push(&mut out, "filter.wordlist", &a.wordlist);
                a.provider.overrides(&mut out);
                a.rules.overrides(&mut out)?;
            }
            Some(Command::Stats(a)) => {
                push(&mut out, "score.channel", &a.channel);
                push(&mut out, "stats.bin_width", &a.bin_width);
                a.provider.overrides(&mut out);
                a.rules.overrides(&mut out)?;
            }
            Some(Command::Gen(a)) => a.corpus.overrides(&mut out),
            Some(Command::Bench(a)) => {
                push(&mut out, "filter.alpha", &a.alpha);
                a.corpus.overrides(&mut out);
                a.rules.overrides(&mut out)?;
            }
        }
        Ok(out)
    }
}
