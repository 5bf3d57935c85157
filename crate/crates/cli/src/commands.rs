use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mmfilter_core::datamodel::{read_jsonl, shard_stem};
use mmfilter_core::filters::{evaluate, FilterContext, FilterResult};
use mmfilter_core::scoring::{score_rows, ScoreEntry};
use mmfilter_core::stats::{generate_synthetic, run_bench, BenchSpec, Report, SyntheticCorpusSpec};
use mmfilter_core::{
    mask, read_shard, write_shard, EmbeddingMatrix, EmbeddingProvider, FilterSpec,
    PrecomputedProvider, Providers, ReadOptions, RemoteProvider, Sample, Shard, ToyProvider,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{
    BenchArgs, Command, CorpusArgs, FilterArgs, GenArgs, MaskArgs, ScoreArgs, StatsArgs,
};
use crate::config::{Config, ImageSource, Method, ProviderKind, ScoreFormat};
use crate::CliError;

pub struct Context {
    pub config: Config,
    pub pool: rayon::ThreadPool,
}

pub fn dispatch(
    ctx: &Context,
    command: Command,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    match command {
        Command::Mask(a) => cmd_mask(ctx, &a, stdin, stdout),
        Command::Score(a) => cmd_score(ctx, &a, stdin, stdout),
        Command::Filter(a) => cmd_filter(ctx, &a, stdout, stderr),
        Command::Stats(a) => cmd_stats(ctx, &a, stdout),
        Command::Gen(a) => cmd_gen(ctx, &a, stdout),
        Command::Bench(a) => cmd_bench(ctx, &a, stdout),
    }
}

/// Writes to `path` when given, else to `stdout`.
fn with_output(
    path: Option<&Path>,
    stdout: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let io_err = |p: &Path, e: std::io::Error| CliError::Data(format!("{}: {e}", p.display()));
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| io_err(p, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(p, e))
        }
        None => f(stdout)
            .and_then(|_| stdout.flush())
            .map_err(CliError::data),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_mask(
    ctx: &Context,
    a: &MaskArgs,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let samples = match &a.input {
        Some(p) => read_jsonl(open(p)?)?,
        None => read_jsonl(stdin)?,
    };
    let rules = &ctx.config.rules;
    let lines: Vec<String> = ctx.pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let mut map = s.to_json_map();
                map.insert("text".into(), Value::String(mask(&s.caption, rules)));
                // Re-masking keeps the first original.
                if !map.contains_key("text_original") {
                    map.insert("text_original".into(), Value::String(s.caption.clone()));
                }
                Value::Object(map).to_string()
            })
            .collect()
    });
    with_output(a.out.as_deref(), stdout, |w| {
        for line in &lines {
            writeln!(w, "{line}")?;
        }
        Ok(())
    })
}

/// The configured embedding backend plus the sidecar reader.
struct Backends {
    text: Box<dyn EmbeddingProvider>,
    precomputed: PrecomputedProvider,
    image_source: ImageSource,
    remote: bool,
}

impl Backends {
    fn new(config: &Config) -> Self {
        let p = &config.provider;
        let text: Box<dyn EmbeddingProvider> = match p.kind {
            ProviderKind::Toy => Box::new(ToyProvider::new(p.dim, p.seed)),
            ProviderKind::Remote => Box::new(RemoteProvider::new(p.remote_config())),
        };
        Backends {
            text,
            precomputed: PrecomputedProvider { dim: p.dim },
            image_source: p.image_source,
            remote: p.kind == ProviderKind::Remote,
        }
    }

    /// Sidecars must match `provider.dim`; catching it here gives a clearer
    /// message than the provider's.
    fn check_dims(&self, shard: &Shard) -> Result<(), CliError> {
        for (which, m) in [
            ("image", shard.image_embeddings()),
            ("text", shard.text_embeddings()),
        ] {
            if let Some(m) = m {
                if m.dim() != self.precomputed.dim {
                    return Err(CliError::Data(format!(
                        "{which} embeddings of shard {:?} have dim {} but provider.dim is {} (see --dim)",
                        shard.name(),
                        m.dim(),
                        self.precomputed.dim
                    )));
                }
            }
        }
        Ok(())
    }

    fn providers(&self, shard: &Shard) -> Providers<'_> {
        let sidecar = match self.image_source {
            ImageSource::Precomputed => true,
            ImageSource::Backend => false,
            ImageSource::Auto => shard.image_embeddings().is_some(),
        };
        let image: &dyn EmbeddingProvider = if sidecar {
            &self.precomputed
        } else {
            &*self.text
        };
        Providers {
            text: &*self.text,
            image,
        }
    }
}

fn channel_scores(
    ctx: &Context,
    backends: &Backends,
    shard: &Shard,
) -> Result<mmfilter_core::ScoreTable, CliError> {
    let channel = ctx.config.score.channel;
    let rules = &ctx.config.rules;
    backends.check_dims(shard)?;
    let providers = backends.providers(shard);
    let n = shard.len();
    // The remote client runs its own request pool; chunk only local work.
    let threads = ctx.pool.current_num_threads();
    let scores: Vec<f32> = if backends.remote || threads <= 1 || n < 2048 {
        let rows: Vec<usize> = (0..n).collect();
        score_rows(shard, &rows, providers, rules, channel)
            .map_err(|e| CliError::from_score(e, backends.remote))?
    } else {
        let chunk = n.div_ceil(threads * 4).max(512);
        let rows: Vec<usize> = (0..n).collect();
        let parts: Result<Vec<Vec<f32>>, _> = ctx.pool.install(|| {
            rows.par_chunks(chunk)
                .map(|c| score_rows(shard, c, providers, rules, channel))
                .collect()
        });
        parts
            .map_err(|e| CliError::from_score(e, backends.remote))?
            .concat()
    };
    let entries = shard
        .samples()
        .iter()
        .zip(scores)
        .map(|(s, score)| ScoreEntry {
            uid: s.uid.clone(),
            score,
        })
        .collect();
    Ok(mmfilter_core::ScoreTable::new(channel, entries))
}

fn load_input_shard(
    input: Option<&Path>,
    image_emb: Option<&Path>,
    stdin: &mut dyn BufRead,
) -> Result<Shard, CliError> {
    match input {
        Some(p) if p != Path::new("-") => {
            let opts = ReadOptions {
                image_embeddings: image_emb.map(Path::to_path_buf),
                ..ReadOptions::auto()
            };
            Ok(read_shard(p, &opts)?)
        }
        _ => {
            let samples = read_jsonl(stdin)?;
            let image = image_emb.map(EmbeddingMatrix::read_sidecar).transpose()?;
            Ok(Shard::with_embeddings("stdin", samples, None, image)?)
        }
    }
}

fn cmd_score(
    ctx: &Context,
    a: &ScoreArgs,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let shard = load_input_shard(a.input.as_deref(), a.image_emb.as_deref(), stdin)?;
    let backends = Backends::new(&ctx.config);
    let table = channel_scores(ctx, &backends, &shard)?;
    with_output(a.out.as_deref(), stdout, |w| {
        match ctx.config.score.format {
            ScoreFormat::Jsonl => table.write_jsonl(w),
            ScoreFormat::Csv => table.write_csv(w),
        }
    })
}

fn spec_from_config(config: &Config) -> Result<FilterSpec, CliError> {
    let f = &config.filter;
    let rules = config.rules.clone();
    Ok(match f.method {
        Method::Tmc => FilterSpec::TextMaskedClipFraction {
            alpha: f.alpha,
            rules,
            round_mode: f.round_mode,
            tie_mode: f.tie_mode,
        },
        Method::ClipFraction => FilterSpec::ClipScoreFraction {
            alpha: f.alpha,
            channel: f.channel,
            rules,
            round_mode: f.round_mode,
            tie_mode: f.tie_mode,
        },
        Method::ClipThreshold => FilterSpec::ClipScoreThreshold {
            theta: f.theta,
            channel: f.channel,
            rules,
        },
        Method::Basic => FilterSpec::Basic(f.basic),
        Method::Synset => FilterSpec::SynsetOverlap {
            wordlist_path: f
                .wordlist
                .clone()
                .ok_or_else(|| CliError::usage("the synset method needs --wordlist"))?,
        },
        Method::Composite => FilterSpec::CompositeFloor {
            alpha: f.alpha,
            rules,
            floor_theta: f.floor_theta,
            floor_channel: f.floor_channel,
            round_mode: f.round_mode,
            tie_mode: f.tie_mode,
        },
    })
}

fn read_spec_file(path: &Path) -> Result<FilterSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let at = if key == "." {
            String::new()
        } else {
            format!(" at `{key}`")
        };
        CliError::Usage(format!(
            "bad filter spec {}{at}: {}",
            path.display(),
            e.into_inner()
        ))
    })
}

fn concat_matrices(
    parts: &[Option<&EmbeddingMatrix>],
    which: &str,
) -> Result<Option<EmbeddingMatrix>, CliError> {
    if parts.iter().all(Option::is_none) {
        return Ok(None);
    }
    let mats: Vec<&EmbeddingMatrix> = parts.iter().flatten().copied().collect();
    if mats.len() != parts.len() {
        return Err(CliError::Data(format!(
            "only some shards have {which} embedding sidecars"
        )));
    }
    let dim = mats[0].dim();
    if mats.iter().any(|m| m.dim() != dim) {
        return Err(CliError::Data(format!(
            "{which} embedding sidecars disagree on dim"
        )));
    }
    let values: Vec<f32> = mats
        .iter()
        .flat_map(|m| m.values().iter().copied())
        .collect();
    Ok(Some(EmbeddingMatrix::new(dim, values)?))
}

/// One shard holding every input, in order; fractional thresholds are then
/// taken over the whole pool.
fn pool_shards(shards: &[Shard]) -> Result<Shard, CliError> {
    let samples: Vec<Sample> = shards
        .iter()
        .flat_map(|s| s.samples().iter().cloned())
        .collect();
    let text: Vec<_> = shards.iter().map(Shard::text_embeddings).collect();
    let image: Vec<_> = shards.iter().map(Shard::image_embeddings).collect();
    Ok(Shard::with_embeddings(
        "pool",
        samples,
        concat_matrices(&text, "text")?,
        concat_matrices(&image, "image")?,
    )?)
}

#[derive(serde::Serialize)]
struct Summary {
    input_count: usize,
    kept_count: usize,
    /// Serialized as f32 so it prints like the score files.
    threshold_used: Option<f32>,
}

fn write_summary(w: &mut dyn Write, result: &FilterResult) -> std::io::Result<()> {
    let summary = Summary {
        input_count: result.input_count,
        kept_count: result.kept_count,
        threshold_used: result.threshold_used,
    };
    serde_json::to_writer(&mut *w, &summary)?;
    writeln!(w)
}

fn cmd_filter(
    ctx: &Context,
    a: &FilterArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let spec = match &a.spec {
        Some(p) => read_spec_file(p)?,
        None => spec_from_config(&ctx.config)?,
    };
    spec.validate().map_err(CliError::usage)?;

    if a.emit_shard.is_some() {
        let mut seen = HashSet::new();
        for p in &a.inputs {
            if !seen.insert(shard_stem(p)) {
                return Err(CliError::Usage(format!(
                    "two inputs share the shard name {:?}",
                    shard_stem(p)
                )));
            }
        }
    }

    let loaded: Result<Vec<Shard>, _> = ctx.pool.install(|| {
        a.inputs
            .par_iter()
            .map(|p| read_shard(p, &ReadOptions::auto()))
            .collect()
    });
    let mut shards = loaded?;
    shards.sort_by(|x, y| x.name().cmp(y.name()));

    let pooled;
    let pool: &Shard = if shards.len() == 1 {
        &shards[0]
    } else {
        pooled = pool_shards(&shards)?;
        &pooled
    };

    let backends = Backends::new(&ctx.config);
    let fctx = if spec.needs_provider() {
        backends.check_dims(pool)?;
        FilterContext::new(backends.providers(pool))
    } else {
        FilterContext::without_provider()
    };
    let result =
        evaluate(&spec, pool, &fctx).map_err(|e| CliError::from_filter(e, backends.remote))?;

    with_output(a.out.as_deref(), stdout, |w| {
        for uid in &result.kept_uids {
            writeln!(w, "{uid}")?;
        }
        Ok(())
    })?;
    match (&a.summary, &a.out) {
        (Some(p), _) => with_output(Some(p), stdout, |w| write_summary(w, &result))?,
        (None, Some(_)) => with_output(None, stdout, |w| write_summary(w, &result))?,
        (None, None) => write_summary(stderr, &result).map_err(CliError::data)?,
    }

    if let Some(dir) = &a.emit_shard {
        let kept: HashSet<&str> = result.kept_uids.iter().map(String::as_str).collect();
        for shard in &shards {
            let rows: Vec<usize> = shard
                .samples()
                .iter()
                .enumerate()
                .filter(|(_, s)| kept.contains(s.uid.as_str()))
                .map(|(i, _)| i)
                .collect();
            write_shard(&shard.subset(&rows), dir)?;
        }
    }
    Ok(())
}

fn read_uid_list(path: &Path) -> Result<Vec<String>, CliError> {
    let mut uids = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let uid = line.trim();
        if !uid.is_empty() {
            uids.push(uid.to_string());
        }
    }
    Ok(uids)
}

fn cmd_stats(ctx: &Context, a: &StatsArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let shard = read_shard(&a.input, &ReadOptions::auto())?;
    let channel = ctx.config.score.channel;
    let backends = Backends::new(&ctx.config);
    let table = match &a.scores {
        Some(p) => {
            mmfilter_core::ScoreTable::read_jsonl(open(p)?, channel).map_err(CliError::data)?
        }
        None => channel_scores(ctx, &backends, &shard)?,
    };
    let by_uid: HashMap<&str, f32> = table
        .entries
        .iter()
        .map(|e| (e.uid.as_str(), e.score))
        .collect();
    if by_uid.len() != table.len()
        || by_uid.len() != shard.len()
        || shard
            .samples()
            .iter()
            .any(|s| !by_uid.contains_key(s.uid.as_str()))
    {
        return Err(CliError::data(
            "score file does not cover exactly the shard's uids",
        ));
    }

    let samples: Vec<Sample> = match &a.kept {
        None => shard.samples().to_vec(),
        Some(p) => {
            let kept = read_uid_list(p)?;
            let index: HashMap<&str, &Sample> = shard
                .samples()
                .iter()
                .map(|s| (s.uid.as_str(), s))
                .collect();
            if let Some(missing) = kept.iter().find(|u| !index.contains_key(u.as_str())) {
                return Err(CliError::Data(format!(
                    "kept uid {missing:?} is not in the shard"
                )));
            }
            let kept: HashSet<&str> = kept.iter().map(String::as_str).collect();
            shard
                .samples()
                .iter()
                .filter(|s| kept.contains(s.uid.as_str()))
                .cloned()
                .collect()
        }
    };
    let entries = samples
        .iter()
        .map(|s| ScoreEntry {
            uid: s.uid.clone(),
            score: by_uid[s.uid.as_str()],
        })
        .collect();
    let table = mmfilter_core::ScoreTable::new(channel, entries);

    let label = a.label.clone().unwrap_or_else(|| {
        let kept = a
            .kept
            .as_deref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "all".into());
        format!("{} kept={kept}", shard.name())
    });
    let report = Report::build(label, &samples, &table, ctx.config.stats)
        .map_err(|e| CliError::from_stats(e, backends.remote))?;
    with_output(a.out.as_deref(), stdout, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)
    })?;
    if let Some(p) = &a.hist {
        let mut sink = std::io::sink();
        with_output(Some(p), &mut sink, |w| report.histogram.write_csv(w))?;
    }
    Ok(())
}

fn corpus_spec(config: &Config, c: &CorpusArgs) -> SyntheticCorpusSpec {
    let d = SyntheticCorpusSpec::default();
    SyntheticCorpusSpec {
        n: c.n.unwrap_or(d.n),
        dim: config.provider.dim,
        seed: c.seed.unwrap_or(d.seed),
        embed_seed: config.provider.seed,
        contamination_rate: c.contamination_rate.unwrap_or(d.contamination_rate),
        good_fraction: c.good_fraction.unwrap_or(d.good_fraction),
        mismatch_rate: c.mismatch_rate.unwrap_or(d.mismatch_rate),
        image_noise: c.image_noise.unwrap_or(d.image_noise),
        rendered_text_rate: c.rendered_text_rate.unwrap_or(d.rendered_text_rate),
        ..d
    }
}

fn cmd_gen(ctx: &Context, a: &GenArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = corpus_spec(&ctx.config, &a.corpus);
    let shard = generate_synthetic(&spec).map_err(|e| CliError::from_stats(e, false))?;
    let shard = match &a.name {
        Some(name) => {
            let image = shard.image_embeddings().cloned();
            Shard::with_embeddings(name.clone(), shard.into_samples(), None, image)?
        }
        None => shard,
    };
    let paths = write_shard(&shard, &a.out_dir)?;
    let out = json!({
        "metadata": paths.metadata,
        "image_embeddings": paths.image_embeddings,
        "count": shard.len(),
        "dim": spec.dim,
        "embed_seed": spec.embed_seed,
    });
    with_output(None, stdout, |w| writeln!(w, "{out}"))
}

fn cmd_bench(ctx: &Context, a: &BenchArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = BenchSpec {
        corpus: corpus_spec(&ctx.config, &a.corpus),
        alpha: ctx.config.filter.alpha,
        rules: ctx.config.rules.clone(),
    };
    let result = ctx
        .pool
        .install(|| run_bench(&spec))
        .map_err(|e| CliError::from_stats(e, false))?;
    with_output(a.out.as_deref(), stdout, |w| {
        serde_json::to_writer_pretty(&mut *w, &result)?;
        writeln!(w)
    })
}
