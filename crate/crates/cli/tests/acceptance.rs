//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use common::{is_nd, rule_configs};
use mmfilter_core::embedding::mock::{mock_vector, MockBehavior, MockServer};
use mmfilter_core::embedding::toy_embed;
use mmfilter_core::filters::{apply_fraction_filter, fraction_count, select_threshold, RoundMode};
use mmfilter_core::masker::UnmatchedOpenPolicy;
use mmfilter_core::scoring::{cosine, score_shard};
use mmfilter_core::stats::{
    generate_synthetic, run_bench, score_histogram, BenchSpec, BinSpec, SyntheticCorpusSpec,
};
use mmfilter_core::{
    mask, read_shard, write_shard, Channel, EmbedError, EmbeddingMatrix, MaskRules, Providers,
    ReadOptions, RemoteConfig, RemoteProvider, Sample, ScoreTable, Shard, TextVector, ToyProvider,
    SENTINEL,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

const TOY_DUMP_ENV: &str = "ACCEPTANCE_TOY_DUMP";

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!(
            "took {:.2}s, limit {limit_s}s",
            elapsed.as_secs_f64()
        ))
    }
}

/// Fuzzed UTF-8: masker-stressing characters, arbitrary scalar values, or
/// lossily decoded random bytes.
fn fuzz_text(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..80);
    match rng.gen_range(0..4) {
        0 | 1 => (0..len)
            .map(|_| *common::ALPHABET.choose(rng).unwrap())
            .collect(),
        2 => (0..len)
            .map(|_| loop {
                let cp = if rng.gen_bool(0.7) {
                    rng.gen_range(0..0x3000)
                } else {
                    rng.gen_range(0..0x110000)
                };
                if let Some(c) = char::from_u32(cp) {
                    break c;
                }
            })
            .collect(),
        _ => {
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        }
    }
}

fn ac1_masker() -> Outcome {
    let t = Instant::now();
    let example = mask("Samsung S30 phone (View 18 of 50)", &MaskRules::default());
    ensure!(
        example == "Samsung phone",
        "worked example gave {example:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let configs = rule_configs();
    let mut checked = 0usize;
    for (name, rules) in &configs {
        for _ in 0..10_000 {
            let text = fuzz_text(&mut rng);
            let m = mask(&text, rules);
            if rules.remove_digit_tokens {
                ensure!(
                    !m.chars().any(is_nd),
                    "{name}: Nd left in {m:?} from {text:?}"
                );
            }
            if rules.unmatched_open_policy == UnmatchedOpenPolicy::TruncateToEnd {
                ensure!(
                    !m.chars().any(|c| rules.is_bracket_char(c)),
                    "{name}: bracket left in {m:?} from {text:?}"
                );
            }
            ensure!(mask(&m, rules) == m, "{name}: not idempotent on {text:?}");
            checked += 1;
        }
    }
    within(t.elapsed(), 5.0)?;
    Ok(format!(
        "{checked} inputs over {} rule configurations",
        configs.len()
    ))
}

fn random_scores(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = rng.gen_range(1..=1000);
    match rng.gen_range(0..4) {
        0 => {
            let levels: Vec<f32> = (0..rng.gen_range(1..6))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            (0..n).map(|_| *levels.choose(rng).unwrap()).collect()
        }
        1 => (0..n)
            .map(|_| rng.gen_range(-100..100) as f32 / 100.0)
            .collect(),
        2 => (0..n)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    SENTINEL
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect(),
        _ => (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    }
}

struct Instance {
    scores: Vec<f32>,
    /// Per α = 0.1..0.9: threshold and kept indices.
    runs: Vec<(f32, BTreeSet<usize>)>,
}

fn fraction_instances() -> Result<Vec<Instance>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::with_capacity(500);
    for _ in 0..500 {
        let scores = random_scores(&mut rng);
        let samples: Vec<Sample> = (0..scores.len())
            .map(|i| Sample::new(i.to_string(), "c"))
            .collect();
        let table = ScoreTable::from_scores(Channel::Masked, &scores);
        let mut runs = Vec::new();
        for tenths in 1..=9 {
            let alpha = tenths as f64 / 10.0;
            let th = select_threshold(&table, alpha).map_err(|e| e.to_string())?;
            let r = apply_fraction_filter(&samples, &table, alpha).map_err(|e| e.to_string())?;
            ensure!(
                r.threshold_used == Some(th),
                "threshold_used {:?} != {th}",
                r.threshold_used
            );
            ensure!(
                r.kept_count == r.kept_uids.len(),
                "kept_count disagrees with uids"
            );
            let kept: BTreeSet<usize> = r.kept_uids.iter().map(|u| u.parse().unwrap()).collect();
            runs.push((th, kept));
        }
        out.push(Instance { scores, runs });
    }
    Ok(out)
}

fn ac2_oracle(instances: &[Instance]) -> Outcome {
    let mut duplicates = 0;
    for (i, inst) in instances.iter().enumerate() {
        let n = inst.scores.len();
        let mut sorted = inst.scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        duplicates += (sorted.windows(2).any(|w| w[0] == w[1])) as usize;
        for (j, (th, kept)) in inst.runs.iter().enumerate() {
            let k = (n * (j + 1) / 10).clamp(1, n);
            let expected_th = sorted[k - 1];
            ensure!(
                th.to_bits() == expected_th.to_bits(),
                "instance {i} α=0.{}: threshold {th} != {expected_th}",
                j + 1
            );
            let expected: BTreeSet<usize> =
                (0..n).filter(|&r| inst.scores[r] >= expected_th).collect();
            ensure!(
                *kept == expected,
                "instance {i} α=0.{}: kept set differs",
                j + 1
            );
        }
    }
    ensure!(duplicates > 0, "no instance had duplicate scores");
    Ok(format!(
        "{} instances × 9 alphas, {duplicates} with duplicate scores",
        instances.len()
    ))
}

fn ac3_invariants(instances: &[Instance]) -> Outcome {
    let mut checks = 0usize;
    for (i, inst) in instances.iter().enumerate() {
        let n = inst.scores.len();
        let mut previous: Option<&BTreeSet<usize>> = None;
        for (j, (th, kept)) in inst.runs.iter().enumerate() {
            let alpha = (j + 1) as f64 / 10.0;
            for (r, s) in inst.scores.iter().enumerate() {
                if kept.contains(&r) {
                    ensure!(s >= th, "instance {i} α={alpha}: kept score {s} < {th}");
                } else {
                    ensure!(s < th, "instance {i} α={alpha}: excluded score {s} >= {th}");
                }
            }
            let floor = (n * (j + 1) / 10).clamp(1, n);
            ensure!(
                floor == fraction_count(n, alpha, RoundMode::Floor),
                "k mismatch at n={n} α={alpha}"
            );
            ensure!(
                kept.len() >= floor,
                "instance {i} α={alpha}: kept {} < {floor}",
                kept.len()
            );
            if let Some(p) = previous {
                ensure!(
                    p.is_subset(kept),
                    "instance {i}: kept set at α={alpha} does not contain the smaller one"
                );
            }
            previous = Some(kept);
            checks += 1;
        }
    }
    Ok(format!("{checks} selections, 0 violations"))
}

fn encode_sidecar(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut b = b"MMEB".to_vec();
    b.extend(1u16.to_le_bytes());
    b.extend([1u8, 0]);
    b.extend((m.dim() as u32).to_le_bytes());
    b.extend((m.count() as u64).to_le_bytes());
    for v in m.values() {
        b.extend(v.to_le_bytes());
    }
    b
}

fn random_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..5) {
        0 => Value::from(rng.gen::<i64>()),
        1 => Value::from(rng.gen::<bool>()),
        2 => Value::from(fuzz_text(rng)),
        3 => Value::Null,
        _ => serde_json::json!({ "nested": [rng.gen::<u8>(), fuzz_text(rng)] }),
    }
}

fn random_f32(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let v = match rng.gen_range(0..4) {
            0 => f32::from_bits(rng.gen()),
            1 => 0.0,
            _ => rng.gen_range(-1.0..1.0),
        };
        if v.is_finite() {
            return v;
        }
    }
}

fn ac4_sidecars() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bytes = 0usize;
    for i in 0..100 {
        let n = rng.gen_range(0..=1000);
        let dim = rng.gen_range(1..=128);
        let samples: Vec<Sample> = (0..n)
            .map(|r| {
                let mut s = Sample::new(format!("s{i}-{r}"), fuzz_text(&mut rng));
                if rng.gen_bool(0.5) {
                    s.url = Some(format!("https://img.example/{r}.jpg"));
                }
                if rng.gen_bool(0.5) {
                    s = s.with_size(rng.gen_range(1..4000), rng.gen_range(1..4000));
                }
                let extras: Map<String, Value> = (0..rng.gen_range(0..3))
                    .map(|k| (format!("x{k}"), random_value(&mut rng)))
                    .collect();
                s.extra = extras;
                s
            })
            .collect();
        let image = EmbeddingMatrix::new(dim, (0..n * dim).map(|_| random_f32(&mut rng)).collect())
            .map_err(|e| e.to_string())?;
        let text = rng.gen_bool(0.3).then(|| {
            EmbeddingMatrix::new(dim, (0..n * dim).map(|_| random_f32(&mut rng)).collect()).unwrap()
        });
        let shard = Shard::with_embeddings(format!("shard-{i}"), samples, text, Some(image))
            .map_err(|e| e.to_string())?;
        let paths = write_shard(&shard, dir.path()).map_err(|e| e.to_string())?;

        let on_disk =
            std::fs::read(paths.image_embeddings.as_ref().unwrap()).map_err(|e| e.to_string())?;
        ensure!(
            on_disk == encode_sidecar(shard.image_embeddings().unwrap()),
            "shard {i}: image sidecar bytes differ"
        );
        bytes += on_disk.len();
        let back = read_shard(&paths.metadata, &ReadOptions::auto()).map_err(|e| e.to_string())?;
        ensure!(
            back.samples() == shard.samples(),
            "shard {i}: metadata differs"
        );
        let same = |a: Option<&EmbeddingMatrix>, b: Option<&EmbeddingMatrix>| match (a, b) {
            (Some(a), Some(b)) => a.dim() == b.dim() && encode_sidecar(a) == encode_sidecar(b),
            (None, None) => true,
            _ => false,
        };
        ensure!(
            same(back.image_embeddings(), shard.image_embeddings()),
            "shard {i}: image payload differs"
        );
        ensure!(
            same(back.text_embeddings(), shard.text_embeddings()),
            "shard {i}: text payload differs"
        );
    }
    Ok(format!("100 shards, {bytes} sidecar bytes"))
}

fn toy_texts() -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut v: Vec<String> = [
        "Samsung phone",
        "a red bike by the sea",
        "日本語 caption",
        "x",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    v.extend((0..300).map(|_| fuzz_text(&mut rng)));
    v
}

fn toy_dump() -> String {
    let mut out = String::new();
    for t in toy_texts() {
        match toy_embed(&t, 64, 7) {
            TextVector::Empty => out.push_str("empty\n"),
            TextVector::Vector(v) => {
                let hex: Vec<String> = v.iter().map(|x| format!("{:08x}", x.to_bits())).collect();
                out.push_str(&hex.join(" "));
                out.push('\n');
            }
        }
    }
    out
}

fn ac5_toy() -> Outcome {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let o = Command::new(&exe)
            .env(TOY_DUMP_ENV, "1")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "child run failed");
        runs.push(o.stdout);
    }
    ensure!(runs[0] == runs[1], "vectors differ between process runs");
    ensure!(
        runs[0] == toy_dump().into_bytes(),
        "child vectors differ from this process"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut checked = 0;
    for t in toy_texts()
        .into_iter()
        .chain((0..10_000).map(|_| fuzz_text(&mut rng)))
    {
        if let TextVector::Vector(v) = toy_embed(&t, 64, 7) {
            let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            ensure!((norm - 1.0).abs() <= 1e-6, "norm {norm} for {t:?}");
            let c = cosine(&v, &v).map_err(|e| e.to_string())?;
            ensure!((c as f64 - 1.0).abs() <= 1e-6, "self-cosine {c} for {t:?}");
            checked += 1;
        } else {
            ensure!(t.trim().is_empty(), "non-blank {t:?} embedded as empty");
        }
    }
    Ok(format!(
        "2 process runs agree; {checked} non-empty vectors normalized"
    ))
}

fn ac6_remote() -> Outcome {
    let t = Instant::now();
    let dim = 16;
    let client = |server: &MockServer| {
        RemoteProvider::new(RemoteConfig {
            endpoint: server.url(),
            dim,
            batch_size: 100,
            max_retries: 3,
            backoff_base_ms: 10,
            backoff_max_ms: 100,
            timeout_ms: 2_000,
            ..RemoteConfig::default()
        })
    };
    let server = MockServer::start(dim, MockBehavior::default()).map_err(|e| e.to_string())?;
    let texts: Vec<String> = (0..250).map(|i| format!("input {i}")).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let out = client(&server)
        .embed_batch(&refs)
        .map_err(|e| e.to_string())?;
    ensure!(
        server.log().len() == 3,
        "{} requests for 250 inputs",
        server.log().len()
    );
    ensure!(
        out.iter()
            .zip(&texts)
            .all(|(v, t)| *v == mock_vector(t, dim)),
        "outputs out of order"
    );

    let server = MockServer::start(
        dim,
        MockBehavior {
            fail_first: 1,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let out = client(&server)
        .embed_batch(&refs[..10])
        .map_err(|e| e.to_string())?;
    let statuses: Vec<u16> = server.log().iter().map(|r| r.status).collect();
    ensure!(statuses == [503, 200], "statuses {statuses:?}");
    ensure!(
        out[9] == mock_vector("input 9", dim),
        "retried output wrong"
    );

    let server = MockServer::start(
        dim,
        MockBehavior {
            wrong_dim: Some(dim + 3),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let err = client(&server).embed_batch(&refs[..10]).unwrap_err();
    ensure!(
        matches!(err, EmbedError::DimMismatch { .. }),
        "wrong dim gave {err:?}"
    );

    within(t.elapsed(), 5.0)?;
    Ok("3 requests, one retry after 503, DimMismatch on wrong dim".into())
}

fn ac7_directional() -> Outcome {
    let t = Instant::now();
    let (mut fewer_numbers, mut recall_ok) = (0, 0);
    for seed in 0..20 {
        let spec = BenchSpec {
            corpus: SyntheticCorpusSpec {
                n: 10_000,
                contamination_rate: 0.5,
                seed,
                ..Default::default()
            },
            alpha: 0.4,
            rules: MaskRules::default(),
        };
        let r = run_bench(&spec).map_err(|e| e.to_string())?;
        fewer_numbers +=
            (r.text_masked.num_presence_rate < r.clip_fraction.num_presence_rate) as usize;
        recall_ok += (r.text_masked.recall >= r.clip_fraction.recall) as usize;
    }
    let summary =
        format!("fewer numbers in {fewer_numbers}/20 seeds, recall not lower in {recall_ok}/20");
    ensure!(fewer_numbers >= 18 && recall_ok >= 15, "{summary}");
    within(t.elapsed(), 60.0)?;
    Ok(summary)
}

fn check_histogram(scores: &[f32], spec: BinSpec) -> Result<(), String> {
    let h = score_histogram(scores, spec).map_err(|e| e.to_string())?;
    let sentinels = scores.iter().filter(|s| **s == SENTINEL).count() as u64;
    ensure!(
        h.out_of_range == 0,
        "{} scores out of range",
        h.out_of_range
    );
    ensure!(
        h.sentinel_count == sentinels,
        "sentinel count {} != {sentinels}",
        h.sentinel_count
    );
    ensure!(
        h.binned_count() + h.sentinel_count == scores.len() as u64,
        "counts do not sum to n"
    );
    ensure!(
        h.bins[0].start == spec.lo,
        "first bin starts at {}",
        h.bins[0].start
    );
    ensure!(
        h.bins.last().unwrap().end > spec.hi,
        "last bin does not cover hi"
    );
    for w in h.bins.windows(2) {
        ensure!(
            w[0].start < w[0].end && w[0].end == w[1].start,
            "bins not contiguous at {}",
            w[0].end
        );
    }
    let mut expected = vec![0u64; h.bins.len()];
    for &s in scores.iter().filter(|s| **s != SENTINEL) {
        let v = s as f64;
        let hits: Vec<usize> = (0..h.bins.len())
            .filter(|&i| h.bins[i].start <= v && v < h.bins[i].end)
            .collect();
        ensure!(
            hits.len() == 1,
            "score {s} falls in {} half-open bins",
            hits.len()
        );
        expected[hits[0]] += 1;
    }
    ensure!(
        h.bins.iter().map(|b| b.count).eq(expected),
        "bin counts disagree with half-open membership"
    );
    Ok(())
}

fn ac8_histograms() -> Outcome {
    let mut tables = 0;
    for seed in 0..10 {
        let shard = generate_synthetic(&SyntheticCorpusSpec {
            n: 2000,
            dim: 32,
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let toy = ToyProvider::new(32, 7);
        for channel in [Channel::Original, Channel::Masked] {
            let table = score_shard(
                &shard,
                Providers::single(&toy),
                &MaskRules::default(),
                channel,
            )
            .map_err(|e| e.to_string())?;
            let scores: Vec<f32> = table.scores().collect();
            for spec in [
                BinSpec::default(),
                BinSpec {
                    bin_width: 0.05,
                    ..BinSpec::default()
                },
            ] {
                check_histogram(&scores, spec)?;
                tables += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let mut scores: Vec<f32> = (0..rng.gen_range(0..3000))
            .map(|_| {
                if rng.gen_bool(0.1) {
                    SENTINEL
                } else {
                    rng.gen_range(-1.0f32..=1.0)
                }
            })
            .collect();
        scores.extend([-1.0, -0.5, 0.0, 0.25, 0.5, 1.0]);
        check_histogram(&scores, BinSpec::default())?;
        tables += 1;
    }
    Ok(format!("{tables} score tables conserved"))
}

fn pipeline_shard(rng: &mut ChaCha8Rng, i: usize) -> Shard {
    let words = [
        "sunset", "over", "the", "sea", "(2019)", "IMG_0042", "[HD", "view]", "Ünï", "4k", "١٢",
        "( x )", "日本",
    ];
    let n = rng.gen_range(20..200);
    let samples: Vec<Sample> = (0..n)
        .map(|r| {
            let caption = if rng.gen_bool(0.2) {
                fuzz_text(rng)
            } else {
                (0..rng.gen_range(0..9))
                    .map(|_| *words.choose(rng).unwrap())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            Sample::new(format!("p{i}-{r}"), caption)
        })
        .collect();
    let image = i.is_multiple_of(2).then(|| {
        EmbeddingMatrix::new(64, (0..n * 64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    });
    Shard::with_embeddings(format!("p{i}"), samples, None, image).unwrap()
}

fn ac9_pipeline() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_mmfilter");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = |path: &Path| path.to_str().unwrap().to_string();
    for i in 0..10 {
        let shard = pipeline_shard(&mut rng, i);
        let paths = write_shard(&shard, dir.path()).map_err(|e| e.to_string())?;
        let meta = p(&paths.metadata);
        let piped = dir.path().join(format!("piped-{i}.jsonl"));
        let direct = dir.path().join(format!("direct-{i}.jsonl"));

        let mut masker = Command::new(bin)
            .args(["mask", "--in", &meta])
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut scorer = Command::new(bin);
        scorer.args([
            "score",
            "-",
            "--channel",
            "original",
            "--dim",
            "64",
            "--out",
            &p(&piped),
        ]);
        if let Some(img) = &paths.image_embeddings {
            scorer.args(["--image-emb", &p(img)]);
        }
        let status = scorer
            .stdin(masker.stdout.take().unwrap())
            .status()
            .map_err(|e| e.to_string())?;
        ensure!(
            masker.wait().map_err(|e| e.to_string())?.success() && status.success(),
            "shard {i}: pipeline failed"
        );

        let status = Command::new(bin)
            .args([
                "score",
                &meta,
                "--channel",
                "masked",
                "--dim",
                "64",
                "--out",
                &p(&direct),
            ])
            .status()
            .map_err(|e| e.to_string())?;
        ensure!(status.success(), "shard {i}: masked scoring failed");
        let (a, b) = (
            std::fs::read(&piped).unwrap(),
            std::fs::read(&direct).unwrap(),
        );
        ensure!(!a.is_empty() && a == b, "shard {i}: score files differ");
    }
    Ok("10 shards byte-identical".into())
}

fn run_one(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {id} {name}: {detail} [{secs:.2}s]");
    let _ = std::io::stdout().flush();
    outcome.is_ok()
}

fn main() -> ExitCode {
    if std::env::var_os(TOY_DUMP_ENV).is_some() {
        print!("{}", toy_dump());
        return ExitCode::SUCCESS;
    }
    let instances = fraction_instances();
    let results = [
        run_one(1, "masker purity and idempotence", ac1_masker),
        run_one(2, "fraction filter matches full-sort reference", || {
            instances
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|i| ac2_oracle(i))
        }),
        run_one(3, "separation, cardinality and nesting", || {
            instances
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|i| ac3_invariants(i))
        }),
        run_one(4, "sidecar round trip", ac4_sidecars),
        run_one(5, "toy embedder determinism and normalization", ac5_toy),
        run_one(6, "remote client against mock server", ac6_remote),
        run_one(
            7,
            "masked filter keeps fewer numbers on synthetic data",
            ac7_directional,
        ),
        run_one(8, "histogram conservation", ac8_histograms),
        run_one(9, "mask | score equals masked-channel score", ac9_pipeline),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
