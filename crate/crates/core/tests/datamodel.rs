use std::path::Path;

use mmfilter_core::datamodel::{read_jsonl, sidecar_path, write_jsonl, DataError};
use mmfilter_core::{read_shard, write_shard, EmbeddingMatrix, ReadOptions, Sample, Shard};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

/// Independent encoder for the sidecar layout.
fn encode(dim: u32, rows: &[Vec<f32>]) -> Vec<u8> {
    let mut b = b"MMEB".to_vec();
    b.extend([1u8, 0]); // version 1, little-endian
    b.push(1); // float32
    b.push(0);
    b.extend(dim.to_le_bytes());
    b.extend((rows.len() as u64).to_le_bytes());
    for r in rows {
        for v in r {
            b.extend(v.to_bits().to_le_bytes());
        }
    }
    b
}

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        any::<f32>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0f32),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE),
        Just(f32::MAX),
    ]
}

fn extra_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        "\\PC{0,12}".prop_map(Value::from),
        Just(Value::Null),
        prop::collection::vec(any::<u8>(), 0..4).prop_map(|v| json!(v)),
        "[a-z]{1,5}".prop_map(|k| json!({ k: [1.5, "x"] })),
    ]
}

fn sample(i: usize) -> impl Strategy<Value = Sample> {
    (
        "\\PC{0,40}",
        prop::option::of("https://[a-z]{1,8}\\.example/[a-z0-9]{1,8}\\.jpg"),
        prop::option::of((1u32..5000, 1u32..5000)),
        prop::collection::vec(("x_[a-z]{1,6}", extra_value()), 0..3),
    )
        .prop_map(move |(caption, url, size, extras)| {
            let mut s = Sample::new(format!("u{i:05}"), caption);
            s.url = url;
            if let Some((w, h)) = size {
                s = s.with_size(w, h);
            }
            s.extra = extras.into_iter().collect::<Map<String, Value>>();
            s
        })
}

fn shard() -> impl Strategy<Value = (Vec<Sample>, usize, Vec<f32>, bool)> {
    (0usize..60, 1usize..=128).prop_flat_map(|(n, dim)| {
        let samples: Vec<_> = (0..n).map(sample).collect();
        (
            samples,
            Just(dim),
            prop::collection::vec(finite_f32(), n * dim),
            any::<bool>(),
        )
    })
}

fn bits(m: &EmbeddingMatrix) -> Vec<u32> {
    m.values().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn shard_round_trip((samples, dim, values, with_text) in shard()) {
        let dir = tempfile::tempdir().unwrap();
        let image = EmbeddingMatrix::new(dim, values.clone()).unwrap();
        let text = with_text.then(|| EmbeddingMatrix::new(dim, values.iter().map(|v| -v).collect()).unwrap());
        let original = Shard::with_embeddings("s-1", samples, text, Some(image)).unwrap();
        let paths = write_shard(&original, dir.path()).unwrap();

        let rows: Vec<Vec<f32>> = values.chunks(dim).map(<[f32]>::to_vec).collect();
        let on_disk = std::fs::read(paths.image_embeddings.as_ref().unwrap()).unwrap();
        prop_assert_eq!(on_disk, encode(dim as u32, &rows));

        let back = read_shard(&paths.metadata, &ReadOptions::auto()).unwrap();
        prop_assert_eq!(back.name(), "s-1");
        prop_assert_eq!(back.samples(), original.samples());
        prop_assert_eq!(bits(back.image_embeddings().unwrap()), bits(original.image_embeddings().unwrap()));
        prop_assert_eq!(back.text_embeddings().map(bits), original.text_embeddings().map(bits));
    }

    #[test]
    fn jsonl_round_trip(samples in prop::collection::vec(sample(0), 0..20)) {
        let samples: Vec<Sample> = samples
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| { s.uid = format!("id-{i}"); s })
            .collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &samples).unwrap();
        prop_assert_eq!(read_jsonl(&buf[..]).unwrap(), samples);
    }
}

#[test]
fn field_order_and_extras_preserved() {
    let line =
        r#"{"uid":"a","text":"cat","zeta":1,"url":"u","alpha":{"b":2,"a":1},"width":3,"height":4}"#;
    let s = Sample::from_json_line(line, 1).unwrap();
    assert_eq!(s.url.as_deref(), Some("u"));
    assert_eq!((s.width, s.height), (Some(3), Some(4)));
    assert_eq!(
        s.to_json_line(),
        r#"{"uid":"a","text":"cat","url":"u","width":3,"height":4,"zeta":1,"alpha":{"b":2,"a":1}}"#
    );
}

#[test]
fn malformed_records() {
    for (line, why) in [
        ("{\"text\":\"x\"}", "missing uid"),
        ("{\"uid\":1,\"text\":\"x\"}", "numeric uid"),
        ("{\"uid\":\"a\"}", "missing text"),
        ("{\"uid\":\"a\",\"text\":\"x\",\"width\":0}", "zero width"),
        (
            "{\"uid\":\"a\",\"text\":\"x\",\"width\":-3}",
            "negative width",
        ),
        ("[1,2]", "not an object"),
        ("{\"uid\":\"a\",", "truncated"),
    ] {
        assert!(
            matches!(
                Sample::from_json_line(line, 7),
                Err(DataError::MalformedRecord { line: 7, .. })
            ),
            "{why}"
        );
    }
    let err =
        read_jsonl("{\"uid\":\"a\",\"text\":\"x\"}\n\n{\"uid\":\"b\",\"text\":\"y\"}\n".as_bytes())
            .unwrap_err();
    assert!(matches!(err, DataError::MalformedRecord { line: 2, .. }));
    assert_eq!(
        read_jsonl("{\"uid\":\"a\",\"text\":\"x\"}\n\n\n".as_bytes())
            .unwrap()
            .len(),
        1
    );
}

#[test]
fn shard_invariants() {
    let two = vec![Sample::new("a", "x"), Sample::new("a", "y")];
    assert!(matches!(
        Shard::new("s", two),
        Err(DataError::DuplicateUid { .. })
    ));
    let m = EmbeddingMatrix::new(2, vec![0.0; 6]).unwrap();
    let err = Shard::with_embeddings("s", vec![Sample::new("a", "x")], None, Some(m)).unwrap_err();
    assert!(matches!(
        err,
        DataError::EmbeddingCountMismatch {
            matrix_rows: 3,
            samples: 1,
            ..
        }
    ));
    assert!(matches!(
        EmbeddingMatrix::new(0, vec![]),
        Err(DataError::ZeroDim)
    ));
    assert!(matches!(
        EmbeddingMatrix::new(3, vec![0.0; 4]),
        Err(DataError::RaggedMatrix { .. })
    ));
    assert!(matches!(
        EmbeddingMatrix::new(2, vec![0.0, 1.0, f32::NAN, 0.0]),
        Err(DataError::NonFinite { row: 1, col: 0 })
    ));
}

#[test]
fn corrupt_sidecars_rejected() {
    let p = Path::new("x.image.emb");
    let good = encode(2, &[vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert_eq!(
        EmbeddingMatrix::from_sidecar_bytes(&good, p)
            .unwrap()
            .count(),
        2
    );

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(
        EmbeddingMatrix::from_sidecar_bytes(&bad_magic, p),
        Err(DataError::BadMagic { .. })
    ));

    let mut bad_version = good.clone();
    bad_version[4] = 2;
    assert!(matches!(
        EmbeddingMatrix::from_sidecar_bytes(&bad_version, p),
        Err(DataError::BadVersion { version: 2, .. })
    ));

    let mut bad_dtype = good.clone();
    bad_dtype[6] = 2;
    assert!(matches!(
        EmbeddingMatrix::from_sidecar_bytes(&bad_dtype, p),
        Err(DataError::UnsupportedDtype { dtype: 2, .. })
    ));

    let truncated = &good[..good.len() - 1];
    assert!(matches!(
        EmbeddingMatrix::from_sidecar_bytes(truncated, p),
        Err(DataError::SizeMismatch {
            expected: 36,
            actual: 35,
            ..
        })
    ));
    let mut extra = good.clone();
    extra.push(0);
    assert!(matches!(
        EmbeddingMatrix::from_sidecar_bytes(&extra, p),
        Err(DataError::SizeMismatch { .. })
    ));

    let mut huge_count = good.clone();
    huge_count[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(matches!(
        EmbeddingMatrix::from_sidecar_bytes(&huge_count, p),
        Err(DataError::SizeMismatch { .. })
    ));

    let mut zero_dim = good.clone();
    zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(
        EmbeddingMatrix::from_sidecar_bytes(&zero_dim, p),
        Err(DataError::ZeroDim)
    ));

    let inf = encode(1, &[vec![f32::INFINITY]]);
    assert!(matches!(
        EmbeddingMatrix::from_sidecar_bytes(&inf, p),
        Err(DataError::NonFinite { .. })
    ));
}

#[test]
fn explicit_and_missing_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let shard = Shard::new("plain", vec![Sample::new("a", "x"), Sample::new("b", "y")]).unwrap();
    let paths = write_shard(&shard, dir.path()).unwrap();
    assert!(paths.image_embeddings.is_none());
    let back = read_shard(&paths.metadata, &ReadOptions::auto()).unwrap();
    assert!(back.image_embeddings().is_none());

    let elsewhere = dir.path().join("vectors.emb");
    EmbeddingMatrix::new(3, vec![0.5; 6])
        .unwrap()
        .write_sidecar(&elsewhere)
        .unwrap();
    let opts = ReadOptions {
        image_embeddings: Some(elsewhere),
        ..Default::default()
    };
    assert_eq!(
        read_shard(&paths.metadata, &opts)
            .unwrap()
            .image_embeddings()
            .unwrap()
            .dim(),
        3
    );

    // A sidecar with the wrong row count is rejected on read.
    EmbeddingMatrix::new(3, vec![0.5; 9])
        .unwrap()
        .write_sidecar(&sidecar_path(dir.path(), "plain", "image"))
        .unwrap();
    assert!(matches!(
        read_shard(&paths.metadata, &ReadOptions::auto()),
        Err(DataError::EmbeddingCountMismatch { .. })
    ));
}
