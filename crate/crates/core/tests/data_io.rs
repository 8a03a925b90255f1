use caan_core::data_io::*;
use caan_core::error::{AnnotationError, Error, FormatError};
use caan_core::evaluation::{Aggregation, FoldPlan};
use caan_core::generator::ModelConfig;
use caan_core::postprocess::{kts_changepoints, KtsParams};
use caan_core::tensor::Tensor;
use caan_core::training::{Trainer, TrainingConfig};

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        videos: 4,
        min_frames: 40,
        max_frames: 60,
        feature_dim: 6,
        min_segments: 3,
        max_segments: 5,
        seed,
        ..Default::default()
    }
}

fn dataset(name: &str, n: usize) -> Dataset {
    let videos = gen_synthetic(&SyntheticSpec {
        videos: n,
        ..small_spec(n as u64)
    })
    .unwrap();
    Dataset {
        name: name.into(),
        aggregation: Aggregation::Max,
        videos,
    }
}

#[test]
fn feature_file_round_trip_is_bit_exact() {
    let x = Tensor::<f32>::from_fn(7, 3, |i, j| (i as f32 - 3.3) * (j as f32 + 0.1) / 7.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.feat");
    save_features(&path, &x).unwrap();
    let y = load_features(&path).unwrap();
    assert_eq!(x.shape(), y.shape());
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&x), bits(&y));

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"CAAN");
    assert_eq!(bytes[4], 1);
    assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 7);
    assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 3);
    assert_eq!(bytes.len(), 13 + 7 * 3 * 4);
}

#[test]
fn feature_file_errors() {
    let good = encode_features(&Tensor::full(&[2, 2], 1.0f32));

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(decode_features(&bad), Err(FormatError::BadMagic { .. })));

    let mut bad = good.clone();
    bad[4] = 2;
    assert!(matches!(decode_features(&bad), Err(FormatError::VersionMismatch { found: 2, .. })));

    // header claims 3 rows, payload holds 2
    let mut bad = good.clone();
    bad[5..9].copy_from_slice(&3u32.to_le_bytes());
    assert!(matches!(decode_features(&bad), Err(FormatError::Truncated { .. })));

    let mut bad = good.clone();
    bad.push(0);
    assert!(matches!(decode_features(&bad), Err(FormatError::TrailingBytes { .. })));

    let mut bad = good.clone();
    bad[13 + 3 * 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_eq!(decode_features(&bad), Err(FormatError::NonFinite { row: 1, col: 1 }));

    assert!(matches!(decode_features(&good[..7]), Err(FormatError::Truncated { .. })));
    let missing = load_features(std::path::Path::new("/nonexistent/x.feat"));
    assert!(matches!(missing, Err(Error::Io { .. })));
}

#[test]
fn annotation_errors_are_named() {
    let parse = |s: &str| parse_annotation(s);
    assert_eq!(
        parse(r#"{"id":"v","frames":2,"gt_scores":[0.5,1.2]}"#),
        Err(AnnotationError::ScoreRange { index: 1, value: 1.2 })
    );
    assert_eq!(
        parse(r#"{"id":"v","frames":100,"user_summaries":[[[90,110]]]}"#),
        Err(AnnotationError::IntervalBounds {
            user: 0,
            start: 90,
            end: 110,
            frames: 100
        })
    );
    assert!(matches!(
        parse(r#"{"id":"v","frames":100,"user_summaries":[[[0,5]],[[10,20],[15,30]]]}"#),
        Err(AnnotationError::Overlap { user: 1, .. })
    ));
    assert!(matches!(
        parse(r#"{"id":"v","frames":3,"gt_scores":[0.5]}"#),
        Err(AnnotationError::ScoreLength { expected: 3, found: 1 })
    ));
    assert!(matches!(parse("{"), Err(AnnotationError::Parse(_))));
    assert!(parse(r#"{"id":"v","frames":4}"#).is_ok());
}

#[test]
fn dataset_round_trip() {
    let ds = dataset("syn", 4);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &ds).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(ds, back);
    for v in &ds.videos {
        assert!(dir.path().join(format!("{}.feat", v.id)).exists());
        let a = load_annotations(&dir.path().join(format!("{}.json", v.id))).unwrap();
        assert_eq!(a, v.annotation());
    }
    // a sidecar whose id disagrees with its file name is rejected
    std::fs::copy(dir.path().join("video_001.json"), dir.path().join("video_000.json")).unwrap();
    assert!(matches!(
        load_video(dir.path(), "video_000"),
        Err(Error::Annotation(AnnotationError::IdMismatch { .. }))
    ));
}

#[test]
fn synthetic_generation_is_pure() {
    assert_eq!(gen_synthetic(&small_spec(3)).unwrap(), gen_synthetic(&small_spec(3)).unwrap());
    assert_ne!(gen_synthetic(&small_spec(3)).unwrap(), gen_synthetic(&small_spec(4)).unwrap());
    let bad = SyntheticSpec {
        noise: -0.1,
        ..small_spec(0)
    };
    assert!(matches!(gen_synthetic(&bad), Err(Error::Config(_))));
}

#[test]
fn synthetic_videos_satisfy_their_invariants() {
    for v in gen_synthetic(&small_spec(8)).unwrap() {
        let f = v.frames();
        assert!((40..=60).contains(&f));
        v.annotation().validate().unwrap();
        let gt = v.gt_scores.as_ref().unwrap();
        assert!(gt.iter().all(|&s| (0.0..=0.2).contains(&s) || (0.8..=1.0).contains(&s)));
        assert!(gt.iter().any(|&s| s >= 0.8) && gt.iter().any(|&s| s <= 0.2));
        let cp = v.change_points.as_ref().unwrap();
        assert!((3..=5).contains(&cp.len()));
        // gt is uniformly high or low within each planted segment
        for shot in cp.shots() {
            let high = gt[shot.start] >= 0.8;
            assert!(gt[shot.clone()].iter().all(|&s| (s >= 0.8) == high));
        }
        let users = v.user_summaries.as_ref().unwrap();
        let selected: usize = users[0].iter().map(|(s, e)| e - s).sum();
        assert!(selected <= (0.15 * f as f64).floor() as usize);
    }
}

#[test]
fn noiseless_segments_are_constant_and_recoverable() {
    let spec = SyntheticSpec {
        noise: 0.0,
        ..small_spec(5)
    };
    for v in gen_synthetic(&spec).unwrap() {
        let planted = v.change_points.clone().unwrap();
        for shot in planted.shots() {
            for f in shot.clone() {
                assert_eq!(v.features.row(f), v.features.row(shot.start), "within-segment variance is 0");
            }
        }
        let params = KtsParams {
            max_segments: 8,
            penalty: 1e-6,
        };
        let found = kts_changepoints(&v.features, &params).unwrap();
        assert_eq!(found, planted, "{}", v.id);
    }
}

#[test]
fn split_settings() {
    let target = dataset("tvsum", 25);
    let aux = [dataset("summe", 6), dataset("ovp", 4)];
    let ids: Vec<String> = target.videos.iter().map(|v| v.id.clone()).collect();
    let plan = FoldPlan::new(&ids, 5, 1).unwrap();

    let canonical = assemble_split(SplitMode::Canonical, &target, &aux, &plan).unwrap();
    assert_eq!(canonical.len(), 5);
    for (k, s) in canonical.iter().enumerate() {
        assert_eq!(s.test, plan.folds[k]);
        assert_eq!(s.train, plan.train_ids(k));
    }

    let augmented = assemble_split(SplitMode::Augmented, &target, &aux, &plan).unwrap();
    for (a, c) in augmented.iter().zip(&canonical) {
        assert_eq!(a.train.len(), c.train.len() + 10);
        assert_eq!(a.test, c.test);
        assert!(a.train.contains(&qualified_id("summe", "video_000")));
    }

    let transfer = assemble_split(SplitMode::Transfer, &target, &aux, &plan).unwrap();
    assert_eq!(transfer.len(), 1);
    assert_eq!(transfer[0].test, ids);
    assert_eq!(transfer[0].train.len(), 10);
    for id in &transfer[0].train {
        assert!(resolve(id, &target, &aux).is_some());
    }
    assert!(assemble_split(SplitMode::Transfer, &target, &[], &plan).is_err());

    let leaky = Split {
        train: vec!["a".into(), "b".into()],
        test: vec!["b".into()],
    };
    assert!(matches!(check_no_leak(&leaky), Err(Error::Leak(id)) if id == "b"));
}

#[test]
fn checkpoint_round_trip() {
    let config = TrainingConfig {
        model: ModelConfig::tiny(6),
        seed: 4,
        ..Default::default()
    };
    let t = Trainer::new(config.clone()).unwrap();
    let bytes = encode_checkpoint(&config, &t.generator, &t.discriminator);
    let ck = decode_checkpoint(&bytes).unwrap();
    assert_eq!(ck.config, config);
    assert_eq!(ck.generator.params().fingerprint(), t.generator.params().fingerprint());
    assert_eq!(ck.discriminator.params().fingerprint(), t.discriminator.params().fingerprint());
    assert_eq!(encode_checkpoint(&ck.config, &ck.generator, &ck.discriminator), bytes);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_checkpoint(&long).is_err());
}
