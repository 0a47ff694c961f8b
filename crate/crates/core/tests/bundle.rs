use std::collections::BTreeMap;
use std::fs;

use msa_core::bundle::{
    pad_and_mask, read_bundle, split_view, write_bundle, FeatureBundle, InstanceType, Manifest,
    Modality, ModalityBlock, SampleMeta, Scenario, Split,
};
use msa_core::Error;
use proptest::prelude::*;

fn block_from_fn(n: usize, t: usize, d: usize, lengths: &[usize], f: impl Fn(usize, usize, usize) -> f32) -> ModalityBlock {
    let mut data = vec![0.0f32; n * t * d];
    for i in 0..n {
        for s in 0..lengths[i] {
            for k in 0..d {
                data[(i * t + s) * d + k] = f(i, s, k);
            }
        }
    }
    ModalityBlock::new(d, t, data, lengths.to_vec()).unwrap()
}

fn small_bundle() -> FeatureBundle {
    let mut a = SampleMeta::new("s0", Split::Train, 1.5);
    a.label_a = Some(-0.5);
    a.scenario = Some(Scenario::VarietyShow);
    let mut b = SampleMeta::new("s1", Split::Test, -2.0);
    b.instance_type = Some(InstanceType::Difficult);
    let manifest = Manifest {
        dataset_name: "toy".into(),
        label_range: (-3.0, 3.0),
        samples: vec![a, b],
    };
    let mut blocks = BTreeMap::new();
    blocks.insert(
        Modality::Audio,
        block_from_fn(2, 10, 4, &[7, 10], |i, s, k| (i * 100 + s * 10 + k) as f32 * 0.1 + 0.05),
    );
    FeatureBundle::new(manifest, blocks).unwrap()
}

fn bits(b: &FeatureBundle) -> Vec<(Modality, Vec<u32>)> {
    b.blocks
        .iter()
        .map(|(&m, blk)| (m, blk.data.iter().map(|x| x.to_bits()).collect()))
        .collect()
}

#[test]
fn round_trip_preserves_everything() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.msab");
    let b = small_bundle();
    write_bundle(&b, &path).unwrap();
    assert!(path.join("manifest.json").exists());
    assert!(path.join("audio.bin").exists());
    let back = read_bundle(&path).unwrap();
    assert_eq!(back, b);
    assert_eq!(bits(&back), bits(&b));
}

#[test]
fn padded_tails_are_zero_after_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = small_bundle();
    write_bundle(&b, dir.path()).unwrap();
    let back = read_bundle(dir.path()).unwrap();
    let blk = &back.blocks[&Modality::Audio];
    let mut scanned = 0;
    for i in 0..blk.num_samples() {
        for s in blk.lengths[i]..blk.max_len {
            for k in 0..blk.feature_dim {
                assert_eq!(blk.data[(i * blk.max_len + s) * blk.feature_dim + k].to_bits(), 0);
                scanned += 1;
            }
        }
    }
    assert_eq!(scanned, 3 * 4);
}

#[test]
fn out_of_range_label_is_rejected_with_sample_id() {
    let mut b = small_bundle();
    b.manifest.samples[1].label_m = 3.5;
    let dir = tempfile::tempdir().unwrap();
    let err = write_bundle(&b, dir.path()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Validation(_)), "{msg}");
    assert!(msg.contains("'s1'") && msg.contains("3.5"), "{msg}");
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn out_of_range_unimodal_label_is_rejected() {
    let mut b = small_bundle();
    b.manifest.samples[0].label_t = Some(-4.0);
    let msg = b.validate().unwrap_err().to_string();
    assert!(msg.contains("label_t") && msg.contains("'s0'"), "{msg}");
}

#[test]
fn manifest_sample_count_disagreeing_with_array_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&small_bundle(), dir.path()).unwrap();
    let mpath = dir.path().join("manifest.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
    let extra = json["samples"][0].clone();
    let mut extra = extra;
    extra["id"] = "s2".into();
    json["samples"].as_array_mut().unwrap().push(extra);
    fs::write(&mpath, serde_json::to_string(&json).unwrap()).unwrap();
    let err = read_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
    let msg = err.to_string();
    assert!(msg.contains("N=2") && msg.contains("N=3"), "{msg}");
}

#[test]
fn nan_is_located_by_sample_modality_and_frame() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&small_bundle(), dir.path()).unwrap();
    let bin = dir.path().join("audio.bin");
    let mut raw = fs::read(&bin).unwrap();
    // sample 1, frame 3, dim 2
    let offset = 20 + 4 * ((1 * 10 + 3) * 4 + 2);
    raw[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&bin, raw).unwrap();
    match read_bundle(dir.path()).unwrap_err() {
        Error::NonFinite {
            sample,
            modality,
            frame,
            dim,
        } => {
            assert_eq!(sample, "s1");
            assert_eq!(modality, Modality::Audio);
            assert_eq!((frame, dim), (3, 2));
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn corrupted_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&small_bundle(), dir.path()).unwrap();
    let bin = dir.path().join("audio.bin");
    let mut raw = fs::read(&bin).unwrap();
    raw[1] = b'Z';
    fs::write(&bin, &raw).unwrap();
    let msg = read_bundle(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("magic"), "{msg}");
    fs::write(&bin, &raw[..10]).unwrap();
    let msg = read_bundle(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("truncated"), "{msg}");
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_bundle(dir.path()), Err(Error::Io { .. })));
    write_bundle(&small_bundle(), dir.path()).unwrap();
    fs::remove_file(dir.path().join("audio.bin")).unwrap();
    let msg = read_bundle(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("audio.bin"), "{msg}");
}

#[test]
fn nonzero_padding_is_rejected() {
    let mut b = small_bundle();
    let blk = b.blocks.get_mut(&Modality::Audio).unwrap();
    blk.data[(0 * 10 + 8) * 4] = 1.0;
    let msg = b.validate().unwrap_err().to_string();
    assert!(msg.contains("padding") && msg.contains("frame 8"), "{msg}");
}

#[test]
fn pad_and_mask_builds_masks_from_lengths() {
    let blk = block_from_fn(2, 3, 1, &[2, 3], |i, s, _| (i * 3 + s + 1) as f32);
    let p = pad_and_mask(&blk, 3, false).unwrap();
    assert_eq!(p.mask, vec![true, true, false, true, true, true]);
    assert_eq!(p.data, blk.data);
    assert!(pad_and_mask(&blk, 2, false).is_err());
}

#[test]
fn pad_to_longer_length_keeps_zero_tail() {
    let blk = block_from_fn(2, 3, 2, &[2, 3], |i, s, k| (i + s + k + 1) as f32);
    let p = pad_and_mask(&blk, 5, false).unwrap();
    for i in 0..2 {
        for t in 0..5 {
            let valid = t < blk.lengths[i];
            assert_eq!(p.mask[i * 5 + t], valid);
            for k in 0..2 {
                let got = p.data[(i * 5 + t) * 2 + k];
                if valid {
                    assert_eq!(got, blk.data[(i * 3 + t) * 2 + k]);
                } else {
                    assert_eq!(got, 0.0);
                }
            }
        }
    }
}

#[test]
fn truncation_keeps_first_frame_and_clamps_lengths() {
    let blk = block_from_fn(3, 4, 2, &[1, 3, 4], |i, s, k| (i * 10 + s * 2 + k) as f32 + 0.5);
    let p = pad_and_mask(&blk, 1, true).unwrap();
    assert_eq!(p.lengths, vec![1, 1, 1]);
    let oracle: Vec<f32> = (0..3)
        .flat_map(|i| blk.data[i * 8..i * 8 + 2].to_vec())
        .collect();
    assert_eq!(p.data, oracle);
    assert_eq!(p.mask, vec![true; 3]);
}

fn split_bundle(splits: &[Split]) -> FeatureBundle {
    let samples: Vec<SampleMeta> = splits
        .iter()
        .enumerate()
        .map(|(i, &s)| SampleMeta::new(format!("id{i}"), s, i as f64 * 0.1))
        .collect();
    let n = samples.len();
    let lengths = vec![1; n];
    let mut blocks = BTreeMap::new();
    blocks.insert(Modality::Text, block_from_fn(n, 1, 1, &lengths, |i, _, _| i as f32));
    FeatureBundle::new(
        Manifest {
            dataset_name: "splits".into(),
            label_range: (-3.0, 3.0),
            samples,
        },
        blocks,
    )
    .unwrap()
}

#[test]
fn split_view_counts_and_partition() {
    use Split::*;
    let b = split_bundle(&[Train, Test, Train, Valid, Train]);
    let train = split_view(&b, Train).unwrap();
    assert_eq!(train.len(), 3);
    assert_eq!(train.blocks[&Modality::Text].data, vec![0.0, 2.0, 4.0]);
    let mut ids: Vec<String> = Split::ALL
        .iter()
        .flat_map(|&s| split_view(&b, s).unwrap().manifest.samples.into_iter().map(|m| m.id))
        .collect();
    ids.sort();
    let mut all: Vec<String> = b.samples().iter().map(|s| s.id.clone()).collect();
    all.sort();
    assert_eq!(ids, all);
}

#[test]
fn split_view_preserves_manifest_order() {
    use Split::*;
    let b = split_bundle(&[Valid, Train, Valid, Valid, Test, Train, Valid]);
    let oracle: Vec<&str> = b
        .samples()
        .iter()
        .filter(|s| s.split == Valid)
        .map(|s| s.id.as_str())
        .collect();
    let view = split_view(&b, Valid).unwrap();
    let got: Vec<&str> = view.samples().iter().map(|s| s.id.as_str()).collect();
    assert_eq!(got, oracle);
}

#[test]
fn empty_split_is_an_error() {
    let b = split_bundle(&[Split::Train, Split::Train]);
    assert!(matches!(split_view(&b, Split::Test), Err(Error::EmptySplit(Split::Test))));
}

fn arb_bundle() -> impl Strategy<Value = FeatureBundle> {
    let modality_set = prop::sample::subsequence(Modality::ALL.to_vec(), 1..=3);
    (1usize..6, modality_set, any::<u64>()).prop_map(|(n, mods, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<SampleMeta> = (0..n)
            .map(|i| {
                let split = Split::ALL[rng.random_range(0..3)];
                let mut s = SampleMeta::new(format!("sample-{i}"), split, rng.random_range(-1.0..=1.0));
                if rng.random_bool(0.5) {
                    s.label_v = Some(rng.random_range(-1.0..=1.0));
                }
                if rng.random_bool(0.3) {
                    s.instance_type = Some(InstanceType::ALL[rng.random_range(0..5)]);
                    s.scenario = Some(Scenario::ALL[rng.random_range(0..3)]);
                }
                s
            })
            .collect();
        let mut blocks = BTreeMap::new();
        for m in mods {
            let t = rng.random_range(1..6);
            let d = rng.random_range(1..5);
            let lengths: Vec<usize> = (0..n).map(|_| rng.random_range(1..=t)).collect();
            let vals: Vec<f32> = (0..n * t * d).map(|_| rng.random::<f32>() * 20.0 - 10.0).collect();
            blocks.insert(m, block_from_fn(n, t, d, &lengths, |i, s, k| vals[(i * t + s) * d + k]));
        }
        FeatureBundle::new(
            Manifest {
                dataset_name: "random".into(),
                label_range: (-1.0, 1.0),
                samples,
            },
            blocks,
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_bundles_round_trip(b in arb_bundle()) {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&b, dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        prop_assert_eq!(bits(&back), bits(&b));
        prop_assert_eq!(back, b);
    }

    #[test]
    fn split_views_partition(b in arb_bundle()) {
        let mut total = 0;
        for s in Split::ALL {
            match split_view(&b, s) {
                Ok(v) => {
                    prop_assert!(v.samples().iter().all(|m| m.split == s));
                    total += v.len();
                }
                Err(Error::EmptySplit(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
        prop_assert_eq!(total, b.len());
    }

    #[test]
    fn padding_stays_zero_through_pad_and_truncate(b in arb_bundle(), lens in prop::collection::vec(1usize..8, 1..4)) {
        for blk in b.blocks.values() {
            let mut cur = blk.clone();
            for &l in &lens {
                cur = pad_and_mask(&cur, l, true).unwrap().into_block().unwrap();
                for i in 0..cur.num_samples() {
                    let tail = &cur.sample(i)[cur.lengths[i] * cur.feature_dim..];
                    prop_assert!(tail.iter().all(|&x| x == 0.0));
                }
            }
        }
    }
}
