use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use msa_core::bundle::{write_bundle, Modality};
use msa_core::extract::*;
use msa_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wave(samples: Vec<f64>) -> WaveBuffer {
    WaveBuffer {
        sample_rate: 16000,
        samples,
    }
}

fn write_i16(path: &Path, channels: u16, samples: &[i16]) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
}

/// Direct O(N^2) DFT magnitudes of the first n/2+1 bins.
fn naive_dft_mag(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

#[test]
fn silence_reads_as_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("silence.wav");
    write_i16(&p, 1, &vec![0; 16000]);
    let w = read_wav(&p).unwrap();
    assert_eq!(w.sample_rate, 16000);
    assert_eq!(w.samples.len(), 16000);
    assert!(w.samples.iter().all(|&s| s == 0.0));
}

#[test]
fn full_scale_int16_scales_below_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("fs.wav");
    write_i16(&p, 1, &[32767, -32768]);
    let w = read_wav(&p).unwrap();
    assert!((w.samples[0] - 0.99997).abs() < 1e-5, "{}", w.samples[0]);
    assert_eq!(w.samples[1], -1.0);
}

#[test]
fn stereo_is_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("st.wav");
    write_i16(&p, 2, &[16384, 0, -8192, -8192]);
    let w = read_wav(&p).unwrap();
    assert_eq!(w.samples, vec![0.25, -0.25]);
}

#[test]
fn float_wav_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    for s in [0.5f32, -0.125] {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
    let w = read_wav(&p).unwrap();
    assert_eq!((w.sample_rate, w.samples), (8000, vec![0.5, -0.125]));
}

#[test]
fn bad_wavs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.wav");
    fs::write(&junk, b"definitely not a riff file").unwrap();
    assert!(matches!(read_wav(&junk), Err(Error::Wav { .. })));

    let empty = dir.path().join("empty.wav");
    write_i16(&empty, 1, &[]);
    assert!(read_wav(&empty).unwrap_err().to_string().contains("no audio"));

    let eight = dir.path().join("u8.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16000,
        bits_per_sample: 8,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&eight, spec).unwrap();
    w.write_sample(3i8).unwrap();
    w.finalize().unwrap();
    assert!(read_wav(&eight).unwrap_err().to_string().contains("unsupported codec"));
}

#[test]
fn sine_peak_lands_on_its_bin() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sine.wav");
    let n = 1600;
    let samples: Vec<i16> = (0..n)
        .map(|i| (0.5 * (2.0 * PI * 440.0 * i as f64 / 16000.0).sin() * 32767.0).round() as i16)
        .collect();
    write_i16(&p, 1, &samples);
    let w = read_wav(&p).unwrap();
    let mags = naive_dft_mag(&w.samples);
    let peak = (0..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
    let hz = peak as f64 * 16000.0 / n as f64;
    assert!((hz - 440.0).abs() <= 10.0, "peak at {hz} Hz");

    // the library STFT sees the same peak in every frame
    let spec = stft(&w, 512, 160, Window::Hann).unwrap();
    for f in 0..spec.frames {
        let row = spec.frame(f);
        let k = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert!((k as f64 * 16000.0 / 512.0 - 440.0).abs() <= 16000.0 / 512.0);
    }
}

#[test]
fn stft_frame_count_example() {
    let s = stft(&wave(vec![0.1; 1024]), 512, 256, Window::Hann).unwrap();
    assert_eq!((s.frames, s.bins), (3, 257));
    assert!(s.magnitudes.iter().all(|&m| m >= 0.0));
}

#[test]
fn stft_rejects_bad_parameters() {
    assert!(stft(&wave(vec![0.0; 100]), 512, 160, Window::Hann).is_err());
    assert!(stft(&wave(vec![0.0; 1000]), 400, 160, Window::Hann).is_err());
    assert!(stft(&wave(vec![0.0; 1000]), 256, 300, Window::Hann).is_err());
}

#[test]
fn stft_matches_naive_dft_of_windowed_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = stft(&wave(x.clone()), 64, 48, Window::Hann).unwrap();
    let win: Vec<f64> = (0..64).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / 64.0).cos())).collect();
    for f in 0..s.frames {
        let seg: Vec<f64> = (0..64).map(|i| x[f * 48 + i] * win[i]).collect();
        let oracle = naive_dft_mag(&seg);
        for (a, b) in s.frame(f).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn dc_signal_peaks_at_bin_zero() {
    let s = stft(&wave(vec![0.7; 2048]), 512, 256, Window::Hann).unwrap();
    for f in 0..s.frames {
        let row = s.frame(f);
        let energy: Vec<f64> = row.iter().map(|m| m * m).collect();
        let total: f64 = energy.iter().sum();
        assert!(energy[1..].iter().all(|&e| e < energy[0]));
        // the Hann main lobe spans bins 0 and 1; nothing leaks further
        assert!((energy[0] + energy[1]) / total >= 0.99);
    }
}

#[test]
fn parseval_holds_per_frame_for_white_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n_fft = 256;
    let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = stft(&wave(x.clone()), n_fft, 128, Window::Hann).unwrap();
    let win: Vec<f64> = (0..n_fft).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos()).collect();
    for f in 0..s.frames {
        let time: f64 = (0..n_fft).map(|i| (x[f * 128 + i] * win[i]).powi(2)).sum();
        let row = s.frame(f);
        let last = row.len() - 1;
        let spectral: f64 = row
            .iter()
            .enumerate()
            .map(|(k, m)| if k == 0 || k == last { m * m } else { 2.0 * m * m })
            .sum::<f64>()
            / n_fft as f64;
        assert!(((spectral - time) / time).abs() < 1e-3, "frame {f}: {spectral} vs {time}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stft_frame_count_formula(exp in 2u32..9, hop_frac in 0.01f64..=1.0, extra in 0usize..3000) {
        let n_fft = 1usize << exp;
        let hop = ((n_fft as f64 * hop_frac) as usize).clamp(1, n_fft);
        let len = n_fft + extra;
        let s = stft(&wave(vec![0.25; len]), n_fft, hop, Window::Hann).unwrap();
        prop_assert_eq!(s.frames, 1 + (len - n_fft) / hop);
        prop_assert_eq!(frame_count(len, n_fft, hop), Some(s.frames));
        prop_assert_eq!(s.magnitudes.len(), s.frames * (n_fft / 2 + 1));
    }
}

#[test]
fn mfcc_defaults_to_twenty_coefficients() {
    let cfg = feature_code("A2").unwrap();
    assert_eq!(cfg.modality, Modality::Audio);
    match cfg.resolve(Path::new(".")).unwrap() {
        Extractor::Mfcc { n_mfcc, .. } => assert_eq!(n_mfcc, 20),
        other => panic!("{other:?}"),
    }
    match ExtractorConfig::new(Modality::Audio, "mfcc").resolve(Path::new(".")).unwrap() {
        Extractor::Mfcc { n_mfcc, .. } => assert_eq!(n_mfcc, 20),
        other => panic!("{other:?}"),
    }
}

#[test]
fn mfcc_of_constant_signal_is_stationary() {
    let m = mfcc(&wave(vec![0.3; 8000]), 512, 160, 40, 20).unwrap();
    assert_eq!(m.cols, 20);
    for c in 0..m.cols {
        let col: Vec<f64> = (0..m.rows).map(|r| m.get(r, c)).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(var < 1e-12, "coefficient {c} variance {var}");
    }
}

#[test]
fn tiny_mfcc_equals_matrix_pipeline() {
    let (sr, n_fft, hop, n_mels, n_mfcc) = (16000.0, 8usize, 4usize, 4usize, 2usize);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let got = mfcc(&wave(x.clone()), n_fft, hop, n_mels, n_mfcc).unwrap();

    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| inv(mel(sr / 2.0) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bins = n_fft / 2 + 1;
    let mut fb = vec![vec![0.0; bins]; n_mels];
    for m in 0..n_mels {
        for k in 0..bins {
            let f = k as f64 * sr / n_fft as f64;
            let up = (f - pts[m]) / (pts[m + 1] - pts[m]);
            let down = (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]);
            fb[m][k] = up.min(down).max(0.0);
        }
    }
    let frames = 1 + (x.len() - n_fft) / hop;
    assert_eq!(got.rows, frames);
    for f in 0..frames {
        let seg: Vec<f64> = (0..n_fft)
            .map(|i| x[f * hop + i] * (0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos()))
            .collect();
        let power: Vec<f64> = naive_dft_mag(&seg).iter().map(|m| m * m).collect();
        let logmel: Vec<f64> = fb
            .iter()
            .map(|w| (w.iter().zip(&power).map(|(a, b)| a * b).sum::<f64>() + 1e-10).ln())
            .collect();
        for k in 0..n_mfcc {
            let norm = if k == 0 { (1.0 / n_mels as f64).sqrt() } else { (2.0 / n_mels as f64).sqrt() };
            let c: f64 = norm
                * logmel
                    .iter()
                    .enumerate()
                    .map(|(n, v)| v * (PI * k as f64 * (n as f64 + 0.5) / n_mels as f64).cos())
                    .sum::<f64>();
            assert!((got.get(f, k) - c).abs() < 1e-6, "frame {f} coef {k}: {} vs {c}", got.get(f, k));
        }
    }
}

#[test]
fn mfcc_rejects_inconsistent_dims() {
    let w = wave(vec![0.1; 1000]);
    assert!(mfcc(&w, 8, 4, 6, 2).is_err());
    assert!(mfcc(&w, 64, 16, 4, 5).is_err());
}

#[test]
fn dct_basis_is_orthonormal() {
    let d = dct_matrix(6, 6);
    for a in 0..6 {
        for b in 0..6 {
            let dot: f64 = d.row(a).iter().zip(d.row(b)).map(|(x, y)| x * y).sum();
            assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
}

#[test]
fn utterance_stats_hand_cases() {
    let one = FeatureMatrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
    assert_eq!(utterance_stats(&one).unwrap(), vec![1.5, -2.0, 0.0, 0.0, 1.5, -2.0, 1.5, -2.0]);
    let two = FeatureMatrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
    assert_eq!(utterance_stats(&two).unwrap(), vec![2.0, 1.0, 1.0, 3.0]);
    assert!(utterance_stats(&FeatureMatrix::new(0, 3, vec![]).unwrap()).is_err());
}

#[test]
fn utterance_stats_match_column_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..6).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let got = utterance_stats(&FeatureMatrix::from_rows(&rows).unwrap()).unwrap();
    for j in 0..6 {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / 50.0;
        let std = (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 50.0).sqrt();
        let min = col.iter().cloned().fold(f64::MAX, f64::min);
        let max = col.iter().cloned().fold(f64::MIN, f64::max);
        assert!((got[j] - mean).abs() < 1e-12);
        assert!((got[6 + j] - std).abs() < 1e-12);
        assert_eq!(got[12 + j], min);
        assert_eq!(got[18 + j], max);
    }
}

const TOY_TABLE: &str = "<unk> 0 0 0\nthe 0.1 0.2 0.3\ngood -1.5 2 0.25\nmovie 3 -0.5 1e-2\nbad 4 5 6\n";

fn toy_table() -> EmbeddingTable {
    EmbeddingTable::parse(TOY_TABLE, Path::new("toy.txt")).unwrap()
}

#[test]
fn oov_tokens_map_to_unk() {
    let t = EmbeddingTable::parse("<unk> 9 8\nhi 1 2\n", Path::new("t")).unwrap();
    let m = text_embed_lookup(&["zzz", "qqq"], &t).unwrap();
    assert_eq!(m.data, vec![9.0, 8.0, 9.0, 8.0]);
    let m = text_embed_lookup(&["the", "good", "movie"], &toy_table()).unwrap();
    assert_eq!((m.rows, m.cols), (3, 3));
    assert!(text_embed_lookup::<&str>(&[], &toy_table()).is_err());
}

#[test]
fn file_lookup_matches_manual_parse() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("glove.txt");
    fs::write(&p, TOY_TABLE).unwrap();
    let table = EmbeddingTable::load(&p).unwrap();
    assert_eq!((table.len(), table.dim()), (5, 3));
    let tokens = ["The", "movie", "was", "bad"];
    let got = text_embed_lookup(&tokens, &table).unwrap();
    let parsed: Vec<(String, Vec<f64>)> = TOY_TABLE
        .lines()
        .map(|l| {
            let mut it = l.split(' ');
            let w = it.next().unwrap().to_string();
            (w, it.map(|v| v.parse::<f32>().unwrap() as f64).collect())
        })
        .collect();
    let find = |w: &str| {
        parsed
            .iter()
            .find(|(k, _)| k == &w.to_lowercase())
            .or_else(|| parsed.iter().find(|(k, _)| k == "<unk>"))
            .unwrap()
            .1
            .clone()
    };
    let oracle: Vec<f64> = tokens.iter().flat_map(|t| find(t)).collect();
    assert_eq!(got.data, oracle);
}

#[test]
fn tables_without_unk_or_ragged_are_rejected() {
    assert!(EmbeddingTable::parse("a 1 2\n", Path::new("t")).is_err());
    assert!(EmbeddingTable::parse("<unk> 1 2\na 1\n", Path::new("t")).is_err());
    assert!(EmbeddingTable::parse("<unk> 1 x\n", Path::new("t")).is_err());
}

#[test]
fn tokenize_strips_punctuation() {
    assert_eq!(tokenize("Hello, world! <unk> it's"), vec!["Hello", "world", "<unk>", "it's"]);
}

const FACE_CSV: &str = "frame, x_0, x_1, y_0, y_1, AU01_r, AU02_r, AU04_r\n\
1, 10, 11, 20, 21, 0.5, 0.25, 0\n\
2, 12, 13, 22, 23, 1.5, 0.75, 1\n\
3, 14, 15, 24, 25, 2.5, 1.25, 2\n\
4, 16, 17, 26, 27, 3.5, 1.75, 3\n";

#[test]
fn visual_csv_column_groups() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("face.csv");
    fs::write(&p, FACE_CSV).unwrap();
    let au = ingest_visual_csv(&p, &ColumnSelection::Prefixes(vec!["AU".into()])).unwrap();
    assert_eq!((au.rows, au.cols), (4, 3));
    let both = ingest_visual_csv(&p, &ColumnSelection::Prefixes(vec!["x_".into(), "y_".into(), "AU".into()])).unwrap();
    assert_eq!(both.cols, 4 + 3);
    let oracle: Vec<f64> = FACE_CSV
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|c| c.trim().parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(both.data, oracle);
    let order = ingest_visual_csv(&p, &ColumnSelection::Prefixes(vec!["AU".into(), "x_".into()])).unwrap();
    assert_eq!(order.row(0), &[0.5, 0.25, 0.0, 10.0, 11.0]);
}

#[test]
fn visual_csv_errors_name_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("face.csv");
    fs::write(&p, FACE_CSV).unwrap();
    let msg = ingest_visual_csv(&p, &ColumnSelection::Prefixes(vec!["pose_".into()])).unwrap_err().to_string();
    assert!(msg.contains("pose_"), "{msg}");
    let msg = ingest_visual_csv(&p, &ColumnSelection::Names(vec!["AU45_c".into()])).unwrap_err().to_string();
    assert!(msg.contains("AU45_c"), "{msg}");
    fs::write(&p, "AU01_r,AU02_r\n1,2\n3,oops\n").unwrap();
    let msg = ingest_visual_csv(&p, &ColumnSelection::All).unwrap_err().to_string();
    assert!(msg.contains("row 2") && msg.contains("AU02_r") && msg.contains("oops"), "{msg}");
}

#[test]
fn feature_codes_map_to_registry_kinds() {
    for (code, modality, kind) in [
        ("T1", Modality::Text, "ingest"),
        ("T2", Modality::Text, "embedding"),
        ("T3", Modality::Text, "ingest"),
        ("A1", Modality::Audio, "ingest"),
        ("A2", Modality::Audio, "mfcc"),
        ("A3", Modality::Audio, "ingest"),
        ("V1", Modality::Vision, "ingest"),
        ("V2", Modality::Vision, "ingest"),
        ("V3", Modality::Vision, "ingest"),
    ] {
        let c = feature_code(code).unwrap();
        assert_eq!((c.modality, c.kind.as_str()), (modality, kind), "{code}");
        assert!(registry().iter().any(|e| e.modality == modality && e.kind == kind));
    }
    assert!(feature_code("X9").is_err());
    let bad = ExtractorConfig::new(Modality::Audio, "mfcc").with("nfft", 3);
    assert!(bad.resolve(Path::new(".")).unwrap_err().to_string().contains("nfft"));
    assert!(ExtractorConfig::new(Modality::Vision, "mfcc").resolve(Path::new(".")).is_err());
}

fn toy_dataset(dir: &Path, corrupt: bool) -> (Vec<ExtractorConfig>, std::path::PathBuf) {
    let tone = |f: f64| -> Vec<i16> {
        (0..4000).map(|i| (0.3 * (2.0 * PI * f * i as f64 / 16000.0).sin() * 32767.0) as i16).collect()
    };
    write_i16(&dir.join("a.wav"), 1, &tone(300.0));
    if corrupt {
        fs::write(dir.join("b.wav"), b"RIFF garbage").unwrap();
    } else {
        write_i16(&dir.join("b.wav"), 1, &tone(900.0)[..3000]);
    }
    fs::write(dir.join("glove.txt"), TOY_TABLE).unwrap();
    let labels = dir.join("labels.csv");
    fs::write(
        &labels,
        "id,split,label_m,label_a,scenario,instance_type,text,audio_path\n\
         a,train,1.2,0.5,Films(TV),easy,the good movie,a.wav\n\
         b,test,-0.8,,,,\"bad, bad movie\",b.wav\n",
    )
    .unwrap();
    let configs = vec![
        ExtractorConfig::new(Modality::Audio, "mfcc").with("n_mels", 26).with("n_mfcc", 13),
        ExtractorConfig::new(Modality::Text, "embedding").with("table", "glove.txt"),
    ];
    (configs, labels)
}

#[test]
fn run_dataset_builds_audio_and_text_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let (configs, labels) = toy_dataset(dir.path(), false);
    let b = run_dataset(dir.path(), &configs, &labels, &DatasetOptions::default()).unwrap();
    assert_eq!(b.modalities(), vec![Modality::Text, Modality::Audio]);
    assert_eq!(b.len(), 2);
    let audio = &b.blocks[&Modality::Audio];
    assert_eq!(audio.feature_dim, 13);
    assert_eq!(audio.lengths, vec![1 + (4000 - 512) / 160, 1 + (3000 - 512) / 160]);
    let text = &b.blocks[&Modality::Text];
    assert_eq!((text.feature_dim, text.lengths.clone()), (3, vec![3, 3]));
    assert_eq!(&text.valid_frames(1)[..3], &[4.0, 5.0, 6.0]);
    let s0 = &b.samples()[0];
    assert_eq!(s0.label_a, Some(0.5));
    assert_eq!(s0.scenario.map(|s| s.name()), Some("Films(TV)"));
}

#[test]
fn corrupt_wav_fails_strict_run_with_its_id() {
    let dir = tempfile::tempdir().unwrap();
    let (configs, labels) = toy_dataset(dir.path(), true);
    match run_dataset(dir.path(), &configs, &labels, &DatasetOptions::default()) {
        Err(Error::Extraction { failures }) => {
            assert_eq!(failures.len(), 1);
            assert_eq!(failures[0].0, "b");
        }
        other => panic!("{other:?}"),
    }
    let lenient = DatasetOptions {
        policy: FailurePolicy::Lenient {
            max_failure_fraction: 0.5,
        },
        ..DatasetOptions::default()
    };
    let b = run_dataset(dir.path(), &configs, &labels, &lenient).unwrap();
    assert_eq!(b.len(), 1);
    assert_eq!(b.samples()[0].id, "a");
    let too_strict = DatasetOptions {
        policy: FailurePolicy::Lenient {
            max_failure_fraction: 0.25,
        },
        ..DatasetOptions::default()
    };
    assert!(run_dataset(dir.path(), &configs, &labels, &too_strict).is_err());
}

#[test]
fn rerun_writes_byte_identical_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let (configs, labels) = toy_dataset(dir.path(), false);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let b = run_dataset(dir.path(), &configs, &labels, &DatasetOptions::default()).unwrap();
        let out = dir.path().join(format!("run{k}.msab"));
        write_bundle(&b, &out).unwrap();
        outputs.push(out);
    }
    for f in ["manifest.json", "audio.bin", "text.bin"] {
        assert_eq!(fs::read(outputs[0].join(f)).unwrap(), fs::read(outputs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mismatched_sample_rate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (mut configs, labels) = toy_dataset(dir.path(), false);
    configs[0] = configs[0].clone().with("sample_rate", 8000);
    let err = run_dataset(dir.path(), &configs, &labels, &DatasetOptions::default()).unwrap_err();
    assert!(err.to_string().contains("sample rate"), "{err}");
}
