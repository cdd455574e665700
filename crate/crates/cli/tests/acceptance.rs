//! Acceptance suite. Each test covers one numbered criterion and prints a
//! `criterion N PASS` line (visible with `--nocapture`).
//!
//! The expensive training criteria (3 and 4) run a synthetic moving-pattern
//! dataset: 6 classes x 12 videos of shape (8, 28, 24, 32), where the class
//! fixes the start corner and motion direction of a bright blob.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use vsr_core::dataset::{
    self, class_histogram, stratified_split, ManifestEntry, Split, SplitSpec,
};
use vsr_core::evaluation::{result_from_pairs, ConfusionMatrix};
use vsr_core::gradcheck;
use vsr_core::layers::Dropout;
use vsr_core::models::{build, Checkpoint, ModelKind, ModelSpec};
use vsr_core::rng::{stream, Purpose};
use vsr_core::tensor::Tensor;
use vsr_core::training::{
    fit, predict_set, train_epoch, AdamState, MemorySampleSet, TrainConfig,
};
use vsr_core::video::{convert_pixel, write_ppm, ColorSpace, RgbFrame};

fn vsr_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vsr"))
}

// ---------------------------------------------------------------------------
// synthetic moving-pattern videos (criteria 3, 4)
// ---------------------------------------------------------------------------

const SYN_CLASSES: usize = 6;
const SYN_PER_CLASS: usize = 12;
const SYN_SHAPE: [usize; 4] = [8, 28, 24, 32];

/// One synthetic video: a bright blob starting at a class-specific corner
/// and moving in a class-specific direction, with per-video jitter and
/// noise. Channel c carries the pattern at amplitude (c+1)/8.
fn synthetic_video(class: usize, index: usize) -> Tensor<f32> {
    let [channels, frames, height, width] = SYN_SHAPE;
    let mut rng = stream(0x5EED, Purpose::Synthetic, (class * 1000 + index) as u64);
    let angle = class as f32 * std::f32::consts::PI / 3.0;
    let (dir_h, dir_w) = (angle.sin(), angle.cos());
    let start_h = 11.5 - dir_h * 7.0 + rng.gen_range(-1.2..1.2f32);
    let start_w = 15.5 - dir_w * 9.0 + rng.gen_range(-1.2..1.2f32);
    let speed = 0.55 + rng.gen_range(-0.05..0.05f32);
    let sigma2 = 2.0 * 2.4f32 * 2.4;

    let mut data = Vec::with_capacity(channels * frames * height * width);
    for c in 0..channels {
        let amp = (c + 1) as f32 / channels as f32;
        for t in 0..frames {
            let ch = start_h + dir_h * speed * t as f32;
            let cw = start_w + dir_w * speed * t as f32;
            for h in 0..height {
                for w in 0..width {
                    let d2 = (h as f32 - ch).powi(2) + (w as f32 - cw).powi(2);
                    let v = amp * (-d2 / sigma2).exp() + rng.gen_range(0.0..0.03f32);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    Tensor::new(SYN_SHAPE.to_vec(), data).expect("synthetic shape")
}

fn synthetic_set() -> Vec<(Tensor<f32>, usize)> {
    let mut samples = Vec::with_capacity(SYN_CLASSES * SYN_PER_CLASS);
    for class in 0..SYN_CLASSES {
        for index in 0..SYN_PER_CLASS {
            samples.push((synthetic_video(class, index), class));
        }
    }
    samples
}

fn gruconv_spec(seed: u64) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::GruConv,
        input_shape: SYN_SHAPE,
        num_classes: SYN_CLASSES,
        gru_hidden: 32,
        mlp_hidden: 64,
        dropout: 0.5,
        seed,
    }
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let report = gradcheck::run_all(1e-3, 2024);
    let elapsed = start.elapsed();
    let worst = report
        .checks
        .iter()
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max);
    for check in &report.checks {
        assert!(
            check.max_rel_error < 1e-3,
            "{} [{}] rel err {}",
            check.layer,
            check.case,
            check.max_rel_error
        );
    }
    assert!(report.checks.len() >= 35, "5 shapes x 7 layer families");
    assert!(
        elapsed.as_secs() < 120,
        "gradcheck took {elapsed:?}, budget 2 min"
    );
    println!(
        "criterion 1 PASS: {} gradient checks < 1e-3 (worst {:.3e}) in {:.1?}",
        report.checks.len(),
        worst,
        elapsed
    );
}

/// Shape formulas written out independently of the layer implementations.
mod shape_oracle {
    pub fn out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        (len + 2 * pad - kernel) / stride + 1
    }

    pub fn conv(d: [usize; 3], stride: [usize; 3]) -> [usize; 3] {
        // kernel (3,5,5), padding (1,2,2)
        [
            out_len(d[0], 3, stride[0], 1),
            out_len(d[1], 5, stride[1], 2),
            out_len(d[2], 5, stride[2], 2),
        ]
    }

    pub fn pool(d: [usize; 3]) -> [usize; 3] {
        // kernel (1,2,2), stride (1,2,2), padding clamped to (0,1,1)
        [
            out_len(d[0], 1, 1, 0),
            out_len(d[1], 2, 2, 1),
            out_len(d[2], 2, 2, 1),
        ]
    }
}

#[test]
fn criterion_2_shape_oracle() {
    use shape_oracle::{conv, pool};

    let spec = ModelSpec {
        kind: ModelKind::Conv3d,
        input_shape: [3, 28, 100, 150],
        num_classes: 18,
        gru_hidden: 4,
        mlp_hidden: 8,
        dropout: 0.5,
        seed: 1,
    };
    let model = build(&spec).expect("build conv3d");
    let chain = model.shape_chain().expect("shape chain");
    let get = |name: &str| {
        chain
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("layer {name} missing"))
            .1
            .clone()
    };

    let channels = [8usize, 16, 32];
    let strides = [[1, 2, 2], [1, 1, 1], [1, 1, 1]];
    let mut dims = [28usize, 100, 150];
    for i in 0..3 {
        dims = conv(dims, strides[i]);
        let expect = vec![channels[i], dims[0], dims[1], dims[2]];
        assert_eq!(get(&format!("conv{}", i + 1)), expect, "conv{}", i + 1);
        dims = pool(dims);
        let expect = vec![channels[i], dims[0], dims[1], dims[2]];
        assert_eq!(get(&format!("pool{}", i + 1)), expect, "pool{}", i + 1);
    }
    let flatten = 32 * dims[0] * dims[1] * dims[2];
    assert_eq!(get("flatten"), vec![flatten]);

    let gru_spec = ModelSpec {
        kind: ModelKind::Gru,
        ..spec
    };
    let gru_chain = build(&gru_spec).expect("build gru").shape_chain().unwrap();
    let frames = gru_chain.iter().find(|(n, _)| n == "frames").unwrap();
    assert_eq!(frames.1, vec![28, 45_000], "per-frame feature length");

    println!(
        "criterion 2 PASS: conv stack chain ends at {:?} (flatten {flatten}), GRU per-frame features 45000",
        dims
    );
}

#[test]
fn criterion_3_overfit_oracle() {
    let start = Instant::now();
    let train = MemorySampleSet {
        samples: synthetic_set(),
    };
    let mut model = build(&gruconv_spec(31)).expect("build gruconv");
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_train: 12,
        ..TrainConfig::new(300, 31)
    };
    let mut optimizer = AdamState::for_model(&model);
    let mut dropout_rng = stream(cfg.seed, Purpose::Dropout, 0);

    let mut reached = None;
    for epoch in 1..=300 {
        train_epoch(&mut model, &train, &mut optimizer, &cfg, epoch, &mut dropout_rng)
            .expect("train epoch");
        let pairs = predict_set(&model, &train, cfg.batch_val, 1).expect("train accuracy");
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        let acc = correct as f64 / pairs.len() as f64;
        if acc >= 0.95 {
            reached = Some((epoch, acc));
            break;
        }
    }
    let elapsed = start.elapsed();
    let (epoch, acc) = reached.unwrap_or_else(|| {
        panic!("training accuracy below 95% after 300 epochs ({elapsed:?})")
    });
    assert!(
        elapsed.as_secs() < 900,
        "overfit oracle took {elapsed:?}, budget 15 min"
    );
    println!(
        "criterion 3 PASS: {:.1}% training accuracy at epoch {epoch} in {:.1?}",
        acc * 100.0,
        elapsed
    );
}

#[test]
fn criterion_4_generalization_smoke_test() {
    let start = Instant::now();
    let samples = synthetic_set();
    // tag the synthetic samples through the real stratified splitter
    let entries: Vec<ManifestEntry> = samples
        .iter()
        .enumerate()
        .map(|(i, (_, label))| ManifestEntry::new(format!("syn{i:03}.vlt"), *label, "s00"))
        .collect();
    let spec = SplitSpec::parse("8:2", 77).expect("ratio");
    let tagged = stratified_split(&entries, &spec, SYN_CLASSES).expect("split");
    let pick = |split: Split| MemorySampleSet {
        samples: tagged
            .iter()
            .zip(samples.iter())
            .filter(|(e, _)| e.split == split)
            .map(|(_, s)| s.clone())
            .collect(),
    };
    let train = pick(Split::Train);
    let val = pick(Split::Val);
    assert_eq!(train.samples.len(), 60);
    assert_eq!(val.samples.len(), 12);

    let mut model = build(&gruconv_spec(32)).expect("build gruconv");
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_train: 12,
        ..TrainConfig::new(25, 32)
    };
    let (ckpt, reports) = fit(&mut model, &train, &val, &cfg, |_| {}).expect("fit");
    let best = reports
        .iter()
        .map(|r| r.val_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        ckpt.val_accuracy >= 0.80,
        "best validation accuracy {:.3} below 80%",
        ckpt.val_accuracy
    );
    assert_eq!(ckpt.val_accuracy, best, "checkpoint is the argmax epoch");
    let first_best = reports.iter().find(|r| r.val_acc == best).unwrap().epoch;
    assert_eq!(ckpt.epoch, first_best);
    println!(
        "criterion 4 PASS: best validation accuracy {:.1}% at epoch {} of {} ({:.1?})",
        ckpt.val_accuracy * 100.0,
        ckpt.epoch,
        reports.len(),
        start.elapsed()
    );
}

#[test]
fn criterion_5_stratified_splitting() {
    // dataset A histogram from the reference corpus
    let counts: [usize; 18] = [
        118, 171, 66, 56, 325, 131, 159, 194, 144, 304, 308, 118, 585, 106, 274, 355, 146, 167,
    ];
    let mut entries = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for i in 0..n {
            entries.push(ManifestEntry::new(
                format!("c{label:02}_{i:04}.vlt"),
                label,
                format!("s{:02}", i % 6),
            ));
        }
    }
    let spec = SplitSpec::parse("8:2", 42).expect("ratio");
    let tagged = stratified_split(&entries, &spec, 18).expect("split");
    let again = stratified_split(&entries, &spec, 18).expect("split again");
    assert_eq!(tagged, again, "seeded determinism");

    let hist = class_histogram(&tagged, 18);
    assert_eq!(hist[0].0, 118);
    assert_eq!(hist[12].0, 585);

    let mut max_dev = 0.0f64;
    for (label, &n) in counts.iter().enumerate() {
        let train = tagged
            .iter()
            .filter(|e| e.label == label && e.split == Split::Train)
            .count();
        let val = tagged
            .iter()
            .filter(|e| e.label == label && e.split == Split::Val)
            .count();
        assert_eq!(train + val, n, "class {label} covered exactly");
        let dev = (val as f64 - 0.2 * n as f64).abs();
        assert!(dev <= 1.0, "class {label} deviates by {dev}");
        max_dev = max_dev.max(dev);
    }
    assert!(
        tagged
            .iter()
            .all(|e| matches!(e.split, Split::Train | Split::Val)),
        "every entry lands in exactly one split"
    );
    println!(
        "criterion 5 PASS: 8:2 split of 3727 entries, max per-class deviation {max_dev:.1} entry"
    );
}

#[test]
fn criterion_6_color_space_corners() {
    let corners: [[u8; 3]; 8] = [
        [0, 0, 0],
        [255, 0, 0],
        [0, 255, 0],
        [0, 0, 255],
        [255, 255, 0],
        [255, 0, 255],
        [0, 255, 255],
        [255, 255, 255],
    ];
    for cs in ColorSpace::ALL {
        for rgb in corners {
            let out = convert_pixel(rgb, cs);
            for c in 0..cs.channels() {
                assert!(
                    (0.0..=1.0).contains(&out[c]),
                    "{cs:?} {rgb:?} channel {c}: {}",
                    out[c]
                );
            }
        }
    }

    let lab = convert_pixel([255, 255, 255], ColorSpace::Lab);
    assert!((lab[0] - 1.0).abs() < 1e-3, "white L: {}", lab[0]);
    assert!((lab[1] - 0.5).abs() < 1e-3, "white a: {}", lab[1]);
    assert!((lab[2] - 0.5).abs() < 1e-3, "white b: {}", lab[2]);

    let (x, y, z) = vsr_core::video::srgb_to_xyz(1.0, 0.0, 0.0);
    assert!((x - 0.4124).abs() < 1e-3);
    assert!((y - 0.2127).abs() < 1e-3);
    assert!((z - 0.0193).abs() < 1e-3);

    println!(
        "criterion 6 PASS: 8 corners in [0,1] across 6 spaces; white->LAB ({:.4},{:.4},{:.4}); red->XYZ ({x:.4},{y:.4},{z:.4})",
        lab[0], lab[1], lab[2]
    );
}

// ---------------------------------------------------------------------------
// binary-level helpers (criteria 7, 10)
// ---------------------------------------------------------------------------

fn write_disk_dataset(dir: &Path) -> PathBuf {
    // 3 classes x 8 tiny videos of shape (2, 6, 12, 16)
    let mut lines = String::new();
    for class in 0..3usize {
        for i in 0..8usize {
            let mut rng = stream(0xD15C, Purpose::Synthetic, (class * 100 + i) as u64);
            let t = Tensor::<f32>::from_fn(&[2, 6, 12, 16], |k| {
                let w = k % 16;
                let band = w / 6 == class.min(2);
                let base: f32 = if band { 0.8 } else { 0.1 };
                (base + rng.gen_range(-0.05..0.05f32)).clamp(0.0, 1.0)
            });
            let name = format!("c{class}_{i}.vlt");
            t.save_vlt1(&dir.join(&name)).expect("save tensor");
            lines.push_str(&format!(
                "{{\"tensor\":\"{name}\",\"label\":{class},\"speaker\":\"s0{class}\"}}\n"
            ));
        }
    }
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, lines).expect("write manifest");
    manifest
}

#[test]
fn criterion_7_train_determinism() {
    let dir = tempfile::tempdir().expect("tempdir");
    let manifest = write_disk_dataset(dir.path());

    let split_out = dir.path().join("split.jsonl");
    let status = vsr_bin()
        .args([
            "split",
            "--manifest",
            manifest.to_str().unwrap(),
            "--ratios",
            "8:2",
            "--seed",
            "5",
            "--classes",
            "3",
            "--out",
            split_out.to_str().unwrap(),
        ])
        .status()
        .expect("run split");
    assert!(status.success());

    let run = |tag: &str| -> (Vec<u8>, String) {
        let ckpt = dir.path().join(format!("{tag}.vlck"));
        let log = dir.path().join(format!("{tag}.csv"));
        let status = vsr_bin()
            .args([
                "train",
                "--manifest",
                split_out.to_str().unwrap(),
                "--model",
                "gru",
                "--lr",
                "1e-3",
                "--epochs",
                "3",
                "--batch",
                "4",
                "--val-batch",
                "4",
                "--seed",
                "11",
                "--gru-hidden",
                "6",
                "--mlp-hidden",
                "8",
                "--classes",
                "3",
                "--threads",
                "1",
                "--out",
                ckpt.to_str().unwrap(),
                "--log",
                log.to_str().unwrap(),
            ])
            .stdout(std::process::Stdio::null())
            .status()
            .expect("run train");
        assert!(status.success(), "train run {tag} failed");
        let ckpt_bytes = std::fs::read(&ckpt).expect("read checkpoint");
        let log_text = std::fs::read_to_string(&log).expect("read log");
        (ckpt_bytes, log_text)
    };

    let (ckpt_a, log_a) = run("a");
    let (ckpt_b, log_b) = run("b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints must be byte-identical");

    // every column except wall-clock seconds must match byte for byte
    let strip_seconds = |text: &str| -> Vec<String> {
        text.lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect()
    };
    assert_eq!(strip_seconds(&log_a), strip_seconds(&log_b));
    assert_eq!(log_a.lines().count(), 4, "header + 3 epochs");
    println!(
        "criterion 7 PASS: two seeded train runs agree (checkpoint {} bytes, {} epoch rows)",
        ckpt_a.len(),
        log_a.lines().count() - 1
    );
}

#[test]
fn criterion_8_evaluation_algebra() {
    let mut rng = stream(88, Purpose::Synthetic, 0);
    for round in 0..1000 {
        let n = rng.gen_range(1..=300usize);
        let pairs: Vec<(usize, usize)> = (0..n)
            .map(|_| (rng.gen_range(0..18), rng.gen_range(0..18)))
            .collect();
        let result = result_from_pairs(18, pairs.clone()).expect("confusion");
        let m: &ConfusionMatrix = &result.confusion;
        assert_eq!(m.total() as usize, n, "round {round}");
        let direct = pairs.iter().filter(|(t, p)| t == p).count() as f64 / n as f64;
        assert!(
            (m.trace() as f64 / m.total() as f64 - result.accuracy).abs() < 1e-6,
            "round {round}"
        );
        assert!((result.accuracy - direct).abs() < 1e-6, "round {round}");
        for class in 0..18 {
            let support = pairs.iter().filter(|(t, _)| *t == class).count() as u64;
            assert_eq!(m.support(class), support, "round {round} class {class}");
        }
    }
    println!("criterion 8 PASS: 1000 randomized prediction sets, trace/total == accuracy, row sums == supports");
}

#[test]
fn criterion_9_dropout_statistics() {
    let dropout = Dropout::new(0.5);
    let x = Tensor::<f32>::filled(&[100_000], 1.0);
    let mut rng = stream(9, Purpose::Dropout, 0);
    let (y, _) = dropout.apply_train(&x, &mut rng);
    let survivors = y.data().iter().filter(|&&v| v != 0.0).count();
    let fraction = survivors as f64 / y.len() as f64;
    assert!(
        (fraction - 0.5).abs() < 0.02,
        "survivor fraction {fraction}"
    );

    let varied = Tensor::<f32>::from_fn(&[257], |i| i as f32 * 0.37 - 20.0);
    assert_eq!(dropout.apply_eval(varied.clone()), varied, "eval identity");
    println!(
        "criterion 9 PASS: survivor fraction {fraction:.4} on 1e5 elements; eval mode exact identity"
    );
}

#[test]
fn criterion_10_end_to_end_pipeline() {
    let dir = tempfile::tempdir().expect("tempdir");

    // 20 synthetic frames with structure, plus a drifting ROI sidecar
    let frames_dir = dir.path().join("clip");
    std::fs::create_dir(&frames_dir).expect("mkdir");
    let mut roi_lines = String::new();
    for t in 0..20usize {
        let frame = RgbFrame::new(
            48,
            36,
            (0..48 * 36 * 3)
                .map(|k| {
                    let p = k / 3;
                    let (x, y) = (p % 48, p / 48);
                    ((x * 3 + y * 2 + t * 5 + k % 3 * 40) % 256) as u8
                })
                .collect(),
        )
        .expect("frame");
        write_ppm(&frame, &frames_dir.join(format!("{t:03}.ppm"))).expect("write ppm");
        roi_lines.push_str(&format!(
            "{{\"frame\":{t},\"x\":{},\"y\":4,\"w\":30,\"h\":24}}\n",
            6 + t / 4
        ));
    }
    let roi_file = dir.path().join("clip.roi.jsonl");
    std::fs::write(&roi_file, roi_lines).expect("write roi");

    // one toy checkpoint per (roi kind, channel count)
    let ckpt_for = |roi: &str, channels: usize| -> PathBuf {
        let (h, w) = if roi == "lips" { (100, 150) } else { (90, 90) };
        let spec = ModelSpec {
            kind: ModelKind::Gru,
            input_shape: [channels, 28, h, w],
            num_classes: 18,
            gru_hidden: 8,
            mlp_hidden: 16,
            dropout: 0.5,
            seed: 99,
        };
        let model = build(&spec).expect("build");
        let path = dir.path().join(format!("{roi}_{channels}.vlck"));
        Checkpoint::capture(&model, 0, 0.0)
            .save(&path)
            .expect("save checkpoint");
        path
    };
    let checkpoints = [
        (("lips", 1), ckpt_for("lips", 1)),
        (("lips", 3), ckpt_for("lips", 3)),
        (("face", 1), ckpt_for("face", 1)),
        (("face", 3), ckpt_for("face", 3)),
    ];

    for roi in ["lips", "face"] {
        for cs in ColorSpace::ALL {
            let tensor_path = dir.path().join(format!("{roi}_{}.vlt", cs.name()));
            let output = vsr_bin()
                .args([
                    "preprocess",
                    "--frames-dir",
                    frames_dir.to_str().unwrap(),
                    "--roi",
                    roi,
                    "--roi-file",
                    roi_file.to_str().unwrap(),
                    "--color",
                    cs.name(),
                    "--length",
                    "28",
                    "--out",
                    tensor_path.to_str().unwrap(),
                ])
                .output()
                .expect("run preprocess");
            assert!(
                output.status.success(),
                "preprocess {roi}/{}: {}",
                cs.name(),
                String::from_utf8_lossy(&output.stderr)
            );

            let tensor = Tensor::<f32>::load_vlt1(&tensor_path).expect("load tensor");
            let (h, w) = if roi == "lips" { (100, 150) } else { (90, 90) };
            assert_eq!(tensor.shape(), &[cs.channels(), 28, h, w]);
            assert!(tensor
                .data()
                .iter()
                .all(|v| (0.0..=1.0).contains(v) && v.is_finite()));

            let ckpt = &checkpoints
                .iter()
                .find(|((r, c), _)| *r == roi && *c == cs.channels())
                .unwrap()
                .1;
            let output = vsr_bin()
                .args([
                    "predict",
                    "--checkpoint",
                    ckpt.to_str().unwrap(),
                    "--tensor",
                    tensor_path.to_str().unwrap(),
                ])
                .output()
                .expect("run predict");
            assert!(
                output.status.success(),
                "predict {roi}/{}: {}",
                cs.name(),
                String::from_utf8_lossy(&output.stderr)
            );
            let stdout = String::from_utf8_lossy(&output.stdout);
            let lines: Vec<&str> = stdout.lines().collect();
            assert_eq!(lines.len(), 18, "18 word lines");
            let mut prev = f64::INFINITY;
            let mut total = 0.0f64;
            for line in &lines {
                let (word, prob) = line.split_once('\t').expect("word<TAB>probability");
                assert!(dataset::class_for_word(word).is_some(), "unknown word {word}");
                let p: f64 = prob.parse().expect("probability");
                assert!(p <= prev + 1e-12, "descending probabilities");
                prev = p;
                total += p;
            }
            assert!((total - 1.0).abs() < 2e-5, "probabilities sum to 1");
        }
    }
    println!(
        "criterion 10 PASS: preprocess + predict for 6 color spaces x 2 ROI kinds (1- and 3-channel models)"
    );
}
