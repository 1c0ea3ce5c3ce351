use dqn_classify::agent::{train_rl, train_sdl, Hyperparams};
use dqn_classify::data::{load_image_dir, synth_generate, write_image_dir, Dataset, Extents};
use dqn_classify::env::{Class, ClassifiedImage};
use dqn_classify::eval::{evaluate, Method};
use dqn_classify::numerics::Tensor;
use dqn_classify::qnet::{ArchitectureConfig, QNetwork};
use dqn_classify::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gray_png(path: &std::path::Path, side: u32, value: u8) {
    image::GrayImage::from_pixel(side, side, image::Luma([value]))
        .save(path)
        .unwrap();
}

#[test]
fn loads_fifteen_per_class() {
    let dir = tempfile::tempdir().unwrap();
    for class in ["normal", "tumor"] {
        std::fs::create_dir_all(dir.path().join(class)).unwrap();
        for i in 0..15 {
            gray_png(&dir.path().join(class).join(format!("{i:02}.png")), 20, 255);
        }
    }
    let ds = load_image_dir(dir.path(), Extents::square(8)).unwrap();
    assert_eq!(ds.len(), 30);
    assert_eq!(ds.class_counts(), (15, 15));
    assert_eq!(ds.items()[0].id(), "normal/00.png");
    assert_eq!(ds.items()[15].label(), Class::Tumor);
    assert!(ds.items().iter().all(|i| i.pixels().iter().all(|&p| p == 1.0)));
}

#[test]
fn loading_is_lexicographic_and_scaled() {
    let dir = tempfile::tempdir().unwrap();
    for class in ["normal", "tumor"] {
        std::fs::create_dir_all(dir.path().join(class)).unwrap();
    }
    gray_png(&dir.path().join("normal/b.png"), 4, 0);
    gray_png(&dir.path().join("normal/a.png"), 4, 51);
    gray_png(&dir.path().join("tumor/z.png"), 4, 102);
    let ds = load_image_dir(dir.path(), Extents::square(4)).unwrap();
    let ids: Vec<&str> = ds.items().iter().map(|i| i.id()).collect();
    assert_eq!(ids, ["normal/a.png", "normal/b.png", "tumor/z.png"]);
    assert!((ds.items()[0].pixels()[0] - 0.2).abs() < 1e-6);
    assert!((ds.items()[2].pixels()[0] - 0.4).abs() < 1e-6);
}

#[test]
fn empty_class_directory_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("normal")).unwrap();
    std::fs::create_dir_all(dir.path().join("tumor")).unwrap();
    gray_png(&dir.path().join("normal/a.png"), 4, 10);
    match load_image_dir(dir.path(), Extents::square(4)) {
        Err(Error::InvalidDataset(_)) => {}
        other => panic!("expected invalid dataset, got {other:?}"),
    }
}

#[test]
fn unreadable_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    for class in ["normal", "tumor"] {
        std::fs::create_dir_all(dir.path().join(class)).unwrap();
        gray_png(&dir.path().join(class).join("ok.png"), 4, 10);
    }
    std::fs::write(dir.path().join("tumor/broken.png"), b"not a png").unwrap();
    match load_image_dir(dir.path(), Extents::square(4)) {
        Err(Error::Ingestion { path, .. }) => assert!(path.ends_with("broken.png")),
        other => panic!("expected ingestion error, got {other:?}"),
    }
}

#[test]
fn synthetic_round_trips_through_png() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = synth_generate(2, 2, Extents::square(32), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_image_dir(&ds, dir.path()).unwrap();
    let back = load_image_dir(dir.path(), Extents::square(32)).unwrap();
    assert_eq!(back.class_counts(), (2, 2));
    for (a, b) in ds.items().iter().zip(back.items()) {
        assert_eq!(a.id(), b.id());
        let worst = a
            .pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(worst <= 0.5 / 255.0 + 1e-6, "{worst}");
    }
}

/// Maximum of the 5×5 box-blurred image: large for a bright blob, small for
/// the smooth background.
fn blob_score(img: &ClassifiedImage) -> f32 {
    let (h, w) = (img.height(), img.width());
    let p = img.pixels();
    let mut best = 0.0f32;
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let mut s = 0.0;
            for dy in 0..5 {
                for dx in 0..5 {
                    s += p[(y + dy - 2) * w + (x + dx - 2)];
                }
            }
            best = best.max(s / 25.0);
        }
    }
    best
}

#[test]
fn synthetic_classes_are_separated_by_a_blob_detector() {
    for seed in [1, 7, 23, 99] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = synth_generate(30, 30, Extents::square(64), &mut rng).unwrap();
        for img in ds.items() {
            let tumor = blob_score(img) > 0.7;
            assert_eq!(tumor, img.label() == Class::Tumor, "seed {seed} {}", img.id());
        }
    }
}

#[test]
fn tumor_blob_rises_above_local_background() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = synth_generate(0, 20, Extents::square(64), &mut rng).unwrap();
    for img in ds.items() {
        let mut sorted = img.pixels().to_vec();
        sorted.sort_by(f32::total_cmp);
        // The ellipse covers about half the image, so the upper quartile is
        // a tissue level.
        let tissue = sorted[sorted.len() * 3 / 4];
        assert!(blob_score(img) - tissue >= 0.3, "{}", img.id());
    }
}

fn small_split(seed: u64, n: usize, side: usize) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = synth_generate(n, n, Extents::square(side), &mut rng).unwrap();
    let test = synth_generate(n, n, Extents::square(side), &mut rng).unwrap();
    (train, test)
}

#[test]
fn two_image_dataset_is_learned_and_step_counts_hold() {
    let (train, test) = small_split(7, 1, 16);
    let h = Hyperparams::default();
    let arch = ArchitectureConfig::dqn().with_extents(16, 16);
    let (net, record) = train_rl(&train, &test, &h, &arch, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(record.final_train_accuracy(), Some(1.0));
    assert_eq!(record.rows.len(), 300);
    assert_eq!(record.total_steps, 1500);
    assert_eq!(record.transitions_pushed, 1500);
    assert_eq!(
        evaluate(&net, &train, Method::Rl, h.alpha_overlay).unwrap().accuracy,
        1.0
    );
    for r in &record.rows {
        let eps = r.epsilon.unwrap();
        assert!((h.epsilon_min..=h.epsilon0).contains(&eps));
        assert!((0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.test_acc));
        assert!((-1.0..=1.0).contains(&r.mean_reward.unwrap()));
    }
    // Updates start once 32 transitions are stored: after episode 7.
    assert!(record.rows[5].loss.is_none());
    assert!(record.rows[6].loss.is_some());
}

#[test]
fn training_is_deterministic() {
    let (train, test) = small_split(4, 3, 16);
    let h = Hyperparams {
        episodes: 20,
        sdl_epochs: 10,
        ..Hyperparams::default()
    };
    let rl = ArchitectureConfig::dqn().with_extents(16, 16);
    let sdl = ArchitectureConfig::sdl().with_extents(16, 16);
    let run_rl = || train_rl(&train, &test, &h, &rl, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let run_sdl = || train_sdl(&train, &test, &h, &sdl, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let (a, b) = (run_rl(), run_rl());
    assert_eq!(a.1, b.1);
    assert_eq!(
        a.0.q_forward(&test_input(16)).unwrap(),
        b.0.q_forward(&test_input(16)).unwrap()
    );
    let (a, b) = (run_sdl(), run_sdl());
    assert_eq!(a.1, b.1);
    assert_eq!(a.1.rows.len(), 10);
}

#[test]
fn per_step_and_terminal_variants_run() {
    let (train, test) = small_split(2, 2, 16);
    let arch = ArchitectureConfig::dqn().with_extents(16, 16);
    for (per_step_image, terminal_last_step) in [(true, false), (false, true)] {
        let h = Hyperparams {
            episodes: 10,
            per_step_image,
            terminal_last_step,
            ..Hyperparams::default()
        };
        let (_, record) = train_rl(&train, &test, &h, &arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(record.total_steps, 50);
    }
}

#[test]
fn training_requires_both_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normals = synth_generate(3, 0, Extents::square(16), &mut rng).unwrap();
    let (_, test) = small_split(2, 2, 16);
    let arch = ArchitectureConfig::dqn().with_extents(16, 16);
    let h = Hyperparams::default();
    match train_rl(&normals, &test, &h, &arch, &mut rng) {
        Err(Error::InvalidDataset(_)) => {}
        other => panic!("expected invalid dataset, got {:?}", other.map(|r| r.1)),
    }
}

fn test_input(side: usize) -> Tensor<f32> {
    let x = (0..side * side * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    Tensor::new(vec![side, side, 3], x).unwrap()
}

#[test]
fn q_forward_golden_value() {
    let net = QNetwork::<f32>::build(&ArchitectureConfig::dqn(), &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
    let x = test_input(64);
    let (q0, q1) = net.q_forward(&x).unwrap();
    assert_eq!(
        (q0.to_bits(), q1.to_bits()),
        (0x3ee8_9895, 0xbe82_d75f),
        "got {q0} {q1}"
    );

    // The same weights in 64-bit agree to single-precision accuracy.
    let wide = net.cast::<f64>().q_forward(&x.cast::<f64>()).unwrap();
    assert!((wide.0 - f64::from(q0)).abs() < 1e-5 && (wide.1 - f64::from(q1)).abs() < 1e-5);
}
