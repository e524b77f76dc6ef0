mod common;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use uwrestore_core::data::{
    epoch_order, make_synthetic, procedural_scene, write_procedural_set, DepthSource, EpochSampler, ParamSampler,
    SyntheticManifest, UnpairedDataset,
};
use uwrestore_core::imaging::{load_image_native, save_png16};
use uwrestore_core::physics::fit_constant_params;

fn fake_paths(prefix: &str, n: usize) -> Vec<PathBuf> {
    (0..n).map(|i| PathBuf::from(format!("{prefix}/{i:04}.png"))).collect()
}

#[test]
fn headline_batch_count() {
    let ds = UnpairedDataset::new(fake_paths("u", 2076), fake_paths("t", 2076), 256).unwrap();
    assert_eq!(ds.batches_per_epoch(16), 129);
}

#[test]
fn orders_are_seeded_and_domain_independent() {
    assert_eq!(epoch_order(50, 3, 1, 0), epoch_order(50, 3, 1, 0));
    assert_ne!(epoch_order(50, 3, 1, 0), epoch_order(50, 3, 1, 1));
    assert_ne!(epoch_order(50, 3, 1, 0), epoch_order(50, 3, 2, 0));
    assert_ne!(epoch_order(50, 3, 1, 0), epoch_order(50, 4, 1, 0));
}

fn sample_set(dir: &Path) -> UnpairedDataset {
    write_procedural_set(dir, 10, 16, 77).unwrap();
    UnpairedDataset::from_dirs(&dir.join("underwater"), &dir.join("terrestrial"), 16).unwrap()
}

#[test]
fn sampler_is_reproducible_and_covers_without_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let ds = sample_set(dir.path());
    let run = || -> Vec<(Vec<usize>, Vec<usize>)> {
        EpochSampler::new(&ds, 3, 5, 0).map(|b| (b.x_indices, b.y_indices)).collect()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.len(), 3);
    let xs: HashSet<usize> = a.iter().flat_map(|b| b.0.clone()).collect();
    let ys: HashSet<usize> = a.iter().flat_map(|b| b.1.clone()).collect();
    assert_eq!((xs.len(), ys.len()), (9, 9));

    let mut single = EpochSampler::new(&ds, 1, 5, 0);
    let b = single.next_batch().unwrap();
    assert_eq!((b.x.len(), b.y.len()), (1, 1));
}

#[test]
fn unreadable_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    write_procedural_set(dir.path(), 4, 16, 1).unwrap();
    std::fs::write(dir.path().join("terrestrial/zzz.png"), b"not an image").unwrap();
    let ds = UnpairedDataset::from_dirs(&dir.path().join("underwater"), &dir.path().join("terrestrial"), 16).unwrap();
    assert_eq!(ds.terrestrial_paths.len(), 5);
    let batches: Vec<_> = EpochSampler::new(&ds, 2, 0, 0).collect();
    assert_eq!(batches.len(), 2);
    for b in &batches {
        assert!(!b.x_indices.contains(&4));
    }
}

#[test]
fn missing_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = UnpairedDataset::from_dirs(&dir.path().join("nope"), dir.path(), 16).unwrap_err();
    assert!(err.to_string().contains("nope"));
}

#[test]
fn zero_depth_synthetic_is_the_clean_image() {
    let mut rng = common::rng(1);
    let clean = common::random_image(&mut rng, 8, 8);
    let s = make_synthetic(&clean, &DepthSource::Constant(0.0), &mut ParamSampler::new(3)).unwrap();
    assert_eq!(s.degraded, clean);
}

#[test]
fn synthetic_samples_are_reproducible_and_recoverable() {
    let mut rng = common::rng(2);
    let mut a = ParamSampler::new(11);
    let mut b = ParamSampler::new(11);
    for k in 0..5 {
        let clean = procedural_scene(32, &mut rng);
        let depth = if k % 2 == 0 {
            DepthSource::Gradient { near: 0.5, far: 5.0 }
        } else {
            DepthSource::Constant(2.5)
        };
        let s = make_synthetic(&clean, &depth, &mut a).unwrap();
        assert_eq!(s, make_synthetic(&clean, &depth, &mut b).unwrap());
        if k % 2 == 1 {
            // a constant range cannot separate t_D from t_B
            continue;
        }
        let fit = fit_constant_params(&s.degraded, &s.clean, &s.depth).unwrap();
        let got = [fit.params.t_d, fit.params.t_b, fit.params.b_inf];
        let want = [s.params.t_d, s.params.t_b, s.params.b_inf];
        for (g, w) in got.iter().zip(want) {
            assert!(common::max_abs_diff(&g.to_array(), &w.to_array()) < 1e-3, "{g:?} vs {w:?}");
        }
    }
}

#[test]
fn recovery_survives_a_sixteen_bit_file() {
    let mut rng = common::rng(3);
    let clean = procedural_scene(64, &mut rng);
    let s = make_synthetic(&clean, &DepthSource::Gradient { near: 0.5, far: 5.0 }, &mut ParamSampler::new(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.png");
    save_png16(&s.degraded, &path).unwrap();
    let back = load_image_native(&path).unwrap();
    let fit = fit_constant_params(&back, &s.clean, &s.depth).unwrap();
    let got = [fit.params.t_d, fit.params.t_b, fit.params.b_inf];
    let want = [s.params.t_d, s.params.t_b, s.params.b_inf];
    for (g, w) in got.iter().zip(want) {
        assert!(common::max_abs_diff(&g.to_array(), &w.to_array()) < 1e-3, "{g:?} vs {w:?}");
    }
}

#[test]
fn manifests_round_trip_through_files() {
    let mut sampler = ParamSampler::new(9);
    let m = SyntheticManifest {
        image: "000.png".into(),
        depth: DepthSource::Gradient { near: 0.5, far: 5.0 }.to_string(),
        seed: Some(9),
        params: sampler.sample(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    std::fs::write(&path, m.to_toml()).unwrap();
    let back = SyntheticManifest::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.depth.parse::<DepthSource>().unwrap().to_string(), m.depth);
}
