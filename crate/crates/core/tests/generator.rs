mod common;

use reenact_core::generator::{
    load_pretrained, load_toy_checkpoint, save_toy_checkpoint, style_slices, wplus_to_style, Generator,
    InputTransform, ToyGenerator,
};
use reenact_core::latent::{LatentWPlus, LATENT_DIM};
use reenact_core::mining::random_probes;

#[test]
fn integer_shifts_and_quarter_turns() {
    let e = common::equivariance(20);
    assert!(e.shift_max <= 1e-6, "shift {}", e.shift_max);
    assert!(e.rotation_mae <= 1e-3, "rotation {}", e.rotation_mae);
}

#[test]
fn style_vector_matches_dense_affine_product() {
    let gen = common::equivariance_toy();
    let w = random_probes(gen.layer_count(), 1, 2).remove(0);
    let s = wplus_to_style(&gen, &w).unwrap();
    for l in 0..gen.layer_count() {
        let a = gen.affine(l);
        for c in 0..a.width() {
            let mut dot = a.bias[c];
            for i in 0..LATENT_DIM {
                dot += a.weight[c * LATENT_DIM + i] * w.layer(l)[i];
            }
            let got = s.layer(l).unwrap()[c];
            assert!((got - dot).abs() < 1e-9, "layer {l} channel {c}: {got} vs {dot}");
        }
    }
    let partial = style_slices(&gen, &w, 3..=5).unwrap();
    assert_eq!(partial.populated_layers().collect::<Vec<_>>(), vec![3, 4, 5]);
    assert_eq!(partial.layer(4), s.layer(4));
}

#[test]
fn style_map_is_affine_along_lines() {
    let gen = common::equivariance_toy();
    let codes = random_probes(gen.layer_count(), 2, 3);
    let (s0, s1) = (wplus_to_style(&gen, &codes[0]).unwrap(), wplus_to_style(&gen, &codes[1]).unwrap());
    for a in [0.0, 0.25, 0.5, 0.9, 1.0] {
        let mid = wplus_to_style(&gen, &codes[0].lerp(&codes[1], a).unwrap()).unwrap();
        for ((_, m), ((_, x), (_, y))) in mid.iter().zip(s0.iter().zip(s1.iter())) {
            assert!((m - (a * x + (1.0 - a) * y)).abs() < 1e-9);
        }
    }
}

#[test]
fn construction_and_renders_are_deterministic() {
    let a = common::equivariance_toy();
    let b = common::equivariance_toy();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let w = random_probes(a.layer_count(), 1, 4).remove(0);
    let xf = InputTransform::identity();
    let (ia, ib) = (common::render(&a, &w, &xf), common::render(&b, &w, &xf));
    assert_eq!(ia.data(), ib.data());
    let other = ToyGenerator::new(common::toy_spec(8, 8, 32, 12)).unwrap();
    assert_ne!(other.fingerprint(), a.fingerprint());
}

#[test]
fn checkpoint_round_trip_and_finetune() {
    let dir = tempfile::tempdir().unwrap();
    let gen = common::equivariance_toy();
    let path = dir.path().join("toy.v2g");
    save_toy_checkpoint(&gen, &path).unwrap();
    let back = load_toy_checkpoint(&path).unwrap();
    let w = random_probes(gen.layer_count(), 1, 5).remove(0);
    let xf = InputTransform::identity();
    // Weights are stored as f32, so renders agree closely but not bitwise.
    let (a, b) = (common::render(&gen, &w, &xf), common::render(&back, &w, &xf));
    assert!(a.mean_abs_diff(&b) < 1e-5);

    let tuned = back.clone().with_perturbed_synthesis(0.02, 9);
    let tuned_path = dir.path().join("tuned.v2g");
    save_toy_checkpoint(&tuned, &tuned_path).unwrap();
    let loaded = load_pretrained(&path, Some(&tuned_path)).unwrap();
    assert_ne!(loaded.fingerprint(), back.fingerprint());
    // Fine-tuning leaves the affine maps, and so the style vectors, alone.
    let s = wplus_to_style(loaded.as_ref(), &w).unwrap();
    assert_eq!(s, wplus_to_style(&back, &w).unwrap());
    assert!(loaded.render(&s, &xf).unwrap().mean_abs_diff(&b) > 0.0);

    std::fs::write(dir.path().join("bad.v2g"), b"V2SGTRJ1....").unwrap();
    assert!(load_toy_checkpoint(&dir.path().join("bad.v2g")).is_err());
    assert!(LatentWPlus::new(2, vec![0.0; 10]).is_err());
}
