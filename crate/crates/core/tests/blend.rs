mod common;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reenact_core::blend::{baseline_code, blend_styles, BaselineMode, LOCAL_LAYERS};
use reenact_core::generator::{wplus_to_style, InputTransform};
use reenact_core::latent::{BlendCoefficients, MotionSource, StyleLayout};
use reenact_core::pipeline::{prepare_session, run_session, write_demo, InputSpec};

#[test]
fn superposition_holds() {
    let worst = common::blend_superposition(100);
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn blend_is_local_to_catalog_and_mid_layers() {
    let layout = StyleLayout::new(vec![4; 12]).unwrap();
    let catalog = common::blend_catalog();
    let coeffs = BlendCoefficients::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s: Vec<_> = (0..4).map(|_| common::random_style(&layout, &mut rng)).collect();
    let out = blend_styles(&s[0], &s[1], &s[2], &s[3], &catalog, &coeffs).unwrap();
    let noise = common::random_style(&layout, &mut rng);
    for (addr, v) in out.iter() {
        let cat = catalog.contains(&addr);
        let local = LOCAL_LAYERS.contains(&addr.layer);
        if !cat && !local {
            assert_eq!(v, s[3].get(addr).unwrap(), "{addr}");
        }
        if !cat && local {
            let (r, b) = (s[0].get(addr).unwrap(), s[2].get(addr).unwrap());
            assert_eq!(v, b + 0.5 * (r - b));
        }
    }
    // Driving styles only matter on catalog addresses.
    let mut s_j = noise.clone();
    for a in &catalog {
        s_j.set(*a, s[1].get(*a).unwrap()).unwrap();
    }
    assert_eq!(blend_styles(&s[0], &s_j, &s[2], &s[3], &catalog, &coeffs).unwrap(), out);

    let doubled = BlendCoefficients { gamma: 2.0, ..coeffs };
    let twice = blend_styles(&s[0], &s[1], &s[2], &s[3], &catalog, &doubled).unwrap();
    for (addr, v) in twice.iter() {
        let want = if catalog.contains(&addr) { s[2].get(addr).unwrap() } else { 0.0 };
        assert!((v - out.get(addr).unwrap() - want).abs() < 1e-12, "{addr}");
    }
    let bad = BlendCoefficients { zeta: 1.5, ..coeffs };
    assert_eq!(blend_styles(&s[0], &s[1], &s[2], &s[3], &catalog, &bad).unwrap_err().field(), Some("zeta"));
}

#[test]
fn literal_and_cumulative_baselines() {
    let b = common::baseline_modes(6);
    assert!(b.formula_error < 1e-12, "{}", b.formula_error);
    assert!(b.differ_after_first);
}

#[test]
fn null_motion_reproduces_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let demo = common::null_motion_demo(dir.path(), 6);
    let (_, prepared) = prepare_session(&demo.config).unwrap();
    assert_eq!(prepared.w_ref_pose, prepared.reference_code);
    let none = BTreeMap::new();
    for j in 0..6 {
        let img = prepared.render_frame(&prepared.config.coefficients, &none, j).unwrap();
        assert_eq!(img.data(), prepared.reference_image.data(), "frame {j}");
    }
    drop(prepared);
    let mut cfg = demo.config.clone();
    cfg.evaluate = false;
    let out = run_session(&cfg).unwrap();
    let reference_png = common::render(
        &reenact_core::generator::load_toy_checkpoint(&demo.checkpoint).unwrap(),
        &demo.reference,
        &InputTransform::identity(),
    )
    .to_png()
    .unwrap();
    for f in &out.frames {
        assert_eq!(std::fs::read(f).unwrap(), reference_png, "{}", f.display());
    }
}

#[test]
fn local_off_keeps_reference_except_pose_layers() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path(), &common::demo_spec(5)).unwrap();
    let mut cfg = demo.config.clone();
    cfg.coefficients.local_source = MotionSource::None;
    let (_, p) = prepare_session(&cfg).unwrap();
    let gen = p.backends.generator.as_ref();
    let s_ref = wplus_to_style(gen, &p.w_ref_pose).unwrap();
    let none = BTreeMap::new();
    for j in 0..5 {
        let base = baseline_code(&p.w_ref_pose, &p.driving, j, BaselineMode::Cumulative).unwrap();
        let s_pose = wplus_to_style(gen, &base).unwrap();
        let mut want = s_ref.clone();
        for l in 0..=2 {
            want.set_layer(l, s_pose.layer(l).unwrap().to_vec()).unwrap();
        }
        let got = p.frame_style(&cfg.coefficients, &none, j).unwrap();
        assert_eq!(got, want, "frame {j}");
        let xf = InputTransform::from_rigid(&p.driving_rigid.params[j]);
        let img = p.backends.render_generator.render(&want, &xf).unwrap();
        assert_eq!(p.render_frame(&cfg.coefficients, &none, j).unwrap().data(), img.data());
    }
}

#[test]
fn codriving_supplies_rigid_and_local_motion() {
    let dir = tempfile::tempdir().unwrap();
    let demo = write_demo(dir.path(), &common::demo_spec(5)).unwrap();
    // A second clip: the same codes reversed with a different sway.
    let co_codes = demo.driving.reversed();
    reenact_core::container::save_trajectory(&co_codes, &dir.path().join("co.v2t")).unwrap();
    let mut co_rigid = demo.rigid.reversed();
    for p in &mut co_rigid.params {
        p.tx += 0.03;
    }
    std::fs::write(dir.path().join("co_rigid.json"), co_rigid.to_json().unwrap()).unwrap();
    let mut cfg = demo.config.clone();
    cfg.codriving = Some(InputSpec {
        path: dir.path().join("co.v2t"),
        align: false,
        rigid_track: Some(dir.path().join("co_rigid.json")),
    });
    cfg.coefficients.rigid_source = MotionSource::Codriving;
    cfg.coefficients.local_source = MotionSource::Codriving;
    let (_, p) = prepare_session(&cfg).unwrap();
    let none = BTreeMap::new();
    let routed = cfg.coefficients;
    let plain = BlendCoefficients {
        rigid_source: MotionSource::Driving,
        ..routed
    };
    for j in 0..5 {
        let style = p.frame_style(&routed, &none, j).unwrap();
        assert_eq!(style, p.frame_style(&plain, &none, j).unwrap());
        let xf = InputTransform::from_rigid(&co_rigid.params[j]);
        let want = p.backends.render_generator.render(&style, &xf).unwrap();
        assert_eq!(p.render_frame(&routed, &none, j).unwrap().data(), want.data());
        // Catalog channels follow the co-driving clip.
        let gen = p.backends.generator.as_ref();
        let s_j = wplus_to_style(gen, &co_codes.frames()[j]).unwrap();
        let s_ref = wplus_to_style(gen, &p.w_ref_pose).unwrap();
        let s_base = wplus_to_style(gen, &baseline_code(&p.w_ref_pose, &co_codes, j, BaselineMode::Cumulative).unwrap()).unwrap();
        for a in p.catalog.addresses() {
            let want = (-s_ref.get(a).unwrap() + s_j.get(a).unwrap()) + s_base.get(a).unwrap();
            assert_eq!(style.get(a).unwrap(), want);
        }
    }
}
