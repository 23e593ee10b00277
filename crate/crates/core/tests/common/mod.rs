//! Fixtures and independent oracles shared by the integration tests and the
//! acceptance runner. Oracles recompute results from first principles where
//! practical and only lean on the library for rendering.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use reenact_core::blend::{baseline_code, blend_styles, BaselineMode};
use reenact_core::container::write_trajectory;
use reenact_core::generator::{
    wplus_to_style, Generator, GeneratorSpec, InputTransform, LinearGenerator, RiggedChannel, ToyGenerator,
};
use reenact_core::image::{Image, Mask};
use reenact_core::latent::{
    BlendCoefficients, LatentTrajectory, LatentWPlus, RigidParams, SChannelAddress, StyleLayout, StyleVector, LATENT_DIM,
};
use reenact_core::metrics::fid;
use reenact_core::mining::{
    mine_channels, mine_scores, random_probes, BackgroundDirection, CatalogEntry, ChannelCatalog, MiningConfig, Thresholds,
};
use reenact_core::perception::{
    CentroidLandmarker, FaceLayout, LandmarkDetector, LinearPoseRegressor, PartLabel, PartSegmenter, PoseAngles,
    RectSegmenter, SyntheticFace,
};
use reenact_core::pipeline::{default_rigs, write_demo, DemoSpec};
use reenact_core::pose::{match_pose, pose_of_frame, PoseMatchConfig};
use reenact_core::rigid::{canonical, rigid_from_landmarks, smooth_track, RigidTrack};

// ---------------------------------------------------------------- fixtures

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

/// Compare `actual` with a frozen fixture. With `UPDATE_FIXTURES=1` the
/// fixture is rewritten instead.
pub fn matches_golden(name: &str, actual: &[u8]) -> bool {
    let path = fixture_path(name);
    if std::env::var("UPDATE_FIXTURES").as_deref() == Ok("1") {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return true;
    }
    match std::fs::read(&path) {
        Ok(expected) => expected == actual,
        Err(e) => panic!("fixture {} unreadable ({e}); regenerate with UPDATE_FIXTURES=1", path.display()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn small_trajectory() -> LatentTrajectory {
    let frames = (0..3)
        .map(|j| {
            let code = (0..2 * LATENT_DIM)
                .map(|i| ((i as f64 * 0.37 + j as f64).sin() * 1.5) as f32 as f64)
                .collect();
            LatentWPlus::new(2, code).unwrap()
        })
        .collect();
    LatentTrajectory::new(frames, "fixture", 30.0).unwrap()
}

/// 160 frames at 30 fps, the protocol clip length.
pub fn protocol_trajectory() -> LatentTrajectory {
    LatentTrajectory::new(random_probes(2, 160, 160), "protocol", 30.0).unwrap()
}

pub fn fixture_catalog() -> ChannelCatalog {
    let entries = vec![
        CatalogEntry {
            layer: 3,
            channel: 0,
            part: PartLabel::Eyes,
            iou_fg: 0.1 + 0.2,
            iou_bg: 1.0 / 3.0,
        },
        CatalogEntry {
            layer: 6,
            channel: 11,
            part: PartLabel::Mouth,
            iou_fg: 0.875,
            iou_bg: 0.0,
        },
    ];
    ChannelCatalog::new(Thresholds { t_fg: 0.3, t_bg: 0.5 }, 32, "toy-fixture".into(), entries).unwrap()
}

pub fn trajectory_bytes(traj: &LatentTrajectory) -> Vec<u8> {
    let mut out = Vec::new();
    write_trajectory(traj, &mut out).unwrap();
    out
}

// ---------------------------------------------------------------- generators

pub fn toy_spec(layers: usize, width: usize, size: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        layer_count: layers,
        channel_widths: vec![width; layers],
        image_size: size,
        frequency_count: 32,
        seed,
    }
}

pub fn render(gen: &dyn Generator, w: &LatentWPlus, xform: &InputTransform) -> Image {
    gen.render(&wplus_to_style(gen, w).unwrap(), xform).unwrap()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- rigid

/// A smooth 60-frame sway that starts and ends at rest.
pub fn rigid_truth(n: usize) -> Vec<RigidParams> {
    (0..n)
        .map(|j| {
            let c = 0.5 * (1.0 - (2.0 * PI * j as f64 / (n - 1) as f64).cos());
            RigidParams::new(0.08 * c, -0.05 * c, 0.2 * c).unwrap()
        })
        .collect()
}

pub struct RigidRecovery {
    pub raw_error: f64,
    pub smoothed_error: f64,
}

pub fn rigid_recovery(size: usize, n: usize) -> RigidRecovery {
    let face = SyntheticFace::new(size, size);
    let truth = rigid_truth(n);
    let lm = CentroidLandmarker::default();
    let raw: Vec<RigidParams> = truth
        .iter()
        .map(|p| rigid_from_landmarks(&lm.detect(&face.render(p)).unwrap(), canonical::EYE_MIDPOINT).unwrap())
        .collect();
    let smoothed = smooth_track(&RigidTrack::new(raw.clone(), 30.0).unwrap(), 3).unwrap();
    let error = |ps: &[RigidParams]| {
        ps.iter()
            .zip(&truth)
            .map(|(a, b)| (a.tx - b.tx).abs().max((a.ty - b.ty).abs()).max((a.r - b.r).abs()))
            .fold(0.0, f64::max)
    };
    RigidRecovery {
        raw_error: error(&raw),
        smoothed_error: error(&smoothed.params),
    }
}

// ---------------------------------------------------------------- equivariance

pub struct Equivariance {
    /// Worst pixel difference against the shifted base render.
    pub shift_max: f64,
    /// Worst per-code mean abs error of the quarter turn on the central crop.
    pub rotation_mae: f64,
}

pub fn equivariance_toy() -> ToyGenerator {
    let spec = toy_spec(8, 8, 32, 11);
    ToyGenerator::new(spec.clone()).unwrap().with_rigs(default_rigs(&spec)).unwrap()
}

pub fn equivariance(codes: usize) -> Equivariance {
    let gen = equivariance_toy();
    let n = gen.image_size();
    let shifts: [(i64, i64); 4] = [(1, 0), (0, 1), (3, -2), (-5, 4)];
    let mut shift_max: f64 = 0.0;
    let mut rotation_mae: f64 = 0.0;
    for w in random_probes(gen.layer_count(), codes, 20) {
        let s = wplus_to_style(&gen, &w).unwrap();
        let base = gen.render(&s, &InputTransform::identity()).unwrap();
        for (k, m) in shifts {
            let p = RigidParams::new(k as f64 / n as f64, m as f64 / n as f64, 0.0).unwrap();
            let moved = gen.render(&s, &InputTransform::from_rigid(&p)).unwrap();
            for y in 0..n as i64 {
                for x in 0..n as i64 {
                    let (sx, sy) = (x - k, y - m);
                    if sx < 0 || sy < 0 || sx >= n as i64 || sy >= n as i64 {
                        continue;
                    }
                    let a = moved.pixel(x as usize, y as usize);
                    let b = base.pixel(sx as usize, sy as usize);
                    shift_max = shift_max.max(max_abs(&a, &b));
                }
            }
        }
        let quarter = RigidParams::new(0.0, 0.0, PI / 2.0).unwrap();
        let turned = gen.render(&s, &InputTransform::from_rigid(&quarter)).unwrap();
        let oracle = base.rotate_quarter();
        let (lo, hi) = (n / 4, 3 * n / 4);
        let mut sum = 0.0;
        for y in lo..hi {
            for x in lo..hi {
                let (a, b) = (turned.pixel(x, y), oracle.pixel(x, y));
                sum += a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>();
            }
        }
        rotation_mae = rotation_mae.max(sum / ((hi - lo) * (hi - lo) * 3) as f64);
    }
    Equivariance { shift_max, rotation_mae }
}

// ---------------------------------------------------------------- pose

pub struct PoseCheck {
    pub residual: f64,
    pub oracle_residual: f64,
    /// Distance between the optimizer's pose and the least-squares pose.
    pub pose_gap: f64,
    /// Mean |w − w₀| over the optimized layers at a huge identity weight.
    pub drift: f64,
    pub outer_untouched: bool,
}

fn raw_pose(gen: &LinearGenerator, reg: &LinearPoseRegressor, w: &LatentWPlus) -> DVector<f64> {
    let img = render(gen, w, &InputTransform::identity());
    DVector::from_column_slice(&reg.raw(&img).unwrap())
}

pub fn pose_check() -> PoseCheck {
    let layers = 12;
    let gen = LinearGenerator::new(vec![4; layers], 8, 5).unwrap();
    let reg = LinearPoseRegressor::random(8, 8, 6).unwrap();
    let w0 = random_probes(layers, 1, 3).remove(0);
    let p0 = raw_pose(&gen, &reg, &w0);
    let target_v = &p0 + DVector::from_column_slice(&[0.05, -0.03, 0.04]);
    let target = PoseAngles::new(target_v[0], target_v[1], target_v[2]).unwrap();

    // The pose is affine in w, so unit finite differences give its Jacobian
    // on the optimized layers exactly (up to rounding).
    let cols = 8 * LATENT_DIM;
    let mut jac = DMatrix::zeros(3, cols);
    for i in 0..cols {
        let mut w = w0.clone();
        w.layer_mut(i / LATENT_DIM)[i % LATENT_DIM] += 1.0;
        jac.set_column(i, &(raw_pose(&gen, &reg, &w) - &p0));
    }
    let d = &target_v - &p0;
    let gram = &jac * jac.transpose();
    let delta = jac.transpose() * gram.lu().solve(&d).expect("full rank");
    let mut w_star = w0.clone();
    for i in 0..cols {
        w_star.layer_mut(i / LATENT_DIM)[i % LATENT_DIM] += delta[i];
    }
    let p_star = raw_pose(&gen, &reg, &w_star);
    let oracle_residual = (&p_star - &target_v).norm();

    let free = PoseMatchConfig {
        identity_weight: 0.0,
        ..PoseMatchConfig::default()
    };
    let out = match_pose(&gen, &reg, &w0, &target, &free).unwrap();
    let achieved = DVector::from_column_slice(&out.pose.to_array());

    let pinned = PoseMatchConfig {
        identity_weight: 1e6,
        ..PoseMatchConfig::default()
    };
    let held = match_pose(&gen, &reg, &w0, &target, &pinned).unwrap();
    let drift = held.code.l1_distance(&w0, 0..8) / cols as f64;
    let outer_untouched = (8..layers).all(|l| {
        let same = |c: &LatentWPlus| c.layer(l).iter().zip(w0.layer(l)).all(|(a, b)| a.to_bits() == b.to_bits());
        same(&out.code) && same(&held.code)
    });
    PoseCheck {
        residual: out.residual,
        oracle_residual,
        pose_gap: (achieved - p_star).norm(),
        drift,
        outer_untouched,
    }
}

/// Current pose of `w` under the linear stubs (used by unit-level pose tests).
pub fn linear_pose(gen: &LinearGenerator, reg: &LinearPoseRegressor, w: &LatentWPlus) -> PoseAngles {
    pose_of_frame(gen, reg, w).unwrap()
}

// ---------------------------------------------------------------- mining

/// Toy backend with 8 channels per layer, the default rigs, and one extra
/// mouth channel at (2, 5).
pub fn mining_toy() -> ToyGenerator {
    let spec = toy_spec(8, 8, 32, 21);
    let mut rigs = default_rigs(&spec);
    rigs.push(RiggedChannel {
        layer: 2,
        channel: 5,
        rect: FaceLayout::default().mouth,
    });
    ToyGenerator::new(spec).unwrap().with_rigs(rigs).unwrap()
}

fn brute_normalize(map: &[f64]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in map {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo <= 0.0 {
        return vec![0.0; map.len()];
    }
    map.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn brute_mask(map: &[f64], w: usize, h: usize, n: usize, threshold: f64) -> Vec<bool> {
    let coord = |i: usize, src: usize| {
        let f = ((i as f64 + 0.5) * src as f64 / n as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = f.floor() as usize;
        (i0, (i0 + 1).min(src - 1), f - i0 as f64)
    };
    let mut out = vec![false; n * n];
    for y in 0..n {
        let (y0, y1, ay) = coord(y, h);
        for x in 0..n {
            let (x0, x1, ax) = coord(x, w);
            let top = map[y0 * w + x0] * (1.0 - ax) + map[y0 * w + x1] * ax;
            let bottom = map[y1 * w + x0] * (1.0 - ax) + map[y1 * w + x1] * ax;
            out[y * n + x] = top * (1.0 - ay) + bottom * ay >= threshold;
        }
    }
    out
}

fn brute_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

type ScoreKey = (usize, usize, PartLabel);

/// Every (channel, part) score recomputed with plain loops.
pub fn brute_force_scores(
    gen: &dyn Generator,
    segmenter: &dyn PartSegmenter,
    probes: &[LatentWPlus],
    binarize: f64,
) -> BTreeMap<ScoreKey, (f64, f64)> {
    let n = gen.image_size();
    let mut sums: BTreeMap<ScoreKey, (f64, f64)> = BTreeMap::new();
    for probe in probes {
        let synth = gen.synthesize(&wplus_to_style(gen, probe).unwrap(), &InputTransform::identity()).unwrap();
        let parts = segmenter.segment(&synth.image).unwrap();
        for l in 0..gen.layer_count() {
            for c in 0..gen.layout().width(l) {
                let (map, w, h) = synth.features.map(l, c);
                let mask = brute_mask(&brute_normalize(map), w, h, n, binarize);
                for part in PartLabel::FOREGROUND {
                    let fg: &Mask = parts.get(part);
                    let bg: Vec<bool> = fg.bits().iter().map(|b| !b).collect();
                    let e = sums.entry((l, c, part)).or_insert((0.0, 0.0));
                    e.0 += brute_iou(&mask, fg.bits());
                    e.1 += brute_iou(&mask, &bg);
                }
            }
        }
    }
    let k = probes.len() as f64;
    sums.into_iter().map(|(key, (f, b))| (key, (f / k, b / k))).collect()
}

fn entry_tuples(catalog: &ChannelCatalog) -> Vec<(usize, usize, PartLabel, u64, u64)> {
    let mut v: Vec<_> = catalog
        .entries
        .iter()
        .map(|e| (e.layer, e.channel, e.part, e.iou_fg.to_bits(), e.iou_bg.to_bits()))
        .collect();
    v.sort();
    v
}

pub struct MiningCheck {
    pub catalog_size: usize,
    pub catalog_matches: bool,
    pub extra_rig_found: bool,
    pub monotone_sweeps: usize,
    pub sweeps: usize,
}

pub fn mining_check(sweeps: usize) -> MiningCheck {
    let gen = mining_toy();
    let seg = RectSegmenter::new(FaceLayout::default(), 32, 32).unwrap();
    let probes = random_probes(gen.layer_count(), 6, 4);
    let cfg = MiningConfig::default();
    let catalog = mine_channels(&gen, &seg, &probes, &cfg).unwrap();
    let brute = brute_force_scores(&gen, &seg, &probes, cfg.binarize_threshold);
    let t = cfg.thresholds;
    let mut expected: Vec<_> = brute
        .iter()
        .filter(|(_, (f, b))| *f >= t.t_fg && *b <= t.t_bg)
        .map(|((l, c, p), (f, b))| (*l, *c, *p, f.to_bits(), b.to_bits()))
        .collect();
    expected.sort();
    let extra_rig_found = catalog.entries.iter().any(|e| e.layer == 2 && e.channel == 5 && e.part == PartLabel::Mouth);

    let scores = mine_scores(&gen, &seg, &probes, cfg.binarize_threshold).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut monotone_sweeps = 0;
    let set = |fg: f64, bg: f64| -> BTreeSet<(usize, usize, PartLabel)> {
        scores
            .select(Thresholds { t_fg: fg, t_bg: bg }, BackgroundDirection::AtMost)
            .unwrap()
            .entries
            .iter()
            .map(|e| (e.layer, e.channel, e.part))
            .collect()
    };
    for _ in 0..sweeps {
        let mut fgs: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let mut bgs: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        fgs.sort_by(f64::total_cmp);
        bgs.sort_by(f64::total_cmp);
        let (fixed_fg, fixed_bg) = (rng.random::<f64>() * 0.5, rng.random::<f64>() * 0.5);
        // Raising t_fg only removes channels; raising t_bg only admits them.
        let fg_ok = fgs.windows(2).all(|p| set(p[1], fixed_bg).is_subset(&set(p[0], fixed_bg)));
        let bg_ok = bgs.windows(2).all(|p| set(fixed_fg, p[0]).is_subset(&set(fixed_fg, p[1])));
        monotone_sweeps += (fg_ok && bg_ok) as usize;
    }
    MiningCheck {
        catalog_size: catalog.entries.len(),
        catalog_matches: entry_tuples(&catalog) == expected,
        extra_rig_found,
        monotone_sweeps,
        sweeps,
    }
}

// ---------------------------------------------------------------- blend

pub fn random_style(layout: &StyleLayout, rng: &mut ChaCha8Rng) -> StyleVector {
    let layers = layout
        .channel_widths()
        .iter()
        .map(|&w| (0..w).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    StyleVector::from_layers(layout, layers).unwrap()
}

fn combine(a: f64, x: &StyleVector, b: f64, y: &StyleVector) -> StyleVector {
    let layout = x.layout();
    let layers = (0..layout.layer_count())
        .map(|l| x.layer(l).unwrap().iter().zip(y.layer(l).unwrap()).map(|(u, v)| a * u + b * v).collect())
        .collect();
    StyleVector::from_layers(layout, layers).unwrap()
}

fn style_gap(x: &StyleVector, y: &StyleVector) -> f64 {
    x.iter().zip(y.iter()).map(|((_, a), (_, b))| (a - b).abs()).fold(0.0, f64::max)
}

pub fn blend_catalog() -> BTreeSet<SChannelAddress> {
    [(2, 1), (3, 0), (4, 2), (6, 3), (7, 1), (9, 0)]
        .into_iter()
        .map(|(l, c)| SChannelAddress::new(l, c))
        .collect()
}

/// Worst deviation from `f(aX + bY) = a·f(X) + b·f(Y)` over random style
/// tuples `X = (s_ref, s_j, s_base, s_outer)`.
pub fn blend_superposition(trials: usize) -> f64 {
    let layout = StyleLayout::new(vec![4; 12]).unwrap();
    let catalog = blend_catalog();
    let coeffs = BlendCoefficients::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x: Vec<StyleVector> = (0..4).map(|_| random_style(&layout, &mut rng)).collect();
        let y: Vec<StyleVector> = (0..4).map(|_| random_style(&layout, &mut rng)).collect();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let f = |v: &[StyleVector]| blend_styles(&v[0], &v[1], &v[2], &v[3], &catalog, &coeffs).unwrap();
        let mixed: Vec<StyleVector> = x.iter().zip(&y).map(|(p, q)| combine(a, p, b, q)).collect();
        let lhs = f(&mixed);
        let rhs = combine(a, &f(&x), b, &f(&y));
        worst = worst.max(style_gap(&lhs, &rhs));
    }
    worst
}

pub struct BaselineModes {
    /// Worst deviation of either mode from its closed form.
    pub formula_error: f64,
    /// The modes agree on frame 0 and disagree on every later frame.
    pub differ_after_first: bool,
}

/// Linear drift `w_j = w_0 + j·d`: cumulative gives `w_ref + j·d`, literal
/// gives `w_ref − d` from frame 1 on.
pub fn baseline_modes(frames: usize) -> BaselineModes {
    let probes = random_probes(4, 3, 8);
    let (w_ref, w0, d) = (&probes[0], &probes[1], &probes[2]);
    let codes: Vec<LatentWPlus> = (0..frames)
        .map(|j| {
            let v = w0.as_slice().iter().zip(d.as_slice()).map(|(a, b)| a + j as f64 * b).collect();
            LatentWPlus::new(4, v).unwrap()
        })
        .collect();
    let traj = LatentTrajectory::new(codes.clone(), "drift", 30.0).unwrap();
    let mut formula_error: f64 = 0.0;
    let mut differ_after_first = true;
    for j in 0..frames {
        let cum = baseline_code(w_ref, &traj, j, BaselineMode::Cumulative).unwrap();
        let lit = baseline_code(w_ref, &traj, j, BaselineMode::Literal).unwrap();
        let prev = &codes[j.saturating_sub(1)];
        for i in 0..w_ref.as_slice().len() {
            let r = w_ref.as_slice()[i];
            let want_cum = r + (codes[j].as_slice()[i] - w0.as_slice()[i]);
            let want_lit = r + (prev.as_slice()[i] - codes[j].as_slice()[i]);
            formula_error = formula_error
                .max((cum.as_slice()[i] - want_cum).abs())
                .max((lit.as_slice()[i] - want_lit).abs());
        }
        let same = cum == lit;
        differ_after_first &= if j == 0 { same } else { !same };
    }
    BaselineModes {
        formula_error,
        differ_after_first,
    }
}

// ---------------------------------------------------------------- sessions

/// Demo inputs plus a driving clip that never moves: every driving code is
/// the reference and the rigid track is the identity.
pub fn null_motion_demo(dir: &Path, frames: usize) -> reenact_core::pipeline::Demo {
    let spec = DemoSpec {
        frames,
        ..DemoSpec::default()
    };
    let demo = write_demo(dir, &spec).unwrap();
    let still = LatentTrajectory::new(vec![demo.reference.clone(); frames], "still", spec.fps).unwrap();
    reenact_core::container::save_trajectory(&still, &dir.join("driving.v2t")).unwrap();
    let rest = RigidTrack::new(vec![RigidParams::identity(); frames], spec.fps).unwrap();
    std::fs::write(dir.join("driving_rigid.json"), rest.to_json().unwrap()).unwrap();
    demo
}

pub fn demo_spec(frames: usize) -> DemoSpec {
    DemoSpec {
        frames,
        ..DemoSpec::default()
    }
}

// ---------------------------------------------------------------- metrics

pub fn random_features(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn fid_self(n: usize, d: usize) -> f64 {
    let a = random_features(n, d, 12);
    fid(&a, &a).unwrap()
}

/// Landmarks on integer pixels of a 64×64 frame, and the same set moved by
/// (0.5, 0.25) px. Every quantity involved is a power of two, so the
/// expected ΔK is exact: `(0.5/64)² = 2⁻¹⁴` and `(0.25/64)² = 2⁻¹⁶`.
pub fn dk_offset_case() -> ((f64, f64), (f64, f64)) {
    use reenact_core::metrics::{keypoint_distance, KeypointNormalization};
    use reenact_core::rigid::LandmarkSet;
    let target: Vec<[f64; 2]> = (0..68).map(|i| [(i % 17 + 20) as f64, (i / 17 + 24) as f64]).collect();
    let pred: Vec<[f64; 2]> = target.iter().map(|p| [p[0] + 0.5, p[1] + 0.25]).collect();
    let frames = |pts: &Vec<[f64; 2]>| vec![LandmarkSet::ibug(pts.clone(), 64, 64).unwrap(); 3];
    let got = keypoint_distance(&frames(&pred), &frames(&target), KeypointNormalization::Frame).unwrap();
    (got, (2f64.powi(-14), 2f64.powi(-16)))
}

/// Forward/reverse Fréchet distances (method, baseline) of a toy session
/// driven by a clip that reads the same both ways.
pub fn palindrome_fids(dir: &Path, frames: usize) -> (f64, f64) {
    let spec = DemoSpec {
        frames,
        palindrome: true,
        ..DemoSpec::default()
    };
    let demo = write_demo(dir, &spec).unwrap();
    let (_, prepared) = reenact_core::pipeline::prepare_session(&demo.config).unwrap();
    let report = prepared.evaluate().unwrap();
    (report.method.forward.fid, report.baseline.forward.fid)
}
