//! S-space channel mining: find channels whose activation maps sit on one
//! facial part and stay off the rest of the face.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::generator::{wplus_to_style, Generator, InputTransform};
use crate::image::Mask;
use crate::latent::{LatentWPlus, SChannelAddress, LATENT_DIM};
use crate::perception::{PartLabel, PartSegmenter};

pub const CATALOG_VERSION: u64 = 1;

/// Min–max normalization to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_map(map: &[f64]) -> Vec<f64> {
    let min = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; map.len()];
    }
    map.iter().map(|v| (v - min) / range).collect()
}

/// Bilinear resample of a `width × height` map to `target` (pixel-centre
/// aligned, border clamped), then `value ≥ threshold`.
pub fn binarize_and_upsample(
    map: &[f64],
    (width, height): (usize, usize),
    (tw, th): (usize, usize),
    threshold: f64,
) -> Result<Mask> {
    if map.len() != width * height || width == 0 || height == 0 {
        return Err(invalid("map", "buffer does not match its dimensions"));
    }
    if tw < width || th < height {
        return Err(invalid(
            "target_size",
            format!("{tw}×{th} is smaller than the {width}×{height} source"),
        ));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid("threshold", format!("must lie in (0, 1), got {threshold}")));
    }
    let axis = |i: usize, src: usize, dst: usize| {
        let f = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = f.floor() as usize;
        (i0, (i0 + 1).min(src - 1), f - i0 as f64)
    };
    let xs: Vec<_> = (0..tw).map(|x| axis(x, width, tw)).collect();
    Ok(Mask::from_fn(tw, th, |x, y| {
        let (y0, y1, ay) = axis(y, height, th);
        let (x0, x1, ax) = xs[x];
        let at = |xx: usize, yy: usize| map[yy * width + xx];
        let top = at(x0, y0) * (1.0 - ax) + at(x1, y0) * ax;
        let bottom = at(x0, y1) * (1.0 - ax) + at(x1, y1) * ax;
        top * (1.0 - ay) + bottom * ay >= threshold
    }))
}

/// `|a ∩ b| / |a ∪ b|`, zero when the union is empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(invalid("mask", "IOU of masks with different sizes"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.bits().iter().zip(b.bits()) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Which way the background IOU is compared with `t_bg`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundDirection {
    /// Keep channels with background IOU at most `t_bg`.
    #[default]
    AtMost,
    /// Keep channels with background IOU at least `t_bg`.
    AtLeast,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_fg: f64,
    pub t_bg: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { t_fg: 0.3, t_bg: 0.1 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t_fg", self.t_fg), ("t_bg", self.t_bg)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub thresholds: Thresholds,
    pub binarize_threshold: f64,
    pub probe_count: usize,
    pub iou_bg_direction: BackgroundDirection,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            binarize_threshold: 0.5,
            probe_count: 32,
            iou_bg_direction: BackgroundDirection::AtMost,
        }
    }
}

/// Seeded standard-normal W+ probe codes.
pub fn random_probes(layer_count: usize, count: usize, seed: u64) -> Vec<LatentWPlus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6f62);
    (0..count)
        .map(|_| {
            let code = (0..layer_count * LATENT_DIM)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z as f32 as f64
                })
                .collect();
            LatentWPlus::new(layer_count, code).expect("finite")
        })
        .collect()
}

/// Mean foreground and background IOU of every (channel, part) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScores {
    pub probe_count: usize,
    pub backend_fingerprint: String,
    pub scores: BTreeMap<(SChannelAddress, PartLabel), (f64, f64)>,
}

fn probe_scores(
    backend: &dyn Generator,
    segmenter: &dyn PartSegmenter,
    probe: &LatentWPlus,
    binarize: f64,
) -> Result<Vec<((SChannelAddress, PartLabel), (f64, f64))>> {
    let style = wplus_to_style(backend, probe)?;
    let synth = backend.synthesize(&style, &InputTransform::identity())?;
    let parts = segmenter.segment(&synth.image)?;
    let size = segmenter.output_size();
    let fg: Vec<(PartLabel, &Mask, Mask)> = PartLabel::FOREGROUND
        .iter()
        .map(|&p| (p, parts.get(p), parts.get(p).complement()))
        .collect();
    let mut out = Vec::new();
    for addr in backend.layout().addresses() {
        let (map, w, h) = synth.features.map(addr.layer, addr.channel);
        let mask = binarize_and_upsample(&normalize_map(map), (w, h), size, binarize)?;
        for (part, m_fg, m_bg) in &fg {
            out.push(((addr, *part), (iou(&mask, m_fg)?, iou(&mask, m_bg)?)));
        }
    }
    Ok(out)
}

/// Render every probe, segment it, and average per-channel IOUs.
pub fn mine_scores(
    backend: &dyn Generator,
    segmenter: &dyn PartSegmenter,
    probes: &[LatentWPlus],
    binarize_threshold: f64,
) -> Result<ChannelScores> {
    if probes.is_empty() {
        return Err(invalid("probes", "at least one probe code is required"));
    }
    let per_probe: Vec<_> = probes
        .par_iter()
        .map(|p| probe_scores(backend, segmenter, p, binarize_threshold))
        .collect::<Result<_>>()?;
    let mut sums: BTreeMap<(SChannelAddress, PartLabel), (f64, f64)> = BTreeMap::new();
    // Fixed probe order keeps the floating-point sums reproducible.
    for scores in &per_probe {
        for (key, (f, b)) in scores {
            let e = sums.entry(*key).or_insert((0.0, 0.0));
            e.0 += f;
            e.1 += b;
        }
    }
    let n = probes.len() as f64;
    Ok(ChannelScores {
        probe_count: probes.len(),
        backend_fingerprint: backend.fingerprint(),
        scores: sums.into_iter().map(|(k, (f, b))| (k, (f / n, b / n))).collect(),
    })
}

impl ChannelScores {
    pub fn select(&self, thresholds: Thresholds, direction: BackgroundDirection) -> Result<ChannelCatalog> {
        thresholds.validate()?;
        let entries = self
            .scores
            .iter()
            .filter(|(_, &(f, b))| {
                f >= thresholds.t_fg
                    && match direction {
                        BackgroundDirection::AtMost => b <= thresholds.t_bg,
                        BackgroundDirection::AtLeast => b >= thresholds.t_bg,
                    }
            })
            .map(|(&(addr, part), &(iou_fg, iou_bg))| CatalogEntry {
                layer: addr.layer,
                channel: addr.channel,
                part,
                iou_fg,
                iou_bg,
            })
            .collect();
        ChannelCatalog::new(thresholds, self.probe_count, self.backend_fingerprint.clone(), entries)
    }
}

pub fn mine_channels(
    backend: &dyn Generator,
    segmenter: &dyn PartSegmenter,
    probes: &[LatentWPlus],
    cfg: &MiningConfig,
) -> Result<ChannelCatalog> {
    cfg.thresholds.validate()?;
    let scores = mine_scores(backend, segmenter, probes, cfg.binarize_threshold)?;
    let catalog = scores.select(cfg.thresholds, cfg.iou_bg_direction)?;
    log::info!(
        "mined {} channel-part pairs from {} probes",
        catalog.entries.len(),
        probes.len()
    );
    Ok(catalog)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub layer: usize,
    pub channel: usize,
    pub part: PartLabel,
    pub iou_fg: f64,
    pub iou_bg: f64,
}

impl CatalogEntry {
    pub fn address(&self) -> SChannelAddress {
        SChannelAddress::new(self.layer, self.channel)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelCatalog {
    pub version: u64,
    pub thresholds: Thresholds,
    pub probe_count: usize,
    pub backend_fingerprint: String,
    pub entries: Vec<CatalogEntry>,
}

impl ChannelCatalog {
    pub fn new(
        thresholds: Thresholds,
        probe_count: usize,
        backend_fingerprint: String,
        entries: Vec<CatalogEntry>,
    ) -> Result<Self> {
        let c = Self {
            version: CATALOG_VERSION,
            thresholds,
            probe_count,
            backend_fingerprint,
            entries,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn empty(backend_fingerprint: String) -> Self {
        Self {
            version: CATALOG_VERSION,
            thresholds: Thresholds::default(),
            probe_count: 0,
            backend_fingerprint,
            entries: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CATALOG_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        self.thresholds.validate()?;
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert((e.address(), e.part)) {
                return Err(invalid("entries", format!("duplicate entry {} {}", e.address(), e.part.as_str())));
            }
            if !(0.0..=1.0).contains(&e.iou_fg) || !(0.0..=1.0).contains(&e.iou_bg) {
                return Err(invalid("entries", format!("IOU outside [0, 1] at {}", e.address())));
            }
            if e.part == PartLabel::BackgroundOther {
                return Err(invalid("entries", "background_other is not a mined part"));
            }
        }
        Ok(())
    }

    /// Distinct addresses over all parts.
    pub fn addresses(&self) -> BTreeSet<SChannelAddress> {
        self.entries.iter().map(CatalogEntry::address).collect()
    }

    pub fn check_backend(&self, backend: &dyn Generator) -> Result<()> {
        if self.backend_fingerprint != backend.fingerprint() {
            return Err(invalid(
                "catalog",
                format!(
                    "catalog was mined on `{}`, backend is `{}`",
                    self.backend_fingerprint,
                    backend.fingerprint()
                ),
            ));
        }
        for a in self.addresses() {
            backend.layout().check(a)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ChannelCatalog = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_map(&[0.0, 2.0, 4.0, 8.0]), vec![0.0, 0.25, 0.5, 1.0]);
        assert_eq!(normalize_map(&[3.0; 5]), vec![0.0; 5]);
    }

    #[test]
    fn upsample_examples() {
        let ones = binarize_and_upsample(&[1.0; 4], (2, 2), (7, 5), 0.5).unwrap();
        assert_eq!(ones.count(), 35);
        let none = binarize_and_upsample(&[0.9, 0.1, 0.2, 0.3], (2, 2), (4, 4), 0.999).unwrap();
        assert_eq!(none.count(), 0);
        assert!(binarize_and_upsample(&[1.0; 16], (4, 4), (2, 2), 0.5).is_err());
        assert!(binarize_and_upsample(&[1.0; 4], (2, 2), (2, 2), 1.0).is_err());
        let same = binarize_and_upsample(&[0.6, 0.4, 0.5, 0.0], (2, 2), (2, 2), 0.5).unwrap();
        assert_eq!(same.bits(), &[true, false, true, false]);
    }

    #[test]
    fn upsample_matches_per_pixel_bilinear() {
        // 2×2 [[1,0],[0,0]] to 4×4. Sample positions along each axis map to
        // source coordinates −0.25, 0.25, 0.75, 1.25 → clamped 0, .25, .75, 1.
        let mask = binarize_and_upsample(&[1.0, 0.0, 0.0, 0.0], (2, 2), (4, 4), 0.5).unwrap();
        let coord = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let v = (1.0 - coord[x]) * (1.0 - coord[y]);
                assert_eq!(mask.get(x, y), v >= 0.5, "({x},{y})");
            }
        }
        assert_eq!(mask.count(), 4);
    }

    #[test]
    fn iou_examples() {
        let a = Mask::from_fn(4, 4, |x, y| x < 2 && y < 2);
        let b = Mask::from_fn(4, 4, |x, y| (1..3).contains(&x) && y < 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a.complement()).unwrap(), 0.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&Mask::empty(3, 3), &Mask::empty(3, 3)).unwrap(), 0.0);
        assert!(iou(&a, &Mask::empty(3, 3)).is_err());
    }

    #[test]
    fn catalog_rejects_duplicates_and_bad_scores() {
        let e = CatalogEntry {
            layer: 1,
            channel: 2,
            part: PartLabel::Mouth,
            iou_fg: 0.5,
            iou_bg: 0.0,
        };
        assert!(ChannelCatalog::new(Thresholds::default(), 1, "x".into(), vec![e.clone(), e.clone()]).is_err());
        let bad = CatalogEntry { iou_fg: 1.5, ..e.clone() };
        assert!(ChannelCatalog::new(Thresholds::default(), 1, "x".into(), vec![bad]).is_err());
        let c = ChannelCatalog::new(Thresholds::default(), 1, "x".into(), vec![e]).unwrap();
        assert_eq!(ChannelCatalog::from_json(&c.to_json().unwrap()).unwrap(), c);
    }
}
