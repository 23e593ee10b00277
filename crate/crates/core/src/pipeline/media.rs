//! Frame sequences on disk: directories of PNG frames, YUV4MPEG2 files,
//! single images, and (when an `ffmpeg` binary is on `PATH`) anything it
//! can decode.

use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;

pub const DEFAULT_FPS: f64 = 30.0;
const VIDEO_META: &str = "video.json";
const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<Image>,
    pub fps: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "fps")]
pub enum FpsPolicy {
    #[default]
    Native,
    /// Nearest-earlier frame selection onto a new rate.
    Resample(f64),
}

#[derive(Serialize, Deserialize)]
struct VideoMeta {
    fps: f64,
}

fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn is_y4m_path(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("y4m"))
}

/// Sorted frame files of a frame directory.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    files.sort();
    Ok(files)
}

pub fn ingest_video(path: &Path, policy: FpsPolicy) -> Result<Clip> {
    if !path.exists() {
        return Err(invalid("path", format!("{} does not exist", path.display())));
    }
    let clip = if path.is_dir() {
        read_frames_dir(path)?
    } else if is_y4m_path(path) {
        read_y4m(&mut BufReader::new(std::fs::File::open(path)?))?
    } else if is_image_path(path) {
        Clip {
            frames: vec![Image::load(path)?],
            fps: DEFAULT_FPS,
        }
    } else {
        read_with_ffmpeg(path)?
    };
    if clip.frames.is_empty() {
        return Err(invalid("path", format!("{} holds no frames", path.display())));
    }
    resample(clip, policy)
}

fn resample(clip: Clip, policy: FpsPolicy) -> Result<Clip> {
    let FpsPolicy::Resample(target) = policy else {
        return Ok(clip);
    };
    if !(target.is_finite() && target > 0.0) {
        return Err(invalid("fps", "target rate must be positive"));
    }
    let n = clip.frames.len();
    let count = ((n as f64 * target / clip.fps).floor() as usize).max(1);
    let frames = (0..count)
        .map(|k| clip.frames[((k as f64 * clip.fps / target).floor() as usize).min(n - 1)].clone())
        .collect();
    Ok(Clip { frames, fps: target })
}

fn read_frames_dir(dir: &Path) -> Result<Clip> {
    let fps = match std::fs::read(dir.join(VIDEO_META)) {
        Ok(bytes) => serde_json::from_slice::<VideoMeta>(&bytes)?.fps,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => DEFAULT_FPS,
        Err(e) => return Err(e.into()),
    };
    let frames = frame_files(dir)?.iter().map(|p| Image::load(p)).collect::<Result<_>>()?;
    Ok(Clip { frames, fps })
}

/// Write `00000.png, 00001.png, …` (16-bit) plus `video.json`.
pub fn write_frames_dir(frames: &[Image], fps: f64, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(frames.len());
    for (j, f) in frames.iter().enumerate() {
        let p = dir.join(format!("{j:05}.png"));
        f.save_png(&p)?;
        paths.push(p);
    }
    std::fs::write(dir.join(VIDEO_META), serde_json::to_vec(&VideoMeta { fps })?)?;
    Ok(paths)
}

fn y4m_error(e: y4m::Error) -> Error {
    match e {
        y4m::Error::IoError(io) => Error::Io(io),
        other => Error::Format(format!("YUV4MPEG2: {other:?}")),
    }
}

// Full-range BT.601.
fn rgb_to_ycbcr(p: [f64; 3]) -> [f64; 3] {
    let y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    [y, 0.5 + (p[2] - y) / 1.772, 0.5 + (p[0] - y) / 1.402]
}

fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let r = y + 1.402 * (cr - 0.5);
    let b = y + 1.772 * (cb - 0.5);
    let g = (y - 0.299 * r - 0.114 * b) / 0.587;
    [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)]
}

fn chroma_dims(cs: y4m::Colorspace, w: usize, h: usize) -> Result<(usize, usize)> {
    use y4m::Colorspace::*;
    Ok(match cs {
        C444 | C444p10 | C444p12 => (w, h),
        C422 | C422p10 | C422p12 => (w.div_ceil(2), h),
        C420 | C420p10 | C420p12 | C420jpeg | C420paldv | C420mpeg2 => (w.div_ceil(2), h.div_ceil(2)),
        Cmono | Cmono12 => (0, 0),
        other => return Err(Error::Format(format!("unsupported YUV4MPEG2 colorspace {other:?}"))),
    })
}

pub fn read_y4m<R: Read>(source: &mut R) -> Result<Clip> {
    let mut dec = y4m::decode(source).map_err(y4m_error)?;
    let (w, h) = (dec.get_width(), dec.get_height());
    let rate = dec.get_framerate();
    let fps = if rate.den == 0 { DEFAULT_FPS } else { rate.num as f64 / rate.den as f64 };
    let cs = dec.get_colorspace();
    let (cw, ch) = chroma_dims(cs, w, h)?;
    let bytes = dec.get_bytes_per_sample();
    let max = ((1u32 << dec.get_bit_depth()) - 1) as f64;
    let sample = |plane: &[u8], i: usize| -> f64 {
        if bytes == 1 {
            plane[i] as f64 / max
        } else {
            u16::from_le_bytes([plane[2 * i], plane[2 * i + 1]]) as f64 / max
        }
    };
    let mut frames = Vec::new();
    loop {
        let frame = match dec.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(y4m_error(e)),
        };
        let (yp, up, vp) = (frame.get_y_plane(), frame.get_u_plane(), frame.get_v_plane());
        frames.push(Image::from_fn(w, h, |x, y| {
            let luma = sample(yp, y * w + x);
            if cw == 0 {
                return [luma; 3];
            }
            let ci = (y * ch / h) * cw + x * cw / w;
            ycbcr_to_rgb(luma, sample(up, ci), sample(vp, ci))
        }));
    }
    Ok(Clip { frames, fps })
}

/// Encode as 4:4:4 12-bit YUV4MPEG2.
pub fn write_y4m(frames: &[Image], fps: f64, path: &Path) -> Result<()> {
    let first = frames.first().ok_or_else(|| invalid("frames", "nothing to encode"))?;
    let (w, h) = (first.width(), first.height());
    if frames.iter().any(|f| f.width() != w || f.height() != h) {
        return Err(invalid("frames", "all frames must share one size"));
    }
    let rate = y4m::Ratio::new((fps * 1000.0).round() as usize, 1000);
    let sink = BufWriter::new(std::fs::File::create(path)?);
    let mut enc = y4m::encode(w, h, rate)
        .with_colorspace(y4m::Colorspace::C444p12)
        .write_header(sink)
        .map_err(y4m_error)?;
    let q = |v: f64| (v.clamp(0.0, 1.0) * 4095.0).round() as u16;
    for f in frames {
        let mut planes = [Vec::with_capacity(w * h), Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
        for y in 0..h {
            for x in 0..w {
                let ycc = rgb_to_ycbcr(f.pixel(x, y));
                for (plane, v) in planes.iter_mut().zip(ycc) {
                    plane.extend_from_slice(&q(v).to_le_bytes());
                }
            }
        }
        enc.write_frame(&y4m::Frame::new([&planes[0], &planes[1], &planes[2]], None))
            .map_err(y4m_error)?;
    }
    Ok(())
}

/// Write an encoded clip to `out`: YUV4MPEG2 is copied as is, other
/// containers are transcoded by `ffmpeg` when it is available.
pub fn write_video_file(y4m_source: &Path, fps: f64, out: &Path) -> Result<()> {
    if is_y4m_path(out) {
        std::fs::copy(y4m_source, out)?;
        return Ok(());
    }
    if !ffmpeg_available() {
        return Err(Error::Capability(format!(
            "writing {} needs ffmpeg; use a .y4m path or the frames directory",
            out.display()
        )));
    }
    let output = Command::new("ffmpeg")
        .args(["-v", "error", "-y", "-i"])
        .arg(y4m_source)
        .args(["-r", &format!("{fps}"), "-pix_fmt", "yuv444p"])
        .arg(out)
        .stderr(Stdio::piped())
        .output()?;
    if !output.status.success() {
        return Err(Error::Format(format!(
            "ffmpeg failed on {}: {}",
            out.display(),
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    Ok(())
}

fn ffmpeg_available() -> bool {
    Command::new("ffmpeg")
        .arg("-version")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .is_ok_and(|s| s.success())
}

fn read_with_ffmpeg(path: &Path) -> Result<Clip> {
    if !ffmpeg_available() {
        return Err(Error::Capability(format!(
            "{} needs ffmpeg to decode; convert it to a frame directory or .y4m",
            path.display()
        )));
    }
    let output = Command::new("ffmpeg")
        .args(["-v", "error", "-i"])
        .arg(path)
        .args(["-f", "yuv4mpegpipe", "-pix_fmt", "yuv444p12le", "-strict", "-1", "-"])
        .stderr(Stdio::piped())
        .output()?;
    if !output.status.success() {
        return Err(Error::Format(format!(
            "ffmpeg failed on {}: {}",
            path.display(),
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    read_y4m(&mut output.stdout.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(k: usize) -> Image {
        Image::from_fn(6, 4, |x, y| [x as f64 / 5.0, y as f64 / 3.0, (k % 5) as f64 / 4.0])
    }

    #[test]
    fn y4m_round_trip_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.y4m");
        let frames: Vec<Image> = (0..60).map(gradient).collect();
        write_y4m(&frames, 30.0, &path).unwrap();
        let clip = ingest_video(&path, FpsPolicy::Native).unwrap();
        assert_eq!(clip.frames.len(), 60);
        assert!((clip.fps - 30.0).abs() < 1e-9);
        for (a, b) in clip.frames.iter().zip(&frames) {
            assert!(a.mean_abs_diff(b) < 1e-3);
        }
    }

    #[test]
    fn frames_dir_and_image_promotion() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Image> = (0..5).map(gradient).collect();
        let paths = write_frames_dir(&frames, 12.0, &dir.path().join("f")).unwrap();
        let clip = ingest_video(&dir.path().join("f"), FpsPolicy::Native).unwrap();
        assert_eq!(clip.fps, 12.0);
        assert_eq!(clip.frames, frames.iter().map(Image::quantized16).collect::<Vec<_>>());
        let single = ingest_video(&paths[2], FpsPolicy::Native).unwrap();
        assert_eq!(single.frames.len(), 1);
        assert_eq!(single.frames[0], frames[2].quantized16());
    }

    #[test]
    fn resampling_and_errors() {
        let clip = Clip {
            frames: (0..60).map(gradient).collect(),
            fps: 30.0,
        };
        let half = resample(clip.clone(), FpsPolicy::Resample(15.0)).unwrap();
        assert_eq!(half.frames.len(), 30);
        assert_eq!(half.frames[1], clip.frames[2]);
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("empty")).unwrap();
        assert!(ingest_video(&dir.path().join("empty"), FpsPolicy::Native).is_err());
        assert!(ingest_video(&dir.path().join("missing"), FpsPolicy::Native).is_err());
    }
}
