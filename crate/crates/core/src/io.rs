//! On-disk formats: depth images, masks, intrinsics, keypoints and the
//! sequence directory layout.
//!
//! ```text
//! <dir>/intrinsics.json
//! <dir>/background.{png,dbin}
//! <dir>/frames/frame_NNNN.{png,dbin}
//! <dir>/keypoints/frame_NNNN.json
//! <dir>/masks/frame_NNNN.png        optional person masks
//! ```
//!
//! PNG depth is 16-bit millimeters; `.dbin` is `width: u32, height: u32`
//! (little endian) followed by row-major `f32` meters.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{CameraIntrinsics, DepthImage, KeypointFile, Mask};

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    match extension(path).as_str() {
        "png" => {
            let img = image::open(path).map_err(|e| Error::Image {
                path: path.into(),
                source: e,
            })?;
            let image::DynamicImage::ImageLuma16(buf) = img else {
                return Err(Error::InvalidInput(format!(
                    "{}: depth PNG must be 16-bit single channel",
                    path.display()
                )));
            };
            let (w, h) = buf.dimensions();
            DepthImage::new(w, h, buf.into_raw().into_iter().map(|mm| mm as f32 / 1000.0).collect())
        }
        "dbin" => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_dbin(&bytes).map_err(|msg| Error::InvalidInput(format!("{}: {msg}", path.display())))
        }
        other => Err(Error::InvalidInput(format!(
            "{}: unsupported depth extension '{other}'",
            path.display()
        ))),
    }
}

fn decode_dbin(bytes: &[u8]) -> std::result::Result<DepthImage, String> {
    if bytes.len() < 8 {
        return Err("truncated header".into());
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let n = w as usize * h as usize;
    if bytes.len() != 8 + 4 * n {
        return Err(format!("expected {} bytes for {w}x{h}, found {}", 8 + 4 * n, bytes.len()));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DepthImage::new(w, h, data).map_err(|e| e.to_string())
}

/// Format follows the extension. PNG output rounds to millimeters and stores
/// invalid or out-of-range depths as 0.
pub fn write_depth(path: &Path, depth: &DepthImage) -> Result<()> {
    match extension(path).as_str() {
        "png" => {
            let raw: Vec<u16> = depth
                .data
                .iter()
                .map(|&d| {
                    if DepthImage::is_valid_depth(d) {
                        let mm = (d as f64 * 1000.0).round();
                        if mm <= u16::MAX as f64 {
                            return mm as u16;
                        }
                    }
                    0
                })
                .collect();
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(depth.width, depth.height, raw)
                .ok_or_else(|| Error::InvalidInput("depth buffer size mismatch".into()))?;
            write_png(path, |c| buf.write_to(c, ImageFormat::Png))
        }
        "dbin" => {
            let mut bytes = Vec::with_capacity(8 + 4 * depth.data.len());
            bytes.extend_from_slice(&depth.width.to_le_bytes());
            bytes.extend_from_slice(&depth.height.to_le_bytes());
            for d in &depth.data {
                bytes.extend_from_slice(&d.to_le_bytes());
            }
            write_atomic(path, &bytes)
        }
        other => Err(Error::InvalidInput(format!(
            "{}: unsupported depth extension '{other}'",
            path.display()
        ))),
    }
}

fn write_png(
    path: &Path,
    encode: impl FnOnce(&mut Cursor<Vec<u8>>) -> image::ImageResult<()>,
) -> Result<()> {
    let mut cursor = Cursor::new(Vec::new());
    encode(&mut cursor).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })?;
    write_atomic(path, cursor.get_ref())
}

/// 8-bit single-channel PNG as raw bytes.
pub fn read_gray8(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })?;
    let image::DynamicImage::ImageLuma8(buf) = img else {
        return Err(Error::InvalidInput(format!(
            "{}: expected an 8-bit single channel PNG",
            path.display()
        )));
    };
    let (w, h) = buf.dimensions();
    Ok((w, h, buf.into_raw()))
}

pub fn write_gray8(path: &Path, width: u32, height: u32, data: Vec<u8>) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(width, height, data)
        .ok_or_else(|| Error::InvalidInput("image buffer size mismatch".into()))?;
    write_png(path, |c| buf.write_to(c, ImageFormat::Png))
}

/// Nonzero pixels are set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let (w, h, data) = read_gray8(path)?;
    Mask::new(w, h, data.into_iter().map(|b| b != 0).collect())
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_gray8(
        path,
        mask.width,
        mask.height,
        mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let intr: CameraIntrinsics = read_json(path)?;
    intr.validate()?;
    Ok(intr)
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}")
}

/// A manipulation sequence loaded from disk.
#[derive(Clone, Debug)]
pub struct SequenceInput {
    pub intrinsics: CameraIntrinsics,
    pub background: DepthImage,
    pub frames: Vec<DepthImage>,
    pub keypoints: Vec<KeypointFile>,
    pub person_masks: Vec<Option<Mask>>,
}

impl SequenceInput {
    /// Checks sizes and counts; every image must match the intrinsics.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.frames.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a manipulation sequence needs at least 2 frames, found {}",
                self.frames.len()
            )));
        }
        if self.keypoints.len() != self.frames.len() || self.person_masks.len() != self.frames.len() {
            return Err(Error::InvalidInput("frame, keypoint and mask counts differ".into()));
        }
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let depths = std::iter::once(&self.background).chain(&self.frames);
        for (i, d) in depths.enumerate() {
            if d.width != w || d.height != h {
                let what = if i == 0 {
                    "background".to_string()
                } else {
                    frame_name(i - 1)
                };
                return Err(Error::InvalidInput(format!(
                    "{what} is {}x{}, intrinsics say {w}x{h}",
                    d.width, d.height
                )));
            }
        }
        for (i, m) in self.person_masks.iter().enumerate() {
            if let Some(m) = m {
                if m.width != w || m.height != h {
                    return Err(Error::InvalidInput(format!("mask of {} has wrong size", frame_name(i))));
                }
            }
        }
        Ok(())
    }
}

fn find_depth(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["dbin", "png"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Loads a sequence directory. Frames are `frames/frame_0000..` numbered
/// contiguously from zero; each needs a keypoint file.
pub fn load_sequence(dir: &Path) -> Result<SequenceInput> {
    if !dir.is_dir() {
        return Err(Error::InvalidInput(format!("{} is not a directory", dir.display())));
    }
    let intrinsics = read_intrinsics(&dir.join("intrinsics.json"))?;
    let background = find_depth(dir, "background")
        .ok_or_else(|| Error::InvalidInput(format!("{}: missing background depth", dir.display())))
        .and_then(|p| read_depth(&p))?;
    let frames_dir = dir.join("frames");
    let mut frames = Vec::new();
    while let Some(p) = find_depth(&frames_dir, &frame_name(frames.len())) {
        frames.push(read_depth(&p)?);
    }
    let mut keypoints = Vec::with_capacity(frames.len());
    let mut person_masks = Vec::with_capacity(frames.len());
    for i in 0..frames.len() {
        let kp_path = dir.join("keypoints").join(format!("{}.json", frame_name(i)));
        if !kp_path.is_file() {
            return Err(Error::InvalidInput(format!(
                "missing keypoint file for frame {i}: {}",
                kp_path.display()
            )));
        }
        let kp: KeypointFile = read_json(&kp_path)?;
        if kp.frame != i {
            return Err(Error::InvalidInput(format!(
                "{}: frame field is {}, expected {i}",
                kp_path.display(),
                kp.frame
            )));
        }
        keypoints.push(kp);
        let mask_path = dir.join("masks").join(format!("{}.png", frame_name(i)));
        person_masks.push(if mask_path.is_file() {
            Some(read_mask(&mask_path)?)
        } else {
            None
        });
    }
    let seq = SequenceInput {
        intrinsics,
        background,
        frames,
        keypoints,
        person_masks,
    };
    seq.validate()?;
    Ok(seq)
}

/// Writes a sequence in the layout [`load_sequence`] reads. `depth_ext` is
/// `"png"` or `"dbin"`.
pub fn write_sequence(dir: &Path, seq: &SequenceInput, depth_ext: &str) -> Result<()> {
    for sub in ["frames", "keypoints", "masks"] {
        create_dir(&dir.join(sub))?;
    }
    write_json(&dir.join("intrinsics.json"), &seq.intrinsics)?;
    write_depth(&dir.join(format!("background.{depth_ext}")), &seq.background)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        let name = frame_name(i);
        write_depth(&dir.join("frames").join(format!("{name}.{depth_ext}")), frame)?;
        write_json(&dir.join("keypoints").join(format!("{name}.json")), &seq.keypoints[i])?;
        if let Some(m) = &seq.person_masks[i] {
            write_mask(&dir.join("masks").join(format!("{name}.png")), m)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::HandSide;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 50.0,
            fy: 50.0,
            cx: 4.0,
            cy: 3.0,
            width: 8,
            height: 6,
        }
    }

    fn ramp() -> DepthImage {
        DepthImage::new(8, 6, (0..48).map(|i| if i == 5 { 0.0 } else { 0.5 + 0.0123 * i as f32 }).collect()).unwrap()
    }

    #[test]
    fn dbin_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.dbin");
        write_depth(&p, &ramp()).unwrap();
        assert_eq!(read_depth(&p).unwrap(), ramp());
    }

    #[test]
    fn png_round_trip_to_millimeters() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        write_depth(&p, &ramp()).unwrap();
        let back = read_depth(&p).unwrap();
        for (a, b) in ramp().data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.0005 + 1e-6);
        }
        assert_eq!(back.data[5], 0.0);
    }

    #[test]
    fn truncated_dbin_is_invalid_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.dbin");
        std::fs::write(&p, [8, 0, 0, 0, 6, 0, 0, 0, 1, 2]).unwrap();
        assert!(matches!(read_depth(&p), Err(Error::InvalidInput(_))));
        assert!(matches!(read_depth(&dir.path().join("x.tiff")), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask::new(8, 6, (0..48).map(|i| i % 3 == 0).collect()).unwrap();
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    fn sequence(n: usize) -> SequenceInput {
        SequenceInput {
            intrinsics: intr(),
            background: DepthImage::filled(8, 6, 2.0),
            frames: vec![ramp(); n],
            keypoints: (0..n)
                .map(|i| KeypointFile {
                    frame: i,
                    hand: HandSide::Right,
                    joints: vec![[4.0, 3.0, 0.9]],
                })
                .collect(),
            person_masks: (0..n).map(|i| (i == 1).then(|| Mask::filled(8, 6, true))).collect(),
        }
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &sequence(3), "dbin").unwrap();
        let back = load_sequence(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 3);
        assert_eq!(back.keypoints, sequence(3).keypoints);
        assert_eq!(back.person_masks, sequence(3).person_masks);
    }

    #[test]
    fn missing_keypoints_name_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &sequence(4), "png").unwrap();
        std::fs::remove_file(dir.path().join("keypoints/frame_0002.json")).unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(ref m) if m.contains("frame 2")), "{err}");
    }

    #[test]
    fn single_frame_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &sequence(1), "dbin").unwrap();
        assert!(matches!(load_sequence(dir.path()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        write_json(&dir.path().join("a.json"), &intr()).unwrap();
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.json")]);
        assert_eq!(read_intrinsics(&dir.path().join("a.json")).unwrap(), intr());
    }
}
