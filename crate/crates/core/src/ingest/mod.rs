//! Depth images and keypoints to frame clouds and hand observations.

mod cloud;
mod hand;

pub use cloud::{estimate_normals, voxel_downsample, voxel_downsample_with_map, FrameCloud};
pub use hand::{hand_centroid_3d, HandDepthConfig, HandObservation, HandSide, KeypointFile};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::Vec3;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Point for pixel coordinates `(u, v)` at depth `d`.
    #[inline]
    pub fn backproject_pixel(&self, u: f64, v: f64, d: f64) -> Vec3 {
        Vec3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d)
    }

    /// Pixel coordinates of a camera-frame point, `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Row-major depth map in meters. Zero or non-finite values are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "depth buffer has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(DepthImage { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        DepthImage {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn is_valid_depth(d: f32) -> bool {
        d.is_finite() && d > 0.0
    }

    fn check_dims(&self, width: u32, height: u32, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::InvalidInput(format!(
                "{what}: {}x{} does not match {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Row-major boolean image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "mask has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Mask { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        self.check_same(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a |= b);
        Ok(())
    }

    /// Clears every pixel set in `other`.
    pub fn subtract(&mut self, other: &Mask) -> Result<()> {
        self.check_same(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a &= !b);
        Ok(())
    }

    fn check_same(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::InvalidInput(format!(
                "mask size mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Backprojects every valid, unmasked pixel. `mask`, when given, selects the
/// pixels to keep. Points carry their linear pixel index.
pub fn backproject(depth: &DepthImage, intr: &CameraIntrinsics, mask: Option<&Mask>) -> Result<FrameCloud> {
    intr.validate()?;
    depth.check_dims(intr.width, intr.height, "depth image")?;
    if let Some(m) = mask {
        if m.width != intr.width || m.height != intr.height {
            return Err(Error::InvalidInput(format!(
                "mask {}x{} does not match intrinsics {}x{}",
                m.width, m.height, intr.width, intr.height
            )));
        }
    }
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let idx = v as usize * depth.width as usize + u as usize;
            if mask.is_some_and(|m| !m.data[idx]) {
                continue;
            }
            let d = depth.data[idx];
            if !DepthImage::is_valid_depth(d) {
                continue;
            }
            points.push(intr.backproject_pixel(u as f64, v as f64, d as f64));
            pixels.push(idx as u32);
        }
    }
    let n = points.len();
    Ok(FrameCloud {
        frame_index: 0,
        points,
        normals: None,
        view_origins: vec![Vec3::zeros(); n],
        pixels: Some(pixels),
    })
}

/// Keep-mask of pixels that differ from the background by more than `tau`
/// meters, plus pixels valid in the frame where the background has no depth.
pub fn remove_static(frame: &DepthImage, background: &DepthImage, tau: f64) -> Result<Mask> {
    frame.check_dims(background.width, background.height, "frame vs background")?;
    let data = frame
        .data
        .iter()
        .zip(&background.data)
        .map(|(&f, &b)| {
            let fv = DepthImage::is_valid_depth(f);
            let bv = DepthImage::is_valid_depth(b);
            (fv && bv && (f as f64 - b as f64).abs() > tau) || (fv && !bv)
        })
        .collect();
    Mask::new(frame.width, frame.height, data)
}

/// Positions of the frames to keep: frames without a hand are dropped, then at
/// most `max_frames` are chosen at uniform spacing, always including the first.
pub fn subsample_indices(has_hand: &[bool], max_frames: usize) -> Result<Vec<usize>> {
    if max_frames == 0 {
        return Err(Error::InvalidParameter("max_frames must be at least 1".into()));
    }
    let valid: Vec<usize> = (0..has_hand.len()).filter(|&i| has_hand[i]).collect();
    if valid.is_empty() {
        return Err(Error::InvalidInput("no frame has a detected hand".into()));
    }
    if valid.len() <= max_frames {
        return Ok(valid);
    }
    if max_frames == 1 {
        return Ok(vec![valid[0]]);
    }
    let span = valid.len() - 1;
    let steps = max_frames - 1;
    Ok((0..max_frames)
        .map(|i| valid[(i * span + steps / 2) / steps])
        .collect())
}

/// [`subsample_indices`] applied to a frame sequence.
pub fn subsample_frames(
    sequence: Vec<(FrameCloud, HandObservation)>,
    max_frames: usize,
) -> Result<Vec<(FrameCloud, HandObservation)>> {
    let has_hand: Vec<bool> = sequence.iter().map(|(_, h)| h.centroid_3d.is_some()).collect();
    let keep = subsample_indices(&has_hand, max_frames)?;
    let mut keep_iter = keep.into_iter().peekable();
    Ok(sequence
        .into_iter()
        .enumerate()
        .filter_map(|(i, item)| {
            if keep_iter.peek() == Some(&i) {
                keep_iter.next();
                Some(item)
            } else {
                None
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 110.0,
            cx: 4.0,
            cy: 3.0,
            width: 8,
            height: 6,
        }
    }

    #[test]
    fn backproject_examples() {
        let k = intr();
        let mut depth = DepthImage::filled(8, 6, 0.0);
        depth.data[3 * 8 + 4] = 1.0; // principal point
        let cloud = backproject(&depth, &k, None).unwrap();
        assert_eq!(cloud.points, vec![Vec3::new(0.0, 0.0, 1.0)]);
        assert_eq!(cloud.pixels.as_ref().unwrap(), &vec![28]);

        // 45° ray: pixel (cx + fx, cy) needs a wider image
        let wide = CameraIntrinsics {
            width: 120,
            ..k
        };
        let mut depth = DepthImage::filled(120, 6, f32::NAN);
        depth.data[3 * 120 + 104] = 2.0;
        let cloud = backproject(&depth, &wide, None).unwrap();
        assert_eq!(cloud.points, vec![Vec3::new(2.0, 0.0, 2.0)]);
    }

    #[test]
    fn backproject_mask_and_dims() {
        let k = intr();
        let depth = DepthImage::filled(8, 6, 1.5);
        let mut mask = Mask::filled(8, 6, false);
        mask.data[0] = true;
        mask.data[47] = true;
        assert_eq!(backproject(&depth, &k, Some(&mask)).unwrap().len(), 2);
        assert!(backproject(&DepthImage::filled(7, 6, 1.0), &k, None).is_err());
        assert!(backproject(&depth, &k, Some(&Mask::filled(8, 5, true))).is_err());
    }

    #[test]
    fn project_backproject_roundtrip() {
        let k = intr();
        for (u, v, d) in [(0.0, 0.0, 0.5), (7.0, 5.0, 3.0), (4.5, 1.25, 1.1)] {
            let p = k.backproject_pixel(u, v, d);
            let (pu, pv) = k.project(&p).unwrap();
            assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        }
    }

    #[test]
    fn remove_static_examples() {
        let bg = DepthImage::filled(8, 6, 2.0);
        assert!(remove_static(&bg, &bg, 0.02).unwrap().is_empty());
        let moved = DepthImage::filled(8, 6, 2.5);
        assert_eq!(remove_static(&moved, &bg, 0.02).unwrap().count(), 48);
        let mut frame = bg.clone();
        frame.data[5] = 0.0; // invalid frame pixel is never kept
        let mut bg_holes = bg.clone();
        bg_holes.data[6] = 0.0; // valid frame over a background hole is kept
        let keep = remove_static(&frame, &bg_holes, 0.02).unwrap();
        assert_eq!(keep.count(), 1);
        assert!(keep.data[6]);
        assert!(remove_static(&DepthImage::filled(4, 4, 1.0), &bg, 0.02).is_err());
    }

    #[test]
    fn subsample_examples() {
        assert_eq!(subsample_indices(&[true; 10], 15).unwrap(), (0..10).collect::<Vec<_>>());

        let picked = subsample_indices(&[true; 40], 15).unwrap();
        assert_eq!(picked.len(), 15);
        assert_eq!(picked[0], 0);
        let gaps: Vec<usize> = picked.windows(2).map(|w| w[1] - w[0]).collect();
        let (lo, hi) = (gaps.iter().min().unwrap(), gaps.iter().max().unwrap());
        assert!(hi - lo <= 1, "{gaps:?}");

        let mut has = [true; 20];
        for i in [0, 3, 7, 11, 19] {
            has[i] = false;
        }
        let picked = subsample_indices(&has, 15).unwrap();
        assert_eq!(picked.len(), 15);
        assert!(picked.iter().all(|&i| has[i]));

        assert!(subsample_indices(&[false; 4], 15).is_err());
    }

    #[test]
    fn subsample_frames_keeps_items() {
        let seq: Vec<(FrameCloud, HandObservation)> = (0..30)
            .map(|i| {
                let mut c = FrameCloud::from_points(vec![]);
                c.frame_index = i;
                let mut h = HandObservation::empty(i);
                if i % 2 == 0 {
                    h.centroid_3d = Some(Vec3::zeros());
                }
                (c, h)
            })
            .collect();
        let out = subsample_frames(seq, 15).unwrap();
        let idx: Vec<usize> = out.iter().map(|(c, _)| c.frame_index).collect();
        assert_eq!(idx, (0..30).step_by(2).collect::<Vec<_>>());
    }
}
