use std::collections::HashMap;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::joint::{Mat3, RigidTransform, Vec3};
use crate::kdtree::KdTree;

/// One frame's points in the camera frame of the sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameCloud {
    pub frame_index: usize,
    pub points: Vec<Vec3>,
    /// Unit normals facing the sensor, once estimated.
    pub normals: Option<Vec<Vec3>>,
    /// Sensor position each point was observed from.
    pub view_origins: Vec<Vec3>,
    /// Linear pixel index of each point, for clouds straight from a depth image.
    pub pixels: Option<Vec<u32>>,
}

impl FrameCloud {
    /// Cloud observed from the origin with no normals.
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let n = points.len();
        FrameCloud {
            frame_index: 0,
            points,
            normals: None,
            view_origins: vec![Vec3::zeros(); n],
            pixels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points at `indices`, keeping every per-point attribute.
    pub fn select(&self, indices: &[usize]) -> FrameCloud {
        FrameCloud {
            frame_index: self.frame_index,
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            view_origins: indices.iter().map(|&i| self.view_origins[i]).collect(),
            pixels: self
                .pixels
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }

    /// Applies a rigid transform to points, normals and view origins.
    pub fn transformed(&self, tr: &RigidTransform) -> FrameCloud {
        FrameCloud {
            frame_index: self.frame_index,
            points: self.points.iter().map(|p| tr.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| tr.apply_vector(v)).collect()),
            view_origins: self.view_origins.iter().map(|p| tr.apply(p)).collect(),
            pixels: self.pixels.clone(),
        }
    }
}

/// Replaces the points of each occupied voxel of edge `voxel` by their centroid.
pub fn voxel_downsample(cloud: &FrameCloud, voxel: f64) -> Result<FrameCloud> {
    voxel_downsample_with_map(cloud, voxel).map(|(c, _)| c)
}

/// [`voxel_downsample`] that also returns, for every input point, the index of
/// the output point its voxel collapsed into. Output order follows the first
/// occurrence of each voxel in the input.
pub fn voxel_downsample_with_map(cloud: &FrameCloud, voxel: f64) -> Result<(FrameCloud, Vec<usize>)> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(Error::InvalidParameter(format!("voxel size must be positive, got {voxel}")));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::with_capacity(cloud.len() / 2);
    let mut sums: Vec<(Vec3, Vec3, Vec3, usize)> = Vec::new();
    let mut map = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), 0));
            sums.len() - 1
        });
        let s = &mut sums[slot];
        s.0 += p;
        s.1 += cloud.view_origins[i];
        if let Some(n) = &cloud.normals {
            s.2 += n[i];
        }
        s.3 += 1;
        map.push(slot);
    }
    let mut points = Vec::with_capacity(sums.len());
    let mut origins = Vec::with_capacity(sums.len());
    let mut normals = Vec::with_capacity(sums.len());
    for (p, o, n, count) in sums {
        let c = count as f64;
        points.push(p / c);
        origins.push(o / c);
        normals.push(n.try_normalize(1e-12).unwrap_or(n));
    }
    Ok((
        FrameCloud {
            frame_index: cloud.frame_index,
            points,
            normals: cloud.normals.as_ref().map(|_| normals),
            view_origins: origins,
            pixels: None,
        },
        map,
    ))
}

/// PCA normals over the `k` nearest neighbors (the point itself included),
/// flipped to face the view origin.
pub fn estimate_normals(cloud: &FrameCloud, k: usize) -> Result<FrameCloud> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!("normal estimation needs k >= 3, got {k}")));
    }
    if cloud.len() < k {
        return Err(Error::DegenerateGeometry(format!(
            "frame {} has {} points, normal estimation needs at least {k}",
            cloud.frame_index,
            cloud.len()
        )));
    }
    let tree = KdTree::new(&cloud.points);
    let normals: Vec<Vec3> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nbrs = tree.knn(p, k);
            let mean = nbrs.iter().map(|&(j, _)| cloud.points[j]).sum::<Vec3>() / nbrs.len() as f64;
            let mut cov = Mat3::zeros();
            for &(j, _) in &nbrs {
                let d = cloud.points[j] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let min = eig.eigenvalues.imin();
            let mut n: Vec3 = eig.eigenvectors.column(min).into_owned();
            n = n.try_normalize(1e-12).unwrap_or_else(Vec3::z);
            if n.dot(&(p - cloud.view_origins[i])) > 0.0 {
                n = -n;
            }
            n
        })
        .collect();
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok(out)
}
