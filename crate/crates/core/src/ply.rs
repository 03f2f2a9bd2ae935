//! Binary little-endian PLY for segmented point clouds.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::joint::Vec3;

/// Points with optional normals and integer attributes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub cluster_ids: Option<Vec<i32>>,
    pub confidence: Option<Vec<i32>>,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Float,
    Int,
}

impl PlyCloud {
    fn check(&self) -> Result<()> {
        let n = self.points.len();
        let ok = self.normals.as_ref().is_none_or(|v| v.len() == n)
            && self.cluster_ids.as_ref().is_none_or(|v| v.len() == n)
            && self.confidence.as_ref().is_none_or(|v| v.len() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("PLY attribute lengths differ from the point count".into()))
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut header = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
            self.points.len()
        );
        if self.normals.is_some() {
            header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
        }
        if self.cluster_ids.is_some() {
            header.push_str("property int cluster_id\n");
        }
        if self.confidence.is_some() {
            header.push_str("property int confidence\n");
        }
        header.push_str("end_header\n");
        let mut out = header.into_bytes();
        for (i, p) in self.points.iter().enumerate() {
            let mut put = |v: &Vec3| v.iter().for_each(|&c| out.extend((c as f32).to_le_bytes()));
            put(p);
            if let Some(n) = &self.normals {
                put(&n[i]);
            }
            if let Some(c) = &self.cluster_ids {
                out.extend(c[i].to_le_bytes());
            }
            if let Some(c) = &self.confidence {
                out.extend(c[i].to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("PLY: {msg}"));
        let end = b"end_header\n";
        let split = bytes
            .windows(end.len())
            .position(|w| w == end)
            .ok_or_else(|| bad("missing end_header"))?
            + end.len();
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not text"))?;
        let mut lines = header.lines();
        if lines.next() != Some("ply") {
            return Err(bad("missing magic"));
        }
        let mut count = None;
        let mut props: Vec<(String, Kind)> = Vec::new();
        for line in lines {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["format", "binary_little_endian", "1.0"] => {}
                ["format", ..] => return Err(bad("only binary_little_endian 1.0 is supported")),
                ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
                ["element", ..] => return Err(bad("only a vertex element is supported")),
                ["property", ty, name] => {
                    let kind = match *ty {
                        "float" | "float32" => Kind::Float,
                        "int" | "int32" => Kind::Int,
                        _ => return Err(bad("unsupported property type")),
                    };
                    props.push((name.to_string(), kind));
                }
                ["comment", ..] | ["end_header"] | [] => {}
                _ => return Err(bad("unrecognised header line")),
            }
        }
        let n = count.ok_or_else(|| bad("missing vertex element"))?;
        let body = &bytes[split..];
        if body.len() != n * 4 * props.len() {
            return Err(bad("body size does not match the header"));
        }
        let col = |name: &str, kind: Kind| props.iter().position(|(p, k)| p == name && *k == kind);
        let word = |i: usize, c: usize| {
            let at = (i * props.len() + c) * 4;
            [body[at], body[at + 1], body[at + 2], body[at + 3]]
        };
        let vec3 = |names: [&str; 3]| -> Option<Vec<Vec3>> {
            let cols: Vec<usize> = names.iter().map(|nm| col(nm, Kind::Float)).collect::<Option<_>>()?;
            Some(
                (0..n)
                    .map(|i| Vec3::from_fn(|k, _| f32::from_le_bytes(word(i, cols[k])) as f64))
                    .collect(),
            )
        };
        let ints = |name: &str| col(name, Kind::Int).map(|c| (0..n).map(|i| i32::from_le_bytes(word(i, c))).collect());
        Ok(PlyCloud {
            points: vec3(["x", "y", "z"]).ok_or_else(|| bad("missing float x, y, z"))?,
            normals: vec3(["nx", "ny", "nz"]),
            cluster_ids: ints("cluster_id"),
            confidence: ints("confidence"),
        })
    }
}

pub fn write_ply(path: &Path, cloud: &PlyCloud) -> Result<()> {
    write_atomic(path, &cloud.to_bytes()?)
}

pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    PlyCloud::from_bytes(&bytes)
}
