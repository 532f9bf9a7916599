//! CT volumes: voxel grid, world mapping, trilinear sampling and MetaImage I/O.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Fill value for display resampling outside the volume (air).
pub const FILL_HU: f64 = -1024.0;

/// A 3D grid of Hounsfield units.
///
/// Voxel `(i, j, k)` lives at `data[i + nx * (j + ny * k)]` and its center maps
/// to world position `origin + spacing ⊙ (i, j, k)` (millimetres).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    data: Vec<i16>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, data: Vec<i16>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Parameter(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Parameter(format!("origin must be finite, got {origin:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected: expected * 2,
                found: data.len() * 2,
            });
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    /// Volume filled with a constant value.
    pub fn filled(dims: [usize; 3], spacing: Vec3, origin: Vec3, value: i16) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, origin, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> i16 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn voxel_to_world(&self, c: Vec3) -> Vec3 {
        [
            self.origin[0] + self.spacing[0] * c[0],
            self.origin[1] + self.spacing[1] * c[1],
            self.origin[2] + self.spacing[2] * c[2],
        ]
    }

    #[inline]
    pub fn world_to_voxel(&self, p: Vec3) -> Vec3 {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// World position of the center of voxel `idx`.
    #[inline]
    pub fn center_of(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.voxel_to_world([i as f64, j as f64, k as f64])
    }

    /// Nearest voxel to a world point, if it lies inside the grid.
    pub fn nearest_voxel(&self, p: Vec3) -> Option<[usize; 3]> {
        let c = self.world_to_voxel(p);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let r = c[a].round();
            if r < 0.0 || r >= self.dims[a] as f64 || !r.is_finite() {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }

    /// Whether `p` lies in the sampling domain: within half a voxel of the
    /// outermost voxel centers.
    pub fn contains(&self, p: Vec3) -> bool {
        let c = self.world_to_voxel(p);
        (0..3).all(|a| c[a] >= -0.5 && c[a] <= self.dims[a] as f64 - 0.5)
    }

    /// World-space bounds of the sampling domain (min corner, max corner).
    pub fn domain_bounds(&self) -> (Vec3, Vec3) {
        let lo = self.voxel_to_world([-0.5; 3]);
        let hi = self.voxel_to_world([
            self.dims[0] as f64 - 0.5,
            self.dims[1] as f64 - 0.5,
            self.dims[2] as f64 - 0.5,
        ]);
        (lo, hi)
    }

    /// Trilinear interpolation at world point `p`.
    ///
    /// Points within half a voxel beyond the outer voxel centers are clamped onto
    /// the border; anything farther out is an [`Error::OutOfBounds`].
    pub fn sample_trilinear(&self, p: Vec3) -> Result<f64> {
        if !self.contains(p) {
            return Err(Error::OutOfBounds(p));
        }
        Ok(self.interpolate_voxel(self.world_to_voxel(p)))
    }

    /// Like [`Volume::sample_trilinear`] but returns [`FILL_HU`] outside the
    /// domain. Meant for display resampling only.
    pub fn sample_or_fill(&self, p: Vec3) -> (f64, bool) {
        match self.sample_trilinear(p) {
            Ok(v) => (v, true),
            Err(_) => (FILL_HU, false),
        }
    }

    /// Trilinear interpolation at continuous voxel coordinates, clamped to the grid.
    pub(crate) fn interpolate_voxel(&self, c: Vec3) -> f64 {
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let x = c[a].clamp(0.0, (n - 1) as f64);
            let fl = x.floor();
            let lo = (fl as usize).min(n - 1);
            i0[a] = lo;
            i1[a] = (lo + 1).min(n - 1);
            f[a] = x - fl;
        }
        let v = |i: usize, j: usize, k: usize| self.get(i, j, k) as f64;
        let c00 = v(i0[0], i0[1], i0[2]) * (1.0 - f[0]) + v(i1[0], i0[1], i0[2]) * f[0];
        let c10 = v(i0[0], i1[1], i0[2]) * (1.0 - f[0]) + v(i1[0], i1[1], i0[2]) * f[0];
        let c01 = v(i0[0], i0[1], i1[2]) * (1.0 - f[0]) + v(i1[0], i0[1], i1[2]) * f[0];
        let c11 = v(i0[0], i1[1], i1[2]) * (1.0 - f[0]) + v(i1[0], i1[1], i1[2]) * f[0];
        let c0 = c00 * (1.0 - f[1]) + c10 * f[1];
        let c1 = c01 * (1.0 - f[1]) + c11 * f[1];
        c0 * (1.0 - f[2]) + c1 * f[2]
    }

    /// Values of the (up to) 8 voxels surrounding a world point, for bounds checks.
    pub fn neighborhood_range(&self, p: Vec3) -> Option<(f64, f64)> {
        if !self.contains(p) {
            return None;
        }
        let c = self.world_to_voxel(p);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let idx = |a: usize, up: bool| {
            let n = self.dims[a];
            let x = c[a].clamp(0.0, (n - 1) as f64).floor() as usize;
            if up {
                (x + 1).min(n - 1)
            } else {
                x.min(n - 1)
            }
        };
        for dz in [false, true] {
            for dy in [false, true] {
                for dx in [false, true] {
                    let v = self.get(idx(0, dx), idx(1, dy), idx(2, dz)) as f64;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        Some((lo, hi))
    }

    /// The voxel data converted to `f32`.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Parsed MetaImage header fields this reader honors.
#[derive(Clone, Debug, PartialEq)]
struct MetaHeader {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    data_file: String,
}

fn parse_numbers<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    key: &str,
    value: &str,
) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::HeaderParse {
            path: path.to_path_buf(),
            line,
            message: format!("{key} needs 3 values, got {}", parts.len()),
        });
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| Error::HeaderParse {
            path: path.to_path_buf(),
            line,
            message: format!("{key}: cannot parse {p:?}"),
        })?);
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

fn parse_header(path: &Path, text: &str) -> Result<MetaHeader> {
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut data_file = None;
    let mut element_type = None;
    let err = |line: usize, message: String| Error::HeaderParse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `Key = Value`, got {trimmed:?}")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "NDims" => {
                if value != "3" {
                    return Err(Error::UnsupportedFormat(format!("NDims = {value}, only 3 supported")));
                }
            }
            "DimSize" => dims = Some(parse_numbers::<usize>(path, line, key, value)?),
            "ElementSpacing" => spacing = Some(parse_numbers::<f64>(path, line, key, value)?),
            "ElementSize" if spacing.is_none() => {
                spacing = Some(parse_numbers::<f64>(path, line, key, value)?)
            }
            "Offset" | "Position" | "Origin" => {
                origin = Some(parse_numbers::<f64>(path, line, key, value)?)
            }
            "ElementType" => element_type = Some((line, value.to_string())),
            "ElementDataFile" => data_file = Some(value.to_string()),
            "CompressedData" if value.eq_ignore_ascii_case("true") => {
                return Err(Error::UnsupportedFormat("compressed data".into()));
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" if value.eq_ignore_ascii_case("true") => {
                return Err(Error::UnsupportedFormat("big-endian data".into()));
            }
            "ElementNumberOfChannels" if value != "1" => {
                return Err(Error::UnsupportedFormat(format!("{value} channels")));
            }
            "HeaderSize" if value != "0" => {
                return Err(Error::UnsupportedFormat(format!("HeaderSize = {value}")));
            }
            "TransformMatrix" | "Orientation" | "Rotation" => {
                let m: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| err(line, format!("{key}: cannot parse {t:?}"))))
                    .collect::<Result<_>>()?;
                let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
                if m.len() != 9 || m.iter().zip(identity).any(|(a, b)| (a - b).abs() > 1e-9) {
                    return Err(Error::UnsupportedFormat(format!(
                        "{key} must be the identity, got {value:?}"
                    )));
                }
            }
            _ => {}
        }
    }
    let last = text.lines().count();
    let dims = dims.ok_or_else(|| err(last, "missing DimSize".into()))?;
    let (et_line, et) = element_type.ok_or_else(|| err(last, "missing ElementType".into()))?;
    if et != "MET_SHORT" {
        return Err(Error::UnsupportedFormat(format!(
            "ElementType {et} on line {et_line}; only MET_SHORT is supported"
        )));
    }
    let data_file = data_file.ok_or_else(|| err(last, "missing ElementDataFile".into()))?;
    if data_file.eq_ignore_ascii_case("LOCAL") {
        return Err(Error::UnsupportedFormat("inline (LOCAL) data".into()));
    }
    if dims.contains(&0) {
        return Err(err(last, format!("DimSize must be positive, got {dims:?}")));
    }
    let spacing = spacing.unwrap_or([1.0; 3]);
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(err(last, format!("ElementSpacing must be positive, got {spacing:?}")));
    }
    Ok(MetaHeader {
        dims,
        spacing,
        origin: origin.unwrap_or([0.0; 3]),
        data_file,
    })
}

/// Read a MetaImage (`.mhd` + raw) volume of little-endian signed 16-bit HU values.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let header = parse_header(path, &text)?;
    let raw_path = path
        .parent()
        .map(|p| p.join(&header.data_file))
        .unwrap_or_else(|| PathBuf::from(&header.data_file));
    let bytes = fs::read(&raw_path)?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 2 {
        return Err(Error::SizeMismatch {
            expected: n * 2,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Volume::new(header.dims, header.spacing, header.origin, data)
}

/// Write `.mhd` header plus a sibling `.raw` file.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Parameter(format!("bad output path {}", path.display())))?
        .to_string();
    let [nx, ny, nz] = volume.dims;
    let [sx, sy, sz] = volume.spacing;
    let [ox, oy, oz] = volume.origin;
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         TransformMatrix = 1 0 0 0 1 0 0 0 1\n\
         Offset = {ox} {oy} {oz}\n\
         ElementSpacing = {sx} {sy} {sz}\n\
         DimSize = {nx} {ny} {nz}\n\
         ElementType = MET_SHORT\n\
         ElementDataFile = {raw_name}\n"
    );
    let mut bytes = Vec::with_capacity(volume.data.len() * 2);
    for v in &volume.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw_path, bytes)?;
    fs::write(path, header)?;
    Ok(())
}
