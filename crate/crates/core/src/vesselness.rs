//! Multi-scale Hessian tubularity (Frangi-style) for bright vessels.
//!
//! A nominal vessel radius `ρ` maps to Gaussian scale `σ = ρ / √2`, the scale at
//! which the σ²-normalized Hessian of a solid cylinder of radius `ρ` peaks on
//! its axis. The structureness constant `c` is half the largest Hessian
//! Frobenius norm over all scales, and the final response is normalized so its
//! maximum is 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::volume::Volume;

/// Default scales (mm radii).
pub const DEFAULT_SCALES: [f64; 5] = [0.8, 1.2, 1.6, 2.4, 3.2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselnessParams {
    pub scales: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for VesselnessParams {
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES.to_vec(),
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

/// Half-open voxel box `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl VoxelBox {
    pub fn full(dims: [usize; 3]) -> Self {
        Self { lo: [0; 3], hi: dims }
    }

    #[inline]
    pub fn contains(&self, c: [usize; 3]) -> bool {
        (0..3).all(|a| c[a] >= self.lo[a] && c[a] < self.hi[a])
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.hi[a] <= self.lo[a])
    }

    pub fn count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.dims().iter().product()
        }
    }

    fn grow(&self, pad: [usize; 3], dims: [usize; 3]) -> Self {
        Self {
            lo: [
                self.lo[0].saturating_sub(pad[0]),
                self.lo[1].saturating_sub(pad[1]),
                self.lo[2].saturating_sub(pad[2]),
            ],
            hi: [
                (self.hi[0] + pad[0]).min(dims[0]),
                (self.hi[1] + pad[1]).min(dims[1]),
                (self.hi[2] + pad[2]).min(dims[2]),
            ],
        }
    }
}

/// Normalized vesselness on the volume grid.
#[derive(Clone, Debug)]
pub struct VesselnessField {
    pub dims: [usize; 3],
    pub spacing: Vec3,
    pub origin: Vec3,
    pub values: Vec<f32>,
    /// Index into `scales` of the strongest response per voxel.
    pub best_scale: Vec<u8>,
    pub scales: Vec<f64>,
}

impl VesselnessField {
    #[inline]
    pub fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    #[inline]
    pub fn at(&self, c: [usize; 3]) -> f64 {
        self.values[self.index(c)] as f64
    }

    /// Voxel nearest to a world point, if inside the grid.
    pub fn nearest_voxel(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let x = ((p[a] - self.origin[a]) / self.spacing[a]).round();
            if x < 0.0 || x >= self.dims[a] as f64 {
                return None;
            }
            c[a] = x as usize;
        }
        Some(c)
    }

    /// Value at the voxel nearest to a world point.
    pub fn at_world(&self, p: Vec3) -> Option<f64> {
        self.nearest_voxel(p).map(|c| self.at(c))
    }

    /// Trilinear value at a world point, `None` outside the voxel-center box.
    pub fn sample(&self, p: Vec3) -> Option<f64> {
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for a in 0..3 {
            let x = (p[a] - self.origin[a]) / self.spacing[a];
            let n = self.dims[a];
            if !(x >= 0.0 && x <= (n - 1) as f64) {
                return None;
            }
            let lo = (x.floor() as usize).min(n.saturating_sub(2));
            i0[a] = lo;
            f[a] = x - lo as f64;
        }
        let at = |dx: usize, dy: usize, dz: usize| {
            let c = [
                (i0[0] + dx).min(self.dims[0] - 1),
                (i0[1] + dy).min(self.dims[1] - 1),
                (i0[2] + dz).min(self.dims[2] - 1),
            ];
            self.at(c)
        };
        let lx = |dy, dz| at(0, dy, dz) * (1.0 - f[0]) + at(1, dy, dz) * f[0];
        let ly = |dz| lx(0, dz) * (1.0 - f[1]) + lx(1, dz) * f[1];
        Some(ly(0) * (1.0 - f[2]) + ly(1) * f[2])
    }

    /// Scale (mm) with the strongest response at a voxel.
    pub fn scale_at(&self, c: [usize; 3]) -> f64 {
        self.scales[self.best_scale[self.index(c)] as usize]
    }
}

fn gaussian_kernel(sigma_vox: f64) -> Vec<f32> {
    let radius = (3.0 * sigma_vox).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k.into_iter().map(|w| w as f32).collect()
}

/// Separable Gaussian along one axis with clamp-to-edge borders.
#[inline(always)]
fn smooth_axis(src: &[f32], dst: &mut [f32], dims: [usize; 3], axis: usize, kernel: &[f32]) {
    let [nx, ny, nz] = dims;
    let r = (kernel.len() / 2) as isize;
    match axis {
        0 => {
            let mut padded = vec![0f32; nx + 2 * r as usize];
            for row in 0..ny * nz {
                let s = &src[row * nx..(row + 1) * nx];
                for (i, p) in padded.iter_mut().enumerate() {
                    let x = (i as isize - r).clamp(0, nx as isize - 1) as usize;
                    *p = s[x];
                }
                let d = &mut dst[row * nx..(row + 1) * nx];
                d.iter_mut().for_each(|v| *v = 0.0);
                for (t, &w) in kernel.iter().enumerate() {
                    for (o, &v) in d.iter_mut().zip(&padded[t..t + nx]) {
                        *o += w * v;
                    }
                }
            }
        }
        1 => {
            for z in 0..nz {
                let plane = z * nx * ny;
                for y in 0..ny {
                    let d = &mut dst[plane + y * nx..plane + (y + 1) * nx];
                    d.iter_mut().for_each(|v| *v = 0.0);
                    for (t, &w) in kernel.iter().enumerate() {
                        let yy = (y as isize + t as isize - r).clamp(0, ny as isize - 1) as usize;
                        let s = &src[plane + yy * nx..plane + (yy + 1) * nx];
                        for (o, &v) in d.iter_mut().zip(s) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        _ => {
            let plane = nx * ny;
            for z in 0..nz {
                let d = &mut dst[z * plane..(z + 1) * plane];
                d.iter_mut().for_each(|v| *v = 0.0);
                for (t, &w) in kernel.iter().enumerate() {
                    let zz = (z as isize + t as isize - r).clamp(0, nz as isize - 1) as usize;
                    let s = &src[zz * plane..(zz + 1) * plane];
                    for (o, &v) in d.iter_mut().zip(s) {
                        *o += w * v;
                    }
                }
            }
        }
    }
}

/// Chebyshev series of `cos(2/3 · acos(t))` on `t ∈ [0, 1]`, in `x = 2t - 1`.
const TRISECT_COS: [f64; 17] = [
    0.7580911654351291,
    0.24933602102708857,
    -0.00802117454879528,
    0.000655646818891164,
    -6.892435632790424e-05,
    8.188877173061517e-06,
    -1.0466055459950905e-06,
    1.4043322844954943e-07,
    -1.9510326150148748e-08,
    2.7823203980970765e-09,
    -4.049390306954071e-10,
    5.99038489361416e-11,
    -8.980925864081907e-12,
    1.3615349570308397e-12,
    -2.083722471911827e-13,
    3.213056582176105e-14,
    -4.903451852744782e-15,
];

/// `cos(acos(r) / 3)` for `r ∈ [-1, 1]`, without libm trigonometry.
///
/// With `r = 2t² - 1` this is `cos(2/3 · acos(t))`, which is analytic on
/// `[0, 1]`, so a degree-16 series is accurate to a few ulps.
#[inline]
fn cos_third_acos(r: f64) -> f64 {
    let t = (0.5 * (1.0 + r)).max(0.0).sqrt();
    let x = 2.0 * t - 1.0;
    // Clenshaw recurrence
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in TRISECT_COS[1..].iter().rev() {
        (b1, b2) = (2.0 * x * b1 - b2 + c, b1);
    }
    x * b1 - b2 + TRISECT_COS[0]
}

/// Eigenvalues of a symmetric 3×3 matrix, unordered. Branch-free, so it
/// vectorizes inside [`TubeBatch::score`].
#[inline(always)]
fn sym_eigenvalues(a11: f64, a22: f64, a33: f64, a12: f64, a13: f64, a23: f64) -> [f64; 3] {
    let p1 = a12 * a12 + a13 * a13 + a23 * a23;
    let diagonal = p1 <= 1e-30 * (a11 * a11 + a22 * a22 + a33 * a33).max(1e-300);
    let q = (a11 + a22 + a33) / 3.0;
    let b11 = a11 - q;
    let b22 = a22 - q;
    let b33 = a33 - q;
    let p2 = b11 * b11 + b22 * b22 + b33 * b33 + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let det = b11 * (b22 * b33 - a23 * a23) - a12 * (a12 * b33 - a23 * a13) + a13 * (a12 * a23 - b22 * a13);
    let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    // phi in [0, pi/3], so sin(phi) >= 0 and cos(phi + 2pi/3) follows from cos(phi)
    let c = cos_third_acos(r);
    let sn = (1.0 - c * c).max(0.0).sqrt();
    let e1 = q + 2.0 * p * c;
    let e3 = q - p * (c + 3f64.sqrt() * sn);
    // p can vanish for a diagonal matrix, leaving NaN in the general branch
    if diagonal {
        [a11, a22, a33]
    } else {
        [e1, 3.0 * q - e1 - e3, e3]
    }
}

/// Whether a symmetric matrix certainly fails the bright-tube sign pattern,
/// i.e. its two largest-magnitude eigenvalues are not both negative.
///
/// That pattern holds iff every pairwise eigenvalue sum is negative. Those sums
/// are the eigenvalues of `tr·I - H`, so the test is Sylvester's criterion on
/// `H - tr·I`. A leading minor that is clearly negative proves failure; one
/// within rounding of zero keeps the voxel for the full eigen analysis.
#[inline(always)]
fn cannot_be_tube(a11: f64, a22: f64, a33: f64, a12: f64, a13: f64, a23: f64, norm: f64) -> bool {
    let (p11, p22, p33) = (-(a22 + a33), -(a11 + a33), -(a11 + a22));
    let tol = 1e-9 * norm;
    let m2 = p11 * p22 - a12 * a12;
    let det = p11 * (p22 * p33 - a23 * a23) - a12 * (a12 * p33 - a23 * a13) + a13 * (a12 * a23 - p22 * a13);
    (p11 < -tol) | (m2 < -tol * norm) | (det < -tol * norm * norm)
}

/// Single-precision screen for [`cannot_be_tube`] with a tolerance far above
/// its rounding error, so it only rejects matrices the exact test rejects.
#[inline(always)]
fn maybe_tube_f32([a11, a22, a33, a12, a13, a23]: [f32; 6], s2: f32) -> bool {
    let norm = s2.sqrt();
    let tol = 1e-3 * norm;
    let (p11, p22, p33) = (-(a22 + a33), -(a11 + a33), -(a11 + a22));
    let m2 = p11 * p22 - a12 * a12;
    let det = p11 * (p22 * p33 - a23 * a23) - a12 * (a12 * p33 - a23 * a13) + a13 * (a12 * a23 - p22 * a13);
    (a11 + a22 + a33 < tol) & (p11 >= -tol) & (m2 >= -tol * norm) & (det >= -tol * norm * norm)
}

/// Compare-swap by magnitude; keeps the order of ties.
#[inline(always)]
fn by_magnitude(a: f64, b: f64) -> (f64, f64) {
    if b.abs() < a.abs() {
        (b, a)
    } else {
        (a, b)
    }
}

/// Exponent arguments `(ra²/a2, rb²/b2)` of the Frangi shape factor, and
/// whether the eigenvalue signs describe a bright tube at all.
#[inline(always)]
fn tube_exponents(eig: [f64; 3], a2: f64, b2: f64) -> (bool, f64, f64) {
    // stable sort by magnitude as a three-swap network
    let [l1, l2, l3] = eig;
    let (l1, l2) = by_magnitude(l1, l2);
    let (l2, l3) = by_magnitude(l2, l3);
    let (l1, l2) = by_magnitude(l1, l2);
    let ra = l2.abs() / l3.abs();
    let rb = l1.abs() / (l2 * l3).abs().sqrt();
    ((l2 < 0.0) & (l3 < 0.0), ra * ra / a2, rb * rb / b2)
}

/// Candidate Hessians of one row in structure-of-arrays form. Scoring runs as
/// one straight-line pass the compiler can vectorize; only the exponentials
/// are left to a scalar tail.
struct TubeBatch {
    h: [Vec<f64>; 6],
    norm: Vec<f64>,
    tube: Vec<bool>,
    ea: Vec<f64>,
    eb: Vec<f64>,
}

impl TubeBatch {
    fn new(cap: usize) -> Self {
        Self {
            h: [(); 6].map(|_| vec![0.0; cap]),
            norm: vec![0.0; cap],
            tube: vec![false; cap],
            ea: vec![0.0; cap],
            eb: vec![0.0; cap],
        }
    }

    /// Score the first `n` loaded Hessians.
    #[inline(always)]
    fn score(&mut self, n: usize, a2: f64, b2: f64) {
        let [xx, yy, zz, xy, xz, yz] = &self.h;
        let (xx, yy, zz, xy, xz, yz) = (&xx[..n], &yy[..n], &zz[..n], &xy[..n], &xz[..n], &yz[..n]);
        let (norm, tube, ea, eb) = (&mut self.norm[..n], &mut self.tube[..n], &mut self.ea[..n], &mut self.eb[..n]);
        for m in 0..n {
            let (a11, a22, a33, a12, a13, a23) = (xx[m], yy[m], zz[m], xy[m], xz[m], yz[m]);
            let s2 = a11 * a11 + a22 * a22 + a33 * a33 + 2.0 * (a12 * a12 + a13 * a13 + a23 * a23);
            let s = s2.sqrt();
            let signs = (s2 > 0.0) & (a11 + a22 + a33 < 0.0) & !cannot_be_tube(a11, a22, a33, a12, a13, a23, s);
            let (t, a, b) = tube_exponents(sym_eigenvalues(a11, a22, a33, a12, a13, a23), a2, b2);
            norm[m] = s;
            tube[m] = signs & t;
            ea[m] = a;
            eb[m] = b;
        }
    }
}

struct ScaleResponse {
    entries: Vec<(u32, f32, f32)>,
    max_norm: f64,
}

/// Hessian analysis of one smoothed block at one scale.
///
/// Works a row at a time in vectorizable passes: second differences, a cheap
/// screen on the eigenvalue signs, then the exact eigen analysis of the
/// survivors as one batch.
#[inline(always)]
fn analyze_scale(
    smoothed: &[f32],
    dims: [usize; 3],
    spacing: Vec3,
    sigma: f64,
    inner: &VoxelBox,
    params: &VesselnessParams,
) -> ScaleResponse {
    let [nx, ny, nz] = dims;
    let norm = sigma * sigma;
    let ixx = (norm / (spacing[0] * spacing[0])) as f32;
    let iyy = (norm / (spacing[1] * spacing[1])) as f32;
    let izz = (norm / (spacing[2] * spacing[2])) as f32;
    let ixy = (norm / (4.0 * spacing[0] * spacing[1])) as f32;
    let ixz = (norm / (4.0 * spacing[0] * spacing[2])) as f32;
    let iyz = (norm / (4.0 * spacing[1] * spacing[2])) as f32;
    let a2 = 2.0 * params.alpha * params.alpha;
    let b2 = 2.0 * params.beta * params.beta;
    let mut entries = Vec::new();
    let mut max_s2 = 0.0f32;
    let (lo, hi) = (inner.lo[0], inner.hi[0]);
    let w = hi - lo;
    let id = inner.dims();
    // x neighbours of every row position, clamped at the block edge
    let im: Vec<usize> = (lo..hi).map(|i| i.saturating_sub(1)).collect();
    let ip: Vec<usize> = (lo..hi).map(|i| (i + 1).min(nx - 1)).collect();
    let mut h = [(); 6].map(|_| vec![0f32; w]);
    let mut keep = vec![0u8; w];
    let mut cand = vec![0u32; w];
    let mut batch = TubeBatch::new(w);
    let row = |j: usize, k: usize| &smoothed[nx * (j + ny * k)..nx * (j + ny * k) + nx];
    for k in inner.lo[2]..inner.hi[2] {
        let (km, kp) = (k.saturating_sub(1), (k + 1).min(nz - 1));
        for j in inner.lo[1]..inner.hi[1] {
            let (jm, jp) = (j.saturating_sub(1), (j + 1).min(ny - 1));
            let c = row(j, k);
            let (y_m, y_p, z_m, z_p) = (row(jm, k), row(jp, k), row(j, km), row(j, kp));
            let (mm, mp, pm, pp) = (row(jm, km), row(jm, kp), row(jp, km), row(jp, kp));
            let [hxx, hyy, hzz, hxy, hxz, hyz] = &mut h;
            for t in 0..w {
                let (i, a, b) = (lo + t, im[t], ip[t]);
                let cc = 2.0 * c[i];
                hxx[t] = (c[b] - cc + c[a]) * ixx;
                hyy[t] = (y_p[i] - cc + y_m[i]) * iyy;
                hzz[t] = (z_p[i] - cc + z_m[i]) * izz;
                hxy[t] = (y_p[b] - y_m[b] - y_p[a] + y_m[a]) * ixy;
                hxz[t] = (z_p[b] - z_m[b] - z_p[a] + z_m[a]) * ixz;
                hyz[t] = (pp[i] - pm[i] - mp[i] + mm[i]) * iyz;
            }
            // vectorizable screen, then a branch-free list of survivors
            for t in 0..w {
                let s2 = hxx[t] * hxx[t]
                    + hyy[t] * hyy[t]
                    + hzz[t] * hzz[t]
                    + 2.0 * (hxy[t] * hxy[t] + hxz[t] * hxz[t] + hyz[t] * hyz[t]);
                if s2 > max_s2 {
                    max_s2 = s2;
                }
                keep[t] = u8::from(maybe_tube_f32([hxx[t], hyy[t], hzz[t], hxy[t], hxz[t], hyz[t]], s2));
            }
            let mut n = 0;
            for (t, &k) in keep.iter().enumerate() {
                cand[n] = t as u32;
                n += k as usize;
            }
            for (m, &t) in cand[..n].iter().enumerate() {
                for (dst, src) in batch.h.iter_mut().zip(&h) {
                    dst[m] = src[t as usize] as f64;
                }
            }
            batch.score(n, a2, b2);
            let base = id[0] * ((j - inner.lo[1]) + id[1] * (k - inner.lo[2]));
            for m in 0..n {
                if !batch.tube[m] {
                    continue;
                }
                let shape = (1.0 - (-batch.ea[m]).exp()) * (-batch.eb[m]).exp();
                if shape > 0.0 {
                    entries.push(((base + cand[m] as usize) as u32, shape as f32, batch.norm[m] as f32));
                }
            }
        }
    }
    ScaleResponse {
        entries,
        max_norm: (max_s2 as f64).sqrt(),
    }
}

/// Smooth `src` at `sigma` and analyze it.
#[inline(always)]
fn scale_response_body(
    src: &[f32],
    [a, b]: [&mut [f32]; 2],
    dims: [usize; 3],
    spacing: Vec3,
    sigma: f64,
    inner: &VoxelBox,
    params: &VesselnessParams,
) -> ScaleResponse {
    smooth_axis(src, a, dims, 0, &gaussian_kernel(sigma / spacing[0]));
    smooth_axis(a, b, dims, 1, &gaussian_kernel(sigma / spacing[1]));
    smooth_axis(b, a, dims, 2, &gaussian_kernel(sigma / spacing[2]));
    analyze_scale(a, dims, spacing, sigma, inner, params)
}

/// The same code compiled for wider vectors. Rust never contracts `a * b + c`
/// into a fused multiply-add, so the result is bit-identical to the baseline.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
fn scale_response_avx2(
    src: &[f32],
    tmp: [&mut [f32]; 2],
    dims: [usize; 3],
    spacing: Vec3,
    sigma: f64,
    inner: &VoxelBox,
    params: &VesselnessParams,
) -> ScaleResponse {
    scale_response_body(src, tmp, dims, spacing, sigma, inner, params)
}

fn scale_response(
    src: &[f32],
    tmp: [&mut [f32]; 2],
    dims: [usize; 3],
    spacing: Vec3,
    sigma: f64,
    inner: &VoxelBox,
    params: &VesselnessParams,
) -> ScaleResponse {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were just detected
        return unsafe { scale_response_avx2(src, tmp, dims, spacing, sigma, inner, params) };
    }
    scale_response_body(src, tmp, dims, spacing, sigma, inner, params)
}

fn check_scales(v: &Volume, scales: &[f64]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::Parameter("at least one vesselness scale is required".into()));
    }
    if scales.len() > u8::MAX as usize {
        return Err(Error::Parameter("too many vesselness scales".into()));
    }
    let coarsest = v.spacing().iter().cloned().fold(0.0, f64::max);
    for &s in scales {
        if !(s >= coarsest) {
            return Err(Error::Parameter(format!(
                "scale {s} mm is below the voxel spacing {coarsest} mm"
            )));
        }
    }
    Ok(())
}

/// Vesselness over the whole volume with default shape parameters.
pub fn vesselness(v: &Volume, scales: &[f64]) -> Result<VesselnessField> {
    let params = VesselnessParams {
        scales: scales.to_vec(),
        ..Default::default()
    };
    vesselness_with(v, &params, None)
}

/// Vesselness restricted to `region` (zero elsewhere). Smoothing still reads
/// voxels around the region so the response inside is unaffected by the crop.
pub fn vesselness_with(v: &Volume, params: &VesselnessParams, region: Option<VoxelBox>) -> Result<VesselnessField> {
    check_scales(v, &params.scales)?;
    let dims = v.dims();
    let spacing = v.spacing();
    let region = region.unwrap_or(VoxelBox::full(dims));
    let mut out = VesselnessField {
        dims,
        spacing,
        origin: v.origin(),
        values: vec![0.0; v.len()],
        best_scale: vec![0; v.len()],
        scales: params.scales.clone(),
    };
    if region.is_empty() {
        return Ok(out);
    }

    let sigma_max = params.scales.iter().cloned().fold(0.0, f64::max) / std::f64::consts::SQRT_2;
    let pad = [0, 1, 2].map(|a| (3.0 * sigma_max / spacing[a]).ceil() as usize + 2);
    let block = region.grow(pad, dims);
    let bd = block.dims();
    let mut src = Vec::with_capacity(block.count());
    for k in block.lo[2]..block.hi[2] {
        for j in block.lo[1]..block.hi[1] {
            let row = v.index(block.lo[0], j, k);
            src.extend(v.data()[row..row + bd[0]].iter().map(|&x| x as f32));
        }
    }
    let inner = VoxelBox {
        lo: [0, 1, 2].map(|a| region.lo[a] - block.lo[a]),
        hi: [0, 1, 2].map(|a| region.hi[a] - block.lo[a]),
    };

    let mut tmp_a = vec![0f32; src.len()];
    let mut tmp_b = vec![0f32; src.len()];
    let mut responses = Vec::with_capacity(params.scales.len());
    let mut max_norm = 0.0f64;
    for &rho in &params.scales {
        let sigma = rho / std::f64::consts::SQRT_2;
        let r = scale_response(&src, [&mut tmp_a, &mut tmp_b], bd, spacing, sigma, &inner, params);
        max_norm = max_norm.max(r.max_norm);
        responses.push(r);
    }
    drop(tmp_a);
    drop(tmp_b);

    let ri = inner.dims();
    let mut local = vec![0f32; region.count()];
    let mut local_scale = vec![0u8; region.count()];
    if max_norm > 0.0 {
        let c = 0.5 * max_norm;
        let c2 = 2.0 * c * c;
        for (si, r) in responses.iter().enumerate() {
            for &(li, shape, s) in &r.entries {
                let li = li as usize;
                // the structureness term is below 1, so this scale cannot win
                if shape <= local[li] {
                    continue;
                }
                let s = s as f64;
                let val = (shape as f64 * (1.0 - (-s * s / c2).exp())) as f32;
                if val > local[li] {
                    local[li] = val;
                    local_scale[li] = si as u8;
                }
            }
        }
    }
    let peak = local.iter().cloned().fold(0f32, f32::max);
    if peak > 0.0 {
        local.iter_mut().for_each(|x| *x /= peak);
    }
    for k in 0..ri[2] {
        for j in 0..ri[1] {
            let dst = v.index(region.lo[0], region.lo[1] + j, region.lo[2] + k);
            let srci = ri[0] * (j + ri[1] * k);
            out.values[dst..dst + ri[0]].copy_from_slice(&local[srci..srci + ri[0]]);
            out.best_scale[dst..dst + ri[0]].copy_from_slice(&local_scale[srci..srci + ri[0]]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomKind, PhantomSpec};

/// Shape factor of the Frangi measure (everything except the structureness
/// term) for a bright tube, or `None` when the sign pattern is not tubular.
fn tube_shape_factor(eig: [f64; 3], a2: f64, b2: f64) -> Option<f64> {
    let (tube, ea, eb) = tube_exponents(eig, a2, b2);
    tube.then(|| (1.0 - (-ea).exp()) * (-eb).exp())
}

    proptest::proptest! {
        #[test]
        fn sign_filter_never_drops_a_tube_candidate(
            d in proptest::array::uniform3(-5.0f64..5.0),
            o in proptest::array::uniform3(-3.0f64..3.0),
        ) {
            let m = nalgebra::Matrix3::new(d[0], o[0], o[1], o[0], d[1], o[2], o[1], o[2], d[2]);
            let e = m.symmetric_eigenvalues();
            let tube = tube_shape_factor([e[0], e[1], e[2]], 0.5, 0.5).is_some();
            if cannot_be_tube(d[0], d[1], d[2], o[0], o[1], o[2], m.norm()) {
                proptest::prop_assert!(!tube, "{m}");
            }
        }

        #[test]
        fn single_precision_screen_never_drops_a_tube_candidate(
            d in proptest::array::uniform3(-5.0f32..5.0),
            o in proptest::array::uniform3(-3.0f32..3.0),
            mag in -6i32..6,
        ) {
            let k = 10f32.powi(mag);
            let h = [d[0] * k, d[1] * k, d[2] * k, o[0] * k, o[1] * k, o[2] * k];
            let [a, b, c, x, y, z] = h.map(f64::from);
            let s2 = h[..3].iter().map(|v| v * v).sum::<f32>() + 2.0 * h[3..].iter().map(|v| v * v).sum::<f32>();
            let s = (a * a + b * b + c * c + 2.0 * (x * x + y * y + z * z)).sqrt();
            if !maybe_tube_f32(h, s2) {
                proptest::prop_assert!(a + b + c >= 0.0 || cannot_be_tube(a, b, c, x, y, z, s), "{h:?}");
            }
        }

        #[test]
        fn eigenvalues_match_nalgebra(
            d in proptest::array::uniform3(-5.0f64..5.0),
            o in proptest::array::uniform3(-3.0f64..3.0),
        ) {
            let m = nalgebra::Matrix3::new(d[0], o[0], o[1], o[0], d[1], o[2], o[1], o[2], d[2]);
            let mut want: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            let mut got = sym_eigenvalues(d[0], d[1], d[2], o[0], o[1], o[2]).to_vec();
            want.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            for (a, b) in got.iter().zip(&want) {
                proptest::prop_assert!((a - b).abs() <= 1e-9 * m.norm().max(1.0), "{got:?} vs {want:?}");
            }
        }

        #[test]
        fn batch_scores_match_the_scalar_path(
            d in proptest::collection::vec(proptest::array::uniform6(-4.0f64..4.0), 1..40),
        ) {
            let mut b = TubeBatch::new(d.len());
            for (m, h) in d.iter().enumerate() {
                for k in 0..6 {
                    b.h[k][m] = h[k];
                }
            }
            b.score(d.len(), 0.5, 0.5);
            for (m, &[a, bb, c, x, y, z]) in d.iter().enumerate() {
                let s = (a * a + bb * bb + c * c + 2.0 * (x * x + y * y + z * z)).sqrt();
                let want = if a + bb + c < 0.0 && !cannot_be_tube(a, bb, c, x, y, z, s) {
                    tube_shape_factor(sym_eigenvalues(a, bb, c, x, y, z), 0.5, 0.5)
                } else {
                    None
                };
                let got = b.tube[m].then(|| (1.0 - (-b.ea[m]).exp()) * (-b.eb[m]).exp());
                proptest::prop_assert_eq!(got, want);
                proptest::prop_assert_eq!(b.norm[m], s);
            }
        }

        #[test]
        fn sign_filter_passes_clear_tubes(
            l in (0.1f64..1.0, 1.0f64..4.0, 1.0f64..4.0),
            q in proptest::array::uniform3(-3.0f64..3.0),
        ) {
            // eigenvalues (±small, -big, -big) in a random orthonormal frame
            let r = nalgebra::Rotation3::from_scaled_axis(nalgebra::Vector3::from(q));
            let diag = nalgebra::Matrix3::from_diagonal(&nalgebra::Vector3::new(l.0 * 0.5, -l.1, -l.2));
            let m = r.matrix() * diag * r.matrix().transpose();
            let s = m.norm();
            proptest::prop_assert!(!cannot_be_tube(m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(0, 2)], m[(1, 2)], s));
        }
    }

    #[test]
    fn trisection_series_matches_libm() {
        for i in 0..=20000 {
            let r = -1.0 + i as f64 / 10000.0;
            let want = (r.acos() / 3.0).cos();
            assert!((cos_third_acos(r) - want).abs() < 1e-14, "r = {r}");
        }
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        // [[2,1,0],[1,2,0],[0,0,5]] → 1, 3, 5
        let mut e = sym_eigenvalues(2.0, 2.0, 5.0, 1.0, 0.0, 0.0);
        e.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12, "{e:?}");
        }
    }

    #[test]
    fn uniform_volume_is_zero() {
        let v = Volume::filled([20, 20, 20], [0.4; 3], [0.0; 3], 100).unwrap();
        let f = vesselness(&v, &DEFAULT_SCALES).unwrap();
        assert!(f.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scale_below_spacing_is_rejected() {
        let v = Volume::filled([4, 4, 4], [0.5; 3], [0.0; 3], 0).unwrap();
        assert!(matches!(vesselness(&v, &[0.4]), Err(Error::Parameter(_))));
        assert!(matches!(vesselness(&v, &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn tube_axis_dominates_and_scale_matches_radius() {
        let mut spec = PhantomSpec::new(PhantomKind::StraightTube);
        spec.dims = [48, 48, 24];
        let ph = make_phantom(&spec).unwrap();
        let f = vesselness(&ph.volume, &DEFAULT_SCALES).unwrap();
        let axis = f.at([24, 24, 12]);
        assert!(axis > 0.9, "axis response {axis}");
        let r = ph.truth.lumen_radius;
        for idx in 0..f.values.len() {
            let p = ph.volume.center_of(idx);
            if ph.truth.distance_to_centerline(p) >= 2.0 * r {
                assert!((f.values[idx] as f64) < axis);
            }
        }
        // argmax scale within one step of the true radius
        let s = f.scale_at([24, 24, 12]);
        assert!(s == 1.6 || s == 2.4, "best scale {s}");
    }

    #[test]
    fn region_restriction_matches_inside() {
        let mut spec = PhantomSpec::new(PhantomKind::StraightTube);
        spec.dims = [40, 40, 20];
        let ph = make_phantom(&spec).unwrap();
        let region = VoxelBox {
            lo: [10, 10, 5],
            hi: [30, 30, 15],
        };
        let f = vesselness_with(&ph.volume, &VesselnessParams::default(), Some(region)).unwrap();
        assert_eq!(f.at([0, 0, 0]), 0.0);
        assert!(f.at([20, 20, 10]) > 0.9);
    }
}
