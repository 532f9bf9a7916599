//! Exact solver for the cyclic chain MRF with a quadratic pairwise prior.

use crate::error::{Error, Result};

/// Per-ray radius labelling problem on a closed ring of rays.
#[derive(Clone, Debug, PartialEq)]
pub struct MrfProblem {
    n_rays: usize,
    n_labels: usize,
    /// Ray-major unary costs, `unary[ray * n_labels + label]`.
    unary: Vec<f64>,
    /// Pairwise cost `lambda * (l_i - l_{i+1})^2` between cyclic neighbours.
    pub lambda: f64,
}

pub const DEFAULT_LAMBDA: f64 = 2.0;

impl MrfProblem {
    pub fn new(n_rays: usize, n_labels: usize, unary: Vec<f64>, lambda: f64) -> Result<Self> {
        if n_rays == 0 || n_labels == 0 {
            return Err(Error::Parameter("MRF needs at least one ray and one label".into()));
        }
        if unary.len() != n_rays * n_labels {
            return Err(Error::Parameter(format!(
                "expected {} unary costs, got {}",
                n_rays * n_labels,
                unary.len()
            )));
        }
        if unary.iter().any(|u| !u.is_finite()) {
            return Err(Error::Parameter("unary costs must be finite".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("pairwise weight {lambda} must be non-negative")));
        }
        Ok(Self {
            n_rays,
            n_labels,
            unary,
            lambda,
        })
    }

    pub fn n_rays(&self) -> usize {
        self.n_rays
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn unary(&self, ray: usize, label: usize) -> f64 {
        self.unary[ray * self.n_labels + label]
    }

    pub fn unary_row(&self, ray: usize) -> &[f64] {
        &self.unary[ray * self.n_labels..(ray + 1) * self.n_labels]
    }

    pub(crate) fn unary_row_mut(&mut self, ray: usize) -> &mut [f64] {
        &mut self.unary[ray * self.n_labels..(ray + 1) * self.n_labels]
    }

    #[inline]
    fn pair(&self, a: usize, b: usize) -> f64 {
        let d = a as f64 - b as f64;
        self.lambda * d * d
    }

    /// Total energy of a labelling.
    pub fn energy(&self, labels: &[usize]) -> f64 {
        let n = self.n_rays;
        let mut e = 0.0;
        for i in 0..n {
            e += self.unary(i, labels[i]);
        }
        for i in 0..n {
            e += self.pair(labels[i], labels[(i + 1) % n]);
        }
        e
    }
}

/// `out[x] = min_y f[y] + lambda (x - y)^2` with the smallest minimizing `y`
/// in `arg[x]`. Divide and conquer over the monotone argmin of a Monge array;
/// every candidate value is computed exactly as in a direct scan.
fn min_convolve(f: &[f64], lambda: f64, out: &mut [f64], arg: &mut [usize]) {
    fn rec(f: &[f64], lambda: f64, out: &mut [f64], arg: &mut [usize], xl: usize, xr: usize, yl: usize, yr: usize) {
        if xl > xr {
            return;
        }
        let x = (xl + xr) / 2;
        let mut best = f64::INFINITY;
        let mut by = yl;
        for y in yl..=yr {
            let d = x as f64 - y as f64;
            let v = f[y] + lambda * d * d;
            if v < best {
                best = v;
                by = y;
            }
        }
        out[x] = best;
        arg[x] = by;
        if x > xl {
            rec(f, lambda, out, arg, xl, x - 1, yl, by);
        }
        rec(f, lambda, out, arg, x + 1, xr, by, yr);
    }
    let n = f.len();
    rec(f, lambda, out, arg, 0, n - 1, 0, n - 1);
}

/// Globally optimal labelling of a cyclic MRF.
///
/// The ring is opened by fixing the label of ray 0; each choice is solved by
/// exact dynamic programming along the chain. Among equal-energy optima the
/// lexicographically smallest labelling is returned (smaller labels first,
/// earlier rays first).
pub fn solve_cyclic_mrf(p: &MrfProblem) -> Vec<usize> {
    let (n, l) = (p.n_rays, p.n_labels);
    if n == 1 {
        return vec![argmin(p.unary_row(0))];
    }
    // b[i] holds the optimal cost-to-go of rays i..n-1 given label of ray i
    let mut b = vec![0.0; n * l];
    let mut conv = vec![0.0; l];
    let mut arg = vec![0usize; l];
    let mut best: Option<(f64, usize)> = None;
    let mut best_b = Vec::new();
    for a in 0..l {
        solve_chain(p, a, &mut b, &mut conv, &mut arg);
        min_convolve(&b[l..2 * l], p.lambda, &mut conv, &mut arg);
        let total = p.unary(0, a) + conv[a];
        if best.is_none_or(|(e, _)| total < e) {
            best = Some((total, a));
            best_b.clone_from(&b);
        }
    }
    let (_, a) = best.unwrap();
    let mut labels = vec![a; n];
    for i in 1..n {
        let prev = labels[i - 1];
        let row = &best_b[i * l..(i + 1) * l];
        let mut bv = f64::INFINITY;
        let mut by = 0;
        for (y, &v) in row.iter().enumerate() {
            let d = prev as f64 - y as f64;
            let c = v + p.lambda * d * d;
            if c < bv {
                bv = c;
                by = y;
            }
        }
        labels[i] = by;
    }
    labels
}

fn solve_chain(p: &MrfProblem, a: usize, b: &mut [f64], conv: &mut [f64], arg: &mut [usize]) {
    let (n, l) = (p.n_rays, p.n_labels);
    for x in 0..l {
        b[(n - 1) * l + x] = p.unary(n - 1, x) + p.pair(x, a);
    }
    for i in (1..n - 1).rev() {
        let (head, tail) = b.split_at_mut((i + 1) * l);
        min_convolve(&tail[..l], p.lambda, conv, arg);
        for x in 0..l {
            head[i * l + x] = p.unary(i, x) + conv[x];
        }
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}
