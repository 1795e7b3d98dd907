//! Bilateral-space factorization of the Gaussian pixel affinity over a
//! whole sequence, and the dense spatio-temporal reflectance smoothness
//! loss built on it.
//!
//! Every valid pixel of every frame is hard-assigned (by rounding its
//! bandwidth-scaled feature vector) to one lattice vertex, so pixels from
//! all m frames share one grid and the smoothness term couples the whole
//! sequence. The affinity W is approximated as S^T B S with S the 0/1
//! splat matrix and B the symmetrized product of per-axis [1,2,1]/4 blurs;
//! a diagonal N then bistochasticizes it. The loss is
//!
//! ```text
//!   r^T r - (N r)^T S^T B S (N r)        per channel, summed
//! ```
//!
//! evaluated with matvecs only, in O((d+1) m n).

use std::collections::HashMap;

use crate::energy::Decomposition;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::imagestack::LogStack;
use crate::scalar::Scalar;

/// Per-feature Gaussian bandwidths, ordered (x, y, intensity, c1, c2).
pub type Bandwidths = [f64; 5];

/// Feature dimension; one blur matrix per lattice axis.
pub const FEATURE_DIM: usize = 5;

const NO_VERTEX: u32 = u32::MAX;

/// Largest pixel count accepted by the dense affinity reference.
pub const DENSE_REFERENCE_LIMIT: usize = 4096;

/// Outcome of the bistochasticization fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistoStatus {
    pub iterations: usize,
    /// max |row-sum - 1| over valid pixels at exit.
    pub residual: f64,
    pub converged: bool,
}

/// Sparse splat/blur/slice factorization of the sequence-wide Gaussian
/// affinity, plus the bistochasticizing diagonal.
#[derive(Debug, Clone)]
pub struct BilateralGrid {
    m: usize,
    h: usize,
    w: usize,
    bandwidths: Bandwidths,
    vertex_count: usize,
    coords: Vec<[i32; FEATURE_DIM]>,
    /// Per vertex, per axis: [minus, plus] neighbor index or NO_VERTEX.
    neighbors: Vec<[[u32; 2]; FEATURE_DIM]>,
    /// Per sequence pixel (frame-major), vertex index or NO_VERTEX.
    pixel_vertex: Vec<u32>,
    valid_count: usize,
    /// Diagonal of N over sequence pixels; zero at invalid pixels.
    bisto_diag: Vec<f64>,
    bisto_status: Option<BistoStatus>,
}

fn check_bandwidths(bandwidths: &Bandwidths) -> Result<()> {
    for (axis, &b) in bandwidths.iter().enumerate() {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::DegenerateBandwidth { axis, value: b });
        }
    }
    Ok(())
}

/// Builds the grid for a whole stack: each valid pixel's feature vector is
/// divided by the bandwidths and rounded to the nearest lattice vertex.
/// Vertices with no pixels are never materialized.
pub fn build_grid<T: Scalar>(stack: &LogStack<T>, bandwidths: Bandwidths) -> Result<BilateralGrid> {
    check_bandwidths(&bandwidths)?;
    let (m, h, w) = (stack.frame_count(), stack.h(), stack.w());
    let masks = stack.masks();

    let mut lattice: HashMap<[i32; FEATURE_DIM], u32> = HashMap::new();
    let mut coords: Vec<[i32; FEATURE_DIM]> = Vec::new();
    let mut pixel_vertex = vec![NO_VERTEX; m * h * w];
    let mut valid_count = 0usize;

    for i in 0..m {
        let feats = &stack.features[i];
        for y in 0..h {
            for x in 0..w {
                if !masks[i].valid(y, x) {
                    continue;
                }
                valid_count += 1;
                let mut key = [0i32; FEATURE_DIM];
                for k in 0..FEATURE_DIM {
                    key[k] = (feats.at(y, x, k).as_f64() / bandwidths[k]).round() as i32;
                }
                let next = coords.len() as u32;
                let v = *lattice.entry(key).or_insert_with(|| {
                    coords.push(key);
                    next
                });
                pixel_vertex[(i * h + y) * w + x] = v;
            }
        }
    }

    let vertex_count = coords.len();
    let mut neighbors = vec![[[NO_VERTEX; 2]; FEATURE_DIM]; vertex_count];
    for (v, key) in coords.iter().enumerate() {
        for k in 0..FEATURE_DIM {
            let mut probe = *key;
            probe[k] = key[k] - 1;
            if let Some(&u) = lattice.get(&probe) {
                neighbors[v][k][0] = u;
            }
            probe[k] = key[k] + 1;
            if let Some(&u) = lattice.get(&probe) {
                neighbors[v][k][1] = u;
            }
        }
    }

    let bisto_diag = pixel_vertex
        .iter()
        .map(|&v| if v == NO_VERTEX { 0.0 } else { 1.0 })
        .collect();

    Ok(BilateralGrid {
        m,
        h,
        w,
        bandwidths,
        vertex_count,
        coords,
        neighbors,
        pixel_vertex,
        valid_count,
        bisto_diag,
        bisto_status: None,
    })
}

impl BilateralGrid {
    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }
    #[inline]
    pub fn valid_pixel_count(&self) -> usize {
        self.valid_count
    }
    #[inline]
    pub fn sequence_pixels(&self) -> usize {
        self.m * self.h * self.w
    }
    #[inline]
    pub fn geometry(&self) -> (usize, usize, usize) {
        (self.m, self.h, self.w)
    }
    #[inline]
    pub fn bandwidths(&self) -> &Bandwidths {
        &self.bandwidths
    }
    #[inline]
    pub fn vertex_coords(&self) -> &[[i32; FEATURE_DIM]] {
        &self.coords
    }
    #[inline]
    pub fn bisto_diag(&self) -> &[f64] {
        &self.bisto_diag
    }
    #[inline]
    pub fn bisto_status(&self) -> Option<BistoStatus> {
        self.bisto_status
    }

    pub fn vertex_of_pixel(&self, frame: usize, y: usize, x: usize) -> Option<usize> {
        let v = self.pixel_vertex[(frame * self.h + y) * self.w + x];
        (v != NO_VERTEX).then_some(v as usize)
    }

    /// The dequantized feature vector the pixel was splatted at
    /// (lattice coordinate times bandwidth), if the pixel is valid.
    pub fn quantized_feature(
        &self,
        frame: usize,
        y: usize,
        x: usize,
    ) -> Option<[f64; FEATURE_DIM]> {
        self.vertex_of_pixel(frame, y, x).map(|v| {
            let mut f = [0.0; FEATURE_DIM];
            for k in 0..FEATURE_DIM {
                f[k] = self.coords[v][k] as f64 * self.bandwidths[k];
            }
            f
        })
    }

    /// One [1,2,1]/4 blur along lattice axis `axis`. A missing neighbor's
    /// tap folds onto the center, which keeps the matrix symmetric,
    /// nonnegative, and constant-preserving under edge truncation.
    fn blur_axis(&self, axis: usize, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.vertex_count);
        let mut out = vec![0.0; self.vertex_count];
        for u in 0..self.vertex_count {
            let [minus, plus] = self.neighbors[u][axis];
            let lo = if minus == NO_VERTEX {
                v[u]
            } else {
                v[minus as usize]
            };
            let hi = if plus == NO_VERTEX {
                v[u]
            } else {
                v[plus as usize]
            };
            out[u] = (2.0 * v[u] + lo + hi) * 0.25;
        }
        out
    }

    /// Applies B = B_0..B_4 + B_4..B_0 to a grid vector. Preserves the
    /// constant vector up to the factor 2 from the two orderings.
    pub fn bbar_apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.vertex_count, "grid vector length mismatch");
        let mut asc = v.to_vec();
        for axis in (0..FEATURE_DIM).rev() {
            asc = self.blur_axis(axis, &asc);
        }
        let mut desc = v.to_vec();
        for axis in 0..FEATURE_DIM {
            desc = self.blur_axis(axis, &desc);
        }
        for (a, d) in asc.iter_mut().zip(desc.iter()) {
            *a += d;
        }
        asc
    }

    /// Splat: sum pixel values onto their vertices (S v).
    pub fn splat(&self, pixel_values: &[f64]) -> Vec<f64> {
        assert_eq!(pixel_values.len(), self.sequence_pixels());
        let mut out = vec![0.0; self.vertex_count];
        for (px, &v) in self.pixel_vertex.iter().enumerate() {
            if v != NO_VERTEX {
                out[v as usize] += pixel_values[px];
            }
        }
        out
    }

    /// Slice: read each pixel's vertex value back (S^T u); zero at invalid pixels.
    pub fn slice(&self, vertex_values: &[f64]) -> Vec<f64> {
        assert_eq!(vertex_values.len(), self.vertex_count);
        self.pixel_vertex
            .iter()
            .map(|&v| {
                if v == NO_VERTEX {
                    0.0
                } else {
                    vertex_values[v as usize]
                }
            })
            .collect()
    }

    /// The factorized affinity as an operator: v -> S^T B S v.
    pub fn affinity_apply(&self, pixel_values: &[f64]) -> Vec<f64> {
        self.slice(&self.bbar_apply(&self.splat(pixel_values)))
    }

    /// Runs the bistochasticizing fixed point and stores the diagonal.
    /// Non-convergence is reported in the status, not treated as failure.
    pub fn bistochasticize(&mut self, max_iters: usize, tol: f64) -> Result<BistoStatus> {
        if max_iters < 1 {
            return Err(Error::InvalidArgument(
                "bistochasticize needs max_iters >= 1".into(),
            ));
        }
        let active: Vec<bool> = self.pixel_vertex.iter().map(|&v| v != NO_VERTEX).collect();
        let (n, status) =
            bistochasticize_fixed_point(|v| self.affinity_apply(v), &active, max_iters, tol);
        self.bisto_diag = n;
        self.bisto_status = Some(status);
        Ok(status)
    }
}

/// Fixed-point iteration `n <- sqrt(n / (W n))` over active entries.
///
/// `matvec` applies the symmetric nonnegative W. Stops when the largest
/// |row-sum(N W N) - 1| over active entries drops below `tol`, or at
/// `max_iters`. The returned diagonal is strictly positive on active
/// entries and zero elsewhere.
pub fn bistochasticize_fixed_point(
    matvec: impl Fn(&[f64]) -> Vec<f64>,
    active: &[bool],
    max_iters: usize,
    tol: f64,
) -> (Vec<f64>, BistoStatus) {
    let mut n: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let mut iterations = 0usize;
    let mut residual: f64;
    loop {
        let wn = matvec(&n);
        residual = 0.0;
        for (px, &a) in active.iter().enumerate() {
            if a {
                residual = residual.max((n[px] * wn[px] - 1.0).abs());
            }
        }
        if residual < tol || iterations >= max_iters {
            break;
        }
        for (px, &a) in active.iter().enumerate() {
            if a {
                n[px] = (n[px] / wn[px]).sqrt();
            }
        }
        iterations += 1;
    }
    let converged = residual < tol;
    (
        n,
        BistoStatus {
            iterations,
            residual,
            converged,
        },
    )
}

/// Dense spatio-temporal reflectance smoothness: loss and gradient with
/// respect to log R. The three channels share the grid and the diagonal;
/// the loss sums the channel-wise quadratic forms.
pub fn rsmooth_loss<T: Scalar>(
    grid: &BilateralGrid,
    d: &Decomposition<T>,
    masks: &[Mask],
) -> Result<(f64, Vec<Image<T>>)> {
    if grid.bisto_status.is_none() {
        return Err(Error::InvalidArgument(
            "bilateral grid must be bistochasticized before evaluating the smoothness loss".into(),
        ));
    }
    let (m, h, w) = grid.geometry();
    if d.log_r.len() != m || masks.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "decomposition has {} frames, masks {}, grid {m}",
            d.log_r.len(),
            masks.len()
        )));
    }
    for i in 0..m {
        if d.log_r[i].dims() != (h, w, 3) {
            return Err(Error::ShapeMismatch(format!(
                "log_r[{i}] dims {:?} != ({h},{w},3)",
                d.log_r[i].dims()
            )));
        }
        for y in 0..h {
            for x in 0..w {
                if masks[i].valid(y, x) != grid.vertex_of_pixel(i, y, x).is_some() {
                    return Err(Error::PrecompMismatch(format!(
                        "mask validity at frame {i}, pixel ({x},{y}) differs from grid construction"
                    )));
                }
            }
        }
    }

    let pixels = grid.sequence_pixels();
    let mut loss = 0.0f64;
    let mut grads: Vec<Image<T>> = (0..m).map(|_| Image::zeros(h, w, 3)).collect();
    let mut r = vec![0.0f64; pixels];
    let mut t = vec![0.0f64; pixels];
    for ch in 0..3 {
        for i in 0..m {
            let img = &d.log_r[i];
            for y in 0..h {
                for x in 0..w {
                    let px = (i * h + y) * w + x;
                    let valid = grid.pixel_vertex[px] != NO_VERTEX;
                    let val = if valid {
                        img.at(y, x, ch).as_f64()
                    } else {
                        0.0
                    };
                    r[px] = val;
                    t[px] = grid.bisto_diag[px] * val;
                }
            }
        }
        let u = grid.affinity_apply(&t);
        for i in 0..m {
            for y in 0..h {
                for x in 0..w {
                    let px = (i * h + y) * w + x;
                    if grid.pixel_vertex[px] == NO_VERTEX {
                        continue;
                    }
                    loss += r[px] * r[px] - t[px] * u[px];
                    grads[i].set(
                        y,
                        x,
                        ch,
                        T::of_f64(2.0 * (r[px] - grid.bisto_diag[px] * u[px])),
                    );
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Dense Gaussian affinity W_pq = exp(-(f_p-f_q)^T diag(bw^2)^-1 (f_p-f_q))
/// for oracle use on small instances; row-major `pixels x pixels`.
pub fn exact_affinity_reference(
    features: &[[f64; FEATURE_DIM]],
    bandwidths: &Bandwidths,
) -> Result<Vec<f64>> {
    check_bandwidths(bandwidths)?;
    let n = features.len();
    if n > DENSE_REFERENCE_LIMIT {
        return Err(Error::InstanceTooLarge {
            pixels: n,
            limit: DENSE_REFERENCE_LIMIT,
        });
    }
    let mut w = vec![0.0f64; n * n];
    for p in 0..n {
        for q in 0..n {
            let mut d2 = 0.0;
            for k in 0..FEATURE_DIM {
                let d = (features[p][k] - features[q][k]) / bandwidths[k];
                d2 += d * d;
            }
            w[p * n + q] = (-d2).exp();
        }
    }
    Ok(w)
}
