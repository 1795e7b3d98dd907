//! All-pairs weighted least squares over an image sequence.
//!
//! The quantity is
//!
//! ```text
//!   sum_i sum_j || P^i . Q^j . (X^i - Y^j) ||_F^2
//! ```
//!
//! with `.` the Hadamard product, including the diagonal pairs i = j.
//! The double loop costs O(m^2 n); expanding the square shows the whole
//! sum collapses onto six per-pixel accumulators, costing O(mn):
//!
//! ```text
//!   sum_px [ S(Q^2) S(P^2 X^2) + S(P^2) S(Q^2 Y^2) - 2 S(P^2 X) S(Q^2 Y) ]
//! ```
//!
//! where `S(Z)` sums the per-frame product Z over frames. The cross term
//! pairs the X accumulator with P and the Y accumulator with Q; the
//! brute-force evaluator arbitrates that pairing in the tests.
//!
//! Both image-sequence losses (reconstruction, reflectance consistency)
//! are instances of this identity with different substitutions.
//!
//! Accumulation runs entirely in f64 so the closed form and the double
//! loop agree to 1e-9 relative regardless of the pixel storage type.

use crate::energy::Decomposition;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::imagestack::LogStack;
use crate::scalar::Scalar;

/// Per-frame weight images P, Q and prediction images X, Y.
///
/// All 4m images share the same dimensions and channel count; P and Q are
/// nonnegative (masks, luminance weights, or products thereof).
pub struct PairLossInputs<'a, T> {
    p: &'a [Image<T>],
    q: &'a [Image<T>],
    x: &'a [Image<T>],
    y: &'a [Image<T>],
}

impl<'a, T: Scalar> PairLossInputs<'a, T> {
    pub fn new(
        p: &'a [Image<T>],
        q: &'a [Image<T>],
        x: &'a [Image<T>],
        y: &'a [Image<T>],
    ) -> Result<Self> {
        let m = p.len();
        if m == 0 {
            return Err(Error::InvalidArgument(
                "pair loss needs at least one frame".into(),
            ));
        }
        if q.len() != m || x.len() != m || y.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "P/Q/X/Y frame counts differ: {}/{}/{}/{}",
                p.len(),
                q.len(),
                x.len(),
                y.len()
            )));
        }
        let dims = p[0].dims();
        for (name, stack) in [("P", p), ("Q", q), ("X", x), ("Y", y)] {
            for (i, img) in stack.iter().enumerate() {
                if img.dims() != dims {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}[{i}] dims {:?} != {:?}",
                        img.dims(),
                        dims
                    )));
                }
                if !img.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "{name}[{i}] contains non-finite values"
                    )));
                }
            }
        }
        for (name, stack) in [("P", p), ("Q", q)] {
            for (i, img) in stack.iter().enumerate() {
                if img.data().iter().any(|v| *v < T::zero()) {
                    return Err(Error::InvalidArgument(format!(
                        "{name}[{i}] contains negative weights"
                    )));
                }
            }
        }
        Ok(Self { p, q, x, y })
    }

    #[inline]
    pub fn frame_count(&self) -> usize {
        self.p.len()
    }
    #[inline]
    fn elems(&self) -> usize {
        let (h, w, ch) = self.p[0].dims();
        h * w * ch
    }
}

/// Direct O(m^2 n) double loop. This is the oracle the closed form is
/// checked against; prefer [`apwls_closed`] everywhere else.
pub fn apwls_bruteforce<T: Scalar>(inputs: &PairLossInputs<'_, T>) -> f64 {
    let m = inputs.frame_count();
    let n = inputs.elems();
    let mut acc = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let (p, q) = (inputs.p[i].data(), inputs.q[j].data());
            let (x, y) = (inputs.x[i].data(), inputs.y[j].data());
            for k in 0..n {
                let t = p[k].as_f64() * q[k].as_f64() * (x[k].as_f64() - y[k].as_f64());
                acc += t * t;
            }
        }
    }
    acc
}

struct Accumulators {
    p2: Vec<f64>,
    q2: Vec<f64>,
    p2x: Vec<f64>,
    q2y: Vec<f64>,
    p2x2: Vec<f64>,
    q2y2: Vec<f64>,
}

fn accumulate<T: Scalar>(inputs: &PairLossInputs<'_, T>) -> Accumulators {
    let m = inputs.frame_count();
    let n = inputs.elems();
    let mut acc = Accumulators {
        p2: vec![0.0; n],
        q2: vec![0.0; n],
        p2x: vec![0.0; n],
        q2y: vec![0.0; n],
        p2x2: vec![0.0; n],
        q2y2: vec![0.0; n],
    };
    for i in 0..m {
        let (p, q) = (inputs.p[i].data(), inputs.q[i].data());
        let (x, y) = (inputs.x[i].data(), inputs.y[i].data());
        for k in 0..n {
            let p2 = p[k].as_f64() * p[k].as_f64();
            let q2 = q[k].as_f64() * q[k].as_f64();
            let (xv, yv) = (x[k].as_f64(), y[k].as_f64());
            acc.p2[k] += p2;
            acc.q2[k] += q2;
            acc.p2x[k] += p2 * xv;
            acc.q2y[k] += q2 * yv;
            acc.p2x2[k] += p2 * xv * xv;
            acc.q2y2[k] += q2 * yv * yv;
        }
    }
    acc
}

/// Closed-form evaluation in O(mn) via the six per-pixel accumulators.
pub fn apwls_closed<T: Scalar>(inputs: &PairLossInputs<'_, T>) -> f64 {
    let acc = accumulate(inputs);
    let mut total = 0.0f64;
    for k in 0..acc.p2.len() {
        total += acc.q2[k] * acc.p2x2[k] + acc.p2[k] * acc.q2y2[k] - 2.0 * acc.p2x[k] * acc.q2y[k];
    }
    total
}

/// Gradients of the closed form with respect to X and Y, O(mn) total.
pub struct ApwlsGradient<T> {
    pub x: Vec<Image<T>>,
    pub y: Vec<Image<T>>,
}

pub fn apwls_closed_grad<T: Scalar>(inputs: &PairLossInputs<'_, T>) -> ApwlsGradient<T> {
    let acc = accumulate(inputs);
    let m = inputs.frame_count();
    let n = inputs.elems();
    let (h, w, ch) = inputs.p[0].dims();
    let mut gx = Vec::with_capacity(m);
    let mut gy = Vec::with_capacity(m);
    for i in 0..m {
        let (p, q) = (inputs.p[i].data(), inputs.q[i].data());
        let (x, y) = (inputs.x[i].data(), inputs.y[i].data());
        let mut gxd = Vec::with_capacity(n);
        let mut gyd = Vec::with_capacity(n);
        for k in 0..n {
            let p2 = p[k].as_f64() * p[k].as_f64();
            let q2 = q[k].as_f64() * q[k].as_f64();
            gxd.push(T::of_f64(
                2.0 * p2 * (x[k].as_f64() * acc.q2[k] - acc.q2y[k]),
            ));
            gyd.push(T::of_f64(
                2.0 * q2 * (y[k].as_f64() * acc.p2[k] - acc.p2x[k]),
            ));
        }
        gx.push(Image::from_vec(h, w, ch, gxd));
        gy.push(Image::from_vec(h, w, ch, gyd));
    }
    ApwlsGradient { x: gx, y: gy }
}

/// Gradient of the image reconstruction loss.
pub struct ReconGradient<T> {
    pub log_r: Vec<Image<T>>,
    pub log_s: Vec<Image<T>>,
    pub illum: Vec<[f64; 3]>,
}

fn check_decomposition_shape<T: Scalar>(stack: &LogStack<T>, d: &Decomposition<T>) -> Result<()> {
    let (m, h, w) = (stack.frame_count(), stack.h(), stack.w());
    if d.log_r.len() != m || d.log_s.len() != m || d.illum.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "decomposition has {} reflectance / {} shading / {} illumination frames, stack has {m}",
            d.log_r.len(),
            d.log_s.len(),
            d.illum.len()
        )));
    }
    for i in 0..m {
        if d.log_r[i].dims() != (h, w, 3) {
            return Err(Error::ShapeMismatch(format!(
                "log_r[{i}] dims {:?} != ({h},{w},3)",
                d.log_r[i].dims()
            )));
        }
        if d.log_s[i].dims() != (h, w, 1) {
            return Err(Error::ShapeMismatch(format!(
                "log_s[{i}] dims {:?} != ({h},{w},1)",
                d.log_s[i].dims()
            )));
        }
    }
    Ok(())
}

/// All-pairs image reconstruction loss with luminance weighting.
///
/// Substitutions: P^i = L^i . M^i, Q^j = M^j, X^i = log I^i - log S^i - c^i,
/// Y^j = log R^j, with the illumination color c^i broadcast per channel.
/// Returns the loss and its gradients with respect to log R, log S, c.
pub fn reconstruction_loss<T: Scalar>(
    stack: &LogStack<T>,
    d: &Decomposition<T>,
) -> Result<(f64, ReconGradient<T>)> {
    check_decomposition_shape(stack, d)?;
    let m = stack.frame_count();
    let (h, w) = (stack.h(), stack.w());
    let masks = stack.masks();

    let mut p = Vec::with_capacity(m);
    let mut q = Vec::with_capacity(m);
    let mut x = Vec::with_capacity(m);
    for i in 0..m {
        p.push(Image::from_fn(h, w, 3, |yy, xx, _| {
            if masks[i].valid(yy, xx) {
                stack.lum_weights[i].at(yy, xx, 0)
            } else {
                T::zero()
            }
        }));
        q.push(masks[i].to_weight_image::<T>(3));
        let c = d.illum[i];
        x.push(Image::from_fn(h, w, 3, |yy, xx, cc| {
            T::of_f64(
                stack.log_frames[i].at(yy, xx, cc).as_f64()
                    - d.log_s[i].at(yy, xx, 0).as_f64()
                    - c[cc],
            )
        }));
    }

    let inputs = PairLossInputs::new(&p, &q, &x, &d.log_r)?;
    let loss = apwls_closed(&inputs);
    let grads = apwls_closed_grad(&inputs);

    // X^i = log I^i - log S^i - c^i, so log S picks up -sum over channels
    // of dX and c picks up -sum over pixels of dX per channel.
    let mut g_log_s = Vec::with_capacity(m);
    let mut g_illum = Vec::with_capacity(m);
    for i in 0..m {
        let gx = &grads.x[i];
        let mut gs = Image::zeros(h, w, 1);
        let mut gc = [0.0f64; 3];
        for yy in 0..h {
            for xx in 0..w {
                let mut s = 0.0f64;
                for cc in 0..3 {
                    let g = gx.at(yy, xx, cc).as_f64();
                    s += g;
                    gc[cc] += g;
                }
                gs.set(yy, xx, 0, T::of_f64(-s));
            }
        }
        g_log_s.push(gs);
        g_illum.push([-gc[0], -gc[1], -gc[2]]);
    }

    Ok((
        loss,
        ReconGradient {
            log_r: grads.y,
            log_s: g_log_s,
            illum: g_illum,
        },
    ))
}

/// Reflectance consistency loss: all pairs of per-frame log reflectances
/// on jointly valid pixels. Returns the loss and its gradient w.r.t. log R.
pub fn consistency_loss<T: Scalar>(
    d: &Decomposition<T>,
    masks: &[Mask],
) -> Result<(f64, Vec<Image<T>>)> {
    let m = d.log_r.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "consistency loss needs at least 2 frames, got {m}"
        )));
    }
    if masks.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{} masks for {m} frames",
            masks.len()
        )));
    }
    let weights: Vec<Image<T>> = masks.iter().map(|mk| mk.to_weight_image::<T>(3)).collect();
    let inputs = PairLossInputs::new(&weights, &weights, &d.log_r, &d.log_r)?;
    let loss = apwls_closed(&inputs);
    let grads = apwls_closed_grad(&inputs);
    // log R appears as both X^i and Y^i.
    let (h, w, _) = d.log_r[0].dims();
    let mut g = Vec::with_capacity(m);
    for i in 0..m {
        let gx = grads.x[i].data();
        let gy = grads.y[i].data();
        let data: Vec<T> = gx
            .iter()
            .zip(gy.iter())
            .map(|(&a, &b)| T::of_f64(a.as_f64() + b.as_f64()))
            .collect();
        g.push(Image::from_vec(h, w, 3, data));
    }
    Ok((loss, g))
}
