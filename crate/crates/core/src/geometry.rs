//! Poincaré-ball geometry of curvature `c`: Möbius addition, geodesic distance,
//! Klein-model transforms and the Lorentz-weighted Einstein midpoint.
//!
//! The typed API ([`BallPoint`], [`KleinPoint`] and the free functions below)
//! validates its inputs. The [`kernel`] submodule holds the slice-level
//! routines used in hot loops, together with their vector-Jacobian products.
//!
//! Everything here is a pure function of its arguments. The only shared state
//! is a relaxed atomic counter of `atanh` clamping events.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::{norm_sq, Scalar};

static ATANH_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a distance evaluation clamped its `atanh` argument.
pub fn atanh_clamp_count() -> u64 {
    ATANH_CLAMPS.load(Ordering::Relaxed)
}

/// A point strictly inside the Poincaré ball `{x : c‖x‖² < 1}`.
///
/// The curvature is not stored; it is supplied by the caller at construction
/// and on every operation.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint<T> {
    coords: Vec<T>,
}

/// Coordinates of a point in the Klein model, `c‖k‖² < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct KleinPoint<T> {
    coords: Vec<T>,
}

fn check_finite<T: Scalar>(coords: &[T]) -> Result<()> {
    if coords.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("non-finite coordinate".into()))
    }
}

fn check_curvature<T: Scalar>(c: T) -> Result<()> {
    if c.is_finite() && c > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("curvature must be positive, got {c}")))
    }
}

fn check_inside<T: Scalar>(coords: &[T], c: T) -> Result<()> {
    check_finite(coords)?;
    check_curvature(c)?;
    if c * norm_sq(coords) < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidInput("point lies outside the ball".into()))
    }
}

impl<T: Scalar> BallPoint<T> {
    pub fn new(coords: Vec<T>, c: T) -> Result<Self> {
        check_inside(&coords, c)?;
        Ok(Self { coords })
    }

    pub fn origin(dim: usize) -> Self {
        Self {
            coords: vec![T::zero(); dim],
        }
    }

    #[cfg(test)]
    pub(crate) fn from_raw(coords: Vec<T>) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.coords
    }

    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|&x| -x).collect(),
        }
    }
}

impl<T: Scalar> KleinPoint<T> {
    pub fn new(coords: Vec<T>, c: T) -> Result<Self> {
        check_inside(&coords, c)?;
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn into_inner(self) -> Vec<T> {
        self.coords
    }
}

fn same_dim<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )))
    }
}

/// `x ⊕_c y`, projected back inside the ball.
pub fn mobius_add<T: Scalar>(x: &BallPoint<T>, y: &BallPoint<T>, c: T) -> Result<BallPoint<T>> {
    check_finite(&x.coords)?;
    check_finite(&y.coords)?;
    check_curvature(c)?;
    same_dim(&x.coords, &y.coords)?;
    let mut out = vec![T::zero(); x.dim()];
    kernel::mobius_add(&x.coords, &y.coords, c, &mut out);
    Ok(project_to_ball(out, c))
}

/// Geodesic distance `(2/√c)·atanh(√c‖−x ⊕_c y‖)`.
pub fn poincare_distance<T: Scalar>(x: &BallPoint<T>, y: &BallPoint<T>, c: T) -> T {
    kernel::distance(&x.coords, &y.coords, c)
}

/// Distance together with its gradients with respect to `x` and `y`.
pub fn poincare_distance_grad<T: Scalar>(
    x: &BallPoint<T>,
    y: &BallPoint<T>,
    c: T,
) -> (T, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); x.dim()];
    let mut gy = vec![T::zero(); y.dim()];
    let d = kernel::distance_vjp(&x.coords, &y.coords, c, T::one(), &mut gx, &mut gy);
    (d, gx, gy)
}

pub fn ball_to_klein<T: Scalar>(x: &BallPoint<T>, c: T) -> Result<KleinPoint<T>> {
    check_finite(&x.coords)?;
    check_curvature(c)?;
    let mut out = vec![T::zero(); x.dim()];
    kernel::to_klein(&x.coords, c, &mut out);
    Ok(KleinPoint { coords: out })
}

pub fn klein_to_ball<T: Scalar>(k: &KleinPoint<T>, c: T) -> Result<BallPoint<T>> {
    check_finite(&k.coords)?;
    check_curvature(c)?;
    let mut out = vec![T::zero(); k.coords.len()];
    kernel::from_klein(&k.coords, c, &mut out);
    Ok(BallPoint { coords: out })
}

/// `γ(k) = 1/√(1 − c‖k‖²)`, with the denominator clamped at `BALL_EPS`.
pub fn lorentz_factor<T: Scalar>(k: &KleinPoint<T>, c: T) -> T {
    kernel::lorentz(&k.coords, c)
}

/// Einstein midpoint of `points` with nonnegative `weights`.
///
/// Each point is mapped to the Klein model, averaged with weights
/// `w_i·γ_i / Σ_j w_j·γ_j`, and mapped back to the ball.
pub fn einstein_midpoint<T: Scalar>(
    points: &[BallPoint<T>],
    weights: &[T],
    c: T,
) -> Result<BallPoint<T>> {
    check_curvature(c)?;
    if points.is_empty() {
        return Err(Error::InvalidInput("empty point list".into()));
    }
    if points.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    let dim = points[0].dim();
    for p in points {
        check_finite(&p.coords)?;
        same_dim(&p.coords, &points[0].coords)?;
    }
    if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    if weights.iter().all(|w| *w == T::zero()) {
        return Err(Error::InvalidInput("all weights are zero".into()));
    }
    let refs: Vec<&[T]> = points.iter().map(|p| p.coords()).collect();
    let mut out = vec![T::zero(); dim];
    kernel::einstein_midpoint(&refs, weights, c, &mut out);
    Ok(BallPoint { coords: out })
}

/// Rescales `x` onto the radius `(1 − BALL_EPS)/√c` sphere when it lies beyond it.
pub fn project_to_ball<T: Scalar>(mut x: Vec<T>, c: T) -> BallPoint<T> {
    kernel::project(&mut x, c);
    BallPoint { coords: x }
}

/// Converts a Euclidean gradient at `x` into the Riemannian one:
/// `((1 − c‖x‖²)² / 4) · grad`.
pub fn riemannian_rescale<T: Scalar>(x: &BallPoint<T>, euclidean_grad: &[T], c: T) -> Vec<T> {
    let s = kernel::riemannian_scale(&x.coords, c);
    euclidean_grad.iter().map(|&g| g * s).collect()
}

/// Slice-level routines. Inputs are assumed finite and inside the ball.
///
/// Every `*_vjp` function *accumulates* into its gradient outputs.
pub mod kernel {
    use super::{Ordering, ATANH_CLAMPS};
    use crate::scalar::{dot, norm_sq, Scalar, BALL_EPS};

    /// Unprojected Möbius addition written into `out`.
    pub fn mobius_add<T: Scalar>(x: &[T], y: &[T], c: T, out: &mut [T]) {
        let two = T::lit(2.0);
        let xy = dot(x, y);
        let xx = norm_sq(x);
        let yy = norm_sq(y);
        let a = T::one() + two * c * xy + c * yy;
        let b = T::one() - c * xx;
        let den = T::one() + two * c * xy + c * c * xx * yy;
        for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
            *o = (a * xi + b * yi) / den;
        }
    }

    /// Vector-Jacobian product of [`mobius_add`] for upstream gradient `g`.
    pub fn mobius_add_vjp<T: Scalar>(
        x: &[T],
        y: &[T],
        c: T,
        g: &[T],
        gx: &mut [T],
        gy: &mut [T],
    ) {
        let two = T::lit(2.0);
        let xy = dot(x, y);
        let xx = norm_sq(x);
        let yy = norm_sq(y);
        let a = T::one() + two * c * xy + c * yy;
        let b = T::one() - c * xx;
        let den = T::one() + two * c * xy + c * c * xx * yy;
        let gdx = dot(g, x);
        let gdy = dot(g, y);
        // g·N where N = a·x + b·y is the numerator.
        let gn = a * gdx + b * gdy;
        let s1 = T::one() / den;
        let s2 = gn / (den * den);
        let two_c = two * c;
        for i in 0..x.len() {
            gx[i] += s1 * (gdx * two_c * y[i] + a * g[i] - gdy * two_c * x[i])
                - s2 * (two_c * y[i] + two_c * c * yy * x[i]);
            gy[i] += s1 * (gdx * two_c * (x[i] + y[i]) + b * g[i])
                - s2 * (two_c * x[i] + two_c * c * xx * y[i]);
        }
    }

    fn neg_mobius<T: Scalar>(x: &[T], y: &[T], c: T) -> (Vec<T>, Vec<T>) {
        let neg_x: Vec<T> = x.iter().map(|&v| -v).collect();
        let mut m = vec![T::zero(); x.len()];
        mobius_add(&neg_x, y, c, &mut m);
        (neg_x, m)
    }

    fn clamped_atanh_arg<T: Scalar>(arg: T) -> (T, bool) {
        let max = T::one() - T::atanh_eps();
        if arg > max {
            ATANH_CLAMPS.fetch_add(1, Ordering::Relaxed);
            (max, true)
        } else {
            (arg, false)
        }
    }

    pub fn distance<T: Scalar>(x: &[T], y: &[T], c: T) -> T {
        if x == y {
            return T::zero();
        }
        let (_, m) = neg_mobius(x, y, c);
        let sc = c.sqrt();
        let (arg, _) = clamped_atanh_arg(sc * norm_sq(&m).sqrt());
        T::lit(2.0) / sc * arg.atanh()
    }

    /// Returns the distance and accumulates `g · ∂d/∂x`, `g · ∂d/∂y`.
    ///
    /// At `x = y` and at the clamp the zero subgradient is used.
    pub fn distance_vjp<T: Scalar>(
        x: &[T],
        y: &[T],
        c: T,
        g: T,
        gx: &mut [T],
        gy: &mut [T],
    ) -> T {
        if x == y {
            return T::zero();
        }
        let (neg_x, m) = neg_mobius(x, y, c);
        let sc = c.sqrt();
        let n = norm_sq(&m).sqrt();
        let (arg, clamped) = clamped_atanh_arg(sc * n);
        let d = T::lit(2.0) / sc * arg.atanh();
        if clamped || n == T::zero() || g == T::zero() {
            return d;
        }
        let k = g * T::lit(2.0) / (n * (T::one() - c * n * n));
        let gm: Vec<T> = m.iter().map(|&mi| k * mi).collect();
        let mut g_negx = vec![T::zero(); x.len()];
        mobius_add_vjp(&neg_x, y, c, &gm, &mut g_negx, gy);
        for (o, v) in gx.iter_mut().zip(g_negx) {
            *o -= v;
        }
        d
    }

    pub fn to_klein<T: Scalar>(x: &[T], c: T, out: &mut [T]) {
        let q = T::one() + c * norm_sq(x);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = T::lit(2.0) * xi / q;
        }
    }

    pub fn to_klein_vjp<T: Scalar>(x: &[T], c: T, g: &[T], gx: &mut [T]) {
        let q = T::one() + c * norm_sq(x);
        let gdx = dot(g, x);
        let two = T::lit(2.0);
        for i in 0..x.len() {
            gx[i] += two * g[i] / q - two * two * c * gdx / (q * q) * x[i];
        }
    }

    fn klein_root<T: Scalar>(k: &[T], c: T) -> T {
        (T::one() - c * norm_sq(k)).max(T::zero()).sqrt()
    }

    pub fn from_klein<T: Scalar>(k: &[T], c: T, out: &mut [T]) {
        let p = T::one() + klein_root(k, c);
        for (o, &ki) in out.iter_mut().zip(k) {
            *o = ki / p;
        }
    }

    pub fn from_klein_vjp<T: Scalar>(k: &[T], c: T, g: &[T], gk: &mut [T]) {
        let s = klein_root(k, c).max(T::min_positive_value());
        let p = T::one() + s;
        let coef = c * dot(g, k) / (s * p * p);
        for i in 0..k.len() {
            gk[i] += g[i] / p + coef * k[i];
        }
    }

    fn lorentz_base<T: Scalar>(k: &[T], c: T) -> (T, bool) {
        let h = T::one() - c * norm_sq(k);
        let eps = T::lit(BALL_EPS);
        if h < eps {
            (eps, true)
        } else {
            (h, false)
        }
    }

    pub fn lorentz<T: Scalar>(k: &[T], c: T) -> T {
        T::one() / lorentz_base(k, c).0.sqrt()
    }

    /// Accumulates `g · ∂γ/∂k`.
    pub fn lorentz_vjp<T: Scalar>(k: &[T], c: T, g: T, gk: &mut [T]) {
        let (h, clamped) = lorentz_base(k, c);
        if clamped {
            return;
        }
        let gamma = T::one() / h.sqrt();
        let coef = g * c * gamma * gamma * gamma;
        for (o, &ki) in gk.iter_mut().zip(k) {
            *o += coef * ki;
        }
    }

    struct MidpointForward<T> {
        klein: Vec<Vec<T>>,
        gammas: Vec<T>,
        total: T,
        mean: Vec<T>,
    }

    fn midpoint_forward<T: Scalar>(points: &[&[T]], weights: &[T], c: T) -> MidpointForward<T> {
        let dim = points[0].len();
        let klein: Vec<Vec<T>> = points
            .iter()
            .map(|p| {
                let mut k = vec![T::zero(); dim];
                to_klein(p, c, &mut k);
                k
            })
            .collect();
        let gammas: Vec<T> = klein.iter().map(|k| lorentz(k, c)).collect();
        let mut total = T::zero();
        let mut mean = vec![T::zero(); dim];
        for ((k, &gamma), &w) in klein.iter().zip(&gammas).zip(weights) {
            let a = w * gamma;
            total += a;
            for (m, &ki) in mean.iter_mut().zip(k) {
                *m += a * ki;
            }
        }
        for m in mean.iter_mut() {
            *m /= total;
        }
        MidpointForward {
            klein,
            gammas,
            total,
            mean,
        }
    }

    /// Einstein midpoint; requires a nonempty list and a positive weight sum.
    pub fn einstein_midpoint<T: Scalar>(points: &[&[T]], weights: &[T], c: T, out: &mut [T]) {
        let fw = midpoint_forward(points, weights, c);
        from_klein(&fw.mean, c, out);
    }

    /// Accumulates gradients of the midpoint with respect to every point and weight.
    pub fn einstein_midpoint_vjp<T: Scalar>(
        points: &[&[T]],
        weights: &[T],
        c: T,
        g: &[T],
        g_points: &mut [Vec<T>],
        g_weights: &mut [T],
    ) {
        let fw = midpoint_forward(points, weights, c);
        let dim = g.len();
        let mut g_mean = vec![T::zero(); dim];
        from_klein_vjp(&fw.mean, c, g, &mut g_mean);
        let mut g_k = vec![T::zero(); dim];
        for i in 0..points.len() {
            let k = &fw.klein[i];
            let a = weights[i] * fw.gammas[i];
            // ∂mean/∂a_i = (k_i − mean)/S
            let g_a = g_mean
                .iter()
                .zip(k)
                .zip(&fw.mean)
                .fold(T::zero(), |acc, ((&gm, &ki), &m)| acc + gm * (ki - m))
                / fw.total;
            g_weights[i] += g_a * fw.gammas[i];
            for (o, &gm) in g_k.iter_mut().zip(&g_mean) {
                *o = a / fw.total * gm;
            }
            lorentz_vjp(k, c, g_a * weights[i], &mut g_k);
            to_klein_vjp(points[i], c, &g_k, &mut g_points[i]);
        }
    }

    /// Largest admissible norm, `(1 − BALL_EPS)/√c`.
    pub fn max_norm<T: Scalar>(c: T) -> T {
        (T::one() - T::lit(BALL_EPS)) / c.sqrt()
    }

    /// In-place projection; the result satisfies `c‖x‖² ≤ (1 − BALL_EPS)²`.
    pub fn project<T: Scalar>(x: &mut [T], c: T) {
        let bound = T::one() - T::lit(BALL_EPS);
        let sq = c * norm_sq(x);
        if sq > bound * bound {
            let target = max_norm(c) * (T::one() - T::lit(4.0) * T::epsilon());
            let scale = target / sq.sqrt() * c.sqrt();
            for v in x.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// `(1 − c‖x‖²)² / 4`, the inverse squared conformal factor.
    pub fn riemannian_scale<T: Scalar>(x: &[T], c: T) -> T {
        let h = T::one() - c * norm_sq(x);
        h * h / T::lit(4.0)
    }
}
