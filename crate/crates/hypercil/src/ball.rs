//! Poincaré-ball operations: Möbius addition, geodesic distance, exponential
//! and logarithmic maps at the origin, conformal factor, and in-ball
//! projection.
//!
//! The ball of curvature `c > 0` is `{ x : c·‖x‖² < 1 }`. All operations keep
//! their outputs strictly inside the ball by radially clipping at norm
//! `(1 − boundary_eps)/√c`, which protects `arctanh` from its singularity at
//! the boundary.

use crate::error::{Error, Result};
use crate::real::Real;

/// Default radial safety margin away from the ball boundary.
pub const DEFAULT_BOUNDARY_EPS: f64 = 1e-5;

/// Curvature and boundary margin of a Poincaré ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallConfig<T> {
    curvature: T,
    boundary_eps: T,
}

impl<T: Real> BallConfig<T> {
    pub fn new(curvature: T, boundary_eps: T) -> Result<Self> {
        if curvature.is_nan() || curvature <= T::zero() || !curvature.is_finite() {
            return Err(Error::InvalidInput(format!(
                "curvature must be a positive finite real, got {curvature}"
            )));
        }
        if !(boundary_eps > T::zero() && boundary_eps < T::one()) {
            return Err(Error::InvalidInput(format!(
                "boundary_eps must lie in (0, 1), got {boundary_eps}"
            )));
        }
        Ok(Self { curvature, boundary_eps })
    }

    /// Ball with the given curvature and the default boundary margin.
    pub fn with_curvature(curvature: T) -> Result<Self> {
        Self::new(curvature, T::of(DEFAULT_BOUNDARY_EPS))
    }

    pub fn curvature(&self) -> T {
        self.curvature
    }

    pub fn boundary_eps(&self) -> T {
        self.boundary_eps
    }

    pub fn sqrt_c(&self) -> T {
        self.curvature.sqrt()
    }

    /// Largest admitted norm, `(1 − boundary_eps)/√c`.
    pub fn max_norm(&self) -> T {
        (T::one() - self.boundary_eps) / self.sqrt_c()
    }

    /// Radial projection target: the admitted norm shaved by a few dozen
    /// ulps so the rescale arithmetic cannot round a projected point back
    /// outside the admitted region.
    pub fn projection_target(&self) -> T {
        self.max_norm() * (T::one() - T::epsilon() * T::of(64.0))
    }

    /// Whether `c·‖x‖² ≤ (1 − boundary_eps)²`.
    pub fn is_in_ball(&self, x: &[T]) -> bool {
        let cap = T::one() - self.boundary_eps;
        self.curvature * norm_sq(x) <= cap * cap
    }

    /// Möbius addition `x ⊕_c y`:
    ///
    /// `((1 + 2c⟨x,y⟩ + c‖y‖²)·x + (1 − c‖x‖²)·y) / (1 + 2c⟨x,y⟩ + c²‖x‖²‖y‖²)`
    ///
    /// re-projected into the ball.
    pub fn mobius_add(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        check_finite(x)?;
        check_finite(y)?;
        check_same_dim(x, y)?;
        let c = self.curvature;
        let x2 = norm_sq(x);
        let y2 = norm_sq(y);
        let xy = dot(x, y);
        let two = T::of(2.0);
        let coeff_x = T::one() + two * c * xy + c * y2;
        let coeff_y = T::one() - c * x2;
        let denom = T::one() + two * c * xy + c * c * x2 * y2;
        let sum: Vec<T> = x
            .iter()
            .zip(y)
            .map(|(&xi, &yi)| (coeff_x * xi + coeff_y * yi) / denom)
            .collect();
        Ok(self.project_to_ball(&sum))
    }

    /// Conformal factor `λ_x = 2/(1 − c‖x‖²)`; equals 2 at the origin and
    /// grows toward the boundary.
    pub fn conformal_factor(&self, x: &[T]) -> Result<T> {
        check_finite(x)?;
        let denom = T::one() - self.curvature * norm_sq(x);
        if denom <= T::zero() {
            return Err(Error::Domain(format!(
                "point with c·‖x‖² = {} lies outside the ball",
                self.curvature * norm_sq(x)
            )));
        }
        Ok(T::of(2.0) / denom)
    }

    /// Geodesic distance `(2/√c)·arctanh(√c·‖(−x) ⊕_c y‖)`.
    pub fn distance(&self, x: &[T], y: &[T]) -> Result<T> {
        let neg_x: Vec<T> = x.iter().map(|&v| -v).collect();
        let diff = self.mobius_add(&neg_x, y)?;
        let arg = self.sqrt_c() * norm(&diff);
        Ok(T::of(2.0) / self.sqrt_c() * atanh_clamped(arg))
    }

    /// Exponential map at the origin: `tanh(√c‖v‖)·v/(√c‖v‖)`, with the
    /// zero vector mapped to itself exactly.
    pub fn exp_map_origin(&self, v: &[T]) -> Result<Vec<T>> {
        check_finite(v)?;
        let n = norm(v);
        if n == T::zero() {
            return Ok(v.to_vec());
        }
        let arg = self.sqrt_c() * n;
        let scale = arg.tanh() / arg;
        Ok(self.project_to_ball(&v.iter().map(|&vi| vi * scale).collect::<Vec<_>>()))
    }

    /// Logarithmic map at the origin: `arctanh(√c‖x‖)·x/(√c‖x‖)`, inverse of
    /// [`Self::exp_map_origin`].
    pub fn log_map_origin(&self, x: &[T]) -> Result<Vec<T>> {
        check_finite(x)?;
        let n2 = norm_sq(x);
        if self.curvature * n2 >= T::one() {
            return Err(Error::Domain(format!(
                "point with c·‖x‖² = {} lies outside the ball",
                self.curvature * n2
            )));
        }
        let n = n2.sqrt();
        if n == T::zero() {
            return Ok(x.to_vec());
        }
        let arg = self.sqrt_c() * n;
        let scale = atanh_clamped(arg) / arg;
        Ok(x.iter().map(|&xi| xi * scale).collect())
    }

    /// Radially rescale `x` to norm `(1 − boundary_eps)/√c` when it falls
    /// outside the admitted region; in-ball points pass through unchanged.
    pub fn project_to_ball(&self, x: &[T]) -> Vec<T> {
        let n2 = norm_sq(x);
        let cap = T::one() - self.boundary_eps;
        if self.curvature * n2 <= cap * cap {
            return x.to_vec();
        }
        let scale = self.projection_target() / n2.sqrt();
        x.iter().map(|&xi| xi * scale).collect()
    }
}

/// `arctanh` via `0.5·ln((1+z)/(1−z))`, with `|z|` clamped just inside 1 so
/// the boundary never produces an infinity.
pub fn atanh_clamped<T: Real>(z: T) -> T {
    let mut cap = T::one() - T::of(1e-15);
    if cap >= T::one() {
        // 1 − 1e-15 rounds to 1 in f32; fall back to the type's own epsilon.
        cap = T::one() - T::epsilon();
    }
    let z = z.max(-cap).min(cap);
    T::of(0.5) * ((T::one() + z) / (T::one() - z)).ln()
}

pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

pub(crate) fn norm_sq<T: Real>(x: &[T]) -> T {
    dot(x, x)
}

pub(crate) fn norm<T: Real>(x: &[T]) -> T {
    norm_sq(x).sqrt()
}

pub(crate) fn check_finite<T: Real>(x: &[T]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite component".into()));
    }
    Ok(())
}

pub(crate) fn check_same_dim<T>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(c: f64) -> BallConfig<f64> {
        BallConfig::with_curvature(c).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(BallConfig::new(0.0, 1e-5).is_err());
        assert!(BallConfig::new(-1.0, 1e-5).is_err());
        assert!(BallConfig::new(1.0, 0.0).is_err());
        assert!(BallConfig::new(1.0, 1.0).is_err());
        assert!(BallConfig::new(f64::NAN, 1e-5).is_err());
    }

    #[test]
    fn mobius_identity_and_inverse() {
        let b = ball(1.0);
        let y = vec![0.3, -0.2, 0.1];
        let zero = vec![0.0; 3];
        let r = b.mobius_add(&zero, &y).unwrap();
        for (a, e) in r.iter().zip(&y) {
            assert_close(*a, *e, 1e-15);
        }
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let r = b.mobius_add(&y, &neg).unwrap();
        for a in r {
            assert_close(a, 0.0, 1e-12);
        }
    }

    #[test]
    fn mobius_collinear_matches_radial_tanh() {
        // tanh(arctanh 0.5 + arctanh 0.5) = 0.8
        let b = ball(1.0);
        let r = b.mobius_add(&[0.5, 0.0], &[0.5, 0.0]).unwrap();
        assert_close(r[0], 0.8, 1e-15);
        assert_close(r[1], 0.0, 1e-15);
    }

    #[test]
    fn mobius_rejects_bad_inputs() {
        let b = ball(1.0);
        assert!(matches!(
            b.mobius_add(&[f64::NAN, 0.0], &[0.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            b.mobius_add(&[0.1, 0.0], &[0.0, 0.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conformal_factor_values() {
        assert_close(ball(1.0).conformal_factor(&[0.0, 0.0]).unwrap(), 2.0, 1e-15);
        // c=1, ‖x‖² = 0.5 → 2/(1−0.5) = 4
        let x = [0.5f64.sqrt(), 0.0];
        assert_close(ball(1.0).conformal_factor(&x).unwrap(), 4.0, 1e-12);
        assert_close(ball(0.1).conformal_factor(&[0.0]).unwrap(), 2.0, 1e-15);
        assert!(matches!(
            ball(1.0).conformal_factor(&[2.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn distance_examples() {
        let b = ball(1.0);
        let x = vec![0.21, -0.4];
        assert_close(b.distance(&x, &x).unwrap(), 0.0, 1e-15);
        // 2·arctanh(0.6) = ln 4
        let d = b.distance(&[0.0, 0.0], &[0.6, 0.0]).unwrap();
        assert_close(d, 4.0f64.ln(), 1e-12);
        // small-curvature limit: d → 2‖x−y‖
        let b = ball(1e-6);
        let d = b.distance(&[0.1, 0.0], &[0.3, 0.0]).unwrap();
        assert_close(d, 0.4, 1e-3);
    }

    #[test]
    fn distance_shape_error() {
        assert!(matches!(
            ball(1.0).distance(&[0.1], &[0.1, 0.2]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn exp_map_values() {
        let b = ball(1.0);
        assert_eq!(b.exp_map_origin(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let r = b.exp_map_origin(&[1.0, 0.0]).unwrap();
        assert_close(r[0], 1.0f64.tanh(), 1e-15);
        assert_close(r[1], 0.0, 1e-15);
    }

    #[test]
    fn log_map_values() {
        let b = ball(1.0);
        assert_eq!(b.log_map_origin(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let r = b.log_map_origin(&[1.0f64.tanh(), 0.0]).unwrap();
        assert_close(r[0], 1.0, 1e-9);
        assert!(matches!(
            b.log_map_origin(&[1.5, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn exp_log_inverse_pair() {
        let b = ball(1.0);
        let v = vec![1.3, -0.7, 2.1];
        let x = b.exp_map_origin(&v).unwrap();
        let back = b.log_map_origin(&x).unwrap();
        for (a, e) in back.iter().zip(&v) {
            assert_close(*a, *e, 1e-9);
        }
    }

    #[test]
    fn projection_behavior() {
        let b = BallConfig::new(1.0, 1e-5).unwrap();
        let inside = vec![0.3, 0.4];
        assert_eq!(b.project_to_ball(&inside), inside);
        let out = b.project_to_ball(&[2.0, 0.0]);
        assert_close(out[0], 1.0 - 1e-5, 1e-12);
        assert_eq!(b.project_to_ball(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn conformal_factor_at_least_two_in_ball() {
        let b = ball(0.5);
        for r in [0.0, 0.3, 0.9, 1.2] {
            let x = [r, 0.0];
            if b.is_in_ball(&x) {
                assert!(b.conformal_factor(&x).unwrap() >= 2.0);
            }
        }
    }

    #[test]
    fn works_in_f32() {
        let b = BallConfig::<f32>::with_curvature(1.0).unwrap();
        let d = b.distance(&[0.0, 0.0], &[0.6, 0.0]).unwrap();
        assert!((d - 4.0f32.ln()).abs() < 1e-6);
        // atanh clamp must not produce infinities near the boundary
        assert!(atanh_clamped(1.0f32).is_finite());
        assert!(atanh_clamped(1.0f64).is_finite());
    }
}
