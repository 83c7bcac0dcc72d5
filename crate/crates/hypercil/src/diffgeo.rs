//! Poincaré-ball operations on graph [`Value`]s, mirroring the raw
//! implementations in [`crate::ball`] term for term so the two routes can be
//! cross-checked against each other.

use crate::ball::BallConfig;
use crate::diff::Value;
use crate::real::Real;

/// `√(Σ vᵢ²)` as a graph node. Exactly-zero vectors short-circuit to a
/// constant zero: the square root is not differentiable there.
pub fn norm<T: Real>(v: &[Value<T>]) -> Value<T> {
    let n2 = Value::dot(v, v);
    if n2.value() == T::zero() {
        return Value::constant(T::zero());
    }
    n2.sqrt()
}

/// Differentiable radial clip into the ball. In-ball inputs pass through
/// unchanged (same nodes); outside, the vector is rescaled by
/// `max_norm / ‖x‖` with gradient flowing through the norm.
pub fn project_to_ball<T: Real>(x: &[Value<T>], ball: &BallConfig<T>) -> Vec<Value<T>> {
    let n2: T = x.iter().map(|v| v.value() * v.value()).sum();
    let cap = T::one() - ball.boundary_eps();
    if ball.curvature() * n2 <= cap * cap {
        return x.to_vec();
    }
    let n = norm(x);
    let scale = Value::constant(ball.projection_target()).div(&n);
    x.iter().map(|xi| xi.mul(&scale)).collect()
}

/// Möbius addition `x ⊕_c y`, re-projected in-ball.
pub fn mobius_add<T: Real>(
    x: &[Value<T>],
    y: &[Value<T>],
    ball: &BallConfig<T>,
) -> Vec<Value<T>> {
    debug_assert_eq!(x.len(), y.len());
    let c = ball.curvature();
    let two_c = T::of(2.0) * c;
    let x2 = Value::dot(x, x);
    let y2 = Value::dot(y, y);
    let xy = Value::dot(x, y);
    let coeff_x = xy.mul_const(two_c).add(&y2.mul_const(c)).add_const(T::one());
    let coeff_y = x2.mul_const(-c).add_const(T::one());
    let denom = xy
        .mul_const(two_c)
        .add(&x2.mul(&y2).mul_const(c * c))
        .add_const(T::one());
    let sum: Vec<Value<T>> = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| coeff_x.mul(xi).add(&coeff_y.mul(yi)).div(&denom))
        .collect();
    project_to_ball(&sum, ball)
}

/// Geodesic distance `(2/√c)·arctanh(√c·‖(−x) ⊕_c y‖)`. Coincident points
/// short-circuit to a constant zero.
pub fn distance<T: Real>(x: &[Value<T>], y: &[Value<T>], ball: &BallConfig<T>) -> Value<T> {
    let neg_x: Vec<Value<T>> = x.iter().map(|v| v.neg()).collect();
    let diff = mobius_add(&neg_x, y, ball);
    let n = norm(&diff);
    n.mul_const(ball.sqrt_c())
        .atanh()
        .mul_const(T::of(2.0) / ball.sqrt_c())
}

/// Exponential map at the origin. The zero vector is returned as-is, which
/// also gives the mathematically correct identity Jacobian there.
pub fn exp_map_origin<T: Real>(v: &[Value<T>], ball: &BallConfig<T>) -> Vec<Value<T>> {
    let n = norm(v);
    if n.value() == T::zero() {
        return v.to_vec();
    }
    let arg = n.mul_const(ball.sqrt_c());
    let scale = arg.tanh().div(&arg);
    let mapped: Vec<Value<T>> = v.iter().map(|vi| vi.mul(&scale)).collect();
    project_to_ball(&mapped, ball)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use crate::optim::{ParameterStore, SgdConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lift(v: &[f64]) -> Vec<Value<f64>> {
        v.iter().map(|&x| Value::leaf(x)).collect()
    }

    fn vals(v: &[Value<f64>]) -> Vec<f64> {
        v.iter().map(|x| x.value()).collect()
    }

    #[test]
    fn graph_matches_raw_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for c in [0.1, 0.5, 1.0] {
            let ball = BallConfig::with_curvature(c).unwrap();
            for _ in 0..200 {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-0.4..0.4)).collect();
                let y: Vec<f64> = (0..4).map(|_| rng.random_range(-0.4..0.4)).collect();
                let raw_sum = ball.mobius_add(&x, &y).unwrap();
                let graph_sum = vals(&mobius_add(&lift(&x), &lift(&y), &ball));
                for (a, b) in raw_sum.iter().zip(&graph_sum) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
                let raw_d = ball.distance(&x, &y).unwrap();
                let graph_d = distance(&lift(&x), &lift(&y), &ball).value();
                assert!((raw_d - graph_d).abs() < 1e-12);

                let raw_e = ball.exp_map_origin(&x).unwrap();
                let graph_e = vals(&exp_map_origin(&lift(&x), &ball));
                for (a, b) in raw_e.iter().zip(&graph_e) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_branches() {
        let ball = BallConfig::with_curvature(1.0).unwrap();
        let z = lift(&[0.0, 0.0]);
        assert_eq!(vals(&exp_map_origin(&z, &ball)), vec![0.0, 0.0]);
        let x = lift(&[0.3, 0.1]);
        assert_eq!(distance(&x, &x, &ball).value(), 0.0);
    }

    #[test]
    fn distance_gradient_matches_finite_differences() {
        // d(exp_0(u), exp_0(w)) with respect to the tangent vectors
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let ball = BallConfig::with_curvature(1.0).unwrap();
        for _ in 0..20 {
            let mut ps = ParameterStore::new(SgdConfig::new(0.1, 0.0, 0.0, vec![]).unwrap());
            ps.insert("u", (0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            ps.insert("w", (0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let report = finite_difference_check(
                |ps| {
                    let u = exp_map_origin(ps.get("u"), &ball);
                    let w = exp_map_origin(ps.get("w"), &ball);
                    Ok(distance(&u, &w, &ball))
                },
                &ps,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn projection_gradient_is_finite_when_clipped() {
        let ball = BallConfig::with_curvature(1.0).unwrap();
        let mut ps = ParameterStore::new(SgdConfig::new(0.1, 0.0, 0.0, vec![]).unwrap());
        ps.insert("v", vec![8.0f64, -3.0]); // exp map lands at the clip boundary
        let report = finite_difference_check(
            |ps| {
                let mapped = exp_map_origin(ps.get("v"), &ball);
                Ok(Value::dot(&mapped, &mapped))
            },
            &ps,
            1e-6,
            1e-3,
        )
        .unwrap();
        // the clip makes the radial direction flat; gradients must stay finite
        assert!(report.max_rel_err.is_finite(), "{report}");
    }
}
