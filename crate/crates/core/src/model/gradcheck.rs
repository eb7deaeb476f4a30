//! Central-difference gradient oracle.

use crate::error::Result;
use crate::exec::Exec;

use super::{Gradients, MicroModelParameters};

/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every coordinate of a plain vector.
pub fn finite_diff<F>(f: F, theta: &[f64], h: f64, exec: Exec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    assert!(h > 0.0, "step must be positive");
    exec.try_map(theta.len(), |i| {
        let mut probe = theta.to_vec();
        probe[i] = theta[i] + h;
        let up = f(&probe)?;
        probe[i] = theta[i] - h;
        let down = f(&probe)?;
        Ok((up - down) / (2.0 * h))
    })
}

/// [`finite_diff`] over model parameters.
pub fn finite_diff_grad<F>(loss_fn: F, params: &MicroModelParameters, h: f64, exec: Exec) -> Result<Gradients>
where
    F: Fn(&MicroModelParameters) -> Result<f64> + Sync + Send,
{
    let config = *params.config();
    let g = finite_diff(
        |theta| loss_fn(&MicroModelParameters::from_vec(config, theta.to_vec())?),
        params.as_slice(),
        h,
        exec,
    )?;
    Ok(Gradients(g))
}

/// Denominator floor of [`relative_error`]. Central differences at
/// `h = 1e-5` on an O(1) loss carry ~1e-11 absolute roundoff, so ratios of
/// components much below this scale measure that noise, not the gradient.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(RELATIVE_ERROR_FLOOR, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_theta() {
        let theta = [0.3, -1.2, 2.5, 0.0];
        let g = finite_diff(
            |t| Ok(0.5 * t.iter().map(|v| v * v).sum::<f64>()),
            &theta,
            1e-5,
            Exec::Sequential,
        )
        .unwrap();
        for (gi, ti) in g.iter().zip(&theta) {
            assert!((gi - ti).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_gradient_is_exact_up_to_rounding() {
        let c = [1.5, -2.0, 0.25];
        let g = finite_diff(
            |t| Ok(t.iter().zip(&c).map(|(a, b)| a * b).sum()),
            &[0.1, 0.2, 0.3],
            1e-5,
            Exec::Parallel,
        )
        .unwrap();
        for (gi, ci) in g.iter().zip(&c) {
            assert!((gi - ci).abs() < 1e-10);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0001) - 0.0001 / 2.0001).abs() < 1e-15);
        assert!((relative_error(2e-8, 1e-8) - 1e-2).abs() < 1e-15);
    }
}
