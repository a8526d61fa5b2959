use crate::error::{Error, Result};

/// Entropy (nats) of a distribution over `c` outcomes that puts mass `t` on
/// one outcome and spreads `1 - t` evenly over the rest.
pub fn entropy(c: usize, t: f64) -> Result<f64> {
    check_t(c, t)?;
    let rest = 1.0 - t;
    let plogp = |p: f64, q: f64| if p > 0.0 { p * q.ln() } else { 0.0 };
    Ok(-plogp(t, t) - plogp(rest, rest / (c - 1) as f64))
}

fn check_t(c: usize, t: f64) -> Result<()> {
    if c < 2 {
        return Err(Error::invalid("entropy", format!("need at least 2 outcomes, got {c}")));
    }
    let lo = 1.0 / c as f64;
    // Grids built by summing steps can land a rounding error below 1/C.
    if !(t >= lo - 1e-12 && t <= 1.0) {
        return Err(Error::invalid("entropy", format!("t = {t} outside [1/{c}, 1]")));
    }
    Ok(())
}

/// `(t, H(t))` over a sorted grid inside `[1/c, 1]`.
pub fn entropy_curve(c: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("entropy grid", "must be strictly increasing"));
    }
    grid.iter().map(|&t| Ok((t, entropy(c, t)?))).collect()
}

/// `points` evenly spaced values from `1/c` to `1` inclusive.
pub fn uniform_grid(c: usize, points: usize) -> Vec<f64> {
    let lo = 1.0 / c as f64;
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| {
                if i + 1 == points {
                    1.0
                } else {
                    lo + (1.0 - lo) * i as f64 / (points - 1) as f64
                }
            })
            .collect(),
    }
}

/// Largest finite-difference slope along the curve; negative means strictly
/// decreasing.
pub fn max_slope(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        for c in 2..=20 {
            assert!((entropy(c, 1.0 / c as f64).unwrap() - (c as f64).ln()).abs() < 1e-12);
            assert_eq!(entropy(c, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn matches_direct_sum() {
        let (c, t) = (5, 0.4);
        let mut probs = vec![0.15; 4];
        probs.push(t);
        let h: f64 = probs.iter().map(|p: &f64| -p * p.ln()).sum();
        assert!((entropy(c, t).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn decreasing_on_every_grid() {
        for c in 2..=20 {
            let curve = entropy_curve(c, &uniform_grid(c, 100)).unwrap();
            assert_eq!(curve.len(), 100);
            assert!(max_slope(&curve) < 0.0, "C = {c}");
        }
    }

    #[test]
    fn slope_vanishes_only_at_uniform() {
        // dH/dt = ln((1 - t) / (t (C - 1))): zero at t = 1/C, negative above.
        let c = 10;
        let deriv = |t: f64| ((1.0 - t) / (t * (c - 1) as f64)).ln();
        for t in [0.2, 0.5, 0.9, 0.99] {
            let h = 1e-6;
            let fd = (entropy(c, t + h).unwrap() - entropy(c, t - h).unwrap()) / (2.0 * h);
            assert!((fd - deriv(t)).abs() < 1e-6);
            assert!(fd < 0.0);
        }
        assert!(deriv(0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(entropy(4, 0.2).is_err());
        assert!(entropy(4, 1.01).is_err());
        assert!(entropy(1, 1.0).is_err());
        assert!(entropy_curve(4, &[0.5, 0.3]).is_err());
    }
}
