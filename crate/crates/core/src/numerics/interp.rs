//! Linear interpolation on sorted abscissae.

/// Piecewise-linear interpolation. Values outside the table are clamped.
pub fn linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(!xs.is_empty());
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - w) + ys[i + 1] * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_and_clamps() {
        let xs = [0.0, 1.0, 3.0];
        let ys = [0.0, 2.0, 6.0];
        assert_eq!(linear(&xs, &ys, 2.0), 4.0);
        assert_eq!(linear(&xs, &ys, -1.0), 0.0);
        assert_eq!(linear(&xs, &ys, 9.0), 6.0);
    }
}
