//! Small statistics helpers for reports and acceptance checks.

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1); 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Midranks: ties share the average of the ranks they span.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with midrank tie handling. NaN when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return f64::NAN;
    }
    num / (dx * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(std_dev(&[2.0, 2.0, 2.0]), 0.0);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(std_dev(&[5.0]), 0.0);
    }

    #[test]
    fn spearman_on_monotone_data_is_one() {
        let xs = [0.1, 0.2, 0.3, 0.4];
        let ys = [1.0, 4.0, 9.0, 16.0];
        assert!((spearman(&xs, &ys) - 1.0).abs() < 1e-12);
        let flipped: Vec<f64> = ys.iter().map(|v| -v).collect();
        assert!((spearman(&xs, &flipped) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_with_midranks() {
        // Hand-computed: xs ranks [1,2,3,4]; ys [0,0,1,1] -> midranks [1.5,1.5,3.5,3.5].
        // Pearson of ranks: cov = (−1.5)(−1)+(−0.5)(−1)+(0.5)(1)+(1.5)(1) = 4
        // sd_x^2 = 5, sd_y^2 = 4 -> rho = 4/sqrt(20) = 0.894427...
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [0.0, 0.0, 1.0, 1.0];
        assert!((spearman(&xs, &ys) - 0.8944271909999159).abs() < 1e-12);
    }

    #[test]
    fn spearman_constant_side_is_nan() {
        assert!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).is_nan());
    }

    #[test]
    fn spearman_is_scale_invariant_in_rank() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let noisy_up = [0.0, 0.1, 0.05, 0.3, 0.9];
        let r = spearman(&xs, &noisy_up);
        // One inversion among five points.
        assert!(r > 0.6 && r < 1.0, "rho {r}");
    }
}
