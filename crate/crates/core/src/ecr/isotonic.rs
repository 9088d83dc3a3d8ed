/// Weighted least-squares non-increasing fit by pool-adjacent-violators.
///
/// Returns the fitted value for every input position. Panics if the slices
/// differ in length or a weight is not positive.
pub fn isotonic_non_increasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len(), "values and weights differ in length");
    assert!(weights.iter().all(|&w| w > 0.0), "weights must be positive");
    // Each block: (weighted mean, total weight, count).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m1, _, _) = blocks[blocks.len() - 1];
            let (m0, _, _) = blocks[blocks.len() - 2];
            if m0 >= m1 {
                break;
            }
            let (m1, w1, c1) = blocks.pop().expect("len > 1");
            let (m0, w0, c0) = blocks.pop().expect("len > 1");
            let w = w0 + w1;
            blocks.push(((m0 * w0 + m1 * w1) / w, w, c0 + c1));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn pools_the_violating_pair() {
        let fit = isotonic_non_increasing(&[0.40, 0.42, 0.33], &[1.0; 3]);
        assert!(close(&fit, &[0.41, 0.41, 0.33]));
    }

    #[test]
    fn monotone_input_is_unchanged() {
        let v = [0.5, 0.4, 0.4, 0.1];
        assert_eq!(isotonic_non_increasing(&v, &[1.0; 4]), v);
    }

    #[test]
    fn cascading_merge() {
        let fit = isotonic_non_increasing(&[0.1, 0.2, 0.6], &[1.0; 3]);
        assert!(close(&fit, &[0.3, 0.3, 0.3]));
    }

    /// Best non-increasing fit by exhaustive search over level sets: every
    /// optimal fit is constant on blocks of consecutive points and takes the
    /// weighted mean on each block.
    fn brute_force(v: &[f64], w: &[f64]) -> f64 {
        let n = v.len();
        let mut best = f64::INFINITY;
        for mask in 0..(1u32 << (n - 1)) {
            let mut fit = Vec::with_capacity(n);
            let mut start = 0;
            for end in 1..=n {
                if end == n || mask & (1 << (end - 1)) != 0 {
                    let tw: f64 = w[start..end].iter().sum();
                    let m = (start..end).map(|i| v[i] * w[i]).sum::<f64>() / tw;
                    fit.extend(std::iter::repeat_n(m, end - start));
                    start = end;
                }
            }
            if fit.windows(2).all(|p| p[0] >= p[1] - 1e-15) {
                let sse: f64 = (0..n).map(|i| w[i] * (v[i] - fit[i]).powi(2)).sum();
                best = best.min(sse);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((0.0f64..1.0, 0.1f64..3.0), 1..=5)
        ) {
            let v: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let w: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let fit = isotonic_non_increasing(&v, &w);
            prop_assert!(fit.windows(2).all(|p| p[0] >= p[1]));
            let sse: f64 = (0..v.len()).map(|i| w[i] * (v[i] - fit[i]).powi(2)).sum();
            prop_assert!(sse <= brute_force(&v, &w) + 1e-12);
        }
    }
}
