//! Shared oracles for the integration suites. These deliberately avoid the
//! library's own code paths for the quantities they check.

/// Euclidean projection onto the probability simplex by exhaustive
/// active-set enumeration: for every nonempty support, solve the
/// equality-constrained projection in closed form, keep feasible candidates,
/// and return the closest. Exact up to roundoff for small dimensions.
pub fn project_simplex_oracle(v: &[f64]) -> Vec<f64> {
    let m = v.len();
    assert!(m >= 1 && m <= 20, "oracle is exponential in dimension");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let sum: f64 = support.iter().map(|&i| v[i]).sum();
        let shift = (sum - 1.0) / support.len() as f64;
        let mut candidate = vec![0.0; m];
        let mut feasible = true;
        for &i in &support {
            let x = v[i] - shift;
            if x < -1e-12 {
                feasible = false;
                break;
            }
            candidate[i] = x.max(0.0);
        }
        if !feasible {
            continue;
        }
        let dist: f64 = candidate
            .iter()
            .zip(v)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, candidate));
        }
    }
    best.expect("the full support is always feasible").1
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
