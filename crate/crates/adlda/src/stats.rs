//! Replicate summaries.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean and standard error of `a_i − b_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDiff {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl PairedDiff {
    pub fn of(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        PairedDiff {
            mean: mean(&d),
            std_err: std_dev(&d) / (d.len() as f64).sqrt(),
            n: d.len(),
        }
    }

    /// `mean > 2·SE`, the one-sided check used by the demo.
    pub fn exceeds_two_se(&self) -> bool {
        self.mean > 2.0 * self.std_err
    }
}
