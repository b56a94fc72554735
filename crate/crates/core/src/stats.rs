//! Small numeric helpers shared by the engine and the analytics layer.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Running arithmetic mean. Exact for constant sequences.
pub fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut m = 0.0;
    let mut n = 0u64;
    for x in xs {
        n += 1;
        m += (x - m) / n as f64;
    }
    (n > 0).then_some(m)
}

/// Mean and standard error of the mean (sample sd with n-1, zero when n < 2).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = sum(xs.iter().copied()) / n as f64;
    if n < 2 {
        return (m, 0.0);
    }
    let ss = sum(xs.iter().map(|x| (x - m) * (x - m)));
    (m, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

/// Linear-interpolation quantile (type 7) of an unsorted slice.
pub fn quantile(xs: &[f64], p: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}
