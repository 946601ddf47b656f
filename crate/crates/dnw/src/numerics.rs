//! Deterministic numerical kernels shared by every module: a counter-based
//! PRNG, batch vectors, activations, the softmax cross-entropy loss, and a
//! central-finite-difference gradient oracle.
//!
//! Everything here is 64-bit and uses fixed summation orders so that runs
//! reproduce bitwise across platforms.

use crate::error::{Error, Result};

/// SplitMix64: a 64-bit counter-based generator.
///
/// State advances by the golden-ratio increment and each output is a
/// finalizer of the counter:
///
/// ```text
/// state += 0x9E3779B97F4A7C15
/// z = state
/// z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
/// z = (z ^ (z >> 27)) * 0x94D049BB133111EB
/// output = z ^ (z >> 31)
/// ```
///
/// Identical seeds yield identical streams on every platform, which the
/// equivalence and determinism tests rely on.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi). Errors when `lo >= hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) {
            return Err(Error::InvalidRange { lo, hi });
        }
        Ok(lo + (hi - lo) * self.next_f64())
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11).max(1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform index in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// One scalar per minibatch sample. The inner products used by the edge
/// update rule run over this axis in ascending sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchVec {
    values: Vec<f64>,
}

impl BatchVec {
    pub fn zeros(batch: usize) -> Self {
        BatchVec {
            values: vec![0.0; batch],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        BatchVec { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    /// Inner product over the batch axis, ascending sample order.
    pub fn dot(&self, other: &BatchVec) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        acc
    }

    /// self += scale * other
    pub fn add_scaled(&mut self, scale: f64, other: &BatchVec) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.values {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Node activation with an analytic derivative. The ReLU derivative at 0 is
/// defined as 0 so that subgradients are deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::config(
                "activation",
                format!("unknown activation `{other}` (expected relu|tanh|identity)"),
            )),
        }
    }
}

/// Mean softmax cross-entropy over a batch.
///
/// `logits` holds one [`BatchVec`] per class; `labels` holds one class index
/// per sample. Returns the scalar loss and its gradient with respect to the
/// logits (same shape as `logits`). Gradient columns sum to zero.
pub fn softmax_cross_entropy(logits: &[BatchVec], labels: &[usize]) -> Result<(f64, Vec<BatchVec>)> {
    let classes = logits.len();
    if classes == 0 {
        return Err(Error::contract("softmax: no classes"));
    }
    let batch = logits[0].len();
    if labels.len() != batch {
        return Err(Error::contract(format!(
            "softmax: {} labels for batch of {batch}",
            labels.len()
        )));
    }
    for row in logits {
        if !row.all_finite() {
            return Err(Error::non_finite("softmax logits"));
        }
    }
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::contract(format!(
                "label {label} out of range [0, {classes}) at sample {b}"
            )));
        }
    }

    let mut grad: Vec<BatchVec> = (0..classes).map(|_| BatchVec::zeros(batch)).collect();
    let inv_batch = 1.0 / batch as f64;
    let mut loss = 0.0;
    for b in 0..batch {
        let mut max = f64::NEG_INFINITY;
        for row in logits {
            max = max.max(row.as_slice()[b]);
        }
        let mut denom = 0.0;
        for row in logits {
            denom += (row.as_slice()[b] - max).exp();
        }
        let log_denom = denom.ln();
        let label = labels[b];
        loss += -(logits[label].as_slice()[b] - max - log_denom) * inv_batch;
        for (c, row) in logits.iter().enumerate() {
            let p = (row.as_slice()[b] - max).exp() / denom;
            let target = if c == label { 1.0 } else { 0.0 };
            grad[c].as_mut_slice()[b] = (p - target) * inv_batch;
        }
    }
    Ok((loss, grad))
}

/// Central-difference gradient: (f(x + h e_i) - f(x - h e_i)) / 2h.
///
/// The independent oracle for every analytic gradient in the crate.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(Error::contract("finite difference step must be positive"));
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = f(&point);
        point[i] = orig - h;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::non_finite(format!(
                "finite difference evaluation at coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Scaled gradient-comparison error: |a - b| / max(1, |a|, |b|).
///
/// Relative for large values, absolute near zero, so central-difference
/// noise on tiny gradients does not dominate the comparison.
pub fn grad_error(analytic: f64, reference: f64) -> f64 {
    (analytic - reference).abs() / 1.0_f64.max(analytic.abs()).max(reference.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = Rng::new(3);
        for _ in 0..1000 {
            let v = rng.uniform(0.0, 1.0).unwrap();
            assert!((0.0..1.0).contains(&v));
        }
        let mut rng = Rng::new(11);
        for _ in 0..1000 {
            let v = rng.uniform(-0.5, 0.5).unwrap();
            assert!((-0.5..0.5).contains(&v));
        }
    }

    #[test]
    fn uniform_rejects_bad_range() {
        let mut rng = Rng::new(0);
        assert!(matches!(
            rng.uniform(1.0, 1.0),
            Err(Error::InvalidRange { .. })
        ));
        assert!(matches!(
            rng.uniform(2.0, -2.0),
            Err(Error::InvalidRange { .. })
        ));
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(
                a.uniform(-0.5, 0.5).unwrap().to_bits(),
                b.uniform(-0.5, 0.5).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn uniform_mean_law_of_large_numbers() {
        // 1e5 draws on [0,1): the sample mean must sit in [0.49, 0.51].
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += rng.next_f64();
        }
        let mean = acc / n as f64;
        assert!((0.49..=0.51).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn softmax_uniform_two_class() {
        // Column (0, 0), label 0: per-sample loss is ln 2.
        let logits = vec![BatchVec::from_vec(vec![0.0; 3]), BatchVec::from_vec(vec![0.0; 3])];
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 0, 0]).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() < 1e-15);
        // Gradient columns sum to zero.
        for b in 0..3 {
            let col: f64 = grad.iter().map(|row| row.as_slice()[b]).sum();
            assert!(col.abs() < 1e-16);
        }
    }

    #[test]
    fn softmax_saturated_logit() {
        // Column (10, -10), label 0: loss = ln(1 + e^{-20}) = 2.0611536e-9.
        let logits = vec![
            BatchVec::from_vec(vec![10.0]),
            BatchVec::from_vec(vec![-10.0]),
        ];
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        let expected = (-20.0_f64).exp().ln_1p();
        assert!((loss - expected).abs() < 1e-12, "loss = {loss:e}");
        assert!((loss - 2.061153622438558e-9).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let logits = vec![
            BatchVec::from_vec(vec![f64::NAN]),
            BatchVec::from_vec(vec![0.0]),
        ];
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = Rng::new(99);
        let classes = 4;
        let batch = 5;
        let flat: Vec<f64> = (0..classes * batch)
            .map(|_| rng.uniform(-2.0, 2.0).unwrap())
            .collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.index(classes)).collect();
        let unflatten = |x: &[f64]| -> Vec<BatchVec> {
            (0..classes)
                .map(|c| BatchVec::from_vec(x[c * batch..(c + 1) * batch].to_vec()))
                .collect()
        };
        let (_, grad) = softmax_cross_entropy(&unflatten(&flat), &labels).unwrap();
        let fd = finite_difference_gradient(
            |x| softmax_cross_entropy(&unflatten(x), &labels).unwrap().0,
            &flat,
            1e-5,
        )
        .unwrap();
        for c in 0..classes {
            for b in 0..batch {
                let a = grad[c].as_slice()[b];
                let r = fd[c * batch + b];
                assert!(grad_error(a, r) < 1e-6, "class {c} sample {b}: {a} vs {r}");
            }
        }
    }

    #[test]
    fn finite_difference_on_square() {
        let grad = finite_difference_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((grad[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_on_constant() {
        let grad = finite_difference_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(grad.iter().all(|g| g.abs() == 0.0));
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.5), 0.0);
        assert_eq!(Activation::Relu.apply(1.5), 1.5);
    }

    #[test]
    fn tanh_derivative_is_one_minus_square() {
        for x in [-1.2f64, 0.0, 0.7] {
            let t = x.tanh();
            assert!((Activation::Tanh.derivative(x) - (1.0 - t * t)).abs() < 1e-15);
        }
    }
}
