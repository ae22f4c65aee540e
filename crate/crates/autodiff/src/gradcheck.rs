//! Central finite-difference gradient checking.

use crate::tensor::Tensor;

/// Outcome of comparing analytic against numeric gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub components: usize,
    /// Components satisfying the relative-error bound.
    pub rel_ok: usize,
    /// Components that failed the relative bound but are within the
    /// absolute bound.
    pub abs_ok: usize,
    pub failures: Vec<GradMismatch>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// The one-sided slopes disagree, so the loss is not differentiable
    /// within one step of this point (a ReLU or norm-floor boundary).
    pub kink: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel: 1e-4,
            abs: 1e-6,
        }
    }
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Fraction of components meeting the relative bound.
    pub fn rel_fraction(&self) -> f64 {
        if self.components == 0 {
            1.0
        } else {
            self.rel_ok as f64 / self.components as f64
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.components += other.components;
        self.rel_ok += other.rel_ok;
        self.abs_ok += other.abs_ok;
        self.failures.extend(other.failures);
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
    }
}

/// One-sided slopes of a smooth function differ by O(step); a larger gap
/// marks a non-differentiable point.
const KINK_REL: f64 = 1e-2;

impl GradCheckReport {
    pub fn kinks(&self) -> usize {
        self.failures.iter().filter(|f| f.kink).count()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let den = a.abs().max(b.abs());
    if den == 0.0 {
        0.0
    } else {
        (a - b).abs() / den
    }
}

/// Compares `analytic[i]` against central differences of `loss` around `inputs`.
///
/// `loss` is evaluated at `inputs` with exactly one scalar perturbed at a time.
/// A component passes when its relative error is below `tol.rel` or its
/// absolute error is below `tol.abs`.
pub fn check<F>(loss: F, inputs: &[Tensor], analytic: &[Tensor], tol: Tolerance) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    let center = loss(&work);
    for (input, grad) in analytic.iter().enumerate() {
        for index in 0..work[input].numel() {
            let orig = work[input].data()[index];
            work[input].data_mut()[index] = orig + tol.step;
            let up = loss(&work);
            work[input].data_mut()[index] = orig - tol.step;
            let down = loss(&work);
            work[input].data_mut()[index] = orig;
            let numeric = (up - down) / (2.0 * tol.step);
            let a = grad.data()[index];
            report.record(input, index, a, numeric, tol);
            if let Some(last) = report.failures.last_mut().filter(|f| f.input == input && f.index == index) {
                let left = (center - down) / tol.step;
                let right = (up - center) / tol.step;
                last.kink = relative_error(left, right) > KINK_REL;
            }
        }
    }
    report
}

impl GradCheckReport {
    pub fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64, tol: Tolerance) {
        let abs = (analytic - numeric).abs();
        let rel = relative_error(analytic, numeric);
        self.components += 1;
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel < tol.rel {
            self.rel_ok += 1;
            self.max_rel_error = self.max_rel_error.max(rel);
        } else if abs < tol.abs {
            self.abs_ok += 1;
        } else {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.failures.push(GradMismatch {
                input,
                index,
                analytic,
                numeric,
                kink: false,
            });
        }
    }
}
