//! Central finite-difference gradient checking.

use super::graph::{ComputeGraph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Perturbation used by the standard suite.
pub const FD_STEP: f64 = 1e-4;
/// Maximum tolerated relative error.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradient magnitude below which errors are measured in absolute terms.
pub const FD_SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a non-differentiable branch
    /// (rectifier kink, max tie, clamp) and were therefore not compared.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol && self.skipped * 10 <= self.checked + self.skipped
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_SCALE_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences in every coordinate of every input.
pub fn check_gradients<F>(name: &str, inputs: &[Tensor], h: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ComputeGraph, &[Var]) -> Result<Var>,
{
    fn eval<F>(f: &mut F, vals: &[Tensor]) -> Result<(f64, u64)>
    where
        F: FnMut(&mut ComputeGraph, &[Var]) -> Result<Var>,
    {
        let mut g = ComputeGraph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok((g.value(loss).item(), g.fingerprint()))
    }

    let (analytic, base_fp) = {
        let mut g = ComputeGraph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let grads = g.backward(loss)?;
        (vars.iter().map(|v| grads.get(*v)).collect::<Vec<_>>(), g.fingerprint())
    };

    let mut report = GradCheckReport { name: name.to_string(), checked: 0, skipped: 0, max_rel_error: 0.0, worst: None };
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.len() {
            let orig = t.data()[ei];
            work[ti].data_mut()[ei] = orig + h;
            let (plus, fp_plus) = eval(&mut f, &work)?;
            work[ti].data_mut()[ei] = orig - h;
            let (minus, fp_minus) = eval(&mut f, &work)?;
            work[ti].data_mut()[ei] = orig;
            if fp_plus != base_fp || fp_minus != base_fp {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[ti].data()[ei], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ti, ei));
            }
        }
    }
    Ok(report)
}
