//! Central finite-difference gradient checking at `f64`.

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::{ParamSet, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Check at most this many coordinates per tensor (evenly strided); `None` checks all.
    pub max_per_tensor: Option<usize>,
}

impl GradCheckConfig {
    pub fn with_rtol(rtol: f64) -> Self {
        GradCheckConfig {
            eps: 1e-6,
            rtol,
            atol: 1e-8,
            max_per_tensor: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// `(tensor, coordinate, analytic, numeric)` for every failing coordinate.
    pub failures: Vec<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    fn record(&mut self, cfg: &GradCheckConfig, name: &str, i: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if abs > cfg.atol {
            self.max_rel_err = self.max_rel_err.max(rel);
        }
        if abs > cfg.atol + cfg.rtol * scale {
            self.failures.push((name.to_string(), i, analytic, numeric));
        }
    }
}

fn coords(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|k| k * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Checks `f(inputs)` against finite differences in each input coordinate.
pub fn gradcheck_inputs<F>(
    inputs: &[Tensor<f64>],
    f: F,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_grad()))
        .collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[k].len()];
        let analytic = grads.get(*v).unwrap_or(&zeros).to_vec();
        for i in coords(inputs[k].len(), cfg.max_per_tensor) {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + cfg.eps;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = orig - cfg.eps;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            report.record(&cfg, &format!("input{k}"), i, analytic[i], numeric);
        }
    }
    Ok(report)
}

/// Checks the gradient of `f(params)` with respect to every trainable parameter.
pub fn gradcheck_params<F>(
    params: &ParamSet<f64>,
    f: F,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let mut analytic_set = params.clone();
    analytic_set.zero_grad();
    {
        let mut g = Graph::new();
        let out = f(&mut g, &analytic_set)?;
        if !g.shape(out).is_empty() {
            return Err(Error::Contract("gradcheck needs a scalar output".into()));
        }
        g.backward_into(out, &mut analytic_set)?;
    }
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        Ok(g.scalar(out))
    };
    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for idx in 0..params.len() {
        if !params.by_index(idx).requires_grad {
            continue;
        }
        let name = params.names()[idx].clone();
        let len = params.by_index(idx).len();
        let zeros = vec![0.0; len];
        let analytic = analytic_set.by_index(idx).grad.clone().unwrap_or(zeros);
        for i in coords(len, cfg.max_per_tensor) {
            let orig = work.by_index(idx).data()[i];
            work.by_index_mut(idx).data_mut()[i] = orig + cfg.eps;
            let fp = eval(&work)?;
            work.by_index_mut(idx).data_mut()[i] = orig - cfg.eps;
            let fm = eval(&work)?;
            work.by_index_mut(idx).data_mut()[i] = orig;
            report.record(&cfg, &name, i, analytic[i], (fp - fm) / (2.0 * cfg.eps));
        }
    }
    Ok(report)
}
