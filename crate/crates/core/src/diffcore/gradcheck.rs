//! Central finite-difference gradient checking.

use crate::diffcore::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rel: 1e-3,
            abs: 1e-6,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let err = (analytic - numeric).abs();
        err <= self.abs || err <= self.rel * analytic.abs().max(numeric.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub target: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.checked > 0
    }
}

/// Checks d f / d inputs for a scalar-valued `f` built on a fresh graph.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], tol: Tolerance, f: F) -> Result<Report>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out)[0])
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(&t.clone().with_grad()))
        .collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let mut report = Report::default();
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].values_mut()[i] += tol.step;
            let mut minus = inputs.to_vec();
            minus[k].values_mut()[i] -= tol.step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * tol.step);
            report.checked += 1;
            if !tol.accepts(analytic[i], numeric) {
                report.mismatches.push(Mismatch {
                    target: format!("input{k}"),
                    index: i,
                    analytic: analytic[i],
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Checks d f / d params for the selected `(name, element)` pairs.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    selection: &[(String, usize)],
    tol: Tolerance,
    f: F,
) -> Result<Report>
where
    F: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.value(out)[0])
    };
    let grads = {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        g.backward(out)?;
        g.param_grads()
    };
    let mut report = Report::default();
    for (name, i) in selection {
        let analytic = grads
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g[*i])
            .unwrap_or(0.0);
        if *i >= store.get(name)?.tensor.len() {
            return Err(Error::InvalidArgument(format!("{name}[{i}] out of range")));
        }
        let mut plus = store.clone();
        plus.get_mut(name)?.tensor.values_mut()[*i] += tol.step;
        let mut minus = store.clone();
        minus.get_mut(name)?.tensor.values_mut()[*i] -= tol.step;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * tol.step);
        report.checked += 1;
        if !tol.accepts(analytic, numeric) {
            report.mismatches.push(Mismatch {
                target: name.clone(),
                index: *i,
                analytic,
                numeric,
            });
        }
    }
    Ok(report)
}
