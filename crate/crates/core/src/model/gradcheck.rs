//! Central finite-difference check of tape gradients.
//!
//! Each perturbation replays only the tape nodes downstream of the perturbed
//! parameter, so checking every value of a full model stays cheap.

use std::thread;

use crate::error::{Error, Result};
use crate::model::net::{BoundParams, ToyModel};
use crate::model::tape::{Tape, Var};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so vanishing gradients compare
/// in absolute terms.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradEntry {
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
            / (self.analytic.abs() + self.numeric.abs()).max(REL_FLOOR)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub names: Vec<String>,
    pub entries: Vec<GradEntry>,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn n_checked(&self) -> usize {
        self.entries.len()
    }

    pub fn entries_for<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a GradEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| self.names[e.param] == name)
    }
}

fn check_params(
    mut tape: Tape,
    loss: Var,
    grads: &[Option<Vec<f64>>],
    vars: &[Var],
    params: &[usize],
) -> Vec<GradEntry> {
    let mut out = Vec::new();
    for &p in params {
        let var = vars[p];
        let deps = tape.dependents(var);
        let n = tape.value(var).len();
        for i in 0..n {
            let up = tape.perturbed_value(var, i, FD_STEP, &deps, loss);
            let down = tape.perturbed_value(var, i, -FD_STEP, &deps, loss);
            out.push(GradEntry {
                param: p,
                index: i,
                analytic: grads[p].as_ref().map_or(0.0, |g| g[i]),
                numeric: (up - down) / (2.0 * FD_STEP),
            });
        }
    }
    out
}

/// Compares analytic and central-difference gradients for every value of
/// every parameter selected by `trainable`. `build_loss` records a scalar
/// loss against the bound parameters. Parameters are split across `jobs`
/// threads.
pub fn gradient_check<F>(
    model: &ToyModel,
    trainable: &dyn Fn(&str) -> bool,
    build_loss: F,
    jobs: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, trainable);
    let loss = build_loss(&mut tape, &bound)?;
    let lv = tape.value(loss);
    if lv.len() != 1 || !lv.data[0].is_finite() {
        return Err(Error::Numerical(
            "gradient check needs a finite scalar loss".into(),
        ));
    }
    let grads = tape.backward(loss);
    let grad_vals: Vec<Option<Vec<f64>>> = bound
        .vars
        .iter()
        .map(|v| grads.get(*v).map(<[f64]>::to_vec))
        .collect();
    let names = model.params.names().to_vec();
    let selected: Vec<usize> = (0..names.len()).filter(|&p| trainable(&names[p])).collect();
    let jobs = jobs.clamp(1, selected.len().max(1));
    let chunks: Vec<Vec<usize>> = (0..jobs)
        .map(|j| selected.iter().copied().skip(j).step_by(jobs).collect())
        .collect();
    let mut entries: Vec<GradEntry> = if jobs == 1 {
        check_params(tape, loss, &grad_vals, &bound.vars, &selected)
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    let tape = tape.clone();
                    let (g, v) = (&grad_vals, &bound.vars);
                    s.spawn(move || check_params(tape, loss, g, v, chunk))
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient check worker panicked"))
                .collect()
        })
    };
    entries.sort_by_key(|e| (e.param, e.index));
    if entries.iter().any(|e| !e.numeric.is_finite()) {
        return Err(Error::Numerical(
            "non-finite loss under perturbation".into(),
        ));
    }
    let worst = entries
        .iter()
        .max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()));
    Ok(GradCheckReport {
        max_rel_error: worst.map_or(0.0, GradEntry::rel_error),
        worst: worst.map(|e| (names[e.param].clone(), e.index)),
        names,
        entries,
    })
}
