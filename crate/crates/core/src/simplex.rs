//! Nelder–Mead downhill simplex minimization with restarts.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexError {
    #[error("starting point is empty")]
    EmptyStart,
    #[error("initial step vector has length {steps}, expected {dim}")]
    StepLength { steps: usize, dim: usize },
    #[error("invalid simplex configuration: {0}")]
    Config(String),
}

/// Coefficients and stopping rules.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Evaluation budget shared by the first run and all restarts.
    pub max_evals: usize,
    /// Converged when every vertex is within `x_tol` (infinity norm) of the best one...
    pub x_tol: f64,
    /// ...and every vertex value is within `f_tol` of the best value.
    pub f_tol: f64,
    /// Extra runs started around the best vertex after a run converges.
    pub restarts: usize,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_evals: 4000,
            x_tol: 1e-6,
            f_tol: 1e-6,
            restarts: 3,
        }
    }
}

impl SimplexConfig {
    pub fn validate(&self, dim: usize) -> Result<(), SimplexError> {
        let bad = |msg: &str| Err(SimplexError::Config(msg.to_string()));
        if !(self.reflection > 0.0) {
            return bad("reflection must be > 0");
        }
        if !(self.expansion > 1.0 && self.expansion > self.reflection) {
            return bad("expansion must exceed 1 and the reflection coefficient");
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return bad("contraction must lie in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if self.max_evals < dim + 1 {
            return bad("max_evals must be at least dimension + 1");
        }
        if !(self.x_tol >= 0.0 && self.f_tol >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub iterations: usize,
    /// The last run stopped on the tolerances rather than the budget.
    pub converged: bool,
    /// Best value after every iteration across all runs.
    pub best_history: Vec<f64>,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        // NaN would break the vertex ordering
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` starting from `x0`.
///
/// The initial simplex is `x0` plus one vertex per coordinate displaced by
/// `steps[i]`. After a run converges the simplex is rebuilt around the best
/// vertex, up to `config.restarts` times, stopping early when a restart fails
/// to improve the best value by more than `f_tol`.
pub fn minimize<F>(f: F, x0: &[f64], steps: &[f64], config: &SimplexConfig) -> Result<SimplexOutcome, SimplexError>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    if dim == 0 {
        return Err(SimplexError::EmptyStart);
    }
    if steps.len() != dim {
        return Err(SimplexError::StepLength { steps: steps.len(), dim });
    }
    config.validate(dim)?;

    let mut func = Counted { f, evals: 0 };
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut start = x0.to_vec();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged = false;

    for run in 0..=config.restarts {
        if func.evals + dim + 1 > config.max_evals {
            break;
        }
        let (x, fx, run_converged) = run_once(&mut func, &start, steps, config, &mut history, &mut iterations);
        let improved = match &best {
            None => true,
            Some((_, fb)) => fx < *fb,
        };
        let significant = match &best {
            None => true,
            Some((_, fb)) => *fb - fx > config.f_tol,
        };
        if improved {
            best = Some((x.clone(), fx));
        }
        converged = run_converged;
        if !run_converged || (run > 0 && !significant) {
            break;
        }
        start = best.as_ref().map(|(x, _)| x.clone()).unwrap_or(x);
    }

    let (x, f) = best.expect("budget admits at least one run");
    Ok(SimplexOutcome {
        x,
        f,
        evaluations: func.evals,
        iterations,
        converged,
        best_history: history,
    })
}

fn run_once<F: FnMut(&[f64]) -> f64>(
    func: &mut Counted<F>,
    start: &[f64],
    steps: &[f64],
    cfg: &SimplexConfig,
    history: &mut Vec<f64>,
    iterations: &mut usize,
) -> (Vec<f64>, f64, bool) {
    let dim = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = func.call(start);
    simplex.push((start.to_vec(), f0));
    for (i, &s) in steps.iter().enumerate() {
        let mut x = start.to_vec();
        x[i] += if s != 0.0 { s } else { 2.5e-4 };
        let fx = func.call(&x);
        simplex.push((x, fx));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best_f = simplex[0].1;
        let spread_f = simplex.iter().map(|(_, f)| (f - best_f).abs()).fold(0.0, f64::max);
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread_f <= cfg.f_tol && spread_x <= cfg.x_tol {
            let (x, f) = simplex.swap_remove(0);
            return (x, f, true);
        }
        // room for a reflection, a contraction and a full shrink
        if func.evals + dim + 2 > cfg.max_evals {
            let (x, f) = simplex.swap_remove(0);
            return (x, f, false);
        }
        *iterations += 1;

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(cfg.reflection);
        let fr = func.call(&xr);
        if fr < simplex[0].1 {
            let xe = along(cfg.reflection * cfg.expansion);
            let fe = func.call(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(cfg.reflection * cfg.contraction);
                let fc = func.call(&xc);
                (xc, fc)
            } else {
                let xc = along(-cfg.contraction);
                let fc = func.call(&xc);
                (xc, fc)
            };
            if fc < fr.min(worst.1) {
                simplex[dim] = (xc, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = anchor
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, v)| b + cfg.shrink * (v - b))
                        .collect();
                    let fx = func.call(&x);
                    *vertex = (x, fx);
                }
            }
        }
        let best_now = simplex.iter().map(|(_, f)| *f).fold(f64::INFINITY, f64::min);
        history.push(best_now);
    }
}
