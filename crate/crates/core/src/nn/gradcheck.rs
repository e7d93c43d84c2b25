//! Central-difference gradient checks against the tape.

use super::{Graph, Mat, ParamId, ParamStore, Var};

/// One checked parameter entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSample {
    pub id: ParamId,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// `|a − n| ≤ rel · max(|a|, |n|) + abs`.
    pub fn within(&self, rel: f64, abs: f64) -> bool {
        (self.analytic - self.numeric).abs() <= rel * self.analytic.abs().max(self.numeric.abs()) + abs
    }
}

fn eval<F: Fn(&mut Graph) -> Var>(store: &ParamStore, f: &F) -> f64 {
    let mut g = Graph::new(store);
    let l = f(&mut g);
    g.scalar(l)
}

/// Compares the tape gradient of the scalar `f` with central differences
/// (step `eps`) at the listed `(param, row, col)` entries.
pub fn check_entries<F>(store: &ParamStore, entries: &[(ParamId, usize, usize)], eps: f64, f: F) -> Vec<GradSample>
where
    F: Fn(&mut Graph) -> Var,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g);
        g.backward(loss)
    };
    let mut probe = store.clone();
    entries
        .iter()
        .map(|&(id, row, col)| {
            let analytic = grads.get(id).map_or(0.0, |m: &Mat| m[[row, col]]);
            let orig = probe.get(id)[[row, col]];
            probe.get_mut(id)[[row, col]] = orig + eps;
            let lp = eval(&probe, &f);
            probe.get_mut(id)[[row, col]] = orig - eps;
            let lm = eval(&probe, &f);
            probe.get_mut(id)[[row, col]] = orig;
            GradSample { id, row, col, analytic, numeric: (lp - lm) / (2.0 * eps) }
        })
        .collect()
}
