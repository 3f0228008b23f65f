//! Central finite differences against autograd, in float64.

use infgen_core::{Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;

/// Gradients below this magnitude are compared absolutely; float64 central
/// differences carry roughly 1e-10 of rounding noise at this step size.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(FLOOR);
        (self.analytic - self.numeric).abs() / scale
    }
}

impl std::fmt::Display for Probe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}[{}]: autograd {:.6e}, finite difference {:.6e}",
            self.name, self.index, self.analytic, self.numeric
        )
    }
}

fn set_element(var: &Var, index: usize, value: f64) {
    let t = var.as_tensor();
    let mut flat = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    flat[index] = value;
    let new = Tensor::from_vec(flat, t.shape(), t.device()).unwrap();
    var.set(&new).unwrap();
}

fn element(t: &Tensor, index: usize) -> f64 {
    t.flatten_all().unwrap().get(index).unwrap().to_scalar::<f64>().unwrap()
}

/// Samples `count` scalar parameters from `vars` and compares the autograd
/// gradient of `loss` with a central difference at each.
pub fn check(
    vars: &[(String, Var)],
    count: usize,
    seed: u64,
    loss: impl Fn() -> Tensor,
) -> Vec<Probe> {
    assert!(!vars.is_empty(), "no parameters to probe");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = loss().sum_all().unwrap();
    let grads = l.backward().unwrap();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    while picks.len() < count {
        let v = rng.gen_range(0..vars.len());
        let i = rng.gen_range(0..vars[v].1.as_tensor().elem_count());
        if !picks.contains(&(v, i)) {
            picks.push((v, i));
        }
    }
    picks.shuffle(&mut rng);
    picks
        .into_iter()
        .map(|(v, i)| {
            let (name, var) = &vars[v];
            let analytic = grads
                .get(var.as_tensor())
                .map(|g| element(g, i))
                .unwrap_or(0.0);
            let orig = element(var.as_tensor(), i);
            set_element(var, i, orig + STEP);
            let up = loss().sum_all().unwrap().to_scalar::<f64>().unwrap();
            set_element(var, i, orig - STEP);
            let down = loss().sum_all().unwrap().to_scalar::<f64>().unwrap();
            set_element(var, i, orig);
            Probe {
                name: name.clone(),
                index: i,
                analytic,
                numeric: (up - down) / (2.0 * STEP),
            }
        })
        .collect()
}

/// Largest relative error, with the offending probe.
pub fn worst(probes: &[Probe]) -> (f64, Probe) {
    probes
        .iter()
        .map(|p| (p.rel_err(), p.clone()))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one probe")
}
