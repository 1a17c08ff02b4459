use rand::Rng;
use rand_distr::StandardNormal;

/// Scale factor of the stretch move, drawn from `g(z) ∝ 1/sqrt(z)` on
/// `[1/a, a]` by inverting its CDF.
pub fn sample_stretch_z<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let s = (a - 1.0) * u + 1.0;
    s * s / a
}

/// Uniform index in `0..n` different from every entry of `exclude`
/// (which must be sorted and distinct).
fn partner<R: Rng + ?Sized>(n: usize, exclude: &[usize], rng: &mut R) -> usize {
    let mut j = rng.random_range(0..n - exclude.len());
    for &e in exclude {
        if j >= e {
            j += 1;
        }
    }
    j
}

/// Stretch proposal for walker `k`: `y = x_j + z (x_k - x_j)` for a uniform
/// partner `j != k`. Returns the proposal and the log MH factor
/// `(V - 1) ln z`.
pub fn stretch_move<R: Rng + ?Sized>(k: usize, walkers: &[Vec<f64>], a: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let j = partner(walkers.len(), &[k], rng);
    let z = sample_stretch_z(a, rng);
    (stretch_with(&walkers[k], &walkers[j], z), (walkers[k].len() as f64 - 1.0) * z.ln())
}

/// `x_j + z (x_k - x_j)`, evaluated as `z x_k + (1 - z) x_j`.
pub fn stretch_with(xk: &[f64], xj: &[f64], z: f64) -> Vec<f64> {
    xk.iter().zip(xj).map(|(a, b)| z * a + (1.0 - z) * b).collect()
}

/// Differential-evolution proposal for walker `k`:
/// `x + gamma (x_a - x_b) + eps` with distinct partners `a, b != k` and
/// `eps ~ N(0, jitter_var I)`. The proposal is symmetric.
pub fn de_move<R: Rng + ?Sized>(
    k: usize,
    walkers: &[Vec<f64>],
    gamma: f64,
    jitter_var: f64,
    rng: &mut R,
) -> Vec<f64> {
    let a = partner(walkers.len(), &[k], rng);
    let mut ex = [k, a];
    ex.sort_unstable();
    let b = partner(walkers.len(), &ex, rng);
    let sd = jitter_var.sqrt();
    walkers[k]
        .iter()
        .zip(&walkers[a])
        .zip(&walkers[b])
        .map(|((x, xa), xb)| x + gamma * (xa - xb) + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Metropolis-Hastings test. A `-inf` or NaN proposal is always rejected.
pub fn mh_accept<R: Rng + ?Sized>(log_new: f64, log_old: f64, log_factor: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if log_new.is_nan() || log_new == f64::NEG_INFINITY {
        return false;
    }
    u.ln() < log_new - log_old + log_factor
}
