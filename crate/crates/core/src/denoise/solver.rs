//! Least-squares fit of `(T, p)` to consensus frequencies.
//!
//! Accelerated projected gradient (FISTA) with backtracking line search and
//! function-value restart. Rows of `T` and `p` are projected onto the
//! probability simplex after every step.

use serde::{Deserialize, Serialize};

use super::{ConsensusEstimates, ScorePrior, TransitionMatrix};
use crate::vector::project_simplex;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once one step improves the residual by less than `tol × residual`.
    pub tol: f64,
    /// Weight of the identity in the initial `T = d·I + (1-d)/K`.
    pub init_diagonal: f64,
    pub initial_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 1500,
            tol: 1e-8,
            init_diagonal: 0.7,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub t: TransitionMatrix,
    pub p: ScorePrior,
    /// Sum of squared differences between model and empirical frequencies.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

const RESIDUAL_FLOOR: f64 = 1e-16;

pub(super) fn model_flat(k: usize, t: &[f64], p: &[f64]) -> ConsensusEstimates {
    let mut q = ConsensusEstimates::zeros(k);
    for (row, &pk) in p.iter().enumerate() {
        let tr = &t[row * k..(row + 1) * k];
        for i in 0..k {
            let a = pk * tr[i];
            q.q1[i] += a;
            for z in 0..k {
                let ab = a * tr[(i + z) % k];
                q.q2[z * k + i] += ab;
                for g in 0..k {
                    q.q3[(z * k + g) * k + i] += ab * tr[(i + g) % k];
                }
            }
        }
    }
    q
}

/// Residual and its gradient with respect to the flat `T` and `p`.
fn residual_and_grad(
    k: usize,
    t: &[f64],
    p: &[f64],
    target: &ConsensusEstimates,
    gt: &mut [f64],
    gp: &mut [f64],
) -> f64 {
    let q = model_flat(k, t, p);
    let f = q.squared_distance(target);
    let r1: Vec<f64> = q.q1.iter().zip(&target.q1).map(|(a, b)| 2.0 * (a - b)).collect();
    let r2: Vec<f64> = q.q2.iter().zip(&target.q2).map(|(a, b)| 2.0 * (a - b)).collect();
    let r3: Vec<f64> = q.q3.iter().zip(&target.q3).map(|(a, b)| 2.0 * (a - b)).collect();
    gt.iter_mut().for_each(|x| *x = 0.0);
    gp.iter_mut().for_each(|x| *x = 0.0);
    for row in 0..k {
        let pk = p[row];
        let tr = &t[row * k..(row + 1) * k];
        let g_row = &mut gt[row * k..(row + 1) * k];
        let mut dp = 0.0;
        for i in 0..k {
            let a = tr[i];
            dp += r1[i] * a;
            g_row[i] += pk * r1[i];
            for z in 0..k {
                let iz = (i + z) % k;
                let b = tr[iz];
                let w2 = r2[z * k + i];
                dp += w2 * a * b;
                g_row[i] += pk * w2 * b;
                g_row[iz] += pk * w2 * a;
                for g in 0..k {
                    let ig = (i + g) % k;
                    let c = tr[ig];
                    let w3 = r3[(z * k + g) * k + i];
                    dp += w3 * a * b * c;
                    let w = pk * w3;
                    g_row[i] += w * b * c;
                    g_row[iz] += w * a * c;
                    g_row[ig] += w * a * b;
                }
            }
        }
        gp[row] = dp;
    }
    f
}

fn residual(k: usize, t: &[f64], p: &[f64], target: &ConsensusEstimates) -> f64 {
    model_flat(k, t, p).squared_distance(target)
}

fn project(k: usize, t: &mut [f64], p: &mut [f64]) {
    for row in t.chunks_mut(k) {
        project_simplex(row);
    }
    project_simplex(p);
}

/// Fits `(T, p)` to `empirical`. Never fails: when the iteration budget runs
/// out the best iterate is returned with `converged = false`.
pub fn solve_transition(empirical: &ConsensusEstimates, config: &SolverConfig) -> SolveResult {
    let k = empirical.k;
    let d = config.init_diagonal;
    let mut x_t: Vec<f64> = (0..k * k)
        .map(|idx| if idx / k == idx % k { d } else { 0.0 } + (1.0 - d) / k as f64)
        .collect();
    let mut x_p = empirical.q1.clone();
    project(k, &mut x_t, &mut x_p);

    let mut y_t = x_t.clone();
    let mut y_p = x_p.clone();
    let mut gt = vec![0.0; k * k];
    let mut gp = vec![0.0; k];
    let mut z_t = vec![0.0; k * k];
    let mut z_p = vec![0.0; k];
    let mut f_x = residual(k, &x_t, &x_p, empirical);
    let mut momentum = 1.0f64;
    let mut step = config.initial_step;
    let mut converged = f_x < RESIDUAL_FLOOR;
    let mut iterations = 0;

    while !converged && iterations < config.max_iters {
        iterations += 1;
        let f_y = residual_and_grad(k, &y_t, &y_p, empirical, &mut gt, &mut gp);
        let f_z = loop {
            for (z, (y, g)) in z_t.iter_mut().zip(y_t.iter().zip(&gt)) {
                *z = y - step * g;
            }
            for (z, (y, g)) in z_p.iter_mut().zip(y_p.iter().zip(&gp)) {
                *z = y - step * g;
            }
            project(k, &mut z_t, &mut z_p);
            let f_z = residual(k, &z_t, &z_p, empirical);
            // sufficient decrease against the quadratic upper model at y
            let (mut lin, mut quad) = (0.0, 0.0);
            for ((z, y), g) in z_t.iter().chain(&z_p).zip(y_t.iter().chain(&y_p)).zip(gt.iter().chain(&gp)) {
                let dz = z - y;
                lin += g * dz;
                quad += dz * dz;
            }
            if f_z <= f_y + lin + quad / (2.0 * step) || step < 1e-12 {
                break f_z;
            }
            step *= 0.5;
        };

        if f_z > f_x {
            // momentum overshot: restart from the current iterate
            momentum = 1.0;
            y_t.copy_from_slice(&x_t);
            y_p.copy_from_slice(&x_p);
            continue;
        }
        let next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next;
        for i in 0..k * k {
            y_t[i] = z_t[i] + beta * (z_t[i] - x_t[i]);
        }
        for i in 0..k {
            y_p[i] = z_p[i] + beta * (z_p[i] - x_p[i]);
        }
        x_t.copy_from_slice(&z_t);
        x_p.copy_from_slice(&z_p);
        momentum = next;
        let improvement = f_x - f_z;
        f_x = f_z;
        if f_x < RESIDUAL_FLOOR || improvement < config.tol * f_x {
            converged = true;
        }
    }

    SolveResult {
        t: TransitionMatrix::from_flat(k, x_t),
        p: ScorePrior::from_raw(x_p),
        residual: f_x,
        converged,
        iterations,
    }
}
