//! Ground-state depth on (0, π) with p = 3 against an ODE shooting oracle.

use pwlab_core::nehari::{ground_state, SolverConfig};
use pwlab_core::{Mesh, Params};
use std::f64::consts::PI;

/// Positive solution of `−u'' = u³`, `u(0) = u(π) = 0`. With
/// `u'(0) = s` the first zero sits at `π·s₁/s` for the solution with
/// `s = s₁`, by the scaling `u ↦ κu(κx)`. Returns `∫u'²` on (0, π).
fn shooting_dirichlet_energy() -> f64 {
    // integrate from s = 1 up to the first zero, then rescale
    let rhs = |y: [f64; 2]| [y[1], -y[0].powi(3)];
    let dt = 1e-5;
    let mut y = [0.0, 1.0];
    let mut x = 0.0;
    let mut g = 0.0;
    loop {
        let k1 = rhs(y);
        let k2 = rhs([y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
        let k3 = rhs([y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
        let k4 = rhs([y[0] + dt * k3[0], y[1] + dt * k3[1]]);
        let next = [
            y[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        if next[0] <= 0.0 {
            // linear interpolation to the zero
            let frac = y[0] / (y[0] - next[0]);
            g += frac * dt * 0.5 * (y[1] * y[1] + next[1] * next[1]);
            x += frac * dt;
            break;
        }
        g += 0.5 * dt * (y[1] * y[1] + next[1] * next[1]);
        y = next;
        x += dt;
    }
    // u_κ(x) = κ u(κx) has zero at x_0/κ; pick κ = x_0/π.
    // ∫|u_κ'|² over (0, π) = κ³ ∫|u'|² over (0, x_0).
    let kappa = x / PI;
    kappa.powi(3) * g
}

#[test]
fn quotient_minimum_matches_shooting() {
    let g = shooting_dirichlet_energy();
    // On the Nehari manifold G = P, so A = G / P^{1/2} = √G.
    let a_exact = g.sqrt();
    let params = Params::new(3.0, 0.0, 0.0).unwrap();
    let cfg = SolverConfig::default();
    let mut errs = Vec::new();
    for n in [127usize, 255, 511] {
        let mesh = Mesh::interval(0.0, PI, n).unwrap();
        let gs = ground_state(&mesh, &params, &cfg).unwrap();
        errs.push((gs.a_min - a_exact).abs());
    }
    assert!(errs[2] / a_exact < 1e-4, "{errs:?} vs {a_exact}");
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() < 0.3, "order {order} from {errs:?}");
    }
}
