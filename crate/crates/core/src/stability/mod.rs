//! Static stability of dry-stacked block assemblies by rigid-block
//! equilibrium.
//!
//! Each contact segment is represented by its two endpoints. At every point
//! the contact transmits a compressive normal force `f_n ≥ 0` and a tangential
//! force bounded by the linearized Coulomb cone `|f_t| ≤ μ f_n`. An assembly is
//! stable when forces exist that balance gravity on every block (two force
//! equations and one torque equation per block). Feasibility is decided by
//! minimizing the total slack on the balance equations with a dense simplex.

mod simplex;

pub use simplex::{LpSolution, StandardLp};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{contact_segments, polygon_centroid, world_polygon, Body, ConstructionSpace, ContactSegment, Placement, Vec2};

pub const DEFAULT_MU: f64 = 0.6;
pub const STABILITY_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyMass {
    pub mass: f64,
    pub centroid: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub position: Vec2,
    /// From `body_a` into `body_b`.
    pub normal: Vec2,
    pub tangent: Vec2,
    pub body_a: Body,
    pub body_b: Body,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumModel {
    pub bodies: Vec<BodyMass>,
    pub contacts: Vec<ContactPoint>,
    pub mu: f64,
    pub g: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Optimal total slack divided by the total weight.
    pub residual: f64,
}

/// Knobs for the stability query. `edge_margin` shrinks every contact segment
/// by that length at both ends before solving; zero reproduces plain RBE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub mu: f64,
    pub edge_margin: f64,
}

impl StabilityOptions {
    pub fn with_mu(mu: f64) -> Self {
        Self { mu, edge_margin: 0.0 }
    }
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self::with_mu(DEFAULT_MU)
    }
}

impl EquilibriumModel {
    pub fn num_force_variables(&self) -> usize {
        2 * self.contacts.len()
    }

    pub fn num_equations(&self) -> usize {
        3 * self.bodies.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass * self.g).sum()
    }
}

/// Unit density, unit gravity.
pub fn build_equilibrium_model(assembly: &[Placement], contacts: &[ContactSegment], mu: f64) -> EquilibriumModel {
    build_model_with_margin(assembly, contacts, mu, 0.0)
}

fn build_model_with_margin(assembly: &[Placement], contacts: &[ContactSegment], mu: f64, edge_margin: f64) -> EquilibriumModel {
    let bodies = assembly
        .iter()
        .map(|p| BodyMass {
            mass: p.shape.area(),
            centroid: polygon_centroid(&world_polygon(p)),
        })
        .collect();
    let mut points = Vec::with_capacity(2 * contacts.len());
    for seg in contacts {
        let [mut p0, mut p1] = seg.endpoints;
        if edge_margin > 0.0 {
            let len = (p1 - p0).norm();
            let cut = edge_margin.min(len / 2.0);
            let dir = (p1 - p0) * (1.0 / len);
            p0 = p0 + dir * cut;
            p1 = p1 - dir * cut;
        }
        for position in [p0, p1] {
            points.push(ContactPoint {
                position,
                normal: seg.normal,
                tangent: seg.normal.perp(),
                body_a: seg.block_a,
                body_b: seg.block_b,
            });
        }
    }
    EquilibriumModel {
        bodies,
        contacts: points,
        mu,
        g: 1.0,
    }
}

/// Minimizes the summed absolute slack of the balance equations subject to
/// the contact force cones.
pub fn solve_feasibility(model: &EquilibriumModel) -> Result<StabilityVerdict> {
    let nb = model.bodies.len();
    if nb == 0 {
        return Ok(StabilityVerdict { stable: true, residual: 0.0 });
    }
    let weight = model.total_weight();
    let nc = model.contacts.len();
    let n_eq = 3 * nb;
    let rows = 2 * nc + n_eq;
    // [f_n, f_t+, f_t-] per point, two cone slacks per point, s+ and s- per equation
    let cone0 = 3 * nc;
    let slack0 = cone0 + 2 * nc;
    let cols = slack0 + 2 * n_eq;

    let mut a = vec![0.0; rows * cols];
    let mut b = vec![0.0; rows];
    let mut c = vec![0.0; cols];
    let mut basis = Vec::with_capacity(rows);

    for k in 0..nc {
        let (fn_, ftp, ftm) = (3 * k, 3 * k + 1, 3 * k + 2);
        // f_t - mu f_n + u1 = 0
        let r = 2 * k;
        a[r * cols + ftp] = 1.0;
        a[r * cols + ftm] = -1.0;
        a[r * cols + fn_] = -model.mu;
        a[r * cols + cone0 + 2 * k] = 1.0;
        basis.push(cone0 + 2 * k);
        // -f_t - mu f_n + u2 = 0
        let r = 2 * k + 1;
        a[r * cols + ftp] = -1.0;
        a[r * cols + ftm] = 1.0;
        a[r * cols + fn_] = -model.mu;
        a[r * cols + cone0 + 2 * k + 1] = 1.0;
        basis.push(cone0 + 2 * k + 1);
    }

    let eq0 = 2 * nc;
    for (k, cp) in model.contacts.iter().enumerate() {
        for (body, sign) in [(cp.body_b, 1.0), (cp.body_a, -1.0)] {
            let Body::Block(i) = body else { continue };
            let arm = cp.position - model.bodies[i].centroid;
            let rn = [cp.normal.x, cp.normal.z, arm.cross(cp.normal)];
            let rt = [cp.tangent.x, cp.tangent.z, arm.cross(cp.tangent)];
            for e in 0..3 {
                let row = (eq0 + 3 * i + e) * cols;
                a[row + 3 * k] += sign * rn[e];
                a[row + 3 * k + 1] += sign * rt[e];
                a[row + 3 * k + 2] -= sign * rt[e];
            }
        }
    }
    for (i, body) in model.bodies.iter().enumerate() {
        b[eq0 + 3 * i + 1] = body.mass * model.g;
    }
    for e in 0..n_eq {
        let r = eq0 + e;
        let (sp, sm) = (slack0 + 2 * e, slack0 + 2 * e + 1);
        a[r * cols + sp] = 1.0;
        a[r * cols + sm] = -1.0;
        c[sp] = 1.0;
        c[sm] = 1.0;
        if b[r] < 0.0 {
            for v in &mut a[r * cols..(r + 1) * cols] {
                *v = -*v;
            }
            b[r] = -b[r];
            basis.push(sm);
        } else {
            basis.push(sp);
        }
    }

    let lp = StandardLp { a, rows, cols, b, c, basis };
    let sol = lp.solve(1e-3 * STABILITY_TOL * weight)?;
    let residual = (sol.objective / weight).max(0.0);
    Ok(StabilityVerdict {
        stable: residual <= STABILITY_TOL,
        residual,
    })
}

/// Full stability query with explicit options.
pub fn check_stability(assembly: &[Placement], space: &ConstructionSpace, opts: &StabilityOptions) -> Result<StabilityVerdict> {
    let contacts = contact_segments(assembly, space);
    let model = build_model_with_margin(assembly, &contacts, opts.mu, opts.edge_margin);
    solve_feasibility(&model)
}

/// Solver failures count as unstable.
pub fn is_stable(assembly: &[Placement], space: &ConstructionSpace, mu: f64) -> bool {
    match check_stability(assembly, space, &StabilityOptions::with_mu(mu)) {
        Ok(v) => v.stable,
        Err(e) => {
            log::warn!("stability solve failed, treating as unstable: {e}");
            false
        }
    }
}
