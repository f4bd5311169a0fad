//! Disc constraints for the linear-constraint backend.

use std::f64::consts::PI;

use super::{
    Backend, ConicProgram, ConstraintRef, DiscConstraint, LinearRow, ReferenceBackend, SolveResult, Status,
};

fn half_plane(disc: &DiscConstraint, angle: f64, offset: f64) -> LinearRow {
    LinearRow::new(vec![(disc.u, angle.cos()), (disc.v, angle.sin())], offset)
}

/// Edges of the regular polygon inscribed in the disc, with vertices on the
/// axes: normals at `(2k + 1) pi / cuts`, offset `R cos(pi / cuts)`.
fn polygon_rows(disc: &DiscConstraint, cuts: usize) -> Vec<LinearRow> {
    let offset = disc.radius * (PI / cuts as f64).cos();
    (0..cuts)
        .map(|k| half_plane(disc, (2 * k + 1) as f64 * PI / cuts as f64, offset))
        .collect()
}

/// Replaces every disc by `cuts` half-planes of its inscribed polygon.
/// The cut rows of disc `d` are appended after the original inequalities in
/// disc order.
pub fn polygonalize_cones(program: &ConicProgram, cuts: usize) -> ConicProgram {
    assert!(cuts >= 4 && cuts.is_multiple_of(2), "polygon needs an even number of at least 4 cuts");
    let mut out = program.clone();
    out.discs.clear();
    for disc in &program.discs {
        out.inequalities.extend(polygon_rows(disc, cuts));
    }
    out
}

/// Moves the duals of appended cut rows back onto their discs.
fn fold_cut_duals(
    program: &ConicProgram,
    mut result: SolveResult,
    owners: &[usize],
    normals: &[(f64, f64)],
) -> SolveResult {
    let base = program.inequalities.len();
    let mut disc_duals = vec![[0.0; 2]; program.discs.len()];
    for (k, (&d, &(cu, cv))) in owners.iter().zip(normals).enumerate() {
        let z = result.ineq_duals.get(base + k).copied().unwrap_or(0.0);
        disc_duals[d][0] += z * cu;
        disc_duals[d][1] += z * cv;
    }
    result.ineq_duals.truncate(base);
    result.disc_duals = disc_duals;
    for c in &mut result.conflict {
        if let ConstraintRef::Inequality(i) = *c {
            if i >= base {
                *c = ConstraintRef::Disc(owners[i - base]);
            }
        }
    }
    result
}

fn normal_of(row: &LinearRow) -> (f64, f64) {
    (row.coeffs[0].1, row.coeffs[1].1)
}

/// Inner polygon approximation on top of the reference backend.
#[derive(Debug, Clone, Copy)]
pub struct PolygonBackend {
    pub inner: ReferenceBackend,
    pub cuts: usize,
}

impl Backend for PolygonBackend {
    fn name(&self) -> &'static str {
        "reference-ipm+polygon"
    }

    fn supports_discs(&self) -> bool {
        true
    }

    fn solve(&self, program: &ConicProgram) -> SolveResult {
        let poly = polygonalize_cones(program, self.cuts);
        let extra = &poly.inequalities[program.inequalities.len()..];
        let owners: Vec<usize> = (0..program.discs.len()).flat_map(|d| std::iter::repeat_n(d, self.cuts)).collect();
        let normals: Vec<_> = extra.iter().map(normal_of).collect();
        let result = self.inner.solve(&poly);
        fold_cut_duals(program, result, &owners, &normals)
    }
}

/// Exact discs by outer approximation: start from a circumscribed octagon and
/// add a tangent cut at every violated point until all discs hold.
#[derive(Debug, Clone, Copy)]
pub struct CuttingPlaneBackend {
    pub inner: ReferenceBackend,
    pub max_rounds: usize,
    /// Allowed relative radial violation.
    pub tolerance: f64,
}

impl CuttingPlaneBackend {
    pub fn new(inner: ReferenceBackend) -> Self {
        CuttingPlaneBackend {
            inner,
            max_rounds: 200,
            tolerance: 1e-8,
        }
    }
}

impl Backend for CuttingPlaneBackend {
    fn name(&self) -> &'static str {
        "reference-ipm+cutting-planes"
    }

    fn supports_discs(&self) -> bool {
        true
    }

    fn solve(&self, program: &ConicProgram) -> SolveResult {
        let mut work = program.clone();
        work.discs.clear();
        let mut owners = Vec::new();
        for (d, disc) in program.discs.iter().enumerate() {
            for k in 0..8 {
                work.inequalities.push(half_plane(disc, k as f64 * PI / 4.0, disc.radius));
                owners.push(d);
            }
        }
        let mut rounds = 0;
        loop {
            let result = self.inner.solve(&work);
            let normals: Vec<_> = work.inequalities[program.inequalities.len()..]
                .iter()
                .map(normal_of)
                .collect();
            if result.status != Status::Optimal {
                return fold_cut_duals(program, result, &owners, &normals);
            }
            let mut added = false;
            for (d, disc) in program.discs.iter().enumerate() {
                let (u, v) = (result.x[disc.u], result.x[disc.v]);
                let r = u.hypot(v);
                if r > disc.radius * (1.0 + self.tolerance) + self.tolerance {
                    work.inequalities.push(half_plane(disc, v.atan2(u), disc.radius));
                    owners.push(d);
                    added = true;
                }
            }
            rounds += 1;
            if !added || rounds >= self.max_rounds {
                let mut out = fold_cut_duals(program, result, &owners, &normals);
                if added {
                    log::warn!("cutting-plane loop stopped after {rounds} rounds with violated discs");
                    out.status = Status::IterationLimit;
                }
                return out;
            }
        }
    }
}
