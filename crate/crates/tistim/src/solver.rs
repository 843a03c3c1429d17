//! Solvers for the CEM system: a complex-symmetric PCG for the sparse block
//! A, the transfer matrix T = A⁻¹B, the Schur complement S = C − BᵀT, the
//! resistance matrix R, electrode voltages, and a monolithic dense oracle.
//!
//! The discrete CEM block operator annihilates the constant vector
//! (1_N; 1_L): shifting every potential and electrode voltage by the same
//! constant changes nothing. S therefore has the all-ones vector in its
//! kernel and is inverted in the mean-zero gauge: S⁺ = P (S + τ·11ᵀ/L)⁻¹ P
//! with P = I − 11ᵀ/L. Applied to a Kirchhoff-compliant current pattern this
//! yields exactly the voltages with ΣUℓ = 0, and R = T·S⁺ maps currents to
//! potentials in the same gauge.

use crate::cem::CemSystem;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    #[default]
    Diagonal,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveOptions {
    /// Relative residual target ‖Ax−b‖/‖b‖.
    pub rtol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rtol: 1e-10,
            max_iter: 5000,
            preconditioner: Preconditioner::Diagonal,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(Error::invalid(format!("rtol must be in (0,1), got {}", self.rtol)));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PcgSolution {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    pub residual: f64,
}

fn l2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Unconjugated bilinear form xᵀy used by the complex-symmetric CG variant.
fn dot_unconj(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Complex-symmetric conjugate gradients (A = Aᵀ, not Hermitian) with an
/// optional Jacobi preconditioner. Converges when ‖Ax−b‖/‖b‖ ≤ rtol, checked
/// against the explicitly recomputed residual.
pub fn pcg_solve(a: &CsrMatrix, rhs: &[Complex64], opts: &SolveOptions) -> Result<PcgSolution> {
    opts.validate()?;
    let n = a.nrows();
    if rhs.len() != n {
        return Err(Error::invalid("rhs length does not match the system size"));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("rhs contains non-finite entries"));
    }
    let bnorm = l2(rhs);
    if bnorm == 0.0 {
        return Ok(PcgSolution {
            x: vec![Complex64::new(0.0, 0.0); n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag: Option<Vec<Complex64>> = match opts.preconditioner {
        Preconditioner::Diagonal => {
            let d = a.diagonal();
            if d.iter().any(|v| v.norm() == 0.0) {
                return Err(Error::Singular("zero diagonal entry in Jacobi preconditioner".into()));
            }
            Some(d.iter().map(|v| v.inv()).collect())
        }
        Preconditioner::None => None,
    };
    let apply_precond = |r: &[Complex64]| -> Vec<Complex64> {
        match &inv_diag {
            Some(d) => r.iter().zip(d).map(|(ri, di)| ri * di).collect(),
            None => r.to_vec(),
        }
    };

    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut r = rhs.to_vec();
    let mut z = apply_precond(&r);
    let mut p = z.clone();
    let mut rho = dot_unconj(&r, &z);
    let mut last_res = l2(&r) / bnorm;

    for k in 1..=opts.max_iter {
        let q = a.mul_vec(&p);
        let denom = dot_unconj(&p, &q);
        if denom.norm() == 0.0 || rho.norm() == 0.0 {
            return Err(Error::NonConvergence {
                iterations: k,
                residual: last_res,
                target: opts.rtol,
            });
        }
        let alpha = rho / denom;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        last_res = l2(&r) / bnorm;
        if last_res <= opts.rtol {
            // confirm with the true residual; recursion can drift
            let mut rt = rhs.to_vec();
            let ax = a.mul_vec(&x);
            for i in 0..n {
                rt[i] -= ax[i];
            }
            let true_res = l2(&rt) / bnorm;
            if true_res <= opts.rtol * 1.5 {
                return Ok(PcgSolution {
                    x,
                    iterations: k,
                    residual: true_res,
                });
            }
            r = rt;
            last_res = true_res;
        }
        z = apply_precond(&r);
        let rho_new = dot_unconj(&r, &z);
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: last_res,
        target: opts.rtol,
    })
}

/// Resistance matrix R mapping electrode currents (mA) to interior nodal
/// potentials (mV), together with the transfer matrix T = A⁻¹B and the Schur
/// complement S = C − BᵀT.
#[derive(Debug, Clone)]
pub struct ResistanceMatrix {
    /// Transfer matrix, N×L.
    pub t: DMatrix<Complex64>,
    /// Raw Schur complement C − BᵀT, L×L, 1/Ω.
    pub s: DMatrix<Complex64>,
    /// Mean-zero-gauge inverse of S (see module docs), Ω.
    pub s_plus: DMatrix<Complex64>,
    /// R = T·S⁺, N×L, Ω.
    pub r: DMatrix<Complex64>,
    /// Hash of the system this was computed from.
    pub base_hash: [u8; 32],
    /// (iterations, residual) per transfer column.
    pub col_stats: Vec<(usize, f64)>,
    /// Options the PCG columns were solved with.
    pub opts: SolveOptions,
}

pub fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn mean_zero_projector(l: usize) -> DMatrix<Complex64> {
    let mut p = DMatrix::from_element(l, l, Complex64::new(-1.0 / l as f64, 0.0));
    for i in 0..l {
        p[(i, i)] += 1.0;
    }
    p
}

/// S⁺ = P (S + τ·11ᵀ/L)⁻¹ P with τ set by the mean diagonal magnitude.
fn gauge_fixed_inverse(s: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let l = s.nrows();
    let tau: f64 = (0..l).map(|i| s[(i, i)].norm()).sum::<f64>() / l as f64;
    if !(tau > 0.0) {
        return Err(Error::Singular("Schur complement has zero diagonal".into()));
    }
    let mut s_g = s.clone();
    let shift = Complex64::new(tau / l as f64, 0.0);
    for i in 0..l {
        for j in 0..l {
            s_g[(i, j)] += shift;
        }
    }
    let lu = s_g.clone().lu();
    let inv = lu.try_inverse().ok_or_else(|| {
        Error::Singular("Schur complement is singular beyond the gauge kernel".into())
    })?;
    // crude condition estimate on the deflated operator
    let cond = max_abs(&s_g) * max_abs(&inv) * l as f64;
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Singular(format!(
            "Schur complement ill-conditioned (estimate {cond:.3e})"
        )));
    }
    let p = mean_zero_projector(l);
    Ok(&p * inv * &p)
}

/// Extract column `l` of a sparse N×L matrix as a dense vector.
fn sparse_column(m: &CsrMatrix, l: usize) -> Vec<Complex64> {
    let mut col = vec![Complex64::new(0.0, 0.0); m.nrows()];
    for (r, c, v) in m.iter() {
        if c == l {
            col[r] = v;
        }
    }
    col
}

/// Compute T by one PCG solve per electrode column (columns run in
/// parallel), then S, S⁺ and R = T·S⁺.
pub fn resistance_matrix(sys: &CemSystem, opts: &SolveOptions) -> Result<ResistanceMatrix> {
    opts.validate()?;
    let n = sys.n_nodes();
    let l = sys.n_electrodes();
    if l < 2 {
        return Err(Error::invalid("resistance matrix needs at least 2 electrodes"));
    }
    let columns: Vec<Result<PcgSolution>> = (0..l)
        .into_par_iter()
        .map(|li| pcg_solve(&sys.a, &sparse_column(&sys.b, li), opts))
        .collect();
    let mut t = DMatrix::zeros(n, l);
    let mut col_stats = Vec::with_capacity(l);
    for (li, sol) in columns.into_iter().enumerate() {
        let sol = sol?;
        for i in 0..n {
            t[(i, li)] = sol.x[i];
        }
        col_stats.push((sol.iterations, sol.residual));
    }
    // S = C − BᵀT
    let mut s = DMatrix::zeros(l, l);
    for i in 0..l {
        s[(i, i)] = sys.c_diag[i];
    }
    for (r, c, v) in sys.b.iter() {
        for m in 0..l {
            s[(c, m)] -= v * t[(r, m)];
        }
    }
    let s_plus = gauge_fixed_inverse(&s)?;
    let r = &t * &s_plus;
    Ok(ResistanceMatrix {
        t,
        s,
        s_plus,
        r,
        base_hash: sys.content_hash,
        col_stats,
        opts: *opts,
    })
}

impl ResistanceMatrix {
    pub fn n_nodes(&self) -> usize {
        self.r.nrows()
    }

    pub fn n_electrodes(&self) -> usize {
        self.r.ncols()
    }

    /// u = R·i, interior potentials (mV) for a current pattern (mA).
    pub fn apply(&self, pattern: &[Complex64]) -> Result<Vec<Complex64>> {
        if pattern.len() != self.n_electrodes() {
            return Err(Error::invalid("current pattern length mismatch"));
        }
        let i = nalgebra::DVector::from_column_slice(pattern);
        Ok((&self.r * i).iter().copied().collect())
    }
}

/// Reject patterns whose total current exceeds 1e-12·‖i‖.
pub fn check_kirchhoff(pattern: &[Complex64]) -> Result<()> {
    let total: Complex64 = pattern.iter().sum();
    let scale = l2(pattern);
    if total.norm() > 1e-12 * scale {
        return Err(Error::invalid(format!(
            "current pattern violates Kirchhoff's law: Σi = {total} (‖i‖ = {scale:.3e})"
        )));
    }
    Ok(())
}

/// Electrode voltages U = C⁻¹(i + Bᵀu) with u = R·i, reported in the
/// ΣUℓ = 0 gauge. Units follow the current pattern: mA in, mV out.
pub fn electrode_voltages(
    rm: &ResistanceMatrix,
    sys: &CemSystem,
    pattern: &[Complex64],
) -> Result<Vec<Complex64>> {
    if rm.base_hash != sys.content_hash {
        return Err(Error::BasePointMismatch(
            "resistance matrix was computed for a different system".into(),
        ));
    }
    check_kirchhoff(pattern)?;
    let u = rm.apply(pattern)?;
    let bt_u = sys.b.mul_transpose_vec(&u);
    let mut voltages: Vec<Complex64> = pattern
        .iter()
        .zip(&bt_u)
        .zip(&sys.c_diag)
        .map(|((i, btu), c)| (i + btu) / c)
        .collect();
    let mean: Complex64 = voltages.iter().sum::<Complex64>() / voltages.len() as f64;
    for v in &mut voltages {
        *v -= mean;
    }
    Ok(voltages)
}

/// Hard cap for the monolithic dense solve.
pub const DENSE_ORACLE_MAX_NODES: usize = 20_000;

/// Solve the full (N+L) block system [[A, −B], [−Bᵀ, C]]·(u; U) = (0; i) by
/// dense LU with partial pivoting and ground the solution so that ΣUℓ = 0
/// (the same constant is removed from u, matching the block kernel).
pub fn dense_direct_oracle(
    sys: &CemSystem,
    pattern: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let n = sys.n_nodes();
    let l = sys.n_electrodes();
    if n > DENSE_ORACLE_MAX_NODES {
        return Err(Error::invalid(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX_NODES} nodes, got {n}"
        )));
    }
    if pattern.len() != l {
        return Err(Error::invalid("current pattern length mismatch"));
    }
    let m = n + l;
    let mut block = DMatrix::zeros(m, m);
    for (r, c, v) in sys.a.iter() {
        block[(r, c)] = v;
    }
    for (r, c, v) in sys.b.iter() {
        block[(r, n + c)] = -v;
        block[(n + c, r)] = -v;
    }
    for li in 0..l {
        block[(n + li, n + li)] = sys.c_diag[li];
    }
    let mut rhs = nalgebra::DVector::zeros(m);
    for li in 0..l {
        rhs[n + li] = pattern[li];
    }
    let lu = block.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("dense CEM block system has an exactly zero pivot".into()))?;
    let mut u: Vec<Complex64> = sol.as_slice()[..n].to_vec();
    let mut voltages: Vec<Complex64> = sol.as_slice()[n..].to_vec();
    let shift: Complex64 = voltages.iter().sum::<Complex64>() / l as f64;
    for v in &mut voltages {
        *v -= shift;
    }
    for ui in &mut u {
        *ui -= shift;
    }
    Ok((u, voltages))
}

/// Interior potentials from the Schur route in the same gauge as the dense
/// oracle (ΣUℓ = 0; u shifted by the same constant, which `apply` already
/// produces since R = T·S⁺ carries the projector).
pub fn schur_route_potentials(
    rm: &ResistanceMatrix,
    sys: &CemSystem,
    pattern: &[Complex64],
) -> Result<Vec<Complex64>> {
    check_kirchhoff(pattern)?;
    if rm.base_hash != sys.content_hash {
        return Err(Error::BasePointMismatch(
            "resistance matrix was computed for a different system".into(),
        ));
    }
    rm.apply(pattern)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cem::assemble;
    use crate::electrode::{ElectrodeModel, ImpedanceVector};
    use crate::materials::{build_admittivity_field, AdmittivityField, TissueTable, GRAY_MATTER, SKIN, SKULL};
    use crate::mesh::{attach_electrode, generate_layered_sphere};
    use crate::sparse::TripletBuilder;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn desk_system(with_permittivity: bool) -> CemSystem {
        let mesh =
            generate_layered_sphere(&[4.0, 7.0, 10.0], &[GRAY_MATTER, SKULL, SKIN], 3.0).unwrap();
        let dirs = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        let patches: Vec<_> = dirs
            .iter()
            .enumerate()
            .map(|(k, d)| attach_electrode(&mesh, *d, 6.0, &format!("E{k}")).unwrap())
            .collect();
        let field = build_admittivity_field(&mesh, &TissueTable::builtin(), 1000.0, with_permittivity)
            .unwrap();
        let z = ImpedanceVector::from_models(&[ElectrodeModel::default(); 4]).unwrap();
        assemble(&mesh, &field, &patches, &z).unwrap()
    }

    #[test]
    fn pcg_zero_rhs_returns_zero_in_zero_iterations() {
        let sys = desk_system(true);
        let rhs = vec![c(0.0, 0.0); sys.n_nodes()];
        let sol = pcg_solve(&sys.a, &rhs, &SolveOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.x.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn pcg_diagonal_system_converges_immediately() {
        let n = 50;
        let mut tb = TripletBuilder::new(n, n);
        for i in 0..n {
            tb.push(i, i, c(2.0 + i as f64, 0.5));
        }
        let a = tb.build();
        let rhs: Vec<Complex64> = (0..n).map(|i| c(1.0 + i as f64 * 0.1, -0.2)).collect();
        let sol = pcg_solve(&a, &rhs, &SolveOptions::default()).unwrap();
        assert!(sol.iterations <= 2, "{} iterations", sol.iterations);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn pcg_recovers_manufactured_solution() {
        let sys = desk_system(true);
        let n = sys.n_nodes();
        // deterministic pseudo-random reference solution
        let x0: Vec<Complex64> = (0..n)
            .map(|i| {
                let s = (i as f64 * 0.7391).sin();
                let t = (i as f64 * 1.173).cos();
                c(s, 0.3 * t)
            })
            .collect();
        let rhs = sys.a.mul_vec(&x0);
        let opts = SolveOptions {
            rtol: 1e-12,
            ..Default::default()
        };
        let sol = pcg_solve(&sys.a, &rhs, &opts).unwrap();
        let err = sol
            .x
            .iter()
            .zip(&x0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let scale = x0.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err / scale < 1e-8, "relative error {}", err / scale);
    }

    #[test]
    fn pcg_nonconvergence_reports_iterations() {
        let sys = desk_system(true);
        let rhs: Vec<Complex64> = (0..sys.n_nodes()).map(|i| c((i % 7) as f64, 0.0)).collect();
        let opts = SolveOptions {
            rtol: 1e-14,
            max_iter: 2,
            preconditioner: Preconditioner::None,
        };
        match pcg_solve(&sys.a, &rhs, &opts) {
            Err(Error::NonConvergence {
                iterations,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn transfer_columns_satisfy_their_systems() {
        let sys = desk_system(true);
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        for li in 0..sys.n_electrodes() {
            let b = sparse_column(&sys.b, li);
            let tcol: Vec<Complex64> = (0..sys.n_nodes()).map(|i| rm.t[(i, li)]).collect();
            let ax = sys.a.mul_vec(&tcol);
            let mut diff = 0.0f64;
            for i in 0..sys.n_nodes() {
                diff += (ax[i] - b[i]).norm_sqr();
            }
            let rel = diff.sqrt() / l2(&b);
            assert!(rel <= 1e-10 * 1.5, "column {li} residual {rel}");
        }
    }

    #[test]
    fn resistance_identity_holds_on_kirchhoff_subspace() {
        let sys = desk_system(true);
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        let l = sys.n_electrodes();
        let p = mean_zero_projector(l);
        let lhs = &rm.r * &rm.s * &p;
        let rhs = &rm.t * &p;
        let rel = max_abs(&(lhs - rhs)) / max_abs(&rm.t);
        assert!(rel <= 10.0 * rm.opts.rtol, "projected R·S = T residual {rel}");
    }

    #[test]
    fn real_system_gives_real_resistance() {
        let mesh =
            generate_layered_sphere(&[4.0, 7.0, 10.0], &[GRAY_MATTER, SKULL, SKIN], 3.0).unwrap();
        let dirs = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        let patches: Vec<_> = dirs
            .iter()
            .enumerate()
            .map(|(k, d)| attach_electrode(&mesh, *d, 6.0, &format!("E{k}")).unwrap())
            .collect();
        let field =
            build_admittivity_field(&mesh, &TissueTable::builtin(), 1000.0, false).unwrap();
        let z = ImpedanceVector {
            z_ohm: vec![c(800.0, 0.0); 4],
        };
        let real_sys = assemble(&mesh, &field, &patches, &z).unwrap();
        let rm = resistance_matrix(&real_sys, &SolveOptions::default()).unwrap();
        let worst_im = rm.r.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        assert!(worst_im <= 1e-12 * max_abs(&rm.r));
    }

    #[test]
    fn permuting_electrodes_permutes_columns() {
        let mesh =
            generate_layered_sphere(&[4.0, 7.0, 10.0], &[GRAY_MATTER, SKULL, SKIN], 3.0).unwrap();
        let dirs = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        let field =
            build_admittivity_field(&mesh, &TissueTable::builtin(), 1000.0, true).unwrap();
        let patches: Vec<_> = dirs
            .iter()
            .enumerate()
            .map(|(k, d)| attach_electrode(&mesh, *d, 6.0, &format!("E{k}")).unwrap())
            .collect();
        let z = ImpedanceVector::from_models(&[ElectrodeModel::default(); 4]).unwrap();
        let sys = assemble(&mesh, &field, &patches, &z).unwrap();
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();

        let perm = [2usize, 0, 3, 1];
        let patches_p: Vec<_> = perm.iter().map(|&k| patches[k].clone()).collect();
        let sys_p = assemble(&mesh, &field, &patches_p, &z).unwrap();
        let rm_p = resistance_matrix(&sys_p, &SolveOptions::default()).unwrap();
        for (new_col, &old_col) in perm.iter().enumerate() {
            for i in 0..sys.n_nodes() {
                let d = (rm_p.r[(i, new_col)] - rm.r[(i, old_col)]).norm();
                assert!(d <= 1e-8 * max_abs(&rm.r), "column permutation mismatch");
            }
        }
    }

    #[test]
    fn oracle_matches_schur_route() {
        let sys = desk_system(true);
        let opts = SolveOptions {
            rtol: 1e-12,
            ..Default::default()
        };
        let rm = resistance_matrix(&sys, &opts).unwrap();
        let pattern = [c(-1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)];
        let u_schur = schur_route_potentials(&rm, &sys, &pattern).unwrap();
        let (u_dense, volt_dense) = dense_direct_oracle(&sys, &pattern).unwrap();
        let scale = u_dense.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = u_schur
            .iter()
            .zip(&u_dense)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err / scale <= 1e-8, "route disagreement {}", err / scale);
        let total: Complex64 = volt_dense.iter().sum();
        assert!(total.norm() <= 1e-12 * volt_dense.iter().map(|v| v.norm()).sum::<f64>());
    }

    #[test]
    fn oracle_zero_pattern_gives_zero() {
        let sys = desk_system(true);
        let pattern = vec![c(0.0, 0.0); 4];
        let (u, volt) = dense_direct_oracle(&sys, &pattern).unwrap();
        assert!(u.iter().all(|v| v.norm() < 1e-20));
        assert!(volt.iter().all(|v| v.norm() < 1e-20));
    }

    #[test]
    fn voltages_scale_linearly_and_sum_to_zero() {
        let sys = desk_system(true);
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        let i1 = [c(-1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)];
        let i2: Vec<Complex64> = i1.iter().map(|v| v * 3.0).collect();
        let u1 = electrode_voltages(&rm, &sys, &i1).unwrap();
        let u2 = electrode_voltages(&rm, &sys, &i2).unwrap();
        for (a, b) in u1.iter().zip(&u2) {
            assert!((a * 3.0 - b).norm() <= 1e-12 * b.norm().max(1e-30));
        }
        let total: Complex64 = u1.iter().sum();
        assert!(total.norm() <= 1e-12 * u1.iter().map(|v| v.norm()).sum::<f64>());
        // zero current → zero voltages
        let u0 = electrode_voltages(&rm, &sys, &[c(0.0, 0.0); 4]).unwrap();
        assert!(u0.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn kirchhoff_violations_rejected() {
        let sys = desk_system(true);
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        let bad = [c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(-0.5, 0.0)];
        assert!(electrode_voltages(&rm, &sys, &bad).is_err());
        assert!(check_kirchhoff(&bad).is_err());
    }

    #[test]
    fn reciprocity_at_uniform_impedance() {
        let sys = desk_system(true);
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        // Bᵀ R symmetric when all electrodes share one impedance
        let l = sys.n_electrodes();
        let bt_r = {
            let mut m = DMatrix::zeros(l, l);
            for (r0, c0, v) in sys.b.iter() {
                for m2 in 0..l {
                    m[(c0, m2)] += v * rm.r[(r0, m2)];
                }
            }
            m
        };
        let asym = max_abs(&(&bt_r - bt_r.transpose()));
        assert!(
            asym <= 10.0 * rm.opts.rtol.max(1e-12) * max_abs(&bt_r).max(1.0),
            "BᵀR asymmetry {asym}"
        );
    }

    #[test]
    fn resistance_linearity_is_exact_matrix_algebra() {
        let sys = desk_system(true);
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        let i1 = [c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let i2 = [c(0.0, 0.0), c(0.0, 0.0), c(-2.0, 0.0), c(2.0, 0.0)];
        let alpha = c(0.7, 0.0);
        let beta = c(-1.3, 0.0);
        let combo: Vec<Complex64> = i1
            .iter()
            .zip(&i2)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let u1 = rm.apply(&i1).unwrap();
        let u2 = rm.apply(&i2).unwrap();
        let uc = rm.apply(&combo).unwrap();
        let scale = uc.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for k in 0..uc.len() {
            let expect = alpha * u1[k] + beta * u2[k];
            assert!((uc[k] - expect).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn tightening_rtol_changes_little() {
        let mesh = generate_layered_sphere(&[10.0], &[GRAY_MATTER], 3.0).unwrap();
        let dirs = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
        let patches: Vec<_> = dirs
            .iter()
            .enumerate()
            .map(|(k, d)| attach_electrode(&mesh, *d, 6.0, &format!("E{k}")).unwrap())
            .collect();
        let field =
            build_admittivity_field(&mesh, &TissueTable::builtin(), 1000.0, true).unwrap();
        let z = ImpedanceVector::from_models(&[ElectrodeModel::default(); 4]).unwrap();
        let sys = assemble(&mesh, &field, &patches, &z).unwrap();
        let mut prev: Option<DMatrix<Complex64>> = None;
        let mut rtol = 1e-8;
        for _ in 0..3 {
            let rm = resistance_matrix(
                &sys,
                &SolveOptions {
                    rtol,
                    ..Default::default()
                },
            )
            .unwrap();
            if let Some(p) = prev.take() {
                let change = max_abs(&(&rm.r - &p)) / max_abs(&rm.r);
                // previous tolerance bounds the change after halving
                assert!(change < rtol * 2.0, "change {change} at rtol {rtol}");
            }
            prev = Some(rm.r.clone());
            rtol /= 2.0;
        }
    }

    #[test]
    fn too_few_electrodes_rejected() {
        let mesh = generate_layered_sphere(&[10.0], &[GRAY_MATTER], 3.0).unwrap();
        let patch = attach_electrode(&mesh, [1.0, 0.0, 0.0], 6.0, "only").unwrap();
        let field =
            build_admittivity_field(&mesh, &TissueTable::builtin(), 1000.0, true).unwrap();
        let z = ImpedanceVector::from_models(&[ElectrodeModel::default()]).unwrap();
        let sys = assemble(&mesh, &field, &[patch], &z).unwrap();
        assert!(resistance_matrix(&sys, &SolveOptions::default()).is_err());
    }

    #[test]
    fn mirror_symmetric_montage_gives_antisymmetric_voltages() {
        let mesh = generate_layered_sphere(&[10.0], &[GRAY_MATTER], 3.0).unwrap();
        let d: [f64; 3] = [1.0, 0.0, 0.0];
        let dm = [-d[0], d[1], d[2]];
        let patches = vec![
            attach_electrode(&mesh, d, 8.0, "R").unwrap(),
            attach_electrode(&mesh, dm, 8.0, "L").unwrap(),
        ];
        let field =
            build_admittivity_field(&mesh, &TissueTable::builtin(), 1000.0, true).unwrap();
        let z = ImpedanceVector::from_models(&[ElectrodeModel::default(); 2]).unwrap();
        let sys = assemble(&mesh, &field, &patches, &z).unwrap();
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        let u = electrode_voltages(&rm, &sys, &[c(-1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!((u[0] + u[1]).norm() <= 1e-12 * u[0].norm());
    }
}
