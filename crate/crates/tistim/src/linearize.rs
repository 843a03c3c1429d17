//! First-order surrogate: partial derivatives of the CEM blocks and the
//! resistance matrix with respect to a single electrode impedance, and the
//! linearized resistance update R(Z+dZ) ≈ R(Z) + Σℓ ∂R/∂Zℓ·dZℓ.
//!
//! Perturbation directions are real contact-resistance changes dRc. All block
//! dependencies on Zℓ are through 1/Zℓ, so the real-directional derivatives
//! coincide with the holomorphic ones:
//!
//!   ∂A/∂Zℓ = −(1/(Zℓ²|eℓ|)) M̃⁽ℓ⁾          (patch-local support)
//!   ∂B/∂Zℓ = −(1/Zℓ²) B̃⁽ℓ⁾                (column ℓ only)
//!   ∂C/∂Zℓ = −(1/Zℓ²) I⁽ℓ⁾
//!   ∂S/∂Zℓ = ∂C/∂Zℓ − (∂B/∂Zℓ)ᵀT + Tᵀ(∂A/∂Zℓ)T − Tᵀ(∂B/∂Zℓ)
//!   ∂R/∂Zℓ = −A⁻¹(∂A/∂Zℓ)R + A⁻¹(∂B/∂Zℓ)S⁺ − R(∂S/∂Zℓ)S⁺
//!
//! each validated against central finite differences. The ∂A term exploits
//! the patch-local support: when a patch touches fewer nodes than there are
//! electrodes, A⁻¹M̃⁽ℓ⁾ is solved column-by-column over patch nodes only.

use crate::cem::CemSystem;
use crate::error::{Error, Result};
use crate::solver::{pcg_solve, ResistanceMatrix, SolveOptions};
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

/// ∂R/∂Zℓ at a fixed base point, for one selected electrode.
#[derive(Debug, Clone)]
pub struct ImpedanceJacobian {
    pub electrode: usize,
    /// Base impedance vector the derivative was taken at.
    pub z0: Vec<Complex64>,
    /// N×L derivative matrix, Ω/Ω.
    pub d_r: DMatrix<Complex64>,
    pub base_hash: [u8; 32],
}

fn check_electrode(sys: &CemSystem, l: usize) -> Result<()> {
    if l >= sys.n_electrodes() {
        return Err(Error::invalid(format!(
            "electrode index {l} out of range (L = {})",
            sys.n_electrodes()
        )));
    }
    Ok(())
}

/// −(1/(Zℓ²|eℓ|))·M̃⁽ℓ⁾, supported on patch-ℓ nodes only.
pub fn d_a_d_z(sys: &CemSystem, l: usize) -> Result<CsrMatrix> {
    check_electrode(sys, l)?;
    let z = sys.z.z_ohm[l];
    let scale = -(z * z * sys.areas_mm2[l]).inv();
    Ok(sys.m_tilde[l].scale(scale))
}

/// −(1/Zℓ²)·B̃⁽ℓ⁾ as a dense column (all other columns are zero).
pub fn d_b_d_z(sys: &CemSystem, l: usize) -> Result<Vec<Complex64>> {
    check_electrode(sys, l)?;
    let z = sys.z.z_ohm[l];
    let scale = -(z * z).inv();
    let mut col = vec![Complex64::new(0.0, 0.0); sys.n_nodes()];
    for (r, c, v) in sys.b_tilde.iter() {
        if c == l {
            col[r] = scale * v;
        }
    }
    Ok(col)
}

/// Diagonal of ∂C/∂Zℓ; only entry ℓ is nonzero, −1/Zℓ².
pub fn d_c_d_z(sys: &CemSystem, l: usize) -> Result<Vec<Complex64>> {
    check_electrode(sys, l)?;
    let z = sys.z.z_ohm[l];
    let mut diag = vec![Complex64::new(0.0, 0.0); sys.n_electrodes()];
    diag[l] = -(z * z).inv();
    Ok(diag)
}

/// ∂S/∂Zℓ assembled from the base-point transfer matrix.
pub fn d_s_d_z(sys: &CemSystem, rm: &ResistanceMatrix, l: usize) -> Result<DMatrix<Complex64>> {
    check_electrode(sys, l)?;
    if rm.base_hash != sys.content_hash {
        return Err(Error::BasePointMismatch(
            "resistance matrix does not belong to this system".into(),
        ));
    }
    let nl = sys.n_electrodes();
    let n = sys.n_nodes();
    let z = sys.z.z_ohm[l];
    let scale_b = -(z * z).inv();
    let scale_a = -(z * z * sys.areas_mm2[l]).inv();

    let mut ds = DMatrix::zeros(nl, nl);
    // ∂C/∂Zℓ
    ds[(l, l)] += scale_b;
    // b̃ℓᵀT (row) and Tᵀb̃ℓ (column)
    let mut bt_row = vec![Complex64::new(0.0, 0.0); nl];
    for (r, c, v) in sys.b_tilde.iter() {
        if c == l {
            for m in 0..nl {
                bt_row[m] += v * rm.t[(r, m)];
            }
        }
    }
    for m in 0..nl {
        // −(∂B/∂Zℓ)ᵀT contributes to row ℓ, −Tᵀ(∂B/∂Zℓ) to column ℓ
        ds[(l, m)] -= scale_b * bt_row[m];
        ds[(m, l)] -= scale_b * bt_row[m];
    }
    // Tᵀ(∂A/∂Zℓ)T via Y = M̃⁽ℓ⁾·T
    let mut y: DMatrix<Complex64> = DMatrix::zeros(n, nl);
    for (r, c, v) in sys.m_tilde[l].iter() {
        for m in 0..nl {
            y[(r, m)] += v * rm.t[(c, m)];
        }
    }
    for i in 0..nl {
        for j in 0..nl {
            let mut acc = Complex64::new(0.0, 0.0);
            for &node in &sys.patch_node_ids[l] {
                acc += rm.t[(node, i)] * y[(node, j)];
            }
            ds[(i, j)] += scale_a * acc;
        }
    }
    Ok(ds)
}

/// ∂R/∂Zℓ by PCG solves against the derivative blocks.
pub fn d_r_d_z(
    rm: &ResistanceMatrix,
    sys: &CemSystem,
    l: usize,
    opts: &SolveOptions,
) -> Result<ImpedanceJacobian> {
    check_electrode(sys, l)?;
    if rm.base_hash != sys.content_hash {
        return Err(Error::BasePointMismatch(
            "resistance matrix does not belong to this system".into(),
        ));
    }
    let n = sys.n_nodes();
    let nl = sys.n_electrodes();
    let z = sys.z.z_ohm[l];
    let scale_a = -(z * z * sys.areas_mm2[l]).inv();
    let scale_b = -(z * z).inv();
    let patch = &sys.patch_node_ids[l];

    // term1 = −A⁻¹ (∂A/∂Zℓ) R = −scale_a · A⁻¹ (M̃⁽ℓ⁾ R)
    let term1 = if patch.len() <= nl {
        // solve per patch-node column of M̃⁽ℓ⁾, then recombine with R rows
        let cols: Vec<Result<Vec<Complex64>>> = patch
            .par_iter()
            .map(|&node| {
                let mut rhs = vec![Complex64::new(0.0, 0.0); n];
                for (r, c, v) in sys.m_tilde[l].iter() {
                    if c == node {
                        rhs[r] = v;
                    }
                }
                pcg_solve(&sys.a, &rhs, opts).map(|s| s.x)
            })
            .collect();
        let mut w = DMatrix::zeros(n, patch.len());
        for (k, col) in cols.into_iter().enumerate() {
            let col = col?;
            for i in 0..n {
                w[(i, k)] = col[i];
            }
        }
        let mut r_patch = DMatrix::zeros(patch.len(), nl);
        for (k, &node) in patch.iter().enumerate() {
            for m in 0..nl {
                r_patch[(k, m)] = rm.r[(node, m)];
            }
        }
        w * r_patch * (-scale_a)
    } else {
        // X = M̃⁽ℓ⁾ R (N×L, rows on patch nodes), then L solves
        let mut x = DMatrix::zeros(n, nl);
        for (r, c, v) in sys.m_tilde[l].iter() {
            for m in 0..nl {
                x[(r, m)] += v * rm.r[(c, m)];
            }
        }
        let cols: Vec<Result<Vec<Complex64>>> = (0..nl)
            .into_par_iter()
            .map(|m| {
                let rhs: Vec<Complex64> = (0..n).map(|i| x[(i, m)]).collect();
                pcg_solve(&sys.a, &rhs, opts).map(|s| s.x)
            })
            .collect();
        let mut t1 = DMatrix::zeros(n, nl);
        for (m, col) in cols.into_iter().enumerate() {
            let col = col?;
            for i in 0..n {
                t1[(i, m)] = col[i];
            }
        }
        t1 * (-scale_a)
    };

    // term2 = A⁻¹ (∂B/∂Zℓ) S⁺ = scale_b · (A⁻¹ b̃ℓ) ⊗ (row ℓ of S⁺)
    let db_col = d_b_d_z(sys, l)?;
    let rhs: Vec<Complex64> = db_col.iter().map(|v| v / scale_b).collect();
    let v_sol = pcg_solve(&sys.a, &rhs, opts)?.x;
    let mut term2 = DMatrix::zeros(n, nl);
    for i in 0..n {
        for m in 0..nl {
            term2[(i, m)] = scale_b * v_sol[i] * rm.s_plus[(l, m)];
        }
    }

    // term3 = −R (∂S/∂Zℓ) S⁺
    let ds = d_s_d_z(sys, rm, l)?;
    let term3 = -(&rm.r * (&ds * &rm.s_plus));

    Ok(ImpedanceJacobian {
        electrode: l,
        z0: sys.z.z_ohm.clone(),
        d_r: term1 + term2 + term3,
        base_hash: sys.content_hash,
    })
}

/// R(Z+dZ) ≈ R(Z) + Σℓ ∂R/∂Zℓ·dZℓ for real contact-resistance changes.
/// With all dZ = 0 the base matrix is returned bit-identically.
pub fn linearized_r(
    rm: &ResistanceMatrix,
    updates: &[(&ImpedanceJacobian, f64)],
) -> Result<DMatrix<Complex64>> {
    for (jac, _) in updates {
        if jac.base_hash != rm.base_hash {
            return Err(Error::BasePointMismatch(format!(
                "jacobian for electrode {} was computed at a different base point",
                jac.electrode
            )));
        }
    }
    if updates.iter().all(|&(_, dz)| dz == 0.0) {
        return Ok(rm.r.clone());
    }
    let mut out = rm.r.clone();
    for (jac, dz) in updates {
        out += jac.d_r.map(|v| v * *dz);
    }
    Ok(out)
}
