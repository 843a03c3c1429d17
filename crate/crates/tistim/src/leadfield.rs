//! Conductance density, lead-field matrix and volume current densities.
//!
//! The conductance density D maps nodal potentials (mV) to elementwise
//! constant current densities −ζ∇u (mA/mm²); the lead field L = D·R maps
//! electrode current patterns (mA) straight to volume current densities.

use crate::error::{Error, Result};
use crate::materials::AdmittivityField;
use crate::mesh::{self, TetMesh};
use crate::solver::ResistanceMatrix;
use num_complex::Complex64;

const S_PER_M_TO_S_PER_MM: f64 = 1e-3;

/// One source pair: electrode indices sharing a current source at one
/// carrier frequency. Member amplitudes must sum to zero on their own.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePair {
    pub electrodes: Vec<usize>,
    pub frequency_hz: f64,
}

/// Electrode current amplitudes (mA) plus the pair grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentPattern {
    pub amplitudes_ma: Vec<Complex64>,
    pub pairs: Vec<SourcePair>,
}

impl CurrentPattern {
    /// Two-pair montage helper: pair k drives electrodes (2k, 2k+1).
    pub fn two_pairs(amplitudes_ma: [f64; 4], f1_hz: f64, f2_hz: f64) -> Self {
        CurrentPattern {
            amplitudes_ma: amplitudes_ma
                .iter()
                .map(|&a| Complex64::new(a, 0.0))
                .collect(),
            pairs: vec![
                SourcePair {
                    electrodes: vec![0, 1],
                    frequency_hz: f1_hz,
                },
                SourcePair {
                    electrodes: vec![2, 3],
                    frequency_hz: f2_hz,
                },
            ],
        }
    }

    pub fn validate(&self, n_electrodes: usize) -> Result<()> {
        if self.amplitudes_ma.len() != n_electrodes {
            return Err(Error::invalid(format!(
                "pattern has {} amplitudes for {n_electrodes} electrodes",
                self.amplitudes_ma.len()
            )));
        }
        let scale = self
            .amplitudes_ma
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt();
        let total: Complex64 = self.amplitudes_ma.iter().sum();
        if total.norm() > 1e-12 * scale.max(1e-300) {
            return Err(Error::invalid(format!(
                "current pattern violates Kirchhoff's law: Σi = {total}"
            )));
        }
        let mut seen = vec![false; n_electrodes];
        for (k, pair) in self.pairs.iter().enumerate() {
            if !(pair.frequency_hz > 0.0) {
                return Err(Error::invalid(format!("pair {k}: frequency must be positive")));
            }
            let mut pair_sum = Complex64::new(0.0, 0.0);
            for &e in &pair.electrodes {
                if e >= n_electrodes {
                    return Err(Error::invalid(format!("pair {k}: electrode {e} out of range")));
                }
                if seen[e] {
                    return Err(Error::invalid(format!(
                        "electrode {e} appears in more than one pair"
                    )));
                }
                seen[e] = true;
                pair_sum += self.amplitudes_ma[e];
            }
            if pair_sum.norm() > 1e-12 * scale.max(1e-300) {
                return Err(Error::invalid(format!(
                    "pair {k} does not sum to zero: {pair_sum}"
                )));
            }
        }
        Ok(())
    }

    /// Beat frequency |f₂ − f₁| of a two-pair pattern.
    pub fn beat_hz(&self) -> Option<f64> {
        match self.pairs.as_slice() {
            [a, b] => Some((a.frequency_hz - b.frequency_hz).abs()),
            _ => None,
        }
    }

    /// Amplitudes with every pair but `pair_idx` zeroed out.
    pub fn restricted_amplitudes(&self, pair_idx: usize) -> Vec<Complex64> {
        let mut amps = vec![Complex64::new(0.0, 0.0); self.amplitudes_ma.len()];
        for &e in &self.pairs[pair_idx].electrodes {
            amps[e] = self.amplitudes_ma[e];
        }
        amps
    }
}

/// Block-sparse conductance density: per tet a 3×4 block −ζ∇ψₖ over the
/// tet's nodes, in S/mm².
#[derive(Debug, Clone)]
pub struct ConductanceDensity {
    blocks: Vec<[[Complex64; 3]; 4]>,
    tet_nodes: Vec<[usize; 4]>,
    n_nodes: usize,
    frequency_hz: f64,
}

pub fn conductance_density(mesh: &TetMesh, field: &AdmittivityField) -> Result<ConductanceDensity> {
    if field.zeta_s_per_m.len() != mesh.n_tets() {
        return Err(Error::invalid("admittivity field was not built on this mesh"));
    }
    let mut blocks = Vec::with_capacity(mesh.n_tets());
    for t in 0..mesh.n_tets() {
        let grads = mesh::p1_gradients(mesh, t)?;
        let zeta_mm = field.zeta_s_per_m[t] * S_PER_M_TO_S_PER_MM;
        let mut block = [[Complex64::new(0.0, 0.0); 3]; 4];
        for k in 0..4 {
            for axis in 0..3 {
                block[k][axis] = -zeta_mm * grads[k][axis];
            }
        }
        blocks.push(block);
    }
    Ok(ConductanceDensity {
        blocks,
        tet_nodes: mesh.tets.clone(),
        n_nodes: mesh.n_nodes(),
        frequency_hz: field.frequency_hz(),
    })
}

impl ConductanceDensity {
    pub fn n_tets(&self) -> usize {
        self.blocks.len()
    }

    /// Per-tet current density −ζ∇u for a nodal potential vector.
    pub fn apply(&self, u: &[Complex64]) -> Result<Vec<[Complex64; 3]>> {
        if u.len() != self.n_nodes {
            return Err(Error::invalid("potential vector length mismatch"));
        }
        let mut out = Vec::with_capacity(self.blocks.len());
        for (block, nodes) in self.blocks.iter().zip(&self.tet_nodes) {
            let mut j = [Complex64::new(0.0, 0.0); 3];
            for k in 0..4 {
                let uk = u[nodes[k]];
                for axis in 0..3 {
                    j[axis] += block[k][axis] * uk;
                }
            }
            out.push(j);
        }
        Ok(out)
    }
}

/// Lead field L = D·R: per tet a 3×L complex block, 1/mm². Applying it to a
/// current pattern in mA yields mA/mm².
#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    /// Layout: values[(tet*3 + axis)*n_cols + col].
    pub values: Vec<Complex64>,
    pub n_cols: usize,
    pub frequency_hz: f64,
}

impl LeadField {
    pub fn n_tets(&self) -> usize {
        self.values.len() / (3 * self.n_cols)
    }

    pub fn at(&self, tet: usize, axis: usize, col: usize) -> Complex64 {
        self.values[(tet * 3 + axis) * self.n_cols + col]
    }

    /// Per-tet Frobenius magnitude over the 3×L block (used for the
    /// column-norm style comparisons).
    pub fn per_tet_magnitude(&self) -> Vec<f64> {
        (0..self.n_tets())
            .map(|t| {
                let mut acc = 0.0;
                for axis in 0..3 {
                    for c in 0..self.n_cols {
                        acc += self.at(t, axis, c).norm_sqr();
                    }
                }
                acc.sqrt()
            })
            .collect()
    }

    /// Largest column 2-norm, the norm used for reported lead-field sizes.
    pub fn max_column_norm(&self) -> f64 {
        (0..self.n_cols)
            .map(|c| {
                (0..self.n_tets())
                    .map(|t| {
                        (0..3).map(|ax| self.at(t, ax, c).norm_sqr()).sum::<f64>()
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// L = D·R, tagged with the conductance density's base frequency.
pub fn lead_field(d: &ConductanceDensity, rm: &ResistanceMatrix) -> Result<LeadField> {
    lead_field_of(d, &rm.r)
}

/// L = D·M for an arbitrary N×L potential map M (used for both exact and
/// linearized resistance matrices).
pub fn lead_field_of(
    d: &ConductanceDensity,
    potential_map: &nalgebra::DMatrix<Complex64>,
) -> Result<LeadField> {
    if potential_map.nrows() != d.n_nodes {
        return Err(Error::invalid(
            "resistance matrix row count does not match the conductance density",
        ));
    }
    let l = potential_map.ncols();
    let mut values = vec![Complex64::new(0.0, 0.0); d.blocks.len() * 3 * l];
    for (t, (block, nodes)) in d.blocks.iter().zip(&d.tet_nodes).enumerate() {
        for axis in 0..3 {
            for col in 0..l {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..4 {
                    acc += block[k][axis] * potential_map[(nodes[k], col)];
                }
                values[(t * 3 + axis) * l + col] = acc;
            }
        }
    }
    Ok(LeadField {
        values,
        n_cols: l,
        frequency_hz: d.frequency_hz,
    })
}

/// Per-tet complex current density vectors, mA/mm².
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeCurrentField {
    pub vectors: Vec<[Complex64; 3]>,
    pub frequency_hz: f64,
}

impl VolumeCurrentField {
    pub fn n_tets(&self) -> usize {
        self.vectors.len()
    }

    /// Per-tet Euclidean magnitude |J| over the complex components.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.vectors
            .iter()
            .map(|v| (v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()).sqrt())
            .collect()
    }
}

/// Jv = L·i for a validated current pattern.
pub fn volume_current(lf: &LeadField, pattern: &CurrentPattern) -> Result<VolumeCurrentField> {
    pattern.validate(lf.n_cols)?;
    Ok(apply_lead_field(lf, &pattern.amplitudes_ma))
}

/// Jv = L·i for a raw amplitude vector (callers have validated Kirchhoff).
pub fn apply_lead_field(lf: &LeadField, amplitudes: &[Complex64]) -> VolumeCurrentField {
    assert_eq!(amplitudes.len(), lf.n_cols);
    let mut vectors = Vec::with_capacity(lf.n_tets());
    for t in 0..lf.n_tets() {
        let mut j = [Complex64::new(0.0, 0.0); 3];
        for axis in 0..3 {
            for (c, amp) in amplitudes.iter().enumerate() {
                j[axis] += lf.at(t, axis, c) * amp;
            }
        }
        vectors.push(j);
    }
    VolumeCurrentField {
        vectors,
        frequency_hz: lf.frequency_hz,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cem::assemble;
    use crate::electrode::{ElectrodeModel, ImpedanceVector};
    use crate::materials::{build_admittivity_field, TissueTable, GRAY_MATTER};
    use crate::mesh::{attach_electrode, generate_layered_sphere};
    use crate::solver::{resistance_matrix, SolveOptions};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ball_with_unit_zeta() -> (TetMesh, AdmittivityField) {
        let mesh = generate_layered_sphere(&[10.0], &[GRAY_MATTER], 3.0).unwrap();
        // ζ = 1000 S/m = 1 S/mm so the numbers below come out unscaled
        let field = AdmittivityField {
            omega_rad_s: 0.0,
            zeta_s_per_m: vec![c(1000.0, 0.0); mesh.n_tets()],
        };
        (mesh, field)
    }

    #[test]
    fn constant_potential_has_no_current() {
        let (mesh, field) = ball_with_unit_zeta();
        let d = conductance_density(&mesh, &field).unwrap();
        let u = vec![c(1.0, 0.0); mesh.n_nodes()];
        for j in d.apply(&u).unwrap() {
            for comp in j {
                assert!(comp.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_potential_gives_uniform_current() {
        let (mesh, field) = ball_with_unit_zeta();
        let d = conductance_density(&mesh, &field).unwrap();
        let u: Vec<Complex64> = mesh.nodes.iter().map(|p| c(p[0], 0.0)).collect();
        for j in d.apply(&u).unwrap() {
            assert!((j[0] - c(-1.0, 0.0)).norm() < 1e-10, "jx {}", j[0]);
            assert!(j[1].norm() < 1e-10 && j[2].norm() < 1e-10);
        }
    }

    #[test]
    fn doubling_zeta_doubles_density() {
        let (mesh, field) = ball_with_unit_zeta();
        let field2 = AdmittivityField {
            omega_rad_s: field.omega_rad_s,
            zeta_s_per_m: field.zeta_s_per_m.iter().map(|z| z * 2.0).collect(),
        };
        let d1 = conductance_density(&mesh, &field).unwrap();
        let d2 = conductance_density(&mesh, &field2).unwrap();
        let u: Vec<Complex64> = mesh.nodes.iter().map(|p| c(p[1] - 0.3 * p[2], 0.0)).collect();
        let j1 = d1.apply(&u).unwrap();
        let j2 = d2.apply(&u).unwrap();
        for (a, b) in j1.iter().zip(&j2) {
            for axis in 0..3 {
                assert_eq!(a[axis] * 2.0, b[axis]);
            }
        }
    }

    fn four_electrode_fixture() -> (TetMesh, CemSystem, ConductanceDensity, ResistanceMatrix) {
        let mesh = generate_layered_sphere(&[10.0], &[GRAY_MATTER], 3.0).unwrap();
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
            build_admittivity_field(&mesh, &TissueTable::builtin(), 1000.0, true).unwrap();
        let z = ImpedanceVector::from_models(&[ElectrodeModel::default(); 4]).unwrap();
        let sys = assemble(&mesh, &field, &patches, &z).unwrap();
        let d = conductance_density(&mesh, &field).unwrap();
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        (mesh, sys, d, rm)
    }

    #[test]
    fn lead_field_is_associative_with_apply() {
        let (_, _, d, rm) = four_electrode_fixture();
        let lf = lead_field_of(&d, &rm.r).unwrap();
        let pattern = CurrentPattern::two_pairs([-1.0, 1.0, -1.0, 1.0], 1000.0, 1010.0);
        let jv = volume_current(&lf, &pattern).unwrap();
        // D·(R·i) must equal (D·R)·i
        let u = rm.apply(&pattern.amplitudes_ma).unwrap();
        let direct = d.apply(&u).unwrap();
        let scale = jv.magnitudes().iter().cloned().fold(0.0, f64::max);
        for (a, b) in jv.vectors.iter().zip(&direct) {
            for axis in 0..3 {
                assert!((a[axis] - b[axis]).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn real_system_gives_real_lead_field() {
        let mesh = generate_layered_sphere(&[10.0], &[GRAY_MATTER], 3.0).unwrap();
        let patches = vec![
            attach_electrode(&mesh, [1.0, 0.0, 0.0], 6.0, "a").unwrap(),
            attach_electrode(&mesh, [-1.0, 0.0, 0.0], 6.0, "b").unwrap(),
        ];
        let field =
            build_admittivity_field(&mesh, &TissueTable::builtin(), 1000.0, false).unwrap();
        let z = ImpedanceVector {
            z_ohm: vec![c(900.0, 0.0); 2],
        };
        let sys = assemble(&mesh, &field, &patches, &z).unwrap();
        let rm = resistance_matrix(&sys, &SolveOptions::default()).unwrap();
        let d = conductance_density(&mesh, &field).unwrap();
        let lf = lead_field_of(&d, &rm.r).unwrap();
        let scale = lf.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for v in &lf.values {
            assert!(v.im.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn strongest_current_sits_next_to_the_patches() {
        let (mesh, sys, d, rm) = four_electrode_fixture();
        let lf = lead_field_of(&d, &rm.r).unwrap();
        let pattern = CurrentPattern::two_pairs([-1.0, 1.0, 0.0, 0.0], 1000.0, 1000.0);
        let jv = volume_current(&lf, &pattern).unwrap();
        let mags = jv.magnitudes();
        let argmax = (0..mags.len())
            .max_by(|&a, &b| mags[a].partial_cmp(&mags[b]).unwrap())
            .unwrap();
        // the strongest tet must touch one of the two active patch node sets
        let tet = mesh.tets[argmax];
        let touches = sys.patch_node_ids[0]
            .iter()
            .chain(sys.patch_node_ids[1].iter())
            .any(|n| tet.contains(n));
        assert!(touches, "argmax tet {argmax} is not adjacent to a patch");
    }

    #[test]
    fn superposition_is_exact() {
        let (_, _, d, rm) = four_electrode_fixture();
        let lf = lead_field_of(&d, &rm.r).unwrap();
        let p1 = CurrentPattern::two_pairs([-1.0, 1.0, 0.0, 0.0], 1000.0, 1010.0);
        let p2 = CurrentPattern::two_pairs([0.0, 0.0, -2.0, 2.0], 1000.0, 1010.0);
        let sum = CurrentPattern::two_pairs([-1.0, 1.0, -2.0, 2.0], 1000.0, 1010.0);
        let j1 = volume_current(&lf, &p1).unwrap();
        let j2 = volume_current(&lf, &p2).unwrap();
        let js = volume_current(&lf, &sum).unwrap();
        for t in 0..js.n_tets() {
            for axis in 0..3 {
                assert_eq!(js.vectors[t][axis], j1.vectors[t][axis] + j2.vectors[t][axis]);
            }
        }
        // zero pattern → zero field; scaling is exact
        let zero = volume_current(
            &lf,
            &CurrentPattern::two_pairs([0.0, 0.0, 0.0, 0.0], 1000.0, 1010.0),
        )
        .unwrap();
        assert!(zero.vectors.iter().all(|v| v.iter().all(|z| z.norm() == 0.0)));
        let doubled = apply_lead_field(&lf, &[c(-2.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        for t in 0..doubled.n_tets() {
            for axis in 0..3 {
                assert_eq!(doubled.vectors[t][axis], j1.vectors[t][axis] * 2.0);
            }
        }
    }

    #[test]
    fn kirchhoff_violating_pattern_rejected() {
        let (_, _, d, rm) = four_electrode_fixture();
        let lf = lead_field_of(&d, &rm.r).unwrap();
        let mut pattern = CurrentPattern::two_pairs([-1.0, 1.0, -1.0, 1.0], 1000.0, 1010.0);
        pattern.amplitudes_ma[2] = c(-0.5, 0.0);
        assert!(volume_current(&lf, &pattern).is_err());
    }

    #[test]
    fn pattern_validation_catches_pair_violations() {
        // total sums to zero but the pairs do not
        let pattern = CurrentPattern::two_pairs([-1.0, 0.5, -0.5, 1.0], 1000.0, 1010.0);
        assert!(pattern.validate(4).is_err());
        let ok = CurrentPattern::two_pairs([-0.5, 0.5, -1.5, 1.5], 1000.0, 1010.0);
        ok.validate(4).unwrap();
        assert_eq!(ok.beat_hz(), Some(10.0));
    }

    #[test]
    fn lead_field_magnitude_decays_inward_on_homogeneous_ball() {
        let (mesh, _, d, rm) = four_electrode_fixture();
        let lf = lead_field_of(&d, &rm.r).unwrap();
        let pattern = CurrentPattern::two_pairs([-1.0, 1.0, -1.0, 1.0], 1000.0, 1000.0);
        let jv = volume_current(&lf, &pattern).unwrap();
        let mags = jv.magnitudes();
        // bucket tets by centroid radius into four bands and compare maxima
        let mut bands = vec![0.0f64; 4];
        for t in 0..mesh.n_tets() {
            let r = crate::mesh::norm(mesh.tet_centroid(t));
            let band = ((r / 10.0) * 4.0).min(3.999) as usize;
            bands[band] = bands[band].max(mags[t]);
        }
        for k in 1..4 {
            assert!(
                bands[k] >= bands[k - 1],
                "band maxima not decaying inward: {bands:?}"
            );
        }
    }
}
