//! Assembly of the sparse CEM finite-element blocks.
//!
//! The discrete system couples interior potentials u and electrode voltages U
//! through the block form [[A, −B], [−Bᵀ, C]]·(u; U) = (0; i) with
//!
//!   A_ij = ∫ ζ ∇ψᵢ·∇ψⱼ dV + Σℓ 1/(Zℓ|eℓ|) ∫_eℓ ψᵢψⱼ dS,
//!   B_iℓ = 1/(Zℓ|eℓ|) ∫_eℓ ψᵢ dS,
//!   C    = diag(1/Zℓ),
//!
//! all evaluated with exact closed-form P1 integrals. The Z-independent
//! factors Ã (volume stiffness), M̃⁽ℓ⁾ (per-electrode boundary mass) and B̃
//! (area-normalized boundary integrals, B = B̃·C) are kept for cheap
//! reassembly at new impedances and for the impedance derivatives.

use crate::electrode::ImpedanceVector;
use crate::error::{Error, Result};
use crate::materials::AdmittivityField;
use crate::mesh::{self, ElectrodePatch, TetMesh};
use crate::sparse::{CsrMatrix, TripletBuilder};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

/// Coordinates are mm while ζ is supplied in S/m.
const S_PER_M_TO_S_PER_MM: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CemSystem {
    /// N×N system block in 1/Ω, complex symmetric.
    pub a: CsrMatrix,
    /// N×L coupling block in 1/Ω; column ℓ is supported on patch-ℓ nodes.
    pub b: CsrMatrix,
    /// Diagonal of the L×L block, Cℓℓ = 1/Zℓ.
    pub c_diag: Vec<Complex64>,
    /// Volume stiffness Ã (independent of Z), 1/Ω.
    pub a_tilde: CsrMatrix,
    /// Boundary mass M̃⁽ℓ⁾ per electrode, mm².
    pub m_tilde: Vec<CsrMatrix>,
    /// Area-normalized boundary integrals, dimensionless; B = B̃·C.
    pub b_tilde: CsrMatrix,
    /// Contact areas |eℓ| in mm².
    pub areas_mm2: Vec<f64>,
    /// Sorted node indices per patch.
    pub patch_node_ids: Vec<Vec<usize>>,
    pub z: ImpedanceVector,
    /// Hash of (mesh, ζ, Z); downstream products check it to refuse mixing
    /// base points.
    pub content_hash: [u8; 32],
}

impl CemSystem {
    pub fn n_nodes(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_electrodes(&self) -> usize {
        self.c_diag.len()
    }
}

/// Volume stiffness Ã alone: Ã_ij = Σ_T ζ_T ∇ψᵢ·∇ψⱼ Vol(T).
pub fn assemble_volume_stiffness(mesh: &TetMesh, field: &AdmittivityField) -> Result<CsrMatrix> {
    if field.zeta_s_per_m.len() != mesh.n_tets() {
        return Err(Error::invalid(
            "admittivity field was not built on this mesh",
        ));
    }
    let n = mesh.n_nodes();
    let mut tb = TripletBuilder::new(n, n);
    for t in 0..mesh.n_tets() {
        let grads = mesh::p1_gradients(mesh, t)?;
        let vol = mesh.tet_signed_volume(t);
        let zeta_mm = field.zeta_s_per_m[t] * S_PER_M_TO_S_PER_MM;
        let nodes = mesh.tets[t];
        for i in 0..4 {
            for j in 0..4 {
                let gij = mesh::dot(grads[i], grads[j]) * vol;
                tb.push(nodes[i], nodes[j], zeta_mm * gij);
            }
        }
    }
    Ok(tb.build())
}

struct BoundaryFactors {
    /// (i, j, value) boundary-mass triplets per patch, value in mm².
    mass: Vec<Vec<(usize, usize, f64)>>,
    /// Per-node ∫ψ dS per patch, mm².
    loads: Vec<Vec<(usize, f64)>>,
    areas: Vec<f64>,
    nodes: Vec<Vec<usize>>,
}

fn boundary_factors(mesh: &TetMesh, patches: &[ElectrodePatch]) -> Result<BoundaryFactors> {
    let mut mass = Vec::with_capacity(patches.len());
    let mut loads = Vec::with_capacity(patches.len());
    let mut areas = Vec::with_capacity(patches.len());
    let mut nodes = Vec::with_capacity(patches.len());
    for patch in patches {
        let mut m = Vec::new();
        let mut q = Vec::new();
        let mut area = 0.0;
        for &ti in &patch.tri_indices {
            let tri = &mesh.boundary_tris[ti];
            let a = mesh.tri_area(tri);
            area += a;
            for i in 0..3 {
                q.push((tri.nodes[i], a / 3.0));
                for j in 0..3 {
                    // exact P1 surface integral: ∫ψᵢψⱼ = area/12·(1+δᵢⱼ)
                    let v = if i == j { a / 6.0 } else { a / 12.0 };
                    m.push((tri.nodes[i], tri.nodes[j], v));
                }
            }
        }
        if !(area > 0.0) {
            return Err(Error::mesh(format!(
                "electrode patch '{}' has zero contact area",
                patch.label
            )));
        }
        mass.push(m);
        loads.push(q);
        areas.push(area);
        nodes.push(mesh::patch_nodes(mesh, patch));
    }
    Ok(BoundaryFactors {
        mass,
        loads,
        areas,
        nodes,
    })
}

fn hash_system(
    mesh: &TetMesh,
    field: &AdmittivityField,
    patches: &[ElectrodePatch],
    z: &ImpedanceVector,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"tistim-cem-v1");
    h.update((mesh.n_nodes() as u64).to_le_bytes());
    for p in &mesh.nodes {
        for c in p {
            h.update(c.to_le_bytes());
        }
    }
    for (tet, comp) in mesh.tets.iter().zip(&mesh.compartment_id) {
        for &n in tet {
            h.update((n as u64).to_le_bytes());
        }
        h.update(comp.to_le_bytes());
    }
    for tri in &mesh.boundary_tris {
        for &n in &tri.nodes {
            h.update((n as u64).to_le_bytes());
        }
    }
    h.update(field.omega_rad_s.to_le_bytes());
    for zt in &field.zeta_s_per_m {
        h.update(zt.re.to_le_bytes());
        h.update(zt.im.to_le_bytes());
    }
    for p in patches {
        h.update(p.label.as_bytes());
        for &t in &p.tri_indices {
            h.update((t as u64).to_le_bytes());
        }
    }
    for zl in &z.z_ohm {
        h.update(zl.re.to_le_bytes());
        h.update(zl.im.to_le_bytes());
    }
    h.finalize().into()
}

/// Assemble the full CEM system together with its Z-independent factors.
pub fn assemble(
    mesh: &TetMesh,
    field: &AdmittivityField,
    patches: &[ElectrodePatch],
    z: &ImpedanceVector,
) -> Result<CemSystem> {
    if patches.is_empty() {
        return Err(Error::invalid("at least one electrode patch is required"));
    }
    if z.len() != patches.len() {
        return Err(Error::invalid(format!(
            "impedance vector length {} != electrode count {}",
            z.len(),
            patches.len()
        )));
    }
    z.validate()?;
    mesh::validate_patches(patches)?;

    let n = mesh.n_nodes();
    let l = patches.len();
    let a_tilde = assemble_volume_stiffness(mesh, field)?;
    let bf = boundary_factors(mesh, patches)?;

    // A = Ã + Σℓ 1/(Zℓ|eℓ|) M̃⁽ℓ⁾, accumulated in a fixed order.
    let mut a_builder = TripletBuilder::new(n, n);
    for (r, c, v) in a_tilde.iter() {
        a_builder.push(r, c, v);
    }
    let mut m_tilde = Vec::with_capacity(l);
    for (li, m) in bf.mass.iter().enumerate() {
        let scale = (z.z_ohm[li] * bf.areas[li]).inv();
        let mut mb = TripletBuilder::new(n, n);
        for &(i, j, v) in m {
            mb.push(i, j, Complex64::new(v, 0.0));
            a_builder.push(i, j, scale * v);
        }
        m_tilde.push(mb.build());
    }
    let a = a_builder.build();

    // B̃_iℓ = (1/|eℓ|)∫_eℓ ψᵢ dS and B = B̃·C.
    let mut bt_builder = TripletBuilder::new(n, l);
    let mut b_builder = TripletBuilder::new(n, l);
    for (li, q) in bf.loads.iter().enumerate() {
        let inv_area = 1.0 / bf.areas[li];
        let inv_z = z.z_ohm[li].inv();
        for &(i, v) in q {
            bt_builder.push(i, li, Complex64::new(v * inv_area, 0.0));
            b_builder.push(i, li, inv_z * (v * inv_area));
        }
    }

    let c_diag: Vec<Complex64> = z.z_ohm.iter().map(|zl| zl.inv()).collect();
    let content_hash = hash_system(mesh, field, patches, z);
    Ok(CemSystem {
        a,
        b: b_builder.build(),
        c_diag,
        a_tilde,
        m_tilde,
        b_tilde: bt_builder.build(),
        areas_mm2: bf.areas,
        patch_node_ids: bf.nodes,
        z: z.clone(),
        content_hash,
    })
}

impl CemSystem {
    /// Rebuild the Z-dependent blocks from the stored factors at a new
    /// impedance vector, leaving Ã, M̃⁽ℓ⁾ and B̃ untouched.
    pub fn with_impedances(
        &self,
        mesh: &TetMesh,
        field: &AdmittivityField,
        patches: &[ElectrodePatch],
        z: &ImpedanceVector,
    ) -> Result<CemSystem> {
        if z.len() != self.n_electrodes() {
            return Err(Error::invalid("impedance vector length mismatch"));
        }
        z.validate()?;
        let n = self.n_nodes();
        let l = self.n_electrodes();
        let mut a_builder = TripletBuilder::new(n, n);
        for (r, c, v) in self.a_tilde.iter() {
            a_builder.push(r, c, v);
        }
        for (li, m) in self.m_tilde.iter().enumerate() {
            let scale = (z.z_ohm[li] * self.areas_mm2[li]).inv();
            for (r, c, v) in m.iter() {
                a_builder.push(r, c, scale * v);
            }
        }
        let mut b_builder = TripletBuilder::new(n, l);
        for (r, c, v) in self.b_tilde.iter() {
            b_builder.push(r, c, v * z.z_ohm[c].inv());
        }
        let c_diag: Vec<Complex64> = z.z_ohm.iter().map(|zl| zl.inv()).collect();
        Ok(CemSystem {
            a: a_builder.build(),
            b: b_builder.build(),
            c_diag,
            a_tilde: self.a_tilde.clone(),
            m_tilde: self.m_tilde.clone(),
            b_tilde: self.b_tilde.clone(),
            areas_mm2: self.areas_mm2.clone(),
            patch_node_ids: self.patch_node_ids.clone(),
            z: z.clone(),
            content_hash: hash_system(mesh, field, patches, z),
        })
    }
}

/// Max-norm relative residual of A − Ã − Σℓ (1/(Zℓ|eℓ|)) M̃⁽ℓ⁾.
pub fn verify_factorization(sys: &CemSystem) -> f64 {
    use std::collections::BTreeMap;
    let mut residual: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    for (r, c, v) in sys.a.iter() {
        residual.insert((r, c), v);
    }
    for (r, c, v) in sys.a_tilde.iter() {
        *residual.entry((r, c)).or_insert(Complex64::new(0.0, 0.0)) -= v;
    }
    for (li, m) in sys.m_tilde.iter().enumerate() {
        let scale = (sys.z.z_ohm[li] * sys.areas_mm2[li]).inv();
        for (r, c, v) in m.iter() {
            *residual.entry((r, c)).or_insert(Complex64::new(0.0, 0.0)) -= scale * v;
        }
    }
    let worst = residual.values().map(|v| v.norm()).fold(0.0, f64::max);
    worst / sys.a.max_abs()
}
