//! Tetrahedral mesh representation, synthetic layered-sphere generation,
//! electrode patch attachment and P1 element geometry.
//!
//! The layered-sphere generator subdivides an octahedron onto the unit sphere
//! and extrudes it radially, splitting each geodesic prism into three
//! tetrahedra. The octahedral base is chosen because its subdivision never
//! produces an edge crossing a coordinate plane, so a montage mirrored across
//! x = 0 sees a mesh that is mirrored triangle-by-triangle with bit-exact
//! coordinates. All coordinates are millimetres.

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BTreeMap;

pub type Point = [f64; 3];

/// Degenerate-element threshold in mm³.
pub const MIN_TET_VOLUME: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTri {
    /// Outward-oriented node indices.
    pub nodes: [usize; 3],
    /// Index of the tet owning this face.
    pub owner_tet: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub nodes: Vec<Point>,
    /// Positively oriented node quadruples.
    pub tets: Vec<[usize; 4]>,
    /// One compartment label per tet.
    pub compartment_id: Vec<u32>,
    pub boundary_tris: Vec<BoundaryTri>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodePatch {
    pub label: String,
    /// Indices into `mesh.boundary_tris`.
    pub tri_indices: Vec<usize>,
    /// Contact area |e| in mm², sum of member triangle areas.
    pub area_mm2: f64,
    /// Area-weighted centroid of the member triangles.
    pub center: Point,
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Point) -> Point {
    scale(a, 1.0 / norm(a))
}

impl TetMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_nodes(&self, t: usize) -> [Point; 4] {
        let idx = self.tets[t];
        [
            self.nodes[idx[0]],
            self.nodes[idx[1]],
            self.nodes[idx[2]],
            self.nodes[idx[3]],
        ]
    }

    /// Signed volume in mm³; positive for correctly oriented tets.
    pub fn tet_signed_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tet_nodes(t);
        dot(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
    }

    pub fn tet_centroid(&self, t: usize) -> Point {
        let [a, b, c, d] = self.tet_nodes(t);
        [
            (a[0] + b[0] + c[0] + d[0]) / 4.0,
            (a[1] + b[1] + c[1] + d[1]) / 4.0,
            (a[2] + b[2] + c[2] + d[2]) / 4.0,
        ]
    }

    pub fn tri_points(&self, tri: &BoundaryTri) -> [Point; 3] {
        [
            self.nodes[tri.nodes[0]],
            self.nodes[tri.nodes[1]],
            self.nodes[tri.nodes[2]],
        ]
    }

    pub fn tri_area(&self, tri: &BoundaryTri) -> f64 {
        let [a, b, c] = self.tri_points(tri);
        norm(cross(sub(b, a), sub(c, a))) / 2.0
    }

    pub fn tri_centroid(&self, tri: &BoundaryTri) -> Point {
        let [a, b, c] = self.tri_points(tri);
        [
            (a[0] + b[0] + c[0]) / 3.0,
            (a[1] + b[1] + c[1]) / 3.0,
            (a[2] + b[2] + c[2]) / 3.0,
        ]
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_tets()).map(|t| self.tet_signed_volume(t)).sum()
    }

    /// Longest edge over all tets, a proxy for the element diameter.
    pub fn max_edge_len(&self) -> f64 {
        let mut longest = 0.0f64;
        for tet in &self.tets {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    longest = longest.max(norm(sub(self.nodes[tet[i]], self.nodes[tet[j]])));
                }
            }
        }
        longest
    }

    /// Structural invariant check: index ranges, orientation, boundary
    /// ownership. Compartment labels are checked against the tissue table at
    /// assembly time, not here.
    pub fn validate(&self) -> Result<()> {
        if self.compartment_id.len() != self.tets.len() {
            return Err(Error::mesh("compartment label count != tet count"));
        }
        for (t, tet) in self.tets.iter().enumerate() {
            for &n in tet {
                if n >= self.nodes.len() {
                    return Err(Error::mesh(format!("tet {t} references node {n} out of range")));
                }
            }
            let v = self.tet_signed_volume(t);
            if v <= MIN_TET_VOLUME {
                return Err(Error::mesh(format!(
                    "tet {t} has non-positive or degenerate volume {v:.3e} mm³"
                )));
            }
        }
        for (k, tri) in self.boundary_tris.iter().enumerate() {
            if tri.owner_tet >= self.tets.len() {
                return Err(Error::mesh(format!("boundary tri {k} owner out of range")));
            }
            let owner = self.tets[tri.owner_tet];
            for &n in &tri.nodes {
                if n >= self.nodes.len() {
                    return Err(Error::mesh(format!("boundary tri {k} node out of range")));
                }
                if !owner.contains(&n) {
                    return Err(Error::mesh(format!(
                        "boundary tri {k} is not a face of its owner tet"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Constant gradients of the four P1 barycentric basis functions, in 1/mm.
/// Their sum is the zero vector and ∇ψₖ·(xₖ − x_opposite) = 1.
pub fn p1_gradients(mesh: &TetMesh, tet: usize) -> Result<[Point; 4]> {
    let [a, b, c, d] = mesh.tet_nodes(tet);
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let e3 = sub(d, a);
    let vol6 = dot(e1, cross(e2, e3));
    if vol6.abs() / 6.0 < MIN_TET_VOLUME {
        return Err(Error::mesh(format!(
            "tet {tet} is degenerate (volume {:.3e} mm³)",
            vol6 / 6.0
        )));
    }
    let g1 = scale(cross(e2, e3), 1.0 / vol6);
    let g2 = scale(cross(e3, e1), 1.0 / vol6);
    let g3 = scale(cross(e1, e2), 1.0 / vol6);
    let g0 = [
        -(g1[0] + g2[0] + g3[0]),
        -(g1[1] + g2[1] + g3[1]),
        -(g1[2] + g2[2] + g3[2]),
    ];
    Ok([g0, g1, g2, g3])
}

/// Barycentric coordinates of `p` with respect to tet `t`.
pub fn barycentric(mesh: &TetMesh, t: usize, p: Point) -> [f64; 4] {
    let [a, b, c, d] = mesh.tet_nodes(t);
    let vol6 = dot(sub(b, a), cross(sub(c, a), sub(d, a)));
    let l1 = dot(sub(p, a), cross(sub(c, a), sub(d, a))) / vol6;
    let l2 = dot(sub(b, a), cross(sub(p, a), sub(d, a))) / vol6;
    let l3 = dot(sub(b, a), cross(sub(c, a), sub(p, a))) / vol6;
    [1.0 - l1 - l2 - l3, l1, l2, l3]
}

// ---------------------------------------------------------------------------
// Layered sphere generation
// ---------------------------------------------------------------------------

fn octasphere(subdiv: u32) -> (Vec<Point>, Vec<[usize; 3]>) {
    let mut verts: Vec<Point> = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    for _ in 0..subdiv {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let mut mid = |i: usize, j: usize, verts: &mut Vec<Point>| -> usize {
                let key = (i.min(j), i.max(j));
                *midpoint.entry(key).or_insert_with(|| {
                    let m = normalize(add(verts[i], verts[j]));
                    verts.push(m);
                    verts.len() - 1
                })
            };
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.push([a, ab, ca]);
            next.push([ab, b, bc]);
            next.push([ca, bc, c]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Reflection-invariant total order on unit-sphere vertices. Comparing
/// (|x|, y, z) gives the same order on a triangle and on its x-mirrored
/// image, which keeps the prism splitting pattern mirror symmetric.
fn surface_key_cmp(a: Point, b: Point) -> Ordering {
    let ka = (a[0].abs(), a[1], a[2]);
    let kb = (b[0].abs(), b[1], b[2]);
    ka.partial_cmp(&kb).expect("mesh coordinates are finite")
}

/// Generate a conforming tet mesh of nested spherical shells centred at the
/// origin. `radii` are strictly increasing outer radii in mm; each tet is
/// labelled with the compartment of the shell containing its centroid. The
/// outermost surface becomes `boundary_tris`.
pub fn generate_layered_sphere(
    radii: &[f64],
    compartment_ids: &[u32],
    target_edge_len: f64,
) -> Result<TetMesh> {
    if radii.is_empty() {
        return Err(Error::invalid("layered sphere needs at least one layer"));
    }
    if radii.len() != compartment_ids.len() {
        return Err(Error::invalid(
            "radii and compartment_ids must have the same length",
        ));
    }
    if !(target_edge_len > 0.0) {
        return Err(Error::invalid("target edge length must be positive"));
    }
    let mut prev = 0.0;
    for &r in radii {
        if r <= prev {
            return Err(Error::invalid(format!(
                "radii must be strictly increasing and positive, got {radii:?}"
            )));
        }
        prev = r;
    }
    if target_edge_len > radii[0] {
        return Err(Error::invalid(format!(
            "target edge length {target_edge_len} mm exceeds the innermost shell radius {} mm",
            radii[0]
        )));
    }

    let outer = *radii.last().unwrap();
    // Quarter-arc bound on the surface edge length after s subdivisions.
    let mut subdiv = 0u32;
    while std::f64::consts::FRAC_PI_2 * outer / (1u64 << subdiv) as f64 > target_edge_len {
        subdiv += 1;
        if subdiv > 8 {
            return Err(Error::invalid(
                "target edge length too small for the desk-scale generator (>8 subdivisions)",
            ));
        }
    }
    let (unit_verts, faces) = octasphere(subdiv);
    let nv = unit_verts.len();

    // Radial levels: every compartment interface is an exact level.
    let mut levels: Vec<(f64, u32)> = Vec::new(); // (radius, compartment of gap below)
    let mut inner = 0.0;
    for (shell, &r) in radii.iter().enumerate() {
        let thickness = r - inner;
        let steps = (thickness / target_edge_len).ceil().max(1.0) as usize;
        for k in 1..=steps {
            levels.push((inner + thickness * k as f64 / steps as f64, compartment_ids[shell]));
        }
        inner = r;
    }
    let n_levels = levels.len();

    let mut nodes: Vec<Point> = Vec::with_capacity(1 + n_levels * nv);
    nodes.push([0.0, 0.0, 0.0]);
    for &(r, _) in &levels {
        for v in &unit_verts {
            nodes.push(scale(*v, r));
        }
    }
    let node_at = |level: usize, v: usize| 1 + level * nv + v; // level is 0-based into `levels`

    let mut tets: Vec<[usize; 4]> = Vec::new();
    let mut compartment: Vec<u32> = Vec::new();

    // Core: center node to the first level.
    for &[a, b, c] in &faces {
        tets.push([0, node_at(0, a), node_at(0, b), node_at(0, c)]);
        compartment.push(levels[0].1);
    }

    // Shell gaps: one prism per face, split into three tets using the
    // key-sorted stair pattern (conforming across neighbouring prisms).
    for gap in 0..n_levels.saturating_sub(1) {
        let comp = levels[gap + 1].1;
        for face in &faces {
            let mut v = *face;
            v.sort_by(|&p, &q| surface_key_cmp(unit_verts[p], unit_verts[q]));
            let [v0, v1, v2] = v;
            let lo = |x: usize| node_at(gap, x);
            let hi = |x: usize| node_at(gap + 1, x);
            tets.push([lo(v0), lo(v1), lo(v2), hi(v0)]);
            tets.push([lo(v1), lo(v2), hi(v0), hi(v1)]);
            tets.push([lo(v2), hi(v0), hi(v1), hi(v2)]);
            compartment.push(comp);
            compartment.push(comp);
            compartment.push(comp);
        }
    }

    // Fix orientation to positive volume.
    let mut mesh = TetMesh {
        nodes,
        tets,
        compartment_id: compartment,
        boundary_tris: Vec::new(),
    };
    for t in 0..mesh.n_tets() {
        if mesh.tet_signed_volume(t) < 0.0 {
            mesh.tets[t].swap(2, 3);
        }
    }

    // Boundary: outermost level faces, oriented outward, each linked to the
    // tet of its prism (or core tet when there is a single level).
    let top = n_levels - 1;
    let mut tris = Vec::with_capacity(faces.len());
    for (f, face) in faces.iter().enumerate() {
        let owner = if n_levels == 1 {
            f
        } else {
            // third tet of the prism for this face in the last gap
            faces.len() + ((n_levels - 2) * faces.len() + f) * 3 + 2
        };
        let mut tri = [
            node_at(top, face[0]),
            node_at(top, face[1]),
            node_at(top, face[2]),
        ];
        let [a, b, c] = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let centroid = [
            (a[0] + b[0] + c[0]) / 3.0,
            (a[1] + b[1] + c[1]) / 3.0,
            (a[2] + b[2] + c[2]) / 3.0,
        ];
        if dot(cross(sub(b, a), sub(c, a)), centroid) < 0.0 {
            tri.swap(1, 2);
        }
        tris.push(BoundaryTri {
            nodes: tri,
            owner_tet: owner,
        });
    }
    mesh.boundary_tris = tris;
    mesh.validate()?;
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// Electrode patches
// ---------------------------------------------------------------------------

/// Select the boundary triangles whose centroids lie inside the geodesic
/// disc of the given diameter around the surface point hit by the ray from
/// the origin along `center_direction`.
pub fn attach_electrode(
    mesh: &TetMesh,
    center_direction: Point,
    diameter_mm: f64,
    label: &str,
) -> Result<ElectrodePatch> {
    let dn = norm(center_direction);
    if (dn - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "electrode '{label}': direction must be unit-norm (|d| = {dn})"
        )));
    }
    if !(diameter_mm > 0.0) {
        return Err(Error::invalid(format!(
            "electrode '{label}': diameter must be positive"
        )));
    }
    let radius = diameter_mm / 2.0;
    let mut tri_indices = Vec::new();
    let mut area = 0.0;
    let mut center = [0.0; 3];
    for (k, tri) in mesh.boundary_tris.iter().enumerate() {
        let c = mesh.tri_centroid(tri);
        let r = norm(c);
        let cosang = (dot(c, center_direction) / r).clamp(-1.0, 1.0);
        // geodesic distance from the ray hit point to the centroid
        if r * cosang.acos() <= radius {
            let a = mesh.tri_area(tri);
            tri_indices.push(k);
            area += a;
            center = add(center, scale(c, a));
        }
    }
    if tri_indices.is_empty() {
        return Err(Error::mesh(format!(
            "electrode patch '{label}' selected no boundary triangles (diameter {diameter_mm} mm too small for this mesh)"
        )));
    }
    Ok(ElectrodePatch {
        label: label.to_string(),
        tri_indices,
        area_mm2: area,
        center: scale(center, 1.0 / area),
    })
}

/// Patches must be pairwise disjoint triangle sets and non-empty.
pub fn validate_patches(patches: &[ElectrodePatch]) -> Result<()> {
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    for (p, patch) in patches.iter().enumerate() {
        if patch.tri_indices.is_empty() {
            return Err(Error::mesh(format!("electrode patch '{}' is empty", patch.label)));
        }
        for &t in &patch.tri_indices {
            if let Some(&other) = seen.get(&t) {
                return Err(Error::mesh(format!(
                    "electrode patches '{}' and '{}' overlap on boundary triangle {t}",
                    patches[other].label, patch.label
                )));
            }
            seen.insert(t, p);
        }
    }
    Ok(())
}

/// Sorted, deduplicated node indices touched by a patch.
pub fn patch_nodes(mesh: &TetMesh, patch: &ElectrodePatch) -> Vec<usize> {
    let mut nodes: Vec<usize> = patch
        .tri_indices
        .iter()
        .flat_map(|&t| mesh.boundary_tris[t].nodes)
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_ref_tet() -> TetMesh {
        TetMesh {
            nodes: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            tets: vec![[0, 1, 2, 3]],
            compartment_id: vec![1],
            boundary_tris: vec![],
        }
    }

    #[test]
    fn reference_tet_gradients() {
        let mesh = unit_ref_tet();
        let g = p1_gradients(&mesh, 0).unwrap();
        assert_eq!(g[0], [-1.0, -1.0, -1.0]);
        assert_eq!(g[1], [1.0, 0.0, 0.0]);
        assert_eq!(g[2], [0.0, 1.0, 0.0]);
        assert_eq!(g[3], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn gradients_sum_to_zero_on_arbitrary_tets() {
        let mesh = TetMesh {
            nodes: vec![
                [0.3, -1.2, 2.0],
                [4.1, 0.4, -0.3],
                [0.9, 3.8, 1.1],
                [-1.5, 0.2, 4.2],
            ],
            tets: vec![[0, 1, 2, 3]],
            compartment_id: vec![1],
            boundary_tris: vec![],
        };
        let g = p1_gradients(&mesh, 0).unwrap();
        for axis in 0..3 {
            let s: f64 = (0..4).map(|k| g[k][axis]).sum();
            assert!(s.abs() < 1e-12, "gradient sum {s}");
        }
        // duality: ∇ψₖ · (xₖ − xⱼ) = δ difference structure
        for k in 0..4 {
            for j in 0..4 {
                let e = sub(mesh.nodes[k], mesh.nodes[j]);
                let d = dot(g[k], e);
                let expected = if k == j { 0.0 } else { 1.0 };
                assert!((d - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_barycentric() {
        let mesh = TetMesh {
            nodes: vec![
                [0.1, 0.2, -0.4],
                [2.3, 0.1, 0.5],
                [0.7, 1.9, 0.2],
                [-0.2, 0.8, 2.4],
            ],
            tets: vec![[0, 1, 2, 3]],
            compartment_id: vec![1],
            boundary_tris: vec![],
        };
        let g = p1_gradients(&mesh, 0).unwrap();
        let p = mesh.tet_centroid(0);
        let h = 1e-6;
        for k in 0..4 {
            for axis in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[axis] += h;
                pm[axis] -= h;
                let fd =
                    (barycentric(&mesh, 0, pp)[k] - barycentric(&mesh, 0, pm)[k]) / (2.0 * h);
                assert!(
                    (fd - g[k][axis]).abs() <= 1e-6 * (1.0 + g[k][axis].abs()),
                    "fd {fd} vs analytic {}",
                    g[k][axis]
                );
            }
        }
    }

    #[test]
    fn degenerate_tet_rejected() {
        let mesh = TetMesh {
            nodes: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.5, 0.5, 0.0],
            ],
            tets: vec![[0, 1, 2, 3]],
            compartment_id: vec![1],
            boundary_tris: vec![],
        };
        assert!(p1_gradients(&mesh, 0).is_err());
    }

    #[test]
    fn three_layer_sphere_has_three_labels_and_positive_volumes() {
        let mesh = generate_layered_sphere(&[8.0, 9.0, 10.0], &[4, 2, 1], 2.0).unwrap();
        let mut labels: Vec<u32> = mesh.compartment_id.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels, vec![1, 2, 4]);
        for t in 0..mesh.n_tets() {
            assert!(mesh.tet_signed_volume(t) > 0.0);
        }
        mesh.validate().unwrap();
    }

    #[test]
    fn ball_volume_close_to_analytic() {
        let mesh = generate_layered_sphere(&[10.0], &[3], 3.0).unwrap();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        let v = mesh.total_volume();
        assert!(
            (v - analytic).abs() / analytic < 0.05,
            "mesh volume {v} vs analytic {analytic}"
        );
    }

    #[test]
    fn mesh_volume_error_decreases_under_refinement() {
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        let errs: Vec<f64> = [5.0, 2.5, 1.25]
            .iter()
            .map(|&e| {
                let m = generate_layered_sphere(&[10.0], &[3], e).unwrap();
                (m.total_volume() - analytic).abs() / analytic
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errors {errs:?}");
    }

    #[test]
    fn decreasing_radii_rejected() {
        assert!(generate_layered_sphere(&[10.0, 9.0], &[1, 2], 1.0).is_err());
    }

    #[test]
    fn no_layers_rejected() {
        assert!(generate_layered_sphere(&[], &[], 1.0).is_err());
    }

    #[test]
    fn oversized_edge_rejected() {
        assert!(generate_layered_sphere(&[8.0, 9.0, 10.0], &[1, 2, 3], 9.0).is_err());
    }

    #[test]
    fn boundary_tris_are_owned_faces_on_outer_surface() {
        let mesh = generate_layered_sphere(&[6.0, 10.0], &[2, 1], 3.0).unwrap();
        let outer = 10.0;
        for tri in &mesh.boundary_tris {
            for &n in &tri.nodes {
                assert!((norm(mesh.nodes[n]) - outer).abs() < 1e-9);
            }
            let owner = mesh.tets[tri.owner_tet];
            for &n in &tri.nodes {
                assert!(owner.contains(&n));
            }
        }
    }

    #[test]
    fn electrode_patch_area_close_to_disc() {
        let mesh = generate_layered_sphere(&[10.0], &[3], 1.5).unwrap();
        let patch = attach_electrode(&mesh, [1.0, 0.0, 0.0], 10.0, "A").unwrap();
        let disc = std::f64::consts::PI * 25.0;
        assert!(
            (patch.area_mm2 - disc).abs() / disc < 0.15,
            "patch area {} vs disc {disc}",
            patch.area_mm2
        );
    }

    #[test]
    fn opposite_patches_are_disjoint() {
        let mesh = generate_layered_sphere(&[10.0], &[3], 2.0).unwrap();
        let a = attach_electrode(&mesh, [1.0, 0.0, 0.0], 10.0, "A").unwrap();
        let b = attach_electrode(&mesh, [-1.0, 0.0, 0.0], 10.0, "B").unwrap();
        validate_patches(&[a, b]).unwrap();
    }

    #[test]
    fn tiny_electrode_diameter_is_an_error() {
        let mesh = generate_layered_sphere(&[10.0], &[3], 2.0).unwrap();
        let err = attach_electrode(&mesh, [0.0, 0.0, 1.0], 1e-4, "tiny").unwrap_err();
        assert!(err.to_string().contains("tiny"));
    }

    #[test]
    fn mirrored_mesh_nodes_are_bit_exact() {
        let mesh = generate_layered_sphere(&[4.0, 7.0, 10.0], &[4, 2, 1], 3.0).unwrap();
        // every node must have an exact x-mirrored twin
        let mut map = std::collections::HashMap::new();
        let canon = |x: f64| if x == 0.0 { 0.0f64 } else { x };
        for (i, n) in mesh.nodes.iter().enumerate() {
            let key = [
                canon(n[0]).to_bits(),
                canon(n[1]).to_bits(),
                canon(n[2]).to_bits(),
            ];
            map.insert(key, i);
        }
        for n in &mesh.nodes {
            let key = [
                canon(-n[0]).to_bits(),
                canon(n[1]).to_bits(),
                canon(n[2]).to_bits(),
            ];
            assert!(map.contains_key(&key), "missing mirror of {n:?}");
        }
        // and every tet must map onto a tet under the mirror
        let mut tet_set = std::collections::HashSet::new();
        for tet in &mesh.tets {
            let mut s = *tet;
            s.sort_unstable();
            tet_set.insert(s);
        }
        for tet in &mesh.tets {
            let mut m: Vec<usize> = tet
                .iter()
                .map(|&n| {
                    let p = mesh.nodes[n];
                    let key = [
                        canon(-p[0]).to_bits(),
                        canon(p[1]).to_bits(),
                        canon(p[2]).to_bits(),
                    ];
                    map[&key]
                })
                .collect();
            m.sort_unstable();
            assert!(
                tet_set.contains(&[m[0], m[1], m[2], m[3]]),
                "tet has no mirror twin"
            );
        }
    }
}
