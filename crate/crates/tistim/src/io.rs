//! Text file formats: the mesh format, the coordinate (COO) matrix format,
//! legacy-VTK unstructured grids and small CSV products.
//!
//! All writers emit deterministic bytes; floats are printed with Rust's
//! shortest round-trip formatting, so write → read → write is bit-identical.
//!
//! Mesh format (line oriented):
//! ```text
//! tistim tetmesh 1
//! nodes <N>
//! <x> <y> <z>              × N, mm
//! tets <M>
//! <a> <b> <c> <d> <comp>   × M
//! tris <K>
//! <a> <b> <c> <owner_tet>  × K, outward oriented
//! patch <label> <n>
//! <tri index>              × n
//! ```
//!
//! Coordinate format:
//! ```text
//! tistim coo 1 <rows> <cols> <nnz>
//! <row> <col> <re> <im>    × nnz
//! ```

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTri, ElectrodePatch, TetMesh};
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::fmt::Write as _;
use std::path::Path;

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Mesh format
// ---------------------------------------------------------------------------

pub fn mesh_to_string(mesh: &TetMesh, patches: &[ElectrodePatch]) -> Result<String> {
    for p in patches {
        if p.label.is_empty() || p.label.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "patch label '{}' must be non-empty without whitespace",
                p.label
            )));
        }
    }
    let mut s = String::new();
    s.push_str("tistim tetmesh 1\n");
    let _ = writeln!(s, "nodes {}", mesh.nodes.len());
    for n in &mesh.nodes {
        let _ = writeln!(s, "{} {} {}", n[0], n[1], n[2]);
    }
    let _ = writeln!(s, "tets {}", mesh.tets.len());
    for (t, c) in mesh.tets.iter().zip(&mesh.compartment_id) {
        let _ = writeln!(s, "{} {} {} {} {}", t[0], t[1], t[2], t[3], c);
    }
    let _ = writeln!(s, "tris {}", mesh.boundary_tris.len());
    for tri in &mesh.boundary_tris {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            tri.nodes[0], tri.nodes[1], tri.nodes[2], tri.owner_tet
        );
    }
    for p in patches {
        let _ = writeln!(s, "patch {} {}", p.label, p.tri_indices.len());
        for &t in &p.tri_indices {
            let _ = writeln!(s, "{t}");
        }
    }
    Ok(s)
}

struct LineParser<'a> {
    path: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    lineno: usize,
}

impl<'a> LineParser<'a> {
    fn new(text: &'a str, path: &'a str) -> Self {
        LineParser {
            path,
            lines: text.lines().enumerate(),
            lineno: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line: self.lineno,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((n, line)) => {
                self.lineno = n + 1;
                Ok(line)
            }
            None => {
                self.lineno += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    fn next_opt(&mut self) -> Option<&'a str> {
        match self.lines.next() {
            Some((n, line)) => {
                self.lineno = n + 1;
                Some(line)
            }
            None => None,
        }
    }
}

fn parse_fields<T: std::str::FromStr>(parser: &LineParser, line: &str, n: usize) -> Result<Vec<T>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != n {
        return Err(parser.err(format!("expected {n} fields, found {}", fields.len())));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| parser.err(format!("cannot parse '{f}'")))
        })
        .collect()
}

pub fn mesh_from_string(text: &str, path: &str) -> Result<(TetMesh, Vec<ElectrodePatch>)> {
    let mut p = LineParser::new(text, path);
    let header = p.next_line()?;
    if header != "tistim tetmesh 1" {
        return Err(p.err("expected header 'tistim tetmesh 1'"));
    }
    let count_of = |p: &mut LineParser, key: &str| -> Result<usize> {
        let line = p.next_line()?;
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| p.err(format!("expected '{key} <count>'")))?;
        if k != key {
            return Err(p.err(format!("expected section '{key}', found '{k}'")));
        }
        v.parse::<usize>()
            .map_err(|_| p.err(format!("bad count '{v}'")))
    };

    let n_nodes = count_of(&mut p, "nodes")?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let line = p.next_line()?;
        let f: Vec<f64> = parse_fields(&p, line, 3)?;
        nodes.push([f[0], f[1], f[2]]);
    }
    let n_tets = count_of(&mut p, "tets")?;
    let mut tets = Vec::with_capacity(n_tets);
    let mut compartment_id = Vec::with_capacity(n_tets);
    for _ in 0..n_tets {
        let line = p.next_line()?;
        let f: Vec<usize> = parse_fields(&p, line, 5)?;
        tets.push([f[0], f[1], f[2], f[3]]);
        compartment_id.push(f[4] as u32);
    }
    let n_tris = count_of(&mut p, "tris")?;
    let mut boundary_tris = Vec::with_capacity(n_tris);
    for _ in 0..n_tris {
        let line = p.next_line()?;
        let f: Vec<usize> = parse_fields(&p, line, 4)?;
        boundary_tris.push(BoundaryTri {
            nodes: [f[0], f[1], f[2]],
            owner_tet: f[3],
        });
    }
    let mesh = TetMesh {
        nodes,
        tets,
        compartment_id,
        boundary_tris,
    };
    mesh.validate()?;

    let mut patches = Vec::new();
    while let Some(line) = p.next_opt() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "patch" {
            return Err(p.err("expected 'patch <label> <count>'"));
        }
        let label = fields[1].to_string();
        let count: usize = fields[2]
            .parse()
            .map_err(|_| p.err("bad patch triangle count"))?;
        let mut tri_indices = Vec::with_capacity(count);
        let mut area = 0.0;
        let mut center = [0.0f64; 3];
        for _ in 0..count {
            let line = p.next_line()?;
            let idx: usize = line
                .trim()
                .parse()
                .map_err(|_| p.err("bad triangle index"))?;
            if idx >= mesh.boundary_tris.len() {
                return Err(p.err(format!("patch triangle {idx} out of range")));
            }
            let a = mesh.tri_area(&mesh.boundary_tris[idx]);
            let c = mesh.tri_centroid(&mesh.boundary_tris[idx]);
            area += a;
            center = crate::mesh::add(center, crate::mesh::scale(c, a));
            tri_indices.push(idx);
        }
        if tri_indices.is_empty() {
            return Err(p.err(format!("patch '{label}' has no triangles")));
        }
        patches.push(ElectrodePatch {
            label,
            tri_indices,
            area_mm2: area,
            center: crate::mesh::scale(center, 1.0 / area),
        });
    }
    crate::mesh::validate_patches(&patches)?;
    Ok((mesh, patches))
}

// ---------------------------------------------------------------------------
// Coordinate format for sparse and dense complex matrices
// ---------------------------------------------------------------------------

pub fn csr_to_coo_string(m: &CsrMatrix) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "tistim coo 1 {} {} {}", m.nrows(), m.ncols(), m.nnz());
    for (r, c, v) in m.iter() {
        let _ = writeln!(s, "{r} {c} {} {}", v.re, v.im);
    }
    s
}

pub fn dense_to_coo_string(m: &DMatrix<Complex64>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "tistim coo 1 {} {} {}",
        m.nrows(),
        m.ncols(),
        m.nrows() * m.ncols()
    );
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            let _ = writeln!(s, "{r} {c} {} {}", v.re, v.im);
        }
    }
    s
}

pub fn dense_from_coo_string(text: &str, path: &str) -> Result<DMatrix<Complex64>> {
    let mut p = LineParser::new(text, path);
    let header = p.next_line()?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "tistim" || fields[1] != "coo" || fields[2] != "1" {
        return Err(p.err("expected header 'tistim coo 1 <rows> <cols> <nnz>'"));
    }
    let rows: usize = fields[3].parse().map_err(|_| p.err("bad row count"))?;
    let cols: usize = fields[4].parse().map_err(|_| p.err("bad col count"))?;
    let nnz: usize = fields[5].parse().map_err(|_| p.err("bad nnz"))?;
    let mut m = DMatrix::zeros(rows, cols);
    for _ in 0..nnz {
        let line = p.next_line()?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(p.err("expected 'row col re im'"));
        }
        let r: usize = f[0].parse().map_err(|_| p.err("bad row"))?;
        let c: usize = f[1].parse().map_err(|_| p.err("bad col"))?;
        let re: f64 = f[2].parse().map_err(|_| p.err("bad re"))?;
        let im: f64 = f[3].parse().map_err(|_| p.err("bad im"))?;
        if r >= rows || c >= cols {
            return Err(p.err("entry out of bounds"));
        }
        m[(r, c)] += Complex64::new(re, im);
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Legacy VTK unstructured grid with per-cell data
// ---------------------------------------------------------------------------

pub fn vtk_unstructured(
    title: &str,
    mesh: &TetMesh,
    cell_scalars: &[(&str, &[f64])],
    cell_vectors: &[(&str, &[[f64; 3]])],
) -> Result<String> {
    for (name, data) in cell_scalars {
        if data.len() != mesh.n_tets() {
            return Err(Error::invalid(format!(
                "cell scalar '{name}' has {} values for {} tets",
                data.len(),
                mesh.n_tets()
            )));
        }
    }
    for (name, data) in cell_vectors {
        if data.len() != mesh.n_tets() {
            return Err(Error::invalid(format!(
                "cell vector '{name}' has {} values for {} tets",
                data.len(),
                mesh.n_tets()
            )));
        }
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 2.0\n");
    let _ = writeln!(s, "{title}");
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.nodes.len());
    for n in &mesh.nodes {
        let _ = writeln!(s, "{} {} {}", n[0], n[1], n[2]);
    }
    let m = mesh.tets.len();
    let _ = writeln!(s, "CELLS {m} {}", 5 * m);
    for t in &mesh.tets {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {m}");
    for _ in 0..m {
        s.push_str("10\n");
    }
    if !cell_scalars.is_empty() || !cell_vectors.is_empty() {
        let _ = writeln!(s, "CELL_DATA {m}");
        for (name, data) in cell_scalars {
            let _ = writeln!(s, "SCALARS {name} double 1");
            s.push_str("LOOKUP_TABLE default\n");
            for v in *data {
                let _ = writeln!(s, "{v}");
            }
        }
        for (name, data) in cell_vectors {
            let _ = writeln!(s, "VECTORS {name} double");
            for v in *data {
                let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
            }
        }
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// CSV products
// ---------------------------------------------------------------------------

/// Per-tet scalar field as `tet,value` CSV.
pub fn per_tet_csv(values: &[f64]) -> String {
    let mut s = String::from("tet,value\n");
    for (t, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{t},{v}");
    }
    s
}

pub fn per_tet_from_csv(text: &str, path: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != "tet,value" {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: 1,
                    message: "expected header 'tet,value'".into(),
                });
            }
            continue;
        }
        let (idx, v) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: lineno + 1,
            message: "expected 'tet,value'".into(),
        })?;
        let idx: usize = idx.parse().map_err(|_| Error::Parse {
            path: path.to_string(),
            line: lineno + 1,
            message: "bad tet index".into(),
        })?;
        if idx != out.len() {
            return Err(Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: "tet indices must be consecutive from 0".into(),
            });
        }
        out.push(v.parse().map_err(|_| Error::Parse {
            path: path.to_string(),
            line: lineno + 1,
            message: "bad value".into(),
        })?);
    }
    Ok(out)
}

/// Solver statistics rows `matrix,column,iterations,residual`.
pub fn solver_stats_csv(rows: &[(String, usize, usize, f64)]) -> String {
    let mut s = String::from("matrix,column,iterations,residual\n");
    for (name, col, iters, res) in rows {
        let _ = writeln!(s, "{name},{col},{iters},{res:e}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::GRAY_MATTER;
    use crate::mesh::{attach_electrode, generate_layered_sphere};

    #[test]
    fn mesh_round_trip_is_bit_exact() {
        let mesh = generate_layered_sphere(&[6.0, 10.0], &[GRAY_MATTER, 1], 3.0).unwrap();
        let patches = vec![
            attach_electrode(&mesh, [1.0, 0.0, 0.0], 6.0, "TP9").unwrap(),
            attach_electrode(&mesh, [-1.0, 0.0, 0.0], 6.0, "C3").unwrap(),
        ];
        let text = mesh_to_string(&mesh, &patches).unwrap();
        let (mesh2, patches2) = mesh_from_string(&text, "mem").unwrap();
        let text2 = mesh_to_string(&mesh2, &patches2).unwrap();
        assert_eq!(text, text2);
        assert_eq!(mesh, mesh2);
        assert_eq!(patches[0].area_mm2, patches2[0].area_mm2);
    }

    #[test]
    fn mesh_parse_errors_carry_line_numbers() {
        let bad = "tistim tetmesh 1\nnodes 1\n0 0\n";
        match mesh_from_string(bad, "bad.txt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn whitespace_labels_rejected() {
        let mesh = generate_layered_sphere(&[10.0], &[GRAY_MATTER], 4.0).unwrap();
        let mut patch = attach_electrode(&mesh, [1.0, 0.0, 0.0], 8.0, "ok").unwrap();
        patch.label = "has space".into();
        assert!(mesh_to_string(&mesh, &[patch]).is_err());
    }

    #[test]
    fn coo_round_trip() {
        let mut m = DMatrix::zeros(3, 2);
        m[(0, 0)] = Complex64::new(1.5, -2.0);
        m[(2, 1)] = Complex64::new(0.0, 3.25);
        let text = dense_to_coo_string(&m);
        let m2 = dense_from_coo_string(&text, "mem").unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn vtk_has_expected_sections() {
        let mesh = generate_layered_sphere(&[10.0], &[GRAY_MATTER], 5.0).unwrap();
        let scalars: Vec<f64> = (0..mesh.n_tets()).map(|t| t as f64).collect();
        let vectors: Vec<[f64; 3]> = (0..mesh.n_tets()).map(|t| [t as f64, 0.0, 1.0]).collect();
        let vtk = vtk_unstructured(
            "fields",
            &mesh,
            &[("magnitude", &scalars)],
            &[("current", &vectors)],
        )
        .unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 2.0\nfields\nASCII\n"));
        for section in [
            "DATASET UNSTRUCTURED_GRID",
            "POINTS",
            "CELLS",
            "CELL_TYPES",
            "CELL_DATA",
            "SCALARS magnitude double 1",
            "VECTORS current double",
        ] {
            assert!(vtk.contains(section), "missing {section}");
        }
        // cell lines reference 4 nodes each
        assert!(vtk.contains("\n4 "));
    }

    #[test]
    fn per_tet_csv_round_trip() {
        let values = vec![0.0, 1.25e-4, 3.0];
        let text = per_tet_csv(&values);
        let back = per_tet_from_csv(&text, "mem").unwrap();
        assert_eq!(values, back);
    }
}
