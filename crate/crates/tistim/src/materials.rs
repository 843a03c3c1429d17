//! Tissue admittivity model: complex ζ(x, ω) = σ + iωε₀εr from tabulated
//! conductivity and relative permittivity, with log-log interpolation in
//! frequency between tabulated rows.

use crate::error::{Error, Result};
use crate::mesh::TetMesh;
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::io::BufRead;

/// Vacuum permittivity in F/m.
pub const EPSILON_0: f64 = 8.854e-12;

/// Builtin compartment labels of the five-tissue table.
pub const SKIN: u32 = 1;
pub const SKULL: u32 = 2;
pub const CSF: u32 = 3;
pub const GRAY_MATTER: u32 = 4;
pub const WHITE_MATTER: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueRow {
    pub frequency_hz: f64,
    pub sigma_s_per_m: f64,
    pub eps_r: f64,
}

/// Conductivity/permittivity table keyed by compartment id, rows sorted by
/// frequency. The builtin table covers skin, skull, CSF, grey and white
/// matter at 100 Hz, 1 kHz, 10 kHz and 100 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueTable {
    rows: BTreeMap<u32, Vec<TissueRow>>,
}

impl TissueTable {
    pub fn new() -> Self {
        TissueTable {
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, compartment: u32, row: TissueRow) -> Result<()> {
        if !(row.sigma_s_per_m > 0.0) || !(row.eps_r > 0.0) {
            return Err(Error::Tissue(format!(
                "compartment {compartment}: sigma and eps_r must be positive at {} Hz",
                row.frequency_hz
            )));
        }
        let rows = self.rows.entry(compartment).or_default();
        if let Some(last) = rows.last() {
            if row.frequency_hz <= last.frequency_hz {
                return Err(Error::Tissue(format!(
                    "compartment {compartment}: frequencies must be strictly increasing"
                )));
            }
        }
        rows.push(row);
        Ok(())
    }

    pub fn compartments(&self) -> impl Iterator<Item = u32> + '_ {
        self.rows.keys().copied()
    }

    pub fn rows(&self, compartment: u32) -> Option<&[TissueRow]> {
        self.rows.get(&compartment).map(|v| v.as_slice())
    }

    /// Five-compartment default table.
    pub fn builtin() -> Self {
        let mut t = TissueTable::new();
        let data: [(u32, [[f64; 3]; 4]); 5] = [
            (
                SKIN,
                [
                    [100.0, 2.0000e-4, 1135.9],
                    [1000.0, 2.0006e-4, 1135.6],
                    [10000.0, 2.0408e-4, 1133.6],
                    [100000.0, 4.5128e-4, 1119.2],
                ],
            ),
            (
                SKULL,
                [
                    [100.0, 2.0059e-2, 5852.8],
                    [1000.0, 2.0157e-2, 2702.4],
                    [10000.0, 2.0430e-2, 521.64],
                    [100000.0, 2.0791e-2, 227.64],
                ],
            ),
            (
                CSF,
                [
                    [100.0, 2.0, 102.0],
                    [1000.0, 2.0, 102.0],
                    [10000.0, 2.0, 102.0],
                    [100000.0, 2.0, 102.0],
                ],
            ),
            (
                GRAY_MATTER,
                [
                    [100.0, 8.9018e-2, 3906100.0],
                    [1000.0, 9.8805e-2, 164060.0],
                    [10000.0, 1.1487e-1, 22241.0],
                    [100000.0, 1.3366e-1, 3221.8],
                ],
            ),
            (
                WHITE_MATTER,
                [
                    [100.0, 5.8093e-2, 1667700.0],
                    [1000.0, 6.2574e-2, 69811.0],
                    [10000.0, 6.9481e-2, 12468.0],
                    [100000.0, 8.1845e-2, 2107.6],
                ],
            ),
        ];
        for (comp, rows) in data {
            for [f, sigma, eps] in rows {
                t.insert(
                    comp,
                    TissueRow {
                        frequency_hz: f,
                        sigma_s_per_m: sigma,
                        eps_r: eps,
                    },
                )
                .expect("builtin table is well formed");
            }
        }
        t
    }

    /// Load from CSV lines `compartment,frequency_hz,sigma_s_per_m,eps_r`.
    /// Lines starting with '#' and a leading header line are skipped.
    pub fn from_csv(reader: impl BufRead, path: &str) -> Result<Self> {
        let mut entries: Vec<(u32, TissueRow)> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if lineno == 0 && trimmed.to_ascii_lowercase().starts_with("compartment") {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: message.to_string(),
            };
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(parse_err("expected 4 comma-separated fields"));
            }
            let comp: u32 = fields[0].parse().map_err(|_| parse_err("bad compartment id"))?;
            let f: f64 = fields[1].parse().map_err(|_| parse_err("bad frequency"))?;
            let sigma: f64 = fields[2].parse().map_err(|_| parse_err("bad sigma"))?;
            let eps: f64 = fields[3].parse().map_err(|_| parse_err("bad eps_r"))?;
            entries.push((
                comp,
                TissueRow {
                    frequency_hz: f,
                    sigma_s_per_m: sigma,
                    eps_r: eps,
                },
            ));
        }
        entries.sort_by(|a, b| {
            (a.0, a.1.frequency_hz)
                .partial_cmp(&(b.0, b.1.frequency_hz))
                .unwrap()
        });
        let mut t = TissueTable::new();
        for (comp, row) in entries {
            t.insert(comp, row)?;
        }
        if t.rows.is_empty() {
            return Err(Error::Tissue(format!("{path}: empty tissue table")));
        }
        Ok(t)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("compartment,frequency_hz,sigma_s_per_m,eps_r\n");
        for (&comp, rows) in &self.rows {
            for r in rows {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    comp, r.frequency_hz, r.sigma_s_per_m, r.eps_r
                ));
            }
        }
        s
    }

    fn interpolate(&self, compartment: u32, f_hz: f64) -> Result<(f64, f64)> {
        let rows = self
            .rows
            .get(&compartment)
            .ok_or_else(|| Error::Tissue(format!("unknown compartment {compartment}")))?;
        if let Some(r) = rows.iter().find(|r| r.frequency_hz == f_hz) {
            return Ok((r.sigma_s_per_m, r.eps_r));
        }
        let lo = rows.first().unwrap().frequency_hz;
        let hi = rows.last().unwrap().frequency_hz;
        if f_hz < lo || f_hz > hi {
            return Err(Error::Tissue(format!(
                "frequency {f_hz} Hz outside tabulated range [{lo}, {hi}] for compartment {compartment}"
            )));
        }
        let k = rows.partition_point(|r| r.frequency_hz < f_hz);
        let (a, b) = (&rows[k - 1], &rows[k]);
        // log-log linear interpolation; tissue dispersion is sampled per decade
        let w = (f_hz.ln() - a.frequency_hz.ln()) / (b.frequency_hz.ln() - a.frequency_hz.ln());
        let sigma = (a.sigma_s_per_m.ln() * (1.0 - w) + b.sigma_s_per_m.ln() * w).exp();
        let eps = (a.eps_r.ln() * (1.0 - w) + b.eps_r.ln() * w).exp();
        Ok((sigma, eps))
    }
}

impl Default for TissueTable {
    fn default() -> Self {
        TissueTable::builtin()
    }
}

/// Complex admittivity ζ = σ(f) + i·2πf·ε₀·εr(f) in S/m. With the
/// permittivity flag off the imaginary part is exactly zero.
pub fn admittivity_at(
    table: &TissueTable,
    compartment: u32,
    f_hz: f64,
    with_permittivity: bool,
) -> Result<Complex64> {
    if !(f_hz > 0.0) {
        return Err(Error::Tissue(format!("frequency must be positive, got {f_hz}")));
    }
    let (sigma, eps_r) = table.interpolate(compartment, f_hz)?;
    let im = if with_permittivity {
        2.0 * std::f64::consts::PI * f_hz * EPSILON_0 * eps_r
    } else {
        0.0
    };
    Ok(Complex64::new(sigma, im))
}

/// Per-tet admittivity at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittivityField {
    /// Angular frequency ω = 2πf in rad/s.
    pub omega_rad_s: f64,
    /// One ζ per tet, in S/m.
    pub zeta_s_per_m: Vec<Complex64>,
}

impl AdmittivityField {
    pub fn frequency_hz(&self) -> f64 {
        self.omega_rad_s / (2.0 * std::f64::consts::PI)
    }
}

pub fn build_admittivity_field(
    mesh: &TetMesh,
    table: &TissueTable,
    f_hz: f64,
    with_permittivity: bool,
) -> Result<AdmittivityField> {
    let mut cache: BTreeMap<u32, Complex64> = BTreeMap::new();
    let mut zeta = Vec::with_capacity(mesh.n_tets());
    for (t, &comp) in mesh.compartment_id.iter().enumerate() {
        let z = match cache.get(&comp) {
            Some(&z) => z,
            None => {
                let z = admittivity_at(table, comp, f_hz, with_permittivity).map_err(|e| {
                    Error::Tissue(format!("tet {t} (compartment {comp}): {e}"))
                })?;
                cache.insert(comp, z);
                z
            }
        };
        zeta.push(z);
    }
    Ok(AdmittivityField {
        omega_rad_s: 2.0 * std::f64::consts::PI * f_hz,
        zeta_s_per_m: zeta,
    })
}
