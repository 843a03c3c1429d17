//! Batch pipeline: run configuration, the staged experiment flow
//! (assemble → solve → lead fields → interference → linearization
//! comparisons), a content-hashed product manifest, and product comparison.

use crate::cem::{assemble, verify_factorization, CemSystem};
use crate::electrode::{impedance_of_f, CapacitorSign, ElectrodeModel, ImpedanceVector};
use crate::error::{Error, Result};
use crate::interference::{interference_field, EnvelopeField};
use crate::io;
use crate::leadfield::{
    apply_lead_field, conductance_density, lead_field, lead_field_of, ConductanceDensity,
    CurrentPattern, LeadField, SourcePair,
};
use crate::linearize::{d_r_d_z, linearized_r};
use crate::materials::{build_admittivity_field, TissueTable};
use crate::mesh::{attach_electrode, generate_layered_sphere, ElectrodePatch, TetMesh};
use crate::metrics::DiffReport;
use crate::solver::{resistance_matrix, ResistanceMatrix, SolveOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    File {
        file: String,
    },
    Sphere {
        radii_mm: Vec<f64>,
        compartments: Vec<u32>,
        edge_mm: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TissueConfig {
    /// "builtin" or a path to a tissue CSV.
    #[serde(default = "default_tissue_source")]
    pub source: String,
    #[serde(default)]
    pub with_permittivity: bool,
}

fn default_tissue_source() -> String {
    "builtin".into()
}

impl Default for TissueConfig {
    fn default() -> Self {
        TissueConfig {
            source: default_tissue_source(),
            with_permittivity: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElectrodeConfig {
    pub label: String,
    pub direction: [f64; 3],
    pub diameter_mm: f64,
    #[serde(default = "default_rc")]
    pub rc_ohm: f64,
}

fn default_rc() -> f64 {
    270.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElectrodeModelConfig {
    #[serde(default = "default_rdl")]
    pub rdl_ohm: f64,
    #[serde(default = "default_cdl")]
    pub cdl_farad: f64,
    #[serde(default)]
    pub capacitor_sign: CapacitorSign,
}

fn default_rdl() -> f64 {
    10_000.0
}

fn default_cdl() -> f64 {
    1.0e-7
}

impl Default for ElectrodeModelConfig {
    fn default() -> Self {
        ElectrodeModelConfig {
            rdl_ohm: default_rdl(),
            cdl_farad: default_cdl(),
            capacitor_sign: CapacitorSign::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriveConfig {
    pub f_hz: f64,
    pub beat_hz: f64,
    /// Two electrode-label pairs sharing the two current sources.
    pub pairs: Vec<[String; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternConfig {
    pub name: String,
    pub amplitudes_ma: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub electrode: String,
    pub d_rc_ohm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsConfig {
    #[serde(default = "default_field_db")]
    pub field_db: f64,
    #[serde(default = "default_interference_db")]
    pub interference_db: f64,
}

fn default_field_db() -> f64 {
    -35.0
}

fn default_interference_db() -> f64 {
    -18.0
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            field_db: default_field_db(),
            interference_db: default_interference_db(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mesh: MeshSource,
    #[serde(default)]
    pub tissue: TissueConfig,
    pub electrodes: Vec<ElectrodeConfig>,
    #[serde(default)]
    pub electrode_model: ElectrodeModelConfig,
    pub drive: DriveConfig,
    #[serde(default)]
    pub patterns: Vec<PatternConfig>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        RunConfig::from_toml_str(&io::read_file(path)?, &path.display().to_string())
    }

    pub fn electrode_index(&self, label: &str) -> Result<usize> {
        self.electrodes
            .iter()
            .position(|e| e.label == label)
            .ok_or_else(|| Error::invalid(format!("unknown electrode label '{label}'")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.electrodes.is_empty() {
            return Err(Error::invalid("at least one electrode is required"));
        }
        let mut labels = std::collections::BTreeSet::new();
        for e in &self.electrodes {
            if e.label.is_empty() || e.label.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "electrode label '{}' must be non-empty without whitespace",
                    e.label
                )));
            }
            if !labels.insert(e.label.clone()) {
                return Err(Error::invalid(format!("duplicate electrode label '{}'", e.label)));
            }
            if !(e.rc_ohm > 0.0) {
                return Err(Error::invalid(format!(
                    "electrode '{}': Rc must be positive",
                    e.label
                )));
            }
        }
        if !(self.drive.f_hz > 0.0) {
            return Err(Error::invalid("drive frequency must be positive"));
        }
        if self.drive.beat_hz < 0.0 {
            return Err(Error::invalid("beat frequency must be nonnegative"));
        }
        if self.drive.pairs.len() != 2 {
            return Err(Error::invalid("exactly two source pairs are required"));
        }
        let mut in_pair = std::collections::BTreeSet::new();
        for pair in &self.drive.pairs {
            for label in pair {
                self.electrode_index(label)?;
                if !in_pair.insert(label.clone()) {
                    return Err(Error::invalid(format!(
                        "electrode '{label}' appears in more than one pair"
                    )));
                }
            }
        }
        for p in &self.patterns {
            if p.name.is_empty() || p.name.chars().any(char::is_whitespace) {
                return Err(Error::invalid("pattern names must be non-empty without whitespace"));
            }
            self.current_pattern(p)?.validate(self.electrodes.len())?;
        }
        for q in &self.perturbations {
            let idx = self.electrode_index(&q.electrode)?;
            if !(self.electrodes[idx].rc_ohm + q.d_rc_ohm > 0.0) {
                return Err(Error::invalid(format!(
                    "perturbation on '{}' drives Rc nonpositive",
                    q.electrode
                )));
            }
        }
        if !(self.metrics.field_db < 0.0 && self.metrics.interference_db < 0.0) {
            return Err(Error::invalid("metric dynamic ranges must be negative dB"));
        }
        self.solver.validate()?;
        Ok(())
    }

    /// Resolve a pattern config into an index-based `CurrentPattern`.
    pub fn current_pattern(&self, p: &PatternConfig) -> Result<CurrentPattern> {
        if p.amplitudes_ma.len() != self.electrodes.len() {
            return Err(Error::invalid(format!(
                "pattern '{}' has {} amplitudes for {} electrodes",
                p.name,
                p.amplitudes_ma.len(),
                self.electrodes.len()
            )));
        }
        let f1 = self.drive.f_hz;
        let f2 = self.drive.f_hz + self.drive.beat_hz;
        let mut pairs = Vec::new();
        for (k, pair) in self.drive.pairs.iter().enumerate() {
            pairs.push(SourcePair {
                electrodes: vec![
                    self.electrode_index(&pair[0])?,
                    self.electrode_index(&pair[1])?,
                ],
                frequency_hz: if k == 0 { f1 } else { f2 },
            });
        }
        Ok(CurrentPattern {
            amplitudes_ma: p
                .amplitudes_ma
                .iter()
                .map(|&a| num_complex::Complex64::new(a, 0.0))
                .collect(),
            pairs,
        })
    }

    /// Per-electrode double-layer models at the given frequency.
    pub fn electrode_models(&self, f_hz: f64) -> Vec<ElectrodeModel> {
        self.electrodes
            .iter()
            .map(|e| ElectrodeModel {
                rc_ohm: e.rc_ohm,
                rdl_ohm: self.electrode_model.rdl_ohm,
                cdl_farad: self.electrode_model.cdl_farad,
                f_hz,
                capacitor_sign: self.electrode_model.capacitor_sign,
            })
            .collect()
    }

    pub fn hash_hex(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ProductEntry {
    pub sha256_hex: String,
    pub bytes: u64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_hash: String,
    pub mesh_hash: String,
    pub complete: bool,
    pub error: Option<String>,
    /// (stage name, wall seconds), in execution order.
    pub stages: Vec<(String, f64)>,
    pub products: Vec<ProductEntry>,
}

impl RunManifest {
    pub fn to_string(&self) -> String {
        let mut s = String::from("tistim manifest 1\n");
        let _ = writeln!(s, "config_hash {}", self.config_hash);
        let _ = writeln!(s, "mesh_hash {}", self.mesh_hash);
        let _ = writeln!(s, "status {}", if self.complete { "complete" } else { "incomplete" });
        if let Some(e) = &self.error {
            let _ = writeln!(s, "error {}", e.replace('\n', " "));
        }
        for (stage, secs) in &self.stages {
            let _ = writeln!(s, "stage {stage} {secs:.6}");
        }
        for p in &self.products {
            let _ = writeln!(s, "product {} {} {}", p.sha256_hex, p.bytes, p.path);
        }
        s
    }

    pub fn from_string(text: &str, path: &str) -> Result<RunManifest> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or_default();
        if header != "tistim manifest 1" {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: "expected header 'tistim manifest 1'".into(),
            });
        }
        let mut m = RunManifest {
            config_hash: String::new(),
            mesh_hash: String::new(),
            complete: false,
            error: None,
            stages: Vec::new(),
            products: Vec::new(),
        };
        for (n, line) in lines {
            let perr = |msg: &str| Error::Parse {
                path: path.into(),
                line: n + 1,
                message: msg.into(),
            };
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("config_hash") => m.config_hash = fields.next().ok_or_else(|| perr("missing hash"))?.into(),
                Some("mesh_hash") => m.mesh_hash = fields.next().ok_or_else(|| perr("missing hash"))?.into(),
                Some("status") => m.complete = fields.next() == Some("complete"),
                Some("error") => m.error = Some(fields.collect::<Vec<_>>().join(" ")),
                Some("stage") => {
                    let name = fields.next().ok_or_else(|| perr("missing stage name"))?;
                    let secs: f64 = fields
                        .next()
                        .ok_or_else(|| perr("missing stage seconds"))?
                        .parse()
                        .map_err(|_| perr("bad seconds"))?;
                    m.stages.push((name.into(), secs));
                }
                Some("product") => {
                    let sha = fields.next().ok_or_else(|| perr("missing sha"))?;
                    let bytes: u64 = fields
                        .next()
                        .ok_or_else(|| perr("missing size"))?
                        .parse()
                        .map_err(|_| perr("bad size"))?;
                    let rel: Vec<&str> = fields.collect();
                    if rel.is_empty() {
                        return Err(perr("missing product path"));
                    }
                    m.products.push(ProductEntry {
                        sha256_hex: sha.into(),
                        bytes,
                        path: rel.join(" "),
                    });
                }
                Some(other) => return Err(perr(&format!("unknown record '{other}'"))),
                None => continue,
            }
        }
        Ok(m)
    }

    /// Check that every listed product exists with the recorded hash.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for p in &self.products {
            let path = out_dir.join(&p.path);
            let data = std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            if data.len() as u64 != p.bytes {
                return Err(Error::invalid(format!(
                    "product {} has {} bytes, manifest says {}",
                    p.path,
                    data.len(),
                    p.bytes
                )));
            }
            let mut h = Sha256::new();
            h.update(&data);
            let got = hex::encode(h.finalize());
            if got != p.sha256_hex {
                return Err(Error::invalid(format!("product {} hash mismatch", p.path)));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Staged run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageLimit {
    Assemble,
    Solve,
    LeadField,
    Interfere,
    Full,
}

struct RunState {
    out_dir: PathBuf,
    products: Vec<ProductEntry>,
    stages: Vec<(String, f64)>,
    stats: Vec<(String, usize, usize, f64)>,
}

impl RunState {
    fn emit(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.out_dir.join(rel);
        io::write_file(&path, contents)?;
        let mut h = Sha256::new();
        h.update(contents.as_bytes());
        self.products.push(ProductEntry {
            sha256_hex: hex::encode(h.finalize()),
            bytes: contents.len() as u64,
            path: rel.to_string(),
        });
        Ok(())
    }

    fn record_rm_stats(&mut self, name: &str, rm: &ResistanceMatrix) {
        for (col, (iters, res)) in rm.col_stats.iter().enumerate() {
            self.stats.push((name.to_string(), col, *iters, *res));
        }
    }
}

fn sanitize_number(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}").replace('.', "p").replace('-', "m")
    }
}

struct Assembled {
    mesh: TetMesh,
    patches: Vec<ElectrodePatch>,
    /// One system per carrier frequency (f, f+Δf).
    systems: [CemSystem; 2],
    fields: [crate::materials::AdmittivityField; 2],
    freqs: [f64; 2],
    mesh_hash: String,
}

fn load_mesh(cfg: &RunConfig) -> Result<(TetMesh, Vec<ElectrodePatch>)> {
    let mesh = match &cfg.mesh {
        MeshSource::File { file } => {
            let text = io::read_file(Path::new(file))?;
            let (mesh, _) = io::mesh_from_string(&text, file)?;
            mesh
        }
        MeshSource::Sphere {
            radii_mm,
            compartments,
            edge_mm,
        } => generate_layered_sphere(radii_mm, compartments, *edge_mm)?,
    };
    let mut patches = Vec::new();
    for e in &cfg.electrodes {
        patches.push(attach_electrode(&mesh, e.direction, e.diameter_mm, &e.label)?);
    }
    crate::mesh::validate_patches(&patches)?;
    Ok((mesh, patches))
}

fn load_tissue(cfg: &RunConfig) -> Result<TissueTable> {
    if cfg.tissue.source == "builtin" {
        Ok(TissueTable::builtin())
    } else {
        let text = io::read_file(Path::new(&cfg.tissue.source))?;
        TissueTable::from_csv(text.as_bytes(), &cfg.tissue.source)
    }
}

fn assemble_stage(cfg: &RunConfig, state: &mut RunState) -> Result<Assembled> {
    let (mesh, patches) = load_mesh(cfg)?;
    let table = load_tissue(cfg)?;
    state.emit("mesh.txt", &io::mesh_to_string(&mesh, &patches)?)?;
    state.emit("tissue.csv", &table.to_csv_string())?;

    let freqs = [cfg.drive.f_hz, cfg.drive.f_hz + cfg.drive.beat_hz];
    let mut systems = Vec::new();
    let mut fields = Vec::new();
    for (k, &f) in freqs.iter().enumerate() {
        let field = build_admittivity_field(&mesh, &table, f, cfg.tissue.with_permittivity)?;
        let z = ImpedanceVector::from_models(&cfg.electrode_models(f))?;
        let sys = assemble(&mesh, &field, &patches, &z)?;
        let resid = verify_factorization(&sys);
        state.stats.push((format!("factorization_f{}", k + 1), 0, 0, resid));
        state.emit(&format!("system/f{}_a.coo", k + 1), &io::csr_to_coo_string(&sys.a))?;
        state.emit(&format!("system/f{}_b.coo", k + 1), &io::csr_to_coo_string(&sys.b))?;
        let c_dense = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
            sys.c_diag.clone(),
        ));
        state.emit(&format!("system/f{}_c.coo", k + 1), &io::dense_to_coo_string(&c_dense))?;
        systems.push(sys);
        fields.push(field);
    }
    let mesh_hash = hex::encode(systems[0].content_hash);
    Ok(Assembled {
        mesh,
        patches,

        systems: [systems.remove(0), systems.remove(0)],
        fields: [fields.remove(0), fields.remove(0)],
        freqs,
        mesh_hash,
    })
}

struct Solved {
    rms: [ResistanceMatrix; 2],
}

fn solve_stage(cfg: &RunConfig, state: &mut RunState, asm: &Assembled) -> Result<Solved> {
    let mut rms = Vec::new();
    for (k, sys) in asm.systems.iter().enumerate() {
        let rm = resistance_matrix(sys, &cfg.solver)?;
        state.record_rm_stats(&format!("transfer_f{}", k + 1), &rm);
        state.emit(&format!("solve/f{}_r_ini.coo", k + 1), &io::dense_to_coo_string(&rm.r))?;
        state.emit(&format!("solve/f{}_s_ini.coo", k + 1), &io::dense_to_coo_string(&rm.s))?;
        rms.push(rm);
    }
    Ok(Solved {
        rms: [rms.remove(0), rms.remove(0)],
    })
}

struct LeadFields {
    densities: [ConductanceDensity; 2],
    lfs: [LeadField; 2],
}

fn leadfield_stage(
    cfg: &RunConfig,
    state: &mut RunState,
    asm: &Assembled,
    solved: &Solved,
) -> Result<LeadFields> {
    let mut densities = Vec::new();
    let mut lfs = Vec::new();
    for k in 0..2 {
        let d = conductance_density(&asm.mesh, &asm.fields[k])?;
        let lf = lead_field(&d, &solved.rms[k])?;
        state.emit(
            &format!("leadfield/f{}_ini_mag.csv", k + 1),
            &io::per_tet_csv(&lf.per_tet_magnitude()),
        )?;
        densities.push(d);
        lfs.push(lf);
    }
    // per-pattern pairwise volume currents from the initial lead fields
    for p in &cfg.patterns {
        let pattern = cfg.current_pattern(p)?;
        for pair in 0..2 {
            let jv = apply_lead_field(&lfs[pair], &pattern.restricted_amplitudes(pair));
            let mags = jv.magnitudes();
            let amps = crate::interference::amplitude_vectors(&jv);
            state.emit(
                &format!("fields/jv_ini_{}_pair{}.vtk", p.name, pair + 1),
                &io::vtk_unstructured(
                    &format!("volume current, pattern {}, pair {}", p.name, pair + 1),
                    &asm.mesh,
                    &[("magnitude_mA_per_mm2", &mags)],
                    &[("amplitude_mA_per_mm2", &amps)],
                )?,
            )?;
            state.emit(
                &format!("fields/jv_ini_{}_pair{}.csv", p.name, pair + 1),
                &io::per_tet_csv(&mags),
            )?;
        }
    }
    Ok(LeadFields {
        densities: [densities.remove(0), densities.remove(0)],
        lfs: [lfs.remove(0), lfs.remove(0)],
    })
}

fn envelope_of(
    pattern: &CurrentPattern,
    lfs: &[LeadField; 2],
) -> Result<EnvelopeField> {
    let j1 = apply_lead_field(&lfs[0], &pattern.restricted_amplitudes(0));
    let j2 = apply_lead_field(&lfs[1], &pattern.restricted_amplitudes(1));
    interference_field(&j1, &j2)
}

fn interfere_stage(
    cfg: &RunConfig,
    state: &mut RunState,
    asm: &Assembled,
    lf: &LeadFields,
) -> Result<()> {
    let mut steering = String::from("pattern,split_ma,argmax_tet,x_mm,y_mm,z_mm,max_mA_per_mm2\n");
    for p in &cfg.patterns {
        let pattern = cfg.current_pattern(p)?;
        let env = envelope_of(&pattern, &lf.lfs)?;
        state.emit(&format!("fields/env_ini_{}.csv", p.name), &io::per_tet_csv(&env.values))?;
        state.emit(
            &format!("fields/env_ini_{}.vtk", p.name),
            &io::vtk_unstructured(
                &format!("interference envelope, pattern {}", p.name),
                &asm.mesh,
                &[("envelope_mA_per_mm2", &env.values)],
                &[],
            )?,
        )?;
        if let Some((tet, max)) = env.argmax() {
            let cpoint = asm.mesh.tet_centroid(tet);
            let split: f64 = pattern.restricted_amplitudes(0)
                .iter()
                .map(|a| a.norm())
                .sum::<f64>()
                / 2.0;
            let _ = writeln!(
                steering,
                "{},{split},{tet},{},{},{},{max:e}",
                p.name, cpoint[0], cpoint[1], cpoint[2]
            );
        }
    }
    state.emit("fields/steering_report.csv", &steering)?;
    Ok(())
}

fn linearize_stage(
    cfg: &RunConfig,
    state: &mut RunState,
    asm: &Assembled,
    solved: &Solved,
    lf: &LeadFields,
) -> Result<()> {
    let mut report =
        String::from("perturbation,frequency,d_rc_ohm,max_abs_err,max_rel_err\n");
    for q in &cfg.perturbations {
        let l = cfg.electrode_index(&q.electrode)?;
        let qname = format!("{}_{}", q.electrode, sanitize_number(q.d_rc_ohm));
        let mut lf_refs = Vec::new();
        let mut lf_lins = Vec::new();
        for k in 0..2 {
            let sys = &asm.systems[k];
            let rm = &solved.rms[k];
            // reference: exact reassembly + resolve at the perturbed impedance
            let mut models = cfg.electrode_models(asm.freqs[k]);
            models[l].rc_ohm += q.d_rc_ohm;
            let z_ref = ImpedanceVector {
                z_ohm: models.iter().map(impedance_of_f).collect(),
            };
            let sys_ref = sys.with_impedances(&asm.mesh, &asm.fields[k], &asm.patches, &z_ref)?;
            let rm_ref = resistance_matrix(&sys_ref, &cfg.solver)?;
            state.record_rm_stats(&format!("transfer_ref_{qname}_f{}", k + 1), &rm_ref);
            // linearized surrogate from the base-point jacobian
            let jac = d_r_d_z(rm, sys, l, &cfg.solver)?;
            let r_lin = linearized_r(rm, &[(&jac, q.d_rc_ohm)])?;
            state.emit(
                &format!("linearize/{qname}_f{}_r_ref.coo", k + 1),
                &io::dense_to_coo_string(&rm_ref.r),
            )?;
            state.emit(
                &format!("linearize/{qname}_f{}_r_lin.coo", k + 1),
                &io::dense_to_coo_string(&r_lin),
            )?;

            let lf_ref = lead_field(&lf.densities[k], &rm_ref)?;
            let lf_lin = lead_field_of(&lf.densities[k], &r_lin)?;
            let diff = DiffReport::compare(
                &lf_lin.per_tet_magnitude(),
                &lf_ref.per_tet_magnitude(),
                cfg.metrics.field_db,
            )?;
            state.emit(
                &format!("linearize/{qname}_f{}_ldiff_rel.csv", k + 1),
                &io::per_tet_csv(&diff.rel),
            )?;
            state.emit(
                &format!("linearize/{qname}_f{}_ldiff_abs.csv", k + 1),
                &io::per_tet_csv(&diff.abs),
            )?;
            state.emit(
                &format!("linearize/{qname}_f{}_ldiff.vtk", k + 1),
                &io::vtk_unstructured(
                    &format!("lead field lin vs ref, {qname}, carrier {}", k + 1),
                    &asm.mesh,
                    &[("rel_diff", &diff.rel), ("abs_diff_per_mm2", &diff.abs)],
                    &[],
                )?,
            )?;
            let _ = writeln!(
                report,
                "{qname},f{},{},{:e},{:e}",
                k + 1,
                q.d_rc_ohm,
                diff.max_abs,
                diff.max_rel
            );
            lf_refs.push(lf_ref);
            lf_lins.push(lf_lin);
        }

        // interference comparisons across both carriers
        let refs = [lf_refs.remove(0), lf_refs.remove(0)];
        let lins = [lf_lins.remove(0), lf_lins.remove(0)];
        for p in &cfg.patterns {
            let pattern = cfg.current_pattern(p)?;
            let env_ref = envelope_of(&pattern, &refs)?;
            let env_lin = envelope_of(&pattern, &lins)?;
            state.emit(
                &format!("interference/{qname}_{}_env_ref.csv", p.name),
                &io::per_tet_csv(&env_ref.values),
            )?;
            state.emit(
                &format!("interference/{qname}_{}_env_lin.csv", p.name),
                &io::per_tet_csv(&env_lin.values),
            )?;
            let ediff = DiffReport::compare(
                &env_lin.values,
                &env_ref.values,
                cfg.metrics.interference_db,
            )?;
            state.emit(
                &format!("interference/{qname}_{}_envdiff_rel.csv", p.name),
                &io::per_tet_csv(&ediff.rel),
            )?;
            state.emit(
                &format!("interference/{qname}_{}_envdiff_abs.csv", p.name),
                &io::per_tet_csv(&ediff.abs),
            )?;
            state.emit(
                &format!("interference/{qname}_{}_envdiff.vtk", p.name),
                &io::vtk_unstructured(
                    &format!("envelope lin vs ref, {qname}, pattern {}", p.name),
                    &asm.mesh,
                    &[("rel_diff", &ediff.rel), ("abs_diff_mA_per_mm2", &ediff.abs)],
                    &[],
                )?,
            )?;
        }
    }
    state.emit("linearize/linref_report.csv", &report)?;
    Ok(())
}

/// Execute the pipeline up to `limit`, writing products and the manifest
/// into `out_dir` (falls back to the configured output dir).
pub fn run(cfg: &RunConfig, out_dir: Option<&Path>, limit: StageLimit) -> Result<RunManifest> {
    cfg.validate()?;
    let out_dir: PathBuf = match out_dir {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from(cfg.output.dir.clone().ok_or_else(|| {
            Error::invalid("no output directory configured (set [output] dir or pass --out)")
        })?),
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut state = RunState {
        out_dir: out_dir.clone(),
        products: Vec::new(),
        stages: Vec::new(),
        stats: Vec::new(),
    };
    let config_hash = cfg.hash_hex();
    let mut mesh_hash = String::new();

    fn staged(e: Error, stage: &str) -> Error {
        match e {
            Error::InvalidInput(m) => Error::InvalidInput(format!("stage {stage}: {m}")),
            Error::Mesh(m) => Error::Mesh(format!("stage {stage}: {m}")),
            Error::Tissue(m) => Error::Tissue(format!("stage {stage}: {m}")),
            Error::Singular(m) => Error::Singular(format!("stage {stage}: {m}")),
            Error::BasePointMismatch(m) => {
                Error::BasePointMismatch(format!("stage {stage}: {m}"))
            }
            other => other,
        }
    }

    let result = (|| -> Result<()> {
        let t = Instant::now();
        let asm = assemble_stage(cfg, &mut state).map_err(|e| staged(e, "assemble"))?;
        mesh_hash = asm.mesh_hash.clone();
        state.stages.push(("assemble".into(), t.elapsed().as_secs_f64()));
        if limit < StageLimit::Solve {
            return Ok(());
        }
        let t = Instant::now();
        let solved = solve_stage(cfg, &mut state, &asm).map_err(|e| staged(e, "solve"))?;
        state.stages.push(("solve".into(), t.elapsed().as_secs_f64()));
        if limit < StageLimit::LeadField {
            return Ok(());
        }
        let t = Instant::now();
        let lf = leadfield_stage(cfg, &mut state, &asm, &solved)
            .map_err(|e| staged(e, "leadfield"))?;
        state.stages.push(("leadfield".into(), t.elapsed().as_secs_f64()));
        if limit < StageLimit::Interfere {
            return Ok(());
        }
        let t = Instant::now();
        interfere_stage(cfg, &mut state, &asm, &lf).map_err(|e| staged(e, "interfere"))?;
        state.stages.push(("interfere".into(), t.elapsed().as_secs_f64()));
        if limit < StageLimit::Full {
            return Ok(());
        }
        let t = Instant::now();
        linearize_stage(cfg, &mut state, &asm, &solved, &lf)
            .map_err(|e| staged(e, "linearize"))?;
        state.stages.push(("linearize".into(), t.elapsed().as_secs_f64()));
        Ok(())
    })();

    // stats and manifest are written even when a stage failed, with the
    // manifest marking incompleteness
    let stats_csv = io::solver_stats_csv(&state.stats);
    state.emit("stats.csv", &stats_csv)?;
    let manifest = RunManifest {
        config_hash,
        mesh_hash,
        complete: result.is_ok(),
        error: result.as_ref().err().map(|e| e.to_string()),
        stages: state.stages.clone(),
        products: state.products.clone(),
    };
    io::write_file(&out_dir.join("manifest.txt"), &manifest.to_string())?;
    result.map(|_| manifest)
}

// ---------------------------------------------------------------------------
// Product comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub product: String,
    pub max_rel: f64,
    pub max_abs: f64,
}

/// Compare every per-tet CSV product two manifests have in common; reports
/// are written next to the returned summaries.
pub fn compare(
    manifest_a: &Path,
    manifest_b: &Path,
    db: f64,
    out_dir: &Path,
) -> Result<Vec<CompareSummary>> {
    let ma = RunManifest::from_string(&io::read_file(manifest_a)?, &manifest_a.display().to_string())?;
    let mb = RunManifest::from_string(&io::read_file(manifest_b)?, &manifest_b.display().to_string())?;
    if ma.mesh_hash != mb.mesh_hash {
        return Err(Error::invalid(format!(
            "manifests were produced on different meshes ({} vs {})",
            ma.mesh_hash, mb.mesh_hash
        )));
    }
    let dir_a = manifest_a.parent().unwrap_or(Path::new("."));
    let dir_b = manifest_b.parent().unwrap_or(Path::new("."));
    let set_b: std::collections::BTreeSet<&str> =
        mb.products.iter().map(|p| p.path.as_str()).collect();
    let mut summaries = Vec::new();
    let mut summary_csv = String::from("product,max_rel,max_abs\n");
    for p in &ma.products {
        if !p.path.ends_with(".csv") || !set_b.contains(p.path.as_str()) {
            continue;
        }
        let text_a = io::read_file(&dir_a.join(&p.path))?;
        if !text_a.starts_with("tet,value") {
            continue;
        }
        let text_b = io::read_file(&dir_b.join(&p.path))?;
        let g1 = io::per_tet_from_csv(&text_a, &p.path)?;
        let g2 = io::per_tet_from_csv(&text_b, &p.path)?;
        if g1.len() != g2.len() {
            return Err(Error::invalid(format!(
                "product {} has different mesh sizes in the two manifests",
                p.path
            )));
        }
        if g2.iter().all(|&v| v == 0.0) {
            continue; // relative difference undefined against a zero field
        }
        let report = DiffReport::compare(&g1, &g2, db)?;
        let name = p.path.replace('/', "_");
        io::write_file(
            &out_dir.join(format!("compare_{name}")),
            &io::per_tet_csv(&report.rel),
        )?;
        let _ = writeln!(summary_csv, "{},{:e},{:e}", p.path, report.max_rel, report.max_abs);
        summaries.push(CompareSummary {
            product: p.path.clone(),
            max_rel: report.max_rel,
            max_abs: report.max_abs,
        });
    }
    io::write_file(&out_dir.join("compare_summary.csv"), &summary_csv)?;
    Ok(summaries)
}
