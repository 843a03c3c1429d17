//! Envelope mathematics for two interfering carriers and the volumetric
//! interference field.
//!
//! For two sinusoids w_k = A_k sin(2πf_k t + θ_k) the time-varying envelope
//! of their sum/difference is √(A₁² + A₂² ± 2A₁A₂cos(2πΔf·t + Δθ)). The
//! volumetric analogue reduces each complex per-tet current vector to a real
//! amplitude vector (component-wise modulus, see `amplitude_vectors`) and
//! evaluates | |J₁+J₂| − |J₁−J₂| | per tet.

use crate::error::{Error, Result};
use crate::leadfield::{apply_lead_field, LeadField, VolumeCurrentField};
use crate::mesh::TetMesh;
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidPair {
    pub a1: f64,
    pub a2: f64,
    pub f1_hz: f64,
    pub f2_hz: f64,
    pub theta1_rad: f64,
    pub theta2_rad: f64,
}

impl SinusoidPair {
    pub fn validate(&self) -> Result<()> {
        if self.a1 < 0.0 || self.a2 < 0.0 {
            return Err(Error::invalid("sinusoid amplitudes must be nonnegative"));
        }
        Ok(())
    }

    pub fn beat_hz(&self) -> f64 {
        (self.f1_hz - self.f2_hz).abs()
    }

    pub fn sample(&self, t: f64) -> (f64, f64) {
        let w1 = self.a1 * (2.0 * std::f64::consts::PI * self.f1_hz * t + self.theta1_rad).sin();
        let w2 = self.a2 * (2.0 * std::f64::consts::PI * self.f2_hz * t + self.theta2_rad).sin();
        (w1, w2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeSign {
    Sum,
    Diff,
}

/// Envelope of w₁ ± w₂ at time t.
pub fn analytic_envelope(p: &SinusoidPair, t: f64, sign: EnvelopeSign) -> f64 {
    let dphi = 2.0 * std::f64::consts::PI * (p.f1_hz - p.f2_hz) * t + (p.theta1_rad - p.theta2_rad);
    let mixed = 2.0 * p.a1 * p.a2 * dphi.cos();
    let sq = match sign {
        EnvelopeSign::Sum => p.a1 * p.a1 + p.a2 * p.a2 + mixed,
        EnvelopeSign::Diff => p.a1 * p.a1 + p.a2 * p.a2 - mixed,
    };
    sq.max(0.0).sqrt()
}

/// Reduce complex per-tet vectors to real amplitude vectors by taking the
/// modulus of each component. This is the single place where the
/// phase-resolved field is collapsed before the interference formula.
pub fn amplitude_vectors(field: &VolumeCurrentField) -> Vec<[f64; 3]> {
    field
        .vectors
        .iter()
        .map(|v| [v[0].norm(), v[1].norm(), v[2].norm()])
        .collect()
}

/// Per-tet interference-envelope magnitude, mA/mm².
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeField {
    pub values: Vec<f64>,
    /// Carrier frequencies of the two source fields.
    pub frequencies_hz: (f64, f64),
}

impl EnvelopeField {
    pub fn n_tets(&self) -> usize {
        self.values.len()
    }

    pub fn argmax(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, &v)| (i, v))
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// I(J₁, J₂) = | |J₁+J₂| − |J₁−J₂| | per tet on the amplitude-reduced
/// vectors. Symmetric in its arguments, zero where either field vanishes and
/// bounded by 2·min(|J₁|, |J₂|).
pub fn interference_field(
    j1: &VolumeCurrentField,
    j2: &VolumeCurrentField,
) -> Result<EnvelopeField> {
    if j1.n_tets() != j2.n_tets() {
        return Err(Error::invalid(format!(
            "interference fields live on different meshes ({} vs {} tets)",
            j1.n_tets(),
            j2.n_tets()
        )));
    }
    let m1 = amplitude_vectors(j1);
    let m2 = amplitude_vectors(j2);
    let values = m1
        .iter()
        .zip(&m2)
        .map(|(a, b)| {
            let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            let diff = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            (norm3(sum) - norm3(diff)).abs()
        })
        .collect();
    Ok(EnvelopeField {
        values,
        frequencies_hz: (j1.frequency_hz, j2.frequency_hz),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringPoint {
    /// Current through the first pair, mA (the second pair gets the rest).
    pub split_ma: f64,
    pub argmax_tet: usize,
    pub argmax_center: [f64; 3],
    pub max_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringScan {
    pub points: Vec<SteeringPoint>,
    pub total_ma: f64,
}

impl SteeringScan {
    /// Argmax coordinate along `axis` per split; used to check that the peak
    /// drifts monotonically toward the weaker pair.
    pub fn axis_coordinates(&self, axis: [f64; 3]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.argmax_center[0] * axis[0] + p.argmax_center[1] * axis[1] + p.argmax_center[2] * axis[2])
            .collect()
    }

    pub fn is_monotone_along(&self, axis: [f64; 3]) -> bool {
        let coords = self.axis_coordinates(axis);
        coords.windows(2).all(|w| w[1] >= w[0]) || coords.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Sweep the current split between the two pairs while keeping the total
/// constant: pair 1 carries `split` mA, pair 2 carries `total − split` mA.
/// `unit_pattern` must carry ±1 amplitudes on both pairs.
pub fn steering_scan(
    mesh: &TetMesh,
    lf_pair1: &LeadField,
    lf_pair2: &LeadField,
    unit_pattern: &crate::leadfield::CurrentPattern,
    total_ma: f64,
    splits_ma: &[f64],
) -> Result<SteeringScan> {
    if unit_pattern.pairs.len() != 2 {
        return Err(Error::invalid("steering scan needs exactly two source pairs"));
    }
    unit_pattern.validate(lf_pair1.n_cols)?;
    if !(total_ma > 0.0) {
        return Err(Error::invalid("total current must be positive"));
    }
    let mut points = Vec::with_capacity(splits_ma.len());
    for &split in splits_ma {
        if !(0.0..=total_ma).contains(&split) {
            return Err(Error::invalid(format!(
                "invalid split {split} mA for total {total_ma} mA"
            )));
        }
        let scale1 = Complex64::new(split, 0.0);
        let scale2 = Complex64::new(total_ma - split, 0.0);
        let amps1: Vec<Complex64> = unit_pattern
            .restricted_amplitudes(0)
            .iter()
            .map(|a| a * scale1)
            .collect();
        let amps2: Vec<Complex64> = unit_pattern
            .restricted_amplitudes(1)
            .iter()
            .map(|a| a * scale2)
            .collect();
        let j1 = apply_lead_field(lf_pair1, &amps1);
        let j2 = apply_lead_field(lf_pair2, &amps2);
        let env = interference_field(&j1, &j2)?;
        let (argmax_tet, max_value) = env
            .argmax()
            .ok_or_else(|| Error::invalid("empty interference field"))?;
        points.push(SteeringPoint {
            split_ma: split,
            argmax_tet,
            argmax_center: mesh.tet_centroid(argmax_tet),
            max_value,
        });
    }
    Ok(SteeringScan {
        points,
        total_ma,
    })
}

/// Two-sinusoid demonstration data: time, the two carriers, their sum and
/// difference, and the analytic envelopes, as CSV.
pub fn envelope_demo_csv(p: &SinusoidPair, n_samples: usize, duration_s: f64) -> Result<String> {
    p.validate()?;
    if n_samples < 2 || !(duration_s > 0.0) {
        return Err(Error::invalid("need at least 2 samples and a positive duration"));
    }
    let mut out = String::from("t_s,w1,w2,sum,diff,envelope_sum,envelope_diff\n");
    for k in 0..n_samples {
        let t = duration_s * k as f64 / (n_samples - 1) as f64;
        let (w1, w2) = p.sample(t);
        let es = analytic_envelope(p, t, EnvelopeSign::Sum);
        let ed = analytic_envelope(p, t, EnvelopeSign::Diff);
        out.push_str(&format!(
            "{t},{w1},{w2},{},{},{es},{ed}\n",
            w1 + w2,
            w1 - w2
        ));
    }
    Ok(out)
}
