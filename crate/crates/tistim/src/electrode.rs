//! Double-layer electrode impedance model: a parallel RC block (Rdl ∥ Cdl) in
//! series with the contact resistance Rc, plus contact-resistance
//! perturbations.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Sign convention for the capacitor branch impedance. `Minus` is the
/// physically standard Z_C = −i/(ωC); `Plus` flips the sign of Im(Z). |Z| is
/// identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapacitorSign {
    #[default]
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeModel {
    /// Contact resistance in Ω.
    pub rc_ohm: f64,
    /// Double-layer resistance in Ω.
    pub rdl_ohm: f64,
    /// Double-layer capacitance in F.
    pub cdl_farad: f64,
    /// Stimulation frequency in Hz.
    pub f_hz: f64,
    #[serde(default)]
    pub capacitor_sign: CapacitorSign,
}

impl Default for ElectrodeModel {
    fn default() -> Self {
        ElectrodeModel {
            rc_ohm: 270.0,
            rdl_ohm: 10_000.0,
            cdl_farad: 1.0e-7,
            f_hz: 1000.0,
            capacitor_sign: CapacitorSign::Minus,
        }
    }
}

impl ElectrodeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rc_ohm > 0.0 && self.rdl_ohm > 0.0 && self.cdl_farad > 0.0 && self.f_hz > 0.0) {
            return Err(Error::invalid(format!(
                "electrode model parameters must be positive: Rc={} Rdl={} Cdl={} f={}",
                self.rc_ohm, self.rdl_ohm, self.cdl_farad, self.f_hz
            )));
        }
        Ok(())
    }

    pub fn with_frequency(mut self, f_hz: f64) -> Self {
        self.f_hz = f_hz;
        self
    }
}

/// Z(f) = 1/(1/Rdl + iωC) + Rc with ω = 2πf (capacitor admittance iωC under
/// the default sign convention). |Z| decreases from Rc + Rdl at f → 0 down to
/// Rc as f → ∞.
pub fn impedance_of_f(m: &ElectrodeModel) -> Complex64 {
    let omega_c = 2.0 * std::f64::consts::PI * m.f_hz * m.cdl_farad;
    let branch_im = match m.capacitor_sign {
        CapacitorSign::Minus => omega_c,
        CapacitorSign::Plus => -omega_c,
    };
    let y = Complex64::new(1.0 / m.rdl_ohm, branch_im);
    y.inv() + m.rc_ohm
}

/// Shift Rc by `d_rc_ohm`. The double-layer branch does not depend on Rc, so
/// the impedance change is exactly the real contact-resistance change.
pub fn perturb_contact(m: &ElectrodeModel, d_rc_ohm: f64) -> Result<(ElectrodeModel, Complex64)> {
    let new_rc = m.rc_ohm + d_rc_ohm;
    if !(new_rc > 0.0) {
        return Err(Error::invalid(format!(
            "perturbed contact resistance must stay positive: {} + {} = {new_rc} Ω",
            m.rc_ohm, d_rc_ohm
        )));
    }
    let mut out = *m;
    out.rc_ohm = new_rc;
    Ok((out, Complex64::new(d_rc_ohm, 0.0)))
}

/// Per-electrode impedances at a common frequency, ordered by electrode
/// index. Effective contact impedances Z̃ℓ = Zℓ|eℓ| are derived on demand
/// from patch areas.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceVector {
    pub z_ohm: Vec<Complex64>,
}

impl ImpedanceVector {
    pub fn from_models(models: &[ElectrodeModel]) -> Result<Self> {
        for m in models {
            m.validate()?;
        }
        let z_ohm: Vec<Complex64> = models.iter().map(impedance_of_f).collect();
        let v = ImpedanceVector { z_ohm };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        for (l, z) in self.z_ohm.iter().enumerate() {
            if !(z.re > 0.0) || !z.is_finite() {
                return Err(Error::invalid(format!(
                    "electrode {l}: impedance must have positive real part, got {z}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.z_ohm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_ohm.is_empty()
    }

    /// Z̃ℓ = Zℓ·|eℓ| in Ω·mm².
    pub fn effective(&self, areas_mm2: &[f64]) -> Vec<Complex64> {
        self.z_ohm
            .iter()
            .zip(areas_mm2)
            .map(|(z, &a)| z * a)
            .collect()
    }
}
