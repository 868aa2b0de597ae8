//! Single-device models: SLM transmission and photodetector responsivity
//! curves, fabrication variation, gate-code and readout quantizers, readout
//! noise, and the graphene damping-to-mobility conversion.
//!
//! Devices are driven by a normalized gate code `u` in `[0, 1]` rather than a
//! gate voltage; the voltage to Fermi-level relation is absorbed into the
//! fitted response curve.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Optical transmission, dimensionless, valid range `[0, 1]`.
    Transmission,
    /// Photoresponsivity in A/W, valid range `[0, inf)`.
    Responsivity,
}

/// Quadratic response `c2*u^2 + c1*u + c0` over the normalized gate code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub kind: CurveKind,
}

/// Result of evaluating a curve: the (possibly clamped) value and whether a
/// clamp happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveValue {
    pub value: f64,
    pub clamped: bool,
}

impl ResponseCurve {
    pub const fn new(kind: CurveKind, c2: f64, c1: f64, c0: f64) -> Self {
        Self { c2, c1, c0, kind }
    }

    /// Transmission rising with doping, `0.5 u^2 + 0.25`, spanning `[0.25, 0.75]`.
    pub const fn default_transmission() -> Self {
        Self::new(CurveKind::Transmission, 0.5, 0.0, 0.25)
    }

    /// Responsivity falling with doping, `-0.5 u^2 + 0.8`, spanning `[0.3, 0.8]` A/W.
    pub const fn default_responsivity() -> Self {
        Self::new(CurveKind::Responsivity, -0.5, 0.0, 0.8)
    }

    pub fn coefficients(&self) -> [f64; 3] {
        [self.c2, self.c1, self.c0]
    }

    pub fn with_coefficients(&self, [c2, c1, c0]: [f64; 3]) -> Self {
        Self::new(self.kind, c2, c1, c0)
    }

    #[inline]
    fn polynomial(&self, u: f64) -> f64 {
        (self.c2 * u + self.c1) * u + self.c0
    }

    /// Evaluates without checking `u`; clamps to the kind's valid range.
    #[inline]
    pub(crate) fn eval_unchecked(&self, u: f64) -> CurveValue {
        let raw = self.polynomial(u);
        let hi = match self.kind {
            CurveKind::Transmission => 1.0,
            CurveKind::Responsivity => f64::INFINITY,
        };
        if raw < 0.0 {
            CurveValue {
                value: 0.0,
                clamped: true,
            }
        } else if raw > hi {
            CurveValue {
                value: hi,
                clamped: true,
            }
        } else {
            CurveValue {
                value: raw,
                clamped: false,
            }
        }
    }

    pub fn eval(&self, u: f64) -> Result<CurveValue> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("gate code {u} outside [0, 1]")));
        }
        Ok(self.eval_unchecked(u))
    }
}

/// Least-squares quadratic fit and its residual RMS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    pub curve: ResponseCurve,
    pub residual_rms: f64,
}

/// Fits `c2 u^2 + c1 u + c0` to `(u, value)` samples by Householder QR.
pub fn fit_quadratic(samples: &[(f64, f64)], kind: CurveKind) -> Result<QuadraticFit> {
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Numeric(format!(
            "rank-deficient fit: {} distinct abscissae, need 3",
            distinct.len()
        )));
    }
    if samples
        .iter()
        .any(|(u, y)| !u.is_finite() || !y.is_finite())
    {
        return Err(Error::Domain("non-finite sample".into()));
    }

    let m = samples.len();
    // Columns [u^2, u, 1], stored column-major.
    let mut a: Vec<[f64; 3]> = samples.iter().map(|&(u, _)| [u * u, u, 1.0]).collect();
    let mut b: Vec<f64> = samples.iter().map(|s| s.1).collect();

    for k in 0..3 {
        let norm = (k..m).map(|r| a[r][k] * a[r][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric("rank-deficient fit".into()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|r| a[r][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in k..3 {
            let dot: f64 = (k..m).map(|r| v[r - k] * a[r][c]).sum();
            let f = 2.0 * dot / vnorm2;
            for r in k..m {
                a[r][c] -= f * v[r - k];
            }
        }
        let dot: f64 = (k..m).map(|r| v[r - k] * b[r]).sum();
        let f = 2.0 * dot / vnorm2;
        for r in k..m {
            b[r] -= f * v[r - k];
        }
    }

    let mut x = [0.0; 3];
    for k in (0..3).rev() {
        let s: f64 = (k + 1..3).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    let curve = ResponseCurve::new(kind, x[0], x[1], x[2]);
    let sse: f64 = samples
        .iter()
        .map(|&(u, y)| (curve.polynomial(u) - y).powi(2))
        .sum();
    Ok(QuadraticFit {
        curve,
        residual_rms: (sse / m as f64).sqrt(),
    })
}

/// Fabrication variation strength and draw mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationSpec {
    /// Variation strength `p` in `[0, 1)`.
    pub p: f64,
    /// Draw a separate `X` for each coefficient instead of one per unit.
    #[serde(default)]
    pub per_coefficient: bool,
}

impl VariationSpec {
    pub fn scale_factor(&self, x: f64) -> f64 {
        1.0 + self.p / 2.0 - self.p * x
    }
}

/// Scales every coefficient by `1 + p/2 - p*x`.
pub fn apply_variation(curve: &ResponseCurve, p: f64, x: f64) -> ResponseCurve {
    let f = 1.0 + p / 2.0 - p * x;
    curve.with_coefficients(curve.coefficients().map(|c| f * c))
}

/// Per-coefficient variant: coefficient `k` is scaled with its own draw `xs[k]`.
pub fn apply_variation_per_coefficient(
    curve: &ResponseCurve,
    p: f64,
    xs: [f64; 3],
) -> ResponseCurve {
    let c = curve.coefficients();
    curve.with_coefficients([0, 1, 2].map(|k| (1.0 + p / 2.0 - p * xs[k]) * c[k]))
}

/// Fixed constants of the graphene mobility conversion (SI units).
pub struct PhysicsConstants;

impl PhysicsConstants {
    pub const Q: f64 = 1.6e-19;
    pub const HBAR: f64 = 1.05e-34;
    pub const V_FERMI: f64 = 1.0e6;
}

/// Carrier mobility in cm^2/(V s) from the damping constant `gamma = q hbar v_F^2 / (mu E_F)`.
/// Both energies are given in eV.
pub fn damping_to_mobility(gamma_ev: f64, fermi_ev: f64) -> Result<f64> {
    if !(gamma_ev > 0.0) || !(fermi_ev > 0.0) {
        return Err(Error::Domain(format!(
            "damping and Fermi level must be positive, got {gamma_ev} eV and {fermi_ev} eV"
        )));
    }
    let gamma_j = gamma_ev * PhysicsConstants::Q;
    let fermi_j = fermi_ev * PhysicsConstants::Q;
    let mu_si = PhysicsConstants::Q * PhysicsConstants::HBAR * PhysicsConstants::V_FERMI.powi(2)
        / (gamma_j * fermi_j);
    Ok(mu_si * 1e4)
}

/// Bit precision of a converter, or an ideal (infinite precision) one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Bits(u32),
    Ideal,
}

impl Precision {
    /// Largest code, `2^bits - 1`; `None` when ideal.
    pub fn max_code(self) -> Option<u32> {
        match self {
            Precision::Bits(b) => Some(((1u64 << b) - 1) as u32),
            Precision::Ideal => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Bits(b) => write!(f, "{b}"),
            Precision::Ideal => f.write_str("ideal"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ideal" {
            return Ok(Precision::Ideal);
        }
        match s.parse::<u32>() {
            Ok(b) if (1..=24).contains(&b) => Ok(Precision::Bits(b)),
            _ => Err(Error::Domain(format!(
                "expected a bit count in 1..=24 or \"ideal\", got \"{s}\""
            ))),
        }
    }
}

impl Serialize for Precision {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Precision::Bits(b) => s.serialize_u32(*b),
            Precision::Ideal => s.serialize_str("ideal"),
        }
    }
}

impl<'de> Deserialize<'de> for Precision {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(b) if (1..=24).contains(&b) => Ok(Precision::Bits(b as u32)),
            Raw::Int(b) => Err(serde::de::Error::custom(format!(
                "bit count {b} outside 1..=24"
            ))),
            Raw::Str(s) if s == "ideal" => Ok(Precision::Ideal),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a bit count or \"ideal\", got \"{s}\""
            ))),
        }
    }
}

/// Gate (DAC) and readout (ADC) precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub dac: Precision,
    pub adc: Precision,
    /// ADC full scale in amperes; `None` until ranged (see calibration).
    pub adc_full_scale: Option<f64>,
}

/// Nearest of the `max_code + 1` uniform levels on `[0, 1]`; exact ties go to
/// the lower code.
#[inline]
pub fn quantize_level(x: f64, max_code: u32) -> u32 {
    let l = max_code as f64;
    let k = (x * l - 0.5).ceil();
    k.clamp(0.0, l) as u32
}

/// DAC quantization of a gate code: `(code, realized u)`.
pub fn quantize_gate(u: f64, dac_bits: u32) -> Result<(u32, f64)> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("gate code {u} outside [0, 1]")));
    }
    if !(1..=24).contains(&dac_bits) {
        return Err(Error::Domain(format!("dac_bits {dac_bits} outside 1..=24")));
    }
    let max = Precision::Bits(dac_bits).max_code().unwrap();
    let code = quantize_level(u, max);
    Ok((code, code as f64 / max as f64))
}

/// Additive Gaussian readout noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation in amperes.
    pub sigma: f64,
    pub enabled: bool,
}

impl NoiseSpec {
    pub const OFF: NoiseSpec = NoiseSpec {
        sigma: 0.0,
        enabled: false,
    };

    pub fn active(&self) -> bool {
        self.enabled && self.sigma > 0.0
    }
}

/// Readout chain for one summed row current: add noise, clamp to
/// `[0, full_scale]`, then quantize. An ideal ADC only clamps at zero.
pub fn read_with_noise_and_adc<R: Rng + ?Sized>(
    current: f64,
    noise: &NoiseSpec,
    adc: Precision,
    full_scale: Option<f64>,
    rng: &mut R,
) -> f64 {
    let noisy = if noise.active() {
        let z: f64 = StandardNormal.sample(rng);
        current + noise.sigma * z
    } else {
        current
    };
    match (adc.max_code(), full_scale) {
        (Some(max), Some(fs)) if fs > 0.0 => {
            let clamped = noisy.clamp(0.0, fs);
            quantize_level(clamped / fs, max) as f64 * fs / max as f64
        }
        _ => noisy.max(0.0),
    }
}
