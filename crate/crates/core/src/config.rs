//! Run configuration: one TOML document describing the device array, its
//! converters and noise, calibration and output paths.
//!
//! Every section is optional; missing keys take the defaults below. Unknown
//! keys are rejected. [`RunConfig::validate`] reports the dotted path of the
//! first offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::device::{CurveKind, NoiseSpec, Precision, QuantizerSpec, ResponseCurve, VariationSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for fabrication draws, noise and data generation.
    pub seed: u64,
    pub array: ArrayConfig,
    pub device: DeviceConfig,
    pub quantizer: QuantizerConfig,
    pub noise: NoiseConfig,
    pub calibration: CalibrationConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    /// Physical tile dimension `N` (the array is `N x N`).
    pub n: usize,
    /// Optical input power per pixel, watts.
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    /// Nominal SLM transmission coefficients `[c2, c1, c0]`.
    pub transmission: [f64; 3],
    /// Nominal detector responsivity coefficients `[c2, c1, c0]`, A/W.
    pub responsivity: [f64; 3],
    /// Variation strength `p` in `[0, 1)`.
    pub variation: f64,
    pub per_coefficient_variation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerConfig {
    pub dac_bits: Precision,
    pub adc_bits: Precision,
    pub adc_full_scale: FullScale,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FullScale {
    /// Ranged to the calibrated maximum achievable row sum.
    Auto,
    Amperes(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Readout noise standard deviation, amperes. Zero disables noise.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Per-pair tables measured on the array itself.
    Measured,
    /// Tables measured on a variation-free twin and transferred unchanged
    /// (only the baseline is re-read). The uncorrected control.
    NominalTwin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Exposures averaged per calibration sample.
    pub repeats: u32,
    pub mode: CalibrationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    pub mnist_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            array: ArrayConfig::default(),
            device: DeviceConfig::default(),
            quantizer: QuantizerConfig::default(),
            noise: NoiseConfig::default(),
            calibration: CalibrationConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { n: 8, p0: 1.0 }
    }
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            transmission: ResponseCurve::default_transmission().coefficients(),
            responsivity: ResponseCurve::default_responsivity().coefficients(),
            variation: 0.2,
            per_coefficient_variation: false,
        }
    }
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            dac_bits: Precision::Bits(8),
            adc_bits: Precision::Ideal,
            adc_full_scale: FullScale::Auto,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.0 }
    }
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            repeats: 16,
            mode: CalibrationMode::Measured,
        }
    }
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            mnist_dir: PathBuf::from("data/mnist"),
        }
    }
}

impl Serialize for FullScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FullScale::Auto => s.serialize_str("auto"),
            FullScale::Amperes(a) => s.serialize_f64(*a),
        }
    }
}

impl<'de> Deserialize<'de> for FullScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(FullScale::Amperes(a)),
            Raw::Str(s) if s == "auto" => Ok(FullScale::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a current or \"auto\", got \"{s}\""
            ))),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|sp| format!("byte {}..{}", sp.start, sp.end))
                .unwrap_or_else(|| "<document>".into());
            Error::config(path, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// SHA-256 over the canonical TOML rendering. The `[paths]` section does
    /// not influence any result and is left out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        let mut h = Sha256::new();
        h.update(c.to_toml_string().as_bytes());
        hex_string(&h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        if self.array.n == 0 {
            return Err(Error::config("array.n", "must be at least 1"));
        }
        if !(self.array.p0.is_finite() && self.array.p0 >= 0.0) {
            return Err(Error::config("array.p0", "must be finite and nonnegative"));
        }
        for (name, c) in [
            ("device.transmission", self.device.transmission),
            ("device.responsivity", self.device.responsivity),
        ] {
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(name, "coefficients must be finite"));
            }
        }
        let p = self.device.variation;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("device.variation", "must lie in [0, 1)"));
        }
        if let FullScale::Amperes(a) = self.quantizer.adc_full_scale {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::config(
                    "quantizer.adc_full_scale",
                    "must be a positive current or \"auto\"",
                ));
            }
        }
        if !(self.noise.sigma.is_finite() && self.noise.sigma >= 0.0) {
            return Err(Error::config(
                "noise.sigma",
                "must be finite and nonnegative",
            ));
        }
        if self.calibration.repeats == 0 {
            return Err(Error::config("calibration.repeats", "must be at least 1"));
        }
        Ok(())
    }

    pub fn transmission_curve(&self) -> ResponseCurve {
        let [c2, c1, c0] = self.device.transmission;
        ResponseCurve::new(CurveKind::Transmission, c2, c1, c0)
    }

    pub fn responsivity_curve(&self) -> ResponseCurve {
        let [c2, c1, c0] = self.device.responsivity;
        ResponseCurve::new(CurveKind::Responsivity, c2, c1, c0)
    }

    pub fn variation(&self) -> VariationSpec {
        VariationSpec {
            p: self.device.variation,
            per_coefficient: self.device.per_coefficient_variation,
        }
    }

    pub fn quantizer_spec(&self) -> QuantizerSpec {
        QuantizerSpec {
            dac: self.quantizer.dac_bits,
            adc: self.quantizer.adc_bits,
            adc_full_scale: match self.quantizer.adc_full_scale {
                FullScale::Auto => None,
                FullScale::Amperes(a) => Some(a),
            },
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            sigma: self.noise.sigma,
            enabled: self.noise.sigma > 0.0,
        }
    }

    /// Noise-free, infinite-precision, variation-free settings.
    pub fn ideal() -> Self {
        let mut c = Self::default();
        c.device.variation = 0.0;
        c.quantizer.dac_bits = Precision::Ideal;
        c.quantizer.adc_bits = Precision::Ideal;
        c.noise.sigma = 0.0;
        c
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
