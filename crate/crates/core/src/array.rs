//! The N x N SLM plane and N x N detector plane.
//!
//! Row `j` owns its own copy of the input vector on SLM units `(j, 0..N)`, and
//! the photocurrents of its detectors are summed electrically. A readout is the
//! only way calibration and the MVM engine observe the devices; the curve
//! accessors exist for inspection and test oracles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::device::{
    apply_variation, apply_variation_per_coefficient, read_with_noise_and_adc, NoiseSpec,
    Precision, QuantizerSpec, ResponseCurve,
};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Gate-code sweep resolution used when the DAC is ideal.
pub const IDEAL_SWEEP_LEVELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plane {
    Slm,
    Detector,
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Plane::Slm => "slm",
            Plane::Detector => "detector",
        })
    }
}

/// One exposure's row currents.
#[derive(Debug, Clone, PartialEq)]
pub struct RowReadout {
    /// Amperes, one per row.
    pub values: Vec<f64>,
    pub pass_id: u64,
}

#[derive(Debug, Clone)]
pub struct ArrayInstance {
    n: usize,
    p0: f64,
    slm_curves: Vec<ResponseCurve>,
    pd_curves: Vec<ResponseCurve>,
    slm_gates: Vec<f64>,
    pd_gates: Vec<f64>,
    // Curve values at the current gates.
    slm_t: Vec<f64>,
    pd_r: Vec<f64>,
    slm_clamped: Vec<bool>,
    pd_clamped: Vec<bool>,
    quantizer: QuantizerSpec,
    noise: NoiseSpec,
    rng: ChaCha8Rng,
    pass_id: u64,
    clamp_events: u64,
}

/// Builds an array with per-unit variation drawn from `(seed, plane, j, i)`.
pub fn build_array(config: &RunConfig, seed: u64) -> Result<ArrayInstance> {
    config.validate()?;
    let n = config.array.n;
    let var = config.variation();
    let draw_plane = |plane_tag: u64, nominal: ResponseCurve| -> Vec<ResponseCurve> {
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let mut r = rng::stream(seed, &[plane_tag, j as u64, i as u64]);
                let curve = if var.per_coefficient {
                    let xs = [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()];
                    apply_variation_per_coefficient(&nominal, var.p, xs)
                } else {
                    apply_variation(&nominal, var.p, r.random::<f64>())
                };
                out.push(curve);
            }
        }
        out
    };
    let slm_curves = draw_plane(tag::SLM_VARIATION, config.transmission_curve());
    let pd_curves = draw_plane(tag::PD_VARIATION, config.responsivity_curve());
    let mut a = ArrayInstance {
        n,
        p0: config.array.p0,
        slm_curves,
        pd_curves,
        slm_gates: vec![0.0; n * n],
        pd_gates: vec![0.0; n * n],
        slm_t: vec![0.0; n * n],
        pd_r: vec![0.0; n * n],
        slm_clamped: vec![false; n * n],
        pd_clamped: vec![false; n * n],
        quantizer: config.quantizer_spec(),
        noise: config.noise_spec(),
        rng: rng::stream(seed, &[tag::NOISE]),
        pass_id: 0,
        clamp_events: 0,
    };
    for idx in 0..n * n {
        a.refresh(Plane::Slm, idx);
        a.refresh(Plane::Detector, idx);
    }
    Ok(a)
}

impl ArrayInstance {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn quantizer(&self) -> &QuantizerSpec {
        &self.quantizer
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn set_adc_full_scale(&mut self, full_scale: f64) {
        self.quantizer.adc_full_scale = Some(full_scale);
    }

    /// Restarts the readout-noise stream. Used to give every Monte Carlo trial
    /// its own stream.
    pub fn reseed_noise(&mut self, seed: u64) {
        self.rng = rng::stream(seed, &[tag::NOISE]);
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    pub fn pass_id(&self) -> u64 {
        self.pass_id
    }

    pub fn slm_curve(&self, j: usize, i: usize) -> &ResponseCurve {
        &self.slm_curves[j * self.n + i]
    }

    pub fn pd_curve(&self, j: usize, i: usize) -> &ResponseCurve {
        &self.pd_curves[j * self.n + i]
    }

    pub fn gate(&self, plane: Plane, j: usize, i: usize) -> f64 {
        match plane {
            Plane::Slm => self.slm_gates[j * self.n + i],
            Plane::Detector => self.pd_gates[j * self.n + i],
        }
    }

    /// Gate levels a calibration sweep visits: every DAC code, or a uniform
    /// grid of [`IDEAL_SWEEP_LEVELS`] points for an ideal DAC.
    pub fn sweep_levels(&self) -> Vec<f64> {
        match self.quantizer.dac.max_code() {
            Some(max) => (0..=max).map(|k| k as f64 / max as f64).collect(),
            None => {
                let last = (IDEAL_SWEEP_LEVELS - 1) as f64;
                (0..IDEAL_SWEEP_LEVELS).map(|k| k as f64 / last).collect()
            }
        }
    }

    /// Sets integer DAC codes for both planes (row-major `N x N`).
    pub fn set_codes(&mut self, slm_codes: &[u32], pd_codes: &[u32]) -> Result<()> {
        let Some(max) = self.quantizer.dac.max_code() else {
            return Err(Error::Domain(
                "integer codes need a finite-precision DAC; use set_gates".into(),
            ));
        };
        self.check_len(slm_codes.len(), pd_codes.len())?;
        for (plane, codes) in [(Plane::Slm, slm_codes), (Plane::Detector, pd_codes)] {
            if let Some(pos) = codes.iter().position(|&c| c > max) {
                return Err(Error::Domain(format!(
                    "code {} at ({plane}, {}, {}) exceeds DAC maximum {max}",
                    codes[pos],
                    pos / self.n,
                    pos % self.n
                )));
            }
        }
        for idx in 0..self.n * self.n {
            self.store(Plane::Slm, idx, slm_codes[idx] as f64 / max as f64);
            self.store(Plane::Detector, idx, pd_codes[idx] as f64 / max as f64);
        }
        Ok(())
    }

    /// Sets normalized gate codes for both planes; each passes through the DAC.
    pub fn set_gates(&mut self, slm: &[f64], pd: &[f64]) -> Result<()> {
        self.check_len(slm.len(), pd.len())?;
        for (plane, gates) in [(Plane::Slm, slm), (Plane::Detector, pd)] {
            if let Some(pos) = gates.iter().position(|u| !(0.0..=1.0).contains(u)) {
                return Err(Error::Domain(format!(
                    "gate {} at ({plane}, {}, {}) outside [0, 1]",
                    gates[pos],
                    pos / self.n,
                    pos % self.n
                )));
            }
        }
        for idx in 0..self.n * self.n {
            self.set_unit(Plane::Slm, idx, slm[idx]);
            self.set_unit(Plane::Detector, idx, pd[idx]);
        }
        Ok(())
    }

    fn check_len(&self, a: usize, b: usize) -> Result<()> {
        let want = self.n * self.n;
        if a != want || b != want {
            return Err(Error::Domain(format!(
                "expected {want} codes per plane, got {a} and {b}"
            )));
        }
        Ok(())
    }

    /// Sets one unit, `idx = j * N + i`, quantizing through the DAC. `u` must be in `[0, 1]`.
    #[inline]
    pub(crate) fn set_unit(&mut self, plane: Plane, idx: usize, u: f64) {
        let u = match self.quantizer.dac.max_code() {
            Some(max) => crate::device::quantize_level(u, max) as f64 / max as f64,
            None => u,
        };
        self.store(plane, idx, u);
    }

    #[inline]
    fn store(&mut self, plane: Plane, idx: usize, u: f64) {
        let gates = match plane {
            Plane::Slm => &mut self.slm_gates,
            Plane::Detector => &mut self.pd_gates,
        };
        if gates[idx] != u {
            gates[idx] = u;
            self.refresh(plane, idx);
        }
    }

    fn refresh(&mut self, plane: Plane, idx: usize) {
        let (curve, u, value, clamped) = match plane {
            Plane::Slm => (
                &self.slm_curves[idx],
                self.slm_gates[idx],
                &mut self.slm_t[idx],
                &mut self.slm_clamped[idx],
            ),
            Plane::Detector => (
                &self.pd_curves[idx],
                self.pd_gates[idx],
                &mut self.pd_r[idx],
                &mut self.pd_clamped[idx],
            ),
        };
        let v = curve.eval_unchecked(u);
        *value = v.value;
        *clamped = v.clamped;
    }

    /// Noise-free row sums `sum_i p0 T_ji R_ji` at the current gates.
    fn row_sum(&self, j: usize) -> f64 {
        let lo = j * self.n;
        let hi = lo + self.n;
        self.slm_t[lo..hi]
            .iter()
            .zip(&self.pd_r[lo..hi])
            .map(|(t, r)| self.p0 * t * r)
            .sum()
    }

    /// Exposes the array once and reads every row through the readout chain.
    pub fn expose_and_read(&mut self) -> RowReadout {
        let mut values = vec![0.0; self.n];
        self.expose_into(&mut values);
        RowReadout {
            values,
            pass_id: self.pass_id,
        }
    }

    pub(crate) fn expose_into(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        self.pass_id += 1;
        self.clamp_events += self
            .slm_clamped
            .iter()
            .chain(&self.pd_clamped)
            .filter(|&&c| c)
            .count() as u64;
        let adc = self.quantizer.adc;
        let fs = self.quantizer.adc_full_scale;
        for (j, o) in out.iter_mut().enumerate() {
            let s = self.row_sum(j);
            *o = read_with_noise_and_adc(s, &self.noise, adc, fs, &mut self.rng);
        }
    }

    /// Exposes `repeats` times and averages; a noise-free chain is deterministic
    /// so one exposure suffices.
    pub(crate) fn expose_averaged(&mut self, repeats: u32, out: &mut [f64]) {
        if !self.noise.active() || repeats <= 1 {
            self.expose_into(out);
            return;
        }
        let mut acc = vec![0.0; self.n];
        let mut tmp = vec![0.0; self.n];
        for _ in 0..repeats {
            self.expose_into(&mut tmp);
            for (a, t) in acc.iter_mut().zip(&tmp) {
                *a += t;
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = a / repeats as f64;
        }
    }

    pub fn is_ideal_dac(&self) -> bool {
        self.quantizer.dac == Precision::Ideal
    }
}
