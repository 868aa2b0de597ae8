//! Real-valued MVM on a calibrated array.
//!
//! Inputs are scaled into `[-1, 1]` by their max-abs, split into nonnegative
//! parts and multiplied quadrant by quadrant:
//! `o = W+ v+ + W- v- - W+ v- - W- v+`. The matrix goes on the detectors
//! (row `j` of `W` on detector row `j`), the vector is replicated across the
//! SLMs of every row.

use crate::array::{build_array, ArrayInstance, Plane};
use crate::calibration::{
    calibrate_array, calibrate_nominal_twin, decode_row, ArrayCalibration, CalibrationOptions,
};
use crate::config::{CalibrationMode, RunConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Exposures per MVM: four `S(v, w)`, two `S(v, 0)`, two `S(0, w)`.
/// `S(0, 0)` comes from the calibration cache.
pub const PASSES_PER_MVM: u32 = 8;

/// Nonnegative parts of a signed array with `plus - minus = x` and
/// `plus * minus = 0` elementwise.
pub fn split_signed(x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_finite(x)?;
    Ok((
        x.iter().map(|&a| a.max(0.0)).collect(),
        x.iter().map(|&a| (-a).max(0.0)).collect(),
    ))
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|a| !a.is_finite()) {
        Some(k) => Err(Error::Domain(format!("non-finite entry at index {k}"))),
        None => Ok(()),
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Scales `w` and `v` into `[-1, 1]`. Returns `(w', v', scale_w, scale_v)`;
/// a zero input keeps scale 1.
pub fn normalize(w: &Matrix, v: &[f64]) -> (Matrix, Vec<f64>, f64, f64) {
    let sw = match w.max_abs() {
        m if m > 0.0 => m,
        _ => 1.0,
    };
    let sv = match max_abs(v) {
        m if m > 0.0 => m,
        _ => 1.0,
    };
    (
        w.map(|a| a / sw),
        v.iter().map(|a| a / sv).collect(),
        sw,
        sv,
    )
}

/// Exact floating-point `W v`.
pub fn mvm_oracle(w: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != v.len() {
        return Err(Error::Domain(format!(
            "matrix has {} columns, vector has {} entries",
            w.cols(),
            v.len()
        )));
    }
    Ok((0..w.rows())
        .map(|r| w.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvmDiagnostics {
    /// Clamp events accumulated over this call's exposures.
    pub clamp_events: u64,
    /// Row units used for decoding, amperes.
    pub units: Vec<f64>,
    pub scale_w: f64,
    pub scale_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvmResult {
    pub output: Vec<f64>,
    pub passes_used: u32,
    pub diagnostics: MvmDiagnostics,
}

/// One physical array together with its calibration. Calls are serialized
/// by `&mut self`; clone the engine for parallel work.
#[derive(Debug, Clone)]
pub struct MvmEngine {
    array: ArrayInstance,
    cal: Option<ArrayCalibration>,
    // Scratch gates indexed [j * n + i].
    slm: [Vec<f64>; 2],
    pd: [Vec<f64>; 2],
    slm_base: Vec<f64>,
    pd_base: Vec<f64>,
    readout: Vec<f64>,
}

impl MvmEngine {
    /// An engine that refuses to multiply until calibrated.
    pub fn uncalibrated(array: ArrayInstance) -> Self {
        let nn = array.n() * array.n();
        Self {
            slm: [vec![0.0; nn], vec![0.0; nn]],
            pd: [vec![0.0; nn], vec![0.0; nn]],
            slm_base: vec![0.0; nn],
            pd_base: vec![0.0; nn],
            readout: vec![0.0; array.n()],
            array,
            cal: None,
        }
    }

    /// Builds the array for `(config, seed)` and calibrates it as configured.
    pub fn from_config(config: &RunConfig, seed: u64) -> Result<Self> {
        let mut array = build_array(config, seed)?;
        let repeats = config.calibration.repeats;
        let cal = match config.calibration.mode {
            CalibrationMode::Measured => {
                calibrate_array(&mut array, CalibrationOptions::new(repeats))?
            }
            CalibrationMode::NominalTwin => calibrate_nominal_twin(config, &mut array, repeats)?,
        };
        let mut e = Self::uncalibrated(array);
        e.set_calibration(cal)?;
        Ok(e)
    }

    /// Installs a calibration (also restores its ADC ranging on the array).
    pub fn set_calibration(&mut self, cal: ArrayCalibration) -> Result<()> {
        cal.attach(&mut self.array)?;
        let n = self.n();
        for (j, _) in cal.rows.iter().enumerate() {
            for i in 0..n {
                let (s, p) = cal.baseline(j, i);
                self.slm_base[j * n + i] = s.u;
                self.pd_base[j * n + i] = p.u;
            }
        }
        self.cal = Some(cal);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.array.n()
    }

    pub fn array(&self) -> &ArrayInstance {
        &self.array
    }

    pub fn array_mut(&mut self) -> &mut ArrayInstance {
        &mut self.array
    }

    pub fn calibration(&self) -> Option<&ArrayCalibration> {
        self.cal.as_ref()
    }

    pub fn reseed_noise(&mut self, seed: u64) {
        self.array.reseed_noise(seed);
    }

    fn load(&mut self, slm: &[f64], pd: &[f64]) {
        for (idx, (&s, &p)) in slm.iter().zip(pd).enumerate() {
            self.array.set_unit(Plane::Slm, idx, s);
            self.array.set_unit(Plane::Detector, idx, p);
        }
    }

    /// `W v` for an `N x N` matrix and `N`-vector.
    pub fn mvm(&mut self, w: &Matrix, v: &[f64]) -> Result<MvmResult> {
        let n = self.n();
        let Some(cal) = self.cal.take() else {
            return Err(Error::State("array is not calibrated".into()));
        };
        let r = self.mvm_with(&cal, w, v, n);
        self.cal = Some(cal);
        r
    }

    fn mvm_with(
        &mut self,
        cal: &ArrayCalibration,
        w: &Matrix,
        v: &[f64],
        n: usize,
    ) -> Result<MvmResult> {
        if w.shape() != (n, n) || v.len() != n {
            return Err(Error::Domain(format!(
                "expected {n}x{n} matrix and {n}-vector, got {}x{} and {}",
                w.rows(),
                w.cols(),
                v.len()
            )));
        }
        check_finite(w.as_slice())?;
        check_finite(v)?;
        let (wn, vn, scale_w, scale_v) = normalize(w, v);
        let (v_plus, v_minus) = split_signed(&vn)?;
        let (w_plus, w_minus) = split_signed(wn.as_slice())?;

        for (j, row) in cal.rows.iter().enumerate() {
            for i in 0..n {
                let idx = j * n + i;
                self.slm[0][idx] = cal.slm_gate_unchecked(row, i, v_plus[i]);
                self.slm[1][idx] = cal.slm_gate_unchecked(row, i, v_minus[i]);
                self.pd[0][idx] = cal.pd_gate_unchecked(row, i, w_plus[idx]);
                self.pd[1][idx] = cal.pd_gate_unchecked(row, i, w_minus[idx]);
            }
        }

        let clamps_before = self.array.clamp_events();
        let slm = std::mem::take(&mut self.slm);
        let pd = std::mem::take(&mut self.pd);
        let slm_base = std::mem::take(&mut self.slm_base);
        let pd_base = std::mem::take(&mut self.pd_base);
        let expose = |e: &mut Self, s: &[f64], p: &[f64]| -> Vec<f64> {
            e.load(s, p);
            let mut out = std::mem::take(&mut e.readout);
            e.array.expose_into(&mut out);
            let r = out.clone();
            e.readout = out;
            r
        };
        let mut s_vw = [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
        for a in 0..2 {
            for b in 0..2 {
                s_vw[a][b] = expose(self, &slm[a], &pd[b]);
            }
        }
        let s_v0 = [
            expose(self, &slm[0], &pd_base),
            expose(self, &slm[1], &pd_base),
        ];
        let s_0w = [
            expose(self, &slm_base, &pd[0]),
            expose(self, &slm_base, &pd[1]),
        ];
        self.slm = slm;
        self.pd = pd;
        self.slm_base = slm_base;
        self.pd_base = pd_base;

        let scale = scale_w * scale_v;
        let mut output = vec![0.0; n];
        for (j, row) in cal.rows.iter().enumerate() {
            let d = |a: usize, b: usize| {
                decode_row(s_vw[a][b][j], s_v0[a][j], s_0w[b][j], row.s00, row)
            };
            // Index 0 is the positive part, 1 the negative part.
            let o = (d(0, 0)? + d(1, 1)?) - (d(1, 0)? + d(0, 1)?);
            output[j] = o * scale;
        }
        if let Some(k) = output.iter().position(|o| !o.is_finite()) {
            return Err(Error::Numeric(format!("non-finite output in row {k}")));
        }
        Ok(MvmResult {
            output,
            passes_used: PASSES_PER_MVM,
            diagnostics: MvmDiagnostics {
                clamp_events: self.array.clamp_events() - clamps_before,
                units: cal.units(),
                scale_w,
                scale_v,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Precision;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_case(seed: u64, n: usize) -> (Matrix, Vec<f64>) {
        let mut r = rng::stream(seed, &[rng::tag::DATA]);
        let w = Matrix::from_fn(n, n, |_, _| r.random_range(-1.0..=1.0));
        let v = (0..n).map(|_| r.random_range(-1.0..=1.0)).collect();
        (w, v)
    }

    fn hand_rolled(w: &Matrix, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            let mut acc = 0.0;
            for c in 0..w.cols() {
                acc += w[(r, c)] * v[c];
            }
            out[r] = acc;
        }
        out
    }

    #[test]
    fn split_examples() {
        assert_eq!(
            split_signed(&[0.3, -0.5]).unwrap(),
            (vec![0.3, 0.0], vec![0.0, 0.5])
        );
        assert_eq!(split_signed(&[0.0]).unwrap(), (vec![0.0], vec![0.0]));
        assert!(split_signed(&[f64::NAN]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let w = Matrix::identity(3).map(|a| 10.0 * a);
        let (wn, vn, sw, sv) = normalize(&w, &[0.0, 0.0, 0.0]);
        assert_eq!(sw, 10.0);
        assert_eq!(sv, 1.0);
        assert_eq!(wn, Matrix::identity(3));
        assert_eq!(vn, vec![0.0; 3]);
    }

    #[test]
    fn oracle_matches_hand_rolled() {
        let (w, v) = random_case(3, 8);
        let o = mvm_oracle(&w, &v).unwrap();
        for (a, b) in o.iter().zip(hand_rolled(&w, &v)) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(
            mvm_oracle(&Matrix::identity(4), &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            mvm_oracle(&Matrix::from_vec(1, 1, vec![3.0]).unwrap(), &[-2.0]).unwrap(),
            vec![-6.0]
        );
        assert!(mvm_oracle(&Matrix::identity(2), &[1.0]).is_err());
    }

    fn ideal_engine(p: f64) -> MvmEngine {
        let mut c = RunConfig::ideal();
        c.device.variation = p;
        MvmEngine::from_config(&c, 21).unwrap()
    }

    #[test]
    fn uncalibrated_is_state_error() {
        let a = build_array(&RunConfig::default(), 1).unwrap();
        let mut e = MvmEngine::uncalibrated(a);
        let err = e.mvm(&Matrix::identity(8), &[0.0; 8]).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn dimension_mismatch_is_domain_error() {
        let mut e = ideal_engine(0.0);
        assert!(matches!(
            e.mvm(&Matrix::identity(4), &[0.0; 4]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            e.mvm(&Matrix::identity(8), &[0.0; 7]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn exact_with_ideal_converters() {
        let mut e = ideal_engine(0.2);
        for seed in 0..40 {
            let (w, v) = random_case(seed, 8);
            let r = e.mvm(&w, &v).unwrap();
            assert_eq!(r.passes_used, 8);
            for (a, b) in r.output.iter().zip(hand_rolled(&w, &v)) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let mut e = ideal_engine(0.2);
        let r = e.mvm(&Matrix::zeros(8, 8), &[0.5; 8]).unwrap();
        assert!(r.output.iter().all(|o| o.abs() < 1e-12));
        let mut c = RunConfig::default();
        c.noise.sigma = 1e-4;
        let mut e = MvmEngine::from_config(&c, 2).unwrap();
        let r = e.mvm(&Matrix::zeros(8, 8), &[0.5; 8]).unwrap();
        let floor = 6.0 * 1e-4 * 2.0 / r.diagnostics.units[0];
        assert!(r.output.iter().all(|o| o.abs() < floor));
    }

    #[test]
    fn sign_and_scale_covariance() {
        let mut c = RunConfig::default();
        c.quantizer.dac_bits = Precision::Bits(8);
        let mut e = MvmEngine::from_config(&c, 4).unwrap();
        let (w, v) = random_case(9, 8);
        let base = e.mvm(&w, &v).unwrap().output;
        let neg: Vec<f64> = v.iter().map(|a| -a).collect();
        let flipped = e.mvm(&w, &neg).unwrap().output;
        for (a, b) in base.iter().zip(&flipped) {
            assert_eq!(*a, -b);
        }
        let scaled = e.mvm(&w.map(|a| 4.0 * a), &v).unwrap().output;
        for (a, b) in base.iter().zip(&scaled) {
            assert_eq!(4.0 * a, *b);
        }
        let o = mvm_oracle(&w.map(|a| 3.0 * a), &v).unwrap();
        for (a, b) in o.iter().zip(mvm_oracle(&w, &v).unwrap()) {
            assert!((a - 3.0 * b).abs() < 1e-14);
        }
    }

    #[test]
    fn diagnostics_report_units_and_clamps() {
        let mut e = ideal_engine(0.0);
        let (w, v) = random_case(1, 8);
        let r = e.mvm(&w, &v).unwrap();
        assert_eq!(r.diagnostics.units.len(), 8);
        assert_eq!(r.diagnostics.clamp_events, 0);
        assert_eq!(r.diagnostics.scale_w, w.max_abs());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_reconstructs(x in prop::collection::vec(-1e6f64..1e6, 0..32)) {
            let (p, m) = split_signed(&x).unwrap();
            for k in 0..x.len() {
                prop_assert!(p[k] >= 0.0 && m[k] >= 0.0);
                prop_assert_eq!(p[k] * m[k], 0.0);
                prop_assert_eq!(p[k] - m[k], x[k]);
            }
        }

        #[test]
        fn normalized_in_box(x in prop::collection::vec(-1e3f64..1e3, 1..16)) {
            let w = Matrix::from_vec(1, x.len(), x.clone()).unwrap();
            let (wn, vn, sw, sv) = normalize(&w, &x);
            prop_assert!(wn.as_slice().iter().chain(&vn).all(|a| a.abs() <= 1.0));
            for k in 0..x.len() {
                prop_assert!((wn.as_slice()[k] * sw - x[k]).abs() <= 1e-12 * sw);
                prop_assert!((vn[k] * sv - x[k]).abs() <= 1e-12 * sv);
            }
        }
    }
}
