//! Row calibration: make an imperfect row compute an exact dot product.
//!
//! For every pair `(j, i)` the SLM and detector gates are swept one at a time
//! while the rest of the row is parked. By separability of `I = P0 T R`, each
//! 1-D sweep is an affine image of that unit's own curve, so normalizing it to
//! `[0, 1]` yields a table of achievable *relative* transmission (or
//! responsivity) that does not depend on the reference gate of the other unit.
//! A four-corner measurement gives the pair's product swing
//! `g_i = P0 dT_i dR_i`.
//!
//! The row unit is `u_row = min_i g_i`. Pair `i` encodes `v` at relative
//! transmission `v` and `w` at relative responsivity `w * u_row / g_i`, so every
//! pair has product swing exactly `u_row`. Four exposures then cancel the
//! affine cross terms:
//!
//! ```text
//! S(v,w) - S(v,0) - S(0,w) + S(0,0) = sum_i P0 (v_i dT_i)(w_i dR'_i) = u_row * sum_i v_i w_i
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{build_array, ArrayInstance, Plane};
use crate::config::{hex_string, RunConfig};
use crate::device::Precision;
use crate::error::{Error, Result};

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

/// Where the fixed unit sits during the other unit's sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    /// The code of maximum response found by a preliminary sweep.
    MaxResponse,
    /// Explicit normalized gates `(slm, detector)`.
    Fixed { slm: f64, pd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub repeats: u32,
    pub reference: Reference,
}

impl CalibrationOptions {
    pub fn new(repeats: u32) -> Self {
        Self {
            repeats,
            reference: Reference::MaxResponse,
        }
    }
}

/// A DAC setting: normalized gate and, for a finite DAC, its integer code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub u: f64,
    pub code: Option<u32>,
}

/// Sweep tables of one SLM/detector pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    /// Row readouts while sweeping the SLM gate over the DAC levels.
    pub slm_lut: Vec<f64>,
    /// Row readouts while sweeping the detector gate.
    pub pd_lut: Vec<f64>,
    /// Row readout with this pair at its baseline gates.
    pub i00: f64,
    /// Level indices of minimum / maximum response.
    pub slm_lo: usize,
    pub slm_hi: usize,
    pub pd_lo: usize,
    pub pd_hi: usize,
    /// Readout swings of the two sweeps.
    pub t_range: f64,
    pub r_range: f64,
    #[serde(skip)]
    slm_norm: Vec<f64>,
    #[serde(skip)]
    pd_norm: Vec<f64>,
    #[serde(skip)]
    slm_sorted: Vec<(f64, usize)>,
    #[serde(skip)]
    pd_sorted: Vec<(f64, usize)>,
}

impl PairTable {
    fn new(
        slm_lut: Vec<f64>,
        pd_lut: Vec<f64>,
        i00: f64,
        lo_hi: (usize, usize, usize, usize),
    ) -> Self {
        let (slm_lo, slm_hi, pd_lo, pd_hi) = lo_hi;
        let mut t = Self {
            t_range: slm_lut[slm_hi] - slm_lut[slm_lo],
            r_range: pd_lut[pd_hi] - pd_lut[pd_lo],
            slm_lut,
            pd_lut,
            i00,
            slm_lo,
            slm_hi,
            pd_lo,
            pd_hi,
            slm_norm: Vec::new(),
            pd_norm: Vec::new(),
            slm_sorted: Vec::new(),
            pd_sorted: Vec::new(),
        };
        t.rebuild();
        t
    }

    fn rebuild(&mut self) {
        let norm = |lut: &[f64], lo: usize, range: f64| -> Vec<f64> {
            lut.iter().map(|&x| (x - lut[lo]) / range).collect()
        };
        let sorted = |norm: &[f64]| -> Vec<(f64, usize)> {
            let mut s: Vec<(f64, usize)> = norm.iter().copied().zip(0..).collect();
            s.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            s
        };
        self.slm_norm = norm(&self.slm_lut, self.slm_lo, self.t_range);
        self.pd_norm = norm(&self.pd_lut, self.pd_lo, self.r_range);
        self.slm_sorted = sorted(&self.slm_norm);
        self.pd_sorted = sorted(&self.pd_norm);
    }

    /// Relative transmission `(T - T_lo) / dT` at every swept level.
    pub fn slm_relative(&self) -> &[f64] {
        &self.slm_norm
    }

    /// Relative responsivity `(R - R_lo) / dR` at every swept level.
    pub fn pd_relative(&self) -> &[f64] {
        &self.pd_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCalibration {
    pub row: usize,
    pub pairs: Vec<PairTable>,
    /// Per-pair product swing `P0 dT dR`, amperes.
    pub gains: Vec<f64>,
    /// Row unit `min_i gains[i]`, amperes.
    pub unit: f64,
    /// `unit / gains[i]`, in `(0, 1]`.
    pub pd_swing_scale: Vec<f64>,
    /// Cached readout with the whole row at baseline, `S(0, 0)`.
    pub s00: f64,
}

/// Calibration of every row plus the sweep grid it was measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayCalibration {
    pub format_version: u32,
    pub n: usize,
    pub dac: Precision,
    pub levels: Vec<f64>,
    pub adc_full_scale: Option<f64>,
    pub rows: Vec<RowCalibration>,
}

/// Serialized form with per-row digests of the sweep tables.
#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    format_version: u32,
    config_digest: String,
    row_units: Vec<f64>,
    lut_digests: Vec<String>,
    calibration: ArrayCalibration,
}

struct Sweeper<'a> {
    array: &'a mut ArrayInstance,
    rows: &'a [usize],
    repeats: u32,
    buf: Vec<f64>,
}

impl Sweeper<'_> {
    fn set(&mut self, plane: Plane, i: usize, per_row: &[f64]) {
        let n = self.array.n();
        for (&j, &u) in self.rows.iter().zip(per_row) {
            self.array.set_unit(plane, j * n + i, u);
        }
    }

    fn read(&mut self) -> Vec<f64> {
        self.array.expose_averaged(self.repeats, &mut self.buf);
        self.rows.iter().map(|&j| self.buf[j]).collect()
    }

    /// Sweeps one unit of pair `i` over `levels` in every selected row.
    /// Returns one table per selected row.
    fn sweep(&mut self, plane: Plane, i: usize, levels: &[f64]) -> Vec<Vec<f64>> {
        let mut luts = vec![Vec::with_capacity(levels.len()); self.rows.len()];
        for &u in levels {
            let uu = vec![u; self.rows.len()];
            self.set(plane, i, &uu);
            for (lut, s) in luts.iter_mut().zip(self.read()) {
                lut.push(s);
            }
        }
        luts
    }
}

fn argmin_max(xs: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x < xs[lo] {
            lo = k;
        }
        if x > xs[hi] {
            hi = k;
        }
    }
    (lo, hi)
}

/// Calibrates `rows` of `array` together. Rows are read in the same exposures
/// but each row only ever touches its own units, so results per row do not
/// depend on which other rows are calibrated alongside it.
pub fn calibrate_rows(
    array: &mut ArrayInstance,
    rows: &[usize],
    opts: CalibrationOptions,
) -> Result<Vec<RowCalibration>> {
    let n = array.n();
    if opts.repeats == 0 {
        return Err(Error::Domain("repeats must be at least 1".into()));
    }
    if let Some(&j) = rows.iter().find(|&&j| j >= n) {
        return Err(Error::Domain(format!("row {j} out of range for N = {n}")));
    }
    let levels = array.sweep_levels();
    let nr = rows.len();
    let mut sw = Sweeper {
        array,
        rows,
        repeats: opts.repeats,
        buf: vec![0.0; n],
    };

    // Park the rows at the lowest level and find each unit's extremes.
    let park = vec![levels[0]; nr];
    for i in 0..n {
        sw.set(Plane::Slm, i, &park);
        sw.set(Plane::Detector, i, &park);
    }
    let mut pre = vec![vec![(0usize, 0usize, 0usize, 0usize); n]; nr];
    for i in 0..n {
        let slm = sw.sweep(Plane::Slm, i, &levels);
        let slm_ext: Vec<_> = slm.iter().map(|l| argmin_max(l)).collect();
        let hi: Vec<f64> = slm_ext.iter().map(|e| levels[e.1]).collect();
        sw.set(Plane::Slm, i, &hi);
        let pd = sw.sweep(Plane::Detector, i, &levels);
        for r in 0..nr {
            let (plo, phi) = argmin_max(&pd[r]);
            pre[r][i] = (slm_ext[r].0, slm_ext[r].1, plo, phi);
        }
        sw.set(Plane::Slm, i, &park);
        sw.set(Plane::Detector, i, &park);
    }

    // Park every pair at its baseline and measure the tables.
    for i in 0..n {
        let a: Vec<f64> = (0..nr).map(|r| levels[pre[r][i].0]).collect();
        let b: Vec<f64> = (0..nr).map(|r| levels[pre[r][i].2]).collect();
        sw.set(Plane::Slm, i, &a);
        sw.set(Plane::Detector, i, &b);
    }
    let mut tables: Vec<Vec<PairTable>> = vec![Vec::with_capacity(n); nr];
    let mut gains = vec![vec![0.0; n]; nr];
    for i in 0..n {
        let base_slm: Vec<f64> = (0..nr).map(|r| levels[pre[r][i].0]).collect();
        let base_pd: Vec<f64> = (0..nr).map(|r| levels[pre[r][i].2]).collect();
        let (ref_slm, ref_pd): (Vec<f64>, Vec<f64>) = match opts.reference {
            Reference::MaxResponse => (
                (0..nr).map(|r| levels[pre[r][i].1]).collect(),
                (0..nr).map(|r| levels[pre[r][i].3]).collect(),
            ),
            Reference::Fixed { slm, pd } => (vec![slm; nr], vec![pd; nr]),
        };
        sw.set(Plane::Detector, i, &ref_pd);
        let slm_luts = sw.sweep(Plane::Slm, i, &levels);
        sw.set(Plane::Slm, i, &ref_slm);
        let pd_luts = sw.sweep(Plane::Detector, i, &levels);

        let ext: Vec<_> = (0..nr)
            .map(|r| {
                let (a_lo, a_hi) = argmin_max(&slm_luts[r]);
                let (b_lo, b_hi) = argmin_max(&pd_luts[r]);
                (a_lo, a_hi, b_lo, b_hi)
            })
            .collect();
        let pick = |f: &dyn Fn(&(usize, usize, usize, usize)) -> usize| -> Vec<f64> {
            ext.iter().map(|e| levels[f(e)]).collect()
        };
        let (a_lo, a_hi, b_lo, b_hi) = (
            pick(&|e| e.0),
            pick(&|e| e.1),
            pick(&|e| e.2),
            pick(&|e| e.3),
        );
        sw.set(Plane::Slm, i, &a_hi);
        sw.set(Plane::Detector, i, &b_hi);
        let s11 = sw.read();
        sw.set(Plane::Detector, i, &b_lo);
        let s10 = sw.read();
        sw.set(Plane::Slm, i, &a_lo);
        let s00 = sw.read();
        sw.set(Plane::Detector, i, &b_hi);
        let s01 = sw.read();
        sw.set(Plane::Slm, i, &base_slm);
        sw.set(Plane::Detector, i, &base_pd);

        for r in 0..nr {
            let g = s11[r] - s10[r] - s01[r] + s00[r];
            let t = PairTable::new(slm_luts[r].clone(), pd_luts[r].clone(), s00[r], ext[r]);
            if !(t.t_range > 0.0 && t.r_range > 0.0 && g > 0.0) {
                return Err(Error::Calibration(format!(
                    "degenerate pair (row {}, pair {i}): swings T {:.3e}, R {:.3e}, product {:.3e}",
                    rows[r], t.t_range, t.r_range, g
                )));
            }
            gains[r][i] = g;
            tables[r].push(t);
        }
    }

    // Final baseline and the cached S(0, 0).
    for i in 0..n {
        let a: Vec<f64> = (0..nr).map(|r| levels[tables[r][i].slm_lo]).collect();
        let b: Vec<f64> = (0..nr).map(|r| levels[tables[r][i].pd_lo]).collect();
        sw.set(Plane::Slm, i, &a);
        sw.set(Plane::Detector, i, &b);
    }
    let s00 = sw.read();

    Ok(tables
        .into_iter()
        .zip(gains)
        .enumerate()
        .map(|(r, (pairs, gains))| {
            let unit = gains.iter().copied().fold(f64::INFINITY, f64::min);
            RowCalibration {
                row: rows[r],
                pd_swing_scale: gains.iter().map(|g| unit / g).collect(),
                pairs,
                gains,
                unit,
                s00: s00[r],
            }
        })
        .collect())
}

/// Calibrates row `j` alone.
pub fn calibrate_row(array: &mut ArrayInstance, j: usize, repeats: u32) -> Result<RowCalibration> {
    Ok(calibrate_rows(array, &[j], CalibrationOptions::new(repeats))?.remove(0))
}

/// Calibrates every row. When the ADC full scale is unset it is ranged to the
/// largest achievable row sum, and the baselines are re-read through it.
pub fn calibrate_array(
    array: &mut ArrayInstance,
    opts: CalibrationOptions,
) -> Result<ArrayCalibration> {
    let rows: Vec<usize> = (0..array.n()).collect();
    let row_cals = calibrate_rows(array, &rows, opts)?;
    let mut cal = ArrayCalibration {
        format_version: CALIBRATION_FORMAT_VERSION,
        n: array.n(),
        dac: array.quantizer().dac,
        levels: array.sweep_levels(),
        adc_full_scale: array.quantizer().adc_full_scale,
        rows: row_cals,
    };
    cal.finish_on(array, opts.repeats);
    Ok(cal)
}

/// Uncorrected control: tables measured on a variation-free twin of the
/// configured device are used as-is on `array`. Only the ADC range and the
/// baseline readout come from the real array.
pub fn calibrate_nominal_twin(
    config: &RunConfig,
    array: &mut ArrayInstance,
    repeats: u32,
) -> Result<ArrayCalibration> {
    let mut twin_cfg = config.clone();
    twin_cfg.device.variation = 0.0;
    twin_cfg.noise.sigma = 0.0;
    let mut twin = build_array(&twin_cfg, 0)?;
    if twin.n() != array.n()
        || twin.p0() != array.p0()
        || twin.quantizer().dac != array.quantizer().dac
    {
        return Err(Error::Domain(
            "twin configuration does not match the array".into(),
        ));
    }
    let rows: Vec<usize> = (0..twin.n()).collect();
    let row_cals = calibrate_rows(&mut twin, &rows, CalibrationOptions::new(1))?;
    let mut cal = ArrayCalibration {
        format_version: CALIBRATION_FORMAT_VERSION,
        n: array.n(),
        dac: array.quantizer().dac,
        levels: array.sweep_levels(),
        adc_full_scale: array.quantizer().adc_full_scale,
        rows: row_cals,
    };
    cal.finish_on(array, repeats);
    Ok(cal)
}

impl ArrayCalibration {
    /// Ranges the ADC (if unset) and caches `S(0, 0)` for every row of `array`.
    fn finish_on(&mut self, array: &mut ArrayInstance, repeats: u32) {
        let n = self.n;
        let mut buf = vec![0.0; n];
        if array.quantizer().adc_full_scale.is_none() {
            for (j, row) in self.rows.iter().enumerate() {
                for i in 0..n {
                    array.set_unit(Plane::Slm, j * n + i, self.levels[row.pairs[i].slm_hi]);
                    let pd = self.pd_gate_unchecked(row, i, 1.0);
                    array.set_unit(Plane::Detector, j * n + i, pd);
                }
            }
            array.expose_averaged(repeats, &mut buf);
            let fs = buf.iter().copied().fold(0.0, f64::max);
            if fs > 0.0 {
                array.set_adc_full_scale(fs);
                self.adc_full_scale = Some(fs);
            }
        }
        for (j, row) in self.rows.iter().enumerate() {
            for i in 0..n {
                array.set_unit(Plane::Slm, j * n + i, self.levels[row.pairs[i].slm_lo]);
                array.set_unit(Plane::Detector, j * n + i, self.levels[row.pairs[i].pd_lo]);
            }
        }
        array.expose_averaged(repeats, &mut buf);
        for (row, s) in self.rows.iter_mut().zip(&buf) {
            row.s00 = *s;
        }
    }

    fn ideal(&self) -> bool {
        self.dac == Precision::Ideal
    }

    fn gate(&self, u: f64) -> Gate {
        Gate {
            u,
            code: self.dac.max_code().map(|m| (u * m as f64).round() as u32),
        }
    }

    #[inline]
    pub(crate) fn slm_gate_unchecked(&self, row: &RowCalibration, i: usize, v: f64) -> f64 {
        let t = &row.pairs[i];
        if v == 0.0 {
            return self.levels[t.slm_lo];
        }
        invert(&t.slm_norm, &t.slm_sorted, &self.levels, v, self.ideal())
    }

    #[inline]
    pub(crate) fn pd_gate_unchecked(&self, row: &RowCalibration, i: usize, w: f64) -> f64 {
        let t = &row.pairs[i];
        if w == 0.0 {
            return self.levels[t.pd_lo];
        }
        let target = w * row.pd_swing_scale[i];
        invert(&t.pd_norm, &t.pd_sorted, &self.levels, target, self.ideal())
    }

    /// Gates realizing relative transmission `v` and scaled relative
    /// responsivity `w` on pair `i` of row `j`.
    pub fn encode_pair(&self, j: usize, i: usize, v: f64, w: f64) -> Result<(Gate, Gate)> {
        for (name, x) in [("v", v), ("w", w)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain(format!("{name} = {x} outside [0, 1]")));
            }
        }
        let row = self
            .rows
            .get(j)
            .ok_or_else(|| Error::Domain(format!("row {j} out of range")))?;
        if i >= row.pairs.len() {
            return Err(Error::Domain(format!("pair {i} out of range")));
        }
        Ok((
            self.gate(self.slm_gate_unchecked(row, i, v)),
            self.gate(self.pd_gate_unchecked(row, i, w)),
        ))
    }

    /// Baseline gates `(slm, detector)` of pair `i` in row `j`.
    pub fn baseline(&self, j: usize, i: usize) -> (Gate, Gate) {
        let t = &self.rows[j].pairs[i];
        (
            self.gate(self.levels[t.slm_lo]),
            self.gate(self.levels[t.pd_lo]),
        )
    }

    pub fn units(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.unit).collect()
    }

    /// Largest gap between a target in the scaled swing and the nearest
    /// achievable relative value, over all pairs (zero for an ideal DAC).
    pub fn max_lut_step(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.rows {
            for t in &row.pairs {
                for s in [&t.slm_sorted, &t.pd_sorted] {
                    for w in s.windows(2) {
                        if w[0].0 >= 0.0 && w[1].0 <= 1.0 {
                            worst = worst.max(w[1].0 - w[0].0);
                        }
                    }
                }
            }
        }
        worst
    }

    fn lut_digest(row: &RowCalibration) -> String {
        let mut h = Sha256::new();
        for t in &row.pairs {
            for x in t.slm_lut.iter().chain(&t.pd_lut) {
                h.update(x.to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }

    pub fn to_json(&self, config_digest: &str) -> String {
        let file = CalibrationFile {
            format_version: CALIBRATION_FORMAT_VERSION,
            config_digest: config_digest.to_string(),
            row_units: self.units(),
            lut_digests: self.rows.iter().map(Self::lut_digest).collect(),
            calibration: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("calibration always serializes")
    }

    /// Parses a calibration file; returns it with the config digest it was made under.
    pub fn from_json(text: &str) -> Result<(Self, String)> {
        let file: CalibrationFile = serde_json::from_str(text)
            .map_err(|e| Error::format(None, format!("calibration file line {}: {e}", e.line())))?;
        if file.format_version != CALIBRATION_FORMAT_VERSION {
            return Err(Error::format(
                None,
                format!(
                    "unsupported calibration format version {}",
                    file.format_version
                ),
            ));
        }
        let mut cal = file.calibration;
        if cal.rows.len() != cal.n || cal.rows.iter().any(|r| r.pairs.len() != cal.n) {
            return Err(Error::format(
                None,
                "calibration row/pair count does not match n",
            ));
        }
        for (row, digest) in cal.rows.iter().zip(&file.lut_digests) {
            if &Self::lut_digest(row) != digest {
                return Err(Error::format(
                    None,
                    format!("sweep table digest mismatch in row {}", row.row),
                ));
            }
        }
        for row in &mut cal.rows {
            for t in &mut row.pairs {
                if t.slm_lut.len() != cal.levels.len() || t.pd_lut.len() != cal.levels.len() {
                    return Err(Error::format(
                        None,
                        "sweep table length does not match levels",
                    ));
                }
                t.rebuild();
            }
        }
        Ok((cal, file.config_digest))
    }

    /// Applies stored ADC ranging to an array built from the same config.
    pub fn attach(&self, array: &mut ArrayInstance) -> Result<()> {
        if array.n() != self.n || array.quantizer().dac != self.dac {
            return Err(Error::Calibration(
                "calibration does not match the array dimension or DAC".into(),
            ));
        }
        if let Some(fs) = self.adc_full_scale {
            array.set_adc_full_scale(fs);
        }
        Ok(())
    }
}

/// Combines the four readouts of one row into the algebraic dot product.
pub fn decode_row(s_vw: f64, s_v0: f64, s_0w: f64, s_00: f64, cal: &RowCalibration) -> Result<f64> {
    if !(cal.unit > 0.0) {
        return Err(Error::Calibration(format!(
            "row {} has non-positive unit {}",
            cal.row, cal.unit
        )));
    }
    Ok((s_vw - s_v0 - s_0w + s_00) / cal.unit)
}

/// Gate whose relative response is closest to `target`. With `refine`, the
/// answer is refined between grid points by a local quadratic through three
/// neighbouring samples.
fn invert(norm: &[f64], sorted: &[(f64, usize)], levels: &[f64], target: f64, refine: bool) -> f64 {
    let pos = sorted.partition_point(|e| e.0 < target);
    let above = sorted.get(pos).copied();
    let below = pos.checked_sub(1).map(|p| {
        let v = sorted[p].0;
        sorted[sorted.partition_point(|e| e.0 < v)]
    });
    let k = match (below, above) {
        (Some(b), Some(a)) => {
            let (db, da) = (target - b.0, a.0 - target);
            if db < da || (db == da && b.1 < a.1) {
                b.1
            } else {
                a.1
            }
        }
        (Some(b), None) => b.1,
        (None, Some(a)) => a.1,
        (None, None) => unreachable!("empty table"),
    };
    if !refine || norm[k] == target || norm.len() < 3 {
        return levels[k];
    }
    let f = |idx: usize| norm[idx] - target;
    let segment = [
        k.checked_sub(1).map(|a| (a, k)),
        (k + 1 < norm.len()).then_some((k, k + 1)),
    ]
    .into_iter()
    .flatten()
    .find(|&(a, b)| f(a) * f(b) <= 0.0);
    let Some((a, b)) = segment else {
        return levels[k];
    };
    let (p0, p1, p2) = if b + 1 < norm.len() {
        (a, b, b + 1)
    } else {
        (a - 1, a, b)
    };
    let (x0, x1, x2) = (levels[p0], levels[p1], levels[p2]);
    let (y0, y1, y2) = (f(p0), f(p1), f(p2));
    let interp = |x: f64| {
        y0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
            + y1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
            + y2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
    };
    let (mut lo, mut hi) = (levels[a], levels[b]);
    let mut flo = f(a);
    if flo == 0.0 {
        return lo;
    }
    if f(b) == 0.0 {
        return hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = interp(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(p: f64, ideal_dac: bool) -> RunConfig {
        let mut c = RunConfig::default();
        c.device.variation = p;
        if ideal_dac {
            c.quantizer.dac_bits = Precision::Ideal;
        }
        c
    }

    /// Product swing read straight from the stored curves at the baseline and
    /// full-swing gates the calibration chose.
    fn direct_gain(a: &ArrayInstance, cal: &ArrayCalibration, j: usize, i: usize) -> f64 {
        let t = &cal.rows[j].pairs[i];
        let ev = |c: &crate::ResponseCurve, u: f64| c.eval(u).unwrap().value;
        let dt = ev(a.slm_curve(j, i), cal.levels[t.slm_hi])
            - ev(a.slm_curve(j, i), cal.levels[t.slm_lo]);
        let dr =
            ev(a.pd_curve(j, i), cal.levels[t.pd_hi]) - ev(a.pd_curve(j, i), cal.levels[t.pd_lo]);
        a.p0() * dt * dr
    }

    #[test]
    fn uniform_hardware_has_equal_gains() {
        let c = config(0.0, false);
        let mut a = build_array(&c, 1).unwrap();
        let row = calibrate_row(&mut a, 3, 1).unwrap();
        for g in &row.gains {
            assert!((g - row.unit).abs() < 1e-14);
        }
        assert!(row.pd_swing_scale.iter().all(|s| (s - 1.0).abs() < 1e-12));
        // 0.5 dT * 0.5 dR at p0 = 1
        assert!((row.unit - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unit_is_minimum_direct_gain() {
        let c = config(0.2, false);
        let mut a = build_array(&c, 17).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        for j in 0..8 {
            let direct: Vec<f64> = (0..8).map(|i| direct_gain(&a, &cal, j, i)).collect();
            let min = direct.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((cal.rows[j].unit - min).abs() < 1e-13, "row {j}");
            for i in 0..8 {
                assert!((cal.rows[j].gains[i] - direct[i]).abs() < 1e-13);
                assert!(cal.rows[j].unit <= cal.rows[j].gains[i]);
                assert!(cal.rows[j].pd_swing_scale[i] <= 1.0);
            }
        }
    }

    #[test]
    fn lut_lengths_match_levels() {
        let mut a = build_array(&config(0.2, false), 2).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        for row in &cal.rows {
            for t in &row.pairs {
                assert_eq!(t.slm_lut.len(), 256);
                assert_eq!(t.pd_lut.len(), 256);
                assert!(t.slm_relative().iter().all(|&x| x >= -1e-12));
            }
        }
    }

    #[test]
    fn relative_tables_do_not_depend_on_reference() {
        let c = config(0.2, false);
        let mut a = build_array(&c, 4).unwrap();
        let r1 = calibrate_rows(&mut a, &[2], CalibrationOptions::new(1)).unwrap();
        let mut b = build_array(&c, 4).unwrap();
        let opts = CalibrationOptions {
            repeats: 1,
            reference: Reference::Fixed { slm: 0.5, pd: 0.3 },
        };
        let r2 = calibrate_rows(&mut b, &[2], opts).unwrap();
        for (p, q) in r1[0].pairs.iter().zip(&r2[0].pairs) {
            for (x, y) in p.slm_relative().iter().zip(q.slm_relative()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in p.pd_relative().iter().zip(q.pd_relative()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!((r1[0].unit - r2[0].unit).abs() < 1e-13);
    }

    #[test]
    fn averaging_reduces_lut_noise() {
        // Fixed references keep the sweeps comparable; subtracting each table's
        // mean offset removes the dependence on noisy baseline picks.
        let opts = |repeats| CalibrationOptions {
            repeats,
            reference: Reference::Fixed { slm: 1.0, pd: 1.0 },
        };
        let mut c = config(0.2, false);
        let clean = {
            let mut a = build_array(&c, 5).unwrap();
            calibrate_rows(&mut a, &[0], opts(1)).unwrap().remove(0)
        };
        c.noise.sigma = 1e-3;
        let spread = |repeats: u32| {
            let mut a = build_array(&c, 5).unwrap();
            let row = calibrate_rows(&mut a, &[0], opts(repeats))
                .unwrap()
                .remove(0);
            let mut ss = 0.0;
            let mut count = 0;
            for (p, q) in row.pairs.iter().zip(&clean.pairs) {
                let d: Vec<f64> = p
                    .slm_lut
                    .iter()
                    .zip(&q.slm_lut)
                    .map(|(x, y)| x - y)
                    .collect();
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                ss += d.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
                count += d.len() - 1;
            }
            (ss / count as f64).sqrt()
        };
        let (s1, s16) = (spread(1), spread(16));
        assert!((s1 / 1e-3 - 1.0).abs() < 0.1, "{s1}");
        assert!((s1 / s16 - 4.0).abs() < 0.4, "ratio {}", s1 / s16);
    }

    #[test]
    fn zero_encodes_to_baseline_and_full_swing_on_min_pair() {
        let mut a = build_array(&config(0.2, false), 6).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        let (s, p) = cal.encode_pair(1, 4, 0.0, 0.0).unwrap();
        assert_eq!((s, p), cal.baseline(1, 4));
        let row = &cal.rows[1];
        let min_i = (0..8).find(|&i| row.gains[i] == row.unit).unwrap();
        let (s, p) = cal.encode_pair(1, min_i, 1.0, 1.0).unwrap();
        let t = &row.pairs[min_i];
        assert_eq!(s.u, cal.levels[t.slm_hi]);
        assert_eq!(p.u, cal.levels[t.pd_hi]);
        assert!(cal.encode_pair(1, 4, 1.2, 0.0).is_err());
        assert!(cal.encode_pair(1, 4, 0.0, -0.1).is_err());
    }

    #[test]
    fn decode_null_combination() {
        let mut a = build_array(&config(0.0, false), 6).unwrap();
        let row = calibrate_row(&mut a, 0, 1).unwrap();
        assert_eq!(decode_row(0.7, 0.7, 0.7, 0.7, &row).unwrap(), 0.0);
        let mut bad = row.clone();
        bad.unit = 0.0;
        assert!(matches!(
            decode_row(1.0, 0.0, 0.0, 0.0, &bad),
            Err(Error::Calibration(_))
        ));
    }

    /// Runs the four exposures for one row with explicit `v`, `w` and decodes.
    fn four_pass(
        a: &mut ArrayInstance,
        cal: &ArrayCalibration,
        j: usize,
        v: &[f64],
        w: &[f64],
    ) -> f64 {
        let n = a.n();
        let set = |a: &mut ArrayInstance, vv: &[f64], ww: &[f64]| {
            for i in 0..n {
                let (s, p) = cal.encode_pair(j, i, vv[i], ww[i]).unwrap();
                a.set_unit(Plane::Slm, j * n + i, s.u);
                a.set_unit(Plane::Detector, j * n + i, p.u);
            }
            a.expose_and_read().values[j]
        };
        let zeros = vec![0.0; n];
        let svw = set(a, v, w);
        let sv0 = set(a, v, &zeros);
        let s0w = set(a, &zeros, w);
        decode_row(svw, sv0, s0w, cal.rows[j].s00, &cal.rows[j]).unwrap()
    }

    #[test]
    fn exact_single_pair_with_ideal_dac() {
        let mut c = config(0.2, true);
        c.array.n = 1;
        let mut a = build_array(&c, 8).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        let d = four_pass(&mut a, &cal, 0, &[0.5], &[0.5]);
        assert!((d - 0.25).abs() < 1e-12, "{d}");
    }

    #[test]
    fn exact_dot_product_with_ideal_dac() {
        use rand::{Rng, SeedableRng};
        let c = config(0.2, true);
        let mut a = build_array(&c, 9).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let v: Vec<f64> = (0..8).map(|_| rng.random()).collect();
            let w: Vec<f64> = (0..8).map(|_| rng.random()).collect();
            let j = rng.random_range(0..8);
            let d = four_pass(&mut a, &cal, j, &v, &w);
            let exact: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
            assert!((d - exact).abs() < 1e-9, "{d} vs {exact}");
        }
    }

    #[test]
    fn quantized_single_pair_within_lut_step() {
        let mut c = config(0.2, false);
        c.array.n = 1;
        let mut a = build_array(&c, 10).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        let t = &cal.rows[0].pairs[0];
        // Realized relative values bound the decode error.
        let (s, p) = cal.encode_pair(0, 0, 0.5, 0.5).unwrap();
        let k_s = cal.levels.iter().position(|&u| u == s.u).unwrap();
        let k_p = cal.levels.iter().position(|&u| u == p.u).unwrap();
        let dv = (t.slm_relative()[k_s] - 0.5).abs();
        let dw = (t.pd_relative()[k_p] / cal.rows[0].pd_swing_scale[0] - 0.5).abs();
        let step = cal.max_lut_step();
        assert!(dv <= step / 2.0 + 1e-12 && dw <= step / 2.0 + 1e-12);
        let d = four_pass(&mut a, &cal, 0, &[0.5], &[0.5]);
        assert!((d - 0.25).abs() <= 2.0 * step, "{d}, step {step}");
    }

    #[test]
    fn row_locality() {
        let c = config(0.2, false);
        let mut a = build_array(&c, 12).unwrap();
        let all = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        let mut b = build_array(&c, 12).unwrap();
        let row5 = calibrate_row(&mut b, 5, 1).unwrap();
        let mut r = all.rows[5].clone();
        r.s00 = row5.s00;
        assert_eq!(r, row5);
    }

    #[test]
    fn achievability_within_one_step() {
        let mut a = build_array(&config(0.2, false), 13).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        let step = cal.max_lut_step();
        assert!(step < 0.01);
        for (j, row) in cal.rows.iter().enumerate() {
            for i in 0..8 {
                for k in 0..=100 {
                    let x = k as f64 / 100.0;
                    let (_, p) = cal.encode_pair(j, i, x, x).unwrap();
                    let kp = cal.levels.iter().position(|&u| u == p.u).unwrap();
                    let realized = row.pairs[i].pd_relative()[kp];
                    assert!((realized - x * row.pd_swing_scale[i]).abs() <= step);
                }
            }
        }
    }

    #[test]
    fn degenerate_pair_is_reported() {
        let mut c = config(0.0, false);
        c.device.transmission = [0.0, 0.0, 0.5];
        let mut a = build_array(&c, 0).unwrap();
        let err = calibrate_row(&mut a, 2, 1).unwrap_err();
        assert!(
            matches!(err, Error::Calibration(ref m) if m.contains("row 2, pair 0")),
            "{err}"
        );
    }

    #[test]
    fn auto_ranging_sets_full_scale() {
        let mut c = config(0.2, false);
        c.quantizer.adc_bits = Precision::Bits(10);
        let mut a = build_array(&c, 14).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        let fs = cal.adc_full_scale.unwrap();
        assert_eq!(a.quantizer().adc_full_scale, Some(fs));
        // Largest row sum is below N * max T * max R.
        assert!(fs > 0.0 && fs <= 8.0 * 0.825 * 0.88);
    }

    #[test]
    fn json_round_trip_and_tamper_detection() {
        let mut a = build_array(&config(0.2, false), 15).unwrap();
        let cal = calibrate_array(&mut a, CalibrationOptions::new(1)).unwrap();
        let text = cal.to_json("abc");
        let (back, digest) = ArrayCalibration::from_json(&text).unwrap();
        assert_eq!(digest, "abc");
        assert_eq!(back, cal);
        let tampered = text.replacen("\"slm_lut\": [\n", "\"slm_lut\": [\n 0.123456,", 1);
        assert!(ArrayCalibration::from_json(&tampered).is_err());
        assert!(ArrayCalibration::from_json("{}").is_err());
    }

    #[test]
    fn nominal_twin_ignores_variation() {
        let c = config(0.2, false);
        let mut a = build_array(&c, 16).unwrap();
        let cal = calibrate_nominal_twin(&c, &mut a, 1).unwrap();
        for row in &cal.rows {
            assert!(row.pd_swing_scale.iter().all(|&s| (s - 1.0).abs() < 1e-12));
            assert!((row.unit - 0.25).abs() < 1e-12);
        }
    }
}
