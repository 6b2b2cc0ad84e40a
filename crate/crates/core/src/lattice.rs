//! Multichannel Kalman filter in lattice form.
//!
//! Each stage holds a forward predictor, a backward predictor and a
//! joint-process estimator. All three are sets of single-tap MISO filters, one
//! per output row, adapted by the covariance-form Kalman recursion. Rows that
//! share the same input support also share one covariance and one gain.

use std::collections::{BTreeMap, VecDeque};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependency::{DependencyMap, InputLayout};
use crate::error::{Error, Result};
use crate::filterbank::SubbandFrame;
use crate::kalman::{inner, put_complex, step_coefficients, Covariance, KalmanParams, Reader};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub const XI_FLOOR: f64 = 1e-10;

/// Which regressor drives the forward-predictor gain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainPairing {
    /// Forward predictor adapts with the gain of the current backward error,
    /// like the joint-process estimator.
    #[default]
    Printed,
    /// Forward predictor adapts with the gain of its own regressor, the
    /// delayed backward error.
    Conventional,
}

/// Input-side support of the forward and backward predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorSupport {
    Full,
    /// Row `i` uses input columns within distance `w` of `i`.
    Band(usize),
    /// Row `i` uses the dependency-map row `i`; needs a square map.
    FollowMap,
}

impl Default for PredictorSupport {
    fn default() -> Self {
        PredictorSupport::Band(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowConfig {
    /// Exponential smoothing factor for residual energy and noise estimates.
    pub smoothing: f64,
    /// Minimum shadow age and stationarity look-back, in frames.
    pub window: usize,
    /// Largest relative change of the smoothed noise estimate over `window`
    /// that still counts as stationary.
    pub stationarity: f64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.99,
            window: 100,
            stationarity: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub num_bins: usize,
    pub stages: usize,
    pub layout: InputLayout,
    pub sigma0: f64,
    pub gamma: f64,
    pub transition: f64,
    pub xi_floor: f64,
    pub pairing: GainPairing,
    pub predictor_support: PredictorSupport,
    pub shadow: ShadowConfig,
}

impl LatticeConfig {
    pub fn new(num_bins: usize, stages: usize) -> Self {
        Self {
            num_bins,
            stages,
            layout: InputLayout::default(),
            sigma0: 1.0,
            gamma: 1e-6,
            transition: 0.9999,
            xi_floor: XI_FLOOR,
            pairing: GainPairing::default(),
            predictor_support: PredictorSupport::default(),
            shadow: ShadowConfig::default(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layout.width(self.num_bins)
    }

    fn kalman(&self) -> KalmanParams {
        KalmanParams {
            sigma0: self.sigma0,
            gamma: self.gamma,
            xi0: 1.0,
            transition: self.transition,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bins == 0 {
            return Err(Error::config("lattice needs at least one bin"));
        }
        if self.stages == 0 {
            return Err(Error::config("lattice needs at least one stage"));
        }
        self.kalman().validate()?;
        if !(self.xi_floor > 0.0) || !self.xi_floor.is_finite() {
            return Err(Error::config("noise floor must be positive"));
        }
        let s = &self.shadow;
        if !(s.smoothing > 0.0 && s.smoothing < 1.0) || s.window == 0 || !(s.stationarity > 0.0) {
            return Err(Error::config(format!("invalid shadow settings {s:?}")));
        }
        Ok(())
    }
}

/// Single-tap MISO filters for every output row of one coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    inputs: usize,
    outputs: usize,
    groups: Vec<RowGroup>,
}

#[derive(Debug, Clone, PartialEq)]
struct RowGroup {
    support: Vec<usize>,
    rows: Vec<usize>,
    coefs: Vec<Vec<Complex64>>,
    cov: Covariance,
}

fn plan_groups(supports: &[Vec<usize>]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut by_support: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for (row, s) in supports.iter().enumerate() {
        if !s.is_empty() {
            by_support.entry(s).or_default().push(row);
        }
    }
    by_support
        .into_iter()
        .map(|(s, rows)| (s.to_vec(), rows))
        .collect()
}

impl CoefficientSet {
    /// `supports[r]` lists the input columns row `r` may use.
    pub fn new(inputs: usize, supports: &[Vec<usize>], params: &KalmanParams) -> Result<Self> {
        if supports.iter().flatten().any(|&c| c >= inputs) {
            return Err(Error::shape("support column out of range"));
        }
        let groups = plan_groups(supports)
            .into_iter()
            .map(|(support, rows)| {
                Ok(RowGroup {
                    coefs: vec![vec![ZERO; support.len()]; rows.len()],
                    cov: Covariance::new(support.len(), params)?,
                    support,
                    rows,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            inputs,
            outputs: supports.len(),
            groups,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// `desired - W^H regressor`, row by row.
    pub fn apply(&self, desired: &[Complex64], regressor: &[Complex64]) -> Vec<Complex64> {
        let mut out = desired.to_vec();
        for g in &self.groups {
            for (&row, h) in g.rows.iter().zip(&g.coefs) {
                let mut acc = ZERO;
                for (hj, &c) in h.iter().zip(&g.support) {
                    acc += hj.conj() * regressor[c];
                }
                out[row] -= acc;
            }
        }
        out
    }

    /// One Kalman step per group with the given prior errors.
    pub fn adapt(&mut self, regressor: &[Complex64], errors: &[Complex64], xi2: f64) -> Result<()> {
        let mut x = Vec::new();
        for g in &mut self.groups {
            x.clear();
            x.extend(g.support.iter().map(|&c| regressor[c]));
            let gain = g.cov.gain(&x, xi2)?;
            for (&row, h) in g.rows.iter().zip(g.coefs.iter_mut()) {
                step_coefficients(h, g.cov.transition(), &gain, errors[row]);
            }
            g.cov.advance(&gain);
        }
        Ok(())
    }

    /// Row-major `inputs x outputs`; column `r` holds row `r`'s coefficients.
    pub fn dense(&self) -> Vec<Complex64> {
        let mut m = vec![ZERO; self.inputs * self.outputs];
        for g in &self.groups {
            for (&row, h) in g.rows.iter().zip(&g.coefs) {
                for (&c, v) in g.support.iter().zip(h) {
                    m[c * self.outputs + row] = *v;
                }
            }
        }
        m
    }

    pub fn row_coefficients(&self, row: usize) -> Option<(&[usize], &[Complex64])> {
        self.groups.iter().find_map(|g| {
            g.rows
                .iter()
                .position(|&r| r == row)
                .map(|i| (&g.support[..], &g.coefs[i][..]))
        })
    }

    pub fn row_covariance(&self, row: usize) -> Option<&Covariance> {
        self.groups
            .iter()
            .find(|g| g.rows.contains(&row))
            .map(|g| &g.cov)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn resets(&self) -> u64 {
        self.groups.iter().map(|g| g.cov.resets()).sum()
    }

    /// Copies coefficients on shared columns and covariances of identical supports.
    fn warm_start_from(&mut self, old: &CoefficientSet) {
        let mut old_rows: Vec<Option<(&[usize], &[Complex64])>> = vec![None; old.outputs];
        for g in &old.groups {
            for (&row, h) in g.rows.iter().zip(&g.coefs) {
                old_rows[row] = Some((&g.support, h));
            }
        }
        for g in &mut self.groups {
            if let Some(src) = old.groups.iter().find(|o| o.support == g.support) {
                g.cov = src.cov.clone();
            }
            for (&row, h) in g.rows.iter().zip(g.coefs.iter_mut()) {
                let Some(Some((support, values))) = old_rows.get(row) else {
                    continue;
                };
                for (dst, c) in h.iter_mut().zip(&g.support) {
                    if let Ok(i) = support.binary_search(c) {
                        *dst = values[i];
                    }
                }
            }
        }
    }

    fn encoded_len(supports: &[Vec<usize>]) -> Option<usize> {
        plan_groups(supports).iter().try_fold(0usize, |acc, (s, rows)| {
            let d = s.len();
            d.checked_mul(d)?
                .checked_add(rows.len().checked_mul(d)?)?
                .checked_add(acc)
        })
    }

    fn encode(&self, out: &mut Vec<u8>) {
        for g in &self.groups {
            put_complex(out, g.cov.matrix());
            for h in &g.coefs {
                put_complex(out, h);
            }
        }
    }

    fn decode(&mut self, r: &mut Reader) -> Result<()> {
        for g in &mut self.groups {
            let d = g.support.len();
            let matrix = r.complex(d * d)?;
            g.cov.restore_matrix(matrix)?;
            for h in &mut g.coefs {
                *h = r.complex(d)?;
            }
        }
        Ok(())
    }
}

/// Errors leaving one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSignals {
    pub forward: Vec<Complex64>,
    pub backward: Vec<Complex64>,
    pub error: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeStage {
    /// Forward reflection coefficients.
    pub forward: CoefficientSet,
    /// Backward reflection coefficients.
    pub backward: CoefficientSet,
    /// Joint-process coefficients.
    pub joint: CoefficientSet,
    /// Backward error entering this stage on the previous frame.
    pub delayed_backward: Vec<Complex64>,
}

impl LatticeStage {
    fn new(
        inputs: usize,
        predictor: &[Vec<usize>],
        joint: &[Vec<usize>],
        params: &KalmanParams,
    ) -> Result<Self> {
        Ok(Self {
            forward: CoefficientSet::new(inputs, predictor, params)?,
            backward: CoefficientSet::new(inputs, predictor, params)?,
            joint: CoefficientSet::new(inputs, joint, params)?,
            delayed_backward: vec![ZERO; inputs],
        })
    }

    /// Stage outputs with the current coefficients; no state change.
    pub fn propagate(&self, f: &[Complex64], b: &[Complex64], e: &[Complex64]) -> StageSignals {
        StageSignals {
            forward: self.forward.apply(f, &self.delayed_backward),
            backward: self.backward.apply(&self.delayed_backward, f),
            error: self.joint.apply(e, b),
        }
    }

    /// Coefficient and covariance updates for signals produced by [`LatticeStage::propagate`].
    pub fn adapt(
        &mut self,
        f: &[Complex64],
        b: &[Complex64],
        out: &StageSignals,
        xi2: f64,
        pairing: GainPairing,
    ) -> Result<()> {
        let forward_regressor = match pairing {
            GainPairing::Printed => b,
            GainPairing::Conventional => &self.delayed_backward[..],
        };
        self.forward.adapt(forward_regressor, &out.forward, xi2)?;
        self.backward.adapt(f, &out.backward, xi2)?;
        self.joint.adapt(b, &out.error, xi2)?;
        self.delayed_backward.copy_from_slice(b);
        Ok(())
    }

    /// Propagate then adapt with a given noise estimate.
    pub fn update(
        &mut self,
        f: &[Complex64],
        b: &[Complex64],
        e: &[Complex64],
        xi2: f64,
        pairing: GainPairing,
    ) -> Result<StageSignals> {
        let out = self.propagate(f, b, e);
        self.adapt(f, b, &out, xi2, pairing)?;
        Ok(out)
    }
}

/// Mean over stages of the squared norm of each stage's output error, floored.
pub fn estimate_measurement_noise<'a, I>(stage_errors: I, floor: f64) -> f64
where
    I: IntoIterator<Item = &'a [Complex64]>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for e in stage_errors {
        sum += e.iter().map(|z| z.norm_sqr()).sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return floor;
    }
    (sum / count as f64).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    /// Output error of the last stage, before this frame's update.
    pub residual: Vec<Complex64>,
    /// Squared norm of each stage's output error.
    pub stage_error_energy: Vec<f64>,
    pub xi2: f64,
    /// Set when a shadow filter replaced the stages on this frame.
    pub promoted: bool,
}

/// Outcome of [`LatticeFilter::apply_map_change`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapChange {
    Unchanged,
    ShadowPending,
    ShadowStarted,
    ShadowRefreshed,
}

#[derive(Debug, Clone)]
struct Shadow {
    filter: Box<LatticeFilter>,
    age: usize,
    primary_energy: f64,
    shadow_energy: f64,
    xi_smoothed: f64,
    xi_trace: VecDeque<f64>,
}

#[derive(Debug, Clone)]
pub struct LatticeFilter {
    config: LatticeConfig,
    map: DependencyMap,
    stages: Vec<LatticeStage>,
    shadow: Option<Shadow>,
    promotions: usize,
    frames: u64,
}

fn predictor_supports(config: &LatticeConfig, map: &DependencyMap) -> Result<Vec<Vec<usize>>> {
    let n = config.input_width();
    Ok(match config.predictor_support {
        PredictorSupport::Full => vec![(0..n).collect(); n],
        PredictorSupport::Band(w) => (0..n)
            .map(|i| (i.saturating_sub(w)..(i + w + 1).min(n)).collect())
            .collect(),
        PredictorSupport::FollowMap => {
            if map.rows() != n {
                return Err(Error::config(
                    "predictor support follows the map only when the map is square",
                ));
            }
            (0..n).map(|i| map.support(i)).collect()
        }
    })
}

fn joint_supports(map: &DependencyMap) -> Vec<Vec<usize>> {
    (0..map.rows()).map(|r| map.support(r)).collect()
}

impl LatticeFilter {
    pub fn new(config: LatticeConfig, map: DependencyMap) -> Result<Self> {
        config.validate()?;
        map.check_shape(config.num_bins, config.input_width())?;
        let predictor = predictor_supports(&config, &map)?;
        let joint = joint_supports(&map);
        let params = config.kalman();
        let stages = (0..config.stages)
            .map(|_| LatticeStage::new(config.input_width(), &predictor, &joint, &params))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            map,
            stages,
            shadow: None,
            promotions: 0,
            frames: 0,
        })
    }

    pub fn config(&self) -> &LatticeConfig {
        &self.config
    }

    pub fn map(&self) -> &DependencyMap {
        &self.map
    }

    pub fn stages(&self) -> &[LatticeStage] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [LatticeStage] {
        &mut self.stages
    }

    pub fn shadow_map(&self) -> Option<&DependencyMap> {
        self.shadow.as_ref().map(|s| &s.filter.map)
    }

    pub fn promotions(&self) -> usize {
        self.promotions
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Covariance resets across all stages.
    pub fn resets(&self) -> u64 {
        self.stages
            .iter()
            .map(|s| s.forward.resets() + s.backward.resets() + s.joint.resets())
            .sum()
    }

    /// Subband-frame entry point; builds the regressor with the configured layout.
    pub fn process_frame(&mut self, x: &SubbandFrame, d: &SubbandFrame) -> Result<FrameResult> {
        if x.bins.len() != self.config.num_bins || d.bins.len() != self.config.num_bins {
            return Err(Error::shape(format!(
                "frames have {} and {} bins, lattice expects {}",
                x.bins.len(),
                d.bins.len(),
                self.config.num_bins
            )));
        }
        let regressor = self.config.layout.regressor(&x.bins);
        self.process_vectors(&regressor, &d.bins)
    }

    pub fn process_vectors(&mut self, x: &[Complex64], d: &[Complex64]) -> Result<FrameResult> {
        if x.len() != self.config.input_width() || d.len() != self.config.num_bins {
            return Err(Error::shape(format!(
                "regressor/desired lengths {}/{} do not match {}/{}",
                x.len(),
                d.len(),
                self.config.input_width(),
                self.config.num_bins
            )));
        }
        if x.iter().chain(d).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("lattice input frame"));
        }
        let mut result = self.run(x, d)?;
        if let Some(mut shadow) = self.shadow.take() {
            let shadow_result = shadow.filter.run(x, d)?;
            if shadow.observe(&result, &shadow_result, &self.config.shadow) {
                self.stages = shadow.filter.stages;
                self.map = shadow.filter.map;
                self.promotions += 1;
                result.promoted = true;
            } else {
                self.shadow = Some(shadow);
            }
        }
        self.frames += 1;
        Ok(result)
    }

    fn run(&mut self, x: &[Complex64], d: &[Complex64]) -> Result<FrameResult> {
        let m = self.stages.len();
        let mut inputs = Vec::with_capacity(m);
        let mut outputs: Vec<StageSignals> = Vec::with_capacity(m);
        let mut f = x.to_vec();
        let mut b = x.to_vec();
        let mut e = d.to_vec();
        for stage in &self.stages {
            let out = stage.propagate(&f, &b, &e);
            inputs.push((f, b));
            f = out.forward.clone();
            b = out.backward.clone();
            e.clone_from(&out.error);
            outputs.push(out);
        }
        let xi2 = estimate_measurement_noise(outputs.iter().map(|o| &o.error[..]), self.config.xi_floor);
        let pairing = self.config.pairing;
        self.stages
            .par_iter_mut()
            .zip(inputs.par_iter())
            .zip(outputs.par_iter())
            .try_for_each(|((stage, (f, b)), out)| stage.adapt(f, b, out, xi2, pairing))?;
        Ok(FrameResult {
            stage_error_energy: outputs
                .iter()
                .map(|o| o.error.iter().map(|z| z.norm_sqr()).sum())
                .collect(),
            residual: e,
            xi2,
            promoted: false,
        })
    }

    /// Starts a shadow filter for a new map. The shadow is warm-started from
    /// the current stages and replaces them once it wins under stationary noise.
    pub fn apply_map_change(&mut self, new_map: &DependencyMap) -> Result<MapChange> {
        new_map
            .check_shape(self.config.num_bins, self.config.input_width())
            .map_err(|e| Error::shape(e.to_string()))?;
        if *new_map == self.map {
            return Ok(MapChange::Unchanged);
        }
        if self.shadow_map() == Some(new_map) {
            return Ok(MapChange::ShadowPending);
        }
        let mut filter = LatticeFilter::new(self.config, new_map.clone())?;
        let pending = self.shadow.take();
        let change = if pending.is_some() { MapChange::ShadowRefreshed } else { MapChange::ShadowStarted };
        let source = pending.as_ref().map_or(&self.stages, |s| &s.filter.stages);
        for (dst, src) in filter.stages.iter_mut().zip(source) {
            dst.forward.warm_start_from(&src.forward);
            dst.backward.warm_start_from(&src.backward);
            dst.joint.warm_start_from(&src.joint);
            dst.delayed_backward.clone_from(&src.delayed_backward);
        }
        // a pending shadow is refreshed in place: its age and smoothed energies carry over
        self.shadow = Some(match pending {
            Some(mut s) => {
                s.filter = Box::new(filter);
                s
            }
            None => Shadow {
                filter: Box::new(filter),
                age: 0,
                primary_energy: 0.0,
                shadow_energy: 0.0,
                xi_smoothed: 0.0,
                xi_trace: VecDeque::new(),
            },
        });
        Ok(change)
    }

    /// Dense `inputs x outputs` joint-process matrix of one stage.
    pub fn joint_dense(&self, stage: usize) -> Vec<Complex64> {
        self.stages[stage].joint.dense()
    }

    /// Backward errors entering each stage on the most recent frame.
    pub fn backward_errors(&self) -> Vec<&[Complex64]> {
        self.stages.iter().map(|s| &s.delayed_backward[..]).collect()
    }

    /// Output of the whole cascade for `x` without adapting.
    pub fn predict(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.config.input_width() {
            return Err(Error::shape("regressor length mismatch"));
        }
        let zero = vec![ZERO; self.config.num_bins];
        let mut f = x.to_vec();
        let mut b = x.to_vec();
        let mut e = zero.clone();
        for stage in &self.stages {
            let out = stage.propagate(&f, &b, &e);
            f = out.forward;
            b = out.backward;
            e = out.error;
        }
        Ok(e.iter().map(|z| -z).collect())
    }

    /// Checkpoint: magic, u32 header length, JSON header, then per stage the
    /// forward, backward and joint sets (per row group: covariance, then each
    /// row's coefficients) followed by the delayed backward error. All complex
    /// values are little-endian (re, im) f64 pairs. Shadow state is not saved.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config,
            map: (0..self.map.rows())
                .map(|r| self.map.row(r).iter().map(|&b| if b { '1' } else { '0' }).collect())
                .collect(),
            frames: self.frames,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for stage in &self.stages {
            stage.forward.encode(&mut out);
            stage.backward.encode(&mut out);
            stage.joint.encode(&mut out);
            put_complex(&mut out, &stage.delayed_backward);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format("bad lattice checkpoint magic"));
        }
        let header_len = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)?;
        let config = header.config;
        if config.num_bins > MAX_BINS || config.stages > MAX_STAGES {
            return Err(Error::format("checkpoint dimensions out of range"));
        }
        config.validate()?;
        let rows = header
            .map
            .iter()
            .map(|line| {
                line.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(Error::format("bad map character in checkpoint")),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let map = DependencyMap::from_rows(&rows)?;
        map.check_shape(config.num_bins, config.input_width())?;
        let predictor = predictor_supports(&config, &map)?;
        let per_stage = CoefficientSet::encoded_len(&predictor)
            .and_then(|p| p.checked_mul(2))
            .and_then(|p| p.checked_add(CoefficientSet::encoded_len(&joint_supports(&map))?))
            .and_then(|p| p.checked_add(config.input_width()));
        let expected = per_stage
            .and_then(|p| p.checked_mul(config.stages))
            .and_then(|p| p.checked_mul(16))
            .ok_or_else(|| Error::format("checkpoint size overflow"))?;
        if r.remaining() != expected {
            return Err(Error::format(format!(
                "checkpoint body is {} bytes, expected {expected}",
                r.remaining()
            )));
        }
        let mut filter = LatticeFilter::new(config, map)?;
        for stage in &mut filter.stages {
            stage.forward.decode(&mut r)?;
            stage.backward.decode(&mut r)?;
            stage.joint.decode(&mut r)?;
            stage.delayed_backward = r.complex(config.input_width())?;
        }
        filter.frames = header.frames;
        Ok(filter)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"LKC1";
const MAX_BINS: usize = 1024;
const MAX_STAGES: usize = 4096;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: LatticeConfig,
    map: Vec<String>,
    frames: u64,
}

impl Shadow {
    /// Updates the comparison statistics; true when the shadow should replace the primary.
    fn observe(&mut self, primary: &FrameResult, shadow: &FrameResult, cfg: &ShadowConfig) -> bool {
        let pe: f64 = primary.residual.iter().map(|z| z.norm_sqr()).sum();
        let se: f64 = shadow.residual.iter().map(|z| z.norm_sqr()).sum();
        let a = cfg.smoothing;
        if self.age == 0 {
            self.primary_energy = pe;
            self.shadow_energy = se;
            self.xi_smoothed = primary.xi2;
        } else {
            self.primary_energy = a * self.primary_energy + (1.0 - a) * pe;
            self.shadow_energy = a * self.shadow_energy + (1.0 - a) * se;
            self.xi_smoothed = a * self.xi_smoothed + (1.0 - a) * primary.xi2;
        }
        self.age += 1;
        self.xi_trace.push_back(self.xi_smoothed);
        if self.xi_trace.len() > cfg.window + 1 {
            self.xi_trace.pop_front();
        }
        if self.age < cfg.window || self.xi_trace.len() <= cfg.window {
            return false;
        }
        let then = self.xi_trace[0];
        let stationary = then > 0.0 && ((self.xi_smoothed - then) / then).abs() < cfg.stationarity;
        stationary && self.shadow_energy < self.primary_energy
    }
}

/// `h^H x` for one stage's joint-process row, exposed for diagnostics.
pub fn row_output(set: &CoefficientSet, row: usize, regressor: &[Complex64]) -> Complex64 {
    match set.row_coefficients(row) {
        Some((support, h)) => {
            let x: Vec<_> = support.iter().map(|&c| regressor[c]).collect();
            inner(h, &x)
        }
        None => ZERO,
    }
}
