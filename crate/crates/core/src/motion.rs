//! Motion sequences, sub-sequence windows and the orthonormal DCT-II
//! trajectory representation.

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// `frames × joints × 3` coordinates in millimetres, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    joints: usize,
    fps: f64,
    data: Vec<f64>,
}

impl MotionSequence {
    pub fn new(joints: usize, fps: f64, data: Vec<f64>) -> Result<Self> {
        if joints == 0 || data.is_empty() || data.len() % (joints * 3) != 0 {
            return Err(Error::dim(
                "motion sequence",
                format!("{} values is not F x {joints} x 3 with F >= 1", data.len()),
            ));
        }
        if !(fps > 0.0) {
            return Err(Error::contract(format!("fps must be positive, got {fps}")));
        }
        Ok(MotionSequence { joints, fps, data })
    }

    pub fn from_poses(poses: &[Pose], fps: f64) -> Result<Self> {
        let joints = poses.first().map(Pose::len).unwrap_or(0);
        if poses.iter().any(|p| p.len() != joints) {
            return Err(Error::dim("motion sequence", "joint count varies across frames"));
        }
        MotionSequence::new(joints, fps, poses.iter().flat_map(Pose::to_flat).collect())
    }

    pub fn frames(&self) -> usize {
        self.data.len() / (self.joints * 3)
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.joints * 3
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.frame_len();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn pose(&self, t: usize) -> Pose {
        Pose::from_flat(self.frame(t)).expect("frame is J x 3")
    }

    pub fn poses(&self) -> impl Iterator<Item = Pose> + '_ {
        (0..self.frames()).map(|t| self.pose(t))
    }

    pub fn last_frame(&self) -> &[f64] {
        self.frame(self.frames() - 1)
    }

    /// Frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<MotionSequence> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::contract(format!(
                "window [{start}, {}) outside {} frames",
                start + len,
                self.frames()
            )));
        }
        let w = self.frame_len();
        Ok(MotionSequence {
            joints: self.joints,
            fps: self.fps,
            data: self.data[start * w..(start + len) * w].to_vec(),
        })
    }

    /// Last `len` frames.
    pub fn tail(&self, len: usize) -> Result<MotionSequence> {
        if len > self.frames() {
            return Err(Error::InsufficientHistory {
                have: self.frames(),
                need: len,
            });
        }
        self.window(self.frames() - len, len)
    }

    pub fn append(&mut self, other: &MotionSequence) -> Result<()> {
        if other.joints != self.joints {
            return Err(Error::dim("append", format!("{} vs {} joints", other.joints, self.joints)));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Copy with every frame replaced by `f(frame_index, pose)`.
    pub fn map_poses(&self, mut f: impl FnMut(usize, Pose) -> Result<Pose>) -> Result<MotionSequence> {
        let mut data = Vec::with_capacity(self.data.len());
        for t in 0..self.frames() {
            let p = f(t, self.pose(t))?;
            if p.len() != self.joints {
                return Err(Error::dim("map_poses", "joint count changed"));
            }
            data.extend(p.to_flat());
        }
        MotionSequence::new(self.joints, self.fps, data)
    }

    /// This window followed by `extra` copies of its last frame.
    pub fn pad_with_last(&self, extra: usize) -> MotionSequence {
        let mut data = self.data.clone();
        let last = self.last_frame().to_vec();
        for _ in 0..extra {
            data.extend_from_slice(&last);
        }
        MotionSequence {
            joints: self.joints,
            fps: self.fps,
            data,
        }
    }

    pub(crate) fn with_fps(mut self, fps: f64) -> Self {
        self.fps = fps;
        self
    }
}

/// Query, key and value windows over an observed history.
///
/// Window `i` starts at frame `i`; key `i` is the first `key_len` frames of
/// value `i`, and the query is the last `key_len` observed frames.
#[derive(Clone, Debug)]
pub struct SubSequenceBank {
    pub key_len: usize,
    pub step_len: usize,
    pub starts: Vec<usize>,
    pub query: MotionSequence,
    pub keys: Vec<MotionSequence>,
    pub values: Vec<MotionSequence>,
}

impl SubSequenceBank {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// Number of key/value windows for `observed` frames.
pub fn window_count(observed: usize, key_len: usize, step_len: usize) -> Result<usize> {
    let need = key_len + step_len;
    if observed < need {
        return Err(Error::InsufficientHistory { have: observed, need });
    }
    Ok(observed - need + 1)
}

pub fn extract_windows(seq: &MotionSequence, key_len: usize, step_len: usize) -> Result<SubSequenceBank> {
    if key_len == 0 || step_len == 0 {
        return Err(Error::contract("window lengths must be positive"));
    }
    let n = window_count(seq.frames(), key_len, step_len)?;
    let mut keys = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        keys.push(seq.window(i, key_len)?);
        values.push(seq.window(i, key_len + step_len)?);
    }
    Ok(SubSequenceBank {
        key_len,
        step_len,
        starts: (0..n).collect(),
        query: seq.tail(key_len)?,
        keys,
        values,
    })
}

/// Orthonormal DCT-II basis, truncated to the first `coeffs` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DctBasis {
    len: usize,
    coeffs: usize,
    /// `coeffs × len`, row k is the k-th basis vector.
    matrix: Vec<f64>,
}

impl DctBasis {
    pub fn new(len: usize, coeffs: usize) -> Result<Self> {
        if len == 0 || coeffs == 0 || coeffs > len {
            return Err(Error::contract(format!(
                "DCT needs 1 <= coeffs <= len, got coeffs={coeffs}, len={len}"
            )));
        }
        let l = len as f64;
        let mut matrix = Vec::with_capacity(coeffs * len);
        for k in 0..coeffs {
            let s = if k == 0 { (1.0 / l).sqrt() } else { (2.0 / l).sqrt() };
            for n in 0..len {
                matrix.push(s * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / l).cos());
            }
        }
        Ok(DctBasis { len, coeffs, matrix })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn coeffs(&self) -> usize {
        self.coeffs
    }

    /// Row-major `coeffs × len` basis matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len {
            return Err(Error::contract(format!("trajectory length {} != {}", x.len(), self.len)));
        }
        Ok((0..self.coeffs)
            .map(|k| {
                self.matrix[k * self.len..(k + 1) * self.len]
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum()
            })
            .collect())
    }

    /// Least-squares reconstruction from (possibly truncated) coefficients.
    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.coeffs {
            return Err(Error::contract(format!("{} coefficients, expected {}", c.len(), self.coeffs)));
        }
        let mut out = vec![0.0; self.len];
        for (k, &ck) in c.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(&self.matrix[k * self.len..(k + 1) * self.len]) {
                *o += ck * b;
            }
        }
        Ok(out)
    }
}

pub fn dct(trajectory: &[f64], coeffs: usize) -> Result<Vec<f64>> {
    DctBasis::new(trajectory.len(), coeffs)?.forward(trajectory)
}

pub fn idct(coeffs: &[f64], len: usize) -> Result<Vec<f64>> {
    DctBasis::new(len, coeffs.len())?.inverse(coeffs)
}

/// Per joint-coordinate DCT coefficients of a window; `coeffs × joints × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct DctCoeffs {
    pub coeffs: usize,
    pub window: usize,
    pub joints: usize,
    pub data: Vec<f64>,
}

impl DctCoeffs {
    pub fn encode(window: &MotionSequence, basis: &DctBasis) -> Result<Self> {
        if window.frames() != basis.len() {
            return Err(Error::contract(format!(
                "window has {} frames, basis expects {}",
                window.frames(),
                basis.len()
            )));
        }
        let width = window.frame_len();
        let (c, l) = (basis.coeffs(), basis.len());
        let mut data = vec![0.0; c * width];
        let src = window.data();
        for k in 0..c {
            let row = &basis.matrix()[k * l..(k + 1) * l];
            let out = &mut data[k * width..(k + 1) * width];
            for (n, &b) in row.iter().enumerate() {
                for (o, v) in out.iter_mut().zip(&src[n * width..(n + 1) * width]) {
                    *o += b * v;
                }
            }
        }
        Ok(DctCoeffs {
            coeffs: c,
            window: l,
            joints: window.joints(),
            data,
        })
    }

    /// Coefficient `k` of joint `j`, axis `a`.
    pub fn get(&self, k: usize, j: usize, a: usize) -> f64 {
        self.data[(k * self.joints + j) * 3 + a]
    }

    pub fn decode(&self, fps: f64) -> Result<MotionSequence> {
        let basis = DctBasis::new(self.window, self.coeffs)?;
        let width = self.joints * 3;
        let mut data = vec![0.0; self.window * width];
        for k in 0..self.coeffs {
            let row = &basis.matrix()[k * self.window..(k + 1) * self.window];
            let coeff = &self.data[k * width..(k + 1) * width];
            for (n, &b) in row.iter().enumerate() {
                for (o, c) in data[n * width..(n + 1) * width].iter_mut().zip(coeff) {
                    *o += b * c;
                }
            }
        }
        MotionSequence::new(self.joints, fps, data)
    }
}

/// DCT of a value window of exactly `key_len + step_len` frames.
pub fn pad_and_encode_value(
    window: &MotionSequence,
    key_len: usize,
    step_len: usize,
    coeffs: usize,
) -> Result<DctCoeffs> {
    let len = key_len + step_len;
    if window.frames() != len {
        return Err(Error::contract(format!(
            "value window has {} frames, expected {len}",
            window.frames()
        )));
    }
    DctCoeffs::encode(window, &DctBasis::new(len, coeffs)?)
}
