//! Position errors for two-person predictions and their per-aerial,
//! per-joint and per-horizon aggregation.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::geometry::{apply_transform, normalization_transform, procrustes_align, Skeleton};
use crate::motion::MotionSequence;

pub const REPORT_HEADER: &str = "metric,role,aerial,horizon_ms,joint,value_mm";

/// Evaluation horizons in milliseconds.
pub const HORIZONS_MS: [u32; 4] = [80, 400, 720, 1000];

/// Number of predicted frames covered by a horizon at `fps`.
pub fn horizon_frames(ms: u32, fps: f64) -> usize {
    (ms as f64 * fps / 1000.0).round() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    /// Error in the shared couple frame.
    Jme,
    /// Error after normalizing each pose into its own frame.
    Sme,
    /// Error after per-pose rigid alignment.
    Ame,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Jme, Metric::Sme, Metric::Ame];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Jme => "JME",
            Metric::Sme => "SME",
            Metric::Ame => "AME",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Leader,
    Follower,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Leader, Role::Follower];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Follower => "follower",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_same(op: &'static str, a: &MotionSequence, b: &MotionSequence) -> Result<()> {
    if a.frames() != b.frames() || a.joints() != b.joints() {
        return Err(Error::contract(format!(
            "{op}: shapes differ ({}x{} vs {}x{})",
            a.frames(),
            a.joints(),
            b.frames(),
            b.joints()
        )));
    }
    Ok(())
}

/// Euclidean distance of every joint at every frame, row-major `T × J`.
pub fn joint_distances(pred: &MotionSequence, gt: &MotionSequence) -> Result<Vec<f64>> {
    check_same("joint distances", pred, gt)?;
    Ok(pred
        .data()
        .chunks_exact(3)
        .zip(gt.data().chunks_exact(3))
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt())
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    Ok(mean(&joint_distances(pred, gt)?))
}

/// Average of the leader and follower MPJPE in the shared frame.
pub fn jme(
    pred_l: &MotionSequence,
    pred_f: &MotionSequence,
    gt_l: &MotionSequence,
    gt_f: &MotionSequence,
) -> Result<f64> {
    check_same("jme", pred_l, pred_f)?;
    Ok(0.5 * (mpjpe(pred_l, gt_l)? + mpjpe(pred_f, gt_f)?))
}

/// Every pose mapped into its own normalized frame.
pub fn self_normalize(seq: &MotionSequence, skeleton: &Skeleton) -> Result<MotionSequence> {
    seq.map_poses(|_, pose| Ok(apply_transform(&normalization_transform(&pose, skeleton)?, &pose)))
}

/// Every predicted pose rigidly aligned onto the matching ground-truth pose.
pub fn align_each(pred: &MotionSequence, gt: &MotionSequence) -> Result<MotionSequence> {
    check_same("alignment", pred, gt)?;
    pred.map_poses(|t, pose| procrustes_align(&pose, &gt.pose(t)))
}

/// Per-frame, per-joint errors of one person under `metric`.
pub fn metric_distances(
    metric: Metric,
    pred: &MotionSequence,
    gt: &MotionSequence,
    skeleton: &Skeleton,
) -> Result<Vec<f64>> {
    match metric {
        Metric::Jme => joint_distances(pred, gt),
        Metric::Sme => joint_distances(&self_normalize(pred, skeleton)?, &self_normalize(gt, skeleton)?),
        Metric::Ame => joint_distances(&align_each(pred, gt)?, gt),
    }
}

pub fn sme(
    pred_l: &MotionSequence,
    pred_f: &MotionSequence,
    gt_l: &MotionSequence,
    gt_f: &MotionSequence,
    skeleton: &Skeleton,
) -> Result<f64> {
    check_same("SME", pred_l, pred_f)?;
    let l = metric_distances(Metric::Sme, pred_l, gt_l, skeleton)?;
    let f = metric_distances(Metric::Sme, pred_f, gt_f, skeleton)?;
    Ok(0.5 * (mean(&l) + mean(&f)))
}

pub fn ame(
    pred_l: &MotionSequence,
    pred_f: &MotionSequence,
    gt_l: &MotionSequence,
    gt_f: &MotionSequence,
) -> Result<f64> {
    check_same("AME", pred_l, pred_f)?;
    let l = joint_distances(&align_each(pred_l, gt_l)?, gt_l)?;
    let f = joint_distances(&align_each(pred_f, gt_f)?, gt_f)?;
    Ok(0.5 * (mean(&l) + mean(&f)))
}

/// Error maps of one evaluated sub-sequence.
#[derive(Clone, Debug)]
pub struct SampleErrors {
    pub aerial: u32,
    pub frames: usize,
    pub joints: usize,
    /// `[metric][role]`, each `T × J`.
    pub maps: [[Vec<f64>; 2]; 3],
}

impl SampleErrors {
    pub fn compute(
        aerial: u32,
        pred: [&MotionSequence; 2],
        gt: [&MotionSequence; 2],
        skeleton: &Skeleton,
    ) -> Result<Self> {
        check_same("sample", pred[0], pred[1])?;
        let mut maps: [[Vec<f64>; 2]; 3] = Default::default();
        for (m, metric) in Metric::ALL.iter().enumerate() {
            for r in 0..2 {
                maps[m][r] = metric_distances(*metric, pred[r], gt[r], skeleton)?;
            }
        }
        Ok(SampleErrors {
            aerial,
            frames: pred[0].frames(),
            joints: pred[0].joints(),
            maps,
        })
    }

    /// Mean over the first `frames` frames and all joints.
    pub fn value(&self, metric: Metric, role: Role, frames: usize) -> f64 {
        mean(&self.maps[metric as usize][role.index()][..frames * self.joints])
    }

    /// Per-joint mean over the first `frames` frames.
    pub fn joint_values(&self, metric: Metric, role: Role, frames: usize) -> Vec<f64> {
        let map = &self.maps[metric as usize][role.index()];
        (0..self.joints)
            .map(|j| (0..frames).map(|t| map[t * self.joints + j]).sum::<f64>() / frames as f64)
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
struct Cell {
    count: usize,
    sum: f64,
    joints: Vec<f64>,
}

impl Cell {
    fn add(&mut self, value: f64, joints: &[f64]) {
        self.count += 1;
        self.sum += value;
        if self.joints.is_empty() {
            self.joints = vec![0.0; joints.len()];
        }
        for (a, b) in self.joints.iter_mut().zip(joints) {
            *a += b;
        }
    }

    fn merge(&mut self, other: &Cell) {
        if self.joints.is_empty() {
            self.joints = vec![0.0; other.joints.len()];
        }
        self.count += other.count;
        self.sum += other.sum;
        for (a, b) in self.joints.iter_mut().zip(&other.joints) {
            *a += b;
        }
    }
}

type CellKey = (Metric, Role, u32, u32);

/// Aggregated errors per metric, role, aerial and horizon.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    fps: f64,
    joint_names: Vec<String>,
    cells: BTreeMap<CellKey, Cell>,
}

impl MetricsReport {
    pub fn new(fps: f64, joint_names: Vec<String>) -> Self {
        MetricsReport {
            fps,
            joint_names,
            cells: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, sample: &SampleErrors) -> Result<()> {
        if sample.joints != self.joint_names.len() {
            return Err(Error::contract(format!(
                "sample has {} joints, report has {}",
                sample.joints,
                self.joint_names.len()
            )));
        }
        for ms in HORIZONS_MS {
            let h = horizon_frames(ms, self.fps);
            if h == 0 || h > sample.frames {
                return Err(Error::contract(format!(
                    "{ms} ms needs {h} predicted frames, sample has {}",
                    sample.frames
                )));
            }
            for metric in Metric::ALL {
                for role in Role::ALL {
                    self.cells
                        .entry((metric, role, sample.aerial, ms))
                        .or_default()
                        .add(sample.value(metric, role, h), &sample.joint_values(metric, role, h));
                }
            }
        }
        Ok(())
    }

    pub fn aerials(&self) -> Vec<u32> {
        let mut a: Vec<u32> = self.cells.keys().map(|k| k.2).collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    fn cell(&self, metric: Metric, role: Role, aerial: Option<u32>, ms: u32) -> Option<Cell> {
        match aerial {
            Some(a) => self.cells.get(&(metric, role, a, ms)).cloned(),
            None => {
                let mut total = Cell::default();
                for ((m, r, _, h), c) in &self.cells {
                    if *m == metric && *r == role && *h == ms {
                        total.merge(c);
                    }
                }
                (total.count > 0).then_some(total)
            }
        }
    }

    /// Mean error in mm; `aerial = None` averages over all sub-sequences.
    pub fn value(&self, metric: Metric, role: Role, aerial: Option<u32>, ms: u32) -> Option<f64> {
        self.cell(metric, role, aerial, ms).map(|c| c.sum / c.count as f64)
    }

    /// Mean of the leader and follower values.
    pub fn couple_value(&self, metric: Metric, aerial: Option<u32>, ms: u32) -> Option<f64> {
        Some(0.5 * (self.value(metric, Role::Leader, aerial, ms)? + self.value(metric, Role::Follower, aerial, ms)?))
    }

    pub fn joint_values(&self, metric: Metric, role: Role, aerial: Option<u32>, ms: u32) -> Option<Vec<f64>> {
        self.cell(metric, role, aerial, ms)
            .map(|c| c.joints.iter().map(|v| v / c.count as f64).collect())
    }

    pub fn sample_count(&self, aerial: Option<u32>) -> usize {
        self.cell(Metric::Jme, Role::Leader, aerial, HORIZONS_MS[0])
            .map_or(0, |c| c.count)
    }

    /// One row per metric, role, aerial (plus `AVG`) and horizon; with
    /// `per_joint`, one extra row per joint after each aggregate row.
    pub fn to_csv(&self, per_joint: bool) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        let mut aerials: Vec<Option<u32>> = self.aerials().into_iter().map(Some).collect();
        aerials.push(None);
        for metric in Metric::ALL {
            for role in Role::ALL {
                for &aerial in &aerials {
                    let label = aerial.map_or("AVG".to_string(), |a| a.to_string());
                    for ms in HORIZONS_MS {
                        let Some(v) = self.value(metric, role, aerial, ms) else { continue };
                        let _ = writeln!(out, "{metric},{role},{label},{ms},,{v:.6}");
                        if per_joint {
                            let joints = self.joint_values(metric, role, aerial, ms).unwrap_or_default();
                            for (name, jv) in self.joint_names.iter().zip(joints) {
                                let _ = writeln!(out, "{metric},{role},{label},{ms},{name},{jv:.6}");
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Plain-text tables: one block per metric and horizon, rows per role,
    /// one column per aerial plus the average.
    pub fn to_table(&self) -> String {
        let aerials = self.aerials();
        let mut out = String::new();
        for metric in Metric::ALL {
            for ms in HORIZONS_MS {
                let _ = write!(out, "{metric} @ {ms} ms ({} frames)\n{:<10}", horizon_frames(ms, self.fps), "");
                for a in &aerials {
                    let _ = write!(out, "{:>9}", format!("A{a}"));
                }
                let _ = writeln!(out, "{:>9}", "AVG");
                for role in Role::ALL {
                    let _ = write!(out, "{:<10}", role.as_str());
                    for a in aerials.iter().map(|&a| Some(a)).chain([None]) {
                        match self.value(metric, role, a, ms) {
                            Some(v) => {
                                let _ = write!(out, "{v:>9.1}");
                            }
                            None => {
                                let _ = write!(out, "{:>9}", "-");
                            }
                        }
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
        }
        out
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::contract(format!("unknown metric {s:?}")))
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::contract(format!("unknown role {s:?}")))
    }
}

/// One row of a metrics CSV; `aerial` is `None` for the `AVG` rows and
/// `joint` is `None` for aggregate rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub metric: Metric,
    pub role: Role,
    pub aerial: Option<u32>,
    pub horizon_ms: u32,
    pub joint: Option<String>,
    pub value_mm: f64,
}

pub fn parse_report_csv(text: &str, source: &str) -> Result<Vec<ReportRow>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == REPORT_HEADER => {}
        _ => return Err(perr(1, format!("expected header {REPORT_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(perr(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let bad = |what: &str, v: &str| perr(i + 1, format!("bad {what} {v:?}"));
        rows.push(ReportRow {
            metric: f[0].parse().map_err(|_| bad("metric", f[0]))?,
            role: f[1].parse().map_err(|_| bad("role", f[1]))?,
            aerial: match f[2] {
                "AVG" => None,
                a => Some(a.parse().map_err(|_| bad("aerial", a))?),
            },
            horizon_ms: f[3].parse().map_err(|_| bad("horizon", f[3]))?,
            joint: (!f[4].is_empty()).then(|| f[4].to_string()),
            value_mm: f[5].parse().map_err(|_| bad("value", f[5]))?,
        });
    }
    Ok(rows)
}

/// Per `(metric, role)` CSV of the averaged errors: one row per horizon,
/// one column per named report.
pub fn plot_tables(reports: &[(String, Vec<ReportRow>)]) -> Vec<(Metric, Role, String)> {
    let mut out = Vec::new();
    for metric in Metric::ALL {
        for role in Role::ALL {
            let mut csv = String::from("horizon_ms");
            for (name, _) in reports {
                let _ = write!(csv, ",{name}");
            }
            csv.push('\n');
            for ms in HORIZONS_MS {
                let _ = write!(csv, "{ms}");
                for (_, rows) in reports {
                    let cell = rows.iter().find(|r| {
                        r.metric == metric && r.role == role && r.aerial.is_none() && r.horizon_ms == ms && r.joint.is_none()
                    });
                    match cell {
                        Some(r) => {
                            let _ = write!(csv, ",{:.6}", r.value_mm);
                        }
                        None => csv.push(','),
                    }
                }
                csv.push('\n');
            }
            out.push((metric, role, csv));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, RigidTransform, Vec3};
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(frames: usize, joints: usize, seed: u64) -> MotionSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * joints * 3).map(|_| rng.gen_range(-1000.0..1000.0)).collect();
        MotionSequence::new(joints, 25.0, data).unwrap()
    }

    fn shifted(seq: &MotionSequence, d: [f64; 3]) -> MotionSequence {
        let data = seq.data().iter().enumerate().map(|(i, v)| v + d[i % 3]).collect();
        MotionSequence::new(seq.joints(), seq.fps(), data).unwrap()
    }

    fn rigid(seed: u64) -> RigidTransform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = Unit::new_normalize(Vec3::new(rng.gen(), rng.gen(), rng.gen::<f64>() + 0.1));
        let rot = Rotation3::from_axis_angle(&axis, rng.gen_range(-3.0..3.0));
        RigidTransform::new(
            *rot.matrix(),
            Vec3::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0), 10.0),
        )
        .unwrap()
    }

    fn per_frame_rigid(seq: &MotionSequence, seed: u64) -> MotionSequence {
        seq.map_poses(|t, p| Ok(apply_transform(&rigid(seed + t as u64), &p))).unwrap()
    }

    #[test]
    fn constant_offset_mpjpe() {
        let gt = MotionSequence::new(2, 25.0, vec![0.0; 12]).unwrap();
        let pred = shifted(&gt, [3.0, 4.0, 0.0]);
        assert_eq!(mpjpe(&pred, &gt).unwrap(), 5.0);
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        assert!(mpjpe(&pred, &random_seq(3, 2, 0)).is_err());
    }

    #[test]
    fn duplicated_frames_keep_mpjpe() {
        let a = random_seq(4, 3, 1);
        let b = random_seq(4, 3, 2);
        let dup = |s: &MotionSequence| {
            let data = (0..s.frames()).flat_map(|t| [s.frame(t), s.frame(t)].concat()).collect();
            MotionSequence::new(3, 25.0, data).unwrap()
        };
        assert!((mpjpe(&a, &b).unwrap() - mpjpe(&dup(&a), &dup(&b)).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn displaced_follower_halves_in_jme() {
        let l = random_seq(5, 4, 3);
        let f = random_seq(5, 4, 4);
        assert_eq!(jme(&l, &f, &l, &f).unwrap(), 0.0);
        let moved = shifted(&f, [0.0, 6.0, 8.0]);
        assert!((jme(&l, &moved, &l, &f).unwrap() - 5.0).abs() < 1e-12);
        let a = mpjpe(&random_seq(5, 4, 5), &l).unwrap();
        let b = mpjpe(&random_seq(5, 4, 6), &f).unwrap();
        let j = jme(&random_seq(5, 4, 5), &random_seq(5, 4, 6), &l, &f).unwrap();
        assert!((j - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_motion_vanishes_under_sme_and_ame() {
        let sk = Skeleton::for_joints(6).unwrap();
        let l = random_seq(4, 6, 7);
        let f = random_seq(4, 6, 8);
        let moved = per_frame_rigid(&f, 40);
        let maps = metric_distances(Metric::Sme, &moved, &f, &sk).unwrap();
        assert!(maps.iter().all(|d| *d < 1e-9));
        assert!(sme(&l, &moved, &l, &f, &sk).unwrap() < 1e-9);
        assert!(ame(&l, &moved, &l, &f).unwrap() < 1e-9);
    }

    #[test]
    fn sme_matches_direct_reimplementation() {
        let sk = Skeleton::for_joints(5).unwrap();
        let (pl, pf, gl, gf) = (random_seq(3, 5, 1), random_seq(3, 5, 2), random_seq(3, 5, 3), random_seq(3, 5, 4));
        let norm = |p: &Pose| {
            let (lh, rh, nk) = (p.joints[0], p.joints[1], p.joints[2]);
            let c = (lh + rh) / 2.0;
            let x = (lh - c).normalize();
            let n = nk - c;
            let z = (n - x * x.dot(&n)).normalize();
            let y = z.cross(&x);
            p.joints.iter().map(|q| Vec3::new(x.dot(&(q - c)), y.dot(&(q - c)), z.dot(&(q - c)))).collect::<Vec<_>>()
        };
        let mut total = 0.0;
        for (p, g) in [(&pl, &gl), (&pf, &gf)] {
            let mut s = 0.0;
            for t in 0..3 {
                for (a, b) in norm(&p.pose(t)).iter().zip(norm(&g.pose(t))) {
                    s += (a - b).norm();
                }
            }
            total += s / 15.0;
        }
        assert!((sme(&pl, &pf, &gl, &gf, &sk).unwrap() - total / 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_anchor_is_reported() {
        let sk = Skeleton::for_joints(4).unwrap();
        let bad = MotionSequence::new(4, 25.0, vec![1.0; 12]).unwrap();
        assert!(matches!(sme(&bad, &bad, &bad, &bad, &sk), Err(Error::Degenerate(_))));
    }

    #[test]
    fn horizons_map_to_frames() {
        let frames: Vec<usize> = HORIZONS_MS.iter().map(|&ms| horizon_frames(ms, 25.0)).collect();
        assert_eq!(frames, vec![2, 10, 18, 25]);
    }

    fn report_with(samples: &[(u32, u64)]) -> (MetricsReport, Vec<SampleErrors>) {
        let sk = Skeleton::for_joints(4).unwrap();
        let names = (0..4).map(|j| sk.name(j).to_string()).collect();
        let mut report = MetricsReport::new(25.0, names);
        let mut all = Vec::new();
        for &(aerial, seed) in samples {
            let p = [random_seq(25, 4, seed), random_seq(25, 4, seed + 1)];
            let g = [random_seq(25, 4, seed + 2), random_seq(25, 4, seed + 3)];
            let s = SampleErrors::compute(aerial, [&p[0], &p[1]], [&g[0], &g[1]], &sk).unwrap();
            report.add(&s).unwrap();
            all.push(s);
        }
        (report, all)
    }

    #[test]
    fn single_sample_cell_equals_direct_call() {
        let sk = Skeleton::for_joints(4).unwrap();
        let (report, _) = report_with(&[(3, 10)]);
        let p = [random_seq(25, 4, 10), random_seq(25, 4, 11)];
        let g = [random_seq(25, 4, 12), random_seq(25, 4, 13)];
        let head = |s: &MotionSequence| s.window(0, 2).unwrap();
        let direct = jme(&head(&p[0]), &head(&p[1]), &head(&g[0]), &head(&g[1])).unwrap();
        assert!((report.couple_value(Metric::Jme, Some(3), 80).unwrap() - direct).abs() < 1e-9);
        let direct = sme(&p[0], &p[1], &g[0], &g[1], &sk).unwrap();
        assert!((report.couple_value(Metric::Sme, None, 1000).unwrap() - direct).abs() < 1e-9);
        let direct = mpjpe(&align_each(&p[1], &g[1]).unwrap().window(0, 10).unwrap(), &g[1].window(0, 10).unwrap()).unwrap();
        assert!((report.value(Metric::Ame, Role::Follower, Some(3), 400).unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn average_is_weighted_by_sample_count() {
        let (report, samples) = report_with(&[(1, 20), (1, 30), (2, 40)]);
        let expected: f64 = samples.iter().map(|s| s.value(Metric::Jme, Role::Leader, 18)).sum::<f64>() / 3.0;
        let a1 = report.value(Metric::Jme, Role::Leader, Some(1), 720).unwrap();
        let a2 = report.value(Metric::Jme, Role::Leader, Some(2), 720).unwrap();
        let avg = report.value(Metric::Jme, Role::Leader, None, 720).unwrap();
        assert!((avg - expected).abs() < 1e-9);
        assert!((avg - (2.0 * a1 + a2) / 3.0).abs() < 1e-9);
        assert_eq!(report.sample_count(Some(1)), 2);
        let joints = report.joint_values(Metric::Jme, Role::Leader, None, 720).unwrap();
        assert!((joints.iter().sum::<f64>() / 4.0 - avg).abs() < 1e-9);
    }

    #[test]
    fn csv_row_count() {
        let (report, _) = report_with(&[(1, 20), (4, 30), (9, 40)]);
        let csv = report.to_csv(false);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "metric,role,aerial,horizon_ms,joint,value_mm");
        assert_eq!(lines.count(), 4 * 3 * 2 * (3 + 1));
        assert_eq!(report.to_csv(true).lines().count(), 1 + 4 * 3 * 2 * 4 * 5);
        assert!(report.to_table().contains("AVG"));
    }

    #[test]
    fn short_prediction_is_rejected() {
        let sk = Skeleton::for_joints(4).unwrap();
        let p = random_seq(10, 4, 1);
        let s = SampleErrors::compute(1, [&p, &p], [&p, &p], &sk).unwrap();
        let mut report = MetricsReport::new(25.0, (0..4).map(|j| j.to_string()).collect());
        assert!(report.add(&s).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn alignment_never_increases_squared_error(seed in 0u64..10_000) {
            let p = random_seq(1, 6, seed);
            let g = random_seq(1, 6, seed + 1);
            let aligned = align_each(&p, &g).unwrap();
            let sq = |a: &MotionSequence| a.data().iter().zip(g.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            prop_assert!(sq(&aligned) <= sq(&p) + 1e-6);
        }

        #[test]
        fn metrics_are_nonnegative_and_rigid_invariant(seed in 0u64..10_000) {
            let sk = Skeleton::for_joints(5).unwrap();
            let (pl, pf, gl, gf) = (random_seq(2, 5, seed), random_seq(2, 5, seed + 1), random_seq(2, 5, seed + 2), random_seq(2, 5, seed + 3));
            let s0 = sme(&pl, &pf, &gl, &gf, &sk).unwrap();
            let a0 = ame(&pl, &pf, &gl, &gf).unwrap();
            prop_assert!(s0 >= 0.0 && a0 >= 0.0 && jme(&pl, &pf, &gl, &gf).unwrap() >= 0.0);
            let mf = per_frame_rigid(&pf, seed);
            prop_assert!((sme(&pl, &mf, &gl, &gf, &sk).unwrap() - s0).abs() < 1e-9);
            prop_assert!((ame(&pl, &mf, &gl, &gf).unwrap() - a0).abs() < 1e-9);
        }
    }
}
