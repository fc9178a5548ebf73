//! Couple sequences on disk, the train/test split protocols, test
//! sub-sequence sampling and temporal downsampling.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io_util::{create_dir_all, read_to_string, write_atomic};
use crate::motion::MotionSequence;

pub const CSV_HEADER: &str = "seq_id,aerial,couple,rep,frame,person,joint,x,y,z";
pub const INDEX_HEADER: &str = "seq_id,file,aerial,couple,rep,frames,fps";

/// Aerials performed by both couples.
pub const COMMON_AERIALS: std::ops::RangeInclusive<u32> = 1..=7;
/// Aerials performed by only one couple.
pub const EXTRA_AERIALS: std::ops::RangeInclusive<u32> = 8..=16;

/// One recorded repetition of an aerial by a leader/follower couple.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupleSequence {
    pub seq_id: String,
    pub aerial: u32,
    pub couple: u32,
    pub rep: u32,
    pub leader: MotionSequence,
    pub follower: MotionSequence,
}

impl CoupleSequence {
    pub fn new(
        seq_id: impl Into<String>,
        aerial: u32,
        couple: u32,
        rep: u32,
        leader: MotionSequence,
        follower: MotionSequence,
    ) -> Result<Self> {
        let seq_id = seq_id.into();
        if leader.frames() != follower.frames() || leader.fps() != follower.fps() || leader.joints() != follower.joints() {
            return Err(Error::contract(format!(
                "{seq_id}: leader and follower differ in frames, fps or joints"
            )));
        }
        if seq_id.is_empty() || seq_id.contains([',', '/', '\\', '\n']) {
            return Err(Error::contract(format!("invalid sequence id '{seq_id}'")));
        }
        Ok(CoupleSequence {
            seq_id,
            aerial,
            couple,
            rep,
            leader,
            follower,
        })
    }

    pub fn frames(&self) -> usize {
        self.leader.frames()
    }

    pub fn joints(&self) -> usize {
        self.leader.joints()
    }

    pub fn fps(&self) -> f64 {
        self.leader.fps()
    }

    pub fn window(&self, start: usize, len: usize) -> Result<CoupleSequence> {
        Ok(self.with_motion(self.leader.window(start, len)?, self.follower.window(start, len)?))
    }

    pub fn downsample(&self, factor: usize) -> Result<CoupleSequence> {
        Ok(self.with_motion(downsample(&self.leader, factor)?, downsample(&self.follower, factor)?))
    }

    fn with_motion(&self, leader: MotionSequence, follower: MotionSequence) -> CoupleSequence {
        CoupleSequence {
            seq_id: self.seq_id.clone(),
            aerial: self.aerial,
            couple: self.couple,
            rep: self.rep,
            leader,
            follower,
        }
    }
}

/// Keeps frames `0, factor, 2·factor, ...`; fps is divided by `factor`.
pub fn downsample(seq: &MotionSequence, factor: usize) -> Result<MotionSequence> {
    if factor == 0 {
        return Err(Error::contract("downsample factor must be at least 1"));
    }
    let data = (0..seq.frames()).step_by(factor).flat_map(|t| seq.frame(t).to_vec()).collect();
    Ok(MotionSequence::new(seq.joints(), seq.fps(), data)?.with_fps(seq.fps() / factor as f64))
}

pub fn format_sequences(seqs: &[CoupleSequence]) -> String {
    let mut out = String::with_capacity(64 + seqs.iter().map(|s| s.leader.data().len() * 24).sum::<usize>());
    out.push_str(CSV_HEADER);
    out.push('\n');
    let mut fps = None;
    for s in seqs {
        if fps != Some(s.fps()) {
            let _ = writeln!(out, "# fps={}", s.fps());
            fps = Some(s.fps());
        }
        for t in 0..s.frames() {
            for (person, seq) in [("leader", &s.leader), ("follower", &s.follower)] {
                for (j, p) in seq.frame(t).chunks_exact(3).enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{t},{person},{j},{},{},{}",
                        s.seq_id, s.aerial, s.couple, s.rep, p[0], p[1], p[2]
                    );
                }
            }
        }
    }
    out
}

struct Pending {
    aerial: u32,
    couple: u32,
    rep: u32,
    fps: f64,
    first_line: usize,
    last_line: usize,
    /// `(frame, person, joint)` → coordinates.
    points: BTreeMap<(usize, usize, usize), [f64; 3]>,
}

/// Parses the sequence CSV format. `source` names the input in errors.
pub fn parse_sequences(text: &str, source: &str) -> Result<Vec<CoupleSequence>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut order: Vec<String> = Vec::new();
    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();
    let mut fps = 25.0;
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("fps=") {
                fps = v
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|f| *f > 0.0 && f.is_finite())
                    .ok_or_else(|| err(line_no, format!("bad fps directive '{}'", v.trim())))?;
            }
            continue;
        }
        if !seen_header {
            if line != CSV_HEADER {
                return Err(err(line_no, format!("expected header '{CSV_HEADER}'")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 10 {
            return Err(err(line_no, format!("expected 10 fields, found {}", fields.len())));
        }
        let int = |k: usize, name: &str| -> Result<usize> {
            fields[k]
                .parse::<usize>()
                .map_err(|_| err(line_no, format!("bad {name} '{}'", fields[k])))
        };
        let (aerial, couple, rep) = (int(1, "aerial")? as u32, int(2, "couple")? as u32, int(3, "rep")? as u32);
        let frame = int(4, "frame")?;
        let person = match fields[5] {
            "leader" => 0,
            "follower" => 1,
            other => return Err(err(line_no, format!("unknown person '{other}'"))),
        };
        let joint = int(6, "joint")?;
        let mut xyz = [0.0; 3];
        for (a, v) in xyz.iter_mut().enumerate() {
            *v = fields[7 + a]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("bad coordinate '{}'", fields[7 + a])))?;
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(err(line_no, "empty seq_id".into()));
        }
        let entry = pending.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            Pending {
                aerial,
                couple,
                rep,
                fps,
                first_line: line_no,
                last_line: line_no,
                points: BTreeMap::new(),
            }
        });
        if (entry.aerial, entry.couple, entry.rep) != (aerial, couple, rep) || entry.fps != fps {
            return Err(err(line_no, format!("metadata of '{id}' changes within the sequence")));
        }
        if entry.points.insert((frame, person, joint), xyz).is_some() {
            return Err(err(line_no, format!("duplicate row for frame {frame}, {}, joint {joint}", fields[5])));
        }
        entry.last_line = line_no;
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let p = pending.remove(&id).expect("recorded");
        let frames = p.points.keys().map(|k| k.0).max().expect("non-empty") + 1;
        let joints = p.points.keys().map(|k| k.2).max().expect("non-empty") + 1;
        if p.points.len() != frames * 2 * joints {
            return Err(err(
                p.last_line,
                format!(
                    "sequence '{id}' (from line {}) has {} rows, expected {frames} frames x 2 persons x {joints} joints",
                    p.first_line,
                    p.points.len()
                ),
            ));
        }
        let mut data = [Vec::with_capacity(frames * joints * 3), Vec::with_capacity(frames * joints * 3)];
        for (&(_, person, _), xyz) in &p.points {
            data[person].extend_from_slice(xyz);
        }
        let [l, f] = data;
        let (leader, follower) = (MotionSequence::new(joints, p.fps, l)?, MotionSequence::new(joints, p.fps, f)?);
        out.push(CoupleSequence::new(id, p.aerial, p.couple, p.rep, leader, follower)?);
    }
    Ok(out)
}

pub fn load_sequences(path: &Path) -> Result<Vec<CoupleSequence>> {
    parse_sequences(&read_to_string(path)?, &path.display().to_string())
}

pub fn save_sequences(path: &Path, seqs: &[CoupleSequence]) -> Result<()> {
    write_atomic(path, format_sequences(seqs).as_bytes())
}

/// Writes one CSV per sequence plus `index.csv` into `dir`.
pub fn save_dataset(dir: &Path, seqs: &[CoupleSequence]) -> Result<()> {
    create_dir_all(dir)?;
    let mut index = format!("{INDEX_HEADER}\n");
    for s in seqs {
        let file = format!("{}.csv", s.seq_id);
        save_sequences(&dir.join(&file), std::slice::from_ref(s))?;
        let _ = writeln!(
            index,
            "{},{file},{},{},{},{},{}",
            s.seq_id,
            s.aerial,
            s.couple,
            s.rep,
            s.frames(),
            s.fps()
        );
    }
    write_atomic(&dir.join("index.csv"), index.as_bytes())
}

/// Loads every sequence listed in `dir/index.csv`, checking the listed
/// metadata against the file contents.
pub fn load_dataset(dir: &Path) -> Result<Vec<CoupleSequence>> {
    let index_path = dir.join("index.csv");
    let source = index_path.display().to_string();
    let text = read_to_string(&index_path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: source.clone(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            if line != INDEX_HEADER {
                return Err(err(i + 1, format!("expected header '{INDEX_HEADER}'")));
            }
            header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(err(i + 1, format!("expected 7 fields, found {}", f.len())));
        }
        let file = Path::new(f[1]);
        if file.is_absolute() || file.components().count() != 1 {
            return Err(err(i + 1, format!("file '{}' must be a plain name inside the dataset", f[1])));
        }
        let seqs = load_sequences(&dir.join(file))?;
        let seq = seqs
            .into_iter()
            .find(|s| s.seq_id == f[0])
            .ok_or_else(|| err(i + 1, format!("'{}' not found in {}", f[0], f[1])))?;
        let listed = format!("{},{},{},{},{}", seq.aerial, seq.couple, seq.rep, seq.frames(), seq.fps());
        let expected = format!("{},{},{},{},{}", f[2], f[3], f[4], f[5], f[6].parse::<f64>().unwrap_or(f64::NAN));
        if listed != expected {
            return Err(err(i + 1, format!("index metadata for '{}' does not match its file", f[0])));
        }
        out.push(seq);
    }
    Ok(out)
}

/// Loads a dataset directory or a single sequence CSV.
pub fn load_any(path: &Path) -> Result<Vec<CoupleSequence>> {
    if path.is_dir() {
        load_dataset(path)
    } else {
        load_sequences(path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    /// One aerial: train on the second couple, test on the first.
    SingleAerial(u32),
    /// Common aerials: train on the second couple, test on the first.
    CommonAerials,
    /// Train on common aerials of both couples, test on couple-specific ones.
    ExtraAerials,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitKind::SingleAerial(a) => write!(f, "SA:{a}"),
            SplitKind::CommonAerials => f.write_str("CA"),
            SplitKind::ExtraAerials => f.write_str("EA"),
        }
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        match upper.as_str() {
            "CA" => Ok(SplitKind::CommonAerials),
            "EA" => Ok(SplitKind::ExtraAerials),
            _ => {
                let aerial = upper
                    .strip_prefix("SA:")
                    .or_else(|| upper.strip_prefix("SA"))
                    .and_then(|a| a.parse::<u32>().ok())
                    .ok_or_else(|| Error::contract(format!("unknown split '{s}' (expected SA:<aerial>, CA or EA)")))?;
                if !COMMON_AERIALS.contains(&aerial) {
                    return Err(Error::contract(format!(
                        "SA split needs a common aerial 1-7, got {aerial}"
                    )));
                }
                Ok(SplitKind::SingleAerial(aerial))
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<CoupleSequence>,
    pub test: Vec<CoupleSequence>,
}

pub fn in_train(kind: SplitKind, aerial: u32, couple: u32) -> bool {
    match kind {
        SplitKind::SingleAerial(a) => aerial == a && couple == 2,
        SplitKind::CommonAerials => COMMON_AERIALS.contains(&aerial) && couple == 2,
        SplitKind::ExtraAerials => COMMON_AERIALS.contains(&aerial),
    }
}

pub fn in_test(kind: SplitKind, aerial: u32, couple: u32) -> bool {
    match kind {
        SplitKind::SingleAerial(a) => aerial == a && couple == 1,
        SplitKind::CommonAerials => COMMON_AERIALS.contains(&aerial) && couple == 1,
        SplitKind::ExtraAerials => EXTRA_AERIALS.contains(&aerial),
    }
}

pub fn make_split(dataset: &[CoupleSequence], kind: SplitKind) -> Result<Split> {
    if let SplitKind::SingleAerial(a) = kind {
        if !COMMON_AERIALS.contains(&a) {
            return Err(Error::contract(format!("SA split needs a common aerial 1-7, got {a}")));
        }
    }
    let mut split = Split::default();
    for s in dataset {
        if in_train(kind, s.aerial, s.couple) {
            split.train.push(s.clone());
        } else if in_test(kind, s.aerial, s.couple) {
            split.test.push(s.clone());
        }
    }
    Ok(split)
}

/// Start frames of up to `count` windows of `in_len + out_len` frames:
/// every start when there are at most `count`, otherwise evenly spaced with
/// a seeded offset inside the first gap.
pub fn sample_test_starts(frames: usize, count: usize, in_len: usize, out_len: usize, seed: u64) -> Result<Vec<usize>> {
    let len = in_len + out_len;
    if frames < len || len == 0 {
        return Err(Error::InsufficientHistory { have: frames, need: len });
    }
    let available = frames - len + 1;
    if available <= count {
        return Ok((0..available).collect());
    }
    let spacing = available as f64 / count as f64;
    let offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..spacing);
    Ok((0..count)
        .map(|k| ((offset + k as f64 * spacing).floor() as usize).min(available - 1))
        .collect())
}

pub fn sample_test_subsequences(
    seq: &CoupleSequence,
    count: usize,
    in_len: usize,
    out_len: usize,
    seed: u64,
) -> Result<Vec<CoupleSequence>> {
    sample_test_starts(seq.frames(), count, in_len, out_len, seed)?
        .into_iter()
        .map(|s| seq.window(s, in_len + out_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(id: &str, aerial: u32, couple: u32, rep: u32, frames: usize) -> CoupleSequence {
        let mk = |k: f64| {
            let data = (0..frames * 4 * 3).map(|i| (i as f64 * 0.37 + k).sin() * 1234.5678).collect();
            MotionSequence::new(4, 25.0, data).unwrap()
        };
        CoupleSequence::new(id, aerial, couple, rep, mk(0.0), mk(1.0)).unwrap()
    }

    fn full_labels() -> Vec<CoupleSequence> {
        let mut out = Vec::new();
        for couple in 1..=2 {
            let aerials: Vec<u32> = if couple == 1 {
                (1..=13).collect()
            } else {
                (1..=7).chain(14..=16).collect()
            };
            for a in aerials {
                out.push(seq(&format!("c{couple}a{a}"), a, couple, 0, 2));
            }
        }
        out
    }

    #[test]
    fn empty_file_has_no_sequences() {
        assert!(parse_sequences("", "x").unwrap().is_empty());
        assert!(parse_sequences(&format!("{CSV_HEADER}\n"), "x").unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let seqs = vec![seq("a", 1, 1, 0, 3), seq("b", 9, 2, 4, 2)];
        let back = parse_sequences(&format_sequences(&seqs), "mem").unwrap();
        assert_eq!(back, seqs);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &seqs).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), seqs);
        assert_eq!(load_any(&dir.path().join("b.csv")).unwrap(), vec![seqs[1].clone()]);
    }

    #[test]
    fn short_row_names_its_line() {
        let text = format!("{CSV_HEADER}\ns,1,1,0,0,leader,0,1,2,3\ns,1,1,0,0,follower,0\n");
        match parse_sequences(&text, "f.csv") {
            Err(Error::Parse { line, path, .. }) => assert_eq!((line, path.as_str()), (3, "f.csv")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_joint_is_a_parse_error() {
        let text = format!(
            "{CSV_HEADER}\ns,1,1,0,0,leader,0,1,2,3\ns,1,1,0,0,leader,1,1,2,3\ns,1,1,0,0,follower,0,1,2,3\n"
        );
        assert!(matches!(parse_sequences(&text, "f"), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn fps_directive_is_read() {
        let text = format!("# fps=50\n{CSV_HEADER}\ns,1,1,0,0,leader,0,1,2,3\ns,1,1,0,0,follower,0,1,2,3\n");
        assert_eq!(parse_sequences(&text, "f").unwrap()[0].fps(), 50.0);
    }

    #[test]
    fn common_aerial_split() {
        let split = make_split(&full_labels(), SplitKind::CommonAerials).unwrap();
        assert_eq!(split.train.len(), 7);
        assert_eq!(split.test.len(), 7);
        assert!(split.train.iter().all(|s| s.couple == 2 && s.aerial <= 7));
        assert!(split.test.iter().all(|s| s.couple == 1 && s.aerial <= 7));
    }

    #[test]
    fn extra_aerial_split_holds_out_unseen_aerials() {
        let split = make_split(&full_labels(), SplitKind::ExtraAerials).unwrap();
        let mut test: Vec<u32> = split.test.iter().map(|s| s.aerial).collect();
        test.sort_unstable();
        assert_eq!(test, (8..=16).collect::<Vec<_>>());
        assert_eq!(split.train.len(), 14);
        assert!(split.train.iter().all(|s| s.aerial <= 7));
    }

    #[test]
    fn single_aerial_split() {
        let split = make_split(&full_labels(), SplitKind::SingleAerial(3)).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (1, 1));
        assert_eq!((split.train[0].couple, split.test[0].couple), (2, 1));
        assert!(make_split(&full_labels(), SplitKind::SingleAerial(9)).is_err());
        assert!("SA:9".parse::<SplitKind>().is_err());
        assert_eq!("sa:4".parse::<SplitKind>().unwrap(), SplitKind::SingleAerial(4));
    }

    #[test]
    fn splits_are_disjoint() {
        let data = full_labels();
        for kind in [SplitKind::CommonAerials, SplitKind::ExtraAerials, SplitKind::SingleAerial(7)] {
            let split = make_split(&data, kind).unwrap();
            for t in &split.test {
                assert!(split.train.iter().all(|s| s.seq_id != t.seq_id));
            }
        }
    }

    #[test]
    fn exact_length_gives_one_window() {
        assert_eq!(sample_test_starts(20, 64, 10, 10, 3).unwrap(), vec![0]);
        assert!(matches!(
            sample_test_starts(19, 64, 10, 10, 3),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn five_repetitions_give_320_windows() {
        let total: usize = (0..5).map(|r| sample_test_starts(500, 64, 50, 25, r).unwrap().len()).sum();
        assert_eq!(total, 320);
    }

    #[test]
    fn downsample_halves_rate() {
        let s = seq("d", 1, 1, 0, 100).leader.with_fps(50.0);
        let d = downsample(&s, 2).unwrap();
        assert_eq!((d.frames(), d.fps()), (50, 25.0));
        assert_eq!(d.frame(7), s.frame(14));
        assert_eq!(downsample(&s, 1).unwrap(), s);
        assert!(downsample(&s, 0).is_err());
    }

    proptest! {
        #[test]
        fn starts_are_deterministic_distinct_and_in_range(
            frames in 1usize..600, count in 1usize..80, in_len in 1usize..30, out_len in 1usize..30, seed in 0u64..1000
        ) {
            let r = sample_test_starts(frames, count, in_len, out_len, seed);
            if frames < in_len + out_len {
                prop_assert!(r.is_err());
            } else {
                let starts = r.unwrap();
                prop_assert_eq!(&starts, &sample_test_starts(frames, count, in_len, out_len, seed).unwrap());
                let available = frames - in_len - out_len + 1;
                prop_assert_eq!(starts.len(), count.min(available));
                prop_assert!(starts.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(starts.iter().all(|&s| s + in_len + out_len <= frames));
            }
        }
    }
}
