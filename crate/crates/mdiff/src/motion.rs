//! Motion sequences, skeleton descriptions, windowing and the text file
//! format, plus a synthetic kinematic-chain generator for small-scale runs.

use crate::error::{Error, Result};
use crate::rng::{self, ns};
use ndarray::{s, Array2};
use rand::RngExt as _;
use std::fmt::Write as _;
use std::path::Path;

/// Joint topology: names plus parent indices. Joints are stored in
/// topological order, i.e. `parents[i] < i`; roots have no parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
}

impl Skeleton {
    pub fn new(joint_names: Vec<String>, parents: Vec<Option<usize>>) -> Result<Self> {
        if joint_names.is_empty() {
            return Err(Error::data("skeleton must have at least one joint"));
        }
        if joint_names.len() != parents.len() {
            return Err(Error::data(format!(
                "skeleton has {} joint names but {} parent entries",
                joint_names.len(),
                parents.len()
            )));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= i {
                    return Err(Error::data(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        Ok(Skeleton {
            joint_names,
            parents,
        })
    }

    /// A simple chain: joint 0 is the root, joint `i` hangs off `i - 1`.
    pub fn chain(num_joints: usize) -> Result<Self> {
        let names = (0..num_joints).map(|i| format!("j{i}")).collect();
        let parents = (0..num_joints)
            .map(|i| if i == 0 { None } else { Some(i - 1) })
            .collect();
        Skeleton::new(names, parents)
    }

    /// 17-joint mocap preset (hip-rooted, two legs, spine/head, two arms).
    pub fn preset_17() -> Self {
        let names = [
            "hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine", "thorax",
            "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
        ];
        let parents = [
            None,
            Some(0),
            Some(1),
            Some(2),
            Some(0),
            Some(4),
            Some(5),
            Some(0),
            Some(7),
            Some(8),
            Some(9),
            Some(8),
            Some(11),
            Some(12),
            Some(8),
            Some(14),
            Some(15),
        ];
        Skeleton::new(names.iter().map(|s| s.to_string()).collect(), parents.to_vec()).unwrap()
    }

    /// 15-joint mocap preset (torso-rooted, head, two arms, two legs).
    pub fn preset_15() -> Self {
        let names = [
            "pelvis", "thorax", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
            "r_elbow", "r_wrist", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle",
        ];
        let parents = [
            None,
            Some(0),
            Some(1),
            Some(1),
            Some(3),
            Some(4),
            Some(1),
            Some(6),
            Some(7),
            Some(0),
            Some(9),
            Some(10),
            Some(0),
            Some(12),
            Some(13),
        ];
        Skeleton::new(names.iter().map(|s| s.to_string()).collect(), parents.to_vec()).unwrap()
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }
}

/// A motion clip: `frames` is `[F x 3J]`, each row one frame holding joint
/// coordinates joint-major (`x0 y0 z0 x1 y1 z1 ...`).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub skeleton: Skeleton,
    pub fps: f64,
    pub frames: Array2<f64>,
}

impl MotionSequence {
    pub fn new(skeleton: Skeleton, fps: f64, frames: Array2<f64>) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::data(format!("fps must be positive, got {fps}")));
        }
        if frames.nrows() == 0 {
            return Err(Error::data("sequence must have at least one frame"));
        }
        if frames.ncols() != 3 * skeleton.num_joints() {
            return Err(Error::data(format!(
                "frame width {} does not match 3 x {} joints",
                frames.ncols(),
                skeleton.num_joints()
            )));
        }
        if let Some(bad) = frames.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite coordinate {bad}")));
        }
        Ok(MotionSequence {
            skeleton,
            fps,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.num_joints()
    }

    /// Serialise to the text format: a `J= F= FPS=` header followed by one
    /// row per frame, coordinates printed with 9 significant digits.
    /// Files written here round-trip bit-exactly through [`MotionSequence::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "J={} F={} FPS={}",
            self.num_joints(),
            self.num_frames(),
            self.fps
        )
        .unwrap();
        for row in self.frames.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                write!(out, "{:.8e}", v).unwrap();
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::Io(format!("writing {}: {e}", path.display())))
    }

    /// Parse the text format. Lines starting with `#` are ignored; all
    /// errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim_start().starts_with('#'));

        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::data("empty motion file"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || {
            Error::data(format!(
                "malformed header at line {hline}: expected `J=<joints> F=<frames> FPS=<fps>`"
            ))
        };
        if toks.len() != 3 {
            return Err(bad_header());
        }
        let j: usize = toks[0]
            .strip_prefix("J=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad_header)?;
        let f: usize = toks[1]
            .strip_prefix("F=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad_header)?;
        let fps: f64 = toks[2]
            .strip_prefix("FPS=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad_header)?;
        if j == 0 || f == 0 {
            return Err(bad_header());
        }

        let width = 3 * j;
        let mut data = Vec::with_capacity(f * width);
        let mut rows = 0usize;
        let mut last_line = hline;
        for (ln, line) in lines {
            last_line = ln;
            if rows == f {
                return Err(Error::data(format!(
                    "frame count mismatch at line {ln}: more frame rows than declared F={f}"
                )));
            }
            let mut count = 0usize;
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::data(format!("invalid number at line {ln}: `{tok}`"))
                })?;
                if !v.is_finite() {
                    return Err(Error::data(format!("non-finite value at line {ln}")));
                }
                data.push(v);
                count += 1;
            }
            if count != width {
                return Err(Error::data(format!(
                    "malformed frame row at line {ln}: expected {width} values, found {count}"
                )));
            }
            rows += 1;
        }
        if rows != f {
            return Err(Error::data(format!(
                "frame count mismatch at line {}: header declared F={f} but found {rows} frames",
                last_line + 1
            )));
        }
        let frames = Array2::from_shape_vec((f, width), data).unwrap();
        MotionSequence::new(Skeleton::chain(j)?, fps, frames)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Express every joint relative to `root_joint`, frame by frame. The root's
/// own columns become zero.
pub fn remove_global_translation(seq: &MotionSequence, root_joint: usize) -> Result<MotionSequence> {
    let j = seq.num_joints();
    if root_joint >= j {
        return Err(Error::data(format!(
            "root joint {root_joint} out of range for {j} joints"
        )));
    }
    let mut frames = seq.frames.clone();
    for mut row in frames.rows_mut() {
        let root = [
            row[3 * root_joint],
            row[3 * root_joint + 1],
            row[3 * root_joint + 2],
        ];
        for jj in 0..j {
            for d in 0..3 {
                row[3 * jj + d] -= root[d];
            }
        }
    }
    MotionSequence::new(seq.skeleton.clone(), seq.fps, frames)
}

/// One training example: `observed` is `[T x 3J]`, `future` is `[f x 3J]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub observed: Array2<f64>,
    pub future: Array2<f64>,
}

/// Start offsets of sliding observed+future windows over `total` frames.
pub fn window_starts(total: usize, t_obs: usize, f_fut: usize, stride: usize) -> Result<Vec<usize>> {
    if t_obs == 0 || f_fut == 0 {
        return Err(Error::usage("window sizes must be at least 1"));
    }
    if stride == 0 {
        return Err(Error::usage("stride must be at least 1"));
    }
    let need = t_obs + f_fut;
    if total < need {
        return Err(Error::data(format!(
            "sequence too short: need at least {need} frames, found {total}"
        )));
    }
    Ok((0..=total - need).step_by(stride).collect())
}

/// Slice a sequence into observed/future pairs with the given stride.
pub fn make_windows(
    seq: &MotionSequence,
    t_obs: usize,
    f_fut: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    let starts = window_starts(seq.num_frames(), t_obs, f_fut, stride)?;
    Ok(starts
        .into_iter()
        .map(|s0| WindowPair {
            observed: seq.frames.slice(s![s0..s0 + t_obs, ..]).to_owned(),
            future: seq
                .frames
                .slice(s![s0 + t_obs..s0 + t_obs + f_fut, ..])
                .to_owned(),
        })
        .collect())
}

/// A window pair plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetWindow {
    /// File name (not path) the window was cut from.
    pub source: String,
    /// Frame offset of the observed part within the source sequence.
    pub start: usize,
    pub pair: WindowPair,
}

/// Load every `.txt` motion file under `dir` (sorted by name) and cut it into
/// windows. All files must agree on joint count; `center` subtracts the root
/// joint trajectory first. Sequences shorter than one window are an error.
pub fn load_windows(
    dir: &Path,
    t_obs: usize,
    f_fut: usize,
    stride: usize,
    center: bool,
) -> Result<Vec<DatasetWindow>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::data(format!("cannot read data dir {}: {e}", dir.display())))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.ends_with(".txt").then_some(name)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::data(format!(
            "no .txt motion files in {}",
            dir.display()
        )));
    }
    let mut windows = Vec::new();
    let mut joints: Option<usize> = None;
    for name in names {
        let mut seq = MotionSequence::load(&dir.join(&name))?;
        if center {
            seq = remove_global_translation(&seq, 0)?;
        }
        match joints {
            None => joints = Some(seq.num_joints()),
            Some(j) if j != seq.num_joints() => {
                return Err(Error::data(format!(
                    "{name}: expected {j} joints like the rest of the dataset, found {}",
                    seq.num_joints()
                )));
            }
            _ => {}
        }
        let starts = window_starts(seq.num_frames(), t_obs, f_fut, stride)
            .map_err(|e| Error::data(format!("{name}: {e}")))?;
        for s0 in starts {
            windows.push(DatasetWindow {
                source: name.clone(),
                start: s0,
                pair: WindowPair {
                    observed: seq.frames.slice(s![s0..s0 + t_obs, ..]).to_owned(),
                    future: seq
                        .frames
                        .slice(s![s0 + t_obs..s0 + t_obs + f_fut, ..])
                        .to_owned(),
                },
            });
        }
    }
    Ok(windows)
}

/// Generate a smoothly moving kinematic chain: joint 0 pinned at the origin,
/// each bone a fixed length, orientations driven by low-frequency sinusoids
/// with seeded means, amplitudes, frequencies and phases. 25 fps.
pub fn synth_kinematic_chain(
    num_joints: usize,
    num_frames: usize,
    seed: u64,
) -> Result<MotionSequence> {
    if num_joints < 2 {
        return Err(Error::usage("chain needs at least 2 joints"));
    }
    if num_frames < 2 {
        return Err(Error::usage("chain needs at least 2 frames"));
    }
    const FPS: f64 = 25.0;
    let mut rng = rng::substream(seed, &[ns::SYNTH]);

    struct Angle {
        mean: f64,
        amp: f64,
        freq: f64,
        phase: f64,
    }
    impl Angle {
        fn at(&self, t: f64) -> f64 {
            self.mean + self.amp * (2.0 * std::f64::consts::PI * self.freq * t + self.phase).sin()
        }
    }

    let bones: Vec<(f64, Angle, Angle)> = (1..num_joints)
        .map(|_| {
            let len = rng.random_range(0.22..0.32);
            let theta = Angle {
                mean: rng.random_range(0.7..2.4),
                amp: rng.random_range(0.3..0.7),
                freq: rng.random_range(0.5..1.4),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            };
            let phi = Angle {
                mean: rng.random_range(0.0..std::f64::consts::TAU),
                amp: rng.random_range(0.4..1.0),
                freq: rng.random_range(0.5..1.4),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            };
            (len, theta, phi)
        })
        .collect();

    let mut frames = Array2::zeros((num_frames, 3 * num_joints));
    for fr in 0..num_frames {
        let t = fr as f64 / FPS;
        let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
        for (i, (len, theta, phi)) in bones.iter().enumerate() {
            let th = theta.at(t);
            let ph = phi.at(t);
            x += len * th.sin() * ph.cos();
            y += len * th.sin() * ph.sin();
            z += len * th.cos();
            frames[(fr, 3 * (i + 1))] = x;
            frames[(fr, 3 * (i + 1) + 1)] = y;
            frames[(fr, 3 * (i + 1) + 2)] = z;
        }
    }
    MotionSequence::new(Skeleton::chain(num_joints)?, FPS, frames)
}
