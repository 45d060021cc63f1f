//! Command-line interface: synthetic data generation, the two training
//! stages, sampling, evaluation, and reverse-step diagnostics.

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::diffusion::{self, PredictionSet};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalRecord};
use crate::motion::{self, MotionSequence, Skeleton};
use crate::nn::DiffusionModel;
use crate::rng::{self, ns};
use crate::schedule::NoiseSchedule;
use crate::train;
use ndarray::{s, Array1, Array2};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
usage: mdiff <command> [flags]

commands:
  synth-data  --out DIR [--sequences N] [--frames N] [--joints N] [--seed N]
              generate synthetic kinematic-chain motion files plus a manifest
  train       --config FILE --stage diffusion|refine --out DIR [--checkpoint FILE]
              train the noise predictor, or the refiner against a frozen one
  sample      --checkpoint FILE --data DIR --out DIR [--n N] [--seed N]
              [--refiner FILE] [--stride N]
              draw futures for every observation window in the data
  evaluate    --pred DIR --data DIR --out FILE [--delta X] [--refined]
              score predictions (APD/ADE/FDE/MMADE/MMFDE) against the data
  diagnose    --checkpoint FILE --data DIR --k-grid LIST --out FILE
              [--n N] [--seed N] [--stride N]
              measure diversity/error at intermediate reverse steps
";

struct Flags {
    values: HashMap<&'static str, String>,
    bools: Vec<&'static str>,
}

impl Flags {
    fn parse(args: &[String], value_flags: &[&'static str], bool_flags: &[&'static str]) -> Result<Self> {
        let mut values = HashMap::new();
        let mut bools = Vec::new();
        let mut it = args.iter();
        while let Some(tok) = it.next() {
            let name = tok
                .strip_prefix("--")
                .ok_or_else(|| Error::usage(format!("expected a --flag, found `{tok}`")))?;
            if let Some(&canon) = bool_flags.iter().find(|f| **f == name) {
                bools.push(canon);
            } else if let Some(&canon) = value_flags.iter().find(|f| **f == name) {
                let val = it
                    .next()
                    .ok_or_else(|| Error::usage(format!("--{name} needs a value")))?;
                if values.insert(canon, val.clone()).is_some() {
                    return Err(Error::usage(format!("--{name} given twice")));
                }
            } else {
                return Err(Error::usage(format!("unknown flag --{name}")));
            }
        }
        Ok(Flags { values, bools })
    }

    fn req(&self, name: &str) -> Result<&str> {
        self.values
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::usage(format!("missing required flag --{name}")))
    }

    fn opt(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    fn bool(&self, name: &str) -> bool {
        self.bools.contains(&name)
    }

    fn usize_or(&self, name: &str, default: usize) -> Result<usize> {
        match self.opt(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::usage(format!("--{name}: `{v}` is not a count"))),
        }
    }

    fn u64_or(&self, name: &str, default: u64) -> Result<u64> {
        match self.opt(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::usage(format!("--{name}: `{v}` is not an integer"))),
        }
    }

    fn f64_or(&self, name: &str, default: f64) -> Result<f64> {
        match self.opt(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::usage(format!("--{name}: `{v}` is not a number"))),
        }
    }
}

pub fn run(args: &[String]) -> Result<()> {
    let Some(cmd) = args.first() else {
        return Err(Error::usage(USAGE));
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "synth-data" => cmd_synth_data(rest),
        "train" => cmd_train(rest),
        "sample" => cmd_sample(rest),
        "evaluate" => cmd_evaluate(rest),
        "diagnose" => cmd_diagnose(rest),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(Error::usage(format!("unknown command `{other}`\n{USAGE}"))),
    }
}

fn cmd_synth_data(args: &[String]) -> Result<()> {
    let f = Flags::parse(args, &["out", "sequences", "frames", "joints", "seed"], &[])?;
    let out = PathBuf::from(f.req("out")?);
    let sequences = f.usize_or("sequences", 8)?;
    let frames = f.usize_or("frames", 48)?;
    let joints = f.usize_or("joints", 5)?;
    let seed = f.u64_or("seed", 0)?;
    if sequences == 0 {
        return Err(Error::usage("--sequences must be at least 1"));
    }
    std::fs::create_dir_all(&out)?;
    let mut manifest = String::from("file,joints,frames,fps\n");
    for i in 0..sequences {
        let seq = motion::synth_kinematic_chain(
            joints,
            frames,
            rng::fold_seed(seed, &[ns::SYNTH, i as u64]),
        )?;
        let name = format!("chain_{i:03}.txt");
        seq.save(&out.join(&name))?;
        manifest.push_str(&format!("{name},{joints},{frames},{}\n", seq.fps));
    }
    std::fs::write(out.join("manifest.csv"), manifest)?;
    println!("wrote {sequences} sequences to {}", out.display());
    Ok(())
}

fn cmd_train(args: &[String]) -> Result<()> {
    let f = Flags::parse(args, &["config", "stage", "out", "checkpoint"], &[])?;
    let cfg = ExperimentConfig::load(Path::new(f.req("config")?))?;
    let stage = f.req("stage")?;
    let out = PathBuf::from(f.req("out")?);
    let stride = match stage {
        "refine" => cfg.refine.stride.unwrap_or(cfg.data.stride),
        _ => cfg.data.stride,
    };
    let windows = motion::load_windows(
        Path::new(&cfg.data.dir),
        cfg.data.t_obs,
        cfg.data.f_fut,
        stride,
        cfg.data.center,
    )?;
    let art = match stage {
        "diffusion" => {
            train::train_diffusion(&windows, &cfg.network, &cfg.schedule, &cfg.train, &out)?
        }
        "refine" => {
            let ckpt = f.values.get("checkpoint").ok_or_else(|| {
                Error::usage("stage refine requires --checkpoint with a trained diffusion model")
            })?;
            let (model, schedule, spec) = checkpoint::load_diffusion(Path::new(ckpt))?;
            train::train_refiner(
                &windows,
                &model,
                &schedule,
                &spec,
                &cfg.refine,
                cfg.train.seed,
                &out,
            )?
        }
        other => {
            return Err(Error::usage(format!(
                "--stage must be `diffusion` or `refine`, got `{other}`"
            )))
        }
    };
    println!("wrote {}", art.best_path.display());
    println!("wrote {}", art.last_path.display());
    println!("wrote {}", art.log_path.display());
    println!("best epoch {}", art.best_epoch);
    Ok(())
}

/// fps of the first (alphabetically) motion file in a directory.
fn first_fps(dir: &Path) -> Result<f64> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::data(format!("cannot read data dir {}: {e}", dir.display())))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.ends_with(".txt").then_some(name)
        })
        .collect();
    names.sort();
    let first = names
        .first()
        .ok_or_else(|| Error::data(format!("no .txt motion files in {}", dir.display())))?;
    Ok(MotionSequence::load(&dir.join(first))?.fps)
}

fn load_model(path: &str) -> Result<(DiffusionModel, NoiseSchedule, crate::schedule::ScheduleSpec)> {
    checkpoint::load_diffusion(Path::new(path))
}

fn cmd_sample(args: &[String]) -> Result<()> {
    let f = Flags::parse(
        args,
        &["checkpoint", "data", "out", "n", "seed", "refiner", "stride"],
        &[],
    )?;
    let (model, schedule, _) = load_model(f.req("checkpoint")?)?;
    let data = PathBuf::from(f.req("data")?);
    let out = PathBuf::from(f.req("out")?);
    let n = f.usize_or("n", 50)?;
    let seed = f.u64_or("seed", 0)?;
    let refiner = match f.opt("refiner") {
        Some(p) => Some(checkpoint::load_refiner(Path::new(p))?.0),
        None => None,
    };
    let net = model.cfg();
    let (t_obs, f_fut) = (net.obs_frames, net.fut_frames);
    let stride = f.usize_or("stride", t_obs + f_fut)?;
    let windows = motion::load_windows(&data, t_obs, f_fut, stride, true)?;
    let fps = first_fps(&data)?;
    let skeleton = Skeleton::chain(net.num_joints)?;
    let dims = (f_fut, 3 * net.num_joints);

    std::fs::create_dir_all(&out)?;
    let mut index = String::from("obs_id,source,start,t_obs,f_fut,n_samples\n");
    for (i, w) in windows.iter().enumerate() {
        let cond = model.encode_past(&w.pair.observed)?;
        let set = diffusion::sample(&schedule, &model, &cond, n, seed, i, dims)?;
        for (j, sample) in set.samples.iter().enumerate() {
            let seq = MotionSequence::new(skeleton.clone(), fps, sample.clone())?;
            seq.save(&out.join(format!("sample_{i}_{j}.txt")))?;
        }
        if let Some(r) = &refiner {
            let refined = r.refine(&set, &cond)?;
            for (j, sample) in refined.samples.iter().enumerate() {
                let seq = MotionSequence::new(skeleton.clone(), fps, sample.clone())?;
                seq.save(&out.join(format!("refined_{i}_{j}.txt")))?;
            }
        }
        index.push_str(&format!(
            "{i},{},{},{t_obs},{f_fut},{n}\n",
            w.source, w.start
        ));
    }
    std::fs::write(out.join("index.csv"), index)?;
    println!(
        "wrote {} predictions for {} observations to {}",
        n * windows.len(),
        windows.len(),
        out.display()
    );
    Ok(())
}

struct IndexRow {
    obs_id: usize,
    source: String,
    start: usize,
    t_obs: usize,
    f_fut: usize,
    n_samples: usize,
}

fn read_index(pred: &Path) -> Result<Vec<IndexRow>> {
    let path = pred.join("index.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "obs_id,source,start,t_obs,f_fut,n_samples")) => {}
        _ => {
            return Err(Error::data(format!(
                "{}: missing or malformed header",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::data(format!(
                "{}: line {}: expected 6 fields, found {}",
                path.display(),
                ln + 1,
                parts.len()
            )));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::data(format!(
                    "{}: line {}: bad {what} `{s}`",
                    path.display(),
                    ln + 1
                ))
            })
        };
        rows.push(IndexRow {
            obs_id: num(parts[0], "obs_id")?,
            source: parts[1].to_string(),
            start: num(parts[2], "start")?,
            t_obs: num(parts[3], "t_obs")?,
            f_fut: num(parts[4], "f_fut")?,
            n_samples: num(parts[5], "n_samples")?,
        });
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no prediction rows", path.display())));
    }
    Ok(rows)
}

fn cmd_evaluate(args: &[String]) -> Result<()> {
    let f = Flags::parse(args, &["pred", "data", "out", "delta"], &["refined"])?;
    let pred = PathBuf::from(f.req("pred")?);
    let data = PathBuf::from(f.req("data")?);
    let out = PathBuf::from(f.req("out")?);
    let delta = f.f64_or("delta", 0.5)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::usage("--delta must be positive"));
    }
    let prefix = if f.bool("refined") { "refined" } else { "sample" };

    let rows = read_index(&pred)?;
    let mut sources: HashMap<String, MotionSequence> = HashMap::new();
    for row in &rows {
        if !sources.contains_key(&row.source) {
            let seq = MotionSequence::load(&data.join(&row.source))?;
            sources.insert(row.source.clone(), motion::remove_global_translation(&seq, 0)?);
        }
    }

    // ground-truth futures and the final observed frame per observation
    let mut futures = Vec::new();
    let mut lasts: Vec<Array1<f64>> = Vec::new();
    for row in &rows {
        let seq = &sources[&row.source];
        let end = row.start + row.t_obs + row.f_fut;
        if end > seq.num_frames() {
            return Err(Error::data(format!(
                "index row {}: window [{}, {end}) exceeds {} frames of {}",
                row.obs_id, row.start, seq.num_frames(), row.source
            )));
        }
        futures.push(
            seq.frames
                .slice(s![row.start + row.t_obs..end, ..])
                .to_owned(),
        );
        lasts.push(seq.frames.row(row.start + row.t_obs - 1).to_owned());
    }
    let groups = metrics::multimodal_groups(&lasts, delta);

    let mut records = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let mut samples = Vec::with_capacity(row.n_samples);
        for j in 0..row.n_samples {
            let path = pred.join(format!("{prefix}_{}_{j}.txt", row.obs_id));
            samples.push(MotionSequence::load(&path)?.frames);
        }
        let set = PredictionSet::new(row.obs_id, samples)?;
        let group: Vec<&Array2<f64>> = groups[i].iter().map(|&j| &futures[j]).collect();
        records.push(EvalRecord {
            obs_id: row.obs_id,
            apd: metrics::apd(&set),
            ade: metrics::ade(&set, &futures[i])?,
            fde: metrics::fde(&set, &futures[i])?,
            mmade: metrics::mmade(&set, &group)?,
            mmfde: metrics::mmfde(&set, &group)?,
        });
    }
    let mut buf = Vec::new();
    metrics::write_eval_csv(&mut buf, &records)?;
    std::fs::write(&out, buf)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_diagnose(args: &[String]) -> Result<()> {
    let f = Flags::parse(
        args,
        &["checkpoint", "data", "k-grid", "out", "n", "seed", "stride"],
        &[],
    )?;
    let (model, schedule, _) = load_model(f.req("checkpoint")?)?;
    let data = PathBuf::from(f.req("data")?);
    let out = PathBuf::from(f.req("out")?);
    let n = f.usize_or("n", 10)?;
    let seed = f.u64_or("seed", 0)?;
    let grid: Vec<usize> = f
        .req("k-grid")?
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::usage(format!("--k-grid: `{tok}` is not a step index")))
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::usage("--k-grid must list at least one step"));
    }
    for &k in &grid {
        if k > schedule.k_max() {
            return Err(Error::usage(format!(
                "--k-grid: step {k} exceeds k_max {}",
                schedule.k_max()
            )));
        }
    }

    let net = model.cfg();
    let (t_obs, f_fut) = (net.obs_frames, net.fut_frames);
    let stride = f.usize_or("stride", t_obs + f_fut)?;
    let windows = motion::load_windows(&data, t_obs, f_fut, stride, true)?;
    let dims = (f_fut, 3 * net.num_joints);

    let mut apd_sum: HashMap<usize, f64> = HashMap::new();
    let mut ade_sum: HashMap<usize, f64> = HashMap::new();
    for (i, w) in windows.iter().enumerate() {
        let cond = model.encode_past(&w.pair.observed)?;
        let (_, trace) =
            diffusion::sample_traced(&schedule, &model, &cond, n, seed, i, dims, &grid)?;
        for (&k, states) in &trace {
            let set = PredictionSet::new(i, states.clone())?;
            *apd_sum.entry(k).or_default() += metrics::apd(&set);
            *ade_sum.entry(k).or_default() += metrics::ade(&set, &w.pair.future)?;
        }
    }

    let mut csv = String::from("k,APD,ADE\n");
    let count = windows.len() as f64;
    for &k in &grid {
        csv.push_str(&format!(
            "{k},{:.6},{:.6}\n",
            apd_sum[&k] / count,
            ade_sum[&k] / count
        ));
    }
    std::fs::write(&out, csv)?;
    println!("wrote {}", out.display());
    Ok(())
}
