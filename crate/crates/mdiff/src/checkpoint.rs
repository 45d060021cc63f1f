//! Model checkpoints: a versioned binary container of named tensors plus the
//! configuration needed to rebuild the model around them.
//!
//! Layout (all integers little-endian u32):
//! magic `MDIFF1` | meta_len | meta JSON | tensor_count |
//! per tensor: name_len | name UTF-8 | rows | cols | rows*cols f64 LE.

use crate::error::{Error, Result};
use crate::nn::{DiffusionModel, NetworkConfig, ParamSet};
use crate::refine::{RefineConfig, Refiner};
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"MDIFF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub network: NetworkConfig,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub refine: Option<RefineConfig>,
}

fn data_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::data(format!("checkpoint {}: {what}", path.display()))
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    w.write_all(&u32::try_from(v).expect("size fits u32").to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn write_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParamSet) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        let meta_json = serde_json::to_vec(meta).expect("meta serializes");
        write_u32(&mut w, meta_json.len())?;
        w.write_all(&meta_json)?;
        write_u32(&mut w, params.len())?;
        for (name, tensor) in params.entries() {
            write_u32(&mut w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(&mut w, tensor.nrows())?;
            write_u32(&mut w, tensor.ncols())?;
            for v in tensor.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParamSet)> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| data_err(path, format!("cannot open: {e}")))?,
    );
    let trunc = |_| data_err(path, "truncated");
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(data_err(path, "not a checkpoint file (bad magic)"));
    }
    let meta_len = read_u32(&mut r).map_err(trunc)?;
    let mut meta_json = vec![0u8; meta_len];
    r.read_exact(&mut meta_json).map_err(trunc)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_json)
        .map_err(|e| data_err(path, format!("bad metadata: {e}")))?;
    let count = read_u32(&mut r).map_err(trunc)?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(trunc)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(trunc)?;
        let name =
            String::from_utf8(name).map_err(|_| data_err(path, "tensor name not UTF-8"))?;
        let rows = read_u32(&mut r).map_err(trunc)?;
        let cols = read_u32(&mut r).map_err(trunc)?;
        let mut values = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf).map_err(trunc)?;
            values.push(f64::from_le_bytes(buf));
        }
        let tensor = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| data_err(path, format!("bad tensor shape: {e}")))?;
        entries.push((name, tensor));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| data_err(path, e))? != 0 {
        return Err(data_err(path, "trailing bytes after last tensor"));
    }
    let params = ParamSet::from_entries(entries).map_err(|e| data_err(path, e))?;
    Ok((meta, params))
}

/// Kind of model stored at `path`, without loading tensors.
pub fn peek_kind(path: &Path) -> Result<String> {
    let (meta, _) = read_checkpoint(path)?;
    Ok(meta.kind)
}

pub fn save_diffusion(path: &Path, model: &DiffusionModel, spec: &ScheduleSpec) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "diffusion".into(),
        network: model.cfg().clone(),
        schedule: *spec,
        refine: None,
    };
    write_checkpoint(path, &meta, model.params())
}

pub fn load_diffusion(path: &Path) -> Result<(DiffusionModel, NoiseSchedule, ScheduleSpec)> {
    let (meta, params) = read_checkpoint(path)?;
    if meta.kind != "diffusion" {
        return Err(data_err(
            path,
            format!("expected a diffusion checkpoint, found kind `{}`", meta.kind),
        ));
    }
    let model = DiffusionModel::from_parts(meta.network, params).map_err(|e| data_err(path, e))?;
    let schedule = meta.schedule.build().map_err(|e| data_err(path, e))?;
    Ok((model, schedule, meta.schedule))
}

pub fn save_refiner(
    path: &Path,
    refiner: &Refiner,
    network: &NetworkConfig,
    spec: &ScheduleSpec,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "refiner".into(),
        network: network.clone(),
        schedule: *spec,
        refine: Some(refiner.cfg().clone()),
    };
    write_checkpoint(path, &meta, refiner.params())
}

pub fn load_refiner(path: &Path) -> Result<(Refiner, NetworkConfig)> {
    let (meta, params) = read_checkpoint(path)?;
    if meta.kind != "refiner" {
        return Err(data_err(
            path,
            format!("expected a refiner checkpoint, found kind `{}`", meta.kind),
        ));
    }
    let rcfg = meta
        .refine
        .ok_or_else(|| data_err(path, "refiner checkpoint missing refine section"))?;
    let net = meta.network;
    let refiner = Refiner::from_parts(
        rcfg,
        net.num_joints,
        net.fut_frames,
        net.d_cond,
        params,
    )
    .map_err(|e| data_err(path, e))?;
    Ok((refiner, net))
}
