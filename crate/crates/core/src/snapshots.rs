//! Collection, offsetting, persistence, and merging of stage-state
//! snapshots from FOM runs over the training-parameter set.
//!
//! Snapshots are stored per training parameter as offset-subtracted columns
//! (the offset is that parameter's initial state), ordered by recording
//! time: the initial state first, then midpoint and endpoint of every
//! accepted step. The on-disk `.lsnap` format round-trips bit-exactly.

use ndarray::{Array1, Array2};
use std::io::{Read, Write};
use std::path::Path;

use crate::fom::State;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LROMSNAP";
const VERSION: u32 = 1;

/// Which stage of the integrator produced a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotStage {
    /// The t = 0 state (one per parameter; its column is zero).
    Initial,
    /// RK2-average midpoint stage of an accepted step.
    Midpoint,
    /// Endpoint of an accepted step.
    Endpoint,
}

impl SnapshotStage {
    fn to_byte(self) -> u8 {
        match self {
            SnapshotStage::Initial => 0,
            SnapshotStage::Midpoint => 1,
            SnapshotStage::Endpoint => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(SnapshotStage::Initial),
            1 => Ok(SnapshotStage::Midpoint),
            2 => Ok(SnapshotStage::Endpoint),
            _ => Err(Error::Format(format!("unknown snapshot stage tag {b}"))),
        }
    }
}

/// Metadata of one recorded snapshot column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotMeta {
    /// Step index the column belongs to (0 for the initial state).
    pub time_index: u64,
    pub stage: SnapshotStage,
    pub time: f64,
}

/// All snapshot columns of one training parameter.
#[derive(Debug, Clone)]
pub struct ParameterSnapshots {
    pub mu: f64,
    pub offset_v: Array1<f64>,
    pub offset_e: Array1<f64>,
    pub offset_x: Array1<f64>,
    pub meta: Vec<SnapshotMeta>,
    /// Offset-subtracted columns, one Vec per variable, column index aligned
    /// with `meta`.
    pub cols_v: Vec<Array1<f64>>,
    pub cols_e: Vec<Array1<f64>>,
    pub cols_x: Vec<Array1<f64>>,
}

/// Snapshot collection over the training-parameter set.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub n_kin: usize,
    pub n_thermo: usize,
    pub parameters: Vec<ParameterSnapshots>,
}

impl SnapshotSet {
    pub fn new(n_kin: usize, n_thermo: usize) -> Self {
        Self {
            n_kin,
            n_thermo,
            parameters: Vec::new(),
        }
    }

    /// Registers a training parameter; snapshots are recorded against the
    /// returned index.
    pub fn add_parameter(&mut self, mu: f64) -> usize {
        self.parameters.push(ParameterSnapshots {
            mu,
            offset_v: Array1::zeros(self.n_kin),
            offset_e: Array1::zeros(self.n_thermo),
            offset_x: Array1::zeros(self.n_kin),
            meta: Vec::new(),
            cols_v: Vec::new(),
            cols_e: Vec::new(),
            cols_x: Vec::new(),
        });
        self.parameters.len() - 1
    }

    /// Records a stage state. The first call per parameter must be the
    /// initial state (it becomes the offset); subsequent calls must arrive
    /// in run order: midpoint then endpoint of step 1, step 2, and so on.
    pub fn record(
        &mut self,
        parameter: usize,
        time_index: usize,
        stage: SnapshotStage,
        state: &State,
    ) -> Result<()> {
        if state.velocity.len() != self.n_kin || state.energy.len() != self.n_thermo {
            return Err(Error::Input("state size does not match snapshot set".into()));
        }
        let param = self
            .parameters
            .get_mut(parameter)
            .ok_or_else(|| Error::Internal(format!("unknown parameter index {parameter}")))?;

        let expected: (usize, SnapshotStage) = match param.meta.last() {
            None => (0, SnapshotStage::Initial),
            Some(last) => match last.stage {
                SnapshotStage::Initial | SnapshotStage::Endpoint => {
                    (last.time_index as usize + 1, SnapshotStage::Midpoint)
                }
                SnapshotStage::Midpoint => (last.time_index as usize, SnapshotStage::Endpoint),
            },
        };
        if (time_index, stage) != expected {
            return Err(Error::Internal(format!(
                "out-of-order snapshot: got (step {time_index}, {stage:?}), expected (step {}, {:?})",
                expected.0, expected.1
            )));
        }

        if stage == SnapshotStage::Initial {
            param.offset_v = state.velocity.clone();
            param.offset_e = state.energy.clone();
            param.offset_x = state.position.clone();
        }
        param.meta.push(SnapshotMeta {
            time_index: time_index as u64,
            stage,
            time: state.time,
        });
        param.cols_v.push(&state.velocity - &param.offset_v);
        param.cols_e.push(&state.energy - &param.offset_e);
        param.cols_x.push(&state.position - &param.offset_x);
        Ok(())
    }

    /// Total column count over all parameters.
    pub fn total_columns(&self) -> usize {
        self.parameters.iter().map(|p| p.meta.len()).sum()
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters.len()
    }

    /// Reconstructs the full state of one snapshot (offset plus column).
    pub fn state_of(&self, parameter: usize, column: usize) -> State {
        let p = &self.parameters[parameter];
        State {
            velocity: &p.offset_v + &p.cols_v[column],
            energy: &p.offset_e + &p.cols_e[column],
            position: &p.offset_x + &p.cols_x[column],
            time: p.meta[column].time,
        }
    }

    /// Union of snapshot sets across parameters, preserving per-parameter
    /// offsets. Discretization sizes must agree.
    pub fn merge(sets: Vec<SnapshotSet>) -> Result<SnapshotSet> {
        let mut iter = sets.into_iter();
        let mut merged = iter
            .next()
            .ok_or_else(|| Error::Input("merge of zero snapshot sets".into()))?;
        for set in iter {
            if set.n_kin != merged.n_kin || set.n_thermo != merged.n_thermo {
                return Err(Error::Input(format!(
                    "incompatible discretizations in merge: ({}, {}) vs ({}, {})",
                    merged.n_kin, merged.n_thermo, set.n_kin, set.n_thermo
                )));
            }
            merged.parameters.extend(set.parameters);
        }
        Ok(merged)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_u64(&mut w, self.n_kin as u64)?;
        write_u64(&mut w, self.n_thermo as u64)?;
        write_u64(&mut w, self.parameters.len() as u64)?;
        for p in &self.parameters {
            write_f64(&mut w, p.mu)?;
            write_u64(&mut w, p.meta.len() as u64)?;
        }
        for p in &self.parameters {
            for m in &p.meta {
                write_u64(&mut w, m.time_index)?;
                w.write_all(&[m.stage.to_byte()])?;
                write_f64(&mut w, m.time)?;
            }
        }
        for p in &self.parameters {
            write_vec(&mut w, &p.offset_v)?;
            write_vec(&mut w, &p.offset_e)?;
            write_vec(&mut w, &p.offset_x)?;
        }
        for p in &self.parameters {
            for col in &p.cols_v {
                write_vec(&mut w, col)?;
            }
            for col in &p.cols_e {
                write_vec(&mut w, col)?;
            }
            for col in &p.cols_x {
                write_vec(&mut w, col)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SnapshotSet> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic (not a snapshot file)",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported snapshot version {version}",
                path.display()
            )));
        }
        let n_kin = read_u64(&mut r)? as usize;
        let n_thermo = read_u64(&mut r)? as usize;
        let n_mu = read_u64(&mut r)? as usize;
        let mut heads = Vec::with_capacity(n_mu);
        for _ in 0..n_mu {
            let mu = read_f64(&mut r)?;
            let n_cols = read_u64(&mut r)? as usize;
            heads.push((mu, n_cols));
        }
        let mut metas = Vec::with_capacity(n_mu);
        for &(_, n_cols) in &heads {
            let mut meta = Vec::with_capacity(n_cols);
            for _ in 0..n_cols {
                let time_index = read_u64(&mut r)?;
                let mut b = [0u8; 1];
                r.read_exact(&mut b)?;
                let stage = SnapshotStage::from_byte(b[0])?;
                let time = read_f64(&mut r)?;
                meta.push(SnapshotMeta {
                    time_index,
                    stage,
                    time,
                });
            }
            metas.push(meta);
        }
        let mut offsets = Vec::with_capacity(n_mu);
        for _ in 0..n_mu {
            let v = read_vec(&mut r, n_kin)?;
            let e = read_vec(&mut r, n_thermo)?;
            let x = read_vec(&mut r, n_kin)?;
            offsets.push((v, e, x));
        }
        let mut parameters = Vec::with_capacity(n_mu);
        for (i, ((mu, n_cols), meta)) in heads.into_iter().zip(metas).enumerate() {
            let mut cols_v = Vec::with_capacity(n_cols);
            for _ in 0..n_cols {
                cols_v.push(read_vec(&mut r, n_kin)?);
            }
            let mut cols_e = Vec::with_capacity(n_cols);
            for _ in 0..n_cols {
                cols_e.push(read_vec(&mut r, n_thermo)?);
            }
            let mut cols_x = Vec::with_capacity(n_cols);
            for _ in 0..n_cols {
                cols_x.push(read_vec(&mut r, n_kin)?);
            }
            let (offset_v, offset_e, offset_x) = offsets[i].clone();
            parameters.push(ParameterSnapshots {
                mu,
                offset_v,
                offset_e,
                offset_x,
                meta,
                cols_v,
                cols_e,
                cols_x,
            });
        }
        Ok(SnapshotSet {
            n_kin,
            n_thermo,
            parameters,
        })
    }
}

/// Writes one state as a single-column snapshot file with zero offsets;
/// used for final-solution files consumed by the error evaluation phase.
pub fn save_state(path: &Path, state: &State, mu: f64) -> Result<()> {
    let mut set = SnapshotSet::new(state.velocity.len(), state.energy.len());
    let idx = set.add_parameter(mu);
    // Zero offsets: store the raw state as the initial column.
    let zero = State {
        velocity: Array1::zeros(state.velocity.len()),
        energy: Array1::zeros(state.energy.len()),
        position: Array1::zeros(state.position.len()),
        time: 0.0,
    };
    set.record(idx, 0, SnapshotStage::Initial, &zero)?;
    let p = &mut set.parameters[idx];
    p.meta[0].time = state.time;
    p.cols_v[0] = state.velocity.clone();
    p.cols_e[0] = state.energy.clone();
    p.cols_x[0] = state.position.clone();
    set.save(path)
}

/// Reads a state written by [`save_state`] (or the first snapshot of any
/// single-parameter file).
pub fn load_state(path: &Path) -> Result<(State, f64)> {
    let set = SnapshotSet::load(path)?;
    let p = set
        .parameters
        .first()
        .ok_or_else(|| Error::Format(format!("{}: no parameters", path.display())))?;
    if p.meta.is_empty() {
        return Err(Error::Format(format!("{}: no columns", path.display())));
    }
    Ok((set.state_of(0, 0), p.mu))
}

/// Assembles the (dense) snapshot matrix of one variable over all
/// parameters, columns ordered by (parameter, recording order).
pub fn full_matrix(set: &SnapshotSet, variable: Variable) -> Array2<f64> {
    let rows = match variable {
        Variable::Velocity | Variable::Position => set.n_kin,
        Variable::Energy => set.n_thermo,
    };
    let mut cols = Vec::new();
    for p in &set.parameters {
        let list = match variable {
            Variable::Velocity => &p.cols_v,
            Variable::Energy => &p.cols_e,
            Variable::Position => &p.cols_x,
        };
        cols.extend(list.iter());
    }
    let mut m = Array2::zeros((rows, cols.len()));
    for (j, col) in cols.iter().enumerate() {
        m.column_mut(j).assign(col);
    }
    m
}

/// The three solution variables carried by a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Velocity,
    Energy,
    Position,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_vec<W: Write>(w: &mut W, v: &Array1<f64>) -> std::io::Result<()> {
    for x in v.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn read_vec<R: Read>(r: &mut R, len: usize) -> Result<Array1<f64>> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(Array1::from_iter(
        buf.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    ))
}

fn truncated(_: std::io::Error) -> Error {
    Error::Format("truncated snapshot file".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy_state(n_kin: usize, n_thermo: usize, seed: f64, t: f64) -> State {
        State {
            velocity: Array1::from_shape_fn(n_kin, |i| seed + i as f64),
            energy: Array1::from_shape_fn(n_thermo, |i| seed * 2.0 - i as f64),
            position: Array1::from_shape_fn(n_kin, |i| (i as f64 * seed).sin()),
            time: t,
        }
    }

    fn toy_set(mu: f64, steps: usize) -> SnapshotSet {
        let mut set = SnapshotSet::new(6, 4);
        let k = set.add_parameter(mu);
        set.record(k, 0, SnapshotStage::Initial, &toy_state(6, 4, mu, 0.0))
            .unwrap();
        for n in 1..=steps {
            let t = n as f64 * 0.1;
            set.record(k, n, SnapshotStage::Midpoint, &toy_state(6, 4, mu + n as f64, t - 0.05))
                .unwrap();
            set.record(k, n, SnapshotStage::Endpoint, &toy_state(6, 4, mu - n as f64, t))
                .unwrap();
        }
        set
    }

    #[test]
    fn initial_column_is_zero() {
        let set = toy_set(0.3, 2);
        assert!(set.parameters[0].cols_v[0].iter().all(|&x| x == 0.0));
        assert!(set.parameters[0].cols_e[0].iter().all(|&x| x == 0.0));
        assert_eq!(set.total_columns(), 5);
    }

    #[test]
    fn out_of_order_recording_rejected() {
        let mut set = SnapshotSet::new(6, 4);
        let k = set.add_parameter(0.3);
        let s = toy_state(6, 4, 1.0, 0.0);
        set.record(k, 0, SnapshotStage::Initial, &s).unwrap();
        assert!(set.record(k, 1, SnapshotStage::Endpoint, &s).is_err());
        assert!(set.record(k, 2, SnapshotStage::Midpoint, &s).is_err());
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.lsnap");
        let set = toy_set(1.0 / 3.0, 3);
        set.save(&path).unwrap();
        let loaded = SnapshotSet::load(&path).unwrap();
        let path2 = dir.path().join("b.lsnap");
        loaded.save(&path2).unwrap();
        let b1 = std::fs::read(&path).unwrap();
        let b2 = std::fs::read(&path2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.lsnap");
        std::fs::write(&path, b"NOTASNAPxxxxxxx").unwrap();
        assert!(matches!(SnapshotSet::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.lsnap");
        toy_set(0.5, 2).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 11]).unwrap();
        assert!(matches!(SnapshotSet::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn merge_matches_joint_collection() {
        let a = toy_set(1.0 / 3.0, 2);
        let b = toy_set(0.3, 3);
        let merged = SnapshotSet::merge(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(merged.n_parameters(), 2);
        assert_eq!(merged.total_columns(), a.total_columns() + b.total_columns());
        // Columns grouped contiguously by parameter, identical content.
        for (i, src) in [a, b].iter().enumerate() {
            for (j, col) in src.parameters[0].cols_v.iter().enumerate() {
                assert_eq!(&merged.parameters[i].cols_v[j], col);
            }
        }
    }

    #[test]
    fn merge_single_is_identity() {
        let a = toy_set(0.25, 2);
        let merged = SnapshotSet::merge(vec![a.clone()]).unwrap();
        assert_eq!(merged.total_columns(), a.total_columns());
        assert_eq!(merged.parameters[0].mu, a.parameters[0].mu);
    }

    #[test]
    fn merge_rejects_incompatible_sizes() {
        let a = toy_set(0.25, 1);
        let b = SnapshotSet::new(8, 4);
        assert!(SnapshotSet::merge(vec![a, b]).is_err());
    }

    #[test]
    fn state_file_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("final.lsnap");
        let state = toy_state(10, 6, 0.7, 1.5);
        save_state(&path, &state, 0.33).unwrap();
        let (loaded, mu) = load_state(&path).unwrap();
        assert_eq!(mu, 0.33);
        assert_eq!(loaded.time, 1.5);
        assert_eq!(loaded.velocity, state.velocity);
        assert_eq!(loaded.energy, state.energy);
        assert_eq!(loaded.position, state.position);
    }
}
