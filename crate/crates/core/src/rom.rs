//! Offline construction of the per-window reduced models: POD bases under
//! the singular-value energy criterion, SNS nonlinear-term bases (mass-matrix
//! images of the solution bases), greedy oversampled sampling-index
//! selection, and the precomputed reduced operators, together with their
//! on-disk format.

use ndarray::{s, Array1, Array2};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::linalg::{pseudo_inverse, thin_svd};
use crate::mesh::MassMatrices;
use crate::snapshots::{SnapshotSet, Variable};
use crate::windows::{assemble_group_matrix, IndicatorKind, IndicatorPartition};
use crate::{Error, Result};

/// Default singular-value energy threshold.
pub const DEFAULT_DELTA_SIGMA: f64 = 1e-4;

const BASIS_MAGIC: &[u8; 7] = b"LROMBAS";
const BASIS_VERSION: u32 = 1;

/// Orthonormal POD basis with the full singular spectrum of the snapshot
/// matrix it was truncated from.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// n x n_rom, orthonormal columns, sign-normalized so the entry of
    /// largest magnitude in each column is positive (first such entry on
    /// ties).
    pub vectors: Array2<f64>,
    /// Full spectrum, length min(n, n_cols), descending.
    pub singular_values: Array1<f64>,
    /// The energy threshold used for truncation.
    pub threshold: f64,
}

impl PodBasis {
    pub fn n_rom(&self) -> usize {
        self.vectors.ncols()
    }
}

/// POD of a snapshot matrix: thin SVD truncated at the smallest basis size
/// whose cumulative singular-value sum reaches `1 - delta_sigma` of the
/// total. An all-zero matrix yields a valid zero-dimensional basis.
pub fn pod(matrix: &Array2<f64>, delta_sigma: f64) -> Result<PodBasis> {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return Err(Error::Input("POD of an empty matrix".into()));
    }
    if !(0.0..1.0).contains(&delta_sigma) {
        return Err(Error::Config(format!(
            "delta_sigma {delta_sigma} outside [0, 1)"
        )));
    }
    let svd = thin_svd(matrix);
    let total: f64 = svd.sigma.iter().sum();
    let mut n_rom = 0;
    if total > 0.0 {
        let target = (1.0 - delta_sigma) * total;
        let mut cum = 0.0;
        for (i, &sv) in svd.sigma.iter().enumerate() {
            cum += sv;
            if cum >= target {
                n_rom = i + 1;
                break;
            }
        }
        if n_rom == 0 {
            n_rom = svd.sigma.len();
        }
    }
    let mut vectors = svd.u.slice(s![.., ..n_rom]).to_owned();
    for mut col in vectors.columns_mut() {
        let mut best = 0.0f64;
        let mut best_val = 0.0f64;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                best_val = x;
            }
        }
        if best_val < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    Ok(PodBasis {
        vectors,
        singular_values: svd.sigma,
        threshold: delta_sigma,
    })
}

/// SNS nonlinear-term basis: the mass-matrix image of a solution basis.
/// The product is not re-orthogonalized.
pub fn sns_basis(mass: &MassMatrices, variable: Variable, basis: &Array2<f64>) -> Array2<f64> {
    match variable {
        Variable::Velocity | Variable::Position => mass.apply_kin_matrix(basis),
        Variable::Energy => mass.apply_thermo_matrix(basis),
    }
}

/// Least-squares solve via truncated SVD (small systems inside the greedy
/// selection; rank drops are tolerated by truncation).
fn lsq(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let svd = thin_svd(a);
    let mut x = Array1::zeros(a.ncols());
    if svd.sigma.is_empty() || svd.sigma[0] <= 0.0 {
        return x;
    }
    let tol = 1e-13 * svd.sigma[0];
    for (i, &sv) in svd.sigma.iter().enumerate() {
        if sv <= tol {
            break;
        }
        let coef = svd.u.column(i).dot(b) / sv;
        for j in 0..a.ncols() {
            x[j] += coef * svd.vt[[i, j]];
        }
    }
    x
}

/// Greedy oversampled selection of `m_s` distinct row indices for the gappy
/// reconstruction of the columns of `basis`.
///
/// The first index maximizes |first column|; each following step takes the
/// next basis vector (cycling once every column has been visited), computes
/// its gappy reconstruction from the strictly preceding columns on the rows
/// chosen so far, and appends the row of largest residual magnitude. Ties
/// break to the smallest index. The returned set is sorted ascending.
pub fn select_sampling_indices(basis: &Array2<f64>, m_s: usize) -> Result<Vec<usize>> {
    let (n_rows, n_cols) = basis.dim();
    if n_cols == 0 {
        return Ok(Vec::new());
    }
    if m_s < n_cols {
        return Err(Error::Config(format!(
            "sample count {m_s} below column count {n_cols}"
        )));
    }
    if m_s > n_rows {
        return Err(Error::Config(format!(
            "sample count {m_s} exceeds row count {n_rows}"
        )));
    }
    let mut taken = vec![false; n_rows];
    let mut chosen = Vec::with_capacity(m_s);

    let argmax = |values: &dyn Fn(usize) -> f64, taken: &[bool]| -> usize {
        let mut best_idx = usize::MAX;
        let mut best = -1.0f64;
        for (i, &t) in taken.iter().enumerate() {
            if t {
                continue;
            }
            let v = values(i).abs();
            if v > best {
                best = v;
                best_idx = i;
            }
        }
        best_idx
    };

    let first = argmax(&|i| basis[[i, 0]], &taken);
    taken[first] = true;
    chosen.push(first);

    for step in 1..m_s {
        let c = step % n_cols;
        let mut residual: Array1<f64> = basis.column(c).to_owned();
        if c > 0 {
            // Gappy LSQ reconstruction from the preceding columns on the
            // chosen rows.
            let sub = Array2::from_shape_fn((chosen.len(), c), |(r, j)| basis[[chosen[r], j]]);
            let rhs = Array1::from_iter(chosen.iter().map(|&r| basis[[r, c]]));
            let alpha = lsq(&sub, &rhs);
            for j in 0..c {
                let a = alpha[j];
                residual
                    .iter_mut()
                    .zip(basis.column(j).iter())
                    .for_each(|(r, &b)| *r -= a * b);
            }
        }
        let pick = argmax(&|i| residual[i], &taken);
        taken[pick] = true;
        chosen.push(pick);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Gappy reconstruction operator application: `basis (P^T basis)^+ P^T f`
/// evaluated from precomputed pieces; test and diagnostic helper.
pub fn gappy_reconstruct(
    basis: &Array2<f64>,
    samples: &[usize],
    pinv: &Array2<f64>,
    f: &Array1<f64>,
) -> Array1<f64> {
    let sampled = Array1::from_iter(samples.iter().map(|&i| f[i]));
    let coords = pinv.dot(&sampled);
    basis.dot(&coords)
}

/// Gathers the sampled rows of a basis: `P^T B`.
pub fn gather_rows(basis: &Array2<f64>, samples: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((samples.len(), basis.ncols()), |(r, j)| {
        basis[[samples[r], j]]
    })
}

/// Transfer operators from the previous window's bases into this window's:
/// `T = Phi_new^T Phi_old` per variable.
#[derive(Debug, Clone)]
pub struct WindowTransfer {
    pub t_v: Array2<f64>,
    pub t_e: Array2<f64>,
    pub t_x: Array2<f64>,
}

/// Per-window reduced model: bases, offsets, sampling indices, and the
/// operators precomputed offline.
#[derive(Debug, Clone)]
pub struct WindowRom {
    pub index: usize,
    /// Right endpoint of the window's indicator subinterval.
    pub psi_end: f64,
    pub basis_v: Array2<f64>,
    pub basis_e: Array2<f64>,
    pub basis_x: Array2<f64>,
    pub offset_v: Array1<f64>,
    pub offset_e: Array1<f64>,
    pub offset_x: Array1<f64>,
    /// Sampled rows of the momentum nonlinear term (kinematic dofs).
    pub samples_f1: Vec<usize>,
    /// Sampled rows of the energy nonlinear term (thermodynamic dofs).
    pub samples_ftv: Vec<usize>,
    /// `(P^T M_v Phi_v)^+`, n_v x m_f1.
    pub pinv_f1: Array2<f64>,
    /// `(P^T M_e Phi_e)^+`, n_e x m_ftv.
    pub pinv_ftv: Array2<f64>,
    /// `Phi_x^T Phi_v`.
    pub xv_product: Array2<f64>,
    pub transfer: Option<WindowTransfer>,
}

impl WindowRom {
    pub fn n_v(&self) -> usize {
        self.basis_v.ncols()
    }
    pub fn n_e(&self) -> usize {
        self.basis_e.ncols()
    }
    pub fn n_x(&self) -> usize {
        self.basis_x.ncols()
    }

    /// Full-order degenerate window: identity bases, every row sampled, the
    /// pseudo-inverses equal to the mass-matrix inverses. Reproduces the FOM
    /// through the reduced code path; verification aid.
    pub fn full_order(disc: &crate::mesh::DiscretizationData, config: &crate::fom::FomConfig) -> Result<Self> {
        let solver = crate::fom::Solver::new(disc, config.clone())?;
        let ic = solver.initial_state();
        let n_kin = disc.spaces.n_kin;
        let n_thermo = disc.spaces.n_thermo;
        let mut pinv_f1 = Array2::zeros((n_kin, n_kin));
        for j in 0..n_kin {
            let mut e = Array1::zeros(n_kin);
            e[j] = 1.0;
            pinv_f1.column_mut(j).assign(&disc.mass.solve_kin(&e));
        }
        let mut pinv_ftv = Array2::zeros((n_thermo, n_thermo));
        for j in 0..n_thermo {
            let mut e = Array1::zeros(n_thermo);
            e[j] = 1.0;
            pinv_ftv.column_mut(j).assign(&disc.mass.solve_thermo(&e));
        }
        Ok(WindowRom {
            index: 0,
            psi_end: f64::INFINITY,
            basis_v: Array2::eye(n_kin),
            basis_e: Array2::eye(n_thermo),
            basis_x: Array2::eye(n_kin),
            offset_v: ic.velocity,
            offset_e: ic.energy,
            offset_x: ic.position,
            samples_f1: (0..n_kin).collect(),
            samples_ftv: (0..n_thermo).collect(),
            pinv_f1,
            pinv_ftv,
            xv_product: Array2::eye(n_kin),
            transfer: None,
        })
    }
}

/// Offline ROM construction parameters.
#[derive(Debug, Clone)]
pub struct RomBuildConfig {
    pub delta_sigma: f64,
    /// Oversampling factor for the momentum term: `m_f1 = min(n_kin, lambda * n_v)`.
    pub lambda_f1: usize,
    /// Oversampling factor for the energy term.
    pub lambda_ftv: usize,
}

impl Default for RomBuildConfig {
    fn default() -> Self {
        Self {
            delta_sigma: DEFAULT_DELTA_SIGMA,
            lambda_f1: 2,
            lambda_ftv: 2,
        }
    }
}

/// Basis sizes and sample counts of one constructed window, for reporting.
#[derive(Debug, Clone, Copy)]
pub struct WindowSizes {
    pub index: usize,
    pub n_v: usize,
    pub n_e: usize,
    pub n_x: usize,
    pub m_f1: usize,
    pub m_ftv: usize,
    pub columns: usize,
}

/// Builds one [`WindowRom`] per partition group. Offsets are the first
/// training parameter's initial state (the online phase replaces them with
/// the online parameter's initial state).
pub fn build_window_roms(
    mass: &MassMatrices,
    set: &SnapshotSet,
    partition: &IndicatorPartition,
    config: &RomBuildConfig,
) -> Result<(Vec<WindowRom>, Vec<WindowSizes>)> {
    if config.lambda_f1 < 1 || config.lambda_ftv < 1 {
        return Err(Error::Config("oversampling factors must be >= 1".into()));
    }
    let first = set
        .parameters
        .first()
        .ok_or_else(|| Error::Input("snapshot set has no parameters".into()))?;
    let offset_v = first.offset_v.clone();
    let offset_e = first.offset_e.clone();
    let offset_x = first.offset_x.clone();

    let n_kin = set.n_kin;
    let n_thermo = set.n_thermo;
    let mut windows: Vec<WindowRom> = Vec::with_capacity(partition.groups.len());
    let mut sizes = Vec::with_capacity(partition.groups.len());
    for (j, group) in partition.groups.iter().enumerate() {
        // Boundary guard: the online step that crosses this window's
        // endpoint is still integrated inside this window before the
        // transition fires, so the basis also spans one step beyond the
        // group (two stage states).
        let mut guarded = group.clone();
        for r in guarded.ranges.iter_mut() {
            let last = set.parameters[r.0].meta.len() - 1;
            r.2 = (r.2 + 2).min(last);
        }
        let mat_v = assemble_group_matrix(set, &guarded, Variable::Velocity)?;
        let mat_e = assemble_group_matrix(set, &guarded, Variable::Energy)?;
        let mat_x = assemble_group_matrix(set, &guarded, Variable::Position)?;
        let pod_v = pod(&mat_v, config.delta_sigma)?;
        let pod_e = pod(&mat_e, config.delta_sigma)?;
        let pod_x = pod(&mat_x, config.delta_sigma)?;

        let in_window = |e: Error| -> Error {
            match e {
                Error::RankDeficient(m) => Error::RankDeficient(format!("window {}: {m}", j + 1)),
                other => other,
            }
        };

        let b_f1 = sns_basis(mass, Variable::Velocity, &pod_v.vectors);
        let m_f1 = n_kin.min(config.lambda_f1 * pod_v.n_rom());
        let samples_f1 = select_sampling_indices(&b_f1, m_f1).map_err(in_window)?;
        let pinv_f1 = if pod_v.n_rom() == 0 {
            Array2::zeros((0, 0))
        } else {
            pseudo_inverse(&gather_rows(&b_f1, &samples_f1), 1e-13)
                .map_err(in_window)?
                .0
        };

        let b_ftv = sns_basis(mass, Variable::Energy, &pod_e.vectors);
        let m_ftv = n_thermo.min(config.lambda_ftv * pod_e.n_rom());
        let samples_ftv = select_sampling_indices(&b_ftv, m_ftv).map_err(in_window)?;
        let pinv_ftv = if pod_e.n_rom() == 0 {
            Array2::zeros((0, 0))
        } else {
            pseudo_inverse(&gather_rows(&b_ftv, &samples_ftv), 1e-13)
                .map_err(in_window)?
                .0
        };

        let xv_product = pod_x.vectors.t().dot(&pod_v.vectors);
        let transfer = windows.last().map(|prev: &WindowRom| WindowTransfer {
            t_v: pod_v.vectors.t().dot(&prev.basis_v),
            t_e: pod_e.vectors.t().dot(&prev.basis_e),
            t_x: pod_x.vectors.t().dot(&prev.basis_x),
        });

        sizes.push(WindowSizes {
            index: j,
            n_v: pod_v.n_rom(),
            n_e: pod_e.n_rom(),
            n_x: pod_x.n_rom(),
            m_f1,
            m_ftv,
            columns: group.column_count(),
        });
        windows.push(WindowRom {
            index: j,
            psi_end: group.psi_end,
            basis_v: pod_v.vectors,
            basis_e: pod_e.vectors,
            basis_x: pod_x.vectors,
            offset_v: offset_v.clone(),
            offset_e: offset_e.clone(),
            offset_x: offset_x.clone(),
            samples_f1,
            samples_ftv,
            pinv_f1,
            pinv_ftv,
            xv_product,
            transfer,
        });
    }
    Ok((windows, sizes))
}

/// Metadata of an offline basis directory.
#[derive(Debug, Clone)]
pub struct OfflineMeta {
    pub refinement: usize,
    pub kin_degree: usize,
    pub thermo_degree: usize,
    pub n_kin: usize,
    pub n_thermo: usize,
    pub indicator: IndicatorKind,
    pub delta_sigma: f64,
    pub n_sample: usize,
    pub lambda_f1: usize,
    pub lambda_ftv: usize,
    pub training_mu: Vec<f64>,
    pub psi_start: f64,
    pub n_windows: usize,
}

fn window_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("win_{index:05}.lrb"))
}

/// Saves the offline artifacts: `meta.txt`, `partition.txt` (audit sidecar),
/// and one basis file per window.
pub fn save_windows(
    dir: &Path,
    meta: &OfflineMeta,
    windows: &[WindowRom],
    partition: &IndicatorPartition,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("meta.txt"))?);
    writeln!(f, "format_version = {BASIS_VERSION}")?;
    writeln!(f, "refinement = {}", meta.refinement)?;
    writeln!(f, "kin_degree = {}", meta.kin_degree)?;
    writeln!(f, "thermo_degree = {}", meta.thermo_degree)?;
    writeln!(f, "n_kin = {}", meta.n_kin)?;
    writeln!(f, "n_thermo = {}", meta.n_thermo)?;
    writeln!(f, "indicator = {}", meta.indicator)?;
    writeln!(f, "delta_sigma = {:.17e}", meta.delta_sigma)?;
    writeln!(f, "n_sample = {}", meta.n_sample)?;
    writeln!(f, "lambda_f1 = {}", meta.lambda_f1)?;
    writeln!(f, "lambda_ftv = {}", meta.lambda_ftv)?;
    let mus: Vec<String> = meta.training_mu.iter().map(|m| format!("{m:.17e}")).collect();
    writeln!(f, "training_mu = {}", mus.join(","))?;
    writeln!(f, "psi_start = {:.17e}", meta.psi_start)?;
    writeln!(f, "n_windows = {}", windows.len())?;
    f.flush()?;
    partition.write_sidecar(&dir.join("partition.txt"))?;
    for w in windows {
        save_window_file(&window_path(dir, w.index), w)?;
    }
    Ok(())
}

/// Loads an offline basis directory.
pub fn load_windows(dir: &Path) -> Result<(OfflineMeta, Vec<WindowRom>)> {
    let meta_text = std::fs::read_to_string(dir.join("meta.txt"))
        .map_err(|e| Error::Format(format!("missing window bases in {}: {e}", dir.display())))?;
    let mut kv = std::collections::BTreeMap::new();
    for line in meta_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<String> {
        kv.get(key)
            .cloned()
            .ok_or_else(|| Error::Format(format!("meta.txt missing key '{key}'")))
    };
    let parse_usize =
        |key: &str| -> Result<usize> { get(key)?.parse().map_err(|_| Error::Format(format!("bad {key}"))) };
    let parse_f64 =
        |key: &str| -> Result<f64> { get(key)?.parse().map_err(|_| Error::Format(format!("bad {key}"))) };
    let meta = OfflineMeta {
        refinement: parse_usize("refinement")?,
        kin_degree: parse_usize("kin_degree")?,
        thermo_degree: parse_usize("thermo_degree")?,
        n_kin: parse_usize("n_kin")?,
        n_thermo: parse_usize("n_thermo")?,
        indicator: get("indicator")?.parse()?,
        delta_sigma: parse_f64("delta_sigma")?,
        n_sample: parse_usize("n_sample")?,
        lambda_f1: parse_usize("lambda_f1")?,
        lambda_ftv: parse_usize("lambda_ftv")?,
        training_mu: get("training_mu")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Format("bad training_mu".into())))
            .collect::<Result<Vec<f64>>>()?,
        psi_start: parse_f64("psi_start")?,
        n_windows: parse_usize("n_windows")?,
    };
    let mut windows = Vec::with_capacity(meta.n_windows);
    for j in 0..meta.n_windows {
        windows.push(load_window_file(&window_path(dir, j))?);
    }
    Ok((meta, windows))
}

fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> std::io::Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            w.write_all(&m[[i, j]].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated basis file".into()))?;
    let mut m = Array2::zeros((rows, cols));
    let mut it = buf.chunks_exact(8);
    for j in 0..cols {
        for i in 0..rows {
            m[[i, j]] = f64::from_le_bytes(it.next().unwrap().try_into().unwrap());
        }
    }
    Ok(m)
}

fn write_vector<W: Write>(w: &mut W, v: &Array1<f64>) -> std::io::Result<()> {
    for x in v.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_vector<R: Read>(r: &mut R, len: usize) -> Result<Array1<f64>> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated basis file".into()))?;
    Ok(Array1::from_iter(
        buf.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    ))
}

fn save_window_file(path: &Path, w: &WindowRom) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    out.write_all(BASIS_MAGIC)?;
    out.write_all(&BASIS_VERSION.to_le_bytes())?;
    out.write_all(&(w.index as u64).to_le_bytes())?;
    out.write_all(&w.psi_end.to_le_bytes())?;
    let n_kin = w.basis_v.nrows() as u64;
    let n_thermo = w.basis_e.nrows() as u64;
    let dims = [
        n_kin,
        n_thermo,
        w.n_v() as u64,
        w.n_e() as u64,
        w.n_x() as u64,
        w.samples_f1.len() as u64,
        w.samples_ftv.len() as u64,
    ];
    for d in dims {
        out.write_all(&d.to_le_bytes())?;
    }
    let (pv, pe, px) = match &w.transfer {
        Some(t) => (t.t_v.ncols() as u64, t.t_e.ncols() as u64, t.t_x.ncols() as u64),
        None => (u64::MAX, u64::MAX, u64::MAX),
    };
    for d in [pv, pe, px] {
        out.write_all(&d.to_le_bytes())?;
    }
    write_matrix(&mut out, &w.basis_v)?;
    write_matrix(&mut out, &w.basis_e)?;
    write_matrix(&mut out, &w.basis_x)?;
    write_matrix(&mut out, &w.pinv_f1)?;
    write_matrix(&mut out, &w.pinv_ftv)?;
    write_matrix(&mut out, &w.xv_product)?;
    if let Some(t) = &w.transfer {
        write_matrix(&mut out, &t.t_v)?;
        write_matrix(&mut out, &t.t_e)?;
        write_matrix(&mut out, &t.t_x)?;
    }
    write_vector(&mut out, &w.offset_v)?;
    write_vector(&mut out, &w.offset_e)?;
    write_vector(&mut out, &w.offset_x)?;
    for &i in &w.samples_f1 {
        out.write_all(&(i as u64).to_le_bytes())?;
    }
    for &i in &w.samples_ftv {
        out.write_all(&(i as u64).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn load_window_file(path: &Path) -> Result<WindowRom> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Format(format!("missing window basis file {}: {e}", path.display())))?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated basis file".into()))?;
    if &magic != BASIS_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| Error::Format("truncated basis file".into()))?;
    if u32::from_le_bytes(b4) != BASIS_VERSION {
        return Err(Error::Format("unsupported basis version".into()));
    }
    let mut u = [0u8; 8];
    let mut next_u64 = |r: &mut std::io::BufReader<std::fs::File>| -> Result<u64> {
        r.read_exact(&mut u)
            .map_err(|_| Error::Format("truncated basis file".into()))?;
        Ok(u64::from_le_bytes(u))
    };
    let index = next_u64(&mut r)? as usize;
    let psi_end = f64::from_bits(next_u64(&mut r)?);
    let n_kin = next_u64(&mut r)? as usize;
    let n_thermo = next_u64(&mut r)? as usize;
    let n_v = next_u64(&mut r)? as usize;
    let n_e = next_u64(&mut r)? as usize;
    let n_x = next_u64(&mut r)? as usize;
    let m_f1 = next_u64(&mut r)? as usize;
    let m_ftv = next_u64(&mut r)? as usize;
    let pv = next_u64(&mut r)?;
    let pe = next_u64(&mut r)?;
    let px = next_u64(&mut r)?;
    let basis_v = read_matrix(&mut r, n_kin, n_v)?;
    let basis_e = read_matrix(&mut r, n_thermo, n_e)?;
    let basis_x = read_matrix(&mut r, n_kin, n_x)?;
    let pinv_f1 = read_matrix(&mut r, if n_v == 0 { 0 } else { n_v }, if n_v == 0 { 0 } else { m_f1 })?;
    let pinv_ftv = read_matrix(&mut r, if n_e == 0 { 0 } else { n_e }, if n_e == 0 { 0 } else { m_ftv })?;
    let xv_product = read_matrix(&mut r, n_x, n_v)?;
    let transfer = if pv == u64::MAX {
        None
    } else {
        Some(WindowTransfer {
            t_v: read_matrix(&mut r, n_v, pv as usize)?,
            t_e: read_matrix(&mut r, n_e, pe as usize)?,
            t_x: read_matrix(&mut r, n_x, px as usize)?,
        })
    };
    let offset_v = read_vector(&mut r, n_kin)?;
    let offset_e = read_vector(&mut r, n_thermo)?;
    let offset_x = read_vector(&mut r, n_kin)?;
    let mut samples_f1 = Vec::with_capacity(m_f1);
    for _ in 0..m_f1 {
        samples_f1.push(next_u64(&mut r)? as usize);
    }
    let mut samples_ftv = Vec::with_capacity(m_ftv);
    for _ in 0..m_ftv {
        samples_ftv.push(next_u64(&mut r)? as usize);
    }
    Ok(WindowRom {
        index,
        psi_end,
        basis_v,
        basis_e,
        basis_x,
        offset_v,
        offset_e,
        offset_x,
        samples_f1,
        samples_ftv,
        pinv_f1,
        pinv_ftv,
        xv_product,
        transfer,
    })
}
