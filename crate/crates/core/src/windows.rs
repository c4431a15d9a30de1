//! Decomposition of the solution manifold by an indicator: the indicator
//! abstraction, the two concrete indicators (physical time and interface
//! penetration distance), and the adaptive partition of the indicator range
//! into snapshot groups.
//!
//! The partition walks each training trajectory at most `n_sample + 1`
//! snapshot indices at a time, closes a group at the smallest candidate
//! indicator value over the still-active parameters, and retires a
//! parameter once its final snapshot is grouped. Consecutive groups of the
//! same parameter share exactly their boundary snapshot, which seeds both
//! adjacent windows' bases.

use ndarray::{Array1, Array2};
use std::path::Path;

use crate::fom::State;
use crate::snapshots::{SnapshotSet, Variable};
use crate::{Error, Result};

/// Indicator kind: maps (state, t, mu) to a scalar that is non-decreasing
/// along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorKind {
    /// Physical time; the induced partition is parameter-independent.
    Time,
    /// Largest downward displacement of material points initially on the
    /// interface y = 0; parameter-dependent penetration speed makes the
    /// induced temporal partition parameter-dependent.
    ///
    /// Note the sign: displacement is measured downward, `max(-x2)` over
    /// interface dofs, clamped below at zero.
    PenetrationDistance,
}

impl std::fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IndicatorKind::Time => write!(f, "time"),
            IndicatorKind::PenetrationDistance => write!(f, "distance"),
        }
    }
}

impl std::str::FromStr for IndicatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(IndicatorKind::Time),
            "distance" => Ok(IndicatorKind::PenetrationDistance),
            other => Err(Error::Config(format!(
                "unknown indicator '{other}' (expected 'time' or 'distance')"
            ))),
        }
    }
}

/// Concrete indicator: the kind plus the kinematic dofs it reads.
#[derive(Debug, Clone)]
pub struct Indicator {
    pub kind: IndicatorKind,
    /// Kinematic dof indices holding the vertical position of nodes with
    /// initial y = 0; required non-empty for the distance indicator.
    pub interface_dofs: Vec<usize>,
}

impl Indicator {
    pub fn time() -> Self {
        Self {
            kind: IndicatorKind::Time,
            interface_dofs: Vec::new(),
        }
    }

    pub fn penetration_distance(spaces: &crate::mesh::FeSpaces) -> Self {
        Self {
            kind: IndicatorKind::PenetrationDistance,
            interface_dofs: spaces.interface_dofs(),
        }
    }

    pub fn of_kind(kind: IndicatorKind, spaces: &crate::mesh::FeSpaces) -> Self {
        match kind {
            IndicatorKind::Time => Self::time(),
            IndicatorKind::PenetrationDistance => Self::penetration_distance(spaces),
        }
    }

    /// Evaluates the indicator on a full state. Both kinds are zero on the
    /// initial state.
    pub fn value(&self, state: &State, t: f64, _mu: f64) -> f64 {
        match self.kind {
            IndicatorKind::Time => t,
            IndicatorKind::PenetrationDistance => self
                .interface_dofs
                .iter()
                .map(|&d| -state.position[d])
                .fold(0.0f64, f64::max),
        }
    }

    /// Distance indicator from interface position values alone (the online
    /// phase lifts only those rows).
    pub fn value_from_interface(&self, interface_positions: &Array1<f64>, t: f64) -> f64 {
        match self.kind {
            IndicatorKind::Time => t,
            IndicatorKind::PenetrationDistance => interface_positions
                .iter()
                .map(|&x2| -x2)
                .fold(0.0f64, f64::max),
        }
    }
}

/// One snapshot group: the indicator subinterval endpoint and the snapshot
/// indices per parameter that fall in it (closed index ranges; consecutive
/// groups share their boundary index).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotGroup {
    /// Right endpoint of this group's indicator subinterval.
    pub psi_end: f64,
    /// Per parameter k contributing to this group: (k, first, last) with
    /// snapshot indices first..=last.
    pub ranges: Vec<(usize, usize, usize)>,
}

impl SnapshotGroup {
    pub fn column_count(&self) -> usize {
        self.ranges.iter().map(|&(_, a, b)| b - a + 1).sum()
    }

    /// Pairs (snapshot index, parameter index) in deterministic order.
    pub fn index_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.column_count());
        for &(k, a, b) in &self.ranges {
            for n in a..=b {
                out.push((n, k));
            }
        }
        out
    }
}

/// Adaptive partition of the indicator range into snapshot groups.
#[derive(Debug, Clone)]
pub struct IndicatorPartition {
    pub kind: IndicatorKind,
    pub psi_start: f64,
    pub groups: Vec<SnapshotGroup>,
    /// Largest indicator value over all snapshots.
    pub psi_max: f64,
    /// Non-fatal observations (e.g. the final endpoint touching psi_max).
    pub warnings: Vec<String>,
}

impl IndicatorPartition {
    pub fn n_windows(&self) -> usize {
        self.groups.len()
    }

    pub fn endpoints(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.psi_end).collect()
    }

    /// Writes the audit sidecar: endpoint list plus group index ranges.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "indicator = {}", self.kind)?;
        writeln!(f, "psi_start = {:.17e}", self.psi_start)?;
        writeln!(f, "psi_max = {:.17e}", self.psi_max)?;
        writeln!(f, "windows = {}", self.groups.len())?;
        for (j, g) in self.groups.iter().enumerate() {
            write!(f, "window {} psi_end {:.17e} ranges", j + 1, g.psi_end)?;
            for &(k, a, b) in &g.ranges {
                write!(f, " k={k}:[{a},{b}]")?;
            }
            writeln!(f)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Indicator series per parameter, evaluated on every recorded snapshot in
/// recording order. The distance indicator is turned into a running maximum
/// to preserve monotonicity against transient dips; a decreasing time
/// series is a data error.
pub fn indicator_series(set: &SnapshotSet, indicator: &Indicator) -> Result<Vec<Vec<f64>>> {
    let mut series = Vec::with_capacity(set.n_parameters());
    for (k, p) in set.parameters.iter().enumerate() {
        let mut vals = Vec::with_capacity(p.meta.len());
        for (n, meta) in p.meta.iter().enumerate() {
            let v = match indicator.kind {
                IndicatorKind::Time => meta.time,
                IndicatorKind::PenetrationDistance => {
                    if indicator.interface_dofs.is_empty() {
                        return Err(Error::Config(
                            "distance indicator requires interface dofs".into(),
                        ));
                    }
                    indicator
                        .interface_dofs
                        .iter()
                        .map(|&d| -(p.offset_x[d] + p.cols_x[n][d]))
                        .fold(0.0f64, f64::max)
                }
            };
            vals.push(v);
        }
        match indicator.kind {
            IndicatorKind::Time => {
                for n in 1..vals.len() {
                    if vals[n] < vals[n - 1] {
                        return Err(Error::IndicatorDecreasing(format!(
                            "parameter {k}, snapshot {n}: {} < {}",
                            vals[n],
                            vals[n - 1]
                        )));
                    }
                }
            }
            IndicatorKind::PenetrationDistance => {
                let mut running = f64::NEG_INFINITY;
                for v in vals.iter_mut() {
                    running = running.max(*v);
                    *v = running;
                }
            }
        }
        series.push(vals);
    }
    Ok(series)
}

/// Adaptive partition of the indicator range over a snapshot set.
pub fn partition(
    set: &SnapshotSet,
    n_sample: usize,
    indicator: &Indicator,
) -> Result<IndicatorPartition> {
    let series = indicator_series(set, indicator)?;
    partition_series(&series, n_sample, indicator.kind)
}

/// Partition on raw per-parameter indicator series (snapshot index 0 is the
/// initial state). Series must be non-decreasing.
pub fn partition_series(
    series: &[Vec<f64>],
    n_sample: usize,
    kind: IndicatorKind,
) -> Result<IndicatorPartition> {
    if n_sample == 0 {
        return Err(Error::Config("n_sample must be >= 1".into()));
    }
    if series.is_empty() || series.iter().any(|s| s.len() < 2) {
        return Err(Error::Input(
            "partition needs at least one parameter with two snapshots".into(),
        ));
    }
    for (k, s) in series.iter().enumerate() {
        for n in 1..s.len() {
            if s[n] < s[n - 1] {
                return Err(Error::IndicatorDecreasing(format!(
                    "parameter {k}, snapshot {n}: {} < {}",
                    s[n],
                    s[n - 1]
                )));
            }
        }
    }

    let n_mu = series.len();
    let last: Vec<usize> = series.iter().map(|s| s.len() - 1).collect();
    let psi_start = series.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
    let psi_max = series
        .iter()
        .map(|s| *s.last().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);

    let mut active: Vec<usize> = (0..n_mu).collect();
    let mut cursor = vec![0usize; n_mu];
    let mut prev_psi = psi_start;
    let mut groups = Vec::new();
    let mut warnings = Vec::new();

    while !active.is_empty() {
        // Candidate endpoint per active parameter: n_sample + 1 indices
        // ahead, capped at the trajectory end. If a flat stretch would stall
        // the endpoint, extend past it.
        let mut psi_end = f64::INFINITY;
        for &k in &active {
            let mut cand = (cursor[k] + n_sample + 1).min(last[k]);
            while series[k][cand] <= prev_psi && cand < last[k] {
                cand += 1;
            }
            psi_end = psi_end.min(series[k][cand]);
        }
        if psi_end <= prev_psi && !groups.is_empty() {
            // Every remaining trajectory ends on the plateau; absorb the
            // tails into the previous group.
            let group: &mut SnapshotGroup = groups.last_mut().unwrap();
            for &k in &active {
                let start = cursor[k];
                if last[k] > start {
                    if let Some(r) = group.ranges.iter_mut().find(|r| r.0 == k) {
                        r.2 = last[k];
                    } else {
                        group.ranges.push((k, start, last[k]));
                    }
                }
            }
            warnings.push("trailing indicator plateau absorbed into final window".into());
            break;
        }

        let mut ranges = Vec::new();
        let mut retired = Vec::new();
        for &k in &active {
            // Latest index with series value <= psi_end.
            let mut idx = cursor[k];
            while idx < last[k] && series[k][idx + 1] <= psi_end {
                idx += 1;
            }
            ranges.push((k, cursor[k], idx));
            if idx == last[k] {
                retired.push(k);
            }
            cursor[k] = idx;
        }
        groups.push(SnapshotGroup { psi_end, ranges });
        active.retain(|k| !retired.contains(k));
        prev_psi = psi_end;
    }

    if let Some(last_group) = groups.last() {
        if last_group.psi_end >= psi_max {
            warnings.push(format!(
                "final endpoint {:.6e} reaches the indicator range maximum {:.6e}",
                last_group.psi_end, psi_max
            ));
        }
    }
    Ok(IndicatorPartition {
        kind,
        psi_start,
        groups,
        psi_max,
        warnings,
    })
}

/// Offset-subtracted snapshot matrix of one variable over a group, columns
/// ordered by (parameter, snapshot index).
pub fn assemble_group_matrix(
    set: &SnapshotSet,
    group: &SnapshotGroup,
    variable: Variable,
) -> Result<Array2<f64>> {
    if group.ranges.is_empty() {
        return Err(Error::Input("empty snapshot group".into()));
    }
    let rows = match variable {
        Variable::Velocity | Variable::Position => set.n_kin,
        Variable::Energy => set.n_thermo,
    };
    let mut ranges = group.ranges.clone();
    ranges.sort_by_key(|&(k, _, _)| k);
    let n_cols: usize = ranges.iter().map(|&(_, a, b)| b - a + 1).sum();
    let mut m = Array2::zeros((rows, n_cols));
    let mut j = 0;
    for &(k, a, b) in &ranges {
        let p = &set.parameters[k];
        let cols = match variable {
            Variable::Velocity => &p.cols_v,
            Variable::Energy => &p.cols_e,
            Variable::Position => &p.cols_x,
        };
        for col in cols.iter().take(b + 1).skip(a) {
            m.column_mut(j).assign(col);
            j += 1;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_indicator_reads_time() {
        let ind = Indicator::time();
        let state = State {
            velocity: Array1::zeros(2),
            energy: Array1::zeros(1),
            position: Array1::zeros(2),
            time: 0.7,
        };
        assert_eq!(ind.value(&state, 0.7, 0.33), 0.7);
    }

    #[test]
    fn distance_indicator_examples() {
        let ind = Indicator {
            kind: IndicatorKind::PenetrationDistance,
            interface_dofs: vec![1, 3],
        };
        // Interface at y = 0: zero penetration.
        let mut state = State {
            velocity: Array1::zeros(4),
            energy: Array1::zeros(1),
            position: Array1::zeros(4),
            time: 0.0,
        };
        assert_eq!(ind.value(&state, 0.0, 0.3), 0.0);
        // Rigid downward shift by 0.1.
        state.position[1] = -0.1;
        state.position[3] = -0.1;
        assert!((ind.value(&state, 1.0, 0.3) - 0.1).abs() < 1e-15);
        // Upward motion clamps at zero.
        state.position[1] = 0.2;
        state.position[3] = 0.3;
        assert_eq!(ind.value(&state, 1.0, 0.3), 0.0);
    }

    #[test]
    fn single_parameter_hand_trace() {
        // N_t = 5 snapshots past the initial one, N_sample = 2, strictly
        // increasing indicator: two groups, 0..=3 and 3..=5.
        let series = vec![vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]];
        let p = partition_series(&series, 2, IndicatorKind::Time).unwrap();
        assert_eq!(p.n_windows(), 2);
        assert_eq!(p.groups[0].ranges, vec![(0, 0, 3)]);
        assert_eq!(p.groups[1].ranges, vec![(0, 3, 5)]);
        assert_eq!(p.groups[0].psi_end, 3.0);
        assert_eq!(p.groups[1].psi_end, 5.0);
    }

    #[test]
    fn n_sample_at_least_trajectory_gives_one_group() {
        let series = vec![vec![0.0, 0.5, 1.0, 1.5]];
        let p = partition_series(&series, 10, IndicatorKind::Time).unwrap();
        assert_eq!(p.n_windows(), 1);
        assert_eq!(p.groups[0].ranges, vec![(0, 0, 3)]);
    }

    #[test]
    fn two_speed_parameters_trace() {
        // Parameter 1 advances the indicator at unit rate, parameter 2 at
        // twice the rate; both have 20 steps past the start.
        let s1: Vec<f64> = (0..=20).map(|n| n as f64).collect();
        let s2: Vec<f64> = (0..=20).map(|n| 2.0 * n as f64).collect();
        let p = partition_series(&[s1, s2], 4, IndicatorKind::Time).unwrap();
        assert_eq!(p.n_windows(), 6);
        // Hand trace with candidate index prev + n_sample + 1 = prev + 5:
        // endpoints min over parameters of psi at the candidates.
        let ends: Vec<f64> = p.endpoints();
        assert_eq!(ends, vec![5.0, 10.0, 15.0, 20.0, 30.0, 40.0]);
        assert_eq!(p.groups[0].ranges, vec![(0, 0, 5), (1, 0, 2)]);
        assert_eq!(p.groups[1].ranges, vec![(0, 5, 10), (1, 2, 5)]);
        assert_eq!(p.groups[2].ranges, vec![(0, 10, 15), (1, 5, 7)]);
        assert_eq!(p.groups[3].ranges, vec![(0, 15, 20), (1, 7, 10)]);
        assert_eq!(p.groups[4].ranges, vec![(1, 10, 15)]);
        assert_eq!(p.groups[5].ranges, vec![(1, 15, 20)]);
        // Faster parameter contributes roughly half as many indices per
        // shared group.
        assert!(p.groups[0].ranges[1].2 - p.groups[0].ranges[1].1 <= 3);
        // Final endpoint touches the range maximum: warned, not fatal.
        assert!(p.warnings.iter().any(|w| w.contains("maximum")));
    }

    #[test]
    fn decreasing_series_is_reported_with_position() {
        let series = vec![vec![0.0, 1.0, 0.5, 2.0]];
        let err = partition_series(&series, 2, IndicatorKind::Time).unwrap_err();
        match err {
            Error::IndicatorDecreasing(msg) => {
                assert!(msg.contains("snapshot 2"), "{msg}");
            }
            other => panic!("wrong error {other}"),
        }
    }

    #[test]
    fn fixed_blocks_for_single_parameter() {
        // With one parameter the partition reduces to blocks of
        // n_sample + 1 index advances.
        let series = vec![(0..=100).map(|n| 0.01 * n as f64).collect::<Vec<_>>()];
        let n_sample = 7;
        let p = partition_series(&series, n_sample, IndicatorKind::Time).unwrap();
        for (j, g) in p.groups.iter().enumerate() {
            let (_, a, b) = g.ranges[0];
            assert_eq!(a, j * (n_sample + 1));
            assert_eq!(b, ((j + 1) * (n_sample + 1)).min(100));
        }
        // Endpoints strictly increase.
        let ends = p.endpoints();
        for j in 1..ends.len() {
            assert!(ends[j] > ends[j - 1]);
        }
    }

    #[test]
    fn group_matrix_edge_cases() {
        let mut set = crate::snapshots::SnapshotSet::new(4, 2);
        let k = set.add_parameter(0.5);
        for (n, stage) in [
            (0usize, crate::snapshots::SnapshotStage::Initial),
            (1, crate::snapshots::SnapshotStage::Midpoint),
            (1, crate::snapshots::SnapshotStage::Endpoint),
        ] {
            let state = State {
                velocity: Array1::from_shape_fn(4, |i| (n * 10 + i) as f64),
                energy: Array1::from_shape_fn(2, |i| (n + i) as f64),
                position: Array1::zeros(4),
                time: n as f64,
            };
            set.record(k, n, stage, &state).unwrap();
        }
        // A group of one column is that column.
        let single = SnapshotGroup {
            psi_end: 1.0,
            ranges: vec![(0, 1, 1)],
        };
        let m = assemble_group_matrix(&set, &single, Variable::Velocity).unwrap();
        assert_eq!(m.ncols(), 1);
        assert_eq!(m.column(0).to_owned(), set.parameters[0].cols_v[1]);
        // An empty group is an error.
        let empty = SnapshotGroup {
            psi_end: 1.0,
            ranges: vec![],
        };
        assert!(assemble_group_matrix(&set, &empty, Variable::Energy).is_err());
        // n_sample = 0 is rejected.
        assert!(partition_series(&[vec![0.0, 1.0]], 0, IndicatorKind::Time).is_err());
    }

    #[test]
    fn group_matrix_covers_all_columns() {
        let series = vec![(0..=10).map(|n| n as f64).collect::<Vec<_>>()];
        let p = partition_series(&series, 3, IndicatorKind::Time).unwrap();
        let mut covered = vec![0usize; 11];
        for g in &p.groups {
            for (n, _) in g.index_pairs() {
                covered[n] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c >= 1));
        // Interior boundaries shared exactly once.
        let shared = covered.iter().filter(|&&c| c == 2).count();
        assert_eq!(shared, p.n_windows() - 1);
    }
}
