//! Online windowed hyper-reduced simulation: RK2-average stepping of the
//! reduced system, with lifting restricted to the dofs of the sampled
//! elements, indicator-driven window transitions, and adaptive step control
//! estimated on the sample mesh only.
//!
//! Per-step work depends on the reduced dimensions, the sample counts, and
//! the sampled-element count; it is independent of the FOM size.

use ndarray::{Array1, Array2};
use std::time::Instant;

use crate::fom::{energy_element, eval_element, FomConfig, QpData, Solver, State};
use crate::rom::WindowRom;
use crate::windows::{Indicator, IndicatorKind};
use crate::{Error, Result, StepFailure};

/// Reduced hydrodynamic state: generalized coordinates per variable, the
/// active window, and time.
#[derive(Debug, Clone)]
pub struct ReducedState {
    pub v_hat: Array1<f64>,
    pub e_hat: Array1<f64>,
    pub x_hat: Array1<f64>,
    pub window: usize,
    pub time: f64,
}

/// One accepted online step.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub t: f64,
    pub dt: f64,
    pub window: usize,
    pub indicator: f64,
}

/// Step-by-step record of an online run.
#[derive(Debug, Clone, Default)]
pub struct OnlineTrace {
    pub rows: Vec<TraceRow>,
    /// Times at which the run advanced to the next window.
    pub window_boundaries: Vec<f64>,
}

impl OnlineTrace {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,dt,window,indicator")?;
        for r in &self.rows {
            writeln!(f, "{:.17e},{:.17e},{},{:.17e}", r.t, r.dt, r.window, r.indicator)?;
        }
        Ok(())
    }
}

/// Online run configuration.
#[derive(Debug, Clone)]
pub struct OnlineConfig {
    /// Physical setup at the online parameter (Atwood number, final time,
    /// CFL number, viscosity coefficients).
    pub fom: FomConfig,
    /// Abort instead of continuing in the last window when the indicator
    /// leaves the offline range.
    pub strict_windows: bool,
    /// Replay a fixed step-size sequence instead of estimating; used by the
    /// degeneracy verification against a recorded FOM run.
    pub forced_dts: Option<Vec<f64>>,
}

impl OnlineConfig {
    pub fn new(fom: FomConfig) -> Self {
        Self {
            fom,
            strict_windows: false,
            forced_dts: None,
        }
    }
}

/// Timings and counters of one online run.
#[derive(Debug, Clone)]
pub struct OnlineSummary {
    pub steps: usize,
    pub setup_seconds: f64,
    pub loop_seconds: f64,
    /// Number of windows the run actually entered.
    pub windows_traversed: usize,
    pub negative_pressure: bool,
    pub warnings: Vec<String>,
}

/// Change of variables between consecutive windows:
/// `y_new = Phi_new^T (offset_old + Phi_old y_old - offset_new)`, applied
/// through the precomputed transfer operators. The offset-difference term is
/// skipped entirely when the offsets coincide.
pub fn window_transition(
    rstate: &ReducedState,
    from: &WindowRom,
    to: &WindowRom,
) -> Result<ReducedState> {
    let transfer = to.transfer.as_ref().ok_or_else(|| {
        Error::Config(format!("window {} has no transfer operators", to.index))
    })?;
    if transfer.t_v.ncols() != from.n_v()
        || transfer.t_e.ncols() != from.n_e()
        || transfer.t_x.ncols() != from.n_x()
    {
        return Err(Error::Config(format!(
            "transfer operators of window {} do not match window {}",
            to.index, from.index
        )));
    }
    let mut v_hat = transfer.t_v.dot(&rstate.v_hat);
    let mut e_hat = transfer.t_e.dot(&rstate.e_hat);
    let mut x_hat = transfer.t_x.dot(&rstate.x_hat);
    if from.offset_v != to.offset_v {
        v_hat += &to.basis_v.t().dot(&(&from.offset_v - &to.offset_v));
    }
    if from.offset_e != to.offset_e {
        e_hat += &to.basis_e.t().dot(&(&from.offset_e - &to.offset_e));
    }
    if from.offset_x != to.offset_x {
        x_hat += &to.basis_x.t().dot(&(&from.offset_x - &to.offset_x));
    }
    Ok(ReducedState {
        v_hat,
        e_hat,
        x_hat,
        window: to.index,
        time: rstate.time,
    })
}

/// Lifts a reduced state to the full spaces through one window's bases.
pub fn lift(rstate: &ReducedState, window: &WindowRom) -> State {
    State {
        velocity: &window.offset_v + &window.basis_v.dot(&rstate.v_hat),
        energy: &window.offset_e + &window.basis_e.dot(&rstate.e_hat),
        position: &window.offset_x + &window.basis_x.dot(&rstate.x_hat),
        time: rstate.time,
    }
}

/// Sample mesh of one window: the elements touched by any sampled force
/// row, the dofs that must be lifted to evaluate them, and gather maps.
pub(crate) struct SampleMesh {
    pub elements: Vec<usize>,
    /// Scalar nodes needed (sorted); lifted kinematic vectors are laid out
    /// node-major, component-minor: entry 2 * local + component.
    pub nodes: Vec<usize>,
    node_local: Vec<i64>,
    /// Needed thermodynamic dofs (all dofs of the sampled elements).
    pub thermo_dofs: Vec<usize>,
    thermo_local: Vec<i64>,
    /// Per sampled momentum row: (lifted index, constrained flag).
    f1_rows: Vec<(usize, bool)>,
    /// Per element owning sampled energy rows: (element slot, local dof,
    /// output slot), grouped by element in ascending order.
    ftv_targets: Vec<(usize, usize, usize)>,
}

impl SampleMesh {
    fn build(
        disc: &crate::mesh::DiscretizationData,
        samples_f1: &[usize],
        samples_ftv: &[usize],
        constrained: &[bool],
        with_interface_elements: bool,
    ) -> SampleMesh {
        let spaces = &disc.spaces;
        let ns = spaces.n_scalar();
        let mut elem_set = std::collections::BTreeSet::new();
        for &dof in samples_f1 {
            let (node, _) = spaces.kin_dof_node(dof);
            for &e in spaces.elements_of_node(node) {
                elem_set.insert(e);
            }
        }
        for &dof in samples_ftv {
            elem_set.insert(spaces.element_of_thermo_dof(dof));
        }
        if with_interface_elements {
            // The distance indicator needs the interface dofs lifted and
            // the step estimator should see the compression zone around
            // the penetrating spike.
            for &node in &spaces.interface_nodes {
                for &e in spaces.elements_of_node(node) {
                    elem_set.insert(e);
                }
            }
        }
        if elem_set.is_empty() {
            // Offset-only window (all bases empty): keep one element so the
            // step estimator still sees the flow.
            elem_set.insert(0);
        }
        let elements: Vec<usize> = elem_set.into_iter().collect();

        let mut node_set = std::collections::BTreeSet::new();
        for &e in &elements {
            for &g in &spaces.elem_nodes[e] {
                node_set.insert(g);
            }
        }
        let nodes: Vec<usize> = node_set.into_iter().collect();
        let mut node_local = vec![-1i64; ns];
        for (l, &g) in nodes.iter().enumerate() {
            node_local[g] = l as i64;
        }

        let mut thermo_dofs = Vec::new();
        let mut thermo_local = vec![-1i64; spaces.n_thermo];
        for &e in &elements {
            for dof in spaces.thermo_dofs_of(e) {
                thermo_local[dof] = thermo_dofs.len() as i64;
                thermo_dofs.push(dof);
            }
        }

        let f1_rows = samples_f1
            .iter()
            .map(|&dof| {
                let (node, comp) = spaces.kin_dof_node(dof);
                let local = node_local[node];
                debug_assert!(local >= 0);
                (2 * local as usize + comp, constrained[dof])
            })
            .collect();

        let elem_slot: std::collections::BTreeMap<usize, usize> =
            elements.iter().enumerate().map(|(s, &e)| (e, s)).collect();
        let mut ftv_targets: Vec<(usize, usize, usize)> = samples_ftv
            .iter()
            .enumerate()
            .map(|(slot, &dof)| {
                let e = spaces.element_of_thermo_dof(dof);
                let local = dof - spaces.thermo_dofs_of(e).start;
                (elem_slot[&e], local, slot)
            })
            .collect();
        ftv_targets.sort_unstable();

        SampleMesh {
            elements,
            nodes,
            node_local,
            thermo_dofs,
            thermo_local,
            f1_rows,
            ftv_targets,
        }
    }

    /// Gathers the needed kinematic and thermodynamic values out of full
    /// state vectors (lifted layout).
    fn gather_full(
        &self,
        spaces: &crate::mesh::FeSpaces,
        v: &Array1<f64>,
        e: &Array1<f64>,
        x: &Array1<f64>,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let ns = spaces.n_scalar();
        let nk = 2 * self.nodes.len();
        let mut v_need = Array1::zeros(nk);
        let mut x_need = Array1::zeros(nk);
        for (l, &g) in self.nodes.iter().enumerate() {
            for comp in 0..2 {
                v_need[2 * l + comp] = v[comp * ns + g];
                x_need[2 * l + comp] = x[comp * ns + g];
            }
        }
        let e_need = Array1::from_iter(self.thermo_dofs.iter().map(|&d| e[d]));
        (v_need, e_need, x_need)
    }
}

/// Force evaluation restricted to a sampled dof subset, evaluated at a full
/// state: returns the sampled rows of `F . 1` (before boundary masking) and
/// of `F^T w`. Restricted rows agree with the rows of the full assembly.
pub fn evaluate_force_restricted(
    disc: &crate::mesh::DiscretizationData,
    config: &FomConfig,
    state: &State,
    samples_f1: &[usize],
    samples_ftv: &[usize],
    w: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let solver = Solver::new(disc, config.clone())?;
    // No boundary masking here: the comparison target is the raw assembly.
    let unconstrained = vec![false; disc.spaces.n_kin];
    let sm = SampleMesh::build(disc, samples_f1, samples_ftv, &unconstrained, false);
    let (v_need, e_need, x_need) = sm.gather_full(&disc.spaces, &state.velocity, &state.energy, &state.position);
    let force = restricted_force(&solver, &sm, &v_need, &e_need, &x_need)
        .map_err(|f| Error::Solver(f.to_string()))?;
    let (w_need, _, _) = sm.gather_full(&disc.spaces, w, &state.energy, &state.position);
    let energy = restricted_energy(&solver, &sm, &force, &w_need);
    Ok((force.f1_sampled, energy))
}

/// Per-window online data: the sample mesh, the basis rows needed for
/// lifting, and the sampled gravity forcing.
pub(crate) struct OnlineWindow {
    pub sample: SampleMesh,
    /// Basis rows over lifted kinematic dofs (2 |nodes| x n_v / n_x).
    lift_v: Array2<f64>,
    lift_x: Array2<f64>,
    /// Basis rows over needed thermodynamic dofs.
    lift_e: Array2<f64>,
    off_v: Array1<f64>,
    off_e: Array1<f64>,
    off_x: Array1<f64>,
    /// Sampled rows of the gravity forcing `M_v g`. Gravity is folded into
    /// the sampled force before the least-squares reconstruction: the net
    /// `M_v g - F^1` is the momentum rate `M_v dv/dt`, which lies near the
    /// span of the SNS basis `M_v Phi_v`, while `F^1` alone is dominated by
    /// its hydrostatic part and would be reconstructed with an error on the
    /// scale of the whole dynamics.
    gravity_sampled: Array1<f64>,
    /// `Phi_x^T v_offset`.
    vos_x: Array1<f64>,
    /// Interface rows of the position basis and offset.
    iface_rows: Array2<f64>,
    iface_offset: Array1<f64>,
}

impl OnlineWindow {
    fn build(
        disc: &crate::mesh::DiscretizationData,
        solver: &Solver,
        window: &WindowRom,
        indicator: &Indicator,
    ) -> OnlineWindow {
        let spaces = &disc.spaces;
        let ns = spaces.n_scalar();
        let sample = SampleMesh::build(
            disc,
            &window.samples_f1,
            &window.samples_ftv,
            solver.constrained_mask(),
            indicator.kind == IndicatorKind::PenetrationDistance,
        );
        let nk = 2 * sample.nodes.len();
        let mut lift_v = Array2::zeros((nk, window.n_v()));
        let mut lift_x = Array2::zeros((nk, window.n_x()));
        let mut off_v = Array1::zeros(nk);
        let mut off_x = Array1::zeros(nk);
        for (l, &g) in sample.nodes.iter().enumerate() {
            for comp in 0..2 {
                let dof = comp * ns + g;
                let row = 2 * l + comp;
                off_v[row] = window.offset_v[dof];
                off_x[row] = window.offset_x[dof];
                for j in 0..window.n_v() {
                    lift_v[[row, j]] = window.basis_v[[dof, j]];
                }
                for j in 0..window.n_x() {
                    lift_x[[row, j]] = window.basis_x[[dof, j]];
                }
            }
        }
        let nt = sample.thermo_dofs.len();
        let mut lift_e = Array2::zeros((nt, window.n_e()));
        let mut off_e = Array1::zeros(nt);
        for (l, &dof) in sample.thermo_dofs.iter().enumerate() {
            off_e[l] = window.offset_e[dof];
            for j in 0..window.n_e() {
                lift_e[[l, j]] = window.basis_e[[dof, j]];
            }
        }
        let gravity_sampled = Array1::from_iter(
            window
                .samples_f1
                .iter()
                .map(|&dof| solver.gravity_forcing()[dof]),
        );
        let vos_x = window.basis_x.t().dot(&window.offset_v);
        let iface = &indicator.interface_dofs;
        let mut iface_rows = Array2::zeros((iface.len(), window.n_x()));
        let mut iface_offset = Array1::zeros(iface.len());
        for (r, &dof) in iface.iter().enumerate() {
            iface_offset[r] = window.offset_x[dof];
            for j in 0..window.n_x() {
                iface_rows[[r, j]] = window.basis_x[[dof, j]];
            }
        }
        OnlineWindow {
            sample,
            lift_v,
            lift_x,
            lift_e,
            off_v,
            off_e,
            off_x,
            gravity_sampled,
            vos_x,
            iface_rows,
            iface_offset,
        }
    }

    fn lift_velocity(&self, v_hat: &Array1<f64>) -> Array1<f64> {
        &self.off_v + &self.lift_v.dot(v_hat)
    }

    fn lift_fields(&self, r: &ReducedState) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        (
            self.lift_velocity(&r.v_hat),
            &self.off_e + &self.lift_e.dot(&r.e_hat),
            &self.off_x + &self.lift_x.dot(&r.x_hat),
        )
    }

    fn indicator_value(&self, indicator: &Indicator, x_hat: &Array1<f64>, t: f64) -> f64 {
        match indicator.kind {
            IndicatorKind::Time => t,
            IndicatorKind::PenetrationDistance => {
                let vals = &self.iface_offset + &self.iface_rows.dot(x_hat);
                indicator.value_from_interface(&vals, t)
            }
        }
    }
}

/// Force evaluation restricted to the sample mesh of one window.
pub(crate) struct RestrictedForce {
    qp: Vec<QpData>,
    /// Sampled momentum rows after boundary masking.
    pub f1_sampled: Array1<f64>,
    pub max_inv_dt: f64,
    pub neg_pressure: bool,
}

pub(crate) fn restricted_force(
    solver: &Solver,
    sm: &SampleMesh,
    v_need: &Array1<f64>,
    e_need: &Array1<f64>,
    x_need: &Array1<f64>,
) -> std::result::Result<RestrictedForce, StepFailure> {
    let disc = solver.disc;
    let spaces = &disc.spaces;
    let nloc = spaces.nloc_kin;
    let ntl = spaces.nloc_thermo;
    let mut qp = vec![QpData::default(); sm.elements.len() * spaces.n_qp];
    let mut f1_need = vec![0.0f64; 2 * sm.nodes.len()];
    let mut x_loc = vec![[0.0; 2]; nloc];
    let mut v_loc = vec![[0.0; 2]; nloc];
    let mut e_loc = vec![0.0; ntl];
    let mut f1_loc = vec![[0.0; 2]; nloc];
    let mut max_inv_dt = 0.0f64;
    let mut neg_pressure = false;
    for (slot, &e) in sm.elements.iter().enumerate() {
        let nodes = &spaces.elem_nodes[e];
        for (a, &g) in nodes.iter().enumerate() {
            let l = sm.node_local[g] as usize;
            x_loc[a] = [x_need[2 * l], x_need[2 * l + 1]];
            v_loc[a] = [v_need[2 * l], v_need[2 * l + 1]];
        }
        for (b, dof) in spaces.thermo_dofs_of(e).enumerate() {
            e_loc[b] = e_need[sm.thermo_local[dof] as usize];
        }
        let eval = eval_element(
            spaces,
            &disc.geometry,
            &solver.config,
            e,
            &x_loc,
            &v_loc,
            &e_loc,
            &mut qp[slot * spaces.n_qp..(slot + 1) * spaces.n_qp],
            &mut f1_loc,
        );
        if eval.min_detj <= 0.0 {
            return Err(StepFailure { element: e });
        }
        neg_pressure |= eval.neg_pressure;
        if eval.max_inv_dt > max_inv_dt {
            max_inv_dt = eval.max_inv_dt;
        }
        for (a, &g) in nodes.iter().enumerate() {
            let l = sm.node_local[g] as usize;
            f1_need[2 * l] += f1_loc[a][0];
            f1_need[2 * l + 1] += f1_loc[a][1];
        }
    }
    let f1_sampled = Array1::from_iter(
        sm.f1_rows
            .iter()
            .map(|&(idx, constrained)| if constrained { 0.0 } else { f1_need[idx] }),
    );
    Ok(RestrictedForce {
        qp,
        f1_sampled,
        max_inv_dt,
        neg_pressure,
    })
}

/// Sampled energy rows `P^T (F^T w)` contracted against a lifted velocity.
pub(crate) fn restricted_energy(
    solver: &Solver,
    sm: &SampleMesh,
    force: &RestrictedForce,
    w_need: &Array1<f64>,
) -> Array1<f64> {
    let spaces = &solver.disc.spaces;
    let nloc = spaces.nloc_kin;
    let mut out = Array1::zeros(sm.ftv_targets.len());
    let mut w_loc = vec![[0.0; 2]; nloc];
    let mut e_out = vec![0.0; spaces.nloc_thermo];
    let mut i = 0usize;
    while i < sm.ftv_targets.len() {
        let slot = sm.ftv_targets[i].0;
        let e = sm.elements[slot];
        let nodes = &spaces.elem_nodes[e];
        for (a, &g) in nodes.iter().enumerate() {
            let l = sm.node_local[g] as usize;
            w_loc[a] = [w_need[2 * l], w_need[2 * l + 1]];
        }
        energy_element(
            spaces,
            &force.qp[slot * spaces.n_qp..(slot + 1) * spaces.n_qp],
            &w_loc,
            &mut e_out,
        );
        while i < sm.ftv_targets.len() && sm.ftv_targets[i].0 == slot {
            let (_, local, out_slot) = sm.ftv_targets[i];
            out[out_slot] = e_out[local];
            i += 1;
        }
    }
    out
}

/// One RK2-average step of the hyper-reduced system in a fixed window.
/// Mirrors the FOM stepper: midpoint velocity in stage 1, average velocity
/// in stage 2.
fn reduced_step(
    solver: &Solver,
    window: &WindowRom,
    ow: &OnlineWindow,
    rstate: &ReducedState,
    stage1: &RestrictedForce,
    dt: f64,
) -> std::result::Result<(ReducedState, RestrictedForce), StepFailure> {
    let half = 0.5 * dt;
    let rhs_v1 = reduced_momentum(window, ow, stage1);
    let v_mid = &rstate.v_hat + &(half * &rhs_v1);
    let w_mid = ow.lift_velocity(&v_mid);
    let e_rhs1 = reduced_energy(solver, window, ow, stage1, &w_mid);
    let e_mid = &rstate.e_hat + &(half * &e_rhs1);
    let x_mid = &rstate.x_hat + &(half * &(&ow.vos_x + &window.xv_product.dot(&v_mid)));
    let mid = ReducedState {
        v_hat: v_mid,
        e_hat: e_mid,
        x_hat: x_mid,
        window: rstate.window,
        time: rstate.time + half,
    };

    let (vm, em, xm) = ow.lift_fields(&mid);
    let stage2 = restricted_force(solver, &ow.sample, &vm, &em, &xm)?;
    let rhs_v2 = reduced_momentum(window, ow, &stage2);
    let v_end = &rstate.v_hat + &(dt * &rhs_v2);
    let v_avg = 0.5 * (&rstate.v_hat + &v_end);
    let w_avg = ow.lift_velocity(&v_avg);
    let e_rhs2 = reduced_energy(solver, window, ow, &stage2, &w_avg);
    let e_end = &rstate.e_hat + &(dt * &e_rhs2);
    let x_end = &rstate.x_hat + &(dt * &(&ow.vos_x + &window.xv_product.dot(&v_avg)));
    Ok((
        ReducedState {
            v_hat: v_end,
            e_hat: e_end,
            x_hat: x_end,
            window: rstate.window,
            time: rstate.time + dt,
        },
        stage2,
    ))
}

/// `d v_hat / dt = (P^T B_F1)^+ P^T (M_v g - F^1)`: the net momentum rate
/// goes through one least-squares reconstruction.
fn reduced_momentum(window: &WindowRom, ow: &OnlineWindow, force: &RestrictedForce) -> Array1<f64> {
    if window.n_v() == 0 {
        return Array1::zeros(0);
    }
    let sampled = &ow.gravity_sampled - &force.f1_sampled;
    window.pinv_f1.dot(&sampled)
}

fn reduced_energy(
    solver: &Solver,
    window: &WindowRom,
    ow: &OnlineWindow,
    force: &RestrictedForce,
    w_need: &Array1<f64>,
) -> Array1<f64> {
    if window.n_e() == 0 {
        return Array1::zeros(0);
    }
    let sampled = restricted_energy(solver, &ow.sample, force, w_need);
    window.pinv_ftv.dot(&sampled)
}

/// Runs the windowed hyper-reduced simulation.
///
/// All window offsets are replaced by the online parameter's initial state
/// before marching, so the reduced initial condition is exactly zero and
/// offset-difference terms vanish at transitions. The run advances to the
/// next window when the indicator of the lifted state first exceeds the
/// current endpoint; it never retreats. Leaving the final endpoint warns
/// (or aborts under `strict_windows`).
pub fn run_rom(
    disc: &crate::mesh::DiscretizationData,
    windows: &[WindowRom],
    indicator: &Indicator,
    config: &OnlineConfig,
) -> Result<(State, OnlineTrace, OnlineSummary)> {
    if windows.is_empty() {
        return Err(Error::Config("no windows supplied".into()));
    }
    let setup_start = Instant::now();
    let solver = Solver::new(disc, config.fom.clone())?;
    let ic = solver.initial_state();

    let mut windows: Vec<WindowRom> = windows.to_vec();
    for w in &mut windows {
        w.offset_v = ic.velocity.clone();
        w.offset_e = ic.energy.clone();
        w.offset_x = ic.position.clone();
    }
    let online: Vec<OnlineWindow> = windows
        .iter()
        .map(|w| OnlineWindow::build(disc, &solver, w, indicator))
        .collect();

    let mut rstate = ReducedState {
        v_hat: Array1::zeros(windows[0].n_v()),
        e_hat: Array1::zeros(windows[0].n_e()),
        x_hat: Array1::zeros(windows[0].n_x()),
        window: 0,
        time: 0.0,
    };
    let mut warnings = Vec::new();
    let mut trace = OnlineTrace::default();
    let mut neg_pressure = false;
    let mut range_exhausted_warned = false;

    let (v0, e0, x0) = online[0].lift_fields(&rstate);
    let mut stage1 = restricted_force(&solver, &online[0].sample, &v0, &e0, &x0)
        .map_err(|f| Error::Solver(format!("initial reduced state invalid: {f}")))?;
    let setup_seconds = setup_start.elapsed().as_secs_f64();

    let t_final = config.fom.t_final;
    let mut steps = 0usize;
    let mut prev_dt: Option<f64> = None;
    let loop_start = Instant::now();
    while rstate.time < t_final - 1e-14 {
        if let Some(cap) = config.fom.max_steps {
            if steps >= cap {
                break;
            }
        }
        let mut dt = match &config.forced_dts {
            Some(seq) => *seq.get(steps).ok_or_else(|| {
                Error::Config(format!("forced dt sequence exhausted at step {steps}"))
            })?,
            None => {
                let est = solver.dt_from_inv(stage1.max_inv_dt, prev_dt)?;
                est.min(t_final - rstate.time)
            }
        };
        let w = &windows[rstate.window];
        let ow = &online[rstate.window];
        let (end, end_stage) = loop {
            match reduced_step(&solver, w, ow, &rstate, &stage1, dt) {
                Ok((end, stage2)) => {
                    // Validate the end-state geometry on the sample mesh; it
                    // becomes the next stage-1 evaluation on acceptance.
                    let (ve, ee, xe) = ow.lift_fields(&end);
                    match restricted_force(&solver, &ow.sample, &ve, &ee, &xe) {
                        Ok(next) => {
                            neg_pressure |= stage2.neg_pressure | next.neg_pressure;
                            break (end, next);
                        }
                        Err(_) if config.forced_dts.is_none() => {
                            dt *= 0.5;
                            if dt < 1e-12 {
                                return Err(Error::Solver(format!(
                                    "reduced step size collapsed at t = {:.6e}",
                                    rstate.time
                                )));
                            }
                        }
                        Err(f) => {
                            return Err(Error::Solver(format!(
                                "forced-dt reduced run inverted the sample mesh: {f}"
                            )))
                        }
                    }
                }
                Err(_) if config.forced_dts.is_none() => {
                    dt *= 0.5;
                    if dt < 1e-12 {
                        return Err(Error::Solver(format!(
                            "reduced step size collapsed at t = {:.6e}",
                            rstate.time
                        )));
                    }
                }
                Err(f) => {
                    return Err(Error::Solver(format!(
                        "forced-dt reduced run inverted the sample mesh: {f}"
                    )))
                }
            }
        };
        steps += 1;
        prev_dt = Some(dt);
        rstate = end;
        stage1 = end_stage;

        let psi = online[rstate.window].indicator_value(indicator, &rstate.x_hat, rstate.time);
        trace.rows.push(TraceRow {
            t: rstate.time,
            dt,
            window: rstate.window,
            indicator: psi,
        });

        // Window advance: strictly exceeding the endpoint moves forward.
        while psi > windows[rstate.window].psi_end {
            if rstate.window + 1 >= windows.len() {
                if config.strict_windows {
                    return Err(Error::IndicatorExhausted(format!(
                        "indicator {psi:.6e} exceeds the final endpoint {:.6e} at t = {:.6e} \
                         with {:.3e} of simulated time remaining",
                        windows[rstate.window].psi_end,
                        rstate.time,
                        t_final - rstate.time
                    )));
                }
                if !range_exhausted_warned {
                    warnings.push(format!(
                        "indicator {psi:.6e} exceeds the final endpoint {:.6e}; continuing in the last window",
                        windows[rstate.window].psi_end
                    ));
                    range_exhausted_warned = true;
                }
                break;
            }
            let next = window_transition(&rstate, &windows[rstate.window], &windows[rstate.window + 1])?;
            rstate = next;
            trace.window_boundaries.push(rstate.time);
            // Rebuild the stage-1 evaluation in the new window's sample mesh.
            let ow = &online[rstate.window];
            let (v, e, x) = ow.lift_fields(&rstate);
            stage1 = restricted_force(&solver, &ow.sample, &v, &e, &x)
                .map_err(|f| Error::Solver(format!("transition produced invalid state: {f}")))?;
        }
    }
    let loop_seconds = loop_start.elapsed().as_secs_f64();

    let final_state = lift(&rstate, &windows[rstate.window]);
    let summary = OnlineSummary {
        steps,
        setup_seconds,
        loop_seconds,
        windows_traversed: rstate.window + 1,
        negative_pressure: neg_pressure,
        warnings,
    };
    Ok((final_state, trace, summary))
}
