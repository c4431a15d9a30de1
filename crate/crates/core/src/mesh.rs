//! Cartesian quadrilateral mesh of the initial domain, tensor-product finite
//! element spaces, Gauss-Legendre quadrature, and mass matrices.
//!
//! The initial domain is the 1:4 rectangle `[0, 1/2] x [-1, 1]`, tiled by a
//! base mesh of 1x4 unit-aspect squares; refinement level `r` halves the
//! element side in both directions `r` times. The kinematic space is
//! continuous vector Q_k (positions and velocities), the thermodynamic space
//! element-discontinuous Q_t (specific internal energy).
//!
//! Degree-of-freedom ordering is deterministic: scalar nodes are sorted
//! lexicographically by (y, x); vector fields store the full x-component
//! block before the y-component block.

use ndarray::{Array1, Array2};

use crate::linalg::{dense_cholesky, dense_cholesky_solve, BandedChol, BandedSpd};
use crate::{Error, Result};

/// Initial computational domain `[0, 1/2] x [-1, 1]`.
pub const DOMAIN_X: [f64; 2] = [0.0, 0.5];
pub const DOMAIN_Y: [f64; 2] = [-1.0, 1.0];

/// Axis-aligned quadrilateral element of the initial mesh; corners ordered
/// counter-clockwise from the lower-left.
#[derive(Debug, Clone, Copy)]
pub struct Quad {
    pub corners: [[f64; 2]; 4],
}

/// Cartesian mesh of the initial configuration.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub refinement_level: usize,
    /// Elements across the width (x), `2^refinement_level`.
    pub nx: usize,
    /// Elements across the height (y), `4 * 2^refinement_level`.
    pub ny: usize,
    /// Element side length (elements are squares).
    pub side: f64,
    pub elements: Vec<Quad>,
    pub element_count: usize,
}

/// Builds the uniform quad mesh at the given refinement level.
///
/// Node coordinates are integer multiples of a power of two, so they carry
/// no accumulated rounding error.
pub fn build_mesh(refinement_level: usize) -> Result<Mesh> {
    if refinement_level > 6 {
        return Err(Error::Config(format!(
            "refinement level {refinement_level} out of range [0, 6]"
        )));
    }
    let nx = 1usize << refinement_level;
    let ny = 4 * nx;
    let side = 0.5 / nx as f64; // exact power of two
    let mut elements = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let x0 = ix as f64 * side;
            let y0 = -1.0 + iy as f64 * side;
            elements.push(Quad {
                corners: [
                    [x0, y0],
                    [x0 + side, y0],
                    [x0 + side, y0 + side],
                    [x0, y0 + side],
                ],
            });
        }
    }
    Ok(Mesh {
        refinement_level,
        nx,
        ny,
        side,
        element_count: elements.len(),
        elements,
    })
}

impl Mesh {
    pub fn element_origin(&self, e: usize) -> [f64; 2] {
        self.elements[e].corners[0]
    }

    /// Sum of element areas (diagnostic; must tile the domain exactly).
    pub fn total_area(&self) -> f64 {
        self.element_count as f64 * self.side * self.side
    }
}

/// Nodes of the 1D Lagrange basis of the given degree on [0, 1]
/// (equispaced; for the degrees used these coincide with Gauss-Lobatto).
fn lagrange_nodes(degree: usize) -> Vec<f64> {
    if degree == 0 {
        return vec![0.5];
    }
    (0..=degree).map(|i| i as f64 / degree as f64).collect()
}

/// Value and derivative of the `i`-th 1D Lagrange basis function at `x`.
fn lagrange_eval(nodes: &[f64], i: usize, x: f64) -> (f64, f64) {
    let mut val = 1.0;
    let mut dval = 0.0;
    for (j, &xj) in nodes.iter().enumerate() {
        if j == i {
            continue;
        }
        let denom = nodes[i] - xj;
        dval = dval * (x - xj) / denom + val / denom;
        val *= (x - xj) / denom;
    }
    (val, dval)
}

/// Gauss-Legendre nodes and weights on [0, 1], by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    let n = points;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Initial guess on [-1, 1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Tensor-product finite element spaces on a [`Mesh`], with quadrature and
/// basis tables evaluated once at the reference points.
#[derive(Debug, Clone)]
pub struct FeSpaces {
    pub kinematic_degree: usize,
    pub thermodynamic_degree: usize,
    /// Kinematic dof count: scalar H1 node count times 2 components.
    pub n_kin: usize,
    /// Thermodynamic dof count: `element_count * (thermodynamic_degree + 1)^2`.
    pub n_thermo: usize,
    /// Polynomial degree integrated exactly per direction by the rule.
    pub quadrature_order: usize,

    pub(crate) n_scalar: usize,
    pub(crate) nodes_x: usize,
    pub(crate) node_coords: Vec<[f64; 2]>,
    /// element -> local scalar node -> global scalar node.
    pub(crate) elem_nodes: Vec<Vec<usize>>,
    /// scalar node -> elements containing it (ascending).
    pub(crate) node_elems: Vec<Vec<usize>>,
    /// Scalar nodes on the x = 0 / x = 1/2 walls (x-velocity constrained).
    pub(crate) constrained_x_nodes: Vec<usize>,
    /// Scalar nodes on the y = -1 / y = 1 walls (y-velocity constrained).
    pub(crate) constrained_y_nodes: Vec<usize>,
    /// Scalar nodes with initial y = 0.
    pub(crate) interface_nodes: Vec<usize>,

    pub(crate) nloc_kin: usize,
    pub(crate) nloc_thermo: usize,
    pub(crate) n_qp: usize,
    pub(crate) qp_weight: Vec<f64>,
    /// [q][a]: kinematic basis value at quadrature point q.
    pub(crate) kin_val: Vec<Vec<f64>>,
    /// [q][a]: kinematic basis reference gradient at quadrature point q.
    pub(crate) kin_grad: Vec<Vec<[f64; 2]>>,
    /// [q][b]: thermodynamic basis value.
    pub(crate) thermo_val: Vec<Vec<f64>>,
}

/// Builds the FE spaces over a mesh. `kin_degree >= 1`; any
/// `thermo_degree >= 0` is accepted (the standard pairing is
/// `thermo_degree = kin_degree - 1`).
pub fn build_spaces(mesh: &Mesh, kin_degree: usize, thermo_degree: usize) -> Result<FeSpaces> {
    if kin_degree < 1 {
        return Err(Error::Config("kinematic degree must be >= 1".into()));
    }
    let k = kin_degree;
    let t = thermo_degree;
    let nodes_x = k * mesh.nx + 1;
    let nodes_y = k * mesh.ny + 1;
    let n_scalar = nodes_x * nodes_y;
    let dx = mesh.side / k as f64;

    let mut node_coords = Vec::with_capacity(n_scalar);
    for jy in 0..nodes_y {
        for jx in 0..nodes_x {
            node_coords.push([jx as f64 * dx, -1.0 + jy as f64 * dx]);
        }
    }

    let nloc_kin = (k + 1) * (k + 1);
    let mut elem_nodes = Vec::with_capacity(mesh.element_count);
    let mut node_elems = vec![Vec::new(); n_scalar];
    for e in 0..mesh.element_count {
        let ix = e % mesh.nx;
        let iy = e / mesh.nx;
        let mut local = Vec::with_capacity(nloc_kin);
        for ly in 0..=k {
            for lx in 0..=k {
                let g = (iy * k + ly) * nodes_x + (ix * k + lx);
                local.push(g);
                node_elems[g].push(e);
            }
        }
        elem_nodes.push(local);
    }
    for list in &mut node_elems {
        list.sort_unstable();
        list.dedup();
    }

    let mut constrained_x_nodes = Vec::new();
    let mut constrained_y_nodes = Vec::new();
    let mut interface_nodes = Vec::new();
    for (g, c) in node_coords.iter().enumerate() {
        let on_x_wall = g % nodes_x == 0 || g % nodes_x == nodes_x - 1;
        let on_y_wall = g / nodes_x == 0 || g / nodes_x == nodes_y - 1;
        if on_x_wall {
            constrained_x_nodes.push(g);
        }
        if on_y_wall {
            constrained_y_nodes.push(g);
        }
        if c[1] == 0.0 {
            interface_nodes.push(g);
        }
    }

    // Gauss-Legendre with k + 2 points per direction: exact through degree
    // 2k + 3 >= 2k + 2, enough for mass matrices of deformed elements.
    let qp_per_dir = k + 2;
    let quadrature_order = 2 * qp_per_dir - 1;
    let (q1, w1) = gauss_legendre(qp_per_dir);
    let n_qp = qp_per_dir * qp_per_dir;
    let kin_nodes_1d = lagrange_nodes(k);
    let thermo_nodes_1d = lagrange_nodes(t);
    let nloc_thermo = (t + 1) * (t + 1);

    let mut qp_weight = Vec::with_capacity(n_qp);
    let mut kin_val = Vec::with_capacity(n_qp);
    let mut kin_grad = Vec::with_capacity(n_qp);
    let mut thermo_val = Vec::with_capacity(n_qp);
    for qy in 0..qp_per_dir {
        for qx in 0..qp_per_dir {
            let (xi, eta) = (q1[qx], q1[qy]);
            qp_weight.push(w1[qx] * w1[qy]);
            let mut vals = Vec::with_capacity(nloc_kin);
            let mut grads = Vec::with_capacity(nloc_kin);
            for ly in 0..=k {
                let (vy, dy) = lagrange_eval(&kin_nodes_1d, ly, eta);
                for lx in 0..=k {
                    let (vx, dxv) = lagrange_eval(&kin_nodes_1d, lx, xi);
                    vals.push(vx * vy);
                    grads.push([dxv * vy, vx * dy]);
                }
            }
            kin_val.push(vals);
            kin_grad.push(grads);
            let mut tvals = Vec::with_capacity(nloc_thermo);
            for ly in 0..=t {
                let (vy, _) = lagrange_eval(&thermo_nodes_1d, ly, eta);
                for lx in 0..=t {
                    let (vx, _) = lagrange_eval(&thermo_nodes_1d, lx, xi);
                    tvals.push(vx * vy);
                }
            }
            thermo_val.push(tvals);
        }
    }

    Ok(FeSpaces {
        kinematic_degree: k,
        thermodynamic_degree: t,
        n_kin: 2 * n_scalar,
        n_thermo: mesh.element_count * nloc_thermo,
        quadrature_order,
        n_scalar,
        nodes_x,
        node_coords,
        elem_nodes,
        node_elems,
        constrained_x_nodes,
        constrained_y_nodes,
        interface_nodes,
        nloc_kin,
        nloc_thermo,
        n_qp,
        qp_weight,
        kin_val,
        kin_grad,
        thermo_val,
    })
}

impl FeSpaces {
    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }

    /// Kinematic dof index of (scalar node, component): x-block then y-block.
    pub fn kin_dof(&self, node: usize, component: usize) -> usize {
        component * self.n_scalar + node
    }

    /// Inverse of [`Self::kin_dof`].
    pub fn kin_dof_node(&self, dof: usize) -> (usize, usize) {
        if dof < self.n_scalar {
            (dof, 0)
        } else {
            (dof - self.n_scalar, 1)
        }
    }

    pub fn thermo_dofs_of(&self, element: usize) -> std::ops::Range<usize> {
        element * self.nloc_thermo..(element + 1) * self.nloc_thermo
    }

    pub fn element_of_thermo_dof(&self, dof: usize) -> usize {
        dof / self.nloc_thermo
    }

    /// Kinematic dof indices whose value is the vertical position of a node
    /// initially on the interface y = 0.
    pub fn interface_dofs(&self) -> Vec<usize> {
        self.interface_nodes
            .iter()
            .map(|&n| self.kin_dof(n, 1))
            .collect()
    }

    pub(crate) fn elements_of_node(&self, node: usize) -> &[usize] {
        &self.node_elems[node]
    }

    /// Mask of constrained kinematic dofs (v . n = 0 on the walls).
    pub fn constrained_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_kin];
        for &n in &self.constrained_x_nodes {
            mask[self.kin_dof(n, 0)] = true;
        }
        for &n in &self.constrained_y_nodes {
            mask[self.kin_dof(n, 1)] = true;
        }
        mask
    }
}

/// Initial-configuration data evaluated once: reference density at every
/// quadrature point and the (constant, diagonal) initial Jacobian.
#[derive(Debug, Clone)]
pub struct InitialGeometry {
    /// Determinant of the reference-to-initial map (constant per mesh).
    pub det_j0: f64,
    /// Inverse initial Jacobian diagonal (1/side, 1/side).
    pub j0_inv: [f64; 2],
    /// Initial element diameter.
    pub h0: f64,
    /// Initial element side (directional length scale).
    pub side: f64,
    /// rho0 at [element * n_qp + q].
    pub rho0: Vec<f64>,
}

/// Mass matrices of the kinematic and thermodynamic spaces, assembled once
/// on the initial configuration. The kinematic matrix is block diagonal over
/// components with identical scalar blocks; boundary-constrained rows and
/// columns are eliminated per component before factorization.
pub struct MassMatrices {
    pub n_kin: usize,
    pub n_thermo: usize,
    n_scalar: usize,
    /// Scalar H1 mass matrix, no boundary treatment (diagnostics, SPD check).
    pub(crate) kin_scalar_raw: BandedSpd,
    /// Per-component operators with essential dofs eliminated to identity.
    kin_band: [BandedSpd; 2],
    kin_chol: [BandedChol; 2],
    /// Per-element thermodynamic blocks and their Cholesky factors.
    pub(crate) thermo_blocks: Vec<Array2<f64>>,
    thermo_chol: Vec<Array2<f64>>,
    nloc_thermo: usize,
}

/// Assembles mass matrices from the initial configuration and a density
/// field sampled per element and initial coordinate.
///
/// `rho0(element, point)` must be positive wherever sampled; the element
/// index lets discontinuous fields pick the element's material rather than
/// a pointwise branch on a shared boundary.
pub fn assemble_mass<F>(mesh: &Mesh, spaces: &FeSpaces, rho0: F) -> Result<(MassMatrices, InitialGeometry)>
where
    F: Fn(usize, [f64; 2]) -> f64,
{
    let k = spaces.kinematic_degree;
    let qp_per_dir = k + 2;
    let (q1, _) = gauss_legendre(qp_per_dir);
    let det_j0 = mesh.side * mesh.side;
    let h0 = mesh.side * std::f64::consts::SQRT_2;

    let mut rho_qp = Vec::with_capacity(mesh.element_count * spaces.n_qp);
    for e in 0..mesh.element_count {
        let origin = mesh.element_origin(e);
        for qy in 0..qp_per_dir {
            for qx in 0..qp_per_dir {
                let p = [origin[0] + q1[qx] * mesh.side, origin[1] + q1[qy] * mesh.side];
                let r = rho0(e, p);
                if !(r > 0.0) {
                    return Err(Error::Input(format!(
                        "non-positive density {r:.3e} in element {e} at ({:.4}, {:.4})",
                        p[0], p[1]
                    )));
                }
                rho_qp.push(r);
            }
        }
    }
    let geometry = InitialGeometry {
        det_j0,
        j0_inv: [1.0 / mesh.side, 1.0 / mesh.side],
        h0,
        side: mesh.side,
        rho0: rho_qp,
    };

    // Scalar kinematic mass.
    let half_bandwidth = k * (spaces.nodes_x + 1);
    let mut kin_scalar = BandedSpd::zeros(spaces.n_scalar, half_bandwidth);
    let nloc = spaces.nloc_kin;
    for e in 0..mesh.element_count {
        let nodes = &spaces.elem_nodes[e];
        for q in 0..spaces.n_qp {
            let w = spaces.qp_weight[q] * det_j0 * geometry.rho0[e * spaces.n_qp + q];
            let vals = &spaces.kin_val[q];
            for a in 0..nloc {
                let ga = nodes[a];
                for b in 0..nloc {
                    let gb = nodes[b];
                    if ga >= gb {
                        kin_scalar.add(ga, gb, w * vals[a] * vals[b]);
                    }
                }
            }
        }
    }

    let mut kin_x = kin_scalar.clone();
    for &n in &spaces.constrained_x_nodes {
        kin_x.eliminate_index(n);
    }
    let mut kin_y = kin_scalar.clone();
    for &n in &spaces.constrained_y_nodes {
        kin_y.eliminate_index(n);
    }
    let chol_x = kin_x.cholesky()?;
    let chol_y = kin_y.cholesky()?;

    // Thermodynamic blocks, one per element.
    let nt = spaces.nloc_thermo;
    let mut blocks = Vec::with_capacity(mesh.element_count);
    let mut factors = Vec::with_capacity(mesh.element_count);
    for e in 0..mesh.element_count {
        let mut block = Array2::zeros((nt, nt));
        for q in 0..spaces.n_qp {
            let w = spaces.qp_weight[q] * det_j0 * geometry.rho0[e * spaces.n_qp + q];
            let tvals = &spaces.thermo_val[q];
            for a in 0..nt {
                for b in 0..nt {
                    block[[a, b]] += w * tvals[a] * tvals[b];
                }
            }
        }
        factors.push(dense_cholesky(&block)?);
        blocks.push(block);
    }

    Ok((
        MassMatrices {
            n_kin: spaces.n_kin,
            n_thermo: spaces.n_thermo,
            n_scalar: spaces.n_scalar,
            kin_scalar_raw: kin_scalar,
            kin_band: [kin_x, kin_y],
            kin_chol: [chol_x, chol_y],
            thermo_blocks: blocks,
            thermo_chol: factors,
            nloc_thermo: nt,
        },
        geometry,
    ))
}

impl MassMatrices {
    /// y = M_v x with the raw (unconstrained) kinematic mass matrix.
    pub fn apply_kin_raw(&self, x: &Array1<f64>) -> Array1<f64> {
        let ns = self.n_scalar;
        let mut out = Array1::zeros(self.n_kin);
        for c in 0..2 {
            let comp = x.slice(ndarray::s![c * ns..(c + 1) * ns]).to_owned();
            let y = self.kin_scalar_raw.matvec(&comp);
            out.slice_mut(ndarray::s![c * ns..(c + 1) * ns]).assign(&y);
        }
        out
    }

    /// y = M_v x with the boundary-eliminated kinematic operator
    /// (identity rows/columns on constrained dofs).
    pub fn apply_kin(&self, x: &Array1<f64>) -> Array1<f64> {
        let ns = self.n_scalar;
        let mut out = Array1::zeros(self.n_kin);
        for c in 0..2 {
            let comp = x.slice(ndarray::s![c * ns..(c + 1) * ns]).to_owned();
            let y = self.kin_band[c].matvec(&comp);
            out.slice_mut(ndarray::s![c * ns..(c + 1) * ns]).assign(&y);
        }
        out
    }

    /// Solve M_v y = x per component with the banded Cholesky factors.
    pub fn solve_kin(&self, x: &Array1<f64>) -> Array1<f64> {
        let ns = self.n_scalar;
        let mut out = Array1::zeros(self.n_kin);
        for c in 0..2 {
            let mut comp = x.slice(ndarray::s![c * ns..(c + 1) * ns]).to_owned();
            self.kin_chol[c].solve_in_place(&mut comp);
            out.slice_mut(ndarray::s![c * ns..(c + 1) * ns]).assign(&comp);
        }
        out
    }

    /// y = M_e x (block diagonal).
    pub fn apply_thermo(&self, x: &Array1<f64>) -> Array1<f64> {
        let nt = self.nloc_thermo;
        let mut out = Array1::zeros(self.n_thermo);
        for (e, block) in self.thermo_blocks.iter().enumerate() {
            for a in 0..nt {
                let mut acc = 0.0;
                for b in 0..nt {
                    acc += block[[a, b]] * x[e * nt + b];
                }
                out[e * nt + a] = acc;
            }
        }
        out
    }

    /// Solve M_e y = x per element block.
    pub fn solve_thermo(&self, x: &Array1<f64>) -> Array1<f64> {
        let nt = self.nloc_thermo;
        let mut out = Array1::zeros(self.n_thermo);
        for (e, l) in self.thermo_chol.iter().enumerate() {
            let b = Array1::from_iter((0..nt).map(|a| x[e * nt + a]));
            let y = dense_cholesky_solve(l, &b);
            for a in 0..nt {
                out[e * nt + a] = y[a];
            }
        }
        out
    }

    /// Applies M_v column-by-column; the SNS image of a basis.
    pub fn apply_kin_matrix(&self, basis: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(basis.dim());
        for (j, col) in basis.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&self.apply_kin(&col.to_owned()));
        }
        out
    }

    /// Applies M_e column-by-column; the SNS image of a basis.
    pub fn apply_thermo_matrix(&self, basis: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(basis.dim());
        for (j, col) in basis.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&self.apply_thermo(&col.to_owned()));
        }
        out
    }

    /// Total initial mass `1^T M_e 1 = integral of rho0`.
    pub fn total_mass(&self) -> f64 {
        self.thermo_blocks.iter().map(|b| b.iter().sum::<f64>()).sum()
    }

    /// Fingerprint over every stored matrix; constant over a run.
    pub fn checksum(&self) -> f64 {
        let mut s = self.kin_scalar_raw.checksum();
        s += self.kin_band[0].checksum() + self.kin_band[1].checksum();
        s += self
            .thermo_blocks
            .iter()
            .map(|b| b.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>();
        s
    }
}

/// Everything a solver needs about the spatial discretization: the mesh,
/// the FE spaces, the mass matrices, and the initial-configuration data.
pub struct DiscretizationData {
    pub refinement_level: usize,
    pub mesh: Mesh,
    pub spaces: FeSpaces,
    pub mass: MassMatrices,
    pub geometry: InitialGeometry,
}

/// Density field of the stratified two-gas initial condition: the heavy gas
/// (density `r`) sits above the interface y = 0, the light gas (density 1)
/// below. Elements select their material by element interior, not by the
/// shared interface line.
pub fn stratified_density(mesh: &Mesh, density_ratio: f64) -> impl Fn(usize, [f64; 2]) -> f64 {
    let centers_y: Vec<f64> = (0..mesh.element_count)
        .map(|e| mesh.element_origin(e)[1] + 0.5 * mesh.side)
        .collect();
    move |element, _point| {
        if centers_y[element] >= 0.0 {
            density_ratio
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn base_mesh_tiles_domain() {
        let mesh = build_mesh(0).unwrap();
        assert_eq!(mesh.element_count, 4);
        assert_eq!(mesh.side, 0.5);
        assert_relative_eq!(mesh.total_area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn element_counts_follow_refinement() {
        for level in 0..=4 {
            let mesh = build_mesh(level).unwrap();
            assert_eq!(mesh.element_count, 4 * 4usize.pow(level as u32));
            assert_relative_eq!(mesh.side, 0.5f64.powi(level as i32 + 1), epsilon = 0.0);
            assert_relative_eq!(mesh.total_area(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn level_two_matches_published_dof_counts() {
        let mesh = build_mesh(2).unwrap();
        assert_eq!(mesh.element_count, 64);
        assert_relative_eq!(mesh.side, 0.125, epsilon = 0.0);
        let spaces = build_spaces(&mesh, 2, 1).unwrap();
        assert_eq!(spaces.n_kin, 594);
        assert_eq!(spaces.n_thermo, 256);
    }

    #[test]
    fn dof_counts_levels_two_to_five() {
        let expected = [(2usize, 594usize, 256usize), (3, 2210, 1024), (4, 8514, 4096), (5, 33410, 16384)];
        for (level, n_kin, n_thermo) in expected {
            let mesh = build_mesh(level).unwrap();
            let spaces = build_spaces(&mesh, 2, 1).unwrap();
            assert_eq!(spaces.n_kin, n_kin, "level {level}");
            assert_eq!(spaces.n_thermo, n_thermo, "level {level}");
        }
    }

    #[test]
    fn q1_space_on_base_mesh() {
        let mesh = build_mesh(0).unwrap();
        let spaces = build_spaces(&mesh, 1, 0).unwrap();
        // 2 x 5 scalar grid.
        assert_eq!(spaces.n_kin, 20);
        assert_eq!(spaces.n_thermo, 4);
    }

    #[test]
    fn refinement_level_out_of_range() {
        assert!(build_mesh(7).is_err());
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        for n in 1..=6 {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for degree in 0..=(2 * n - 1) {
                let integral: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(&xi, &wi)| wi * xi.powi(degree as i32))
                    .sum();
                assert_relative_eq!(integral, 1.0 / (degree as f64 + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn unit_density_mass_is_domain_area() {
        let mesh = build_mesh(1).unwrap();
        let spaces = build_spaces(&mesh, 2, 1).unwrap();
        let (mass, _) = assemble_mass(&mesh, &spaces, |_, _| 1.0).unwrap();
        assert_relative_eq!(mass.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stratified_density_mass() {
        let mesh = build_mesh(2).unwrap();
        let spaces = build_spaces(&mesh, 2, 1).unwrap();
        let rho = stratified_density(&mesh, 2.0);
        let (mass, _) = assemble_mass(&mesh, &spaces, rho).unwrap();
        // integral of rho0 = (R + 1) / 2 for R = 2.
        assert_relative_eq!(mass.total_mass(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn q1_unit_square_row_sums() {
        // Single unit square (level 0 has 0.5-side squares; scale by the
        // exact area factor instead): Q1 mass with rho = 1 on a square of
        // side s has row sums s^2 / 4. Check partition of unity at level 0.
        let mesh = build_mesh(0).unwrap();
        let spaces = build_spaces(&mesh, 1, 1).unwrap();
        let (mass, _) = assemble_mass(&mesh, &spaces, |_, _| 1.0).unwrap();
        let area = mesh.side * mesh.side;
        for block in &mass.thermo_blocks {
            for row in block.rows() {
                assert_relative_eq!(row.sum(), area / 4.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn negative_density_rejected() {
        let mesh = build_mesh(0).unwrap();
        let spaces = build_spaces(&mesh, 2, 1).unwrap();
        assert!(assemble_mass(&mesh, &spaces, |_, p| p[1]).is_err());
    }

    #[test]
    fn mass_solve_round_trip() {
        let mesh = build_mesh(1).unwrap();
        let spaces = build_spaces(&mesh, 2, 1).unwrap();
        let rho = stratified_density(&mesh, 3.0);
        let (mass, _) = assemble_mass(&mesh, &spaces, rho).unwrap();
        let x = Array1::from_shape_fn(spaces.n_kin, |i| ((i * 7) % 13) as f64 - 6.0);
        let y = mass.apply_kin(&x);
        let back = mass.solve_kin(&y);
        for i in 0..spaces.n_kin {
            assert_relative_eq!(back[i], x[i], epsilon = 1e-10, max_relative = 1e-10);
        }
        let xe = Array1::from_shape_fn(spaces.n_thermo, |i| (i as f64 * 0.37).cos());
        let ye = mass.apply_thermo(&xe);
        let backe = mass.solve_thermo(&ye);
        for i in 0..spaces.n_thermo {
            assert_relative_eq!(backe[i], xe[i], epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn interface_nodes_sit_on_midline() {
        let mesh = build_mesh(2).unwrap();
        let spaces = build_spaces(&mesh, 2, 1).unwrap();
        assert_eq!(spaces.interface_nodes.len(), spaces.nodes_x);
        for &n in &spaces.interface_nodes {
            assert_eq!(spaces.node_coords[n][1], 0.0);
        }
        let dofs = spaces.interface_dofs();
        assert!(dofs.iter().all(|&d| d >= spaces.n_scalar()));
    }
}

impl FeSpaces {
    /// Coordinate of a scalar node (diagnostics).
    pub fn node_coord(&self, node: usize) -> [f64; 2] {
        self.node_coords[node]
    }
}
