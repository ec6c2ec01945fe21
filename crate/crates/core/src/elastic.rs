//! Elastic relaxation of the plastically distorted body: minimize the
//! St. Venant-Kirchhoff energy `W[y] = int 1/2 S:E det(vartheta) dV` over the
//! current placement `y` with Newton-Raphson and PCG inner solves.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{ElementEval, Patch};
use crate::kron::{interval_matrices, KronInverse};
use crate::krylov::{norm, pcg, Jacobi, Preconditioner, SolverConfig};
use crate::material::{inverse, matmul, svk_response, transpose, Mat3, Material};
use crate::plastic::{det3, PlasticField, ThetaPoint};
use crate::sparse::{BlockCsrMatrix, BlockPattern, Masked};

/// Condition on one face of the box.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FaceCondition {
    /// Natural boundary condition; contributes no surface term.
    #[default]
    TractionFree,
    /// Control points on the face are held at `x + displacement`.
    Dirichlet([f64; 3]),
}

/// Boundary conditions and rigid-body pinning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySpec {
    /// `faces[d][0]` is the face at the lower end of direction `d`.
    pub faces: [[FaceCondition; 2]; 3],
    /// Pin corner (-,-,-) in all components, corner (+,-,-) in components 2
    /// and 3, and corner (-,+,-) in component 3.
    pub pin_rigid_modes: bool,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self {
            faces: [[FaceCondition::TractionFree; 2]; 3],
            pin_rigid_modes: true,
        }
    }
}

impl BoundarySpec {
    /// Human-readable description recorded in run metadata.
    pub fn pinning_description(&self) -> &'static str {
        if self.pin_rigid_modes {
            "corner(-,-,-):y1,y2,y3; corner(+,-,-):y2,y3; corner(-,+,-):y3"
        } else {
            "none"
        }
    }

    /// `(dof, prescribed value)` for every constrained scalar unknown, with
    /// scalar index `3 alpha + component`.
    pub fn constrained_dofs(&self, patch: &Patch) -> Vec<(usize, f64)> {
        let basis = patch.basis();
        let dims = basis.dims();
        let pts = patch.control_points();
        let mut out = std::collections::BTreeMap::new();
        if self.pin_rigid_modes {
            let pins: [([usize; 3], &[usize]); 3] = [
                ([0, 0, 0], &[0, 1, 2]),
                ([dims[0] - 1, 0, 0], &[1, 2]),
                ([0, dims[1] - 1, 0], &[2]),
            ];
            for (idx, comps) in pins {
                let alpha = basis.flat_index(idx);
                for &c in comps {
                    out.insert(3 * alpha + c, pts[alpha][c]);
                }
            }
        }
        for alpha in 0..basis.len() {
            let idx = basis.multi_index(alpha);
            for d in 0..3 {
                for (side, at) in [(0, 0), (1, dims[d] - 1)] {
                    if idx[d] != at {
                        continue;
                    }
                    if let FaceCondition::Dirichlet(u) = self.faces[d][side] {
                        for c in 0..3 {
                            out.insert(3 * alpha + c, pts[alpha][c] + u[c]);
                        }
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    /// Number of scalar unknowns removed by the rigid-body pins.
    pub fn pinned_mode_count(&self) -> usize {
        if self.pin_rigid_modes {
            6
        } else {
            0
        }
    }
}

/// Preconditioner for the Newton systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ElasticPreconditioner {
    Jacobi,
    /// Shifted vector Laplacian by fast diagonalization; falls back to
    /// Jacobi off affine boxes.
    #[default]
    Kronecker,
}

impl std::str::FromStr for ElasticPreconditioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(Self::Jacobi),
            "kronecker" => Ok(Self::Kronecker),
            _ => Err(Error::validation(
                "solver.elastic_preconditioner",
                format!("unknown preconditioner `{s}` (jacobi | kronecker)"),
            )),
        }
    }
}

impl std::fmt::Display for ElasticPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Jacobi => "jacobi",
            Self::Kronecker => "kronecker",
        })
    }
}

/// NURBS coefficients of the current placement `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticState {
    pub y: Vec<[f64; 3]>,
}

impl ElasticState {
    pub fn as_flat(&self) -> Vec<f64> {
        self.y.iter().flatten().copied().collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        Self {
            y: v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }
}

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Debug, Clone, Copy)]
struct PointData {
    /// `vartheta^{-1}`.
    q: Mat3,
    /// Quadrature weight times `det vartheta`.
    wdet: f64,
}

/// Stress and strain diagnostics at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressPoint {
    /// Second Piola-Kirchhoff stress.
    pub s: Mat3,
    /// Push-forward `det(vartheta)/det(F) F S F^T`.
    pub cauchy: Mat3,
    /// Green strain.
    pub strain: Mat3,
    /// `det(dy/dx)`.
    pub det_f: f64,
    pub plastic: ThetaPoint,
}

/// One accepted Newton iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonStep {
    pub iteration: usize,
    pub residual: f64,
    pub energy: f64,
    /// Accepted line-search step length (zero for the initial state).
    pub step: f64,
    pub pcg_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub state: ElasticState,
    /// Newton steps taken.
    pub iterations: usize,
    /// `||f|| / ||f_0||`, zero when `f_0 = 0`.
    pub relative_residual: f64,
    pub history: Vec<NewtonStep>,
}

/// Discrete elastic problem on a fixed plastic field.
pub struct ElasticProblem {
    patch: Arc<Patch>,
    plastic: Arc<PlasticField>,
    material: Material,
    boundary: BoundarySpec,
    pattern: Arc<BlockPattern>,
    points: Vec<PointData>,
    constrained: Vec<(usize, f64)>,
    free: Vec<bool>,
    pub preconditioner: ElasticPreconditioner,
}

impl ElasticProblem {
    pub fn new(plastic: Arc<PlasticField>, material: Material, boundary: BoundarySpec) -> Result<Self> {
        material.validate()?;
        let patch = plastic.patch().clone();
        let rule = patch.default_rule();
        let mut ev = ElementEval::default();
        let elements = patch.elements();
        if elements.is_empty() {
            return Err(Error::InvalidPatch("no quadrature elements".into()));
        }
        let mut points = Vec::with_capacity(elements.len() * rule.len());
        for elem in &elements {
            patch.eval_element(elem, &rule, &mut ev)?;
            for (pt, theta) in plastic.theta_on_element(&ev).into_iter().enumerate() {
                let mut vt = theta;
                for (i, row) in vt.iter_mut().enumerate() {
                    row[i] += 1.0;
                }
                let det = det3(&vt);
                if !(det > 0.0) {
                    return Err(Error::DegeneratePlasticity { det });
                }
                let (q, _) = inverse(&vt).ok_or(Error::DegeneratePlasticity { det })?;
                points.push(PointData {
                    q,
                    wdet: ev.weights[pt] * det,
                });
            }
        }
        let constrained = boundary.constrained_dofs(&patch);
        let mut free = vec![true; 3 * patch.num_basis()];
        for &(d, _) in &constrained {
            free[d] = false;
        }
        let pattern = Arc::new(BlockPattern::from_basis(patch.basis()));
        Ok(Self {
            patch,
            plastic,
            material,
            boundary,
            pattern,
            points,
            constrained,
            free,
            preconditioner: ElasticPreconditioner::default(),
        })
    }

    pub fn patch(&self) -> &Arc<Patch> {
        &self.patch
    }

    pub fn plastic(&self) -> &Arc<PlasticField> {
        &self.plastic
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }

    /// `false` for constrained scalar unknowns.
    pub fn free_mask(&self) -> &[bool] {
        &self.free
    }

    /// `y = x` with prescribed values applied.
    pub fn initial_state(&self) -> ElasticState {
        let mut y = self.patch.control_points().to_vec();
        for &(d, v) in &self.constrained {
            y[d / 3][d % 3] = v;
        }
        ElasticState { y }
    }

    fn check_state(&self, state: &ElasticState) -> Result<()> {
        if state.y.len() != self.patch.num_basis() {
            return Err(Error::invalid("state has the wrong number of coefficients"));
        }
        Ok(())
    }

    /// Visits every quadrature point with its basis data and `F = dy/dx`,
    /// formed as `I + grad(y - x)` so that `y = x` gives `F = I` exactly.
    fn for_each_point<V>(&self, state: &ElasticState, mut visit: V) -> Result<()>
    where
        V: FnMut(&ElementEval, usize, &PointData, &Mat3) -> Result<()>,
    {
        self.check_state(state)?;
        let rule = self.patch.default_rule();
        let mut ev = ElementEval::default();
        let pts = self.patch.control_points();
        let mut k = 0;
        for elem in self.patch.elements() {
            self.patch.eval_element(&elem, &rule, &mut ev)?;
            for pt in 0..ev.npts {
                let grads = ev.point_grads(pt);
                let mut f = IDENTITY;
                for (a, &alpha) in ev.indices.iter().enumerate() {
                    let (y, x) = (state.y[alpha], pts[alpha]);
                    for i in 0..3 {
                        let u = y[i] - x[i];
                        for d in 0..3 {
                            f[i][d] += u * grads[a][d];
                        }
                    }
                }
                let det = det3(&f);
                if !(det > 0.0) {
                    return Err(Error::InvertedElement { det });
                }
                visit(&ev, pt, &self.points[k], &f)?;
                k += 1;
            }
        }
        Ok(())
    }

    pub fn strain_energy(&self, state: &ElasticState) -> Result<f64> {
        let mut w = 0.0;
        self.for_each_point(state, |_, _, pd, f| {
            w += pd.wdet * svk_response(f, &pd.q, &self.material).energy_density;
            Ok(())
        })?;
        Ok(w)
    }

    /// Gradient of the energy with respect to every coefficient,
    /// `f^alpha_m = int (F S)_ml dN_alpha/dx^l det(vartheta)`.
    pub fn energy_gradient(&self, state: &ElasticState) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 3 * state.y.len()];
        self.for_each_point(state, |ev, pt, pd, f| {
            let r = svk_response(f, &pd.q, &self.material);
            // F S = H S~ Q^T.
            let m = matmul(&matmul(&r.h, &r.s_tilde), &transpose(&pd.q));
            for (a, g) in ev.point_grads(pt).iter().enumerate() {
                let alpha = ev.indices[a];
                for i in 0..3 {
                    out[3 * alpha + i] += pd.wdet * (m[i][0] * g[0] + m[i][1] * g[1] + m[i][2] * g[2]);
                }
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Energy gradient with constrained rows zeroed.
    pub fn residual_vector(&self, state: &ElasticState) -> Result<Vec<f64>> {
        let mut f = self.energy_gradient(state)?;
        for (v, &free) in f.iter_mut().zip(&self.free) {
            if !free {
                *v = 0.0;
            }
        }
        Ok(f)
    }

    /// Consistent tangent: geometric part `delta_mn dN_a . S dN_b` plus
    /// material part `dE/dy^a_m : C : dE/dy^b_n`, both weighted by
    /// `det(vartheta)`.
    pub fn tangent_matrix(&self, state: &ElasticState) -> Result<BlockCsrMatrix<3>> {
        let mut matrix = BlockCsrMatrix::<3>::zeros(self.pattern.clone());
        let lam = self.material.lame_lambda();
        let mu = self.material.shear_modulus;
        let nloc = self.patch.basis().local_len();
        let mut local = vec![[[0.0; 3]; 3]; nloc * nloc];
        let mut v = vec![[0.0; 3]; nloc];
        let mut sv = vec![[0.0; 3]; nloc];
        let mut c = vec![[0.0; 3]; nloc];
        let mut last_first = usize::MAX;
        let flush = |matrix: &mut BlockCsrMatrix<3>, local: &mut [[[f64; 3]; 3]], indices: &[usize]| {
            for a in 0..nloc {
                for b in a..nloc {
                    let blk = local[a * nloc + b];
                    let pos = self.pattern.position(indices[a], indices[b]).expect("element coupling");
                    let dst = matrix.block_mut(pos);
                    for r in 0..3 {
                        for s in 0..3 {
                            dst[r][s] += blk[r][s];
                        }
                    }
                    if a != b {
                        let pos = self.pattern.position(indices[b], indices[a]).expect("symmetric pattern");
                        let dst = matrix.block_mut(pos);
                        for r in 0..3 {
                            for s in 0..3 {
                                dst[r][s] += blk[s][r];
                            }
                        }
                    }
                }
            }
            local.iter_mut().for_each(|b| *b = [[0.0; 3]; 3]);
        };
        let mut indices: Vec<usize> = Vec::new();
        self.for_each_point(state, |ev, pt, pd, f| {
            if pt == 0 && last_first != usize::MAX {
                flush(&mut matrix, &mut local, &indices);
            }
            if pt == 0 {
                indices.clone_from(&ev.indices);
                last_first = ev.indices[0];
            }
            let r = svk_response(f, &pd.q, &self.material);
            let h = r.h;
            let w = pd.wdet;
            let grads = ev.point_grads(pt);
            for a in 0..nloc {
                let g = grads[a];
                // v_a = Q^T grad N_a.
                v[a] = std::array::from_fn(|k| pd.q[0][k] * g[0] + pd.q[1][k] * g[1] + pd.q[2][k] * g[2]);
                sv[a] = std::array::from_fn(|k| (0..3).map(|l| r.s_tilde[k][l] * v[a][l]).sum());
                c[a] = std::array::from_fn(|m| h[m][0] * v[a][0] + h[m][1] * v[a][1] + h[m][2] * v[a][2]);
            }
            let u: Mat3 = std::array::from_fn(|m| {
                std::array::from_fn(|n| h[m][0] * h[n][0] + h[m][1] * h[n][1] + h[m][2] * h[n][2])
            });
            for a in 0..nloc {
                let (va, ca, sva) = (v[a], c[a], sv[a]);
                for b in a..nloc {
                    let (vb, cb) = (v[b], c[b]);
                    let vv = va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2];
                    let geo = sva[0] * vb[0] + sva[1] * vb[1] + sva[2] * vb[2];
                    let blk = &mut local[a * nloc + b];
                    for m in 0..3 {
                        for n in 0..3 {
                            let mut e = lam * ca[m] * cb[n] + mu * (u[m][n] * vv + cb[m] * ca[n]);
                            if m == n {
                                e += geo;
                            }
                            blk[m][n] += w * e;
                        }
                    }
                }
            }
            Ok(())
        })?;
        if last_first != usize::MAX {
            flush(&mut matrix, &mut local, &indices);
        }
        Ok(matrix)
    }

    fn build_preconditioner(&self, tangent: &BlockCsrMatrix<3>) -> Result<Box<dyn Preconditioner>> {
        if self.preconditioner == ElasticPreconditioner::Kronecker
            && self.patch.basis().has_unit_weights()
        {
            if let Some(b) = self.patch.box_domain() {
                let knots = self.patch.basis().knots();
                let mats = [
                    interval_matrices(&knots[0], b.extents[0]),
                    interval_matrices(&knots[1], b.extents[1]),
                    interval_matrices(&knots[2], b.extents[2]),
                ];
                let lmax = b.extents.iter().fold(0.0_f64, |m, &e| m.max(e));
                let mu = self.material.shear_modulus;
                let inv = KronInverse::new(&mats, [false; 3], mu, mu / (lmax * lmax))?;
                return Ok(Box::new(VectorKron {
                    inv,
                    free: self.free.clone(),
                }));
            }
        }
        Ok(Box::new(Jacobi::from_diagonal_masked(&tangent.diagonal(), &self.free)?))
    }

    /// Newton-Raphson from `y = x` with backtracking on the residual norm.
    pub fn newton_solve(&self, config: &SolverConfig) -> Result<NewtonSolution> {
        config.validate()?;
        let mut state = self.initial_state();
        let mut f = self.residual_vector(&state)?;
        let mut rnorm = norm(&f);
        let r0 = rnorm;
        let mut history = vec![NewtonStep {
            iteration: 0,
            residual: rnorm,
            energy: self.strain_energy(&state)?,
            step: 0.0,
            pcg_iterations: 0,
        }];
        if r0 == 0.0 {
            return Ok(NewtonSolution {
                state,
                iterations: 0,
                relative_residual: 0.0,
                history,
            });
        }
        let target = config.newton_tol * r0;
        for it in 1..=config.newton_max_iter {
            let k = self.tangent_matrix(&state)?;
            let pre = self.build_preconditioner(&k)?;
            let op = Masked { op: &k, free: &self.free };
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let sol = pcg(&op, &rhs, pre.as_ref(), config.pcg_tol, config.pcg_max_iter)?;
            drop(k);
            let base = state.as_flat();
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=config.max_backtracks {
                let trial: Vec<f64> = base.iter().zip(&sol.x).map(|(y, d)| y + step * d).collect();
                let trial = ElasticState::from_flat(&trial);
                match self.residual_vector(&trial) {
                    Ok(ft) => {
                        let tn = norm(&ft);
                        if tn < rnorm {
                            accepted = Some((trial, ft, tn));
                            break;
                        }
                    }
                    Err(Error::InvertedElement { .. }) => {}
                    Err(e) => return Err(e),
                }
                step *= 0.5;
            }
            let Some((trial, ft, tn)) = accepted else {
                return Err(Error::NonConvergence {
                    solver: "newton",
                    iterations: it,
                    residual: rnorm / r0,
                });
            };
            state = trial;
            f = ft;
            rnorm = tn;
            history.push(NewtonStep {
                iteration: it,
                residual: rnorm,
                energy: self.strain_energy(&state)?,
                step,
                pcg_iterations: sol.iterations,
            });
            if rnorm <= target {
                return Ok(NewtonSolution {
                    state,
                    iterations: it,
                    relative_residual: rnorm / r0,
                    history,
                });
            }
        }
        Err(Error::NonConvergence {
            solver: "newton",
            iterations: config.newton_max_iter,
            residual: rnorm / r0,
        })
    }

    /// Stress, strain and push-forward at parameter `t`.
    pub fn stress_at(&self, state: &ElasticState, t: [f64; 3]) -> Result<StressPoint> {
        let e = self.patch.eval_physical(t)?;
        let pts = self.patch.control_points();
        let mut f = IDENTITY;
        for (a, &alpha) in e.indices.iter().enumerate() {
            for i in 0..3 {
                let u = state.y[alpha][i] - pts[alpha][i];
                for d in 0..3 {
                    f[i][d] += u * e.grads[a][d];
                }
            }
        }
        let plastic = self.plastic.theta_at(t)?;
        let (q, _) = inverse(&plastic.vartheta).ok_or(Error::DegeneratePlasticity { det: plastic.det })?;
        let r = svk_response(&f, &q, &self.material);
        let det_f = det3(&f);
        let fs = matmul(&matmul(&f, &r.s), &transpose(&f));
        let scale = plastic.det / det_f;
        Ok(StressPoint {
            s: r.s,
            cauchy: fs.map(|row| row.map(|v| v * scale)),
            strain: crate::material::green_strain(&f, &plastic.vartheta),
            det_f,
            plastic,
        })
    }

    pub fn stress_at_point(&self, state: &ElasticState, x: [f64; 3]) -> Result<StressPoint> {
        self.stress_at(state, self.patch.inverse_map(x)?)
    }
}

struct VectorKron {
    inv: KronInverse,
    free: Vec<bool>,
}

impl Preconditioner for VectorKron {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for c in 0..3 {
            self.inv.apply_strided(r, z, 3, c);
        }
        for (v, &f) in z.iter_mut().zip(&self.free) {
            if !f {
                *v = 0.0;
            }
        }
    }
}

/// Writes `alpha,y1,y2,y3` rows after a header carrying `config_hash`.
pub fn write_state<W: Write>(state: &ElasticState, config_hash: &str, mut out: W) -> Result<()> {
    writeln!(out, "# elastic-state v1")?;
    writeln!(out, "# config_hash {config_hash}")?;
    writeln!(out, "alpha,y1,y2,y3")?;
    for (a, y) in state.y.iter().enumerate() {
        writeln!(out, "{a},{:.17e},{:.17e},{:.17e}", y[0], y[1], y[2])?;
    }
    Ok(())
}

pub fn read_state<R: BufRead>(input: R) -> Result<ElasticState> {
    let mut y = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.starts_with('#') || line.starts_with("alpha") || line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(Error::Parse(format!("expected 4 columns in `{line}`")));
        }
        y.push([v[0], v[1], v[2]]);
    }
    Ok(ElasticState { y })
}

/// Writes the Newton history as CSV.
pub fn write_newton_history<W: Write>(history: &[NewtonStep], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,residual,energy,step,pcg_iterations")?;
    for h in history {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{}",
            h.iteration, h.residual, h.energy, h.step, h.pcg_iterations
        )?;
    }
    Ok(())
}
