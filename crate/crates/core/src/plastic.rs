//! Plastic distortion from the torsion: minimize `||tau - dTheta||^2` subject
//! to `delta Theta = 0` and `Theta(n) = 0` on the boundary.
//!
//! For each Cartesian index `i` the unknowns `(Theta^i_1, Theta^i_2,
//! Theta^i_3, lambda^i)` are interleaved per basis function, giving a 4x4
//! block system whose matrix does not depend on `i`:
//!
//! ```text
//! K[m][l] = int dN_a . dN_b delta_ml - d_l N_a d_m N_b
//! B[k]    = int N_a d_k N_b          (multiplier row, Theta_k column)
//! rhs_m   = -int T^i_mj d_j N_a
//! ```

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::basis::{KnotVector, TensorBasis3D};
use crate::dislocation::TorsionField;
use crate::error::{Error, Result};
use crate::geometry::{ElementEval, Patch};
use crate::kron::{interval_matrices, KronInverse};
use crate::krylov::{minres, Identity, Jacobi, Preconditioner, SolverConfig};
use crate::sparse::{BlockCsrMatrix, BlockPattern, Masked};

/// Preconditioner used for the plastic saddle-point system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlasticPreconditioner {
    /// Plain MINRES.
    None,
    /// `|diag K|` on the distortion block, lumped mass on the multiplier block.
    Diagonal,
    /// Tensor-product Laplacian on each distortion block and mass matrix on
    /// the multiplier block. Falls back to `Diagonal` off affine boxes.
    #[default]
    Kronecker,
}

impl std::str::FromStr for PlasticPreconditioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "diagonal" => Ok(Self::Diagonal),
            "kronecker" => Ok(Self::Kronecker),
            _ => Err(Error::validation(
                "solver.plastic_preconditioner",
                format!("unknown preconditioner `{s}` (none | diagonal | kronecker)"),
            )),
        }
    }
}

impl std::fmt::Display for PlasticPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Diagonal => "diagonal",
            Self::Kronecker => "kronecker",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlasticOptions {
    /// Fix one multiplier coefficient per component to remove the constant
    /// null mode.
    pub pin_multiplier: bool,
    pub preconditioner: PlasticPreconditioner,
}

impl Default for PlasticOptions {
    fn default() -> Self {
        Self {
            pin_multiplier: true,
            preconditioner: PlasticPreconditioner::Kronecker,
        }
    }
}

/// Assembled saddle-point system shared by the three Cartesian components.
#[derive(Debug, Clone)]
pub struct PlasticSystem {
    pub matrix: BlockCsrMatrix<4>,
    /// Right-hand side per Cartesian index `i`, interleaved like the matrix.
    pub rhs: [Vec<f64>; 3],
    /// `false` for eliminated unknowns.
    pub free: Vec<bool>,
    /// `int N_a` per basis function.
    pub lumped_mass: Vec<f64>,
}

impl PlasticSystem {
    pub fn num_basis(&self) -> usize {
        self.lumped_mass.len()
    }

    pub fn dim(&self) -> usize {
        4 * self.num_basis()
    }
}

/// Assembles the 4x4 block matrix and the three right-hand sides.
pub fn assemble_plastic_system(patch: &Patch, torsion: &TorsionField) -> Result<PlasticSystem> {
    let basis = patch.basis();
    let n = basis.len();
    let elements = patch.elements();
    if elements.is_empty() || n == 0 {
        return Err(Error::InvalidPatch("no quadrature elements".into()));
    }
    let pattern = Arc::new(BlockPattern::from_basis(basis));
    let mut matrix = BlockCsrMatrix::<4>::zeros(pattern.clone());
    let mut rhs = [vec![0.0; 4 * n], vec![0.0; 4 * n], vec![0.0; 4 * n]];
    let mut lumped_mass = vec![0.0; n];
    let has_torsion = !torsion.is_zero();

    let rule = patch.default_rule();
    let nloc = basis.local_len();
    let mut ev = ElementEval::default();
    let mut local = vec![[[0.0; 4]; 4]; nloc * nloc];
    for elem in &elements {
        patch.eval_element(elem, &rule, &mut ev)?;
        local.iter_mut().for_each(|b| *b = [[0.0; 4]; 4]);
        for pt in 0..ev.npts {
            let w = ev.weights[pt];
            let vals = ev.point_values(pt);
            let grads = ev.point_grads(pt);
            let t = if has_torsion {
                Some(torsion.coefficients(ev.x[pt]))
            } else {
                None
            };
            for a in 0..nloc {
                let alpha = ev.indices[a];
                let ga = grads[a];
                let gaw = [ga[0] * w, ga[1] * w, ga[2] * w];
                let vaw = vals[a] * w;
                lumped_mass[alpha] += vaw;
                if let Some(t) = &t {
                    for (i, rhs_i) in rhs.iter_mut().enumerate() {
                        for m in 0..3 {
                            let s: f64 = (0..3).map(|j| t.component(i, m, j) * gaw[j]).sum();
                            rhs_i[4 * alpha + m] -= s;
                        }
                    }
                }
                for b in a..nloc {
                    let gb = grads[b];
                    let vb = vals[b];
                    let dot = gaw[0] * gb[0] + gaw[1] * gb[1] + gaw[2] * gb[2];
                    let blk = &mut local[a * nloc + b];
                    for m in 0..3 {
                        for l in 0..3 {
                            blk[m][l] -= gaw[l] * gb[m];
                        }
                        blk[m][m] += dot;
                        blk[3][m] += vaw * gb[m];
                        blk[m][3] += vb * gaw[m];
                    }
                }
            }
        }
        for a in 0..nloc {
            let alpha = ev.indices[a];
            for b in a..nloc {
                let beta = ev.indices[b];
                let blk = local[a * nloc + b];
                let pos = pattern.position(alpha, beta).expect("pattern covers element couplings");
                let dst = matrix.block_mut(pos);
                for r in 0..4 {
                    for c in 0..4 {
                        dst[r][c] += blk[r][c];
                    }
                }
                if a != b {
                    let pos = pattern.position(beta, alpha).expect("pattern is symmetric");
                    let dst = matrix.block_mut(pos);
                    for r in 0..4 {
                        for c in 0..4 {
                            dst[r][c] += blk[c][r];
                        }
                    }
                }
            }
        }
    }
    Ok(PlasticSystem {
        matrix,
        rhs,
        free: vec![true; 4 * n],
        lumped_mass,
    })
}

/// Eliminates `Theta^i_j` at every control coefficient on a face normal to
/// `x^j`. Requires an affine box patch.
pub fn apply_normal_bc(system: &mut PlasticSystem, patch: &Patch) -> Result<()> {
    if patch.box_domain().is_none() {
        return Err(Error::UnsupportedGeometry(
            "boundary condition needs axis-aligned faces".into(),
        ));
    }
    let basis = patch.basis();
    let dims = basis.dims();
    for alpha in 0..basis.len() {
        let idx = basis.multi_index(alpha);
        for j in 0..3 {
            if idx[j] == 0 || idx[j] + 1 == dims[j] {
                system.free[4 * alpha + j] = false;
            }
        }
    }
    for rhs in &mut system.rhs {
        for (v, &f) in rhs.iter_mut().zip(&system.free) {
            if !f {
                *v = 0.0;
            }
        }
    }
    Ok(())
}

/// Block-diagonal preconditioner built from tensor-product inverses.
struct KroneckerBlocks {
    theta: [KronInverse; 3],
    lambda: KronInverse,
    free: Vec<bool>,
}

impl KroneckerBlocks {
    fn new(patch: &Patch, free: Vec<bool>) -> Result<Self> {
        let b = patch
            .box_domain()
            .ok_or_else(|| Error::UnsupportedGeometry("not an affine box".into()))?;
        let knots = patch.basis().knots();
        let mats = [
            interval_matrices(&knots[0], b.extents[0]),
            interval_matrices(&knots[1], b.extents[1]),
            interval_matrices(&knots[2], b.extents[2]),
        ];
        let theta = [
            KronInverse::new(&mats, [true, false, false], 1.0, 0.0)?,
            KronInverse::new(&mats, [false, true, false], 1.0, 0.0)?,
            KronInverse::new(&mats, [false, false, true], 1.0, 0.0)?,
        ];
        let lambda = KronInverse::new(&mats, [false; 3], 0.0, 1.0)?;
        Ok(Self { theta, lambda, free })
    }
}

impl Preconditioner for KroneckerBlocks {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for (m, inv) in self.theta.iter().enumerate() {
            inv.apply_strided(r, z, 4, m);
        }
        self.lambda.apply_strided(r, z, 4, 3);
        for (v, &f) in z.iter_mut().zip(&self.free) {
            if !f {
                *v = 0.0;
            }
        }
    }
}

fn diagonal_blocks(system: &PlasticSystem) -> Result<Jacobi> {
    let mut d = system.matrix.diagonal();
    for (a, m) in system.lumped_mass.iter().enumerate() {
        d[4 * a + 3] = *m;
    }
    for v in &mut d {
        *v = v.abs();
    }
    Jacobi::from_diagonal_masked(&d, &system.free)
}

/// Per-component solver statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSolve {
    pub iterations: usize,
    /// Final absolute residual `||b - A x||_2`.
    pub residual: f64,
    pub relative_residual: f64,
    pub history: Vec<f64>,
}

/// Plastic distortion `Theta` and multiplier `lambda` as NURBS coefficients.
#[derive(Debug, Clone)]
pub struct PlasticField {
    patch: Arc<Patch>,
    /// `theta[alpha][i][j] = (Theta_alpha)^i_j`.
    pub theta: Vec<[[f64; 3]; 3]>,
    /// `lambda[alpha][i]`.
    pub lambda: Vec<[f64; 3]>,
}

/// Quality measures of a plastic solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualReport {
    /// `||tau - dTheta||_L2`.
    pub structure_residual: f64,
    /// `||delta Theta||_L2`.
    pub divergence_residual: f64,
    /// Largest final MINRES residual over the three components.
    pub minres_residual: f64,
    /// `||Theta||_L2`.
    pub theta_norm: f64,
}

/// Pointwise plastic distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaPoint {
    pub theta: [[f64; 3]; 3],
    /// `I + Theta`.
    pub vartheta: [[f64; 3]; 3],
    pub det: f64,
}

/// Full result of [`solve_plastic`].
#[derive(Debug, Clone)]
pub struct PlasticSolution {
    pub field: PlasticField,
    pub report: ResidualReport,
    pub components: [ComponentSolve; 3],
}

pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl PlasticField {
    pub fn zero(patch: Arc<Patch>) -> Self {
        let n = patch.num_basis();
        Self {
            patch,
            theta: vec![[[0.0; 3]; 3]; n],
            lambda: vec![[0.0; 3]; n],
        }
    }

    pub fn patch(&self) -> &Arc<Patch> {
        &self.patch
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            patch: self.patch.clone(),
            theta: self.theta.iter().map(|m| m.map(|r| r.map(|v| v * s))).collect(),
            lambda: self.lambda.iter().map(|r| r.map(|v| v * s)).collect(),
        }
    }

    /// `Theta`, `vartheta = I + Theta` and `det vartheta` at parameter `t`.
    pub fn theta_at(&self, t: [f64; 3]) -> Result<ThetaPoint> {
        let e = self.patch.basis().eval(t)?;
        let mut theta = [[0.0; 3]; 3];
        for (k, &alpha) in e.indices.iter().enumerate() {
            let c = &self.theta[alpha];
            for i in 0..3 {
                for j in 0..3 {
                    theta[i][j] += e.values[k] * c[i][j];
                }
            }
        }
        finish_theta(theta)
    }

    /// Same as [`PlasticField::theta_at`] at a physical point.
    pub fn theta_at_point(&self, x: [f64; 3]) -> Result<ThetaPoint> {
        self.theta_at(self.patch.inverse_map(x)?)
    }

    /// `dTheta^i_j / dx^k` as `[i][j][k]` at parameter `t`.
    pub fn theta_gradient(&self, t: [f64; 3]) -> Result<[[[f64; 3]; 3]; 3]> {
        let e = self.patch.eval_physical(t)?;
        let mut g = [[[0.0; 3]; 3]; 3];
        for (k, &alpha) in e.indices.iter().enumerate() {
            let c = &self.theta[alpha];
            for i in 0..3 {
                for j in 0..3 {
                    for d in 0..3 {
                        g[i][j][d] += e.grads[k][d] * c[i][j];
                    }
                }
            }
        }
        Ok(g)
    }

    /// `Theta` at every point of an evaluated element.
    pub fn theta_on_element(&self, ev: &ElementEval) -> Vec<[[f64; 3]; 3]> {
        (0..ev.npts)
            .map(|pt| {
                let vals = ev.point_values(pt);
                let mut theta = [[0.0; 3]; 3];
                for (k, &alpha) in ev.indices.iter().enumerate() {
                    let c = &self.theta[alpha];
                    for i in 0..3 {
                        for j in 0..3 {
                            theta[i][j] += vals[k] * c[i][j];
                        }
                    }
                }
                theta
            })
            .collect()
    }

    /// Largest `|Theta^i_j|` over the control coefficients.
    pub fn max_abs_coefficient(&self, i: usize, j: usize) -> f64 {
        self.theta.iter().fold(0.0, |m, c| m.max(c[i][j].abs()))
    }
}

fn finish_theta(theta: [[f64; 3]; 3]) -> Result<ThetaPoint> {
    let mut vartheta = theta;
    for (i, row) in vartheta.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let det = det3(&vartheta);
    if !(det > 0.0) {
        return Err(Error::DegeneratePlasticity { det });
    }
    Ok(ThetaPoint {
        theta,
        vartheta,
        det,
    })
}

/// Assembles, constrains and solves the three component systems.
pub fn solve_plastic(
    patch: &Arc<Patch>,
    torsion: &TorsionField,
    config: &SolverConfig,
    options: &PlasticOptions,
) -> Result<PlasticSolution> {
    config.validate()?;
    let mut system = assemble_plastic_system(patch, torsion)?;
    apply_normal_bc(&mut system, patch)?;
    if options.pin_multiplier {
        system.free[3] = false;
        for rhs in &mut system.rhs {
            rhs[3] = 0.0;
        }
    }
    solve_system(patch, &system, torsion, config, options)
}

fn solve_system(
    patch: &Arc<Patch>,
    system: &PlasticSystem,
    torsion: &TorsionField,
    config: &SolverConfig,
    options: &PlasticOptions,
) -> Result<PlasticSolution> {
    let op = Masked {
        op: &system.matrix,
        free: &system.free,
    };
    let kron = match options.preconditioner {
        PlasticPreconditioner::Kronecker if patch.box_domain().is_some() && patch.basis().has_unit_weights() => {
            Some(KroneckerBlocks::new(patch, system.free.clone())?)
        }
        _ => None,
    };
    let diag = match (options.preconditioner, &kron) {
        (PlasticPreconditioner::None, _) | (_, Some(_)) => None,
        _ => Some(diagonal_blocks(system)?),
    };
    let identity_masked = IdentityMasked(&system.free);
    let precond: &dyn Preconditioner = match (&kron, &diag) {
        (Some(k), _) => k,
        (None, Some(d)) => d,
        (None, None) => &identity_masked,
    };

    let n = system.num_basis();
    let mut field = PlasticField::zero(patch.clone());
    let mut components = Vec::with_capacity(3);
    for (i, rhs) in system.rhs.iter().enumerate() {
        let out = minres(&op, rhs, precond, config.minres_tol, config.minres_max_iter)?;
        for alpha in 0..n {
            for j in 0..3 {
                field.theta[alpha][i][j] = out.x[4 * alpha + j];
            }
            field.lambda[alpha][i] = out.x[4 * alpha + 3];
        }
        components.push(ComponentSolve {
            iterations: out.iterations,
            residual: out.residual,
            relative_residual: out.relative_residual,
            history: out.history,
        });
    }
    let components: [ComponentSolve; 3] = components.try_into().expect("three components");
    let mut report = residual_norms(&field, torsion)?;
    report.minres_residual = components.iter().fold(0.0, |m, c| m.max(c.residual));
    Ok(PlasticSolution {
        field,
        report,
        components,
    })
}

struct IdentityMasked<'a>(&'a [bool]);

impl Preconditioner for IdentityMasked<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        Identity.apply(r, z);
        for (v, &f) in z.iter_mut().zip(self.0) {
            if !f {
                *v = 0.0;
            }
        }
    }
}

/// `L2` norms of the structure-equation residual `tau - dTheta`, of the
/// co-differential `delta Theta^i = -d_k Theta^i_k`, and of `Theta`.
/// The MINRES entry is left at zero.
pub fn residual_norms(field: &PlasticField, torsion: &TorsionField) -> Result<ResidualReport> {
    let patch = field.patch();
    let rule = patch.default_rule();
    let mut ev = ElementEval::default();
    let (mut c2, mut d2, mut t2) = (0.0, 0.0, 0.0);
    for elem in patch.elements() {
        patch.eval_element(&elem, &rule, &mut ev)?;
        for pt in 0..ev.npts {
            let w = ev.weights[pt];
            let vals = ev.point_values(pt);
            let grads = ev.point_grads(pt);
            let mut th = [[0.0; 3]; 3];
            let mut g = [[[0.0; 3]; 3]; 3];
            for (k, &alpha) in ev.indices.iter().enumerate() {
                let c = &field.theta[alpha];
                for i in 0..3 {
                    for j in 0..3 {
                        th[i][j] += vals[k] * c[i][j];
                        for d in 0..3 {
                            g[i][j][d] += grads[k][d] * c[i][j];
                        }
                    }
                }
            }
            let tau = torsion.coefficients(ev.x[pt]);
            for i in 0..3 {
                for (j, k) in [(0, 1), (0, 2), (1, 2)] {
                    let d_theta = g[i][k][j] - g[i][j][k];
                    let c = tau.component(i, j, k) - d_theta;
                    c2 += w * c * c;
                }
                let div = g[i][0][0] + g[i][1][1] + g[i][2][2];
                d2 += w * div * div;
                for j in 0..3 {
                    t2 += w * th[i][j] * th[i][j];
                }
            }
        }
    }
    Ok(ResidualReport {
        structure_residual: c2.sqrt(),
        divergence_residual: d2.sqrt(),
        minres_residual: 0.0,
        theta_norm: t2.sqrt(),
    })
}

/// Weak divergence `int eta_a d_k Theta^i_k` against every multiplier test
/// function, per Cartesian index.
pub fn weak_divergence(field: &PlasticField) -> Result<Vec<[f64; 3]>> {
    let patch = field.patch();
    let rule = patch.default_rule();
    let mut ev = ElementEval::default();
    let mut out = vec![[0.0; 3]; patch.num_basis()];
    for elem in patch.elements() {
        patch.eval_element(&elem, &rule, &mut ev)?;
        for pt in 0..ev.npts {
            let w = ev.weights[pt];
            let vals = ev.point_values(pt);
            let grads = ev.point_grads(pt);
            let mut div = [0.0; 3];
            for (k, &alpha) in ev.indices.iter().enumerate() {
                let c = &field.theta[alpha];
                for (i, d) in div.iter_mut().enumerate() {
                    *d += (0..3).map(|j| grads[k][j] * c[i][j]).sum::<f64>();
                }
            }
            for (k, &alpha) in ev.indices.iter().enumerate() {
                for i in 0..3 {
                    out[alpha][i] += w * vals[k] * div[i];
                }
            }
        }
    }
    Ok(out)
}

/// `oint Theta^i_j dx^j` along a closed polyline of parameter points,
/// integrated with `quad` Gauss points on every piece between knot lines.
pub fn burgers_circuit(field: &PlasticField, parameter_loop: &[[f64; 3]], quad: usize) -> Result<[f64; 3]> {
    if parameter_loop.len() < 4 {
        return Err(Error::InvalidLoop("need at least three distinct vertices".into()));
    }
    let first = parameter_loop[0];
    let last = parameter_loop[parameter_loop.len() - 1];
    let gap = (0..3).map(|d| (first[d] - last[d]).abs()).fold(0.0, f64::max);
    if gap > 1e-12 {
        return Err(Error::InvalidLoop("polyline is not closed".into()));
    }
    if quad == 0 {
        return Err(Error::invalid("quadrature order must be positive"));
    }
    let patch = field.patch();
    let knots = patch.basis().knots();
    let (gp, gw) = crate::geometry::gauss_legendre(quad);
    let mut total = [0.0; 3];
    for seg in parameter_loop.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let mut cuts = vec![0.0, 1.0];
        for d in 0..3 {
            let delta = b[d] - a[d];
            if delta == 0.0 {
                continue;
            }
            for &k in knots[d].interior_breaks().iter() {
                let s = (k - a[d]) / delta;
                if s > 0.0 && s < 1.0 {
                    cuts.push(s);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for piece in cuts.windows(2) {
            let (s0, s1) = (piece[0], piece[1]);
            let half = 0.5 * (s1 - s0);
            for (&g, &w) in gp.iter().zip(&gw) {
                let s = s0 + half * (g + 1.0);
                let t: [f64; 3] = std::array::from_fn(|d| a[d] + s * (b[d] - a[d]));
                let jac = patch.jacobian(t)?;
                let dxds: [f64; 3] =
                    std::array::from_fn(|r| (0..3).map(|c| jac.matrix[(r, c)] * (b[c] - a[c])).sum());
                let th = raw_theta(field, t)?;
                for i in 0..3 {
                    total[i] += w * half * (0..3).map(|j| th[i][j] * dxds[j]).sum::<f64>();
                }
            }
        }
    }
    Ok(total)
}

fn raw_theta(field: &PlasticField, t: [f64; 3]) -> Result<[[f64; 3]; 3]> {
    let e = field.patch().basis().eval(t)?;
    let mut theta = [[0.0; 3]; 3];
    for (k, &alpha) in e.indices.iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                theta[i][j] += e.values[k] * field.theta[alpha][i][j];
            }
        }
    }
    Ok(theta)
}

/// Counter-clockwise square of half-width `half_width` around `(cx, cy)` in
/// the plane `x^3 = x3`, as a closed polyline of parameter points.
pub fn square_loop(patch: &Patch, center: [f64; 2], half_width: f64, x3: f64) -> Result<Vec<[f64; 3]>> {
    let h = half_width;
    let corners = [[-h, -h], [h, -h], [h, h], [-h, h], [-h, -h]];
    corners
        .iter()
        .map(|c| patch.inverse_map([center[0] + c[0], center[1] + c[1], x3]))
        .collect()
}

fn write_knots(out: &mut impl Write, kv: &KnotVector) -> std::io::Result<()> {
    let vals: Vec<String> = kv.values().iter().map(|v| format!("{v:.17e}")).collect();
    writeln!(out, "{}", vals.join(" "))
}

/// Writes the coefficients with a header describing the affine box patch.
pub fn write_coefficients<W: Write>(field: &PlasticField, config_hash: &str, mut out: W) -> Result<()> {
    let patch = field.patch();
    let b = patch
        .box_domain()
        .ok_or_else(|| Error::UnsupportedGeometry("coefficient dumps need an affine box patch".into()))?;
    let basis = patch.basis();
    let dims = basis.dims();
    let deg = basis.degrees();
    writeln!(out, "# plastic-field v1")?;
    writeln!(out, "# config_hash {config_hash}")?;
    writeln!(out, "# dims {} {} {}", dims[0], dims[1], dims[2])?;
    writeln!(out, "# degrees {} {} {}", deg[0], deg[1], deg[2])?;
    writeln!(out, "# extents {:.17e} {:.17e} {:.17e}", b.extents[0], b.extents[1], b.extents[2])?;
    writeln!(out, "# center {:.17e} {:.17e} {:.17e}", b.center[0], b.center[1], b.center[2])?;
    for kv in basis.knots() {
        write!(out, "# knots ")?;
        write_knots(&mut out, kv)?;
    }
    writeln!(
        out,
        "alpha,theta_11,theta_12,theta_13,theta_21,theta_22,theta_23,theta_31,theta_32,theta_33,lambda_1,lambda_2,lambda_3"
    )?;
    for (alpha, (th, la)) in field.theta.iter().zip(&field.lambda).enumerate() {
        write!(out, "{alpha}")?;
        for v in th.iter().flatten().chain(la.iter()) {
            write!(out, ",{v:.17e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a dump produced by [`write_coefficients`]; returns the field and
/// the recorded configuration hash.
pub fn read_coefficients<R: BufRead>(input: R) -> Result<(PlasticField, String)> {
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    let mut hash = String::new();
    let mut degrees: Option<[usize; 3]> = None;
    let mut extents: Option<[f64; 3]> = None;
    let mut center: Option<[f64; 3]> = None;
    let mut knots: Vec<Vec<f64>> = Vec::new();
    let mut rows: Vec<([[f64; 3]; 3], [f64; 3])> = Vec::new();
    let triple = |rest: &str| -> Result<[f64; 3]> {
        let v: Vec<f64> = rest.split_whitespace().map(parse).collect::<Result<_>>()?;
        v.try_into().map_err(|_| Error::Parse("expected three values".into()))
    };
    for line in input.lines() {
        let line = line?;
        if let Some(h) = line.strip_prefix("# ") {
            let (key, rest) = h.split_once(' ').unwrap_or((h, ""));
            match key {
                "config_hash" => hash = rest.trim().to_string(),
                "degrees" => degrees = Some(triple(rest)?.map(|v| v as usize)),
                "extents" => extents = Some(triple(rest)?),
                "center" => center = Some(triple(rest)?),
                "knots" => knots.push(rest.split_whitespace().map(parse).collect::<Result<_>>()?),
                _ => {}
            }
            continue;
        }
        if line.starts_with("alpha") || line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split(',').skip(1).map(parse).collect::<Result<_>>()?;
        if v.len() != 12 {
            return Err(Error::Parse(format!("expected 13 columns, got {}", v.len() + 1)));
        }
        let th = std::array::from_fn(|i| std::array::from_fn(|j| v[3 * i + j]));
        rows.push((th, [v[9], v[10], v[11]]));
    }
    let degrees = degrees.ok_or_else(|| Error::Parse("missing degrees".into()))?;
    let extents = extents.ok_or_else(|| Error::Parse("missing extents".into()))?;
    let center = center.ok_or_else(|| Error::Parse("missing center".into()))?;
    if knots.len() != 3 {
        return Err(Error::Parse("expected three knot vectors".into()));
    }
    let kvs: Vec<KnotVector> = knots
        .into_iter()
        .zip(degrees)
        .map(|(k, p)| KnotVector::new(k, p))
        .collect::<Result<_>>()?;
    let kvs: [KnotVector; 3] = kvs.try_into().expect("three knot vectors");
    let basis = TensorBasis3D::with_unit_weights(kvs);
    if rows.len() != basis.len() {
        return Err(Error::Parse(format!(
            "expected {} coefficient rows, got {}",
            basis.len(),
            rows.len()
        )));
    }
    let patch = Arc::new(Patch::affine_box(basis, extents, center)?);
    let (theta, lambda) = rows.into_iter().unzip();
    Ok((
        PlasticField {
            patch,
            theta,
            lambda,
        },
        hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_graded_knot_vector, Grading};
    use crate::dislocation::DislocationSpec;

    fn bernstein_patch() -> Arc<Patch> {
        let kv = KnotVector::uniform(3, 2).unwrap();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), kv.clone(), kv]);
        Arc::new(Patch::affine_box(basis, [2.0; 3], [0.0; 3]).unwrap())
    }

    pub(crate) fn small_patch(n: [usize; 3], extents: [f64; 3]) -> Arc<Patch> {
        let kvs = n.map(|k| make_graded_knot_vector(k, 2, Grading::uniform()).unwrap());
        Arc::new(Patch::affine_box(TensorBasis3D::with_unit_weights(kvs), extents, [0.0; 3]).unwrap())
    }

    fn screw() -> TorsionField {
        TorsionField::single(DislocationSpec::screw(1.0, 1.0).unwrap())
    }

    #[test]
    fn zero_torsion_gives_zero_rhs() {
        let sys = assemble_plastic_system(&bernstein_patch(), &TorsionField::zero()).unwrap();
        assert!(sys.rhs.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn matrix_is_symmetric_with_expected_order() {
        let sys = assemble_plastic_system(&bernstein_patch(), &screw()).unwrap();
        assert_eq!(sys.dim(), 108);
        let m = &sys.matrix;
        assert!(m.symmetry_error() <= 1e-10 * m.max_abs());
        // Zero multiplier block.
        for a in 0..27 {
            for b in 0..27 {
                assert_eq!(m.get(4 * a + 3, 4 * b + 3), 0.0);
            }
        }
    }

    #[test]
    fn plastic_matrix_is_rejected_by_jacobi() {
        let sys = assemble_plastic_system(&bernstein_patch(), &screw()).unwrap();
        let csr = sys.matrix.to_csr();
        assert!(matches!(
            crate::krylov::jacobi_preconditioner(&csr),
            Err(Error::InvalidMatrix(_))
        ));
    }

    #[test]
    fn rhs_matches_direct_quadrature() {
        // rhs for Theta_m of component 3 equals -int T^3_mj dN/dx^j.
        let patch = small_patch([5, 5, 3], [6.0, 6.0, 2.0]);
        let tf = screw();
        let sys = assemble_plastic_system(&patch, &tf).unwrap();
        let alpha = patch.basis().flat_index([2, 2, 1]);
        let q = crate::geometry::assemble_quadrature(&patch, 3).unwrap();
        let mut expect = [0.0; 3];
        for qp in &q {
            let e = patch.eval_physical(qp.t).unwrap();
            if let Some(k) = e.indices.iter().position(|&a| a == alpha) {
                let t = tf.coefficients(qp.x);
                for (m, ex) in expect.iter_mut().enumerate() {
                    *ex -= qp.weight * (0..3).map(|j| t.component(2, m, j) * e.grads[k][j]).sum::<f64>();
                }
            }
        }
        for m in 0..3 {
            assert!((sys.rhs[2][4 * alpha + m] - expect[m]).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_bc_eliminates_face_coefficients() {
        let patch = small_patch([4, 4, 4], [1.0; 3]);
        let mut sys = assemble_plastic_system(&patch, &screw()).unwrap();
        apply_normal_bc(&mut sys, &patch).unwrap();
        let basis = patch.basis();
        // Face x1 = +L/2: Theta_1 fixed.
        let a = basis.flat_index([3, 1, 2]);
        assert!(!sys.free[4 * a]);
        assert!(sys.free[4 * a + 1] && sys.free[4 * a + 2] && sys.free[4 * a + 3]);
        // Edge shared by x1 and x2 faces.
        let e = basis.flat_index([0, 3, 1]);
        assert!(!sys.free[4 * e] && !sys.free[4 * e + 1] && sys.free[4 * e + 2]);
        // Interior.
        let c = basis.flat_index([1, 2, 1]);
        assert!((0..4).all(|k| sys.free[4 * c + k]));
    }

    #[test]
    fn normal_bc_needs_box() {
        let patch = bernstein_patch();
        let basis = patch.basis().clone();
        let pts = patch.control_points().to_vec();
        let general = Patch::new(basis, pts).unwrap();
        let mut sys = assemble_plastic_system(&general, &screw()).unwrap();
        assert!(matches!(
            apply_normal_bc(&mut sys, &general),
            Err(Error::UnsupportedGeometry(_))
        ));
    }

    #[test]
    fn zero_torsion_gives_zero_field() {
        let patch = small_patch([4, 4, 4], [4.0; 3]);
        let sol = solve_plastic(&patch, &TorsionField::zero(), &SolverConfig::default(), &Default::default()).unwrap();
        assert!(sol.field.theta.iter().flatten().flatten().all(|&v| v == 0.0));
        assert!(sol.field.lambda.iter().flatten().all(|&v| v == 0.0));
        let p = sol.field.theta_at([0.3, 0.6, 0.2]).unwrap();
        assert_eq!(p.det, 1.0);
        assert_eq!(p.vartheta[1][1], 1.0);
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            minres_tol: 1e-9,
            ..Default::default()
        }
    }

    #[test]
    fn preconditioners_agree_and_pinning_leaves_theta_unchanged() {
        let patch = small_patch([8, 8, 4], [8.0, 8.0, 4.0]);
        let tf = screw();
        let kron = solve_plastic(&patch, &tf, &tight(), &PlasticOptions::default()).unwrap();
        for (pre, pin) in [
            (PlasticPreconditioner::None, true),
            (PlasticPreconditioner::Diagonal, true),
            (PlasticPreconditioner::Kronecker, false),
        ] {
            let opts = PlasticOptions {
                pin_multiplier: pin,
                preconditioner: pre,
            };
            let other = solve_plastic(&patch, &tf, &tight(), &opts).unwrap();
            let scale = kron.field.max_abs_coefficient(2, 0);
            for (a, b) in kron.field.theta.iter().zip(&other.field.theta) {
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((a[i][j] - b[i][j]).abs() <= 1e-6 * scale, "{pre:?} {pin}");
                    }
                }
            }
        }
    }

    #[test]
    fn solution_satisfies_boundary_condition_and_weak_divergence() {
        let patch = small_patch([8, 8, 4], [8.0, 8.0, 4.0]);
        let sol = solve_plastic(&patch, &screw(), &tight(), &PlasticOptions::default()).unwrap();
        let basis = patch.basis();
        let dims = basis.dims();
        for (alpha, th) in sol.field.theta.iter().enumerate() {
            let idx = basis.multi_index(alpha);
            for j in 0..3 {
                if idx[j] == 0 || idx[j] + 1 == dims[j] {
                    for row in th {
                        assert_eq!(row[j], 0.0);
                    }
                }
            }
        }
        let wd = weak_divergence(&sol.field).unwrap();
        let scale = sol.report.theta_norm;
        for (alpha, v) in wd.iter().enumerate() {
            if alpha == 0 {
                continue;
            }
            for c in v {
                assert!(c.abs() <= 1e-7 * scale, "{c}");
            }
        }
    }

    #[test]
    fn linear_in_torsion() {
        let patch = small_patch([6, 6, 4], [6.0, 6.0, 3.0]);
        let tf = screw();
        let cfg = SolverConfig::default();
        let one = solve_plastic(&patch, &tf, &cfg, &Default::default()).unwrap();
        let cfg2 = SolverConfig {
            minres_tol: 2.0 * cfg.minres_tol,
            ..cfg
        };
        let two = solve_plastic(&patch, &tf.scaled(2.0), &cfg2, &Default::default()).unwrap();
        for (a, b) in one.field.theta.iter().zip(&two.field.theta) {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(2.0 * a[i][j], b[i][j]);
                }
            }
        }
    }

    #[test]
    fn circuit_rejects_open_loop() {
        let patch = small_patch([4, 4, 4], [4.0; 3]);
        let f = PlasticField::zero(patch);
        let open = [[0.1, 0.1, 0.5], [0.9, 0.1, 0.5], [0.9, 0.9, 0.5], [0.1, 0.9, 0.5]];
        assert!(matches!(burgers_circuit(&f, &open, 4), Err(Error::InvalidLoop(_))));
    }

    #[test]
    fn circuit_integrates_exact_one_form() {
        // A field with constant Theta^1_1 = c integrates to zero around any loop.
        let patch = small_patch([4, 4, 4], [4.0; 3]);
        let mut f = PlasticField::zero(patch.clone());
        for th in &mut f.theta {
            th[0][0] = 0.3;
            th[0][1] = 0.1;
        }
        let lp = square_loop(&patch, [0.2, -0.1], 1.0, 0.0).unwrap();
        let b = burgers_circuit(&f, &lp, 4).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn coefficient_dump_round_trip() {
        let patch = small_patch([4, 5, 3], [4.0, 5.0, 2.0]);
        let mut f = PlasticField::zero(patch);
        for (a, th) in f.theta.iter_mut().enumerate() {
            th[2][0] = (a as f64).sin() / 3.0;
            th[1][2] = 1e-20 * a as f64;
        }
        f.lambda[3] = [1.0, -2.0, std::f64::consts::PI];
        let mut buf = Vec::new();
        write_coefficients(&f, "abc123", &mut buf).unwrap();
        let (g, hash) = read_coefficients(buf.as_slice()).unwrap();
        assert_eq!(hash, "abc123");
        assert_eq!(g.theta, f.theta);
        assert_eq!(g.lambda, f.lambda);
        assert_eq!(g.patch().basis(), f.patch().basis());
    }

    #[test]
    fn degenerate_vartheta_is_reported() {
        let patch = small_patch([3, 3, 3], [1.0; 3]);
        let mut f = PlasticField::zero(patch);
        for th in &mut f.theta {
            th[0][0] = -1.5;
        }
        assert!(matches!(
            f.theta_at([0.5, 0.5, 0.5]),
            Err(Error::DegeneratePlasticity { .. })
        ));
    }

    #[test]
    fn interpolation_at_bernstein_corner() {
        let patch = bernstein_patch();
        let mut f = PlasticField::zero(patch);
        f.theta[0][1][2] = 0.25;
        let p = f.theta_at([0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.theta[1][2], 0.25);
    }
}
