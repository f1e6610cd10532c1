use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::dot;

/// Which per-agent variable enters the population average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// `m = (1/N) sum_i x_i`
    StateAverage,
    /// `m = (1/N) sum_i u_i`
    ControlAverage,
}

impl CouplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CouplingMode::StateAverage => "state-average",
            CouplingMode::ControlAverage => "control-average",
        }
    }
}

/// A linear operator that is either a multiple of the identity or dense.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOp {
    Scaled(f64),
    Dense(DMatrix<f64>),
}

impl LinearOp {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            LinearOp::Scaled(s) => v.iter().map(|x| s * x).collect(),
            LinearOp::Dense(m) => (m * DVector::from_column_slice(v)).as_slice().to_vec(),
        }
    }

    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        match self {
            LinearOp::Scaled(s) => DMatrix::identity(dim, dim) * *s,
            LinearOp::Dense(m) => m.clone(),
        }
    }
}

/// The mean-field map `F`, the aggregate cost `G` and the welfare potential
/// `phi` for one family of couplings.
///
/// For every kind except a nonsymmetric [`CouplingKind::Linear`] the
/// potential satisfies `F(z) = phi'(z) / N`.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingKind {
    /// `F = 0`, `G = 0`, `phi = 0`.
    Decoupled,
    /// EV charging price: `F(z) = 2 (gamma - eta) z`, `G(z) = eta |z|^2`,
    /// `phi(z) = N (gamma - eta) |z|^2`.
    Ev { eta: f64, gamma: f64 },
    /// `F(z) = slope z + offset`, `phi(z) = N (slope/2 |z|^2 + offset . z)`.
    Affine { slope: f64, offset: Vec<f64> },
    /// `F(z) = M z + offset`, `phi(z) = N (z^T sym(M) z / 2 + offset . z)`.
    Linear {
        matrix: DMatrix<f64>,
        offset: Vec<f64>,
    },
    /// Componentwise `F(z) = slope z + strength tanh(z)` with
    /// `phi(z) = N sum_t (slope z_t^2 / 2 + strength ln cosh z_t)`.
    Tanh { slope: f64, strength: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    pub mode: CouplingMode,
    pub kind: CouplingKind,
}

const NEWTON_TOL: f64 = 1e-12;

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl CouplingSpec {
    pub fn new(mode: CouplingMode, kind: CouplingKind) -> Self {
        CouplingSpec { mode, kind }
    }

    pub fn ev(eta: f64, gamma: f64) -> Self {
        CouplingSpec::new(CouplingMode::ControlAverage, CouplingKind::Ev { eta, gamma })
    }

    pub fn decoupled(mode: CouplingMode) -> Self {
        CouplingSpec::new(mode, CouplingKind::Decoupled)
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            CouplingKind::Decoupled => "decoupled",
            CouplingKind::Ev { .. } => "ev",
            CouplingKind::Affine { .. } => "affine",
            CouplingKind::Linear { .. } => "linear",
            CouplingKind::Tanh { .. } => "tanh",
        }
    }

    /// Structural problems with the coupling parameters for aggregate
    /// dimension `dim`.
    pub fn violations(&self, dim: usize) -> Vec<String> {
        let mut out = Vec::new();
        match &self.kind {
            CouplingKind::Decoupled => {}
            CouplingKind::Ev { eta, gamma } => {
                if !(*eta >= 0.0) {
                    out.push(format!("eta must be nonnegative, got {eta}"));
                }
                if !(eta < gamma) {
                    out.push(format!("eta ({eta}) must be below gamma ({gamma})"));
                }
            }
            CouplingKind::Affine { slope, offset } => {
                if !(*slope > 0.0) {
                    out.push(format!("affine slope must be positive, got {slope}"));
                }
                if offset.len() != dim {
                    out.push(format!("affine offset has length {} (expected {dim})", offset.len()));
                }
            }
            CouplingKind::Linear { matrix, offset } => {
                if matrix.nrows() != dim || matrix.ncols() != dim {
                    out.push(format!(
                        "linear map is {}x{} (expected {dim}x{dim})",
                        matrix.nrows(),
                        matrix.ncols()
                    ));
                }
                if offset.len() != dim {
                    out.push(format!("linear offset has length {} (expected {dim})", offset.len()));
                }
            }
            CouplingKind::Tanh { slope, strength } => {
                if !(*slope > 0.0) {
                    out.push(format!("tanh slope must be positive, got {slope}"));
                }
                if !(*strength >= 0.0) {
                    out.push(format!("tanh strength must be nonnegative, got {strength}"));
                }
            }
        }
        out
    }

    /// The mean-field map `F(z)`.
    pub fn price(&self, z: &[f64]) -> Vec<f64> {
        match &self.kind {
            CouplingKind::Decoupled => vec![0.0; z.len()],
            CouplingKind::Ev { eta, gamma } => z.iter().map(|v| 2.0 * (gamma - eta) * v).collect(),
            CouplingKind::Affine { slope, offset } => {
                z.iter().zip(offset).map(|(v, b)| slope * v + b).collect()
            }
            CouplingKind::Linear { matrix, offset } => {
                let mz = matrix * DVector::from_column_slice(z);
                mz.iter().zip(offset).map(|(v, b)| v + b).collect()
            }
            CouplingKind::Tanh { slope, strength } => {
                z.iter().map(|v| slope * v + strength * v.tanh()).collect()
            }
        }
    }

    /// The aggregate cost `G(z)`. It never affects best responses.
    pub fn aggregate_cost(&self, z: &[f64]) -> f64 {
        self.aggregate_cost_weight() * dot(z, z)
    }

    /// `g` in `G(z) = g |z|^2`.
    pub fn aggregate_cost_weight(&self) -> f64 {
        match self.kind {
            CouplingKind::Ev { eta, .. } => eta,
            _ => 0.0,
        }
    }

    /// The welfare potential `phi(z)` for a population of `n`.
    pub fn potential(&self, z: &[f64], n: usize) -> f64 {
        let n = n as f64;
        match &self.kind {
            CouplingKind::Decoupled => 0.0,
            CouplingKind::Ev { eta, gamma } => n * (gamma - eta) * dot(z, z),
            CouplingKind::Affine { slope, offset } => n * (0.5 * slope * dot(z, z) + dot(offset, z)),
            CouplingKind::Linear { matrix, offset } => {
                let zv = DVector::from_column_slice(z);
                let quad = zv.dot(&(matrix * &zv));
                n * (0.5 * quad + dot(offset, z))
            }
            CouplingKind::Tanh { slope, strength } => {
                n * z
                    .iter()
                    .map(|v| 0.5 * slope * v * v + strength * ln_cosh(*v))
                    .sum::<f64>()
            }
        }
    }

    /// Analytic gradient `phi'(z)`.
    pub fn potential_gradient(&self, z: &[f64], n: usize) -> Vec<f64> {
        let nf = n as f64;
        let per_capita: Vec<f64> = match &self.kind {
            CouplingKind::Linear { matrix, offset } => {
                let sym = (matrix + matrix.transpose()) * 0.5;
                let sz = sym * DVector::from_column_slice(z);
                sz.iter().zip(offset).map(|(v, b)| v + b).collect()
            }
            _ => self.price(z),
        };
        per_capita.into_iter().map(|v| nf * v).collect()
    }

    /// Lipschitz constant of `F`.
    pub fn lipschitz(&self) -> f64 {
        match &self.kind {
            CouplingKind::Decoupled => 0.0,
            CouplingKind::Ev { eta, gamma } => 2.0 * (gamma - eta).abs(),
            CouplingKind::Affine { slope, .. } => slope.abs(),
            CouplingKind::Linear { matrix, .. } => matrix.clone().svd(false, false).singular_values.max(),
            CouplingKind::Tanh { slope, strength } => slope.abs() + strength.abs(),
        }
    }

    /// Strong convexity modulus of `phi / N` (0 when merely convex or worse).
    pub fn potential_strong_convexity(&self) -> f64 {
        let m = match &self.kind {
            CouplingKind::Decoupled => 0.0,
            CouplingKind::Ev { eta, gamma } => 2.0 * (gamma - eta),
            CouplingKind::Affine { slope, .. } => *slope,
            CouplingKind::Linear { matrix, .. } => {
                let sym = (matrix + matrix.transpose()) * 0.5;
                sym.symmetric_eigenvalues().min()
            }
            CouplingKind::Tanh { slope, .. } => *slope,
        };
        m.max(0.0)
    }

    /// Lipschitz constant of `phi'` for a population of `n`.
    pub fn potential_gradient_lipschitz(&self, n: usize) -> f64 {
        let nf = n as f64;
        match &self.kind {
            CouplingKind::Linear { matrix, .. } => {
                let sym = (matrix + matrix.transpose()) * 0.5;
                nf * sym.svd(false, false).singular_values.max()
            }
            _ => nf * self.lipschitz(),
        }
    }

    /// `F(z) = A z + b`, when `F` is affine.
    pub fn affine_price(&self, dim: usize) -> Option<(LinearOp, Vec<f64>)> {
        match &self.kind {
            CouplingKind::Decoupled => Some((LinearOp::Scaled(0.0), vec![0.0; dim])),
            CouplingKind::Ev { eta, gamma } => {
                Some((LinearOp::Scaled(2.0 * (gamma - eta)), vec![0.0; dim]))
            }
            CouplingKind::Affine { slope, offset } => Some((LinearOp::Scaled(*slope), offset.clone())),
            CouplingKind::Linear { matrix, offset } => {
                Some((LinearOp::Dense(matrix.clone()), offset.clone()))
            }
            CouplingKind::Tanh { .. } => None,
        }
    }

    /// Solve the coordinator stationarity condition
    /// `phi'(z) / N + kappa (z - anchor) = price` for `z`.
    ///
    /// With `kappa = 0` this is `argmin_z phi(z) - N price . z`; with
    /// `kappa > 0` it is the proximal aggregate update used by consensus
    /// ADMM. `hint` is returned when every `z` is a minimizer.
    pub fn solve_coordinator(
        &self,
        price: &[f64],
        kappa: f64,
        anchor: &[f64],
        hint: &[f64],
    ) -> Result<Vec<f64>> {
        let dim = price.len();
        match &self.kind {
            CouplingKind::Decoupled => {
                if kappa > 0.0 {
                    Ok(anchor.iter().zip(price).map(|(w, l)| w + l / kappa).collect())
                } else if price.iter().all(|l| *l == 0.0) {
                    Ok(hint.to_vec())
                } else {
                    Err(Error::Unbounded(
                        "decoupled coordinator with nonzero price".into(),
                    ))
                }
            }
            CouplingKind::Ev { eta, gamma } => {
                let denom = 2.0 * (gamma - eta) + kappa;
                if denom <= 0.0 {
                    return Err(Error::Unbounded("nonpositive EV potential curvature".into()));
                }
                Ok((0..dim)
                    .map(|t| (price[t] + kappa * anchor[t]) / denom)
                    .collect())
            }
            CouplingKind::Affine { slope, offset } => {
                let denom = slope + kappa;
                if denom <= 0.0 {
                    return Err(Error::Unbounded("nonpositive affine slope".into()));
                }
                Ok((0..dim)
                    .map(|t| (price[t] - offset[t] + kappa * anchor[t]) / denom)
                    .collect())
            }
            CouplingKind::Linear { matrix, offset } => {
                let sym = (matrix + matrix.transpose()) * 0.5;
                let lhs = sym + DMatrix::identity(dim, dim) * kappa;
                let rhs = DVector::from_fn(dim, |t, _| price[t] - offset[t] + kappa * anchor[t]);
                let chol = lhs.cholesky().ok_or_else(|| {
                    Error::Unbounded("symmetric part of the linear map is not positive definite".into())
                })?;
                Ok(chol.solve(&rhs).as_slice().to_vec())
            }
            CouplingKind::Tanh { slope, strength } => (0..dim)
                .map(|t| {
                    tanh_root(*slope + kappa, *strength, price[t] + kappa * anchor[t])
                })
                .collect(),
        }
    }
}

/// Root of `a z + s tanh(z) = r` with `a > 0`, `s >= 0`, by Newton's method
/// safeguarded with the bracket implied by `|tanh| < 1`.
fn tanh_root(a: f64, s: f64, r: f64) -> Result<f64> {
    if a <= 0.0 {
        return Err(Error::Unbounded("tanh coordinator needs positive slope".into()));
    }
    let mut lo = (r - s) / a;
    let mut hi = (r + s) / a;
    let mut z = r / (a + s);
    for _ in 0..200 {
        let th = z.tanh();
        let h = a * z + s * th - r;
        if h.abs() <= NEWTON_TOL * (1.0 + r.abs()) {
            return Ok(z);
        }
        if h > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let dh = a + s * (1.0 - th * th);
        let mut next = z - h / dh;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= f64::EPSILON * (1.0 + z.abs()) {
            return Ok(next);
        }
        z = next;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(c: &CouplingSpec, z: &[f64], n: usize) -> Vec<f64> {
        (0..z.len())
            .map(|t| {
                let h = 1e-6 * (1.0 + z[t].abs());
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[t] += h;
                zm[t] -= h;
                (c.potential(&zp, n) - c.potential(&zm, n)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn ev_price_is_scaled_potential_gradient() {
        let c = CouplingSpec::ev(0.01, 1.0);
        let z = [0.3, -1.2, 2.0];
        let g = c.potential_gradient(&z, 7);
        let f = c.price(&z);
        for t in 0..3 {
            assert!((g[t] / 7.0 - f[t]).abs() < 1e-14);
        }
        let fd = fd_gradient(&c, &z, 7);
        for t in 0..3 {
            assert!((fd[t] - g[t]).abs() <= 1e-6 * g[t].abs().max(1.0));
        }
    }

    #[test]
    fn tanh_potential_gradient_matches_fd() {
        let c = CouplingSpec::new(
            CouplingMode::ControlAverage,
            CouplingKind::Tanh {
                slope: 0.5,
                strength: 2.0,
            },
        );
        let z = [0.3, -4.0, 25.0];
        let g = c.potential_gradient(&z, 3);
        let fd = fd_gradient(&c, &z, 3);
        for t in 0..3 {
            assert!((fd[t] - g[t]).abs() <= 1e-6 * g[t].abs().max(1.0), "{t}");
        }
    }

    #[test]
    fn coordinator_solves_stationarity() {
        let kinds = vec![
            CouplingKind::Ev { eta: 0.1, gamma: 1.0 },
            CouplingKind::Affine {
                slope: 2.0,
                offset: vec![0.1, -0.3],
            },
            CouplingKind::Linear {
                matrix: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
                offset: vec![0.2, 0.0],
            },
            CouplingKind::Tanh {
                slope: 0.3,
                strength: 1.5,
            },
        ];
        let price = [0.7, -2.5];
        let anchor = [1.0, 3.0];
        for kind in kinds {
            let c = CouplingSpec::new(CouplingMode::ControlAverage, kind);
            for kappa in [0.0, 0.8] {
                let z = c.solve_coordinator(&price, kappa, &anchor, &[0.0; 2]).unwrap();
                let g = c.potential_gradient(&z, 5);
                for t in 0..2 {
                    let lhs = g[t] / 5.0 + kappa * (z[t] - anchor[t]);
                    assert!((lhs - price[t]).abs() < 1e-10, "{} {kappa}", c.id());
                }
            }
        }
    }

    #[test]
    fn quadratic_potential_closed_form() {
        // phi(z) = N a |z|^2 gives z = lambda / (2a).
        let c = CouplingSpec::ev(0.0, 0.75);
        let z = c.solve_coordinator(&[3.0], 0.0, &[0.0], &[0.0]).unwrap();
        assert!((z[0] - 3.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn decoupled_coordinator() {
        let c = CouplingSpec::decoupled(CouplingMode::ControlAverage);
        assert_eq!(c.solve_coordinator(&[0.0], 0.0, &[0.0], &[4.0]).unwrap(), vec![4.0]);
        assert!(c.solve_coordinator(&[1.0], 0.0, &[0.0], &[4.0]).is_err());
    }

    #[test]
    fn ln_cosh_is_stable() {
        assert!((ln_cosh(0.0)).abs() < 1e-16);
        assert!((ln_cosh(1.0) - 1.0f64.cosh().ln()).abs() < 1e-14);
        assert!((ln_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
    }
}
