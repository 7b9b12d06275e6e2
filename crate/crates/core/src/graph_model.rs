//! The linear structural model `Y = μ + BY + AX + LC + E`, its structural
//! checks, and synthetic data generation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::draw_laplace;
use crate::error::{Error, Result};
use crate::linalg::{self, ShiftedSolver};

/// Margin used when validating fixed ground-truth matrices.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Pivot detection tolerance for exactly specified loading matrices.
pub const PIVOT_TOL: f64 = 1e-12;

/// Serde adapters writing matrices as arrays of rows.
pub mod serde_rows {
    use nalgebra::{DMatrix, DVector};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows, 0).map_err(D::Error::custom)
    }

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.as_slice().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
            Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
        }
    }

    pub mod boolean {
        use nalgebra::DMatrix;
        use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(m: &DMatrix<bool>, s: S) -> Result<S::Ok, S::Error> {
            let rows: Vec<Vec<u8>> = m
                .row_iter()
                .map(|r| r.iter().map(|&b| u8::from(b)).collect())
                .collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<bool>, D::Error> {
            let rows = Vec::<Vec<u8>>::deserialize(d)?;
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(D::Error::custom("ragged matrix rows"));
            }
            if rows.iter().flatten().any(|&v| v > 1) {
                return Err(D::Error::custom("support entries must be 0 or 1"));
            }
            Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j] == 1))
        }
    }
}

/// Parameters of the structural model.
///
/// `b[(q, r)]` is the direct effect of `Y_r` on `Y_q`; columns of `l` beyond
/// the active confounders are all zero. Under the Laplace error law the
/// marginal error variance of `Y_q` is `8 · sigma2[q]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalParameters {
    #[serde(with = "serde_rows::vector")]
    pub mu: DVector<f64>,
    #[serde(rename = "A", with = "serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "serde_rows")]
    pub b: DMatrix<f64>,
    #[serde(rename = "L", with = "serde_rows")]
    pub l: DMatrix<f64>,
    #[serde(with = "serde_rows::vector")]
    pub sigma2: DVector<f64>,
}

impl CausalParameters {
    pub fn q(&self) -> usize {
        self.mu.len()
    }

    pub fn s(&self) -> usize {
        self.a.ncols()
    }

    /// Checks shapes, positivity, the zero diagonal of `B`, stability, and
    /// the canonical UGLT form of `L`.
    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if self.b.nrows() != q || self.b.ncols() != q {
            return Err(Error::Dimension(format!("B must be {q}x{q}")));
        }
        if self.a.nrows() != q {
            return Err(Error::Dimension(format!("A must have {q} rows")));
        }
        if self.l.nrows() != q {
            return Err(Error::Dimension(format!("L must have {q} rows")));
        }
        if self.sigma2.len() != q {
            return Err(Error::Dimension(format!("sigma2 must have length {q}")));
        }
        let all_finite = self
            .mu
            .iter()
            .chain(self.a.iter())
            .chain(self.b.iter())
            .chain(self.l.iter())
            .chain(self.sigma2.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Validation("parameters must be finite".into()));
        }
        if self.sigma2.iter().any(|&s| s <= 0.0) {
            return Err(Error::Validation("sigma2 entries must be positive".into()));
        }
        if (0..q).any(|i| self.b[(i, i)] != 0.0) {
            return Err(Error::Validation("B must have a zero diagonal".into()));
        }
        let radius = spectral_radius(&self.b)?;
        if radius >= 1.0 - STABILITY_MARGIN {
            return Err(Error::Unstable { radius });
        }
        validate_canonical_loadings(&self.l, PIVOT_TOL)?;
        Ok(())
    }
}

/// Observations of the primary variables and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n x Q`
    pub y: DMatrix<f64>,
    /// `n x S`, possibly with zero columns
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let data = Self { y, x };
        data.validate()?;
        Ok(data)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn s(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.nrows() {
            return Err(Error::Dimension(format!(
                "Y has {} rows but X has {}",
                self.y.nrows(),
                self.x.nrows()
            )));
        }
        if self.y.ncols() == 0 {
            return Err(Error::Validation("dataset needs at least one primary variable".into()));
        }
        if let Some(pos) = self.y.iter().chain(self.x.iter()).position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value at flat index {pos}")));
        }
        Ok(())
    }

    /// Requires at least one row and no constant primary column.
    pub fn validate_for_fit(&self) -> Result<()> {
        self.validate()?;
        if self.n() == 0 {
            return Err(Error::Validation("dataset has no observations".into()));
        }
        for q in 0..self.q() {
            let col = self.y.column(q);
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                return Err(Error::Validation(format!("column Y{} is constant", q + 1)));
            }
        }
        Ok(())
    }
}

/// True edge supports implied by a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthGraph {
    #[serde(with = "serde_rows::boolean")]
    pub b_support: DMatrix<bool>,
    #[serde(with = "serde_rows::boolean")]
    pub a_support: DMatrix<bool>,
    #[serde(with = "serde_rows::boolean")]
    pub l_support: DMatrix<bool>,
    pub p_star: usize,
}

impl GroundTruthGraph {
    /// Supports of `params`, with `L` compacted to its non-zero columns.
    pub fn from_params(params: &CausalParameters) -> Self {
        let q = params.q();
        let nz = |v: f64| v.abs() > PIVOT_TOL;
        let active: Vec<usize> = (0..params.l.ncols())
            .filter(|&p| params.l.column(p).iter().any(|&v| nz(v)))
            .collect();
        Self {
            b_support: DMatrix::from_fn(q, q, |i, j| i != j && nz(params.b[(i, j)])),
            a_support: params.a.map(nz),
            l_support: DMatrix::from_fn(q, active.len(), |i, k| nz(params.l[(i, active[k])])),
            p_star: active.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.b_support.nrows();
        if self.b_support.ncols() != q || self.l_support.nrows() != q || self.a_support.nrows() != q {
            return Err(Error::Dimension("support shapes disagree".into()));
        }
        if (0..q).any(|i| self.b_support[(i, i)]) {
            return Err(Error::Validation("b_support diagonal must be false".into()));
        }
        if self.l_support.ncols() != self.p_star {
            return Err(Error::Validation("l_support width must equal p_star".into()));
        }
        for p in 0..self.p_star {
            let children = self.l_support.column(p).iter().filter(|&&b| b).count();
            if children < 2 {
                return Err(Error::Validation(format!(
                    "confounder {} has fewer than two children",
                    p + 1
                )));
            }
            for p2 in 0..p {
                if self.l_support.column(p) == self.l_support.column(p2) {
                    return Err(Error::Validation(format!(
                        "confounders {} and {} share the same children",
                        p2 + 1,
                        p + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn spectral_radius(b: &DMatrix<f64>) -> Result<f64> {
    linalg::spectral_radius(b)
}

/// `true` iff the spectral radius of `b` is below `1 − STABILITY_MARGIN`.
pub fn check_stability(b: &DMatrix<f64>) -> bool {
    spectral_radius(b).is_ok_and(|r| r < 1.0 - STABILITY_MARGIN)
}

/// Pivot rows of the non-zero columns of `l` (in column order) and whether
/// they are pairwise distinct. All-zero columns are skipped.
pub fn check_uglt(l: &DMatrix<f64>, tol: f64) -> (bool, Vec<usize>) {
    let pivots: Vec<usize> = (0..l.ncols())
        .filter_map(|p| l.column(p).iter().position(|v| v.abs() > tol))
        .collect();
    let mut sorted = pivots.clone();
    sorted.sort_unstable();
    sorted.dedup();
    (sorted.len() == pivots.len(), pivots)
}

/// Canonical-form checks on a ground-truth loading matrix: distinct pivots,
/// at least two children per confounder, distinct child sets, full column
/// rank of the active block.
pub fn validate_canonical_loadings(l: &DMatrix<f64>, tol: f64) -> Result<()> {
    let (distinct, _) = check_uglt(l, tol);
    if !distinct {
        return Err(Error::Validation("loading pivots are not pairwise distinct".into()));
    }
    let active: Vec<usize> = (0..l.ncols())
        .filter(|&p| l.column(p).iter().any(|v| v.abs() > tol))
        .collect();
    let supports: Vec<Vec<bool>> = active
        .iter()
        .map(|&p| l.column(p).iter().map(|v| v.abs() > tol).collect())
        .collect();
    for (k, s) in supports.iter().enumerate() {
        if s.iter().filter(|&&b| b).count() < 2 {
            return Err(Error::Validation(format!(
                "confounder column {} has fewer than two children",
                active[k] + 1
            )));
        }
        if supports[..k].contains(s) {
            return Err(Error::Validation("two confounders share the same children".into()));
        }
    }
    if !active.is_empty() {
        let block = DMatrix::from_fn(l.nrows(), active.len(), |i, k| l[(i, active[k])]);
        let rank = block.svd(false, false).rank(1e-10);
        if rank < active.len() {
            return Err(Error::Validation("active loadings are rank deficient".into()));
        }
    }
    Ok(())
}

/// How covariates are produced by the generator.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateSpec {
    StandardNormal,
    Bernoulli(f64),
    /// Supplied `n x S` values.
    Fixed(DMatrix<f64>),
}

/// Generator output including the latent draws.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: Dataset,
    pub truth: GroundTruthGraph,
    /// `n x P` latent confounders
    pub c: DMatrix<f64>,
    /// `n x Q` exogenous errors
    pub e: DMatrix<f64>,
}

pub fn generate_data<R: Rng + ?Sized>(
    params: &CausalParameters,
    n: usize,
    covariates: &CovariateSpec,
    rng: &mut R,
) -> Result<(Dataset, GroundTruthGraph)> {
    let sim = simulate(params, n, covariates, rng)?;
    Ok((sim.dataset, sim.truth))
}

/// Draws `n` observations, solving `(I − B) Y_i = μ + A X_i + L C_i + E_i`
/// by LU factorisation.
pub fn simulate<R: Rng + ?Sized>(
    params: &CausalParameters,
    n: usize,
    covariates: &CovariateSpec,
    rng: &mut R,
) -> Result<Simulation> {
    params.validate()?;
    let (q, s, p) = (params.q(), params.s(), params.l.ncols());
    let x = match covariates {
        CovariateSpec::StandardNormal => {
            DMatrix::from_fn(n, s, |_, _| rng.sample::<f64, _>(StandardNormal))
        }
        CovariateSpec::Bernoulli(prob) => {
            let dist = Bernoulli::new(*prob)
                .map_err(|_| Error::Domain(format!("Bernoulli probability {prob} out of range")))?;
            DMatrix::from_fn(n, s, |_, _| if dist.sample(rng) { 1.0 } else { 0.0 })
        }
        CovariateSpec::Fixed(m) => {
            if m.nrows() != n || m.ncols() != s {
                return Err(Error::Dimension(format!(
                    "fixed covariates must be {n}x{s}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            m.clone()
        }
    };
    let solver = ShiftedSolver::new(&params.b)?;
    let mut y = DMatrix::zeros(n, q);
    let mut c = DMatrix::zeros(n, p);
    let mut e = DMatrix::zeros(n, q);
    for i in 0..n {
        for k in 0..p {
            c[(i, k)] = rng.sample(StandardNormal);
        }
        for j in 0..q {
            e[(i, j)] = draw_laplace(params.sigma2[j], rng);
        }
        let rhs = &params.mu
            + &params.a * x.row(i).transpose()
            + &params.l * c.row(i).transpose()
            + e.row(i).transpose();
        let yi = solver.solve(&rhs)?;
        y.set_row(i, &yi.transpose());
    }
    Ok(Simulation {
        dataset: Dataset { y, x },
        truth: GroundTruthGraph::from_params(params),
        c,
        e,
    })
}

/// Truncated Neumann series `Σ_k Bᵏ`, stopping once a term's max-abs entry
/// drops below `tol`. `None` if it fails to settle within `max_terms`.
pub fn neumann_inverse(b: &DMatrix<f64>, tol: f64, max_terms: usize) -> Option<DMatrix<f64>> {
    let q = b.nrows();
    let mut term = DMatrix::<f64>::identity(q, q);
    let mut sum = term.clone();
    for _ in 0..max_terms {
        term = &term * b;
        sum += &term;
        if term.amax() < tol {
            return Some(sum);
        }
    }
    None
}
