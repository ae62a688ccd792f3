//! Designs, Fisher information matrices and the sensitivity function.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::linalg::{binary_quad_form, SpdFactor};
pub use crate::linalg::SINGULAR_CONDITION;
use crate::model::{check_dim, inverse_weight, standardized_inverse_weight, ItemVector, ModelSpec, StandardizedParams};

/// Weights of an approximate design may be off by this much before they are
/// rejected instead of renormalized.
const WEIGHT_SUM_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DesignPoint {
    pub item: ItemVector,
    pub weight: f64,
    /// Replications for exact designs.
    pub count: Option<u64>,
}

/// A design on the vertices of `{0,1}^K`.
///
/// Approximate designs carry weights summing to one; exact designs carry
/// positive counts `N_i` and weights `N_i / N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignJson", into = "DesignJson")]
pub struct Design {
    points: Vec<DesignPoint>,
    total: Option<u64>,
}

impl Design {
    /// Approximate design. Weights are renormalized to sum to one; a sum
    /// further than `1e-6` from one is rejected. Zero weights are kept.
    pub fn approximate(points: Vec<(ItemVector, f64)>) -> Result<Self> {
        check_support(points.iter().map(|(x, _)| x))?;
        if let Some((x, w)) = points.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(DesignError::InvalidDesign(format!("weight {w} at {x} is not a nonnegative number")));
        }
        let sum: f64 = points.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_SLACK {
            return Err(DesignError::InvalidDesign(format!("weights sum to {sum}, expected 1")));
        }
        let points = points
            .into_iter()
            .map(|(item, w)| DesignPoint { item, weight: w / sum, count: None })
            .collect();
        Ok(Self { points, total: None })
    }

    /// Exact design with replication counts.
    pub fn exact(points: Vec<(ItemVector, u64)>) -> Result<Self> {
        check_support(points.iter().map(|(x, _)| x))?;
        if let Some((x, _)) = points.iter().find(|(_, c)| *c == 0) {
            return Err(DesignError::InvalidDesign(format!("count at {x} must be positive")));
        }
        let total: u64 = points.iter().map(|(_, c)| c).sum();
        let points = points
            .into_iter()
            .map(|(item, c)| DesignPoint { item, weight: c as f64 / total as f64, count: Some(c) })
            .collect();
        Ok(Self { points, total: Some(total) })
    }

    /// Exact design from a list of (possibly repeated) item rows.
    pub fn from_rows(rows: &[ItemVector]) -> Result<Self> {
        let mut counts: Vec<(ItemVector, u64)> = Vec::new();
        for x in rows {
            match counts.iter_mut().find(|(y, _)| y == x) {
                Some((_, c)) => *c += 1,
                None => counts.push((*x, 1)),
            }
        }
        Self::exact(counts)
    }

    /// `alpha * self + (1 - alpha) * other` as an approximate design.
    pub fn mixture(&self, other: &Design, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(DesignError::InvalidArgument(format!("mixing weight {alpha} outside [0, 1]")));
        }
        check_dim(self.k(), other.k())?;
        let mut merged: Vec<(ItemVector, f64)> = self.points.iter().map(|p| (p.item, alpha * p.weight)).collect();
        for p in &other.points {
            let w = (1.0 - alpha) * p.weight;
            match merged.iter_mut().find(|(x, _)| *x == p.item) {
                Some((_, acc)) => *acc += w,
                None => merged.push((p.item, w)),
            }
        }
        Self::approximate(merged)
    }

    pub fn points(&self) -> &[DesignPoint] {
        &self.points
    }

    pub fn k(&self) -> usize {
        self.points[0].item.k()
    }

    /// Support size `n`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.total.is_some()
    }

    /// Total number of items `N` of an exact design.
    pub fn total(&self) -> Option<u64> {
        self.total
    }

    pub fn weight_of(&self, x: &ItemVector) -> f64 {
        self.points.iter().find(|p| p.item == *x).map_or(0.0, |p| p.weight)
    }

    /// Drop the replication counts, keeping the weights.
    pub fn to_approximate(&self) -> Design {
        Design {
            points: self.points.iter().map(|p| DesignPoint { count: None, ..p.clone() }).collect(),
            total: None,
        }
    }
}

fn check_support<'a>(items: impl Iterator<Item = &'a ItemVector>) -> Result<()> {
    let items: Vec<&ItemVector> = items.collect();
    let Some(first) = items.first() else {
        return Err(DesignError::InvalidDesign("design has no support points".into()));
    };
    if let Some(x) = items.iter().find(|x| x.k() != first.k()) {
        return Err(DesignError::DimensionMismatch { expected: first.k(), actual: x.k() });
    }
    let mut sorted = items.clone();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(DesignError::InvalidDesign(format!("item {} appears twice", w[0])));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DesignKindTag {
    Approximate,
    Exact,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignPointJson {
    item: ItemVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignJson {
    kind: DesignKindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    points: Vec<DesignPointJson>,
}

impl TryFrom<DesignJson> for Design {
    type Error = DesignError;

    fn try_from(raw: DesignJson) -> Result<Self> {
        match raw.kind {
            DesignKindTag::Approximate => {
                let points = raw
                    .points
                    .into_iter()
                    .map(|p| match (p.weight, p.count) {
                        (Some(w), None) => Ok((p.item, w)),
                        _ => Err(DesignError::InvalidDesign("approximate design points need \"weight\" only".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Design::approximate(points)
            }
            DesignKindTag::Exact => {
                let points = raw
                    .points
                    .into_iter()
                    .map(|p| match (p.count, p.weight) {
                        (Some(c), None) => Ok((p.item, c)),
                        _ => Err(DesignError::InvalidDesign("exact design points need \"count\" only".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let design = Design::exact(points)?;
                match raw.n {
                    Some(n) if Some(n) != design.total => Err(DesignError::InvalidDesign(format!(
                        "n = {n} but counts sum to {}",
                        design.total.unwrap_or(0)
                    ))),
                    _ => Ok(design),
                }
            }
        }
    }
}

impl From<Design> for DesignJson {
    fn from(d: Design) -> Self {
        let exact = d.total.is_some();
        DesignJson {
            kind: if exact { DesignKindTag::Exact } else { DesignKindTag::Approximate },
            n: d.total,
            points: d
                .points
                .into_iter()
                .map(|p| DesignPointJson {
                    item: p.item,
                    weight: if exact { None } else { Some(p.weight) },
                    count: p.count,
                })
                .collect(),
        }
    }
}

/// Symmetric `(K+1) x (K+1)` information matrix with its factorization.
#[derive(Clone, Debug)]
pub struct InfoMatrix {
    entries: DMatrix<f64>,
    log_det: Option<f64>,
    condition: f64,
    inverse: Option<DMatrix<f64>>,
}

impl InfoMatrix {
    /// Wrap a symmetric matrix.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(DesignError::InvalidArgument("information matrix must be square".into()));
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        let n = entries.nrows();
        for i in 0..n {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 * scale {
                    return Err(DesignError::InvalidArgument("information matrix must be symmetric".into()));
                }
            }
        }
        let factor = SpdFactor::new(&entries);
        Ok(Self { entries, log_det: factor.log_det, condition: factor.condition, inverse: factor.inverse })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Natural log of the determinant, `None` when singular.
    pub fn log_det(&self) -> Option<f64> {
        self.log_det
    }

    /// Ratio of extreme eigenvalues (infinite if not positive definite).
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn is_singular(&self) -> bool {
        self.log_det.is_none()
    }

    pub fn inverse(&self) -> Result<&DMatrix<f64>> {
        self.inverse.as_ref().ok_or(DesignError::SingularInformation { condition: self.condition })
    }

    /// Row-major CSV with a header naming the parameters `beta0..betaK`.
    pub fn to_csv(&self) -> String {
        matrix_csv(&self.entries)
    }
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = (0..m.ncols()).map(|j| format!("beta{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// `M(xi; beta) = sum_i w_i q(x_i; beta)^{-1} f(x_i) f(x_i)^T`.
pub fn info_matrix(d: &Design, m: &ModelSpec) -> Result<InfoMatrix> {
    check_dim(m.k(), d.k())?;
    let weights: Vec<f64> = d
        .points()
        .iter()
        .map(|p| Ok(p.weight / inverse_weight(&p.item, m)?))
        .collect::<Result<_>>()?;
    InfoMatrix::from_matrix(accumulate(m.p(), d.points().iter().map(|p| p.item.mask()).zip(weights)))
}

/// Sum of `c * f(x) f(x)^T` over `(mask, c)` pairs.
pub(crate) fn accumulate(p: usize, terms: impl Iterator<Item = (u64, f64)>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    let mut idx = Vec::with_capacity(p);
    for (mask, c) in terms {
        if c == 0.0 {
            continue;
        }
        idx.clear();
        idx.push(0);
        idx.extend((0..p - 1).filter(|i| mask >> i & 1 == 1).map(|i| i + 1));
        for &i in &idx {
            for &j in &idx {
                m[(i, j)] += c;
            }
        }
    }
    m
}

/// Log-determinant of an information matrix; `None` flags singularity.
pub fn log_det(m: &InfoMatrix) -> Option<f64> {
    m.log_det()
}

/// Sensitivity `d(x; xi) = q(x)^{-1} f(x)^T M(xi)^{-1} f(x)`.
///
/// A design is D-optimal iff `d(x; xi) <= p` on every vertex, with equality
/// on its support.
pub fn sensitivity(x: &ItemVector, d: &Design, m: &ModelSpec) -> Result<f64> {
    check_dim(m.k(), x.k())?;
    let info = info_matrix(d, m)?;
    sensitivity_with(x, &info, m)
}

/// Sensitivity against a precomputed information matrix.
pub fn sensitivity_with(x: &ItemVector, info: &InfoMatrix, m: &ModelSpec) -> Result<f64> {
    check_dim(m.k(), x.k())?;
    check_dim(m.p(), info.dim())?;
    let inv = info.inverse()?;
    Ok(binary_quad_form(inv, x.mask()) / inverse_weight(x, m)?)
}

/// Closed form of the sensitivity of the one-feature design `xi0` in the
/// standardized model:
/// `(K+1) q(x)^{-1} ((|x|-1)^2 q0 + sum_k x_k q_k)`.
///
/// The leading `K+1` comes from `M(xi0)^{-1}`, so this equals
/// [`sensitivity`] of `xi0` without any extra prefactor.
pub fn closed_form_sensitivity_xi0(x: &ItemVector, s: &StandardizedParams) -> Result<f64> {
    let q = standardized_inverse_weight(x, s)?;
    let m = x.weight() as f64 - 1.0;
    let inner = m * m * s.q0() + x.features().map(|k| s.q_single(k)).sum::<f64>();
    Ok((s.k() + 1) as f64 * inner / q)
}
