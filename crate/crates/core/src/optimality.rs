//! Optimality of the one-feature design `xi0` and design certificates.
//!
//! `xi0` puts weight `1/(K+1)` on the basic item and on each of the `K`
//! one-feature items. Under nonpositive effects it is locally D-optimal iff
//! every pair of features satisfies
//!
//! ```text
//! q0 + q_j + q_k <= q_jk
//! ```
//!
//! The vertex-wise conditions `(|x|-1)^2 q0 + sum_k x_k q_k <= q(x)` for all
//! `|x| >= 2` are sufficient and reduce to the pairwise ones. Both are
//! implemented so each can be checked against the other.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::fisher::{info_matrix, Design, InfoMatrix};
use crate::linalg::binary_quad_form;
use crate::model::{check_dim, inverse_weight, standardized_inverse_weight, ItemVector, ModelSpec, StandardizedParams};
use crate::optimizer::{full_factorial, xi0};
use crate::scan::{argmax, map_indices};
use crate::MAX_ENUM_K;

/// Default relative tolerance on `max d(x) / p - 1`.
pub const DEFAULT_KW_TOL: f64 = 1e-6;

/// Published minimal efficiencies of `xi0` at indifference, `(K, value)`.
pub const PUBLISHED_XI0_INDIFFERENCE: [(usize, f64); 3] = [(2, 0.84), (3, 0.59), (6, 0.31)];

/// Published minimal efficiencies of the full factorial, `(K, value)`.
pub const PUBLISHED_FULL_FACTORIAL_MIN: [(usize, f64); 3] = [(2, 0.75), (3, 0.50), (6, 0.11)];

/// What a violated inequality was evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    Item(ItemVector),
    /// 1-based feature numbers with `j < k`.
    Pair { j: usize, k: usize },
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Item(x) => write!(f, "item {x}"),
            Witness::Pair { j, k } => write!(f, "pair ({j},{k})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub witness: Witness,
    /// `lhs - rhs` in the q-scale; positive means violated.
    pub slack: f64,
}

/// Outcome of a family of inequalities. Ties (`slack == 0`) are satisfied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub violations: Vec<Violation>,
    pub checked_count: usize,
}

impl ConditionReport {
    fn from_slacks(slacks: impl Iterator<Item = (Witness, f64)>) -> Self {
        let mut checked_count = 0;
        let violations: Vec<Violation> = slacks
            .inspect(|_| checked_count += 1)
            .filter(|(_, slack)| *slack > 0.0)
            .map(|(witness, slack)| Violation { witness, slack })
            .collect();
        Self { holds: violations.is_empty(), violations, checked_count }
    }
}

fn require_nonpositive(s: &StandardizedParams) -> Result<()> {
    match s.effects.iter().position(|&e| e > 0.0) {
        Some(i) => Err(DesignError::PositiveEffect { feature: i + 1, value: s.effects[i] }),
        None => Ok(()),
    }
}

/// Slack `q0 + q_j + q_k - q_jk` of the pairwise condition.
pub fn pair_slack(s: &StandardizedParams, j: usize, k: usize) -> f64 {
    s.q0() + s.q_single(j) + s.q_single(k) - s.q_pair(j, k)
}

/// Pairwise conditions over all `1 <= j < k <= K`; `holds` certifies local
/// D-optimality of `xi0` (and its failure refutes it).
pub fn theorem1_check(s: &StandardizedParams) -> Result<ConditionReport> {
    require_nonpositive(s)?;
    let k = s.k();
    let pairs = (1..=k).flat_map(|j| (j + 1..=k).map(move |l| (j, l)));
    Ok(ConditionReport::from_slacks(pairs.map(|(j, l)| (Witness::Pair { j, k: l }, pair_slack(s, j, l)))))
}

/// Vertex-wise conditions over all `2^K - K - 1` items with `|x| >= 2`.
pub fn lemma1_check(s: &StandardizedParams) -> Result<ConditionReport> {
    require_nonpositive(s)?;
    let k = s.k();
    if k > MAX_ENUM_K {
        return Err(DesignError::TooManyFeatures(k));
    }
    let items: Vec<ItemVector> = ItemVector::all(k)?.filter(|x| x.weight() >= 2).collect();
    let slacks = map_indices(items.len(), |i| lemma1_slack(&items[i], s));
    let slacks = slacks.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(ConditionReport::from_slacks(items.into_iter().map(Witness::Item).zip(slacks)))
}

/// Slack `(|x|-1)^2 q0 + sum_k x_k q_k - q(x)`.
pub fn lemma1_slack(x: &ItemVector, s: &StandardizedParams) -> Result<f64> {
    let m = x.weight() as f64 - 1.0;
    let lhs = m * m * s.q0() + x.features().map(|k| s.q_single(k)).sum::<f64>();
    Ok(lhs - standardized_inverse_weight(x, s)?)
}

/// One point of a boundary curve in the difficulty plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub b: f64,
    /// Difficulty multiplier `exp(-beta_k)`.
    pub v: f64,
    /// Smallest `exp(-beta_j)` for which the pair satisfies the condition;
    /// `+inf` when `v <= 1`.
    pub u_min: f64,
}

/// `u_min(v) = (v + 1 + 2b) / (v - 1)` over a grid of difficulty multipliers.
pub fn boundary_curve(b: f64, v_grid: &[f64]) -> Result<Vec<BoundaryPoint>> {
    if !(b.is_finite() && b >= 0.0) {
        return Err(DesignError::InvalidArgument(format!("b must be finite and >= 0, got {b}")));
    }
    if let Some(v) = v_grid.iter().find(|v| !v.is_finite()) {
        return Err(DesignError::InvalidArgument(format!("grid value {v} is not finite")));
    }
    Ok(v_grid
        .iter()
        .map(|&v| BoundaryPoint {
            b,
            v,
            u_min: if v > 1.0 { (v + 1.0 + 2.0 * b) / (v - 1.0) } else { f64::INFINITY },
        })
        .collect())
}

/// Plot-ready CSV with columns `b,v,u_min`.
pub fn boundary_csv(points: &[BoundaryPoint]) -> String {
    let mut out = String::from("b,v,u_min\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.b, p.v, p.u_min));
    }
    out
}

/// Easiness factor `exp(beta)` below which equal effects satisfy the
/// pairwise condition: `1 / (1 + sqrt(2 + 2b))`, i.e. `sqrt(2) - 1` for
/// Poisson.
pub fn equal_effect_threshold(b: f64) -> f64 {
    1.0 / (1.0 + (2.0 + 2.0 * b).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportSensitivity {
    pub item: ItemVector,
    pub sensitivity: f64,
}

/// Equivalence-theorem check of a design over all `2^K` vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub max_sensitivity: f64,
    pub worst_item: ItemVector,
    /// `p (1 + tol)`.
    pub threshold: f64,
    pub optimal: bool,
    pub per_support: Vec<SupportSensitivity>,
}

/// Sensitivities of every vertex in canonical order.
pub(crate) fn vertex_sensitivities(info: &InfoMatrix, m: &ModelSpec) -> Result<Vec<f64>> {
    let inv = info.inverse()?;
    let k = m.k();
    let values = map_indices(1usize << k, |mask| {
        let x = ItemVector::from_mask(k, mask as u64)?;
        Ok(binary_quad_form(inv, mask as u64) / inverse_weight(&x, m)?)
    });
    values.into_iter().collect()
}

/// Certify D-optimality: optimal iff `max_x d(x; d) <= p (1 + tol)`.
pub fn kw_certify(d: &Design, m: &ModelSpec, tol: f64) -> Result<CertificationReport> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(DesignError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if m.k() > MAX_ENUM_K {
        return Err(DesignError::TooManyFeatures(m.k()));
    }
    let info = info_matrix(d, m)?;
    let values = vertex_sensitivities(&info, m)?;
    Ok(certification_from(d, m, tol, &values))
}

pub(crate) fn certification_from(d: &Design, m: &ModelSpec, tol: f64, values: &[f64]) -> CertificationReport {
    let worst = argmax(values).expect("at least one vertex");
    let threshold = m.p() as f64 * (1.0 + tol);
    let per_support = d
        .points()
        .iter()
        .map(|p| SupportSensitivity { item: p.item, sensitivity: values[p.item.mask() as usize] })
        .collect();
    CertificationReport {
        max_sensitivity: values[worst],
        worst_item: ItemVector::from_mask(m.k(), worst as u64).expect("vertex index within K bits"),
        threshold,
        optimal: values[worst] <= threshold,
        per_support,
    }
}

/// D-efficiency `(det M(d) / det M(d_opt))^{1/p}`.
///
/// `d_opt` is expected to be optimal; a warning is logged when it fails the
/// certificate at the default tolerance.
pub fn d_efficiency(d: &Design, d_opt: &Design, m: &ModelSpec) -> Result<f64> {
    check_dim(d.k(), d_opt.k())?;
    let num = info_matrix(d, m)?;
    let den = info_matrix(d_opt, m)?;
    let (Some(a), Some(b)) = (num.log_det(), den.log_det()) else {
        let cond = if num.is_singular() { num.condition() } else { den.condition() };
        return Err(DesignError::SingularInformation { condition: cond });
    };
    if m.k() <= MAX_ENUM_K {
        if let Ok(report) = kw_certify(d_opt, m, DEFAULT_KW_TOL) {
            if !report.optimal {
                log::warn!(
                    "reference design is not certified optimal (max sensitivity {} > {})",
                    report.max_sensitivity,
                    report.threshold
                );
            }
        }
    }
    Ok(((a - b) / m.p() as f64).exp())
}

/// Efficiency of `xi0` at indifference, computed and as published.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndifferenceReport {
    pub k: usize,
    /// `d_efficiency(xi0, full factorial)` at `beta = 0`.
    pub numeric: f64,
    /// `(2^{2K} / (K+1)^{K+1})^{1/(K+1)}`, the determinant ratio in closed form.
    pub determinant_ratio: f64,
    /// Published formula `2^{(K+2)/(K+1)} / (K+1)`.
    pub published_formula: f64,
    /// Published rounded percentage, where one exists.
    pub published_value: Option<f64>,
    /// Published formula disagrees with the numeric value.
    pub discrepancy: bool,
}

impl fmt::Display for IndifferenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "K={}: xi0 efficiency at indifference: numeric {:.4} (determinant ratio {:.4}); published formula {:.4}",
            self.k, self.numeric, self.determinant_ratio, self.published_formula
        )?;
        if let Some(v) = self.published_value {
            write!(f, ", published value {:.0}%", v * 100.0)?;
        }
        if self.discrepancy {
            write!(f, " [DISCREPANCY: published formula differs from numeric value]")?;
        }
        Ok(())
    }
}

/// Published closed form `2^{(K+2)/(K+1)} / (K+1)`.
pub fn published_xi0_indifference_formula(k: usize) -> f64 {
    let p = (k + 1) as f64;
    2f64.powf((k as f64 + 2.0) / p) / p
}

/// Efficiency of `xi0` against the full factorial at `beta = 0`, which is
/// the optimal design there. The published formula is reported alongside.
pub fn indifference_efficiency_xi0(k: usize) -> Result<IndifferenceReport> {
    if k == 0 || k > MAX_ENUM_K {
        return Err(DesignError::InvalidArgument(format!("K must be in 1..={MAX_ENUM_K}, got {k}")));
    }
    let m = ModelSpec::poisson(1.0, 0.0, vec![0.0; k])?;
    let numeric = d_efficiency(&xi0(k)?, &full_factorial(k)?, &m)?;
    let p = (k + 1) as f64;
    let determinant_ratio = ((2.0 * k as f64) * 2f64.ln() / p - p.ln()).exp();
    let published_formula = published_xi0_indifference_formula(k);
    let published_value = PUBLISHED_XI0_INDIFFERENCE.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v);
    Ok(IndifferenceReport {
        k,
        numeric,
        determinant_ratio,
        published_formula,
        published_value,
        discrepancy: (published_formula - numeric).abs() > 1e-9 * numeric.max(1.0),
    })
}

/// Limit `(K+1) / 2^K` of the full-factorial efficiency for strongly
/// negative effects.
pub fn fullfactorial_min_efficiency(k: usize) -> Result<f64> {
    if k == 0 || k > 1000 {
        return Err(DesignError::InvalidArgument(format!("K must be positive, got {k}")));
    }
    Ok((k + 1) as f64 / 2f64.powi(k as i32))
}
