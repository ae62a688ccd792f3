//! Numerical D-optimal designs over the `2^K` vertices and rounding to
//! exact designs.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::fisher::{accumulate, info_matrix, Design, InfoMatrix};
use crate::model::{check_dim, inverse_weight, ItemVector, ModelSpec};
use crate::optimality::{certification_from, CertificationReport, DEFAULT_KW_TOL};
use crate::scan::map_indices;
use crate::MAX_ENUM_K;

/// Support points of a converged design have `d(x_i) >= p (1 - 10 tol)`.
const SUPPORT_TOL_FACTOR: f64 = 10.0;

/// Published confidence-ellipsoid volume ratio of the two linear-model
/// example designs.
pub const PUBLISHED_LINEAR_VOLUME_RATIO: f64 = 2.7;

fn check_k(k: usize) -> Result<()> {
    if k == 0 || k > MAX_ENUM_K {
        Err(DesignError::InvalidArgument(format!("K must be in 1..={MAX_ENUM_K}, got {k}")))
    } else {
        Ok(())
    }
}

/// Weight `1/(K+1)` on the basic item and each one-feature item.
pub fn xi0(k: usize) -> Result<Design> {
    if k == 0 || k > crate::MAX_K {
        return Err(DesignError::InvalidArgument(format!("K must be positive, got {k}")));
    }
    let w = 1.0 / (k + 1) as f64;
    let mut points = vec![(ItemVector::zero(k)?, w)];
    for f in 1..=k {
        points.push((ItemVector::unit(k, f)?, w));
    }
    Design::approximate(points)
}

/// Uniform weight `2^{-K}` on every vertex.
pub fn full_factorial(k: usize) -> Result<Design> {
    check_k(k)?;
    let w = 1.0 / (1u64 << k) as f64;
    Design::approximate(ItemVector::all(k)?.map(|x| (x, w)).collect())
}

#[derive(Clone, Debug)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Relative tolerance on `max d(x) / p - 1`.
    pub tol: f64,
    /// Weights below this are set to zero (only while their sensitivity is
    /// below `p`).
    pub prune_threshold: f64,
    /// Defaults to the full factorial.
    pub start: Option<Design>,
    pub record_history: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { max_iter: 100_000, tol: DEFAULT_KW_TOL, prune_threshold: 1e-8, start: None, record_history: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub log_det: f64,
    pub max_sensitivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub design: Design,
    pub iterations: usize,
    pub final_log_det: f64,
    pub certification: CertificationReport,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<HistoryEntry>>,
}

impl OptimizeReport {
    /// Iteration trace as CSV `iteration,logdet,max_sensitivity`.
    pub fn history_csv(&self) -> Option<String> {
        self.history.as_ref().map(|h| {
            let mut out = String::from("iteration,logdet,max_sensitivity\n");
            for e in h {
                out.push_str(&format!("{},{},{}\n", e.iteration, e.log_det, e.max_sensitivity));
            }
            out
        })
    }
}

/// Locally D-optimal approximate design by multiplicative weight updates
/// `w_i <- w_i d(x_i; xi) / p` over all vertices.
///
/// When only zero-weight vertices exceed the bound, one exact line-search
/// step towards the worst of them is taken instead. Both steps never
/// decrease `log det M`. Hitting `max_iter` returns `converged = false`
/// with the last design.
pub fn optimize(m: &ModelSpec, opts: &OptimizeOptions) -> Result<OptimizeReport> {
    let k = m.k();
    check_k(k)?;
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(DesignError::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if !(opts.prune_threshold.is_finite() && opts.prune_threshold >= 0.0) {
        return Err(DesignError::InvalidArgument("prune threshold must be >= 0".into()));
    }
    let n = 1usize << k;
    let p = m.p() as f64;
    let items: Vec<ItemVector> = ItemVector::all(k)?.collect();
    let q: Vec<f64> = items.iter().map(|x| inverse_weight(x, m)).collect::<Result<_>>()?;

    let mut w = vec![0.0; n];
    match &opts.start {
        Some(start) => {
            check_dim(k, start.k())?;
            for pt in start.points() {
                w[pt.item.mask() as usize] = pt.weight;
            }
        }
        None => w.fill(1.0 / n as f64),
    }

    let bound = p * (1.0 + opts.tol);
    let mut history = opts.record_history.then(Vec::new);
    let mut iteration = 0;
    let mut converged = false;
    let (info, d) = loop {
        let info = InfoMatrix::from_matrix(accumulate(m.p(), (0..n).map(|i| (i as u64, w[i] / q[i]))))?;
        let Ok(inv) = info.inverse() else {
            return Err(DesignError::SingularInformation { condition: info.condition() });
        };
        let d = map_indices(n, |i| crate::linalg::binary_quad_form(inv, i as u64) / q[i]);
        let max_d = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if let Some(h) = history.as_mut() {
            h.push(HistoryEntry { iteration, log_det: info.log_det().unwrap_or(f64::NEG_INFINITY), max_sensitivity: max_d });
        }
        let lower = p * (1.0 - SUPPORT_TOL_FACTOR * opts.tol);
        if max_d <= bound && (0..n).all(|i| w[i] == 0.0 || d[i] >= lower) {
            converged = true;
            break (info, d);
        }
        if max_d <= bound {
            // Certified, but vanishing points remain on the support: try
            // dropping them outright.
            if let Some((pw, pinfo, pd)) = purge(&w, &d, &q, lower, bound, m.p())? {
                w = pw;
                iteration += 1;
                if let Some(h) = history.as_mut() {
                    let max_sensitivity = pd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    h.push(HistoryEntry { iteration, log_det: pinfo.log_det().unwrap_or(f64::NEG_INFINITY), max_sensitivity });
                }
                converged = true;
                break (pinfo, pd);
            }
        }
        if iteration >= opts.max_iter {
            break (info, d);
        }

        let active_max = (0..n).filter(|&i| w[i] > 0.0).map(|i| d[i]).fold(f64::NEG_INFINITY, f64::max);
        if max_d > bound && active_max <= bound {
            // Weight-space fixed point; move mass to the worst excluded vertex.
            let j = crate::scan::argmax(&d).expect("nonempty");
            let alpha = (d[j] - p) / (p * (d[j] - 1.0));
            for wi in w.iter_mut() {
                *wi *= 1.0 - alpha;
            }
            w[j] += alpha;
        } else {
            for i in 0..n {
                w[i] *= d[i] / p;
            }
        }
        let mut total = 0.0;
        for i in 0..n {
            if w[i] < opts.prune_threshold && d[i] < p {
                w[i] = 0.0;
            }
            total += w[i];
        }
        for wi in w.iter_mut() {
            *wi /= total;
        }
        iteration += 1;
    };

    let design = Design::approximate((0..n).filter(|&i| w[i] > 0.0).map(|i| (items[i], w[i])).collect())?;
    let certification = certification_from(&design, m, opts.tol, &d);
    Ok(OptimizeReport {
        converged: converged && certification.optimal,
        final_log_det: info.log_det().expect("nonsingular"),
        design,
        iterations: iteration,
        certification,
        history,
    })
}

/// Candidate design without the support points whose sensitivity is below
/// `lower`, if it still certifies with all support sensitivities in range.
#[allow(clippy::type_complexity)]
fn purge(w: &[f64], d: &[f64], q: &[f64], lower: f64, bound: f64, p: usize) -> Result<Option<(Vec<f64>, InfoMatrix, Vec<f64>)>> {
    let n = w.len();
    let mut pw: Vec<f64> = (0..n).map(|i| if d[i] >= lower { w[i] } else { 0.0 }).collect();
    let total: f64 = pw.iter().sum();
    if total <= 0.0 {
        return Ok(None);
    }
    pw.iter_mut().for_each(|x| *x /= total);
    let info = InfoMatrix::from_matrix(accumulate(p, (0..n).map(|i| (i as u64, pw[i] / q[i]))))?;
    let Ok(inv) = info.inverse() else {
        return Ok(None);
    };
    let pd = map_indices(n, |i| crate::linalg::binary_quad_form(inv, i as u64) / q[i]);
    let ok = pd.iter().all(|&v| v <= bound) && (0..n).all(|i| pw[i] == 0.0 || pd[i] >= lower);
    Ok(ok.then_some((pw, info, pd)))
}

/// Efficient rounding of an approximate design to `n` items.
///
/// Starts from `ceil((n - s/2) w_i)` for support size `s`, then adds items
/// where `n_i / w_i` is smallest or removes them where `(n_i - 1) / w_i` is
/// largest. Ties go to the larger weight, then the smaller item. Points with
/// zero weight are dropped first.
pub fn round_to_exact(d: &Design, n: u64) -> Result<Design> {
    let support: Vec<(ItemVector, f64)> =
        d.points().iter().filter(|p| p.weight > 0.0).map(|p| (p.item, p.weight)).collect();
    let s = support.len() as u64;
    if n < s {
        return Err(DesignError::InvalidArgument(format!("n = {n} is smaller than the support size {s}")));
    }
    let scale = n as f64 - s as f64 / 2.0;
    let mut counts: Vec<u64> = support.iter().map(|(_, w)| ((scale * w).ceil() as u64).max(1)).collect();

    // Orders candidate i before j for the adjustment step.
    let prefer = |key: &dyn Fn(usize) -> f64, i: usize, j: usize, smallest: bool| -> Ordering {
        let (a, b) = (key(i), key(j));
        let tie = (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        let primary = if tie {
            Ordering::Equal
        } else if smallest {
            a.partial_cmp(&b).unwrap_or(Ordering::Equal)
        } else {
            b.partial_cmp(&a).unwrap_or(Ordering::Equal)
        };
        primary
            .then_with(|| support[j].1.partial_cmp(&support[i].1).unwrap_or(Ordering::Equal))
            .then_with(|| support[i].0.cmp(&support[j].0))
    };

    let mut total: u64 = counts.iter().sum();
    while total < n {
        let c = counts.clone();
        let key = |i: usize| c[i] as f64 / support[i].1;
        let j = (0..support.len()).min_by(|&a, &b| prefer(&key, a, b, true)).expect("nonempty");
        counts[j] += 1;
        total += 1;
    }
    while total > n {
        let c = counts.clone();
        let key = |i: usize| (c[i] as f64 - 1.0) / support[i].1;
        let j = (0..support.len())
            .filter(|&i| c[i] > 1)
            .min_by(|&a, &b| prefer(&key, a, b, false))
            .expect("total > n >= s implies a count above one");
        counts[j] -= 1;
        total -= 1;
    }
    Design::exact(support.iter().map(|(x, _)| *x).zip(counts).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub id: String,
    /// `None` when the information matrix is singular.
    pub log_det: Option<f64>,
    /// D-efficiency against the best nonsingular design in the list.
    pub efficiency: Option<f64>,
}

/// Log-determinants and D-efficiencies relative to the best design listed.
pub fn compare_designs(designs: &[(String, Design)], m: &ModelSpec) -> Result<Vec<CompareRow>> {
    let log_dets: Vec<Option<f64>> =
        designs.iter().map(|(_, d)| Ok(info_matrix(d, m)?.log_det())).collect::<Result<_>>()?;
    let best = log_dets.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p = m.p() as f64;
    Ok(designs
        .iter()
        .zip(log_dets)
        .map(|((id, _), ld)| CompareRow {
            id: id.clone(),
            log_det: ld,
            efficiency: ld.map(|l| ((l - best) / p).exp()),
        })
        .collect())
}

/// The two 8-run example designs for three binary factors: the full
/// factorial `D1` and `D2`, which repeats the basic and one-feature items
/// twice.
pub fn linear_example_designs() -> Result<(Design, Design)> {
    let rows = |r: &[[u8; 3]]| -> Result<Vec<ItemVector>> { r.iter().map(|b| ItemVector::from_bits(b)).collect() };
    let d1 = rows(&[[1, 1, 1], [1, 1, 0], [1, 0, 1], [1, 0, 0], [0, 1, 1], [0, 1, 0], [0, 0, 1], [0, 0, 0]])?;
    let d2 = rows(&[[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 0]])?;
    Ok((Design::from_rows(&d1)?, Design::from_rows(&d2)?))
}

/// Confidence-ellipsoid comparison of `D2` against `D1` in the linear model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRatioReport {
    pub rows: Vec<CompareRow>,
    /// `det M(D1) / det M(D2)`.
    pub det_ratio: f64,
    /// Ellipsoid volume of `D2` over that of `D1`, `sqrt(det_ratio)`.
    pub volume_ratio: f64,
    pub published_volume_ratio: f64,
    pub discrepancy: bool,
}

impl fmt::Display for VolumeRatioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(
                f,
                "{:<4} logdet {:>10.6}  efficiency {:.4}",
                r.id,
                r.log_det.unwrap_or(f64::NEG_INFINITY),
                r.efficiency.unwrap_or(0.0)
            )?;
        }
        write!(
            f,
            "det ratio D1/D2 {:.4}; volume ratio D2/D1 computed {:.4}, published {:.1}",
            self.det_ratio, self.volume_ratio, self.published_volume_ratio
        )?;
        if self.discrepancy {
            write!(f, " [DISCREPANCY: published ratio differs from computed value]")?;
        }
        Ok(())
    }
}

/// Compare `D1` and `D2` under constant weights `q = 1` (the linear model).
pub fn linear_volume_ratio_report() -> Result<VolumeRatioReport> {
    let (d1, d2) = linear_example_designs()?;
    let linear = ModelSpec::poisson(1.0, 0.0, vec![0.0; 3])?;
    let rows = compare_designs(&[("D1".into(), d1), ("D2".into(), d2)], &linear)?;
    let (Some(l1), Some(l2)) = (rows[0].log_det, rows[1].log_det) else {
        return Err(DesignError::SingularInformation { condition: f64::INFINITY });
    };
    let det_ratio = (l1 - l2).exp();
    let volume_ratio = det_ratio.sqrt();
    Ok(VolumeRatioReport {
        rows,
        det_ratio,
        volume_ratio,
        published_volume_ratio: PUBLISHED_LINEAR_VOLUME_RATIO,
        discrepancy: (volume_ratio - PUBLISHED_LINEAR_VOLUME_RATIO).abs() > 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::log_det;
    use approx::assert_relative_eq;

    fn counts(d: &Design) -> Vec<u64> {
        d.points().iter().map(|p| p.count.unwrap()).collect()
    }

    #[test]
    fn xi0_and_full_factorial_layouts() {
        let d = xi0(3).unwrap();
        assert_eq!(d.len(), 4);
        let items: Vec<String> = d.points().iter().map(|p| p.item.to_string()).collect();
        assert_eq!(items, ["(0,0,0)", "(1,0,0)", "(0,1,0)", "(0,0,1)"]);
        assert!(d.points().iter().all(|p| p.weight == 0.25));
        assert_eq!(xi0(1).unwrap().len(), 2);
        assert!(xi0(2).unwrap().points().iter().all(|p| (p.weight - 1.0 / 3.0).abs() < 1e-15));

        let ff = full_factorial(3).unwrap();
        assert_eq!(ff.len(), 8);
        assert!(ff.points().iter().all(|p| p.weight == 0.125));
        assert_eq!(full_factorial(1).unwrap(), xi0(1).unwrap());
        assert_eq!(full_factorial(2).unwrap().len(), 4);
        assert!(full_factorial(0).is_err());
        assert!(full_factorial(17).is_err());
    }

    #[test]
    fn recovers_xi0_when_pairwise_conditions_hold() {
        let m = ModelSpec::poisson(1.0, 0.0, vec![-2.0; 3]).unwrap();
        let r = optimize(&m, &OptimizeOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.design.len(), 4);
        for p in xi0(3).unwrap().points() {
            assert!((r.design.weight_of(&p.item) - 0.25).abs() < 1e-4);
        }
    }

    #[test]
    fn full_factorial_at_indifference() {
        let m = ModelSpec::poisson(1.0, 0.0, vec![0.0; 3]).unwrap();
        let r = optimize(&m, &OptimizeOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.design.len(), 8);
        assert!(r.design.points().iter().all(|p| (p.weight - 0.125).abs() < 1e-4));
    }

    #[test]
    fn intermediate_region_uses_two_feature_items() {
        let m = ModelSpec::poisson(1.0, 0.0, vec![-0.5; 3]).unwrap();
        let opts = OptimizeOptions { record_history: true, ..Default::default() };
        let r = optimize(&m, &opts).unwrap();
        assert!(r.converged);
        assert!(r.design.points().iter().any(|p| p.item.weight() == 2));
        let xi0_ld = log_det(&info_matrix(&xi0(3).unwrap(), &m).unwrap()).unwrap();
        assert!(r.final_log_det > xi0_ld);
        let h = r.history.as_ref().unwrap();
        assert!(h.windows(2).all(|w| w[1].log_det >= w[0].log_det - 1e-12));
        assert!(r.history_csv().unwrap().starts_with("iteration,logdet,max_sensitivity\n0,"));
    }

    #[test]
    fn singular_start_is_an_error() {
        let m = ModelSpec::poisson(1.0, 0.0, vec![-1.0; 3]).unwrap();
        let start = Design::approximate(vec![(ItemVector::zero(3).unwrap(), 1.0)]).unwrap();
        let opts = OptimizeOptions { start: Some(start), ..Default::default() };
        assert!(matches!(optimize(&m, &opts), Err(DesignError::SingularInformation { .. })));
    }

    #[test]
    fn max_iter_reports_non_convergence() {
        let m = ModelSpec::poisson(1.0, 0.0, vec![-0.5; 3]).unwrap();
        let opts = OptimizeOptions { max_iter: 3, ..Default::default() };
        let r = optimize(&m, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(counts(&round_to_exact(&xi0(3).unwrap(), 8).unwrap()), vec![2, 2, 2, 2]);
        assert_eq!(counts(&round_to_exact(&xi0(3).unwrap(), 10).unwrap()), vec![3, 3, 2, 2]);
        let half = Design::approximate(vec![(ItemVector::zero(1).unwrap(), 0.5), (ItemVector::unit(1, 1).unwrap(), 0.5)])
            .unwrap();
        assert_eq!(counts(&round_to_exact(&half, 3).unwrap()), vec![2, 1]);
        assert!(round_to_exact(&xi0(3).unwrap(), 3).is_err());
        let uneven = Design::approximate(vec![
            (ItemVector::zero(2).unwrap(), 0.2),
            (ItemVector::unit(2, 1).unwrap(), 0.3),
            (ItemVector::unit(2, 2).unwrap(), 0.5),
        ])
        .unwrap();
        assert_eq!(counts(&round_to_exact(&uneven, 7).unwrap()), vec![2, 2, 3]);
        // ceil(3.5 w) = (1, 1, 2); all ratios n_i/w_i tie at 4, larger weight wins
        let tied = Design::approximate(vec![
            (ItemVector::zero(2).unwrap(), 0.25),
            (ItemVector::unit(2, 1).unwrap(), 0.25),
            (ItemVector::unit(2, 2).unwrap(), 0.5),
        ])
        .unwrap();
        assert_eq!(counts(&round_to_exact(&tied, 5).unwrap()), vec![1, 1, 3]);
        assert_eq!(counts(&round_to_exact(&xi0(3).unwrap(), 4).unwrap()), vec![1, 1, 1, 1]);
        // ceil(2.5 w) = (2, 2, 1) overshoots n = 4; the first of the tied pair loses one
        let over = Design::approximate(vec![
            (ItemVector::zero(2).unwrap(), 0.45),
            (ItemVector::unit(2, 1).unwrap(), 0.45),
            (ItemVector::unit(2, 2).unwrap(), 0.1),
        ])
        .unwrap();
        assert_eq!(counts(&round_to_exact(&over, 4).unwrap()), vec![1, 2, 1]);
    }

    #[test]
    fn compare_examples() {
        let m = ModelSpec::poisson(1.0, 0.0, vec![-2.0; 3]).unwrap();
        let rows = compare_designs(
            &[("xi0".into(), xi0(3).unwrap()), ("ff".into(), full_factorial(3).unwrap())],
            &m,
        )
        .unwrap();
        assert_relative_eq!(rows[0].efficiency.unwrap(), 1.0);
        assert!(rows[1].efficiency.unwrap() < 1.0);

        let d = xi0(2).unwrap();
        let m2 = ModelSpec::poisson(1.0, 0.0, vec![-1.0; 2]).unwrap();
        let rows = compare_designs(&[("a".into(), d.clone()), ("b".into(), d)], &m2).unwrap();
        assert_eq!(rows[0].log_det, rows[1].log_det);
        assert_eq!(rows[1].efficiency, Some(1.0));

        let single = Design::approximate(vec![(ItemVector::zero(2).unwrap(), 1.0)]).unwrap();
        let rows = compare_designs(&[("s".into(), single), ("x".into(), xi0(2).unwrap())], &m2).unwrap();
        assert_eq!(rows[0].log_det, None);
        assert_eq!(rows[1].efficiency, Some(1.0));
    }

    #[test]
    fn linear_example_ratio() {
        let r = linear_volume_ratio_report().unwrap();
        assert_relative_eq!(r.det_ratio, 4.0, epsilon = 1e-10);
        assert_relative_eq!(r.volume_ratio, 2.0, epsilon = 1e-10);
        assert!(r.discrepancy);
        let text = r.to_string();
        assert!(text.contains("2.7") && text.contains("2.0000") && text.contains("DISCREPANCY"));
    }
}
