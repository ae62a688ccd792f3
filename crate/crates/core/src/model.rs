//! Counts model: regression vector, mean/variance and the inverse weight `q`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{DesignError, Result};
use crate::MAX_K;

/// One item type: a vertex `x` of the hypercube `{0,1}^K`.
///
/// Bit `k-1` of the mask holds feature `x_k`, so the canonical order of
/// items (used for every tie-break in the crate) is the integer order of the
/// mask, i.e. lexicographic when the feature tuple is read from `x_K` down
/// to `x_1`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ItemVector {
    mask: u64,
    k: u8,
}

impl ItemVector {
    pub fn from_mask(k: usize, mask: u64) -> Result<Self> {
        if k == 0 || k > MAX_K {
            return Err(DesignError::InvalidArgument(format!("K must be in 1..={MAX_K}, got {k}")));
        }
        if k < 64 && mask >> k != 0 {
            return Err(DesignError::InvalidArgument(format!("mask {mask:#b} has bits beyond K = {k}")));
        }
        Ok(Self { mask, k: k as u8 })
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut mask = 0u64;
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => mask |= 1 << i,
                other => {
                    return Err(DesignError::InvalidArgument(format!(
                        "item entries must be 0 or 1, found {other}"
                    )))
                }
            }
        }
        Self::from_mask(bits.len(), mask)
    }

    /// The basic item with no features.
    pub fn zero(k: usize) -> Result<Self> {
        Self::from_mask(k, 0)
    }

    /// One-feature item `e_feature` (1-based feature number).
    pub fn unit(k: usize, feature: usize) -> Result<Self> {
        if feature == 0 || feature > k {
            return Err(DesignError::InvalidArgument(format!("feature {feature} outside 1..={k}")));
        }
        Self::from_mask(k, 1 << (feature - 1))
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    /// `x_k` for the 1-based feature `k`.
    pub fn get(&self, feature: usize) -> bool {
        feature >= 1 && feature <= self.k() && self.mask >> (feature - 1) & 1 == 1
    }

    /// Number of features present, `|x|`.
    pub fn weight(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.k()).map(|i| (self.mask >> i & 1) as u8).collect()
    }

    /// 1-based numbers of the features present.
    pub fn features(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.k()).filter(move |i| self.mask >> i & 1 == 1).map(|i| i + 1)
    }

    /// Every vertex of `{0,1}^K` in canonical order.
    pub fn all(k: usize) -> Result<impl Iterator<Item = ItemVector>> {
        if k == 0 || k > crate::MAX_ENUM_K {
            return Err(DesignError::TooManyFeatures(k));
        }
        Ok((0..1u64 << k).map(move |mask| ItemVector { mask, k: k as u8 }))
    }
}

impl Ord for ItemVector {
    fn cmp(&self, other: &Self) -> Ordering {
        self.k.cmp(&other.k).then(self.mask.cmp(&other.mask))
    }
}

impl PartialOrd for ItemVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for ItemVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ItemVector({self})")
    }
}

impl fmt::Display for ItemVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, b) in self.bits().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{b}")?;
        }
        f.write_str(")")
    }
}

impl Serialize for ItemVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.bits().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ItemVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let bits = Vec::<u8>::deserialize(deserializer)?;
        ItemVector::from_bits(&bits).map_err(serde::de::Error::custom)
    }
}

/// Response distribution given the item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// Known ability `theta0`.
    Poisson { theta0: f64 },
    /// Ability drawn from Gamma(shape `a`, scale `b`).
    PoissonGamma { a: f64, b: f64 },
}

impl Family {
    /// Mean ability `theta0` (equals `a*b` for the Gamma mixture).
    pub fn mean_ability(&self) -> f64 {
        match *self {
            Family::Poisson { theta0 } => theta0,
            Family::PoissonGamma { a, b } => a * b,
        }
    }

    /// Gamma scale, 0 in the Poisson limit.
    pub fn scale(&self) -> f64 {
        match *self {
            Family::Poisson { .. } => 0.0,
            Family::PoissonGamma { b, .. } => b,
        }
    }
}

/// Main-effects model `log sigma = beta0 + sum_k beta_k x_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecJson", into = "ModelSpecJson")]
pub struct ModelSpec {
    family: Family,
    beta0: f64,
    effects: Vec<f64>,
}

impl ModelSpec {
    pub fn new(family: Family, beta0: f64, effects: Vec<f64>) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(DesignError::InvalidModel(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match family {
            Family::Poisson { theta0 } => positive("theta0", theta0)?,
            Family::PoissonGamma { a, b } => {
                positive("a", a)?;
                positive("b", b)?;
            }
        }
        if effects.is_empty() || effects.len() > MAX_K {
            return Err(DesignError::InvalidModel(format!(
                "number of features must be in 1..={MAX_K}, got {}",
                effects.len()
            )));
        }
        if !beta0.is_finite() || effects.iter().any(|e| !e.is_finite()) {
            return Err(DesignError::InvalidModel("regression coefficients must be finite".into()));
        }
        Ok(Self { family, beta0, effects })
    }

    pub fn poisson(theta0: f64, beta0: f64, effects: Vec<f64>) -> Result<Self> {
        Self::new(Family::Poisson { theta0 }, beta0, effects)
    }

    pub fn poisson_gamma(a: f64, b: f64, beta0: f64, effects: Vec<f64>) -> Result<Self> {
        Self::new(Family::PoissonGamma { a, b }, beta0, effects)
    }

    /// Standardized model (`theta0 = 1`, `beta0 = 0`) with the given effects
    /// and scale; `b = 0` gives the Poisson family.
    pub fn standard(effects: Vec<f64>, b: f64) -> Result<Self> {
        StandardizedParams::new(effects, b)?.to_model()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn k(&self) -> usize {
        self.effects.len()
    }

    /// Number of parameters `p = K + 1`.
    pub fn p(&self) -> usize {
        self.k() + 1
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn effects(&self) -> &[f64] {
        &self.effects
    }

    /// Full parameter vector `(beta0, beta_1, ..., beta_K)`.
    pub fn beta(&self) -> Vec<f64> {
        std::iter::once(self.beta0).chain(self.effects.iter().copied()).collect()
    }

    /// Same family and scale, different regression coefficients.
    pub fn with_beta(&self, beta: &[f64]) -> Result<Self> {
        check_dim(self.p(), beta.len())?;
        Self::new(self.family, beta[0], beta[1..].to_vec())
    }

    /// Linear predictor `f(x)^T beta`.
    pub fn linear_predictor(&self, x: &ItemVector) -> Result<f64> {
        check_dim(self.k(), x.k())?;
        Ok(self.beta0 + x.features().map(|k| self.effects[k - 1]).sum::<f64>())
    }

    /// Easiness `sigma(x) = exp(f(x)^T beta)`.
    pub fn easiness(&self, x: &ItemVector) -> Result<f64> {
        Ok(self.linear_predictor(x)?.exp())
    }

    /// Parameters of the standardized problem with the same optimal designs.
    ///
    /// With `q = (b + exp(-beta0 - s))/(ab) = exp(-beta0) (b exp(beta0) + exp(-s))/(ab)`
    /// the standardized scale is `b * exp(beta0)`, not `b` itself.
    pub fn standardized(&self) -> StandardizedParams {
        StandardizedParams {
            effects: self.effects.clone(),
            b_scale: self.family.scale() * self.beta0.exp(),
        }
    }

    /// Factor `theta0 * exp(beta0)` relating `M` to its standardized version.
    pub fn information_scale(&self) -> f64 {
        self.family.mean_ability() * self.beta0.exp()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum FamilyTag {
    Poisson,
    PoissonGamma,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpecJson {
    family: FamilyTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    k: usize,
    beta0: f64,
    effects: Vec<f64>,
}

impl TryFrom<ModelSpecJson> for ModelSpec {
    type Error = DesignError;

    fn try_from(raw: ModelSpecJson) -> Result<Self> {
        let family = match (raw.family, raw.theta0, raw.a, raw.b) {
            (FamilyTag::Poisson, Some(theta0), None, None) => Family::Poisson { theta0 },
            (FamilyTag::PoissonGamma, None, Some(a), Some(b)) => Family::PoissonGamma { a, b },
            (FamilyTag::Poisson, ..) => {
                return Err(DesignError::InvalidModel(
                    "family \"poisson\" takes \"theta0\" and no \"a\"/\"b\"".into(),
                ))
            }
            (FamilyTag::PoissonGamma, ..) => {
                return Err(DesignError::InvalidModel(
                    "family \"poisson-gamma\" takes \"a\" and \"b\" and no \"theta0\"".into(),
                ))
            }
        };
        if raw.k != raw.effects.len() {
            return Err(DesignError::InvalidModel(format!(
                "k = {} but {} effects given",
                raw.k,
                raw.effects.len()
            )));
        }
        ModelSpec::new(family, raw.beta0, raw.effects)
    }
}

impl From<ModelSpec> for ModelSpecJson {
    fn from(m: ModelSpec) -> Self {
        let (family, theta0, a, b) = match m.family {
            Family::Poisson { theta0 } => (FamilyTag::Poisson, Some(theta0), None, None),
            Family::PoissonGamma { a, b } => (FamilyTag::PoissonGamma, None, Some(a), Some(b)),
        };
        ModelSpecJson { family, theta0, a, b, k: m.effects.len(), beta0: m.beta0, effects: m.effects }
    }
}

/// Standardized parameters: `theta0 = 1`, `beta0 = 0`, scale `b_scale`
/// (`0` is the Poisson limit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizedParams {
    pub effects: Vec<f64>,
    pub b_scale: f64,
}

impl StandardizedParams {
    pub fn new(effects: Vec<f64>, b_scale: f64) -> Result<Self> {
        if !(b_scale.is_finite() && b_scale >= 0.0) {
            return Err(DesignError::InvalidModel(format!("b must be finite and >= 0, got {b_scale}")));
        }
        if effects.is_empty() || effects.len() > MAX_K || effects.iter().any(|e| !e.is_finite()) {
            return Err(DesignError::InvalidModel("effects must be 1..=64 finite values".into()));
        }
        Ok(Self { effects, b_scale })
    }

    pub fn k(&self) -> usize {
        self.effects.len()
    }

    /// The standardized model as a [`ModelSpec`] (`a*b = 1`).
    pub fn to_model(&self) -> Result<ModelSpec> {
        let family = if self.b_scale == 0.0 {
            Family::Poisson { theta0: 1.0 }
        } else {
            Family::PoissonGamma { a: 1.0 / self.b_scale, b: self.b_scale }
        };
        ModelSpec::new(family, 0.0, self.effects.clone())
    }

    /// `q0 = b + 1`.
    pub fn q0(&self) -> f64 {
        self.b_scale + 1.0
    }

    /// `q_k = b + exp(-beta_k)` (1-based `k`).
    pub fn q_single(&self, k: usize) -> f64 {
        self.b_scale + (-self.effects[k - 1]).exp()
    }

    /// `q_jk = b + exp(-beta_j) exp(-beta_k)`.
    pub fn q_pair(&self, j: usize, k: usize) -> f64 {
        self.b_scale + (-self.effects[j - 1] - self.effects[k - 1]).exp()
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(DesignError::DimensionMismatch { expected, actual })
    }
}

/// `f(x) = (1, x_1, ..., x_K)`.
pub fn regression_vector(x: &ItemVector) -> Vec<f64> {
    std::iter::once(1.0).chain(x.bits().into_iter().map(f64::from)).collect()
}

/// Like [`regression_vector`], checking `x` against the model dimension.
pub fn regression_vector_for(x: &ItemVector, m: &ModelSpec) -> Result<Vec<f64>> {
    check_dim(m.k(), x.k())?;
    Ok(regression_vector(x))
}

/// `E(Y) = theta0 * sigma(x)`, with `theta0 = ab` under the Gamma mixture.
pub fn mean_response(x: &ItemVector, m: &ModelSpec) -> Result<f64> {
    Ok(m.family.mean_ability() * m.easiness(x)?)
}

/// `Var(Y) = (1 + b sigma(x)) E(Y)`; equals the mean for Poisson.
pub fn variance_response(x: &ItemVector, m: &ModelSpec) -> Result<f64> {
    let sigma = m.easiness(x)?;
    let mean = m.family.mean_ability() * sigma;
    Ok(match m.family {
        Family::Poisson { .. } => mean,
        Family::PoissonGamma { b, .. } => (1.0 + b * sigma) * mean,
    })
}

/// Inverse weight `q(x; beta)`: `(b + exp(-f'beta))/(ab)`, or
/// `exp(-f'beta)/theta0` for Poisson. The per-observation information is
/// `q^{-1} f f^T`.
pub fn inverse_weight(x: &ItemVector, m: &ModelSpec) -> Result<f64> {
    let eta = m.linear_predictor(x)?;
    Ok(match m.family {
        Family::Poisson { theta0 } => (-eta).exp() / theta0,
        Family::PoissonGamma { a, b } => (b + (-eta).exp()) / (a * b),
    })
}

/// Standardized inverse weight `b + exp(-sum_k x_k beta_k)`.
pub fn standardized_inverse_weight(x: &ItemVector, s: &StandardizedParams) -> Result<f64> {
    check_dim(s.k(), x.k())?;
    let sum: f64 = x.features().map(|k| s.effects[k - 1]).sum();
    Ok(s.b_scale + (-sum).exp())
}
