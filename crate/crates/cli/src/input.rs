//! Model and design arguments: JSON files, inline JSON, named designs and
//! override flags.

use std::fmt;
use std::fs;

use anyhow::{anyhow, Result};
use clap::{Args, ValueEnum};
use rasch_design::{full_factorial, xi0, Design, ModelSpec};
use serde_json::{Map, Value};

/// Unreadable input or malformed JSON (exit code 1).
#[derive(Debug)]
pub struct ParseError(pub String);

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FamilyArg {
    Poisson,
    PoissonGamma,
}

impl FamilyArg {
    fn tag(self) -> &'static str {
        match self {
            FamilyArg::Poisson => "poisson",
            FamilyArg::PoissonGamma => "poisson-gamma",
        }
    }
}

/// Model given as JSON (`--model`) with per-field overrides. Flags win over
/// the file, the file wins over defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Model JSON file or inline JSON object.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Mean ability for the Poisson family (default 1).
    #[arg(long)]
    pub theta0: Option<f64>,
    /// Gamma shape (default theta0 / b).
    #[arg(long)]
    pub a: Option<f64>,
    /// Gamma scale; implies the Poisson-Gamma family.
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    /// Comma-separated feature effects, e.g. `-2,-2,-2`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub effects: Option<Vec<f64>>,
    /// Number of features; all effects zero unless given.
    #[arg(long)]
    pub k: Option<usize>,
}

impl ModelArgs {
    pub fn is_empty(&self) -> bool {
        self.model.is_none() && self.effects.is_none() && self.k.is_none()
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let mut obj = match &self.model {
            Some(src) => match read_json(src)? {
                Value::Object(o) => o,
                _ => return Err(anyhow!("model JSON must be an object")),
            },
            None => Map::new(),
        };
        let set = |obj: &mut Map<String, Value>, key: &str, v: Option<f64>| {
            if let Some(v) = v {
                obj.insert(key.into(), v.into());
            }
        };
        set(&mut obj, "theta0", self.theta0);
        set(&mut obj, "a", self.a);
        set(&mut obj, "b", self.b);
        set(&mut obj, "beta0", self.beta0);
        // a family chosen by flags (explicitly or through --a/--b) drops the
        // other family's parameters; a file is taken as written
        let flag_family = self.family.or((self.a.is_some() || self.b.is_some()).then_some(FamilyArg::PoissonGamma));
        if let Some(f) = flag_family {
            obj.insert("family".into(), f.tag().into());
        }
        if !obj.contains_key("family") {
            let pg = obj.contains_key("a") || obj.contains_key("b");
            obj.insert("family".into(), if pg { "poisson-gamma" } else { "poisson" }.into());
        }
        let fill = flag_family.is_some() || self.model.is_none();

        let theta0 = obj.get("theta0").and_then(Value::as_f64);
        if obj["family"] == "poisson-gamma" {
            if fill {
                obj.remove("theta0");
            }
            let b = obj.get("b").and_then(Value::as_f64).ok_or_else(|| anyhow!("the poisson-gamma family needs b"))?;
            if !obj.contains_key("a") && fill {
                obj.insert("a".into(), (theta0.unwrap_or(1.0) / b).into());
            }
        } else {
            if fill {
                obj.remove("a");
                obj.remove("b");
            }
            obj.entry("theta0").or_insert(1.0.into());
        }
        obj.entry("beta0").or_insert(0.0.into());

        match (&self.effects, self.k) {
            (Some(e), _) => {
                obj.insert("effects".into(), e.clone().into());
                obj.insert("k".into(), e.len().into());
            }
            (None, Some(k)) => {
                obj.entry("effects").or_insert_with(|| vec![0.0; k].into());
                obj.insert("k".into(), k.into());
            }
            (None, None) => {
                let len = obj.get("effects").and_then(Value::as_array).map(Vec::len);
                match len {
                    Some(len) => {
                        obj.entry("k").or_insert(len.into());
                    }
                    None => return Err(anyhow!("no effects given (use --effects, --k or --model)")),
                }
            }
        }
        Ok(serde_json::from_value(Value::Object(obj))?)
    }
}

/// Parse JSON from a file path or, when it starts with `{` or `[`, from
/// the argument itself.
pub fn read_json(src: &str) -> Result<Value> {
    let text = if looks_inline(src) {
        src.to_string()
    } else {
        fs::read_to_string(src).map_err(|e| ParseError(format!("cannot read {src}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| ParseError(format!("{src}: {e}")).into())
}

fn looks_inline(src: &str) -> bool {
    matches!(src.trim_start().chars().next(), Some('{' | '['))
}

/// `xi0`, `full-factorial`, or design JSON. Named designs need `k`.
pub fn design(src: &str, k: Option<usize>) -> Result<Design> {
    let named = |f: fn(usize) -> rasch_design::Result<Design>| -> Result<Design> {
        let k = k.ok_or_else(|| anyhow!("design {src:?} needs the number of features (--k or a model)"))?;
        Ok(f(k)?)
    };
    match src {
        "xi0" => named(xi0),
        "full-factorial" => named(full_factorial),
        _ => Ok(serde_json::from_value(read_json(src)?)?),
    }
}
