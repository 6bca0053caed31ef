//! JSON model and run configuration.
//!
//! Coefficient matrices are nested row-major arrays whose entries are either
//! a number (a fixed constant) or a record
//! `{"kind": ..., "param_slots": {role: index}, "constants": {role: value}}`.
//! Roles per kind:
//!
//! | kind       | roles                                   |
//! |------------|-----------------------------------------|
//! | `constant` | `value`                                 |
//! | `linear`   | `intercept`, `slope` (value `a + b·t`)  |
//! | `sine`     | `amplitude`, `phase` (default 0), constant `frequency` |
//! | `exp_sine` | `rate`, constant `frequency` (value `exp(−rate·sin(frequency·t))`) |
//! | `sum`, `product` | `terms`: two primitive records    |
//!
//! A frequency is a number or `{"two_pi_over": x}` / `{"two_pi_over_sqrt": x}`.
//! Unknown keys anywhere are rejected.

use std::f64::consts::PI;

use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::estimate::FitOptions;
use crate::linalg::Mat;
use crate::model::{ParamLayout, TdVarmaModel};
use crate::timefn::{Coef, MatrixTimeFunction, Primitive, ScalarTimeFunction};

pub const MAX_DIM: usize = 8;
pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSpec,
    #[serde(default)]
    pub run: RunSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub r: usize,
    pub p: usize,
    pub q: usize,
    pub ar: Vec<Vec<Vec<Value>>>,
    pub ma: Vec<Vec<Vec<Value>>>,
    /// Defaults to the identity.
    #[serde(default)]
    pub scale: Option<Vec<Vec<Value>>>,
    pub sigma: Vec<Vec<f64>>,
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockName {
    Ar,
    Ma,
    Scale,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub block: BlockName,
    #[serde(default)]
    pub true_value: Option<f64>,
    /// `[lo, hi]`; `null` marks an unbounded side.
    #[serde(default)]
    pub bounds: Option<[Option<f64>; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub theta_init: Option<Vec<f64>>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub grad_tol: Option<f64>,
    #[serde(default)]
    pub step_tol: Option<f64>,
    #[serde(default)]
    pub estimate_sigma: bool,
    #[serde(default)]
    pub sigma_iters: Option<usize>,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::config(format!("line {}, column {}", e.line(), e.column()), e.to_string())
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn build_model(&self) -> Result<TdVarmaModel> {
        self.model.build()
    }

    /// Optimizer settings from the run block; `theta_init` defaults to the
    /// true value.
    pub fn fit_options(&self, model: &TdVarmaModel) -> Result<FitOptions> {
        let run = &self.run;
        let theta_init = match &run.theta_init {
            Some(v) => v.clone(),
            None => model.layout().theta0()?.to_vec(),
        };
        if theta_init.len() != model.m() {
            return Err(Error::config("run.theta_init", "length differs from the parameter count"));
        }
        let mut o = FitOptions::new(theta_init);
        if let Some(v) = run.max_iters {
            o.max_iters = v;
        }
        if let Some(v) = run.grad_tol {
            if !(v > 0.0) {
                return Err(Error::config("run.grad_tol", "must be positive"));
            }
            o.grad_tol = v;
        }
        if let Some(v) = run.step_tol {
            if !(v > 0.0) {
                return Err(Error::config("run.step_tol", "must be positive"));
            }
            o.step_tol = v;
        }
        o.estimate_sigma = run.estimate_sigma;
        if let Some(v) = run.sigma_iters {
            o.sigma_iters = v;
        }
        Ok(o)
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<TdVarmaModel> {
        let r = self.r;
        if r == 0 || r > MAX_DIM {
            return Err(Error::config("model.r", format!("must be in 1..={MAX_DIM}")));
        }
        if self.p > MAX_ORDER || self.q > MAX_ORDER {
            return Err(Error::config("model.p/q", format!("orders are limited to {MAX_ORDER}")));
        }
        if self.ar.len() != self.p {
            return Err(Error::config("model.ar", format!("expected {} matrices, got {}", self.p, self.ar.len())));
        }
        if self.ma.len() != self.q {
            return Err(Error::config("model.ma", format!("expected {} matrices, got {}", self.q, self.ma.len())));
        }
        let ar = self
            .ar
            .iter()
            .enumerate()
            .map(|(i, m)| parse_matrix(m, r, &format!("model.ar[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let ma = self
            .ma
            .iter()
            .enumerate()
            .map(|(i, m)| parse_matrix(m, r, &format!("model.ma[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let scale = match &self.scale {
            Some(m) => parse_matrix(m, r, "model.scale")?,
            None => MatrixTimeFunction::identity(r),
        };
        if self.sigma.len() != r || self.sigma.iter().any(|row| row.len() != r) {
            return Err(Error::config("model.sigma", format!("expected a {r}x{r} matrix")));
        }
        let sigma = Mat::from_fn(r, r, |i, j| self.sigma[i][j]);
        let layout = self.layout()?;
        TdVarmaModel::new(ar, ma, scale, sigma, layout).map_err(|e| match e {
            Error::Config { key, msg } => Error::config(format!("model.{key}"), msg),
            other => other,
        })
    }

    fn layout(&self) -> Result<ParamLayout> {
        let mut blocks = [0usize; 3];
        let mut last = 0;
        for (i, p) in self.params.iter().enumerate() {
            let b = match p.block {
                BlockName::Ar => 0,
                BlockName::Ma => 1,
                BlockName::Scale => 2,
            };
            if b < last {
                return Err(Error::config(
                    format!("model.params[{i}].block"),
                    "parameters must be listed in ar, ma, scale order",
                ));
            }
            last = b;
            blocks[b] += 1;
        }
        let names = self.params.iter().map(|p| p.name.clone()).collect();
        let mut layout = ParamLayout::new(names, blocks)?;
        let truth: Vec<Option<f64>> = self.params.iter().map(|p| p.true_value).collect();
        if truth.iter().all(Option::is_some) {
            layout = layout.with_theta0(truth.into_iter().flatten().collect())?;
        } else if truth.iter().any(Option::is_some) {
            return Err(Error::config("model.params.true_value", "give a true value for every parameter or none"));
        }
        let bounds = self
            .params
            .iter()
            .map(|p| match p.bounds {
                Some([lo, hi]) => (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)),
                None => (f64::NEG_INFINITY, f64::INFINITY),
            })
            .collect();
        let layout = layout.with_bounds(bounds).map_err(|e| match e {
            Error::Config { msg, .. } => Error::config("model.params.bounds", msg),
            other => other,
        })?;
        if let Some(t0) = &layout.theta0 {
            if !layout.contains(t0) {
                return Err(Error::config("model.params.true_value", "true value lies outside its bounds"));
            }
        }
        Ok(layout)
    }
}

fn parse_matrix(rows: &[Vec<Value>], r: usize, path: &str) -> Result<MatrixTimeFunction> {
    if rows.len() != r || rows.iter().any(|row| row.len() != r) {
        return Err(Error::config(path, format!("expected a {r}x{r} matrix")));
    }
    let mut entries = Vec::with_capacity(r * r);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            entries.push(parse_entry(v, &format!("{path}[{i}][{j}]"))?);
        }
    }
    MatrixTimeFunction::new(r, entries).map_err(|e| match e {
        Error::Config { key, msg } => Error::config(format!("{path}.{key}"), msg),
        other => other,
    })
}

/// Parses one matrix entry.
pub fn parse_entry(v: &Value, path: &str) -> Result<ScalarTimeFunction> {
    match v {
        Value::Number(_) => Ok(ScalarTimeFunction::constant(number(v, path)?)),
        Value::Object(obj) => {
            let kind = obj
                .get("kind")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::config(format!("{path}.kind"), "missing or not a string"))?;
            match kind {
                "sum" | "product" => {
                    check_keys(obj, &["kind", "terms"], path)?;
                    let terms = obj
                        .get("terms")
                        .and_then(Value::as_array)
                        .filter(|t| t.len() == 2)
                        .ok_or_else(|| Error::config(format!("{path}.terms"), "expected exactly two records"))?;
                    let a = parse_primitive(&terms[0], &format!("{path}.terms[0]"))?;
                    let b = parse_primitive(&terms[1], &format!("{path}.terms[1]"))?;
                    Ok(if kind == "sum" {
                        ScalarTimeFunction::Sum(a, b)
                    } else {
                        ScalarTimeFunction::Product(a, b)
                    })
                }
                _ => Ok(ScalarTimeFunction::Primitive(parse_primitive(v, path)?)),
            }
        }
        _ => Err(Error::config(path, "expected a number or a function record")),
    }
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::config(path, "expected a finite number"))
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::config(format!("{path}.{k}"), format!("unknown key; expected one of {allowed:?}"))),
        None => Ok(()),
    }
}

fn parse_frequency(v: &Value, path: &str) -> Result<f64> {
    match v {
        Value::Object(obj) => {
            check_keys(obj, &["two_pi_over", "two_pi_over_sqrt"], path)?;
            if obj.len() != 1 {
                return Err(Error::config(path, "expected exactly one of two_pi_over, two_pi_over_sqrt"));
            }
            let (k, x) = obj.iter().next().expect("one key");
            let x = number(x, &format!("{path}.{k}"))?;
            let denom = if k == "two_pi_over" { x } else { x.sqrt() };
            if !(denom > 0.0) {
                return Err(Error::config(format!("{path}.{k}"), "must be positive"));
            }
            Ok(2.0 * PI / denom)
        }
        _ => number(v, path),
    }
}

fn parse_primitive(v: &Value, path: &str) -> Result<Primitive> {
    let obj = v.as_object().ok_or_else(|| Error::config(path, "expected a function record"))?;
    check_keys(obj, &["kind", "param_slots", "constants"], path)?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::config(format!("{path}.kind"), "missing or not a string"))?;
    let empty = Map::new();
    let section = |name: &str| -> Result<&Map<String, Value>> {
        match obj.get(name) {
            None => Ok(&empty),
            Some(Value::Object(m)) => Ok(m),
            Some(_) => Err(Error::config(format!("{path}.{name}"), "expected an object")),
        }
    };
    let slots = section("param_slots")?;
    let consts = section("constants")?;
    let (roles, has_freq): (&[&str], bool) = match kind {
        "constant" => (&["value"], false),
        "linear" => (&["intercept", "slope"], false),
        "sine" => (&["amplitude", "phase"], true),
        "exp_sine" => (&["rate"], true),
        other => {
            return Err(Error::config(
                format!("{path}.kind"),
                format!("unknown kind `{other}`; expected constant, linear, sine, exp_sine, sum or product"),
            ))
        }
    };
    check_keys(slots, roles, &format!("{path}.param_slots"))?;
    let mut const_roles: Vec<&str> = roles.to_vec();
    if has_freq {
        const_roles.push("frequency");
    }
    check_keys(consts, &const_roles, &format!("{path}.constants"))?;
    let coef = |role: &str| -> Result<Coef> {
        match (slots.get(role), consts.get(role)) {
            (Some(_), Some(_)) => Err(Error::config(
                format!("{path}.{role}"),
                "given both as a parameter slot and as a constant",
            )),
            (Some(s), None) => s
                .as_u64()
                .map(|i| Coef::Param(i as usize))
                .ok_or_else(|| Error::config(format!("{path}.param_slots.{role}"), "expected a parameter index")),
            (None, Some(c)) => Ok(Coef::Fixed(number(c, &format!("{path}.constants.{role}"))?)),
            (None, None) if role == "phase" => Ok(Coef::Fixed(0.0)),
            (None, None) => Err(Error::config(format!("{path}.{role}"), "missing")),
        }
    };
    let frequency = || -> Result<f64> {
        let v = consts
            .get("frequency")
            .ok_or_else(|| Error::config(format!("{path}.constants.frequency"), "missing"))?;
        parse_frequency(v, &format!("{path}.constants.frequency"))
    };
    Ok(match kind {
        "constant" => Primitive::Constant { value: coef("value")? },
        "linear" => Primitive::Linear { intercept: coef("intercept")?, slope: coef("slope")? },
        "sine" => Primitive::Sine { amplitude: coef("amplitude")?, frequency: frequency()?, phase: coef("phase")? },
        _ => Primitive::ExpSine { rate: coef("rate")?, frequency: frequency()? },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {
            "r": 1, "p": 1, "q": 0,
            "ar": [[[{"kind": "sine", "param_slots": {"amplitude": 0}, "constants": {"frequency": {"two_pi_over": 25}}}]]],
            "ma": [],
            "sigma": [[1]],
            "params": [{"name": "a", "block": "ar", "true_value": 0.5, "bounds": [-1, null]}]
        }
    }"#;

    #[test]
    fn parses_minimal() {
        let cfg = ConfigFile::from_json(MINIMAL).unwrap();
        let m = cfg.build_model().unwrap();
        assert_eq!(m.m(), 1);
        assert_eq!(m.layout().bounds[0], (-1.0, f64::INFINITY));
        let want = 0.5 * (2.0 * PI / 25.0 * 3.0).sin();
        assert!((m.ar_at(3, 1, &[0.5])[(0, 0)] - want).abs() < 1e-15);
    }

    #[test]
    fn unknown_top_level_key_reports_line() {
        let text = MINIMAL.replacen("\"model\"", "\"extra\": 1,\n\"model\"", 1);
        match ConfigFile::from_json(&text) {
            Err(Error::Config { key, msg }) => {
                assert!(key.starts_with("line 2"), "{key}");
                assert!(msg.contains("extra"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_entry_key_names_path() {
        let text = MINIMAL.replace("\"kind\": \"sine\",", "\"kind\": \"sine\", \"bogus\": 2,");
        let cfg = ConfigFile::from_json(&text).unwrap();
        match cfg.build_model() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.ar[0][0][0].bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let text = MINIMAL.replace("\"kind\": \"sine\"", "\"kind\": \"step\"");
        let cfg = ConfigFile::from_json(&text).unwrap();
        assert!(matches!(cfg.build_model(), Err(Error::Config { .. })));
    }

    #[test]
    fn dimension_limits() {
        let text = MINIMAL.replace("\"p\": 1", "\"p\": 5");
        let cfg = ConfigFile::from_json(&text).unwrap();
        assert!(matches!(cfg.build_model(), Err(Error::Config { .. })));
    }

    #[test]
    fn composite_entry() {
        let v: Value = serde_json::from_str(
            r#"{"kind": "product", "terms": [
                {"kind": "constant", "param_slots": {"value": 0}},
                {"kind": "linear", "constants": {"intercept": 1, "slope": 2}}]}"#,
        )
        .unwrap();
        let f = parse_entry(&v, "x").unwrap();
        assert_eq!(f.eval(3, &[2.0]), 14.0);
    }
}
