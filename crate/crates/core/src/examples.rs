//! Built-in example models. Each is defined by a shipped JSON config, which
//! is what the CLI materializes and what the builders parse.

use std::str::FromStr;

use serde_json::json;

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::model::TdVarmaModel;

const EXAMPLE1_SIM: &str = include_str!("../configs/example1_sim.json");
const EXAMPLE1_THEORY: &str = include_str!("../configs/example1_theory.json");
const EXAMPLE2: &str = include_str!("../configs/example2.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExampleId {
    /// Bivariate tdVAR(1), `θ = (A'₁₁, A'₁₂, A'₂₂)`, `Σ = I₂`.
    Example1Sim,
    /// As above with the (1,2) entry fixed at ½, `θ = (A'₁₁, A'₂₂)`.
    Example1Theory,
    /// The two-parameter tdVAR(1) with scale
    /// `g_t = [[e^{−η₁₁ sin ct}, 1], [−1, e^{−η₂₂ sin ct}]]`, `θ = (A'₁₁, A'₂₂, η₁₁, η₂₂)`.
    Example2,
}

impl ExampleId {
    pub const ALL: [ExampleId; 3] = [ExampleId::Example1Sim, ExampleId::Example1Theory, ExampleId::Example2];

    pub fn name(self) -> &'static str {
        match self {
            ExampleId::Example1Sim => "1",
            ExampleId::Example1Theory => "1-theory",
            ExampleId::Example2 => "2",
        }
    }

    pub fn config_json(self) -> &'static str {
        match self {
            ExampleId::Example1Sim => EXAMPLE1_SIM,
            ExampleId::Example1Theory => EXAMPLE1_THEORY,
            ExampleId::Example2 => EXAMPLE2,
        }
    }

    pub fn config(self) -> ConfigFile {
        ConfigFile::from_json(self.config_json()).expect("shipped config parses")
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "1-sim" | "example1" | "example1_sim" => Ok(ExampleId::Example1Sim),
            "1-theory" | "example1_theory" => Ok(ExampleId::Example1Theory),
            "2" | "example2" => Ok(ExampleId::Example2),
            other => Err(Error::config("which", format!("unknown example `{other}`; expected 1, 1-theory or 2"))),
        }
    }
}

pub fn build(which: ExampleId) -> TdVarmaModel {
    which.config().build_model().expect("shipped config builds")
}

/// The two-parameter Example 1 model with the angular frequencies of the
/// diagonal entries replaced by `a` and `b`.
pub fn example1_theory_with_frequencies(a: f64, b: f64) -> Result<TdVarmaModel> {
    let mut cfg = ExampleId::Example1Theory.config();
    cfg.model.ar[0][0][0]["constants"]["frequency"] = json!(a);
    cfg.model.ar[0][1][1]["constants"]["frequency"] = json!(b);
    cfg.build_model()
}
