use serde::{Deserialize, Serialize};

use crate::grid::Hypercube;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Convex piecewise-linear KAN.
    P1,
    /// Convex cubic-Hermite KAN.
    Cubic,
    /// Convex in the trailing `ny` inputs, unconstrained in the leading `nx`.
    Pickan,
    /// Input-convex feedforward network.
    Icnn,
    /// Unconstrained piecewise-linear KAN.
    Kan,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" | "p1-ickan" => Ok(Family::P1),
            "cubic" | "cubic-ickan" => Ok(Family::Cubic),
            "pickan" => Ok(Family::Pickan),
            "icnn" => Ok(Family::Icnn),
            "kan" | "p1-kan" => Ok(Family::Kan),
            other => Err(Error::InvalidSpec(format!("unknown family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::P1 => "p1",
            Family::Cubic => "cubic",
            Family::Pickan => "pickan",
            Family::Icnn => "icnn",
            Family::Kan => "kan",
        })
    }
}

/// Hidden nonlinearity of the ICNN baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Celu { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: Family,
    /// Hidden widths; the output layer (width 1) comes after them. For
    /// PICKAN every entry is the shared width `M` and the length is the
    /// number of recursion steps.
    pub hidden: Vec<usize>,
    /// Cells per lattice.
    pub p: usize,
    pub adapt: bool,
    #[serde(default)]
    pub random_grid: bool,
    pub domain: Hypercube,
    /// Continue every one-dimensional function linearly outside its lattice
    /// instead of rejecting inputs outside `domain`.
    pub extrapolate: bool,
    pub activation: Activation,
    /// PICKAN input split `(nx, ny)`.
    pub split: Option<(usize, usize)>,
}

impl NetworkSpec {
    pub fn ickan(family: Family, domain: Hypercube, hidden: Vec<usize>, p: usize, adapt: bool) -> Self {
        NetworkSpec {
            family,
            hidden,
            p,
            adapt,
            random_grid: false,
            domain,
            extrapolate: false,
            activation: Activation::Relu,
            split: None,
        }
    }

    pub fn icnn(domain: Hypercube, hidden: Vec<usize>, activation: Activation) -> Self {
        NetworkSpec {
            family: Family::Icnn,
            hidden,
            p: 1,
            adapt: false,
            random_grid: false,
            domain,
            extrapolate: true,
            activation,
            split: None,
        }
    }

    /// `domain` covers `x` then `y`.
    pub fn pickan(domain: Hypercube, nx: usize, layers: usize, width: usize, p: usize, adapt: bool) -> Self {
        let ny = domain.dim().saturating_sub(nx);
        NetworkSpec {
            family: Family::Pickan,
            hidden: vec![width; layers],
            p,
            adapt,
            random_grid: false,
            domain,
            extrapolate: false,
            activation: Activation::Relu,
            split: Some((nx, ny)),
        }
    }

    pub fn with_extrapolation(mut self, on: bool) -> Self {
        self.extrapolate = on;
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dim() == 0 {
            return bad("input dimension must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        for i in 0..self.dim() {
            if !(self.domain.width(i) > 0.0) || !self.domain.width(i).is_finite() {
                return bad(format!("domain side {i} is degenerate"));
            }
        }
        if self.family != Family::Icnn && self.p == 0 {
            return bad("P must be at least 1".into());
        }
        if let Activation::Celu { alpha } = self.activation {
            if !(alpha > 0.0) {
                return bad("CELU alpha must be positive".into());
            }
        }
        match (self.family, self.split) {
            (Family::Pickan, Some((nx, ny))) => {
                if nx == 0 || ny == 0 || nx + ny != self.dim() {
                    return bad(format!("split ({nx}, {ny}) does not match dimension {}", self.dim()));
                }
                if self.hidden.is_empty() || self.hidden.iter().any(|&w| w != self.hidden[0]) {
                    return bad("PICKAN needs at least one step and a single shared width".into());
                }
            }
            (Family::Pickan, None) => return bad("PICKAN needs an input split".into()),
            (_, Some(_)) => return bad("only PICKAN takes an input split".into()),
            _ => {}
        }
        Ok(())
    }
}
