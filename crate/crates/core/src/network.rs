//! Reaction networks with mass-action kinetics and hard state constraints.
//!
//! Rate laws are stored as descriptors rather than closures so that a network
//! can be written to and read back from a JSON config file. A rate law is
//!
//! ```text
//! theta_j * prod_s C(x_s, k_s) * prod_c C(K_c - x_{s_c}, o_c)
//! ```
//!
//! where `C` is the binomial coefficient (zero for a negative or too-small
//! argument), `k` are the reactant orders and the optional complement factors
//! count free copies of a conserved quantity (e.g. unbound DNA, `G - X_4`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the lattice statespace: one count per species.
pub type State = Vec<i64>;

/// Log-rate parameters, `psi = log(theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    psi: Vec<f64>,
}

impl ParamVector {
    pub fn from_psi(psi: Vec<f64>) -> Self {
        Self { psi }
    }

    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        if let Some(bad) = theta.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "rate {bad} is not strictly positive"
            )));
        }
        Ok(Self {
            psi: theta.iter().map(|t| t.ln()).collect(),
        })
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn theta(&self) -> Vec<f64> {
        self.psi.iter().map(|p| p.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.psi.iter().all(|p| p.is_finite())
    }
}

/// Free-copy factor `C(K - x_s, order)` where `K` is a named network constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Complement {
    pub constant: String,
    pub species: usize,
    #[serde(default = "one")]
    pub order: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLaw {
    /// Reactant order per species.
    pub reactants: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub complements: Vec<Complement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub name: String,
    /// State change per firing.
    pub delta: Vec<i64>,
    pub rate: RateLaw,
}

impl Reaction {
    fn mass_action(name: &str, delta: Vec<i64>, reactants: Vec<u32>) -> Self {
        Self {
            name: name.to_owned(),
            delta,
            rate: RateLaw {
                reactants,
                complements: Vec::new(),
            },
        }
    }

    fn with_complement(mut self, constant: &str, species: usize) -> Self {
        self.rate.complements.push(Complement {
            constant: constant.to_owned(),
            species,
            order: 1,
        });
        self
    }
}

/// `C(n, k)` as a real number, zero when `n < k`.
fn binomial(n: i64, k: u32) -> f64 {
    if n < k as i64 {
        return 0.0;
    }
    let mut acc = 1.0;
    for i in 0..k as i64 {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionNetwork {
    pub name: String,
    pub species: Vec<String>,
    pub reactions: Vec<Reaction>,
    pub hard_lower: Vec<i64>,
    /// `None` means unbounded above.
    pub hard_upper: Vec<Option<i64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<String, i64>,
}

impl ReactionNetwork {
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.n_species();
        let bad = |msg: String| Err(Error::InvalidNetwork(msg));
        if ns == 0 {
            return bad("network has no species".into());
        }
        if self.hard_lower.len() != ns || self.hard_upper.len() != ns {
            return bad("hard bounds must have one entry per species".into());
        }
        for (s, (lo, hi)) in self.hard_lower.iter().zip(&self.hard_upper).enumerate() {
            if let Some(hi) = hi {
                if lo > hi {
                    return bad(format!("species {s}: lower bound {lo} exceeds upper {hi}"));
                }
            }
        }
        for rx in &self.reactions {
            if rx.delta.len() != ns || rx.rate.reactants.len() != ns {
                return bad(format!(
                    "reaction `{}` must have {ns} delta and reactant entries",
                    rx.name
                ));
            }
            for c in &rx.rate.complements {
                if c.species >= ns {
                    return bad(format!("reaction `{}`: complement species out of range", rx.name));
                }
                if !self.aux.contains_key(&c.constant) {
                    return bad(format!(
                        "reaction `{}` references unknown constant `{}`",
                        rx.name, c.constant
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn in_bounds(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(&self.hard_lower)
            .zip(&self.hard_upper)
            .all(|((&v, &lo), hi)| v >= lo && hi.is_none_or(|hi| v <= hi))
    }

    /// Whether all species have finite upper bounds.
    pub fn is_bounded(&self) -> bool {
        self.hard_upper.iter().all(Option::is_some)
    }

    fn check_dims(&self, x: &[i64], theta: &[f64]) -> Result<()> {
        if x.len() != self.n_species() {
            return Err(Error::Dimension {
                what: "state",
                got: x.len(),
                expected: self.n_species(),
            });
        }
        if theta.len() != self.n_reactions() {
            return Err(Error::Dimension {
                what: "theta",
                got: theta.len(),
                expected: self.n_reactions(),
            });
        }
        Ok(())
    }

    /// Rate of reaction `j` at `x`, without dimension checks.
    ///
    /// Returns zero whenever firing would leave the hard bounds.
    #[inline]
    pub fn rate(&self, j: usize, x: &[i64], theta_j: f64) -> f64 {
        let rx = &self.reactions[j];
        for (s, (&v, &d)) in x.iter().zip(&rx.delta).enumerate() {
            let next = v + d;
            if next < self.hard_lower[s] || self.hard_upper[s].is_some_and(|hi| next > hi) {
                return 0.0;
            }
        }
        let mut h = theta_j;
        for (&v, &k) in x.iter().zip(&rx.rate.reactants) {
            if k > 0 {
                h *= binomial(v, k);
            }
        }
        for c in &rx.rate.complements {
            h *= binomial(self.aux[&c.constant] - x[c.species], c.order);
        }
        h
    }

    pub fn propensities(&self, x: &[i64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, theta)?;
        Ok((0..self.n_reactions())
            .map(|j| self.rate(j, x, theta[j]))
            .collect())
    }

    pub fn apply_reaction(&self, x: &[i64], j: usize) -> Result<State> {
        let rx = self.reactions.get(j).ok_or_else(|| {
            Error::InvalidNetwork(format!("reaction index {j} out of range"))
        })?;
        if x.len() != self.n_species() {
            return Err(Error::Dimension {
                what: "state",
                got: x.len(),
                expected: self.n_species(),
            });
        }
        let next: State = x.iter().zip(&rx.delta).map(|(v, d)| v + d).collect();
        if !self.in_bounds(&next) {
            return Err(Error::OutOfBounds { state: next });
        }
        Ok(next)
    }

    /// Lotka-Volterra predator-prey: predator death, prey birth, predation.
    pub fn lotka_volterra() -> Self {
        Self {
            name: "lotka_volterra".into(),
            species: vec!["pred".into(), "prey".into()],
            reactions: vec![
                Reaction::mass_action("pred_death", vec![-1, 0], vec![1, 0]),
                Reaction::mass_action("prey_birth", vec![0, 1], vec![0, 1]),
                Reaction::mass_action("predation", vec![1, -1], vec![1, 1]),
            ],
            hard_lower: vec![0, 0],
            hard_upper: vec![None, None],
            aux: BTreeMap::new(),
        }
    }

    /// Schlögel bistable network on a single species.
    pub fn schlogel() -> Self {
        Self {
            name: "schlogel".into(),
            species: vec!["X".into()],
            reactions: vec![
                Reaction::mass_action("autocatalysis", vec![1], vec![2]),
                Reaction::mass_action("reverse_autocatalysis", vec![-1], vec![3]),
                Reaction::mass_action("inflow", vec![1], vec![0]),
                Reaction::mass_action("outflow", vec![-1], vec![1]),
            ],
            hard_lower: vec![0],
            hard_upper: vec![None],
            aux: BTreeMap::new(),
        }
    }

    /// Autoregulatory gene network with `g` total DNA copies.
    ///
    /// Species are RNA, P, P2 and DNA.P2; free DNA is `g - X_4`.
    pub fn autoregulatory(g: i64, transcription: TranscriptionRate) -> Self {
        let transcription_species = match transcription {
            TranscriptionRate::FreeDna => 3,
            TranscriptionRate::AsPrinted => 2,
        };
        let mut aux = BTreeMap::new();
        aux.insert("G".to_owned(), g);
        Self {
            name: "autoregulatory".into(),
            species: vec!["RNA".into(), "P".into(), "P2".into(), "DNA.P2".into()],
            reactions: vec![
                Reaction::mass_action("binding", vec![0, 0, -1, 1], vec![0, 0, 1, 0])
                    .with_complement("G", 3),
                Reaction::mass_action("unbinding", vec![0, 0, 1, -1], vec![0, 0, 0, 1]),
                Reaction::mass_action("transcription", vec![1, 0, 0, 0], vec![0, 0, 0, 0])
                    .with_complement("G", transcription_species),
                Reaction::mass_action("translation", vec![0, 1, 0, 0], vec![1, 0, 0, 0]),
                Reaction::mass_action("dimerisation", vec![0, -2, 1, 0], vec![0, 2, 0, 0]),
                Reaction::mass_action("dissociation", vec![0, 2, -1, 0], vec![0, 0, 1, 0]),
                Reaction::mass_action("rna_decay", vec![-1, 0, 0, 0], vec![1, 0, 0, 0]),
                Reaction::mass_action("protein_decay", vec![0, -1, 0, 0], vec![0, 1, 0, 0]),
            ],
            hard_lower: vec![0, 0, 0, 0],
            hard_upper: vec![None, None, None, Some(g)],
            aux,
        }
    }

    pub fn builtin(name: BuiltinNetwork) -> Self {
        match name {
            BuiltinNetwork::LotkaVolterra => Self::lotka_volterra(),
            BuiltinNetwork::Schlogel => Self::schlogel(),
            BuiltinNetwork::Autoregulatory => {
                Self::autoregulatory(DEFAULT_DNA_COPIES, TranscriptionRate::FreeDna)
            }
        }
    }
}

/// Default total DNA copy number for the autoregulatory network.
pub const DEFAULT_DNA_COPIES: i64 = 2;

/// Which species count drives DNA transcription in the autoregulatory network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptionRate {
    /// `theta_3 (G - X_4)`: proportional to free DNA copies.
    #[default]
    FreeDna,
    /// `theta_3 (G - X_3)`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinNetwork {
    LotkaVolterra,
    Schlogel,
    Autoregulatory,
}

impl FromStr for BuiltinNetwork {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lotka_volterra" | "lv" => Ok(Self::LotkaVolterra),
            "schlogel" | "sch" => Ok(Self::Schlogel),
            "autoregulatory" | "ar" => Ok(Self::Autoregulatory),
            other => Err(Error::UnknownNetwork(other.to_owned())),
        }
    }
}

impl fmt::Display for BuiltinNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LotkaVolterra => "lotka_volterra",
            Self::Schlogel => "schlogel",
            Self::Autoregulatory => "autoregulatory",
        })
    }
}
