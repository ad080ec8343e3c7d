//! Architecture identifiers for reward-map modules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Activation;
use crate::env::Paradigm;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bottleneck {
    Early,
    Late,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Degree {
    Full,
    Partial,
    None,
}

/// Nonlinearity family named by an architecture. `ReluPlusSquare` covers the
/// symmetry ablations; with partial multiplication its ReLU half is dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchActivation {
    Cres,
    Crelu,
    Relu,
    Tanh,
    Sigmoid,
    Elu,
    ReluPlusSquare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SizeClass {
    Ems,
    Small,
    Medium,
    Large,
}

/// One of the 24 module architectures: EMS and its ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchitectureId {
    bottleneck: Bottleneck,
    symmetry: Degree,
    multiplicative: Degree,
    activation: ArchActivation,
    size: SizeClass,
}

const PLAIN: [(ArchActivation, &str); 5] = [
    (ArchActivation::Relu, "relu"),
    (ArchActivation::Tanh, "tanh"),
    (ArchActivation::Sigmoid, "sigmoid"),
    (ArchActivation::Elu, "elu"),
    (ArchActivation::Crelu, "crelu"),
];

const SIZES: [(SizeClass, &str); 3] = [
    (SizeClass::Small, "small"),
    (SizeClass::Medium, "medium"),
    (SizeClass::Large, "large"),
];

impl ArchitectureId {
    pub const EMS: ArchitectureId = ArchitectureId {
        bottleneck: Bottleneck::Early,
        symmetry: Degree::Full,
        multiplicative: Degree::Full,
        activation: ArchActivation::Cres,
        size: SizeClass::Ems,
    };

    /// Validates a combination of features.
    pub fn new(
        bottleneck: Bottleneck,
        symmetry: Degree,
        multiplicative: Degree,
        activation: ArchActivation,
        size: SizeClass,
    ) -> Result<Self> {
        let id = Self {
            bottleneck,
            symmetry,
            multiplicative,
            activation,
            size,
        };
        if Self::all().contains(&id) {
            Ok(id)
        } else {
            Err(Error::Config(format!("{id:?} is not a known architecture")))
        }
    }

    /// Every valid architecture, EMS first.
    pub fn all() -> Vec<ArchitectureId> {
        let early = |symmetry, multiplicative, activation| ArchitectureId {
            bottleneck: Bottleneck::Early,
            symmetry,
            multiplicative,
            activation,
            size: SizeClass::Ems,
        };
        let mut out = vec![
            Self::EMS,
            early(Degree::Partial, Degree::Full, ArchActivation::ReluPlusSquare),
            early(Degree::None, Degree::Full, ArchActivation::ReluPlusSquare),
            early(Degree::None, Degree::Partial, ArchActivation::ReluPlusSquare),
        ];
        for (act, _) in PLAIN {
            out.push(early(Degree::None, Degree::None, act));
        }
        for (act, _) in PLAIN {
            for (size, _) in SIZES {
                out.push(ArchitectureId {
                    bottleneck: Bottleneck::Late,
                    symmetry: Degree::None,
                    multiplicative: Degree::None,
                    activation: act,
                    size,
                });
            }
        }
        out
    }

    pub fn late(activation: ArchActivation, size: SizeClass) -> Result<Self> {
        Self::new(Bottleneck::Late, Degree::None, Degree::None, activation, size)
    }

    pub fn bottleneck(&self) -> Bottleneck {
        self.bottleneck
    }

    pub fn symmetry(&self) -> Degree {
        self.symmetry
    }

    pub fn multiplicative(&self) -> Degree {
        self.multiplicative
    }

    pub fn activation(&self) -> ArchActivation {
        self.activation
    }

    pub fn size(&self) -> SizeClass {
        self.size
    }

    pub fn is_ems(&self) -> bool {
        *self == Self::EMS
    }

    /// Nonlinearity applied after the scene bottleneck (early variants only).
    pub fn bottleneck_activation(&self) -> Activation {
        match (self.symmetry, self.activation) {
            (Degree::Full | Degree::Partial, _) => Activation::Crelu,
            (Degree::None, ArchActivation::ReluPlusSquare) => Activation::Relu,
            (Degree::None, a) => plain(a),
        }
    }

    /// Nonlinearity of every layer after the bottleneck.
    pub fn layer_activation(&self) -> Activation {
        match (self.activation, self.multiplicative) {
            (ArchActivation::Cres, _) => Activation::Cres,
            (ArchActivation::ReluPlusSquare, Degree::Partial) => Activation::Sq,
            (ArchActivation::ReluPlusSquare, _) => Activation::ReluSq,
            (a, _) => plain(a),
        }
    }

    /// Units per layer before activation, for the given paradigm.
    pub fn default_width(&self, paradigm: Paradigm) -> usize {
        let row = match paradigm {
            Paradigm::Sr => [8, 128, 512],
            Paradigm::Mts | Paradigm::SceneMts => [32, 128, 512],
            Paradigm::Loc => [128, 512, 1024],
        };
        match self.size {
            SizeClass::Ems | SizeClass::Small => row[0],
            SizeClass::Medium => row[1],
            SizeClass::Large => row[2],
        }
    }
}

fn plain(a: ArchActivation) -> Activation {
    match a {
        ArchActivation::Relu => Activation::Relu,
        ArchActivation::Tanh => Activation::Tanh,
        ArchActivation::Sigmoid => Activation::Sigmoid,
        ArchActivation::Elu => Activation::Elu,
        ArchActivation::Crelu => Activation::Crelu,
        ArchActivation::Cres => Activation::Cres,
        ArchActivation::ReluPlusSquare => Activation::ReluSq,
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |a: ArchActivation| PLAIN.iter().find(|p| p.0 == a).map(|p| p.1).unwrap_or("?");
        match (self.bottleneck, self.symmetry, self.multiplicative) {
            (Bottleneck::Early, Degree::Full, _) => write!(f, "ems"),
            (Bottleneck::Early, Degree::Partial, _) => write!(f, "partial-symm"),
            (Bottleneck::Early, Degree::None, Degree::Full) => write!(f, "no-symm"),
            (Bottleneck::Early, Degree::None, Degree::Partial) => write!(f, "no-symm-partial-mult"),
            (Bottleneck::Early, Degree::None, Degree::None) => write!(f, "no-mult-{}", name(self.activation)),
            (Bottleneck::Late, _, _) => {
                let size = SIZES.iter().find(|s| s.0 == self.size).map(|s| s.1).unwrap_or("?");
                write!(f, "late-{}-{size}", name(self.activation))
            }
        }
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

impl Serialize for ArchitectureId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ArchitectureId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn twenty_four_distinct_architectures() {
        let all = ArchitectureId::all();
        assert_eq!(all.len(), 24);
        let names: HashSet<String> = all.iter().map(|a| a.to_string()).collect();
        assert_eq!(names.len(), 24);
        for a in &all {
            assert_eq!(a.to_string().parse::<ArchitectureId>().unwrap(), *a);
        }
    }

    #[test]
    fn canonical_names() {
        assert_eq!(ArchitectureId::EMS.to_string(), "ems");
        let late = ArchitectureId::late(ArchActivation::Relu, SizeClass::Large).unwrap();
        assert_eq!(late.to_string(), "late-relu-large");
        assert!("no-symm".parse::<ArchitectureId>().is_ok());
        assert!("no-mult-tanh".parse::<ArchitectureId>().is_ok());
        assert!("late-cres-small".parse::<ArchitectureId>().is_err());
        let json = serde_json::to_string(&late).unwrap();
        assert_eq!(json, "\"late-relu-large\"");
        assert_eq!(serde_json::from_str::<ArchitectureId>(&json).unwrap(), late);
    }

    #[test]
    fn invalid_combinations_rejected() {
        assert!(ArchitectureId::new(
            Bottleneck::Late,
            Degree::Full,
            Degree::Full,
            ArchActivation::Cres,
            SizeClass::Small
        )
        .is_err());
        assert!(ArchitectureId::late(ArchActivation::Cres, SizeClass::Small).is_err());
        assert!(ArchitectureId::new(
            Bottleneck::Early,
            Degree::None,
            Degree::None,
            ArchActivation::Relu,
            SizeClass::Large
        )
        .is_err());
    }

    #[test]
    fn ablation_activations() {
        let get = |s: &str| s.parse::<ArchitectureId>().unwrap();
        assert_eq!(get("ems").layer_activation(), Activation::Cres);
        assert_eq!(get("ems").bottleneck_activation(), Activation::Crelu);
        assert_eq!(get("partial-symm").bottleneck_activation(), Activation::Crelu);
        assert_eq!(get("partial-symm").layer_activation(), Activation::ReluSq);
        assert_eq!(get("no-symm").bottleneck_activation(), Activation::Relu);
        assert_eq!(get("no-symm").layer_activation(), Activation::ReluSq);
        assert_eq!(get("no-symm-partial-mult").layer_activation(), Activation::Sq);
        assert_eq!(get("no-mult-elu").layer_activation(), Activation::Elu);
        assert_eq!(get("late-sigmoid-medium").layer_activation(), Activation::Sigmoid);
    }

    #[test]
    fn table_widths() {
        let ems = ArchitectureId::EMS;
        assert_eq!(ems.default_width(Paradigm::Sr), 8);
        assert_eq!(ems.default_width(Paradigm::Mts), 32);
        assert_eq!(ems.default_width(Paradigm::Loc), 128);
        let medium = ArchitectureId::late(ArchActivation::Relu, SizeClass::Medium).unwrap();
        assert_eq!(medium.default_width(Paradigm::Sr), 128);
        let large = ArchitectureId::late(ArchActivation::Relu, SizeClass::Large).unwrap();
        assert_eq!(large.default_width(Paradigm::Sr), 512);
        assert_eq!(large.default_width(Paradigm::Loc), 1024);
    }
}
