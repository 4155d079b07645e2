//! The closed set of layer effects and their parameter tables.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Effect {
    Contrast,
    Pixelation,
    Vignette,
    ChromaticAberration,
    ChromaZoom,
}

/// Declared range, default and identity value of one effect parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    pub default: f64,
    /// Value at which the effect leaves every pixel untouched.
    pub identity: f64,
    pub integer: bool,
}

impl ParamSpec {
    const fn real(name: &'static str, min: f64, max: f64, default: f64, identity: f64) -> Self {
        Self { name, min, max, default, identity, integer: false }
    }

    pub fn accepts(&self, value: f64) -> bool {
        value.is_finite()
            && value >= self.min
            && value <= self.max
            && (!self.integer || value.fract() == 0.0)
    }
}

const CONTRAST: [ParamSpec; 1] = [ParamSpec::real("factor", 0.0, 4.0, 1.0, 1.0)];
const PIXELATION: [ParamSpec; 1] = [ParamSpec {
    name: "blockSize",
    min: 1.0,
    max: 64.0,
    default: 8.0,
    identity: 1.0,
    integer: true,
}];
const VIGNETTE: [ParamSpec; 1] = [ParamSpec::real("strength", 0.0, 1.0, 0.5, 0.0)];
const CHROMATIC_ABERRATION: [ParamSpec; 1] = [ParamSpec::real("offset", 0.0, 0.02, 0.005, 0.0)];
const CHROMA_ZOOM: [ParamSpec; 1] = [ParamSpec::real("zoom", 0.0, 0.1, 0.02, 0.0)];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{0}` out of range")]
    OutOfRange(String),
}

impl ParamError {
    pub fn param(&self) -> &str {
        match self {
            ParamError::Unknown(p) | ParamError::OutOfRange(p) => p,
        }
    }
}

impl Effect {
    pub const ALL: [Effect; 5] = [
        Effect::Contrast,
        Effect::Pixelation,
        Effect::Vignette,
        Effect::ChromaticAberration,
        Effect::ChromaZoom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Effect::Contrast => "contrast",
            Effect::Pixelation => "pixelation",
            Effect::Vignette => "vignette",
            Effect::ChromaticAberration => "chromaticAberration",
            Effect::ChromaZoom => "chromaZoom",
        }
    }

    pub fn from_name(name: &str) -> Option<Effect> {
        Effect::ALL.into_iter().find(|e| e.name() == name)
    }

    pub fn params(self) -> &'static [ParamSpec] {
        match self {
            Effect::Contrast => &CONTRAST,
            Effect::Pixelation => &PIXELATION,
            Effect::Vignette => &VIGNETTE,
            Effect::ChromaticAberration => &CHROMATIC_ABERRATION,
            Effect::ChromaZoom => &CHROMA_ZOOM,
        }
    }

    pub fn param(self, name: &str) -> Option<&'static ParamSpec> {
        self.params().iter().find(|p| p.name == name)
    }

    pub fn default_params(self) -> BTreeMap<String, f64> {
        self.params().iter().map(|p| (p.name.to_owned(), p.default)).collect()
    }

    pub fn identity_params(self) -> BTreeMap<String, f64> {
        self.params().iter().map(|p| (p.name.to_owned(), p.identity)).collect()
    }

    pub fn check(self, name: &str, value: f64) -> Result<(), ParamError> {
        let spec = self.param(name).ok_or_else(|| ParamError::Unknown(name.to_owned()))?;
        if spec.accepts(value) {
            Ok(())
        } else {
            Err(ParamError::OutOfRange(name.to_owned()))
        }
    }

    /// Fills in defaults for absent parameters after checking the given ones.
    pub fn complete_params(
        self,
        given: &BTreeMap<String, f64>,
    ) -> Result<BTreeMap<String, f64>, ParamError> {
        for (name, value) in given {
            self.check(name, *value)?;
        }
        let mut params = self.default_params();
        params.extend(given.iter().map(|(k, v)| (k.clone(), *v)));
        Ok(params)
    }
}

/// Looks a parameter up across all effects; names are unique over the set.
pub fn find_param(name: &str) -> Option<(Effect, &'static ParamSpec)> {
    Effect::ALL.into_iter().find_map(|e| e.param(name).map(|p| (e, p)))
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
