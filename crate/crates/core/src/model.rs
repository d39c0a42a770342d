//! Model specifications for the three joint models.
//!
//! All three share the Poisson likelihood with common expected counts and a
//! fixed unit loading on the shared field. They differ in the latent
//! decomposition:
//!
//! * REM — database 1: alpha1 + s; database 2: alpha2 + s + e, e iid normal.
//! * SEM — as REM but e is itself a BYM2 field.
//! * SCM — database d: alpha_d + h + D_d with h, D1, D2 all BYM2.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::priors::{LogGammaPrior, MixingPrior, PcPrecisionPrior, PrecisionPrior};

/// Which joint model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Rem,
    Sem,
    Scm,
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Rem => "rem",
            ModelFamily::Sem => "sem",
            ModelFamily::Scm => "scm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rem" => Ok(ModelFamily::Rem),
            "sem" => Ok(ModelFamily::Sem),
            "scm" => Ok(ModelFamily::Scm),
            other => Err(CoreError::InvalidParameter(format!(
                "unknown model '{other}' (expected rem, sem or scm)"
            ))),
        }
    }

    /// Latent field names of the family, in update order.
    pub fn field_names(&self) -> &'static [&'static str] {
        match self {
            ModelFamily::Rem | ModelFamily::Sem => &["s", "e"],
            ModelFamily::Scm => &["h", "d1", "d2"],
        }
    }

    /// The field whose draws feed the local decision rules.
    pub fn psi_field(&self) -> &'static str {
        match self {
            ModelFamily::Rem | ModelFamily::Sem => "e",
            ModelFamily::Scm => "d2",
        }
    }
}

/// Structural role of one latent field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDef {
    pub name: String,
    /// BYM2 (structured + unstructured mix) or a pure iid normal field.
    pub structured: bool,
    pub in_db1: bool,
    pub in_db2: bool,
    pub precision_prior: PrecisionPrior,
    pub mixing_prior: Option<MixingPrior>,
}

/// Full model specification: family, hyperpriors per field, intercept prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub precision_priors: BTreeMap<String, PrecisionPrior>,
    pub mixing_priors: BTreeMap<String, MixingPrior>,
    /// Standard deviation of the zero-mean Gaussian prior on each intercept
    /// (log scale).
    pub intercept_prior_sd: f64,
    /// Loadings on the shared field are fixed at one in every family.
    pub delta_fixed: bool,
}

impl ModelSpec {
    /// Defaults: PC precision priors with Pr(tau^{-1/2} > 1) = 0.01 on every
    /// BYM2 field, PC mixing priors with median 0.5, and the log-Gamma
    /// (1, 0.00005) prior on the iid error precision of the REM.
    pub fn new(family: ModelFamily) -> Self {
        let pc = PrecisionPrior::Pc(PcPrecisionPrior::default());
        let mix = MixingPrior::default();
        let mut precision_priors = BTreeMap::new();
        let mut mixing_priors = BTreeMap::new();
        match family {
            ModelFamily::Rem => {
                precision_priors.insert("s".into(), pc);
                precision_priors.insert("e".into(), PrecisionPrior::LogGamma(LogGammaPrior::default()));
                mixing_priors.insert("s".into(), mix);
            }
            ModelFamily::Sem => {
                for f in ["s", "e"] {
                    precision_priors.insert(f.into(), pc);
                    mixing_priors.insert(f.into(), mix);
                }
            }
            ModelFamily::Scm => {
                for f in ["h", "d1", "d2"] {
                    precision_priors.insert(f.into(), pc);
                    mixing_priors.insert(f.into(), mix);
                }
            }
        }
        ModelSpec {
            family,
            precision_priors,
            mixing_priors,
            intercept_prior_sd: 10.0,
            delta_fixed: true,
        }
    }

    pub fn rem() -> Self {
        Self::new(ModelFamily::Rem)
    }

    pub fn sem() -> Self {
        Self::new(ModelFamily::Sem)
    }

    pub fn scm() -> Self {
        Self::new(ModelFamily::Scm)
    }

    /// Resolve the per-field definitions, checking the family structure.
    pub fn field_defs(&self) -> Result<Vec<FieldDef>> {
        if !self.delta_fixed {
            return Err(CoreError::InvalidParameter(
                "delta_fixed must be true: shared-field loadings are fixed at one".into(),
            ));
        }
        if !(self.intercept_prior_sd > 0.0) {
            return Err(CoreError::InvalidParameter(
                "intercept_prior_sd must be positive".into(),
            ));
        }
        let defs: Vec<(&str, bool, bool, bool)> = match self.family {
            // (name, structured, in_db1, in_db2)
            ModelFamily::Rem => vec![("s", true, true, true), ("e", false, false, true)],
            ModelFamily::Sem => vec![("s", true, true, true), ("e", true, false, true)],
            ModelFamily::Scm => vec![
                ("h", true, true, true),
                ("d1", true, true, false),
                ("d2", true, false, true),
            ],
        };
        let expected: Vec<&str> = defs.iter().map(|d| d.0).collect();
        for key in self.precision_priors.keys() {
            if !expected.contains(&key.as_str()) {
                return Err(CoreError::UnknownParameter(format!(
                    "precision prior for unknown field '{key}'"
                )));
            }
        }
        for key in self.mixing_priors.keys() {
            if !expected.contains(&key.as_str()) {
                return Err(CoreError::UnknownParameter(format!(
                    "mixing prior for unknown field '{key}'"
                )));
            }
        }
        defs.into_iter()
            .map(|(name, structured, in_db1, in_db2)| {
                let precision_prior = self.precision_priors.get(name).copied().ok_or_else(|| {
                    CoreError::InvalidParameter(format!("missing precision prior for field '{name}'"))
                })?;
                let mixing_prior = if structured {
                    Some(self.mixing_priors.get(name).copied().ok_or_else(|| {
                        CoreError::InvalidParameter(format!("missing mixing prior for field '{name}'"))
                    })?)
                } else {
                    if self.mixing_priors.contains_key(name) {
                        return Err(CoreError::InvalidParameter(format!(
                            "field '{name}' is unstructured and takes no mixing prior"
                        )));
                    }
                    None
                };
                Ok(FieldDef {
                    name: name.to_string(),
                    structured,
                    in_db1,
                    in_db2,
                    precision_prior,
                    mixing_prior,
                })
            })
            .collect()
    }
}
