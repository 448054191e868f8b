//! Principal error categories and their sub-error types.
//!
//! A [`Taxonomy`] is loaded once and shared read-only. Names are matched
//! case-insensitively with punctuation and whitespace ignored, and are always
//! emitted in their canonical spelling.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RELIABILITY: &str = "Reliability";
pub const BIAS_TOXICITY: &str = "BiasToxicity";
pub const BASIC: &str = "Basic";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy config does not parse: {0}")]
    Syntax(String),
    #[error("duplicate principal {0:?}")]
    DuplicatePrincipal(String),
    #[error("duplicate sub-error {name:?} under principal {principal:?}")]
    DuplicateSubError { principal: String, name: String },
    #[error("unknown principal {principal:?} referenced by sub-error {name:?}")]
    UnknownPrincipal { principal: String, name: String },
    #[error("empty definition for {0:?}")]
    EmptyDefinition(String),
    #[error("invalid identifier {0:?}: names must be non-empty ASCII")]
    InvalidName(String),
    #[error("alias {alias:?} collides with another principal name")]
    AliasCollision { alias: String },
    #[error("no sub-error named {0:?}")]
    NotFound(String),
    #[error("no principal category named {0:?}")]
    PrincipalNotFound(String),
    #[error("sub-error {name:?} is ambiguous; it exists under {principals:?}")]
    Ambiguous { name: String, principals: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrincipalCategory {
    pub name: String,
    pub definition: String,
    /// Alternative spellings accepted on input, e.g. "Bias and Toxicity".
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubErrorType {
    pub principal: String,
    pub name: String,
    pub definition: String,
}

/// Raw on-disk form. Validation turns it into a [`Taxonomy`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaxonomyFile {
    version: String,
    #[serde(default)]
    principals: Vec<PrincipalCategory>,
    #[serde(default)]
    sub_errors: Vec<SubErrorType>,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    version: String,
    principals: Vec<PrincipalCategory>,
    sub_errors: Vec<SubErrorType>,
    principal_index: HashMap<String, usize>,
    sub_index: HashMap<String, Vec<usize>>,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.principals == other.principals
            && self.sub_errors == other.sub_errors
    }
}

impl Eq for Taxonomy {}

/// Lookup key: lowercase ASCII alphanumerics only.
pub fn normalize_key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn check_name(name: &str) -> Result<(), TaxonomyError> {
    let trimmed = name.trim();
    if trimmed.is_empty() || !trimmed.is_ascii() || normalize_key(trimmed).is_empty() {
        return Err(TaxonomyError::InvalidName(name.to_string()));
    }
    Ok(())
}

impl Taxonomy {
    pub fn new(
        version: impl Into<String>,
        principals: Vec<PrincipalCategory>,
        sub_errors: Vec<SubErrorType>,
    ) -> Result<Self, TaxonomyError> {
        let mut principals = principals;
        let mut sub_errors = sub_errors;
        let mut principal_index = HashMap::new();

        for (i, p) in principals.iter_mut().enumerate() {
            check_name(&p.name)?;
            p.name = p.name.trim().to_string();
            if p.definition.trim().is_empty() {
                return Err(TaxonomyError::EmptyDefinition(p.name.clone()));
            }
            if principal_index.insert(normalize_key(&p.name), i).is_some() {
                return Err(TaxonomyError::DuplicatePrincipal(p.name.clone()));
            }
        }
        for (i, p) in principals.iter().enumerate() {
            for alias in &p.aliases {
                check_name(alias)?;
                match principal_index.get(&normalize_key(alias)) {
                    Some(&j) if j != i => {
                        return Err(TaxonomyError::AliasCollision {
                            alias: alias.clone(),
                        })
                    }
                    _ => {}
                }
            }
        }
        for (i, p) in principals.iter().enumerate() {
            for alias in &p.aliases {
                principal_index.insert(normalize_key(alias), i);
            }
        }

        let mut seen = HashSet::new();
        let mut sub_index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, s) in sub_errors.iter_mut().enumerate() {
            check_name(&s.name)?;
            s.name = s.name.trim().to_string();
            let Some(&pi) = principal_index.get(&normalize_key(&s.principal)) else {
                return Err(TaxonomyError::UnknownPrincipal {
                    principal: s.principal.clone(),
                    name: s.name.clone(),
                });
            };
            s.principal = principals[pi].name.clone();
            if s.definition.trim().is_empty() {
                return Err(TaxonomyError::EmptyDefinition(s.name.clone()));
            }
            let key = normalize_key(&s.name);
            if !seen.insert((pi, key.clone())) {
                return Err(TaxonomyError::DuplicateSubError {
                    principal: s.principal.clone(),
                    name: s.name.clone(),
                });
            }
            sub_index.entry(key).or_default().push(i);
        }

        Ok(Self {
            version: version.into(),
            principals,
            sub_errors,
            principal_index,
            sub_index,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn principals(&self) -> &[PrincipalCategory] {
        &self.principals
    }

    pub fn sub_errors(&self) -> &[SubErrorType] {
        &self.sub_errors
    }

    pub fn sub_errors_of<'a>(&'a self, principal: &'a str) -> impl Iterator<Item = &'a SubErrorType> {
        self.sub_errors.iter().filter(move |s| s.principal == principal)
    }

    /// Position of a principal in taxonomy order, used for canonical sorting.
    pub fn principal_rank(&self, name: &str) -> Option<usize> {
        self.principal_index.get(&normalize_key(name)).copied()
    }

    pub fn resolve_principal(&self, name: &str) -> Result<&PrincipalCategory, TaxonomyError> {
        self.principal_index
            .get(&normalize_key(name))
            .map(|&i| &self.principals[i])
            .ok_or_else(|| TaxonomyError::PrincipalNotFound(name.trim().to_string()))
    }

    /// Looks up a sub-error by name alone. Fails when the name is absent or
    /// exists under more than one principal.
    pub fn resolve_sub_error(&self, name: &str) -> Result<&SubErrorType, TaxonomyError> {
        let key = normalize_key(name);
        match self.sub_index.get(&key).map(Vec::as_slice) {
            None | Some([]) => Err(TaxonomyError::NotFound(name.trim().to_string())),
            Some([i]) => Ok(&self.sub_errors[*i]),
            Some(many) => Err(TaxonomyError::Ambiguous {
                name: name.trim().to_string(),
                principals: many
                    .iter()
                    .map(|&i| self.sub_errors[i].principal.clone())
                    .collect(),
            }),
        }
    }

    /// Looks up a sub-error under a known principal.
    pub fn resolve_qualified(
        &self,
        principal: &str,
        name: &str,
    ) -> Result<&SubErrorType, TaxonomyError> {
        let p = self.resolve_principal(principal)?;
        let key = normalize_key(name);
        self.sub_index
            .get(&key)
            .into_iter()
            .flatten()
            .map(|&i| &self.sub_errors[i])
            .find(|s| s.principal == p.name)
            .ok_or_else(|| TaxonomyError::NotFound(format!("{}/{}", p.name, name.trim())))
    }

    /// Serializes into the documented TOML taxonomy format.
    pub fn to_config_text(&self) -> String {
        let file = TaxonomyFile {
            version: self.version.clone(),
            principals: self.principals.clone(),
            sub_errors: self.sub_errors.clone(),
        };
        toml::to_string_pretty(&file).expect("taxonomy always serializes")
    }
}

pub fn load_taxonomy(config_text: &str) -> Result<Taxonomy, TaxonomyError> {
    let file: TaxonomyFile =
        toml::from_str(config_text).map_err(|e| TaxonomyError::Syntax(e.message().to_string()))?;
    Taxonomy::new(file.version, file.principals, file.sub_errors)
}

pub fn default_taxonomy() -> Taxonomy {
    let principal = |name: &str, definition: &str, aliases: &[&str]| PrincipalCategory {
        name: name.into(),
        definition: definition.into(),
        aliases: aliases.iter().map(|a| a.to_string()).collect(),
    };
    let sub = |principal: &str, name: &str, definition: &str| SubErrorType {
        principal: principal.into(),
        name: name.into(),
        definition: definition.into(),
    };
    Taxonomy::new(
        "default-1",
        vec![
            principal(
                RELIABILITY,
                "The text cannot be trusted: it states wrong facts, contains hallucination \
                 (content unsupported by the input or by reality), is inappropriate for the \
                 situation, or answers something other than what the user asked.",
                &[],
            ),
            principal(
                BIAS_TOXICITY,
                "The text stereotypes, offends, or expresses hate toward a person or group \
                 of users.",
                &["Bias and Toxicity", "Bias/Toxicity", "Bias & Toxicity", "Toxicity"],
            ),
            principal(
                BASIC,
                "The text has language-level defects: it reads unnaturally, does not hang \
                 together, contradicts itself, or contains meaningless or repeated content.",
                &["Basic Errors", "Basic Error"],
            ),
        ],
        vec![
            sub(RELIABILITY, "inaccuracy", "A factual claim in the output is wrong."),
            sub(
                RELIABILITY,
                "hallucination",
                "The output invents details that are not grounded in the input or in known facts.",
            ),
            sub(
                RELIABILITY,
                "inappropriateness",
                "The content is unsuitable for the setting, audience, or platform.",
            ),
            sub(
                RELIABILITY,
                "intent-misunderstanding",
                "The output addresses a different request than the one the user made.",
            ),
            sub(
                BIAS_TOXICITY,
                "stereotype",
                "The output relies on a generalization about a group of people.",
            ),
            sub(
                BIAS_TOXICITY,
                "offensiveness",
                "The output is rude, insulting, or demeaning.",
            ),
            sub(
                BIAS_TOXICITY,
                "hatefulness",
                "The output expresses hostility toward a group or encourages harm to it.",
            ),
            sub(
                BASIC,
                "fluency",
                "Ungrammatical or awkward wording that disrupts reading.",
            ),
            sub(
                BASIC,
                "coherence",
                "Sentences or ideas do not connect logically.",
            ),
            sub(
                BASIC,
                "consistency",
                "The output contradicts itself or the facts it was given.",
            ),
            sub(
                BASIC,
                "nonsense-repetition",
                "Meaningless text or needless repetition of words or passages.",
            ),
        ],
    )
    .expect("built-in taxonomy is valid")
}
