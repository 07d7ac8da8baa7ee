use std::fmt;
use std::str::FromStr;

use crate::baselines::BaselineId;
use crate::engine::{rauq_score, RauqConfig};
use crate::error::{Error, Result};
use crate::trace::GenerationTrace;

/// Any scorer that maps a trace to a sequence-level uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rauq,
    Baseline(BaselineId),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rauq => "rauq",
            Method::Baseline(b) => b.as_str(),
        }
    }

    pub fn score(self, trace: &GenerationTrace, cfg: &RauqConfig) -> Result<f64> {
        match self {
            Method::Rauq => rauq_score(trace, cfg),
            Method::Baseline(b) => b.score(trace, cfg),
        }
    }

    pub fn all() -> impl Iterator<Item = Method> {
        std::iter::once(Method::Rauq).chain(BaselineId::ALL.into_iter().map(Method::Baseline))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "rauq" {
            return Ok(Method::Rauq);
        }
        s.parse::<BaselineId>().map(Method::Baseline).map_err(|_| Error::Config {
            field: "methods",
            message: format!(
                "unknown method `{s}`, expected one of: {}",
                Method::all().map(Method::name).collect::<Vec<_>>().join(", ")
            ),
        })
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Method>>>()?;
    if methods.is_empty() {
        return Err(Error::Config {
            field: "methods",
            message: "at least one method is required".into(),
        });
    }
    Ok(methods)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists() {
        let m = parse_methods("rauq, msp,attn-score-gen-only").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[2].name(), "attn_score_gen_only");
        assert!(parse_methods("").is_err());
        assert!(parse_methods("rauq,bogus").is_err());
        for m in Method::all() {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
