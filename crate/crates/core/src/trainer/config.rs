use std::fmt;
use std::str::FromStr;

use crate::diff_ilp::RevenueSign;

use super::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TrainMode {
    #[default]
    E3ir,
    TwoStage,
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e3ir" => Ok(Self::E3ir),
            "two_stage" | "two-stage" => Ok(Self::TwoStage),
            other => Err(format!("unknown mode `{other}` (expected e3ir or two_stage)")),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::E3ir => "e3ir",
            Self::TwoStage => "two_stage",
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("config line {line}, key `{key}`: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn widths(value: &str) -> Result<Vec<usize>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|w| parse::<usize>(w.trim())).collect()
}

fn revenue_sign(value: &str) -> Result<RevenueSign, String> {
    match value {
        "maximize" => Ok(RevenueSign::Maximize),
        "literal" => Ok(RevenueSign::Literal),
        other => Err(format!("unknown revenue sign `{other}` (expected maximize or literal)")),
    }
}

impl TrainConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "alpha" => self.alpha = parse(v)?,
            "beta" => self.beta = parse(v)?,
            "budget" => self.budget = parse(v)?,
            "learning_rate" => self.learning_rate = parse(v)?,
            "batch_size" => self.batch_size = parse(v)?,
            "max_iterations" => self.max_iterations = parse(v)?,
            "patience" => self.patience = parse(v)?,
            "seed" => self.seed = parse(v)?,
            "mode" => self.mode = parse(v)?,
            "neighbor_scheme" => self.neighbor_scheme = parse(v)?,
            "revenue_sign" => self.revenue_sign = revenue_sign(v)?,
            "weight_by_response" => self.weight_by_response = parse(v)?,
            "hidden_dims" => self.hidden_dims = widths(v)?,
            "head_dims" => self.head_dims = widths(v)?,
            "embed_dim" => self.embed_dim = parse(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Reads `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |key: &str, message: String| ConfigError {
                line: i + 1,
                key: key.to_string(),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line, "expected `key = value`".into()))?;
            let key = key.trim();
            cfg.set(key, value).map_err(|m| err(key, m))?;
        }
        cfg.validate().map_err(|(key, message)| ConfigError {
            line: 0,
            key: key.to_string(),
            message,
        })?;
        Ok(cfg)
    }

    /// The offending key and why, if any field is out of range.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let nonneg = |key, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((key, format!("{v} must be finite and non-negative")))
            }
        };
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        nonneg("budget", self.budget)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(("learning_rate", format!("{} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(("max_iterations", "must be positive".into()));
        }
        if self.embed_dim == 0 {
            return Err(("embed_dim", "must be positive".into()));
        }
        Ok(())
    }

    /// Key-value text that [`TrainConfig::parse_text`] reads back.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let sign = match self.revenue_sign {
            RevenueSign::Maximize => "maximize",
            RevenueSign::Literal => "literal",
        };
        format!(
            "alpha = {}\nbeta = {}\nbudget = {}\nlearning_rate = {}\nbatch_size = {}\nmax_iterations = {}\npatience = {}\nseed = {}\nmode = {}\nneighbor_scheme = {}\nrevenue_sign = {}\nweight_by_response = {}\nhidden_dims = {}\nhead_dims = {}\nembed_dim = {}\n",
            self.alpha,
            self.beta,
            self.budget,
            self.learning_rate,
            self.batch_size,
            self.max_iterations,
            self.patience,
            self.seed,
            self.mode,
            self.neighbor_scheme,
            sign,
            self.weight_by_response,
            join(&self.hidden_dims),
            join(&self.head_dims),
            self.embed_dim
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff_ilp::NeighborScheme;

    #[test]
    fn round_trip() {
        let mut c = TrainConfig::default();
        c.alpha = 0.25;
        c.mode = TrainMode::TwoStage;
        c.neighbor_scheme = NeighborScheme::RowEdge;
        c.hidden_dims = vec![7, 3];
        c.weight_by_response = true;
        assert_eq!(TrainConfig::parse_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainConfig::parse_text("# header\n\nbeta = 2 # inline\nmode=two_stage\n").unwrap();
        assert_eq!(c.beta, 2.0);
        assert_eq!(c.mode, TrainMode::TwoStage);
    }

    #[test]
    fn errors_name_the_key() {
        let e = TrainConfig::parse_text("alpha = 1\nlearning_rate = fast\n").unwrap_err();
        assert_eq!(e.key, "learning_rate");
        assert_eq!(e.line, 2);
        assert!(e.to_string().contains("learning_rate"));
        assert_eq!(TrainConfig::parse_text("colour = red").unwrap_err().key, "colour");
        assert_eq!(TrainConfig::parse_text("batch_size = 0").unwrap_err().key, "batch_size");
        assert_eq!(TrainConfig::parse_text("beta = -1").unwrap_err().key, "beta");
        assert_eq!(TrainConfig::parse_text("mode = fancy").unwrap_err().key, "mode");
    }
}
