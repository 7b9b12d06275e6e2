//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! keys are an error. Prior hyperparameters whose defaults depend on the
//! number of primary variables are held as overrides until `Q` is known.

use serde::{Deserialize, Serialize};

use crate::distributions::Hyperparameters;
use crate::error::{Error, Result};
use crate::inference::ChainConfig;
use crate::moves::{MoveConfig, SplitScores};
use crate::state::{BProposal, SamplerOptions};

/// Explicitly set hyperparameters; unset fields take the defaults for `Q`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperOverrides {
    pub a_nu: Option<f64>,
    pub b_nu: Option<f64>,
    pub a_rho: Option<f64>,
    pub b_rho: Option<f64>,
    pub a_sigma: Option<f64>,
    pub b_sigma: Option<f64>,
    pub a_kappa: Option<f64>,
    pub b_kappa: Option<f64>,
    pub nu0: Option<f64>,
    pub sigma2_mu: Option<f64>,
    pub b1: Option<f64>,
    pub c1: Option<f64>,
    pub b2: Option<f64>,
    pub c2: Option<f64>,
    #[serde(rename = "P_max")]
    pub p_max: Option<usize>,
}

impl HyperOverrides {
    /// Defaults for `q` with the overrides applied, validated. The default
    /// `c1`/`c2` follow an overridden `P_max`.
    pub fn resolve(&self, q: usize) -> Result<Hyperparameters> {
        let mut h = Hyperparameters::defaults_for(q);
        if let Some(pm) = self.p_max {
            h.p_max = pm;
            let c = if pm > 0 { 6.0 * (pm as f64 - 1.0) / pm as f64 } else { 0.0 };
            h.c1 = c;
            h.c2 = c;
        }
        let fields: [(&mut f64, Option<f64>); 14] = [
            (&mut h.a_nu, self.a_nu),
            (&mut h.b_nu, self.b_nu),
            (&mut h.a_rho, self.a_rho),
            (&mut h.b_rho, self.b_rho),
            (&mut h.a_sigma, self.a_sigma),
            (&mut h.b_sigma, self.b_sigma),
            (&mut h.a_kappa, self.a_kappa),
            (&mut h.b_kappa, self.b_kappa),
            (&mut h.nu0, self.nu0),
            (&mut h.sigma2_mu, self.sigma2_mu),
            (&mut h.b1, self.b1),
            (&mut h.c1, self.c1),
            (&mut h.b2, self.b2),
            (&mut h.c2, self.c2),
        ];
        for (slot, value) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
        h.validate(q)?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hyper: HyperOverrides,
    pub moves: MoveConfig,
    pub sampler: SamplerOptions,
    pub chain: ChainConfig,
    /// edge inclusion threshold for graph extraction
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hyper: HyperOverrides::default(),
            moves: MoveConfig::default(),
            sampler: SamplerOptions::default(),
            chain: ChainConfig::default(),
            threshold: 0.5,
        }
    }
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{key}: expected a number, got {value:?}"),
    })
}

fn parse_usize(line: usize, key: &str, value: &str) -> Result<usize> {
    value.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("{key}: expected a non-negative integer, got {value:?}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("{key}: expected true or false, got {value:?}"),
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `key = value`, got {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
            cfg.set(line, key, value)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| parse_f64(line, key, v);
        let h = &mut self.hyper;
        match key {
            "a_nu" => h.a_nu = Some(f(value)?),
            "b_nu" => h.b_nu = Some(f(value)?),
            "a_rho" => h.a_rho = Some(f(value)?),
            "b_rho" => h.b_rho = Some(f(value)?),
            "a_sigma" => h.a_sigma = Some(f(value)?),
            "b_sigma" => h.b_sigma = Some(f(value)?),
            "a_kappa" => h.a_kappa = Some(f(value)?),
            "b_kappa" => h.b_kappa = Some(f(value)?),
            "nu0" => h.nu0 = Some(f(value)?),
            "sigma2_mu" => h.sigma2_mu = Some(f(value)?),
            "b1" => h.b1 = Some(f(value)?),
            "c1" => h.c1 = Some(f(value)?),
            "b2" => h.b2 = Some(f(value)?),
            "c2" => h.c2 = Some(f(value)?),
            "P_max" => h.p_max = Some(parse_usize(line, key, value)?),
            "p_shift" => self.moves.p_shift = f(value)?,
            "p_switch" => self.moves.p_switch = f(value)?,
            "p_add" => self.moves.p_add = f(value)?,
            "p_split_merge" => self.moves.p_split_merge = f(value)?,
            "split_scores" => {
                self.moves.split_scores = match value {
                    "prior" => SplitScores::Prior,
                    "conditional" => SplitScores::Conditional,
                    _ => {
                        return Err(Error::Parse {
                            line,
                            message: format!("split_scores: expected prior or conditional, got {value:?}"),
                        })
                    }
                }
            }
            "b_proposal" => {
                self.sampler.b_proposal = match value {
                    "random_walk" => BProposal::RandomWalk,
                    "conditional" => BProposal::Conditional,
                    _ => {
                        return Err(Error::Parse {
                            line,
                            message: format!(
                                "b_proposal: expected random_walk or conditional, got {value:?}"
                            ),
                        })
                    }
                }
            }
            "b_step" => self.sampler.b_step = f(value)?,
            "a_step" => self.sampler.a_step = f(value)?,
            "exact_sigma2" => self.sampler.exact_sigma2 = parse_bool(line, key, value)?,
            "residual_floor" => self.sampler.residual_floor = f(value)?,
            "iterations" => self.chain.iterations = parse_usize(line, key, value)?,
            "burn_in" => self.chain.burn_in = parse_usize(line, key, value)?,
            "thin" => self.chain.thin = parse_usize(line, key, value)?,
            "chains" => self.chain.chains = parse_usize(line, key, value)?,
            "seed" => {
                self.chain.seed = value.parse::<u64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("seed: expected an unsigned integer, got {value:?}"),
                })?
            }
            "threshold" => self.threshold = f(value)?,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key {key:?}"),
                })
            }
        }
        Ok(())
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.moves.validate()?;
        self.sampler.validate()?;
        self.chain.validate()?;
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
