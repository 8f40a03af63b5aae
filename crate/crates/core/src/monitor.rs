//! Streaming tipping monitor.
//!
//! Centroids `B` and `D` are fixed at construction together with the
//! closed-form denominator. Each pushed token costs exactly two `d`-length
//! dot products (against `B` and `D`); everything else is scalar work on a
//! running numerator and a bounded tail of per-token scalars.

use alloc::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dot, BasinSet, Embedding, GeometryError};
use crate::predictor::{numerator_term_from_dots, round_n_star, NStar, DEFAULT_EPSILON_BOUNDARY};

pub const DEFAULT_WINDOW: usize = 300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("degenerate basins: B·D equals B·B, the closed form is undefined")]
    DegenerateDenominator,
    #[error("invalid monitor configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Which context the `c·D ≥ c·B` check is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// The latest token embedding.
    #[default]
    PerToken,
    /// Mean of the tokens in the window.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Alert `approaching` once the predicted `n*` is at or below this.
    pub n_star_threshold: u64,
    pub epsilon_boundary: f64,
    pub t_eff: f64,
    /// Tokens kept in the numerator; older ones are retired.
    pub window: usize,
    pub context: ContextMode,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            n_star_threshold: 0,
            epsilon_boundary: DEFAULT_EPSILON_BOUNDARY,
            t_eff: 1.0,
            window: DEFAULT_WINDOW,
            context: ContextMode::PerToken,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertLevel {
    Ok,
    Approaching,
    Tipped,
    Unreliable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertStatus {
    pub level: AlertLevel,
    /// Absent before any token has been pushed.
    pub n_star: Option<NStar>,
    pub delta_hat: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TokenScalars {
    pb: f64,
    pd: f64,
    term: f64,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if libm::fabs(self.sum) >= libm::fabs(x) {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[derive(Debug, Clone)]
pub struct MonitorState {
    cfg: MonitorConfig,
    b: Embedding,
    d: Embedding,
    scale_dots: f64,
    denominator: f64,
    numerator: CompensatedSum,
    sum_pb: CompensatedSum,
    sum_pd: CompensatedSum,
    tail: VecDeque<TokenScalars>,
    token_count: u64,
    latched: bool,
    last: AlertStatus,
    dot_products: u64,
}

impl MonitorState {
    /// Caches the denominator and the basin dot products.
    pub fn new(basins: &BasinSet, cfg: MonitorConfig) -> Result<Self, MonitorError> {
        if !(cfg.t_eff > 0.0 && cfg.t_eff.is_finite()) {
            return Err(MonitorError::InvalidConfig("t_eff must be positive and finite"));
        }
        if cfg.window == 0 {
            return Err(MonitorError::InvalidConfig("window must be at least 1"));
        }
        if cfg.epsilon_boundary.is_nan() || cfg.epsilon_boundary < 0.0 {
            return Err(MonitorError::InvalidConfig("epsilon_boundary must be non-negative"));
        }
        let (b, d) = basins.tipping_pair()?;
        let bb = dot(b, b)?;
        let bd = dot(b, d)?;
        let dd = dot(d, d)?;
        if bd == bb {
            return Err(MonitorError::DegenerateDenominator);
        }
        let denominator = (bd - bb) * libm::exp(bb / cfg.t_eff);
        if denominator < 0.0 {
            log::info!("B is a stable attractor for these basins; n* will report stable");
        }
        Ok(MonitorState {
            cfg,
            b: b.clone(),
            d: d.clone(),
            scale_dots: libm::fabs(bb).max(libm::fabs(bd)).max(libm::fabs(dd)),
            denominator,
            numerator: CompensatedSum::default(),
            sum_pb: CompensatedSum::default(),
            sum_pd: CompensatedSum::default(),
            tail: VecDeque::with_capacity(cfg.window.min(4096)),
            token_count: 0,
            latched: false,
            last: AlertStatus {
                level: AlertLevel::Ok,
                n_star: None,
                delta_hat: 0.0,
                tokens: 0,
            },
            dot_products: 0,
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.cfg
    }

    pub fn cached_denominator(&self) -> f64 {
        self.denominator
    }

    pub fn running_numerator(&self) -> f64 {
        self.numerator.value()
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    /// Tokens currently contributing to the numerator.
    pub fn window_len(&self) -> usize {
        self.tail.len()
    }

    pub fn is_stable_mode(&self) -> bool {
        self.denominator < 0.0
    }

    /// Vector dot products performed by `push_token` since construction or
    /// the last reset.
    pub fn dot_product_count(&self) -> u64 {
        self.dot_products
    }

    pub fn status(&self) -> AlertStatus {
        self.last
    }

    pub fn tipped(&self) -> bool {
        self.latched
    }

    /// Clears all counters and the tipped latch; basins are kept.
    pub fn reset(&mut self) {
        self.numerator = CompensatedSum::default();
        self.sum_pb = CompensatedSum::default();
        self.sum_pd = CompensatedSum::default();
        self.tail.clear();
        self.token_count = 0;
        self.latched = false;
        self.dot_products = 0;
        self.last = AlertStatus {
            level: AlertLevel::Ok,
            n_star: None,
            delta_hat: 0.0,
            tokens: 0,
        };
    }

    fn counted_dot(&mut self, token: &Embedding, basin: Basin) -> Result<f64, GeometryError> {
        self.dot_products += 1;
        match basin {
            Basin::B => dot(token, &self.b),
            Basin::D => dot(token, &self.d),
        }
    }

    pub fn push_token(&mut self, token: &Embedding) -> Result<AlertStatus, MonitorError> {
        let pb = self.counted_dot(token, Basin::B)?;
        let pd = self.counted_dot(token, Basin::D)?;
        let term = numerator_term_from_dots(pb, pd, self.cfg.t_eff);

        if self.tail.len() == self.cfg.window {
            if let Some(old) = self.tail.pop_front() {
                self.numerator.add(-old.term);
                self.sum_pb.add(-old.pb);
                self.sum_pd.add(-old.pd);
            }
        }
        self.tail.push_back(TokenScalars { pb, pd, term });
        self.numerator.add(term);
        self.sum_pb.add(pb);
        self.sum_pd.add(pd);
        self.token_count += 1;

        if pb == 0.0 && pd == 0.0 {
            // Null token: it carries no signal about either basin.
            self.last.tokens = self.token_count;
            return Ok(self.last);
        }

        let n_star = self.current_n_star();
        let (cb, cd) = match self.cfg.context {
            ContextMode::PerToken => (pb, pd),
            ContextMode::Pooled => {
                let n = self.tail.len() as f64;
                (self.sum_pb.value() / n, self.sum_pd.value() / n)
            }
        };
        let scale = self.scale_dots.max(libm::fabs(cb)).max(libm::fabs(cd));
        let delta_hat = if scale > 0.0 { (cd - cb) / scale } else { 0.0 };

        if cd >= cb {
            self.latched = true;
        }
        let level = if self.latched {
            AlertLevel::Tipped
        } else if libm::fabs(delta_hat) < self.cfg.epsilon_boundary {
            AlertLevel::Unreliable
        } else if matches!(n_star, NStar::Count(n) if n <= self.cfg.n_star_threshold) {
            AlertLevel::Approaching
        } else {
            AlertLevel::Ok
        };
        self.last = AlertStatus {
            level,
            n_star: Some(n_star),
            delta_hat,
            tokens: self.token_count,
        };
        Ok(self.last)
    }

    fn current_n_star(&self) -> NStar {
        let raw = self.numerator.value() / self.denominator;
        if self.denominator > 0.0 {
            NStar::Count(round_n_star(raw))
        } else if raw < 0.0 {
            NStar::Stable
        } else {
            NStar::Count(0)
        }
    }
}

#[derive(Clone, Copy)]
enum Basin {
    B,
    D,
}

/// Convenience wrapper matching [`MonitorState::new`].
pub fn monitor_init(basins: &BasinSet, cfg: MonitorConfig) -> Result<MonitorState, MonitorError> {
    MonitorState::new(basins, cfg)
}
