//! Intensity state machine for the spread-dependent Hawkes model and its variants.
//!
//! Every variant is compiled into a [`Kernel`]: per-process base rates, a 4x4
//! table of excitation updates (indexed by source event, then target process),
//! and up to four distinct decay rates. The running state keeps one decayed
//! accumulator per (target process, decay rate), so an event costs O(1) no
//! matter how long the history is.
//!
//! Spread-narrowing events do not add to the narrowing intensities; they reset
//! the accumulated excitation of `A^d` and `B^u` to `xi * ell(tau+)`. This is the
//! closed form of the stochastic negative excitation and keeps every intensity
//! non-negative by construction.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::market::{apply_event, EventKind, EventRecord, EventStream, MarketState, Price};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "proposed")]
    Proposed,
    /// Constant base rates and a free 4x4 excitation matrix.
    #[serde(rename = "basic")]
    BasicHawkes,
    /// Adds the corner excitations `alpha_14`, `alpha_41`.
    #[serde(rename = "ext1")]
    ExtendedI,
    /// Separate `mu_1, mu_4` and `eta_1..eta_4` in the base rates.
    #[serde(rename = "ext2")]
    ExtendedII,
    /// Separate reset slopes `xi_1..xi_4`.
    #[serde(rename = "ext3")]
    ExtendedIII,
    /// Decay rate per source process (column-wise).
    #[serde(rename = "ext4")]
    ExtendedIV,
    /// Decay rate per target process (row-wise).
    #[serde(rename = "ext5")]
    ExtendedV,
    /// Indicator base `eta * 1{ell > 0}`; narrowing adds `xi` unless the spread hits the minimum.
    #[serde(rename = "constant_base")]
    ConstantBase,
    /// Two-process spread model on the absolute level; see [`crate::spread`].
    #[serde(rename = "spread_only")]
    SpreadOnly,
}

const PROPOSED_NAMES: [&str; 9] =
    ["mu", "eta", "alpha_s1", "alpha_s2", "alpha_m", "alpha_w1", "alpha_w2", "beta", "xi"];
const BASIC_NAMES: [&str; 18] = [
    "mu", "alpha_11", "alpha_12", "alpha_13", "alpha_14", "alpha_21", "alpha_22", "alpha_23", "alpha_24", "alpha_31",
    "alpha_32", "alpha_33", "alpha_34", "alpha_41", "alpha_42", "alpha_43", "alpha_44", "beta",
];
const EXT1_NAMES: [&str; 11] =
    ["mu", "eta", "alpha_s1", "alpha_s2", "alpha_m", "alpha_w1", "alpha_w2", "beta", "xi", "alpha_14", "alpha_41"];
const EXT2_NAMES: [&str; 13] = [
    "mu_1", "mu_4", "eta_1", "eta_2", "eta_3", "eta_4", "alpha_s1", "alpha_s2", "alpha_m", "alpha_w1", "alpha_w2",
    "beta", "xi",
];
const EXT3_NAMES: [&str; 12] =
    ["mu", "eta", "alpha_s1", "alpha_s2", "alpha_m", "alpha_w1", "alpha_w2", "beta", "xi_1", "xi_2", "xi_3", "xi_4"];
const EXT45_NAMES: [&str; 12] = [
    "mu", "eta", "alpha_s1", "alpha_s2", "alpha_m", "alpha_w1", "alpha_w2", "beta_1", "beta_2", "beta_3", "beta_4",
    "xi",
];

impl ModelVariant {
    pub const ALL: [ModelVariant; 9] = [
        ModelVariant::Proposed,
        ModelVariant::BasicHawkes,
        ModelVariant::ExtendedI,
        ModelVariant::ExtendedII,
        ModelVariant::ExtendedIII,
        ModelVariant::ExtendedIV,
        ModelVariant::ExtendedV,
        ModelVariant::ConstantBase,
        ModelVariant::SpreadOnly,
    ];

    /// The variants compared by AIC/BIC model selection.
    pub const SELECTION: [ModelVariant; 7] = [
        ModelVariant::Proposed,
        ModelVariant::BasicHawkes,
        ModelVariant::ExtendedI,
        ModelVariant::ExtendedII,
        ModelVariant::ExtendedIII,
        ModelVariant::ExtendedIV,
        ModelVariant::ExtendedV,
    ];

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelVariant::Proposed | ModelVariant::ConstantBase | ModelVariant::SpreadOnly => &PROPOSED_NAMES,
            ModelVariant::BasicHawkes => &BASIC_NAMES,
            ModelVariant::ExtendedI => &EXT1_NAMES,
            ModelVariant::ExtendedII => &EXT2_NAMES,
            ModelVariant::ExtendedIII => &EXT3_NAMES,
            ModelVariant::ExtendedIV | ModelVariant::ExtendedV => &EXT45_NAMES,
        }
    }

    /// Number of free parameters `k` used by AIC/BIC.
    pub fn param_count(self) -> usize {
        self.param_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Proposed => "proposed",
            ModelVariant::BasicHawkes => "basic",
            ModelVariant::ExtendedI => "ext1",
            ModelVariant::ExtendedII => "ext2",
            ModelVariant::ExtendedIII => "ext3",
            ModelVariant::ExtendedIV => "ext4",
            ModelVariant::ExtendedV => "ext5",
            ModelVariant::ConstantBase => "constant_base",
            ModelVariant::SpreadOnly => "spread_only",
        }
    }

    /// Parses a comma-separated list; `ext1..ext5` expands to the five extensions.
    pub fn parse_list(s: &str) -> std::result::Result<Vec<ModelVariant>, String> {
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            if let Some((a, b)) = item.split_once("..") {
                let (a, b) = (a.parse::<ModelVariant>()?, b.parse::<ModelVariant>()?);
                let ia = ModelVariant::ALL.iter().position(|v| *v == a).unwrap();
                let ib = ModelVariant::ALL.iter().position(|v| *v == b).unwrap();
                if ia > ib {
                    return Err(format!("empty variant range {item:?}"));
                }
                out.extend_from_slice(&ModelVariant::ALL[ia..=ib]);
            } else {
                out.push(item.parse()?);
            }
        }
        if out.is_empty() {
            return Err("no variants given".into());
        }
        Ok(out)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => ModelVariant::Proposed,
            "basic" | "basic_hawkes" => ModelVariant::BasicHawkes,
            "ext1" | "extended1" => ModelVariant::ExtendedI,
            "ext2" | "extended2" => ModelVariant::ExtendedII,
            "ext3" | "extended3" => ModelVariant::ExtendedIII,
            "ext4" | "extended4" => ModelVariant::ExtendedIV,
            "ext5" | "extended5" => ModelVariant::ExtendedV,
            "constant_base" | "constant" => ModelVariant::ConstantBase,
            "spread_only" | "spread" => ModelVariant::SpreadOnly,
            other => return Err(format!("unknown model variant {other:?}")),
        })
    }
}

/// The nine parameters shared by the proposed, constant-base and spread-only models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoreParams {
    pub mu: f64,
    pub eta: f64,
    pub alpha_s1: f64,
    pub alpha_s2: f64,
    pub alpha_m: f64,
    pub alpha_w1: f64,
    pub alpha_w2: f64,
    pub beta: f64,
    pub xi: f64,
}

impl CoreParams {
    fn to_array(self) -> [f64; 9] {
        [
            self.mu,
            self.eta,
            self.alpha_s1,
            self.alpha_s2,
            self.alpha_m,
            self.alpha_w1,
            self.alpha_w2,
            self.beta,
            self.xi,
        ]
    }

    /// Eq. 3 style stability condition `alpha_s1 + alpha_s2 + alpha_m < beta`.
    pub fn is_stable(&self) -> bool {
        self.alpha_s1 + self.alpha_s2 + self.alpha_m < self.beta
    }
}

/// Non-fatal observations about a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamWarning {
    /// `alpha_s1 + alpha_s2 + alpha_m >= beta`.
    StabilityViolated,
    /// A reset slope is exactly zero.
    XiZero,
    /// A spread sensitivity is exactly zero.
    EtaZero,
}

/// Parameter values for one model variant, addressed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    variant: ModelVariant,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn new(variant: ModelVariant, values: Vec<f64>) -> Result<Self> {
        let names = variant.param_names();
        if values.len() != names.len() {
            return Err(Error::InvalidParams(format!(
                "{variant} takes {} parameters, got {}",
                names.len(),
                values.len()
            )));
        }
        let ps = ParamSet { variant, values };
        ps.validate()?;
        Ok(ps)
    }

    pub fn proposed(core: CoreParams) -> Result<Self> {
        Self::new(ModelVariant::Proposed, core.to_array().to_vec())
    }

    pub fn with_core(variant: ModelVariant, core: CoreParams) -> Result<Self> {
        match variant {
            ModelVariant::Proposed | ModelVariant::ConstantBase | ModelVariant::SpreadOnly => {
                Self::new(variant, core.to_array().to_vec())
            }
            _ => Err(Error::InvalidParams(format!("{variant} is not parameterized by the nine core parameters"))),
        }
    }

    /// Builds from `(name, value)` pairs; every name of the variant must be present.
    pub fn from_named<'a>(variant: ModelVariant, named: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        let map: HashMap<&str, f64> = named.into_iter().collect();
        let names = variant.param_names();
        for k in map.keys() {
            if !names.contains(k) {
                return Err(Error::InvalidParams(format!("{variant} has no parameter {k:?}")));
            }
        }
        let values = names
            .iter()
            .map(|n| map.get(n).copied().ok_or_else(|| Error::InvalidParams(format!("missing parameter {n:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(variant, values)
    }

    /// Proposed-model parameters translated to another variant so that both
    /// produce the same intensities (extensions set to their nested values).
    pub fn embed(core: CoreParams, variant: ModelVariant) -> Result<Self> {
        let c = core;
        let v = match variant {
            ModelVariant::Proposed | ModelVariant::ConstantBase | ModelVariant::SpreadOnly => c.to_array().to_vec(),
            ModelVariant::ExtendedI => {
                let mut v = c.to_array().to_vec();
                v.extend([0.0, 0.0]);
                v
            }
            ModelVariant::ExtendedII => vec![
                c.mu, c.mu, 0.0, c.eta, c.eta, 0.0, c.alpha_s1, c.alpha_s2, c.alpha_m, c.alpha_w1, c.alpha_w2, c.beta,
                c.xi,
            ],
            ModelVariant::ExtendedIII => vec![
                c.mu, c.eta, c.alpha_s1, c.alpha_s2, c.alpha_m, c.alpha_w1, c.alpha_w2, c.beta, c.xi, c.xi, c.xi, c.xi,
            ],
            ModelVariant::ExtendedIV | ModelVariant::ExtendedV => vec![
                c.mu, c.eta, c.alpha_s1, c.alpha_s2, c.alpha_m, c.alpha_w1, c.alpha_w2, c.beta, c.beta, c.beta, c.beta,
                c.xi,
            ],
            ModelVariant::BasicHawkes => {
                return Err(Error::InvalidParams(
                    "the basic Hawkes model cannot reproduce spread-dependent rates".into(),
                ))
            }
        };
        Self::new(variant, v)
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &'static [&'static str] {
        self.variant.param_names()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names().iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.names().iter().copied().zip(self.values.iter().copied())
    }

    /// Replaces all values, re-validating.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.variant, values)
    }

    /// The nine core parameters, for variants that are parameterized by them.
    pub fn core(&self) -> Option<CoreParams> {
        match self.variant {
            ModelVariant::Proposed | ModelVariant::ConstantBase | ModelVariant::SpreadOnly => {
                let v = &self.values;
                Some(CoreParams {
                    mu: v[0],
                    eta: v[1],
                    alpha_s1: v[2],
                    alpha_s2: v[3],
                    alpha_m: v[4],
                    alpha_w1: v[5],
                    alpha_w2: v[6],
                    beta: v[7],
                    xi: v[8],
                })
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in self.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be finite and non-negative, got {v}")));
            }
            if name.starts_with("beta") && v <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Stability (where the condition applies) and boundary-value warnings.
    pub fn warnings(&self) -> Vec<ParamWarning> {
        let mut w = Vec::new();
        if let Some(stable) = self.stability_condition() {
            if !stable {
                w.push(ParamWarning::StabilityViolated);
            }
        }
        if self.iter().any(|(n, v)| n.starts_with("xi") && v == 0.0) {
            w.push(ParamWarning::XiZero);
        }
        if self.iter().any(|(n, v)| (n == "eta" || n == "eta_2" || n == "eta_3") && v == 0.0) {
            w.push(ParamWarning::EtaZero);
        }
        w
    }

    /// `alpha_s1 + alpha_s2 + alpha_m < beta` (against the smallest decay rate
    /// for the multi-beta variants); `None` for the basic Hawkes model.
    pub fn stability_condition(&self) -> Option<bool> {
        let s = self.get("alpha_s1")? + self.get("alpha_s2")? + self.get("alpha_m")?;
        let beta = self.iter().filter(|(n, _)| n.starts_with("beta")).map(|(_, v)| v).fold(f64::INFINITY, f64::min);
        Some(s < beta)
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::compile(self)
    }
}

impl Serialize for ParamSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Values<'a>(&'a ParamSet);
        impl Serialize for Values<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.values.len()))?;
                for (k, v) in self.0.iter() {
                    m.serialize_entry(k, &v)?;
                }
                m.end()
            }
        }
        let mut m = serializer.serialize_map(Some(2))?;
        m.serialize_entry("variant", &self.variant)?;
        m.serialize_entry("values", &Values(self))?;
        m.end()
    }
}

impl<'de> Deserialize<'de> for ParamSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ParamSet;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a parameter set {variant, values}")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<ParamSet, A::Error> {
                let mut variant = None;
                let mut values: Option<HashMap<String, f64>> = None;
                while let Some(key) = map.next_key::<String>()? {
                    match key.as_str() {
                        "variant" => variant = Some(map.next_value::<ModelVariant>()?),
                        "values" => values = Some(map.next_value()?),
                        _ => {
                            map.next_value::<de::IgnoredAny>()?;
                        }
                    }
                }
                let variant = variant.ok_or_else(|| de::Error::missing_field("variant"))?;
                let values = values.ok_or_else(|| de::Error::missing_field("values"))?;
                ParamSet::from_named(variant, values.iter().map(|(k, v)| (k.as_str(), *v))).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_map(V)
    }
}

/// What a source event does to one target accumulator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Update {
    /// Classical Hawkes jump.
    Add { slot: usize, alpha: f64 },
    /// Cancel all excitation, restart at `xi * ell(tau+)`.
    Reset { slot: usize, xi: f64 },
    /// Cancel all excitation if the spread hit the minimum, else add `xi`.
    IndicatorReset { slot: usize, xi: f64 },
}

/// A parameter set compiled into per-event update rules.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub(crate) variant: ModelVariant,
    pub(crate) mu: [f64; 4],
    pub(crate) eta: [f64; 4],
    pub(crate) indicator_base: bool,
    pub(crate) betas: [f64; 4],
    pub(crate) n_slots: usize,
    /// `updates[source][target]`.
    pub(crate) updates: [[Update; 4]; 4],
}

impl Kernel {
    fn compile(ps: &ParamSet) -> Kernel {
        let g = |n: &str| ps.get(n).unwrap_or(0.0);
        let variant = ps.variant;
        let add = |alpha: f64| Update::Add { slot: 0, alpha };
        let reset = |xi: f64| Update::Reset { slot: 0, xi };

        let mut mu = [g("mu"), 0.0, 0.0, g("mu")];
        let mut eta = [0.0, g("eta"), g("eta"), 0.0];
        let (s1, s2, m, w1, w2) = (g("alpha_s1"), g("alpha_s2"), g("alpha_m"), g("alpha_w1"), g("alpha_w2"));
        let (c14, c41) = (g("alpha_14"), g("alpha_41"));
        let xi = match variant {
            ModelVariant::ExtendedIII => [g("xi_1"), g("xi_2"), g("xi_3"), g("xi_4")],
            _ => [g("xi"); 4],
        };
        // rows: source AskUp, AskDown, BidUp, BidDown; columns: target process
        let mut updates = [
            [add(s1), add(w1), add(w2), add(c41)],
            [add(m), reset(xi[0]), reset(xi[2]), add(s2)],
            [add(s2), reset(xi[1]), reset(xi[3]), add(m)],
            [add(c14), add(w2), add(w1), add(s1)],
        ];
        let mut betas = [g("beta"), 0.0, 0.0, 0.0];
        let mut n_slots = 1;
        let mut indicator_base = false;

        match variant {
            ModelVariant::BasicHawkes => {
                mu = [g("mu"); 4];
                eta = [0.0; 4];
                for (src, row) in updates.iter_mut().enumerate() {
                    for (tgt, u) in row.iter_mut().enumerate() {
                        *u = add(g(BASIC_NAMES[1 + 4 * tgt + src]));
                    }
                }
            }
            ModelVariant::ExtendedII => {
                mu = [g("mu_1"), 0.0, 0.0, g("mu_4")];
                eta = [g("eta_1"), g("eta_2"), g("eta_3"), g("eta_4")];
            }
            ModelVariant::ExtendedIV | ModelVariant::ExtendedV => {
                betas = [g("beta_1"), g("beta_2"), g("beta_3"), g("beta_4")];
                n_slots = 4;
                let column_wise = variant == ModelVariant::ExtendedIV;
                for (src, row) in updates.iter_mut().enumerate() {
                    for (tgt, u) in row.iter_mut().enumerate() {
                        let s = if column_wise { src } else { tgt };
                        match u {
                            Update::Add { slot, .. }
                            | Update::Reset { slot, .. }
                            | Update::IndicatorReset { slot, .. } => *slot = s,
                        }
                    }
                }
            }
            ModelVariant::ConstantBase => {
                indicator_base = true;
                for src in [1, 2] {
                    for tgt in [1, 2] {
                        updates[src][tgt] = Update::IndicatorReset { slot: 0, xi: xi[0] };
                    }
                }
            }
            _ => {}
        }
        Kernel { variant, mu, eta, indicator_base, betas, n_slots, updates }
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    /// Base intensities at relative level `ell`.
    #[inline]
    pub fn base(&self, ell: f64) -> [f64; 4] {
        let g = if self.indicator_base {
            if ell > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            ell
        };
        [
            self.mu[0] + self.eta[0] * g,
            self.mu[1] + self.eta[1] * g,
            self.mu[2] + self.eta[2] * g,
            self.mu[3] + self.eta[3] * g,
        ]
    }

    #[inline]
    pub(crate) fn apply_updates(&self, acc: &mut [[f64; 4]; 4], source: EventKind, ell_after: f64) {
        for (tgt, u) in self.updates[source.index()].iter().enumerate() {
            match *u {
                Update::Add { slot, alpha } => acc[tgt][slot] += alpha,
                Update::Reset { slot, xi } => {
                    acc[tgt] = [0.0; 4];
                    acc[tgt][slot] = xi * ell_after;
                }
                Update::IndicatorReset { slot, xi } => {
                    if ell_after > 0.0 {
                        acc[tgt][slot] += xi;
                    } else {
                        acc[tgt] = [0.0; 4];
                    }
                }
            }
        }
    }
}

/// Markov state of the intensities: time, decayed accumulators and the book.
#[derive(Clone, Copy, Debug)]
pub struct IntensityState<'k> {
    kernel: &'k Kernel,
    t: f64,
    acc: [[f64; 4]; 4],
    market: MarketState,
}

impl<'k> IntensityState<'k> {
    /// Cold start: no excitation carried in from before `t0`.
    pub fn new(kernel: &'k Kernel, t0: f64, market: MarketState) -> Self {
        IntensityState { kernel, t: t0, acc: [[0.0; 4]; 4], market }
    }

    pub fn kernel(&self) -> &'k Kernel {
        self.kernel
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn market(&self) -> &MarketState {
        &self.market
    }

    /// Excitation part `E_i` of each intensity at the current time.
    pub fn excitation(&self) -> [f64; 4] {
        let n = self.kernel.n_slots;
        std::array::from_fn(|i| self.acc[i][..n].iter().sum())
    }

    /// Swaps in another kernel with the same slot layout, keeping the excitation.
    pub fn with_kernel<'j>(self, kernel: &'j Kernel) -> Result<IntensityState<'j>> {
        if kernel.variant != self.kernel.variant {
            return Err(Error::InvalidParams(format!(
                "cannot switch from {} to {} mid-stream",
                self.kernel.variant, kernel.variant
            )));
        }
        Ok(IntensityState { kernel, t: self.t, acc: self.acc, market: self.market })
    }

    /// Left-continuous intensities at `t >= self.time()`, assuming no event in between.
    pub fn intensity_at(&self, t: f64) -> [f64; 4] {
        let k = self.kernel;
        let dt = t - self.t;
        let mut lam = k.base(self.market.rel_level());
        for s in 0..k.n_slots {
            let d = (-k.betas[s] * dt).exp();
            for (l, row) in lam.iter_mut().zip(&self.acc) {
                *l += row[s] * d;
            }
        }
        lam
    }

    /// Closed-form integrals of each intensity over `(self.time(), t1]`.
    pub fn compensator(&self, t1: f64) -> [f64; 4] {
        let k = self.kernel;
        let dt = t1 - self.t;
        if dt <= 0.0 {
            return [0.0; 4];
        }
        let base = k.base(self.market.rel_level());
        let mut out = base.map(|b| b * dt);
        for s in 0..k.n_slots {
            let w = -(-k.betas[s] * dt).exp_m1() / k.betas[s];
            for (o, row) in out.iter_mut().zip(&self.acc) {
                *o += row[s] * w;
            }
        }
        out
    }

    /// Decays the accumulators to `t` (no event in between).
    pub fn decay_to(&mut self, t: f64) {
        let k = self.kernel;
        let dt = t - self.t;
        if dt > 0.0 {
            for s in 0..k.n_slots {
                let d = (-k.betas[s] * dt).exp();
                for row in self.acc.iter_mut() {
                    row[s] *= d;
                }
            }
        }
        self.t = t;
    }

    /// Processes an event at `t`: decay, move the book, apply the excitation rules
    /// with the post-event relative level.
    pub fn on_event(&mut self, t: f64, kind: EventKind, delta: u32, tick: Price) -> Result<()> {
        let next = apply_event(&self.market, kind, delta, tick)?;
        self.on_event_to_state(t, kind, next);
        Ok(())
    }

    /// Like [`on_event`](Self::on_event) with the post-event book already known.
    pub fn on_event_to_state(&mut self, t: f64, kind: EventKind, state_after: MarketState) {
        self.decay_to(t);
        self.market = state_after;
        self.kernel.apply_updates(&mut self.acc, kind, state_after.rel_level());
    }

    pub fn on_record(&mut self, ev: &EventRecord) {
        self.on_event_to_state(ev.t, ev.kind, ev.state_after);
    }
}

/// Sequential sweep over a stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    /// Left limit of the event's own intensity, one per event.
    pub event_intensity: Vec<f64>,
    /// All four integrals over `(t_{j-1}, t_j]`, one per event.
    pub compensators: Vec<[f64; 4]>,
    /// Integrals over `(t_n, session_end]`.
    pub tail: [f64; 4],
}

impl Replay {
    /// Total integrated intensity per process over the whole session.
    pub fn total_compensator(&self) -> [f64; 4] {
        let mut tot = self.tail;
        for c in &self.compensators {
            for i in 0..4 {
                tot[i] += c[i];
            }
        }
        tot
    }
}

pub fn replay(stream: &EventStream, params: &ParamSet) -> Result<Replay> {
    if params.variant() == ModelVariant::SpreadOnly {
        return Err(Error::InvalidParams("the spread-only model is a two-process model; use crate::spread".into()));
    }
    let kernel = params.kernel();
    let mut state = IntensityState::new(&kernel, stream.session_start(), *stream.initial_state());
    let n = stream.len();
    let mut event_intensity = Vec::with_capacity(n);
    let mut compensators = Vec::with_capacity(n);
    for ev in stream.events() {
        let lam = state.intensity_at(ev.t);
        for (i, &l) in lam.iter().enumerate() {
            if !(l >= 0.0) {
                return Err(Error::NegativeIntensity { kind: EventKind::ALL[i], t: ev.t, value: l });
            }
        }
        compensators.push(state.compensator(ev.t));
        event_intensity.push(lam[ev.kind.index()]);
        state.on_record(ev);
    }
    let tail = state.compensator(stream.session_end());
    Ok(Replay { event_intensity, compensators, tail })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tick() -> Price {
        "0.01".parse().unwrap()
    }

    fn state(bid: &str, ask: &str) -> MarketState {
        MarketState::new(bid.parse().unwrap(), ask.parse().unwrap(), tick()).unwrap()
    }

    pub(crate) fn row1() -> CoreParams {
        CoreParams {
            mu: 0.08,
            eta: 0.1,
            alpha_s1: 4.0,
            alpha_s2: 26.0,
            alpha_m: 5.0,
            alpha_w1: 11.0,
            alpha_w2: 7.0,
            beta: 50.0,
            xi: 2.7,
        }
    }

    #[test]
    fn param_counts() {
        use ModelVariant::*;
        let k: Vec<usize> = [Proposed, BasicHawkes, ExtendedI, ExtendedII, ExtendedIII, ExtendedIV, ExtendedV]
            .iter()
            .map(|v| v.param_count())
            .collect();
        assert_eq!(k, vec![9, 18, 11, 13, 12, 12, 12]);
    }

    #[test]
    fn variant_list_parsing() {
        let v = ModelVariant::parse_list("proposed,basic,ext1..ext5").unwrap();
        assert_eq!(v, ModelVariant::SELECTION.to_vec());
        assert!(ModelVariant::parse_list("ext5..ext1").is_err());
        assert!(ModelVariant::parse_list("nope").is_err());
    }

    #[test]
    fn param_validation() {
        let mut c = row1();
        c.beta = 0.0;
        assert!(ParamSet::proposed(c).is_err());
        c.beta = 50.0;
        c.mu = -1.0;
        assert!(ParamSet::proposed(c).is_err());
        c.mu = f64::NAN;
        assert!(ParamSet::proposed(c).is_err());

        let ok = ParamSet::proposed(row1()).unwrap();
        assert!(ok.warnings().is_empty());
        let mut unstable = row1();
        unstable.alpha_s2 = 60.0;
        let w = ParamSet::proposed(unstable).unwrap().warnings();
        assert_eq!(w, vec![ParamWarning::StabilityViolated]);
        let mut xi0 = row1();
        xi0.xi = 0.0;
        assert!(ParamSet::proposed(xi0).unwrap().warnings().contains(&ParamWarning::XiZero));
    }

    #[test]
    fn paramset_json_roundtrip() {
        let ps = ParamSet::embed(row1(), ModelVariant::ExtendedIII).unwrap();
        let s = serde_json::to_string(&ps).unwrap();
        assert!(s.starts_with(r#"{"variant":"ext3","values":{"mu":0.08"#));
        let back: ParamSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ps);
        let bad = r#"{"variant":"proposed","values":{"mu":1}}"#;
        assert!(serde_json::from_str::<ParamSet>(bad).is_err());
    }

    #[test]
    fn intensity_examples() {
        let ps = ParamSet::proposed(row1()).unwrap();
        let k = ps.kernel();
        let s = IntensityState::new(&k, 0.0, state("100.00", "100.01"));
        assert_eq!(s.intensity_at(5.0), [0.08, 0.0, 0.0, 0.08]);

        // ell = 0.02 by construction: L = 2 ticks at p = 100
        let mut c = row1();
        c.eta = 0.1;
        let k = ParamSet::proposed(c).unwrap().kernel();
        let mut s = IntensityState::new(&k, 0.0, state("99.985", "100.015"));
        assert_eq!(s.market().level(), 2);
        assert!((s.market().rel_level() - 0.02).abs() < 1e-15);
        let lam = s.intensity_at(1.0);
        assert!((lam[1] - 0.002).abs() < 1e-15);
        assert!((lam[2] - 0.002).abs() < 1e-15);

        // E_2(s+) = 100 with beta = 1000, dt = 0.01
        let mut c2 = c;
        c2.beta = 1000.0;
        let k2 = ParamSet::proposed(c2).unwrap().kernel();
        s = IntensityState::new(&k2, 0.0, state("99.985", "100.015"));
        s.acc[1][0] = 100.0;
        let lam = s.intensity_at(0.01);
        let expected = 0.002 + 100.0 * (-10.0f64).exp();
        assert!((lam[1] - expected).abs() < 1e-15);
        assert!((lam[1] - 0.006540).abs() < 1e-6);
    }

    #[test]
    fn widening_update_uses_provision_alphas() {
        let ps = ParamSet::proposed(row1()).unwrap();
        let k = ps.kernel();
        let mut s = IntensityState::new(&k, 0.0, state("100.00", "100.01"));
        s.on_event(1.0, EventKind::AskUp, 1, tick()).unwrap();
        assert_eq!(s.excitation(), [4.0, 11.0, 7.0, 0.0]);
        s.on_event(1.0, EventKind::BidDown, 1, tick()).unwrap();
        assert_eq!(s.excitation(), [4.0, 18.0, 18.0, 4.0]);
    }

    #[test]
    fn narrowing_resets_to_xi_ell() {
        let mut c = row1();
        c.xi = 50.0;
        let k = ParamSet::proposed(c).unwrap().kernel();
        // L = 3 at p = 100; narrowing by 1 leaves L = 2, ell = 0.02
        let mut s = IntensityState::new(&k, 0.0, state("99.98", "100.02"));
        s.on_event(0.5, EventKind::AskUp, 1, tick()).unwrap();
        s.on_event(0.6, EventKind::AskDown, 2, tick()).unwrap();
        let ell = s.market().rel_level();
        assert_eq!(s.market().level(), 2);
        assert_eq!(s.excitation()[1], 50.0 * ell);
        assert_eq!(s.excitation()[2], 50.0 * ell);
        let lam = s.intensity_at(0.6);
        assert!((lam[1] - (0.1 * ell + 50.0 * ell)).abs() < 1e-12);
        assert!((ell - 0.02).abs() < 1e-4);

        // narrowing to the minimum silences both narrowing processes
        s.on_event(0.7, EventKind::BidUp, 2, tick()).unwrap();
        assert_eq!(s.market().level(), 0);
        let lam = s.intensity_at(0.7);
        assert_eq!((lam[1], lam[2]), (0.0, 0.0));
    }

    #[test]
    fn compensator_examples() {
        let ps = ParamSet::proposed(row1()).unwrap();
        let k = ps.kernel();
        let s = IntensityState::new(&k, 0.0, state("100.00", "100.01"));
        let c = s.compensator(10.0);
        assert!((c[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.compensator(0.0), [0.0; 4]);

        let mut c2 = row1();
        c2.beta = 1000.0;
        c2.mu = 0.5;
        let k2 = ParamSet::proposed(c2).unwrap().kernel();
        let mut s = IntensityState::new(&k2, 0.0, state("100.00", "100.01"));
        s.acc[0][0] = 100.0;
        let c = s.compensator(0.01);
        assert!((c[0] - (0.005 + 100.0 * (1.0 - (-10.0f64).exp()) / 1000.0)).abs() < 1e-15);
        assert!((c[0] - 0.1049955).abs() < 1e-7);
    }

    #[test]
    fn constant_base_indicator_rules() {
        let k = ParamSet::with_core(ModelVariant::ConstantBase, row1()).unwrap().kernel();
        let mut s = IntensityState::new(&k, 0.0, state("99.99", "100.01"));
        assert_eq!(s.intensity_at(0.0)[1], 0.1);
        s.on_event(1.0, EventKind::AskUp, 2, tick()).unwrap();
        let before = s.excitation()[1];
        s.on_event(1.0, EventKind::AskDown, 1, tick()).unwrap();
        // ell > 0 afterwards: plain addition of xi
        assert!((s.excitation()[1] - (before + 2.7)).abs() < 1e-12);
        s.on_event(1.0, EventKind::AskDown, 2, tick()).unwrap();
        assert_eq!(s.market().level(), 0);
        assert_eq!(s.intensity_at(1.0)[1], 0.0);
    }

    #[test]
    fn column_and_row_betas_route_to_slots() {
        let c = row1();
        let mut ps = ParamSet::embed(c, ModelVariant::ExtendedIV).unwrap();
        let mut v = ps.values().to_vec();
        v[7..11].copy_from_slice(&[10.0, 20.0, 30.0, 40.0]);
        ps = ps.with_values(v).unwrap();
        let k = ps.kernel();
        let mut s = IntensityState::new(&k, 0.0, state("100.00", "100.01"));
        s.on_event(1.0, EventKind::BidDown, 1, tick()).unwrap();
        // source BidDown decays at beta_4 for every target
        let lam = s.intensity_at(1.1);
        assert!((lam[0] - 0.08).abs() < 1e-15);
        assert!((lam[3] - (0.08 + 4.0 * (-4.0f64).exp())).abs() < 1e-12);

        let mut ps5 = ParamSet::embed(c, ModelVariant::ExtendedV).unwrap();
        let mut v = ps5.values().to_vec();
        v[7..11].copy_from_slice(&[10.0, 20.0, 30.0, 40.0]);
        ps5 = ps5.with_values(v).unwrap();
        let k5 = ps5.kernel();
        let mut s = IntensityState::new(&k5, 0.0, state("100.00", "100.01"));
        s.on_event(1.0, EventKind::AskUp, 1, tick()).unwrap();
        let lam = s.intensity_at(1.1);
        // target A^d decays at beta_2, B^u at beta_3
        let ell = s.market().rel_level();
        assert!((lam[1] - (0.1 * ell + 11.0 * (-2.0f64).exp())).abs() < 1e-12);
        assert!((lam[2] - (0.1 * ell + 7.0 * (-3.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn basic_hawkes_matrix_orientation() {
        let mut v = vec![0.0; 18];
        v[0] = 0.1;
        v[17] = 10.0;
        // alpha_21: target A^d excited by source A^u
        v[1 + 4] = 3.0;
        let ps = ParamSet::new(ModelVariant::BasicHawkes, v).unwrap();
        let k = ps.kernel();
        let mut s = IntensityState::new(&k, 0.0, state("100.00", "100.01"));
        s.on_event(1.0, EventKind::AskUp, 1, tick()).unwrap();
        assert_eq!(s.excitation(), [0.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn replay_empty_stream() {
        let ps = ParamSet::proposed(row1()).unwrap();
        let init = state("99.99", "100.01");
        let stream = EventStream::new(0.0, 100.0, tick(), init, vec![]).unwrap();
        let r = replay(&stream, &ps).unwrap();
        let ell = init.rel_level();
        let tot = r.total_compensator();
        assert!((tot[0] - 8.0).abs() < 1e-12);
        assert!((tot[1] - 0.1 * ell * 100.0).abs() < 1e-12);
        assert_eq!(tot[0], tot[3]);
        assert_eq!(tot[1], tot[2]);
    }
}
