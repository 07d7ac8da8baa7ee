//! The RAUQ scorer: uncertainty-aware head selection, recurrent token
//! confidences, and token/layer aggregation, with every ablation variant.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trace::{GenerationTrace, ATTN_UNDEFINED};

pub const DEFAULT_ALPHA: f64 = 0.2;
/// Recommended α for summarization-style tasks. Never applied automatically.
pub const SUMMARIZATION_ALPHA: f64 = 0.0;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

/// Which layers contribute to the sequence score.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerPolicy {
    /// Layers `[L/3, 2L/3)`, or the single layer `L/2` when that range is empty.
    #[default]
    MiddleThird,
    All,
    Explicit(Vec<usize>),
}

impl LayerPolicy {
    pub fn resolve(&self, num_layers: usize) -> Result<Vec<usize>> {
        match self {
            LayerPolicy::MiddleThird => {
                let (lo, hi) = (num_layers / 3, 2 * num_layers / 3);
                if lo < hi {
                    Ok((lo..hi).collect())
                } else {
                    Ok(vec![num_layers / 2])
                }
            }
            LayerPolicy::All => Ok((0..num_layers).collect()),
            LayerPolicy::Explicit(layers) => {
                if layers.is_empty() {
                    return Err(Error::Config {
                        field: "layers",
                        message: "explicit layer list is empty".into(),
                    });
                }
                if let Some(&layer) = layers.iter().find(|&&l| l >= num_layers) {
                    return Err(Error::LayerBounds { layer, num_layers });
                }
                Ok(layers.clone())
            }
        }
    }
}

impl fmt::Display for LayerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerPolicy::MiddleThird => f.write_str("middle-third"),
            LayerPolicy::All => f.write_str("all"),
            LayerPolicy::Explicit(layers) => {
                let parts: Vec<String> = layers.iter().map(usize::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for LayerPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "middle-third" | "middle_third" => Ok(LayerPolicy::MiddleThird),
            "all" => Ok(LayerPolicy::All),
            list => list
                .split(',')
                .map(|p| {
                    p.trim().parse::<usize>().map_err(|_| Error::Config {
                        field: "layers",
                        message: format!("`{p}` is not a layer index"),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(LayerPolicy::Explicit),
        }
    }
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident, $field:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let norm = s.trim().replace('-', "_");
                match norm.as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Config {
                        field: $field,
                        message: format!(
                            "unknown value `{s}`, expected one of: {}",
                            [$($text),+].join(", ")
                        ),
                    }),
                }
            }
        }
    };
}

named_enum!(
    /// How token confidences are reduced to a per-layer uncertainty.
    TokenAgg, "token_agg" {
        MeanLog => "mean_log",
        Mean => "mean",
        Median => "median",
        SumLog => "sum_log",
    }
);

named_enum!(
    /// How per-layer uncertainties are reduced to the sequence score.
    LayerAgg, "layer_agg" {
        Max => "max",
        Mean => "mean",
        Median => "median",
    }
);

named_enum!(
    /// Recurrence used for token confidences after the first token.
    ///
    /// With `p` the current token probability, `a` the selected head's
    /// attention to the previous token and `c` the previous confidence:
    ///
    /// | variant           | formula                     |
    /// |-------------------|-----------------------------|
    /// | `rauq`            | `α·p + (1−α)·a·c`           |
    /// | `no_attention`    | `α·p + (1−α)·c`             |
    /// | `no_recurrence`   | `α·p + (1−α)·a`             |
    /// | `prev_prob`       | `α·p + (1−α)·a·p_prev`      |
    /// | `prob_times_attn` | `p·a`                       |
    Recurrence, "recurrence" {
        Rauq => "rauq",
        NoAttention => "no_attention",
        NoRecurrence => "no_recurrence",
        PrevProb => "prev_prob",
        ProbTimesAttn => "prob_times_attn",
    }
);

impl Default for TokenAgg {
    fn default() -> Self {
        TokenAgg::MeanLog
    }
}

impl Default for LayerAgg {
    fn default() -> Self {
        LayerAgg::Max
    }
}

impl Default for Recurrence {
    fn default() -> Self {
        Recurrence::Rauq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RauqConfig {
    pub alpha: f64,
    pub layer_policy: LayerPolicy,
    pub token_agg: TokenAgg,
    pub layer_agg: LayerAgg,
    pub recurrence: Recurrence,
    pub log_floor: f64,
}

impl Default for RauqConfig {
    fn default() -> Self {
        RauqConfig {
            alpha: DEFAULT_ALPHA,
            layer_policy: LayerPolicy::MiddleThird,
            token_agg: TokenAgg::MeanLog,
            layer_agg: LayerAgg::Max,
            recurrence: Recurrence::Rauq,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

impl RauqConfig {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config {
                field: "alpha",
                message: format!("{} is outside [0, 1]", self.alpha),
            });
        }
        if !(self.log_floor > 0.0 && self.log_floor < 1.0) {
            return Err(Error::Config {
                field: "log_floor",
                message: format!("{} is outside (0, 1)", self.log_floor),
            });
        }
        if let LayerPolicy::Explicit(layers) = &self.layer_policy {
            if layers.is_empty() {
                return Err(Error::Config {
                    field: "layers",
                    message: "explicit layer list is empty".into(),
                });
            }
        }
        Ok(())
    }
}

/// The selected head of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerHead {
    pub layer: usize,
    pub head: usize,
    /// Mean consecutive attention of every head; empty for degenerate traces.
    pub head_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSelection {
    pub layers: Vec<LayerHead>,
    /// Set when the trace has fewer than two tokens and no consecutive
    /// attention exists; every layer then falls back to head 0.
    pub degenerate: bool,
}

impl HeadSelection {
    pub fn head_for(&self, layer: usize) -> Option<usize> {
        self.layers.iter().find(|lh| lh.layer == layer).map(|lh| lh.head)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScores {
    pub layers: Vec<usize>,
    /// `confidences[j][i]` is the confidence of token `i` under `layers[j]`.
    pub confidences: Vec<Vec<f64>>,
    pub uncertainties: Vec<f64>,
}

/// Everything computed on the way to a sequence score.
#[derive(Debug, Clone, PartialEq)]
pub struct RauqBreakdown {
    pub selection: HeadSelection,
    pub scores: LayerScores,
    pub uncertainty: f64,
}

/// Mean attention to the previous token over answer tokens `1..N`.
pub(crate) fn consecutive_mean(trace: &GenerationTrace, layer: usize, head: usize) -> Option<f64> {
    let n = trace.len();
    if n < 2 {
        return None;
    }
    let sum: f64 = (1..n).map(|i| f64::from(trace.attn.get(layer, head, i, 1))).sum();
    Some(sum / (n - 1) as f64)
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (h, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = h;
        }
    }
    best
}

/// Picks, per layer, the head with the largest mean attention to the
/// previous token. Ties go to the lowest head index.
pub fn select_heads(trace: &GenerationTrace, layers: &[usize]) -> Result<HeadSelection> {
    let num_layers = trace.num_layers();
    if let Some(&layer) = layers.iter().find(|&&l| l >= num_layers) {
        return Err(Error::LayerBounds { layer, num_layers });
    }
    let degenerate = trace.len() < 2;
    let layers = layers
        .iter()
        .map(|&layer| {
            if degenerate {
                return LayerHead {
                    layer,
                    head: 0,
                    head_means: Vec::new(),
                };
            }
            let head_means: Vec<f64> = (0..trace.num_heads())
                .map(|h| consecutive_mean(trace, layer, h).expect("n >= 2"))
                .collect();
            LayerHead {
                layer,
                head: argmax_lowest(&head_means),
                head_means,
            }
        })
        .collect();
    Ok(HeadSelection { layers, degenerate })
}

/// Recurrent token confidences for every layer of `selection`.
pub fn token_confidences(
    trace: &GenerationTrace,
    selection: &HeadSelection,
    cfg: &RauqConfig,
) -> Result<Vec<Vec<f64>>> {
    selection
        .layers
        .iter()
        .map(|lh| layer_confidences(trace, lh.layer, lh.head, cfg.alpha, cfg.recurrence))
        .collect()
}

fn layer_confidences(
    trace: &GenerationTrace,
    layer: usize,
    head: usize,
    alpha: f64,
    recurrence: Recurrence,
) -> Result<Vec<f64>> {
    let n = trace.len();
    let probs = &trace.probs;
    let mut conf = Vec::with_capacity(n);
    conf.push(f64::from(probs[0]));
    for i in 1..n {
        let p = f64::from(probs[i]);
        let raw = trace.attn.get(layer, head, i, 1);
        if raw == ATTN_UNDEFINED {
            return Err(Error::Data(format!(
                "trace {}: undefined attention at layer {layer} head {head} token {i}",
                trace.id
            )));
        }
        let a = f64::from(raw);
        let prev = conf[i - 1];
        let c = match recurrence {
            Recurrence::Rauq => alpha * p + (1.0 - alpha) * a * prev,
            Recurrence::NoAttention => alpha * p + (1.0 - alpha) * prev,
            Recurrence::NoRecurrence => alpha * p + (1.0 - alpha) * a,
            Recurrence::PrevProb => alpha * p + (1.0 - alpha) * a * f64::from(probs[i - 1]),
            Recurrence::ProbTimesAttn => p * a,
        };
        conf.push(c);
    }
    Ok(conf)
}

/// `-(1/N) Σ log(max(x, floor))`. Shared with the perplexity baseline so that
/// the α = 1 identity holds bit for bit.
pub(crate) fn mean_neg_log(values: impl ExactSizeIterator<Item = f64>, floor: f64) -> f64 {
    let n = values.len() as f64;
    -sum_log(values, floor) / n
}

pub(crate) fn sum_log(values: impl Iterator<Item = f64>, floor: f64) -> f64 {
    values.map(|v| v.max(floor).ln()).sum()
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Reduces one layer's token confidences to an uncertainty (higher means
/// less confident).
pub fn aggregate_tokens(confidences: &[f64], agg: TokenAgg, log_floor: f64) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::Contract("cannot aggregate an empty confidence list".into()));
    }
    Ok(match agg {
        TokenAgg::MeanLog => mean_neg_log(confidences.iter().copied(), log_floor),
        TokenAgg::SumLog => -sum_log(confidences.iter().copied(), log_floor),
        TokenAgg::Mean => -mean(confidences),
        TokenAgg::Median => -median(confidences),
    })
}

/// Per-layer uncertainties for a set of per-layer confidence rows.
pub fn layer_uncertainty(confidences: &[Vec<f64>], cfg: &RauqConfig) -> Result<Vec<f64>> {
    confidences
        .iter()
        .map(|row| aggregate_tokens(row, cfg.token_agg, cfg.log_floor))
        .collect()
}

pub fn aggregate_layers(values: &[f64], agg: LayerAgg) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("cannot aggregate an empty layer set".into()));
    }
    Ok(match agg {
        LayerAgg::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        LayerAgg::Mean => mean(values),
        LayerAgg::Median => median(values),
    })
}

pub fn rauq_breakdown(trace: &GenerationTrace, cfg: &RauqConfig) -> Result<RauqBreakdown> {
    cfg.validate()?;
    let layers = cfg.layer_policy.resolve(trace.num_layers())?;
    let selection = select_heads(trace, &layers)?;
    let confidences = token_confidences(trace, &selection, cfg)?;
    let uncertainties = layer_uncertainty(&confidences, cfg)?;
    let uncertainty = aggregate_layers(&uncertainties, cfg.layer_agg)?;
    Ok(RauqBreakdown {
        selection,
        scores: LayerScores {
            layers,
            confidences,
            uncertainties,
        },
        uncertainty,
    })
}

/// Sequence-level uncertainty of one trace.
pub fn rauq_score(trace: &GenerationTrace, cfg: &RauqConfig) -> Result<f64> {
    rauq_breakdown(trace, cfg).map(|b| b.uncertainty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::worked_trace;
    use approx::assert_abs_diff_eq;

    #[test]
    fn worked_example_selects_head_one() {
        let t = worked_trace();
        let sel = select_heads(&t, &[0]).unwrap();
        assert!(!sel.degenerate);
        assert_eq!(sel.layers[0].head, 1);
        let m = &sel.layers[0].head_means;
        assert_abs_diff_eq!(m[0], 0.45, epsilon = 1e-7);
        assert_abs_diff_eq!(m[1], 0.55, epsilon = 1e-7);
    }

    #[test]
    fn identical_heads_pick_lowest_index() {
        let mut t = worked_trace();
        for i in 0..3 {
            let v = t.attn.get(0, 0, i, 1);
            *t.attn.get_mut(0, 1, i, 1) = v;
        }
        assert_eq!(select_heads(&t, &[0]).unwrap().layers[0].head, 0);
    }

    #[test]
    fn single_token_is_degenerate() {
        let t = crate::fixtures::single_token_trace(0.5, 3, 4);
        let sel = select_heads(&t, &[0, 1, 2]).unwrap();
        assert!(sel.degenerate);
        assert!(sel.layers.iter().all(|lh| lh.head == 0));
        let u = rauq_score(&t, &RauqConfig::default()).unwrap();
        assert_abs_diff_eq!(u, -(0.5f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn layer_out_of_range() {
        let t = worked_trace();
        assert!(matches!(
            select_heads(&t, &[1]),
            Err(Error::LayerBounds { layer: 1, num_layers: 1 })
        ));
    }

    #[test]
    fn worked_example_confidences() {
        let t = worked_trace();
        let sel = select_heads(&t, &[0]).unwrap();
        let cfg = RauqConfig::default();
        let c = &token_confidences(&t, &sel, &cfg).unwrap()[0];
        // f32 inputs: compare to the decimal values at f32 resolution
        assert_abs_diff_eq!(c[0], 0.9, epsilon = 1e-7);
        assert_abs_diff_eq!(c[1], 0.304, epsilon = 1e-7);
        assert_abs_diff_eq!(c[2], 0.35888, epsilon = 1e-7);
    }

    #[test]
    fn alpha_one_copies_probabilities() {
        let t = worked_trace();
        let sel = select_heads(&t, &[0]).unwrap();
        let cfg = RauqConfig::default().with_alpha(1.0);
        let c = &token_confidences(&t, &sel, &cfg).unwrap()[0];
        let p: Vec<f64> = t.probs.iter().map(|&p| f64::from(p)).collect();
        assert_eq!(c, &p);
    }

    #[test]
    fn alpha_zero_uses_attention_only() {
        let t = worked_trace();
        let sel = select_heads(&t, &[0]).unwrap();
        let cfg = RauqConfig::default().with_alpha(0.0);
        let c = &token_confidences(&t, &sel, &cfg).unwrap()[0];
        let a1 = f64::from(t.attn.get(0, 1, 1, 1));
        let a2 = f64::from(t.attn.get(0, 1, 2, 1));
        let p0 = f64::from(t.probs[0]);
        assert_eq!(c[1], a1 * p0);
        assert_eq!(c[2], a2 * a1 * p0);
    }

    #[test]
    fn recurrence_variants_on_worked_trace() {
        let t = worked_trace();
        let sel = select_heads(&t, &[0]).unwrap();
        let p: Vec<f64> = t.probs.iter().map(|&v| f64::from(v)).collect();
        let a = [f64::from(t.attn.get(0, 1, 1, 1)), f64::from(t.attn.get(0, 1, 2, 1))];
        let alpha = 0.2;
        let run = |r| {
            let cfg = RauqConfig {
                recurrence: r,
                ..RauqConfig::default()
            };
            token_confidences(&t, &sel, &cfg).unwrap().remove(0)
        };
        let na = run(Recurrence::NoAttention);
        assert_abs_diff_eq!(na[1], alpha * p[1] + (1.0 - alpha) * p[0], epsilon = 1e-15);
        assert_abs_diff_eq!(na[2], alpha * p[2] + (1.0 - alpha) * na[1], epsilon = 1e-15);
        let nr = run(Recurrence::NoRecurrence);
        assert_abs_diff_eq!(nr[2], alpha * p[2] + (1.0 - alpha) * a[1], epsilon = 1e-15);
        let pp = run(Recurrence::PrevProb);
        assert_abs_diff_eq!(pp[2], alpha * p[2] + (1.0 - alpha) * a[1] * p[1], epsilon = 1e-15);
        let pa = run(Recurrence::ProbTimesAttn);
        assert_abs_diff_eq!(pa[1], p[1] * a[0], epsilon = 1e-15);
        for c in [&na, &nr, &pp, &pa] {
            assert_eq!(c[0], p[0]);
        }
    }

    #[test]
    fn token_aggregations() {
        let c = [0.9, 0.304, 0.35888];
        let u = aggregate_tokens(&c, TokenAgg::MeanLog, DEFAULT_LOG_FLOOR).unwrap();
        assert_abs_diff_eq!(u, 0.773_618_433_814_660_2, epsilon = 1e-12);
        assert_eq!(aggregate_tokens(&[1.0, 1.0], TokenAgg::MeanLog, DEFAULT_LOG_FLOOR).unwrap(), 0.0);
        assert_eq!(aggregate_tokens(&[0.2, 0.9, 0.5], TokenAgg::Median, DEFAULT_LOG_FLOOR).unwrap(), -0.5);
        assert_abs_diff_eq!(
            aggregate_tokens(&[0.2, 0.9, 0.5, 0.1], TokenAgg::Median, DEFAULT_LOG_FLOOR).unwrap(),
            -0.35,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            aggregate_tokens(&c, TokenAgg::SumLog, DEFAULT_LOG_FLOOR).unwrap(),
            3.0 * u,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            aggregate_tokens(&c, TokenAgg::Mean, DEFAULT_LOG_FLOOR).unwrap(),
            -(0.9 + 0.304 + 0.35888) / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn floor_keeps_zero_confidence_finite() {
        let u = aggregate_tokens(&[0.0], TokenAgg::MeanLog, 1e-12).unwrap();
        assert_abs_diff_eq!(u, -(1e-12f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn empty_confidences_are_a_contract_violation() {
        assert!(matches!(
            aggregate_tokens(&[], TokenAgg::MeanLog, DEFAULT_LOG_FLOOR),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_layer_ignores_layer_agg() {
        let t = worked_trace();
        let base = rauq_score(&t, &RauqConfig::default()).unwrap();
        for agg in LayerAgg::ALL {
            let cfg = RauqConfig {
                layer_agg: *agg,
                ..RauqConfig::default()
            };
            assert_eq!(rauq_score(&t, &cfg).unwrap(), base);
        }
    }

    #[test]
    fn layer_aggregations() {
        let v = [0.3, 0.9, 0.6, 0.1];
        assert_eq!(aggregate_layers(&v, LayerAgg::Max).unwrap(), 0.9);
        assert_abs_diff_eq!(aggregate_layers(&v, LayerAgg::Mean).unwrap(), 0.475, epsilon = 1e-15);
        assert_abs_diff_eq!(aggregate_layers(&v, LayerAgg::Median).unwrap(), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn middle_third_policy() {
        assert_eq!(LayerPolicy::MiddleThird.resolve(32).unwrap(), (10..21).collect::<Vec<_>>());
        assert_eq!(LayerPolicy::MiddleThird.resolve(4).unwrap(), vec![1]);
        assert_eq!(LayerPolicy::MiddleThird.resolve(1).unwrap(), vec![0]);
        assert_eq!(LayerPolicy::MiddleThird.resolve(2).unwrap(), vec![0]);
        assert_eq!(LayerPolicy::All.resolve(3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            LayerPolicy::Explicit(vec![0, 5]).resolve(4),
            Err(Error::LayerBounds { layer: 5, .. })
        ));
    }

    #[test]
    fn parse_names() {
        assert_eq!("mean-log".parse::<TokenAgg>().unwrap(), TokenAgg::MeanLog);
        assert_eq!("prob_times_attn".parse::<Recurrence>().unwrap(), Recurrence::ProbTimesAttn);
        assert_eq!("median".parse::<LayerAgg>().unwrap(), LayerAgg::Median);
        assert!("maxx".parse::<LayerAgg>().is_err());
        assert_eq!("1, 3".parse::<LayerPolicy>().unwrap(), LayerPolicy::Explicit(vec![1, 3]));
        assert_eq!("middle-third".parse::<LayerPolicy>().unwrap(), LayerPolicy::MiddleThird);
        assert!("1,x".parse::<LayerPolicy>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RauqConfig::default().with_alpha(1.5).validate().is_err());
        assert!(RauqConfig::default().with_alpha(-0.1).validate().is_err());
        let bad_floor = RauqConfig {
            log_floor: 0.0,
            ..RauqConfig::default()
        };
        assert!(bad_floor.validate().is_err());
        assert!(rauq_score(&worked_trace(), &RauqConfig::default().with_alpha(2.0)).is_err());
    }

    #[test]
    fn sentinel_in_answer_is_a_data_error() {
        let mut t = worked_trace();
        *t.attn.get_mut(0, 1, 2, 1) = ATTN_UNDEFINED;
        let sel = HeadSelection {
            layers: vec![LayerHead {
                layer: 0,
                head: 1,
                head_means: vec![],
            }],
            degenerate: false,
        };
        assert!(matches!(
            token_confidences(&t, &sel, &RauqConfig::default()),
            Err(Error::Data(_))
        ));
    }
}
