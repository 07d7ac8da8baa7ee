//! Single-pass unsupervised baselines: sequence probability, perplexity, and
//! the Attention Score ladder.

use std::fmt;
use std::str::FromStr;

use crate::engine::{aggregate_layers, mean_neg_log, select_heads, sum_log, RauqConfig, DEFAULT_LOG_FLOOR};
use crate::error::{Error, Result};
use crate::trace::{GenerationTrace, ATTN_UNDEFINED};

/// Negative log sequence probability. Rank-equivalent to `1 - MSP`.
pub fn msp_score(trace: &GenerationTrace) -> f64 {
    -sum_log(trace.probs.iter().map(|&p| f64::from(p)), DEFAULT_LOG_FLOOR)
}

/// Length-normalized negative log-likelihood.
pub fn perplexity_score(trace: &GenerationTrace) -> f64 {
    mean_neg_log(trace.probs.iter().map(|&p| f64::from(p)), DEFAULT_LOG_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionScoreVariant {
    /// Every consecutive-token entry, including the first token's attention to
    /// the last prompt token; averaged over all heads, then layers.
    Original,
    /// Only entries whose predecessor is a generated token.
    GenOnly,
    /// `GenOnly` restricted to each layer's selected head, then aggregated
    /// over layers with the configured layer aggregation.
    GenSelected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineId {
    Msp,
    Perplexity,
    AttentionScore(AttentionScoreVariant),
}

impl BaselineId {
    pub const ALL: [BaselineId; 5] = [
        BaselineId::Msp,
        BaselineId::Perplexity,
        BaselineId::AttentionScore(AttentionScoreVariant::Original),
        BaselineId::AttentionScore(AttentionScoreVariant::GenOnly),
        BaselineId::AttentionScore(AttentionScoreVariant::GenSelected),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineId::Msp => "msp",
            BaselineId::Perplexity => "perplexity",
            BaselineId::AttentionScore(AttentionScoreVariant::Original) => "attn_score_original",
            BaselineId::AttentionScore(AttentionScoreVariant::GenOnly) => "attn_score_gen_only",
            BaselineId::AttentionScore(AttentionScoreVariant::GenSelected) => "attn_score_gen_selected",
        }
    }

    pub fn score(self, trace: &GenerationTrace, cfg: &RauqConfig) -> Result<f64> {
        match self {
            BaselineId::Msp => Ok(msp_score(trace)),
            BaselineId::Perplexity => Ok(perplexity_score(trace)),
            BaselineId::AttentionScore(v) => attention_score(trace, v, cfg),
        }
    }
}

impl fmt::Display for BaselineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        BaselineId::ALL
            .into_iter()
            .find(|b| b.as_str() == norm)
            .ok_or_else(|| Error::Config {
                field: "methods",
                message: format!("unknown baseline `{s}`"),
            })
    }
}

/// Mean of `-log(max(a, floor))` over one head's consecutive-token entries,
/// starting at answer token `first`. `None` if no entry is defined.
fn head_neg_log(trace: &GenerationTrace, layer: usize, head: usize, first: usize, floor: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in first..trace.len() {
        let a = trace.attn.get(layer, head, i, 1);
        if a == ATTN_UNDEFINED {
            continue;
        }
        sum += f64::from(a).max(floor).ln();
        count += 1;
    }
    (count > 0).then(|| -sum / count as f64)
}

pub fn attention_score(trace: &GenerationTrace, variant: AttentionScoreVariant, cfg: &RauqConfig) -> Result<f64> {
    cfg.validate()?;
    let layers = cfg.layer_policy.resolve(trace.num_layers())?;
    let floor = cfg.log_floor;
    let no_entries = || {
        Error::Data(format!(
            "trace {}: no defined consecutive attention entries for {variant:?}",
            trace.id
        ))
    };
    match variant {
        AttentionScoreVariant::Original | AttentionScoreVariant::GenOnly => {
            let first = if variant == AttentionScoreVariant::Original { 0 } else { 1 };
            let mut layer_values = Vec::with_capacity(layers.len());
            for &l in &layers {
                let heads = (0..trace.num_heads())
                    .map(|h| head_neg_log(trace, l, h, first, floor))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(no_entries)?;
                layer_values.push(heads.iter().sum::<f64>() / heads.len() as f64);
            }
            Ok(layer_values.iter().sum::<f64>() / layer_values.len() as f64)
        }
        AttentionScoreVariant::GenSelected => {
            let selection = select_heads(trace, &layers)?;
            let layer_values = selection
                .layers
                .iter()
                .map(|lh| head_neg_log(trace, lh.layer, lh.head, 1, floor))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(no_entries)?;
            aggregate_layers(&layer_values, cfg.layer_agg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{rauq_score, LayerAgg, LayerPolicy};
    use crate::fixtures::{random_trace, worked_trace};
    use crate::trace::AttentionWindow;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn with_probs(probs: &[f32]) -> GenerationTrace {
        let n = probs.len();
        GenerationTrace {
            id: "p".into(),
            task: String::new(),
            prompt_len: 1,
            tokens: vec!["x".into(); n],
            probs: probs.to_vec(),
            attn: AttentionWindow::from_fn(1, 1, n, 1, |_, _, _, _| 0.5),
            quality: None,
        }
    }

    #[test]
    fn msp_examples() {
        assert_eq!(msp_score(&with_probs(&[1.0, 1.0])), 0.0);
        assert_abs_diff_eq!(msp_score(&with_probs(&[0.5])), std::f64::consts::LN_2, epsilon = 1e-12);
        // −(ln .9 + ln .8 + ln .7), f32 inputs
        assert_abs_diff_eq!(msp_score(&with_probs(&[0.9, 0.8, 0.7])), 0.685_179_6, epsilon = 1e-6);
    }

    #[test]
    fn perplexity_examples() {
        assert_eq!(perplexity_score(&with_probs(&[1.0])), 0.0);
        let t = with_probs(&[0.9, 0.8, 0.7]);
        assert_abs_diff_eq!(perplexity_score(&t), 0.228_393_2, epsilon = 1e-6);
        assert_abs_diff_eq!(perplexity_score(&t), msp_score(&t) / 3.0, epsilon = 1e-15);
        assert_eq!(rauq_score(&t, &RauqConfig::default().with_alpha(1.0)).unwrap(), perplexity_score(&t));
    }

    #[test]
    fn attention_one_scores_zero() {
        let mut t = worked_trace();
        t.attn = AttentionWindow::from_fn(1, 2, 3, 1, |_, _, _, _| 1.0);
        for v in [
            AttentionScoreVariant::Original,
            AttentionScoreVariant::GenOnly,
            AttentionScoreVariant::GenSelected,
        ] {
            assert_eq!(attention_score(&t, v, &RauqConfig::default()).unwrap(), 0.0);
        }
    }

    #[test]
    fn worked_trace_ladder() {
        let t = worked_trace();
        let cfg = RauqConfig::default();
        let ln = |x: f32| f64::from(x).ln();
        // brute force over the listed entries
        let sel = -(ln(0.2) + ln(0.9)) / 2.0;
        let gen = -(ln(0.5) + ln(0.4) + ln(0.2) + ln(0.9)) / 4.0;
        let orig = (-(ln(0.3) + ln(0.5) + ln(0.4)) / 3.0 - (ln(0.1) + ln(0.2) + ln(0.9)) / 3.0) / 2.0;
        let got_sel = attention_score(&t, AttentionScoreVariant::GenSelected, &cfg).unwrap();
        let got_gen = attention_score(&t, AttentionScoreVariant::GenOnly, &cfg).unwrap();
        let got_orig = attention_score(&t, AttentionScoreVariant::Original, &cfg).unwrap();
        assert_abs_diff_eq!(got_sel, sel, epsilon = 1e-12);
        assert_abs_diff_eq!(got_gen, gen, epsilon = 1e-12);
        assert_abs_diff_eq!(got_orig, orig, epsilon = 1e-12);
        assert_abs_diff_eq!(got_sel, 0.857_399, epsilon = 1e-6);
        assert_abs_diff_eq!(got_gen, 0.831_059, epsilon = 1e-6);
    }

    #[test]
    fn original_equals_gen_only_without_prompt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = RauqConfig {
            layer_policy: LayerPolicy::All,
            ..RauqConfig::default()
        };
        for n in 2..8 {
            let t = random_trace(&mut rng, "r", 3, 2, n, 2, 0);
            assert_eq!(
                attention_score(&t, AttentionScoreVariant::Original, &cfg).unwrap(),
                attention_score(&t, AttentionScoreVariant::GenOnly, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn single_head_selected_equals_gen_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = RauqConfig {
            layer_policy: LayerPolicy::All,
            layer_agg: LayerAgg::Mean,
            ..RauqConfig::default()
        };
        for n in 2..8 {
            let t = random_trace(&mut rng, "r", 3, 1, n, 1, 3);
            assert_eq!(
                attention_score(&t, AttentionScoreVariant::GenSelected, &cfg).unwrap(),
                attention_score(&t, AttentionScoreVariant::GenOnly, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn no_entries_is_a_data_error() {
        let mut t = crate::fixtures::single_token_trace(0.5, 1, 1);
        assert!(matches!(
            attention_score(&t, AttentionScoreVariant::GenOnly, &RauqConfig::default()),
            Err(Error::Data(_))
        ));
        t.prompt_len = 0;
        *t.attn.get_mut(0, 0, 0, 1) = ATTN_UNDEFINED;
        assert!(matches!(
            attention_score(&t, AttentionScoreVariant::Original, &RauqConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn baseline_names_round_trip() {
        for b in BaselineId::ALL {
            assert_eq!(b.as_str().parse::<BaselineId>().unwrap(), b);
        }
        assert!("rauq".parse::<BaselineId>().is_err());
    }
}
