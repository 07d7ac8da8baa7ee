//! Attention diagnostics: per-head mean attention to the previous token,
//! correct-vs-incorrect group contrasts and k-th preceding token contrasts.

use crate::engine::{consecutive_mean, select_heads};
use crate::error::{Error, Result};
use crate::trace::{GenerationTrace, ATTN_UNDEFINED};

pub const DEFAULT_LO: f64 = 0.1;
pub const DEFAULT_HI: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadStats {
    pub layer: usize,
    pub means: Vec<f64>,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// Each trace's own uncertainty-aware head.
    Selected,
    /// Average over all heads of the layer.
    Pooled,
    /// One contrast per head index.
    PerHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastHead {
    Selected,
    AllHeads,
    Head(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupContrast {
    pub layer: usize,
    pub head: ContrastHead,
    pub mean_correct: f64,
    pub mean_incorrect: f64,
    pub diff: f64,
}

fn check_layer(trace: &GenerationTrace, layer: usize) -> Result<()> {
    if layer >= trace.num_layers() {
        return Err(Error::LayerBounds {
            layer,
            num_layers: trace.num_layers(),
        });
    }
    Ok(())
}

pub fn head_means(trace: &GenerationTrace, layer: usize) -> Result<HeadStats> {
    check_layer(trace, layer)?;
    if trace.len() < 2 {
        return Err(Error::Data(format!(
            "trace {} has {} token(s); at least two are needed",
            trace.id,
            trace.len()
        )));
    }
    let means = (0..trace.num_heads())
        .map(|h| consecutive_mean(trace, layer, h).expect("n >= 2"))
        .collect();
    Ok(HeadStats {
        layer,
        means,
        token_count: trace.len() - 1,
    })
}

/// Traces grouped by quality: `(incorrect, correct)` = `(q < lo, q > hi)`.
/// Traces with fewer than two tokens carry no consecutive attention and are
/// left out.
fn split_groups(
    traces: &[GenerationTrace],
    lo: f64,
    hi: f64,
) -> Result<(Vec<&GenerationTrace>, Vec<&GenerationTrace>)> {
    let mut incorrect = Vec::new();
    let mut correct = Vec::new();
    for t in traces {
        let q = t.quality.ok_or_else(|| Error::Data(format!("trace {} has no quality label", t.id)))?;
        if t.len() < 2 {
            continue;
        }
        if q < lo {
            incorrect.push(t);
        } else if q > hi {
            correct.push(t);
        }
    }
    if incorrect.is_empty() {
        return Err(Error::Contract(format!("no trace with quality below lo = {lo}")));
    }
    if correct.is_empty() {
        return Err(Error::Contract(format!("no trace with quality above hi = {hi}")));
    }
    Ok((incorrect, correct))
}

fn selected_head(trace: &GenerationTrace, layer: usize) -> Result<usize> {
    Ok(select_heads(trace, &[layer])?.layers[0].head)
}

fn group_mean(group: &[&GenerationTrace], value: impl Fn(&GenerationTrace) -> Result<f64>) -> Result<f64> {
    let mut sum = 0.0;
    for t in group {
        sum += value(t)?;
    }
    Ok(sum / group.len() as f64)
}

pub fn group_contrast(
    traces: &[GenerationTrace],
    layer: usize,
    head_mode: HeadMode,
    lo: f64,
    hi: f64,
) -> Result<Vec<GroupContrast>> {
    let (incorrect, correct) = split_groups(traces, lo, hi)?;
    for t in incorrect.iter().chain(&correct) {
        check_layer(t, layer)?;
    }
    let contrast = |head: ContrastHead, value: &dyn Fn(&GenerationTrace) -> Result<f64>| -> Result<GroupContrast> {
        let mean_correct = group_mean(&correct, value)?;
        let mean_incorrect = group_mean(&incorrect, value)?;
        Ok(GroupContrast {
            layer,
            head,
            mean_correct,
            mean_incorrect,
            diff: mean_correct - mean_incorrect,
        })
    };
    match head_mode {
        HeadMode::Selected => Ok(vec![contrast(ContrastHead::Selected, &|t| {
            Ok(head_means(t, layer)?.means[selected_head(t, layer)?])
        })?]),
        HeadMode::Pooled => Ok(vec![contrast(ContrastHead::AllHeads, &|t| {
            let m = head_means(t, layer)?.means;
            Ok(m.iter().sum::<f64>() / m.len() as f64)
        })?]),
        HeadMode::PerHead => {
            let heads = correct[0].num_heads();
            if let Some(t) = incorrect.iter().chain(&correct).find(|t| t.num_heads() != heads) {
                return Err(Error::Data(format!("trace {} has a different head count", t.id)));
            }
            (0..heads)
                .map(|h| contrast(ContrastHead::Head(h), &|t| Ok(head_means(t, layer)?.means[h])))
                .collect()
        }
    }
}

/// Mean attention of the selected head to the `k`-th preceding generated
/// token, over tokens that have one. `None` when the trace is too short.
fn kth_mean(trace: &GenerationTrace, layer: usize, head: usize, k: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in k..trace.len() {
        let a = trace.attn.get(layer, head, i, k);
        if a != ATTN_UNDEFINED {
            sum += f64::from(a);
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// `diff[k - 1]` is the correct-minus-incorrect group mean of the selected
/// head's attention to the `k`-th preceding token. Offsets that no trace of
/// a group can reach are `NaN`.
pub fn kth_preceding_contrast(
    traces: &[GenerationTrace],
    layer: usize,
    k_max: usize,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>> {
    if k_max == 0 {
        return Err(Error::Contract("k_max must be at least 1".into()));
    }
    if let Some(t) = traces.iter().find(|t| t.k_window() < k_max) {
        return Err(Error::Data(format!(
            "trace {} stores {} offsets, k_max = {k_max} requested",
            t.id,
            t.k_window()
        )));
    }
    let (incorrect, correct) = split_groups(traces, lo, hi)?;
    let with_heads = |group: &[&GenerationTrace]| -> Result<Vec<usize>> {
        group
            .iter()
            .map(|t| {
                check_layer(t, layer)?;
                selected_head(t, layer)
            })
            .collect()
    };
    let heads_incorrect = with_heads(&incorrect)?;
    let heads_correct = with_heads(&correct)?;
    let group_k = |group: &[&GenerationTrace], heads: &[usize], k: usize| -> f64 {
        let vals: Vec<f64> = group
            .iter()
            .zip(heads)
            .filter_map(|(t, &h)| kth_mean(t, layer, h, k))
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    Ok((1..=k_max)
        .map(|k| group_k(&correct, &heads_correct, k) - group_k(&incorrect, &heads_incorrect, k))
        .collect())
}

/// One `(trace, quality, selected-head mean)` row per trace, for relating
/// response quality to attention.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityAttention {
    pub trace_id: String,
    pub quality: f64,
    pub head: usize,
    pub mean_attention: f64,
}

pub fn quality_attention_pairs(traces: &[GenerationTrace], layer: usize) -> Result<Vec<QualityAttention>> {
    traces
        .iter()
        .filter(|t| t.len() >= 2)
        .map(|t| {
            let quality = t
                .quality
                .ok_or_else(|| Error::Data(format!("trace {} has no quality label", t.id)))?;
            let stats = head_means(t, layer)?;
            let head = selected_head(t, layer)?;
            Ok(QualityAttention {
                trace_id: t.id.clone(),
                quality,
                head,
                mean_attention: stats.means[head],
            })
        })
        .collect()
}
