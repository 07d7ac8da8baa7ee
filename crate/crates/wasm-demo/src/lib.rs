//! Browser demo for the `rauq` scorer.
//!
//! Three operations, each over a synthetic trace set regenerated from
//! `(n, seed, signal)`:
//!
//! * [`explain`] — per-token probabilities, attention and recurrent
//!   confidences of one trace at a chosen α;
//! * [`alpha_sweep`] — PRR of RAUQ across α, next to MSP and perplexity;
//! * [`rejection_curves`] — mean quality of the retained traces as the most
//!   uncertain ones are rejected, for RAUQ, MSP and the oracle.
//!
//! The functions are plain Rust and return serializable structs; on wasm32
//! they are exported through `wasm-bindgen` as JSON strings.

use rauq::synth::{generate, SynthConfig, SyntheticSet};
use rauq::{
    msp_score, perplexity_score, prr, rauq_breakdown, rauq_score, rejection_curve, GenerationTrace, RauqConfig,
    RejectionOrder, ScoreRecord,
};
use serde::Serialize;

/// Largest trace set the page may request; keeps every operation interactive.
pub const MAX_TRACES: usize = 2000;
/// α step of [`alpha_sweep`].
pub const SWEEP_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenView {
    pub token: String,
    pub prob: f64,
    /// Attention of the selected head to the previous token; absent for the
    /// first token.
    pub attention: Option<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerView {
    pub layer: usize,
    pub head: usize,
    pub designated_head: usize,
    pub head_means: Vec<f64>,
    pub tokens: Vec<TokenView>,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceView {
    pub id: String,
    pub quality: f64,
    pub alpha: f64,
    pub uncertainty: f64,
    pub perplexity: f64,
    pub layers: Vec<LayerView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub alphas: Vec<f64>,
    pub rauq: Vec<f64>,
    pub msp: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub method: String,
    pub prr: Option<f64>,
    pub fractions: Vec<f64>,
    pub mean_quality: Vec<f64>,
}

fn synth_set(n: usize, seed: u64, signal: f64) -> Result<SyntheticSet, String> {
    if !(2..=MAX_TRACES).contains(&n) {
        return Err(format!("n must be between 2 and {MAX_TRACES}"));
    }
    if !(0.0..=1.0).contains(&signal) {
        return Err("signal must be in [0, 1]".into());
    }
    Ok(generate(&SynthConfig::new(n, seed, signal)))
}

fn config(alpha: f64) -> Result<RauqConfig, String> {
    let cfg = RauqConfig::default().with_alpha(alpha);
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn records(traces: &[GenerationTrace], score: impl Fn(&GenerationTrace) -> rauq::Result<f64>) -> Result<Vec<ScoreRecord>, String> {
    traces
        .iter()
        .map(|t| {
            let u = score(t).map_err(|e| e.to_string())?;
            Ok(ScoreRecord::new(t.id.clone(), "", u, t.quality.unwrap_or(0.0)))
        })
        .collect()
}

fn prr_of(records: &[ScoreRecord]) -> Result<f64, String> {
    prr(records).map_err(|e| e.to_string())
}

pub fn explain(n: usize, seed: u64, signal: f64, index: usize, alpha: f64) -> Result<TraceView, String> {
    let set = synth_set(n, seed, signal)?;
    let cfg = config(alpha)?;
    let trace = set.traces.get(index).ok_or_else(|| format!("index must be below {n}"))?;
    let b = rauq_breakdown(trace, &cfg).map_err(|e| e.to_string())?;
    let layers = b
        .selection
        .layers
        .iter()
        .zip(&b.scores.confidences)
        .zip(&b.scores.uncertainties)
        .map(|((lh, conf), &uncertainty)| LayerView {
            layer: lh.layer,
            head: lh.head,
            designated_head: set.designated_heads[lh.layer],
            head_means: lh.head_means.clone(),
            tokens: trace
                .tokens
                .iter()
                .zip(&trace.probs)
                .zip(conf)
                .enumerate()
                .map(|(i, ((token, &p), &c))| TokenView {
                    token: token.clone(),
                    prob: f64::from(p),
                    attention: (i > 0).then(|| f64::from(trace.attn.get(lh.layer, lh.head, i, 1))),
                    confidence: c,
                })
                .collect(),
            uncertainty,
        })
        .collect();
    Ok(TraceView {
        id: trace.id.clone(),
        quality: trace.quality.unwrap_or(f64::NAN),
        alpha,
        uncertainty: b.uncertainty,
        perplexity: perplexity_score(trace),
        layers,
    })
}

pub fn alpha_sweep(n: usize, seed: u64, signal: f64) -> Result<Sweep, String> {
    let set = synth_set(n, seed, signal)?;
    let alphas: Vec<f64> = (0..=SWEEP_STEPS).map(|s| s as f64 / SWEEP_STEPS as f64).collect();
    let rauq = alphas
        .iter()
        .map(|&a| {
            let cfg = config(a)?;
            prr_of(&records(&set.traces, |t| rauq_score(t, &cfg))?)
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(Sweep {
        alphas,
        rauq,
        msp: prr_of(&records(&set.traces, |t| Ok(msp_score(t)))?)?,
        perplexity: prr_of(&records(&set.traces, |t| Ok(perplexity_score(t)))?)?,
    })
}

fn curve(method: &str, records: &[ScoreRecord], order: RejectionOrder) -> Result<Curve, String> {
    let points = rejection_curve(records, order).map_err(|e| e.to_string())?;
    let prr = match order {
        RejectionOrder::ByUncertainty => Some(prr_of(records)?),
        _ => None,
    };
    Ok(Curve {
        method: method.into(),
        prr,
        fractions: points.iter().map(|p| p.rejection_fraction).collect(),
        mean_quality: points.iter().map(|p| p.mean_quality).collect(),
    })
}

pub fn rejection_curves(n: usize, seed: u64, signal: f64, alpha: f64) -> Result<Vec<Curve>, String> {
    let set = synth_set(n, seed, signal)?;
    let cfg = config(alpha)?;
    let rauq = records(&set.traces, |t| rauq_score(t, &cfg))?;
    let msp = records(&set.traces, |t| Ok(msp_score(t)))?;
    Ok(vec![
        curve("oracle", &rauq, RejectionOrder::Oracle)?,
        curve("rauq", &rauq, RejectionOrder::ByUncertainty)?,
        curve("msp", &msp, RejectionOrder::ByUncertainty)?,
    ])
}

#[cfg(target_arch = "wasm32")]
mod bindings {
    use serde::Serialize;
    use wasm_bindgen::prelude::*;

    fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
        let value = r.map_err(|e| JsError::new(&e))?;
        serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
    }

    #[wasm_bindgen]
    pub fn explain(n: usize, seed: u32, signal: f64, index: usize, alpha: f64) -> Result<String, JsError> {
        to_json(super::explain(n, u64::from(seed), signal, index, alpha))
    }

    #[wasm_bindgen]
    pub fn alpha_sweep(n: usize, seed: u32, signal: f64) -> Result<String, JsError> {
        to_json(super::alpha_sweep(n, u64::from(seed), signal))
    }

    #[wasm_bindgen]
    pub fn rejection_curves(n: usize, seed: u32, signal: f64, alpha: f64) -> Result<String, JsError> {
        to_json(super::rejection_curves(n, u64::from(seed), signal, alpha))
    }
}
