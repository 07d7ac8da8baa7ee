//! Deterministic synthetic traces with a planted attention signal.
//!
//! Quality labels are bimodal: half the traces are "correct" with quality in
//! `[0.9, 1)`, the rest "incorrect" with quality in `[0, 0.1)`.
//!
//! Each layer has one designated head whose attention to the previous
//! generated token rises with the trace's quality label. With strength
//! `signal = s` the designated entry is `(1 - s)·noise + s·(base + slope·q)`,
//! so `s = 0` makes it indistinguishable from the noise heads. Probabilities
//! carry a weaker, noisier dependence on quality. All other entries (other
//! heads, attention into the prompt, offsets `k ≥ 2`) are pure noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trace::{AttentionWindow, GenerationTrace, ATTN_UNDEFINED};

const NOISE_LO: f64 = 0.02;
const NOISE_HI: f64 = 0.40;
const PLANTED_BASE: f64 = 0.45;
const PLANTED_SLOPE: f64 = 0.50;
const PLANTED_JITTER: f64 = 0.02;
const PROB_BASE: f64 = 0.80;
const PROB_SPAN: f64 = 0.10;
/// Fraction of the probability signal relative to the attention signal.
const PROB_COUPLING: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub signal: f64,
    pub layers: usize,
    pub heads: usize,
    pub k_window: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64, signal: f64) -> Self {
        SynthConfig {
            n,
            seed,
            signal,
            layers: 4,
            heads: 4,
            k_window: 2,
            min_len: 3,
            max_len: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    /// Designated head of every layer.
    pub designated_heads: Vec<usize>,
    pub traces: Vec<GenerationTrace>,
}

fn noise<R: Rng>(rng: &mut R) -> f64 {
    rng.gen_range(NOISE_LO..NOISE_HI)
}

pub fn generate(cfg: &SynthConfig) -> SyntheticSet {
    let signal = cfg.signal.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let designated_heads: Vec<usize> = (0..cfg.layers).map(|_| rng.gen_range(0..cfg.heads)).collect();
    let width = cfg.n.saturating_sub(1).to_string().len();

    let traces = (0..cfg.n)
        .map(|t| {
            let correct = rng.gen_bool(0.5);
            let quality: f64 = if correct { 0.9 + 0.1 * rng.gen::<f64>() } else { 0.1 * rng.gen::<f64>() };
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let prompt_len = rng.gen_range(2..=8);
            let prob_weight = PROB_COUPLING * signal;
            let probs: Vec<f32> = (0..len)
                .map(|_| {
                    let v: f64 = rng.gen();
                    let p = PROB_BASE + PROB_SPAN * (prob_weight * quality + (1.0 - prob_weight) * v);
                    p.min(1.0) as f32
                })
                .collect();
            let attn = AttentionWindow::from_fn(cfg.layers, cfg.heads, len, cfg.k_window, |l, h, i, k| {
                if i + prompt_len < k {
                    return ATTN_UNDEFINED;
                }
                let background = noise(&mut rng);
                if h == designated_heads[l] && k == 1 && i >= 1 {
                    let jitter = rng.gen_range(-PLANTED_JITTER..PLANTED_JITTER);
                    let planted = PLANTED_BASE + PLANTED_SLOPE * quality + jitter;
                    ((1.0 - signal) * background + signal * planted).clamp(0.0, 1.0) as f32
                } else {
                    background as f32
                }
            });
            GenerationTrace {
                id: format!("syn-{t:0width$}"),
                task: "synthetic".into(),
                prompt_len,
                tokens: (0..len).map(|i| format!("w{i}")).collect(),
                probs,
                attn,
                quality: Some(quality),
            }
        })
        .collect();

    SyntheticSet {
        designated_heads,
        traces,
    }
}

/// `n` traces with the default shape (4 layers, 4 heads, 3 to 12 tokens,
/// two attention offsets).
pub fn gen_synthetic(n: usize, seed: u64, signal: f64) -> Vec<GenerationTrace> {
    generate(&SynthConfig::new(n, seed, signal)).traces
}
