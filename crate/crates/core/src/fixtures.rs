//! Small hand-built traces shared by tests, the CLI tests and the demo.

use rand::Rng;

use crate::trace::{AttentionWindow, GenerationTrace, ATTN_UNDEFINED};

/// Three tokens, one layer, two heads, `k_window` 1, prompt of two tokens.
///
/// Probabilities are `(0.9, 0.8, 0.7)`. Consecutive attention inside the
/// answer is `(0.5, 0.4)` for head 0 and `(0.2, 0.9)` for head 1; the first
/// token attends `0.3` / `0.1` to the last prompt token.
pub fn worked_trace() -> GenerationTrace {
    let rows = [[0.3f32, 0.5, 0.4], [0.1, 0.2, 0.9]];
    GenerationTrace {
        id: "worked".into(),
        task: "qa".into(),
        prompt_len: 2,
        tokens: vec!["The".into(), " answer".into(), " is".into()],
        probs: vec![0.9, 0.8, 0.7],
        attn: AttentionWindow::from_fn(1, 2, 3, 1, |_, h, i, _| rows[h][i]),
        quality: None,
    }
}

pub fn single_token_trace(prob: f32, layers: usize, heads: usize) -> GenerationTrace {
    GenerationTrace {
        id: "single".into(),
        task: String::new(),
        prompt_len: 1,
        tokens: vec!["x".into()],
        probs: vec![prob],
        attn: AttentionWindow::from_fn(layers, heads, 1, 1, |_, _, _, _| 0.5),
        quality: None,
    }
}

/// Uniformly random valid trace. Probabilities and attention are drawn from
/// `(0, 1]` and `[0, 1]`; positions before the prompt get the sentinel.
pub fn random_trace<R: Rng>(
    rng: &mut R,
    id: impl Into<String>,
    layers: usize,
    heads: usize,
    len: usize,
    k_window: usize,
    prompt_len: usize,
) -> GenerationTrace {
    let probs = (0..len).map(|_| 1.0 - rng.gen::<f32>()).collect();
    let attn = AttentionWindow::from_fn(layers, heads, len, k_window, |_, _, i, k| {
        if i + prompt_len < k {
            ATTN_UNDEFINED
        } else {
            rng.gen::<f32>()
        }
    });
    GenerationTrace {
        id: id.into(),
        task: "random".into(),
        prompt_len,
        tokens: (0..len).map(|i| format!("t{i}")).collect(),
        probs,
        attn,
        quality: Some(rng.gen::<f64>()),
    }
}
