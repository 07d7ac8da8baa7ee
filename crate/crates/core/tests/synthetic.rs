use rauq::analysis::{group_contrast, head_means, kth_preceding_contrast, HeadMode, DEFAULT_HI, DEFAULT_LO};
use rauq::synth::{gen_synthetic, generate, SynthConfig};
use rauq::{prr, rauq_score, GenerationTrace, RauqConfig, ScoreRecord};

/// Two-sided 1% critical value of the standard normal; with hundreds of
/// traces per group the Welch statistic is effectively normal.
const Z_CRIT_1PCT: f64 = 2.5758;

fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (n, mean, var)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    (ma - mb) / (va / na + vb / nb).sqrt()
}

fn rauq_prr(traces: &[GenerationTrace]) -> f64 {
    let cfg = RauqConfig::default();
    let records: Vec<ScoreRecord> = traces
        .iter()
        .map(|t| ScoreRecord::new(t.id.clone(), "rauq", rauq_score(t, &cfg).unwrap(), t.quality.unwrap()))
        .collect();
    prr(&records).unwrap()
}

#[test]
fn zero_signal_has_no_attention_contrast() {
    let set = generate(&SynthConfig::new(500, 7, 0.0));
    for (layer, &head) in set.designated_heads.iter().enumerate() {
        let (mut correct, mut incorrect) = (Vec::new(), Vec::new());
        for t in &set.traces {
            let mean = head_means(t, layer).unwrap().means[head];
            if t.quality.unwrap() >= DEFAULT_HI {
                correct.push(mean);
            } else {
                incorrect.push(mean);
            }
        }
        assert!(correct.len() > 100 && incorrect.len() > 100);
        let t = welch_t(&correct, &incorrect);
        assert!(t.abs() < Z_CRIT_1PCT, "layer {layer}: t = {t}");
    }
}

#[test]
fn full_signal_gives_near_perfect_prr() {
    for seed in 0..10 {
        let p = rauq_prr(&gen_synthetic(100, seed, 1.0));
        assert!((p - 1.0).abs() <= 0.05, "seed {seed}: PRR {p}");
    }
}

#[test]
fn prr_grows_with_signal() {
    let weak = rauq_prr(&gen_synthetic(400, 5, 0.2));
    let strong = rauq_prr(&gen_synthetic(400, 5, 0.9));
    assert!(strong > weak, "{strong} vs {weak}");
}

#[test]
fn selected_head_contrast_exceeds_pooled() {
    let traces = gen_synthetic(500, 7, 0.9);
    for layer in 0..traces[0].num_layers() {
        let selected = group_contrast(&traces, layer, HeadMode::Selected, DEFAULT_LO, DEFAULT_HI).unwrap();
        let pooled = group_contrast(&traces, layer, HeadMode::Pooled, DEFAULT_LO, DEFAULT_HI).unwrap();
        assert!(selected[0].diff > 0.0);
        assert!(selected[0].diff > pooled[0].diff, "layer {layer}: {} vs {}", selected[0].diff, pooled[0].diff);
    }
}

#[test]
fn only_the_previous_token_carries_the_signal() {
    let traces = gen_synthetic(500, 7, 0.9);
    let diffs = kth_preceding_contrast(&traces, 1, 2, DEFAULT_LO, DEFAULT_HI).unwrap();
    assert!(diffs[0] > 0.2, "{diffs:?}");
    assert!(diffs[0] > 10.0 * diffs[1].abs(), "{diffs:?}");
}
