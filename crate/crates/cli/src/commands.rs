use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use rauq::analysis::{self, ContrastHead, HeadMode};
use rauq::method::parse_methods;
use rauq::synth::{generate, SynthConfig};
use rauq::trace::{read_traces, write_traces, ATTN_UNDEFINED};
use rauq::{evaluate, prr, GenerationTrace, LayerAgg, LayerPolicy, Method, RauqConfig, Recurrence, ScoreRecord, TokenAgg, TraceFileHeader};

use crate::args::{AblateArgs, AnalyzeArgs, AnalyzeMode, EvalArgs, HeadModeArg, ScoreArgs, SynthArgs};
use crate::io::{csv_writer, fmt_f64, load_traces, read_quality, read_scores, sink};
use crate::{EXIT_FINDINGS, EXIT_OK};

const MAX_DIAGNOSTICS: usize = 10;

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot start worker pool")
}

pub fn validate(path: &Path, stdout: &mut dyn Write) -> Result<i32> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let reader = match read_traces(file) {
        Ok(r) => r,
        Err(e) => {
            writeln!(stdout, "invalid n=0 valid=0 invalid=1")?;
            writeln!(stdout, "{e}")?;
            return Ok(EXIT_FINDINGS);
        }
    };
    let (mut valid, mut invalid) = (0usize, 0usize);
    let mut diagnostics = Vec::new();
    for record in reader {
        match record {
            Ok(_) => valid += 1,
            Err(e) => {
                invalid += 1;
                if diagnostics.len() < MAX_DIAGNOSTICS {
                    diagnostics.push(e.to_string());
                }
            }
        }
    }
    if invalid == 0 {
        writeln!(stdout, "ok n={valid}")?;
        return Ok(EXIT_OK);
    }
    writeln!(stdout, "invalid n={} valid={valid} invalid={invalid}", valid + invalid)?;
    for d in diagnostics {
        writeln!(stdout, "{d}")?;
    }
    Ok(EXIT_FINDINGS)
}

fn score_all(traces: &[GenerationTrace], methods: &[Method], cfg: &RauqConfig) -> Result<Vec<Vec<f64>>> {
    traces
        .par_iter()
        .map(|t| {
            methods
                .iter()
                .map(|m| m.score(t, cfg).with_context(|| format!("scoring trace {} with {m}", t.id)))
                .collect()
        })
        .collect()
}

pub fn score(a: &ScoreArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = a.config.to_config()?;
    let methods = parse_methods(&a.methods)?;
    let pool = pool(a.jobs)?;
    let traces = load_traces(&a.traces)?;
    let scores = pool.install(|| score_all(&traces, &methods, &cfg))?;

    let mut w = csv_writer(sink(a.out.as_deref(), stdout)?);
    w.write_record(["trace_id", "method", "uncertainty"])?;
    for (t, row) in traces.iter().zip(&scores) {
        for (m, u) in methods.iter().zip(row) {
            w.write_record([t.id.as_str(), m.name(), &fmt_f64(*u)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Prr,
    RocAuc,
}

fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    let metrics = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.replace('-', "_").as_str() {
            "prr" => Ok(Metric::Prr),
            "roc_auc" => Ok(Metric::RocAuc),
            _ => Err(anyhow!("unknown metric `{s}`, expected prr or roc_auc")),
        })
        .collect::<Result<Vec<_>>>()?;
    if metrics.is_empty() {
        bail!("at least one metric is required");
    }
    Ok(metrics)
}

fn curves_path(a: &EvalArgs) -> Option<PathBuf> {
    a.curves.clone().or_else(|| {
        a.out.as_ref().map(|out| {
            let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.with_file_name(format!("{stem}.curves.csv"))
        })
    })
}

pub fn eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    if !a.threshold.is_finite() {
        bail!("--threshold must be finite");
    }
    let scores = read_scores(&a.scores)?;
    let quality = read_quality(&a.quality)?;

    let mut order: Vec<String> = Vec::new();
    let mut by_method: HashMap<String, Vec<ScoreRecord>> = HashMap::new();
    for row in scores {
        let q = *quality
            .get(&row.trace_id)
            .ok_or_else(|| anyhow!("no quality for trace_id {}", row.trace_id))?;
        if !by_method.contains_key(&row.method) {
            order.push(row.method.clone());
        }
        by_method
            .entry(row.method.clone())
            .or_default()
            .push(ScoreRecord::new(row.trace_id, row.method, row.uncertainty, q));
    }

    let wants_roc = metrics.contains(&Metric::RocAuc);
    let mut header = vec!["method".to_string(), "n".to_string()];
    header.extend(metrics.iter().map(|m| match m {
        Metric::Prr => "prr".to_string(),
        Metric::RocAuc => "roc_auc".to_string(),
    }));

    let mut reports = Vec::with_capacity(order.len());
    for method in &order {
        let records = &by_method[method];
        let report = evaluate(records, wants_roc.then_some(a.threshold)).with_context(|| format!("method {method}"))?;
        reports.push((method, report));
    }

    let mut w = csv_writer(sink(a.out.as_deref(), stdout)?);
    w.write_record(&header)?;
    for (method, report) in &reports {
        let mut row = vec![method.to_string(), report.n.to_string()];
        for m in &metrics {
            row.push(match m {
                Metric::Prr => fmt_f64(report.prr),
                Metric::RocAuc => fmt_f64(report.roc_auc.expect("requested")),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    if let Some(path) = curves_path(a) {
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut c = csv_writer(file);
        c.write_record(["method", "rejection_fraction", "mean_quality"])?;
        for (method, report) in &reports {
            for p in &report.curve {
                c.write_record([method.as_str(), &fmt_f64(p.rejection_fraction), &fmt_f64(p.mean_quality)])?;
            }
        }
        c.flush()?;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr<Err = rauq::Error>>(list: &str) -> Result<Vec<T>> {
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(anyhow::Error::from))
        .collect::<Result<Vec<T>>>()?;
    if values.is_empty() {
        bail!("empty grid");
    }
    Ok(values)
}

fn parse_alphas(list: &str) -> Result<Vec<f64>> {
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v: f64 = s.parse().map_err(|_| anyhow!("`{s}` is not a number"))?;
            if !(0.0..=1.0).contains(&v) {
                bail!("alpha {v} is outside [0, 1]");
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("empty alpha grid");
    }
    Ok(values)
}

fn qualities(traces: &[GenerationTrace], overrides: Option<&HashMap<String, f64>>) -> Result<Vec<f64>> {
    traces
        .iter()
        .map(|t| {
            overrides
                .and_then(|m| m.get(&t.id).copied())
                .or(t.quality)
                .ok_or_else(|| anyhow!("no quality for trace_id {}", t.id))
        })
        .collect()
}

pub fn ablate(a: &AblateArgs, stdout: &mut dyn Write) -> Result<()> {
    let alphas = parse_alphas(&a.alpha)?;
    let token_aggs = parse_list::<TokenAgg>(&a.token_agg)?;
    let layer_aggs = parse_list::<LayerAgg>(&a.layer_agg)?;
    let recurrences = parse_list::<Recurrence>(&a.recurrence)?;
    let layer_policy: LayerPolicy = a.layers.parse()?;
    let base = RauqConfig {
        layer_policy,
        log_floor: a.log_floor,
        ..RauqConfig::default()
    };
    base.validate()?;
    let pool = pool(a.jobs)?;

    let traces = load_traces(&a.traces)?;
    let overrides = a.quality.as_deref().map(read_quality).transpose()?;
    let quality = qualities(&traces, overrides.as_ref())?;

    let mut w = csv_writer(sink(a.out.as_deref(), stdout)?);
    w.write_record(["alpha", "token_agg", "layer_agg", "recurrence", "prr"])?;
    for &alpha in &alphas {
        for &token_agg in &token_aggs {
            for &layer_agg in &layer_aggs {
                for &recurrence in &recurrences {
                    let cfg = RauqConfig {
                        alpha,
                        token_agg,
                        layer_agg,
                        recurrence,
                        ..base.clone()
                    };
                    let scores = pool.install(|| score_all(&traces, &[Method::Rauq], &cfg))?;
                    let records: Vec<ScoreRecord> = traces
                        .iter()
                        .zip(&scores)
                        .zip(&quality)
                        .map(|((t, s), &q)| ScoreRecord::new(t.id.clone(), "rauq", s[0], q))
                        .collect();
                    let value = prr(&records)?;
                    w.write_record([
                        fmt_f64(alpha),
                        token_agg.to_string(),
                        layer_agg.to_string(),
                        recurrence.to_string(),
                        fmt_f64(value),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn analysis_layers(traces: &[GenerationTrace], layer: Option<usize>) -> Result<Vec<usize>> {
    let num_layers = traces.first().map_or(0, GenerationTrace::num_layers);
    if let Some(t) = traces.iter().find(|t| t.num_layers() != num_layers) {
        bail!("trace {} has {} layers, expected {num_layers}", t.id, t.num_layers());
    }
    match layer {
        Some(l) if l >= num_layers && !traces.is_empty() => {
            bail!("layer {l} out of bounds for a model with {num_layers} layers")
        }
        Some(l) => Ok(vec![l]),
        None => Ok((0..num_layers).collect()),
    }
}

pub fn analyze(a: &AnalyzeArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    if !(a.lo.is_finite() && a.hi.is_finite()) {
        bail!("--lo and --hi must be finite");
    }
    let traces = load_traces(&a.traces)?;
    let layers = analysis_layers(&traces, a.layer)?;
    let mut w = csv_writer(sink(a.out.as_deref(), stdout)?);
    match a.mode {
        AnalyzeMode::HeadMeans => {
            w.write_record(["trace_id", "layer", "head", "mean", "token_count"])?;
            for t in &traces {
                if t.len() < 2 {
                    writeln!(stderr, "skipping trace {}: fewer than two tokens", t.id)?;
                    continue;
                }
                for &l in &layers {
                    let stats = analysis::head_means(t, l)?;
                    for (h, m) in stats.means.iter().enumerate() {
                        w.write_record([
                            t.id.clone(),
                            l.to_string(),
                            h.to_string(),
                            fmt_f64(*m),
                            stats.token_count.to_string(),
                        ])?;
                    }
                }
            }
        }
        AnalyzeMode::Contrast => {
            let mode = match a.head_mode {
                HeadModeArg::Selected => HeadMode::Selected,
                HeadModeArg::Pooled => HeadMode::Pooled,
                HeadModeArg::PerHead => HeadMode::PerHead,
            };
            w.write_record(["layer", "head", "mean_correct", "mean_incorrect", "diff"])?;
            for &l in &layers {
                for c in analysis::group_contrast(&traces, l, mode, a.lo, a.hi)? {
                    let head = match c.head {
                        ContrastHead::Selected => "selected".to_string(),
                        ContrastHead::AllHeads => "all".to_string(),
                        ContrastHead::Head(h) => h.to_string(),
                    };
                    w.write_record([
                        l.to_string(),
                        head,
                        fmt_f64(c.mean_correct),
                        fmt_f64(c.mean_incorrect),
                        fmt_f64(c.diff),
                    ])?;
                }
            }
        }
        AnalyzeMode::Kth => {
            w.write_record(["layer", "k", "diff"])?;
            for &l in &layers {
                let diffs = analysis::kth_preceding_contrast(&traces, l, a.k_max, a.lo, a.hi)?;
                for (k, d) in (1..).zip(diffs) {
                    w.write_record([l.to_string(), k.to_string(), fmt_f64(d)])?;
                }
            }
        }
        AnalyzeMode::Pairs => {
            w.write_record(["trace_id", "layer", "quality", "head", "mean_attention"])?;
            for &l in &layers {
                for p in analysis::quality_attention_pairs(&traces, l)? {
                    w.write_record([
                        p.trace_id,
                        l.to_string(),
                        fmt_f64(p.quality),
                        p.head.to_string(),
                        fmt_f64(p.mean_attention),
                    ])?;
                }
            }
        }
        AnalyzeMode::Dump => {
            w.write_record(["trace_id", "layer", "head", "token", "k", "value"])?;
            let selected: Vec<&GenerationTrace> = match &a.trace_id {
                Some(id) => {
                    let t = traces
                        .iter()
                        .find(|t| &t.id == id)
                        .ok_or_else(|| anyhow!("no trace with id {id}"))?;
                    vec![t]
                }
                None => traces.iter().collect(),
            };
            for t in selected {
                for &l in &layers {
                    for h in 0..t.num_heads() {
                        for i in 0..t.len() {
                            for k in 1..=t.k_window() {
                                let v = t.attn.get(l, h, i, k);
                                if v == ATTN_UNDEFINED {
                                    continue;
                                }
                                w.write_record([
                                    t.id.clone(),
                                    l.to_string(),
                                    h.to_string(),
                                    i.to_string(),
                                    k.to_string(),
                                    fmt_f64(f64::from(v)),
                                ])?;
                            }
                        }
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn synth(a: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    if a.n < 2 {
        bail!("--n must be at least 2");
    }
    if !(0.0..=1.0).contains(&a.signal) {
        bail!("--signal must be in [0, 1]");
    }
    let set = generate(&SynthConfig::new(a.n, a.seed, a.signal));
    let heads: Vec<String> = set.designated_heads.iter().map(usize::to_string).collect();
    let header = TraceFileHeader::new(
        "synthetic",
        format!(
            "n={} seed={} signal={} designated_heads={}",
            a.n,
            a.seed,
            a.signal,
            heads.join(",")
        ),
    );
    let out = sink(a.out.as_deref(), stdout)?;
    write_traces(&header, &set.traces, out)?;
    Ok(())
}
