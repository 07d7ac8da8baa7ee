//! Generation traces and the `rauq-trace/1` NDJSON wire format.
//!
//! A trace file is UTF-8 NDJSON. The first line is a [`TraceFileHeader`];
//! every following non-blank line is one [`GenerationTrace`]. Files may be
//! gzip-compressed as a whole, which is detected from the magic bytes.
//!
//! Attention is stored as a window over the `k_window` preceding positions of
//! every generated token: `attn[l][h][i][k - 1]` is the weight from answer
//! token `i` (0-based) back to position `i - k`. Negative positions address
//! the prompt. Positions before the start of the prompt hold the sentinel
//! [`ATTN_UNDEFINED`].

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "rauq-trace/1";

/// Marker for attention entries that point before the first prompt token.
pub const ATTN_UNDEFINED: f32 = -1.0;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFileHeader {
    pub schema_version: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub notes: String,
}

impl TraceFileHeader {
    pub fn new(model_name: impl Into<String>, notes: impl Into<String>) -> Self {
        TraceFileHeader {
            schema_version: SCHEMA_VERSION.to_string(),
            model_name: model_name.into(),
            notes: notes.into(),
        }
    }
}

impl Default for TraceFileHeader {
    fn default() -> Self {
        TraceFileHeader::new("", "")
    }
}

/// Dense `[layers][heads][len][k_window]` attention window, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWindow {
    layers: usize,
    heads: usize,
    len: usize,
    k_window: usize,
    data: Vec<f32>,
}

impl AttentionWindow {
    /// Builds a window by evaluating `f(layer, head, token, k)` for every
    /// entry, with `k` running over `1..=k_window`.
    pub fn from_fn(
        layers: usize,
        heads: usize,
        len: usize,
        k_window: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(layers * heads * len * k_window);
        for l in 0..layers {
            for h in 0..heads {
                for i in 0..len {
                    for k in 1..=k_window {
                        data.push(f(l, h, i, k));
                    }
                }
            }
        }
        AttentionWindow {
            layers,
            heads,
            len,
            k_window,
            data,
        }
    }

    /// Flattens a nested `[L][H][N][K]` array, checking that it is rectangular.
    pub fn from_nested(nested: Vec<Vec<Vec<Vec<f32>>>>) -> Result<Self> {
        let layers = nested.len();
        let heads = nested.first().map_or(0, Vec::len);
        let len = nested.first().and_then(|l| l.first()).map_or(0, Vec::len);
        let k_window = nested
            .first()
            .and_then(|l| l.first())
            .and_then(|h| h.first())
            .map_or(0, Vec::len);
        let mut data = Vec::with_capacity(layers * heads * len * k_window);
        for (l, layer) in nested.into_iter().enumerate() {
            if layer.len() != heads {
                return Err(Error::validation(
                    "attn",
                    format!("layer {l} has {} heads, expected {heads}", layer.len()),
                ));
            }
            for (h, head) in layer.into_iter().enumerate() {
                if head.len() != len {
                    return Err(Error::validation(
                        "attn",
                        format!("layer {l} head {h} has {} rows, expected {len}", head.len()),
                    ));
                }
                for (i, row) in head.into_iter().enumerate() {
                    if row.len() != k_window {
                        return Err(Error::validation(
                            "attn",
                            format!(
                                "layer {l} head {h} token {i} has {} offsets, expected {k_window}",
                                row.len()
                            ),
                        ));
                    }
                    data.extend(row);
                }
            }
        }
        Ok(AttentionWindow {
            layers,
            heads,
            len,
            k_window,
            data,
        })
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f32>>>> {
        (0..self.layers)
            .map(|l| {
                (0..self.heads)
                    .map(|h| {
                        (0..self.len)
                            .map(|i| self.row(l, h, i).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn num_heads(&self) -> usize {
        self.heads
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn k_window(&self) -> usize {
        self.k_window
    }

    fn offset(&self, layer: usize, head: usize, token: usize) -> usize {
        ((layer * self.heads + head) * self.len + token) * self.k_window
    }

    /// The `k_window` offsets stored for one token.
    pub fn row(&self, layer: usize, head: usize, token: usize) -> &[f32] {
        let start = self.offset(layer, head, token);
        &self.data[start..start + self.k_window]
    }

    /// Attention from answer token `token` to the `k`-th preceding position.
    ///
    /// Panics if any index is out of range or `k` is zero.
    pub fn get(&self, layer: usize, head: usize, token: usize, k: usize) -> f32 {
        assert!(k >= 1 && k <= self.k_window, "offset {k} outside 1..={}", self.k_window);
        self.data[self.offset(layer, head, token) + k - 1]
    }

    pub fn get_mut(&mut self, layer: usize, head: usize, token: usize, k: usize) -> &mut f32 {
        assert!(k >= 1 && k <= self.k_window, "offset {k} outside 1..={}", self.k_window);
        let idx = self.offset(layer, head, token) + k - 1;
        &mut self.data[idx]
    }

    /// Attention to the immediately preceding position for every answer token.
    pub fn consecutive(&self, layer: usize, head: usize) -> impl Iterator<Item = f32> + '_ {
        (0..self.len).map(move |i| self.get(layer, head, i, 1))
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }
}

/// One generated sequence with its token probabilities and attention window.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub id: String,
    pub task: String,
    pub prompt_len: usize,
    pub tokens: Vec<String>,
    /// `probs[i]` is the model probability of the emitted token `i`.
    pub probs: Vec<f32>,
    pub attn: AttentionWindow,
    /// External quality score of the generation, if known.
    pub quality: Option<f64>,
}

impl GenerationTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.attn.num_layers()
    }

    pub fn num_heads(&self) -> usize {
        self.attn.num_heads()
    }

    pub fn k_window(&self) -> usize {
        self.attn.k_window()
    }

    /// Whether `attn[..][token][k - 1]` must hold the undefined sentinel.
    pub fn addresses_before_prompt(&self, token: usize, k: usize) -> bool {
        token + self.prompt_len < k
    }

    /// Checks every structural and range invariant of the trace.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::validation("tokens", "at least one generated token is required"));
        }
        if self.probs.len() != n {
            return Err(Error::validation(
                "probs",
                format!("length {} does not match {n} tokens", self.probs.len()),
            ));
        }
        if let Some(i) = self.probs.iter().position(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::validation(
                "probs",
                format!("probs[{i}] = {} is outside (0, 1]", self.probs[i]),
            ));
        }
        let a = &self.attn;
        if a.num_layers() == 0 {
            return Err(Error::validation("attn", "at least one layer is required"));
        }
        if a.num_heads() == 0 {
            return Err(Error::validation("attn", "at least one head is required"));
        }
        if a.k_window() == 0 {
            return Err(Error::validation("k_window", "must be at least 1"));
        }
        if a.len() != n {
            return Err(Error::validation(
                "attn",
                format!("{} token rows do not match {n} tokens", a.len()),
            ));
        }
        for l in 0..a.num_layers() {
            for h in 0..a.num_heads() {
                for i in 0..n {
                    for (k, &v) in (1..).zip(a.row(l, h, i)) {
                        if self.addresses_before_prompt(i, k) {
                            if v != ATTN_UNDEFINED {
                                return Err(Error::validation(
                                    "attn",
                                    format!(
                                        "attn[{l}][{h}][{i}][{}] = {v} points before the prompt and must be {ATTN_UNDEFINED}",
                                        k - 1
                                    ),
                                ));
                            }
                        } else if !(0.0..=1.0).contains(&v) {
                            return Err(Error::validation(
                                "attn",
                                format!("attn[{l}][{h}][{i}][{}] = {v} is outside [0, 1]", k - 1),
                            ));
                        }
                    }
                }
            }
        }
        if let Some(q) = self.quality {
            if !q.is_finite() {
                return Err(Error::validation("quality", "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct WireTrace {
    id: String,
    #[serde(default)]
    task: String,
    prompt_len: usize,
    tokens: Vec<String>,
    probs: Vec<f32>,
    k_window: usize,
    attn: Vec<Vec<Vec<Vec<f32>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quality: Option<f64>,
}

impl WireTrace {
    fn into_trace(self) -> Result<GenerationTrace> {
        let attn = AttentionWindow::from_nested(self.attn)?;
        if attn.num_layers() > 0 && attn.num_heads() > 0 && !attn.is_empty() && attn.k_window() != self.k_window {
            return Err(Error::validation(
                "attn",
                format!(
                    "last dimension is {}, expected k_window = {}",
                    attn.k_window(),
                    self.k_window
                ),
            ));
        }
        if self.k_window == 0 {
            return Err(Error::validation("k_window", "must be at least 1"));
        }
        let trace = GenerationTrace {
            id: self.id,
            task: self.task,
            prompt_len: self.prompt_len,
            tokens: self.tokens,
            probs: self.probs,
            attn,
            quality: self.quality,
        };
        trace.validate()?;
        Ok(trace)
    }

    fn from_trace(t: &GenerationTrace) -> Self {
        WireTrace {
            id: t.id.clone(),
            task: t.task.clone(),
            prompt_len: t.prompt_len,
            tokens: t.tokens.clone(),
            probs: t.probs.clone(),
            k_window: t.k_window(),
            attn: t.attn.to_nested(),
            quality: t.quality,
        }
    }
}

/// Parses one record line. Errors carry no line number.
pub fn parse_trace(line: &str) -> Result<GenerationTrace> {
    let wire: WireTrace = serde_json::from_str(line).map_err(|source| Error::Json { line: 0, source })?;
    wire.into_trace()
}

/// Streaming reader over a trace file.
///
/// Yields one `Result` per record so that a caller can keep going after a bad
/// line (as `validate` does) or stop at the first error.
pub struct TraceReader<R> {
    header: Option<TraceFileHeader>,
    lines: std::io::Lines<R>,
    line_no: usize,
    seen_ids: HashSet<String>,
}

impl<R: BufRead> TraceReader<R> {
    /// Reads and checks the header line. An input with no lines at all is
    /// accepted and yields no traces.
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut line_no = 0;
        let mut header = None;
        for line in lines.by_ref() {
            let line = line?;
            line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let h: TraceFileHeader =
                serde_json::from_str(&line).map_err(|source| Error::Json { line: line_no, source })?;
            if h.schema_version != SCHEMA_VERSION {
                return Err(Error::UnsupportedFormat(format!(
                    "schema_version `{}` (expected `{SCHEMA_VERSION}`)",
                    h.schema_version
                )));
            }
            header = Some(h);
            break;
        }
        Ok(TraceReader {
            header,
            lines,
            line_no,
            seen_ids: HashSet::new(),
        })
    }

    /// The file header, or `None` for an empty input.
    pub fn header(&self) -> Option<&TraceFileHeader> {
        self.header.as_ref()
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<GenerationTrace>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            let parsed = serde_json::from_str::<WireTrace>(&line)
                .map_err(|source| Error::Json { line: line_no, source })
                .and_then(|wire| {
                    let id = wire.id.clone();
                    wire.into_trace().map_err(|e| attach_location(e, line_no, &id))
                })
                .and_then(|trace| {
                    if self.seen_ids.insert(trace.id.clone()) {
                        Ok(trace)
                    } else {
                        Err(Error::Validation {
                            line: Some(line_no),
                            id: Some(trace.id.clone()),
                            field: "id",
                            message: "duplicate id within file".into(),
                        })
                    }
                });
            return Some(parsed);
        }
    }
}

fn attach_location(e: Error, line_no: usize, trace_id: &str) -> Error {
    match e {
        Error::Validation { field, message, .. } => Error::Validation {
            line: Some(line_no),
            id: Some(trace_id.to_string()),
            field,
            message,
        },
        other => other,
    }
}

/// Opens a trace stream, transparently decompressing gzip input.
pub fn read_traces<'a, R: Read + 'a>(source: R) -> Result<TraceReader<Box<dyn BufRead + 'a>>> {
    let mut buffered = BufReader::new(source);
    let is_gzip = buffered.fill_buf()?.starts_with(&GZIP_MAGIC);
    let reader: Box<dyn BufRead + 'a> = if is_gzip {
        Box::new(BufReader::new(MultiGzDecoder::new(buffered)))
    } else {
        Box::new(buffered)
    };
    TraceReader::new(reader)
}

/// Reads a whole trace stream, stopping at the first error.
pub fn read_all<R: Read>(source: R) -> Result<(Option<TraceFileHeader>, Vec<GenerationTrace>)> {
    let reader = read_traces(source)?;
    let header = reader.header().cloned();
    let traces = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, traces))
}

/// Writes a header line followed by one line per trace.
pub fn write_traces<'a, W, I>(header: &TraceFileHeader, traces: I, mut sink: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a GenerationTrace>,
{
    serde_json::to_writer(&mut sink, header).map_err(std::io::Error::from)?;
    sink.write_all(b"\n")?;
    for trace in traces {
        serde_json::to_writer(&mut sink, &WireTrace::from_trace(trace)).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// Serializes a single trace as one JSON line (without the newline).
pub fn trace_to_json(trace: &GenerationTrace) -> String {
    serde_json::to_string(&WireTrace::from_trace(trace)).expect("trace serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"schema_version":"rauq-trace/1","model_name":"toy","notes":""}"#;

    fn record(probs: &str, attn: &str) -> String {
        format!(
            r#"{{"id":"t0","task":"qa","prompt_len":2,"tokens":["a","b","c"],"probs":{probs},"k_window":1,"attn":{attn}}}"#
        )
    }

    const ATTN_OK: &str = "[[[[0.3],[0.5],[0.4]],[[0.1],[0.2],[0.9]]]]";

    #[test]
    fn reads_minimal_file() {
        let text = format!("{HEADER}\n{}\n", record("[0.9,0.8,0.7]", ATTN_OK));
        let (header, traces) = read_all(text.as_bytes()).unwrap();
        assert_eq!(header.unwrap().model_name, "toy");
        assert_eq!(traces.len(), 1);
        let t = &traces[0];
        assert_eq!((t.num_layers(), t.num_heads(), t.len(), t.k_window()), (1, 2, 3, 1));
        assert_eq!(t.attn.get(0, 1, 2, 1), 0.9);
        assert_eq!(t.quality, None);
    }

    #[test]
    fn probs_length_mismatch_names_probs() {
        let text = format!("{HEADER}\n{}\n", record("[0.9,0.8]", ATTN_OK));
        let err = read_all(text.as_bytes()).unwrap_err();
        assert_eq!(err.field(), Some("probs"));
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn out_of_range_attention_names_attn() {
        let attn = "[[[[0.3],[1.5],[0.4]],[[0.1],[0.2],[0.9]]]]";
        let text = format!("{HEADER}\n{}\n", record("[0.9,0.8,0.7]", attn));
        let err = read_all(text.as_bytes()).unwrap_err();
        assert_eq!(err.field(), Some("attn"));
    }

    #[test]
    fn ragged_attention_is_rejected() {
        let attn = "[[[[0.3],[0.5],[0.4]],[[0.1],[0.2]]]]";
        let text = format!("{HEADER}\n{}\n", record("[0.9,0.8,0.7]", attn));
        assert_eq!(read_all(text.as_bytes()).unwrap_err().field(), Some("attn"));
    }

    #[test]
    fn sentinel_required_before_prompt() {
        // prompt_len 0: token 0 has no predecessor
        let bad = r#"{"id":"x","prompt_len":0,"tokens":["a","b"],"probs":[0.5,0.5],"k_window":1,"attn":[[[[0.2],[0.5]]]]}"#;
        let good = r#"{"id":"x","prompt_len":0,"tokens":["a","b"],"probs":[0.5,0.5],"k_window":1,"attn":[[[[-1.0],[0.5]]]]}"#;
        assert_eq!(parse_trace(bad).unwrap_err().field(), Some("attn"));
        parse_trace(good).unwrap();
    }

    #[test]
    fn sentinel_inside_answer_is_rejected() {
        let bad = r#"{"id":"x","prompt_len":0,"tokens":["a","b"],"probs":[0.5,0.5],"k_window":1,"attn":[[[[-1.0],[-1.0]]]]}"#;
        assert_eq!(parse_trace(bad).unwrap_err().field(), Some("attn"));
    }

    #[test]
    fn zero_probability_is_rejected() {
        let text = format!("{HEADER}\n{}\n", record("[0.9,0.0,0.7]", ATTN_OK));
        assert_eq!(read_all(text.as_bytes()).unwrap_err().field(), Some("probs"));
    }

    #[test]
    fn unknown_schema_version() {
        let text = "{\"schema_version\":\"rauq-trace/2\",\"model_name\":\"\",\"notes\":\"\"}\n";
        assert!(matches!(read_traces(text.as_bytes()), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn malformed_json_reports_line_and_continues() {
        let good = record("[0.9,0.8,0.7]", ATTN_OK);
        let good2 = good.replace("\"t0\"", "\"t1\"");
        let text = format!("{HEADER}\n{good}\n{{not json\n{good2}\n");
        let results: Vec<_> = read_traces(text.as_bytes()).unwrap().collect();
        assert_eq!(results.len(), 3);
        assert!(results[0].is_ok());
        assert!(matches!(results[1], Err(Error::Json { line: 3, .. })));
        assert!(results[2].is_ok());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let good = record("[0.9,0.8,0.7]", ATTN_OK);
        let text = format!("{HEADER}\n{good}\n{good}\n");
        let err = read_all(text.as_bytes()).unwrap_err();
        assert_eq!(err.field(), Some("id"));
        assert_eq!(err.line(), Some(3));
    }

    #[test]
    fn empty_sequence_writes_header_only() {
        let mut buf = Vec::new();
        write_traces(&TraceFileHeader::default(), &[], &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        let (header, traces) = read_all(buf.as_slice()).unwrap();
        assert!(header.is_some());
        assert!(traces.is_empty());
    }

    #[test]
    fn absent_quality_is_omitted() {
        let text = format!("{HEADER}\n{}\n", record("[0.9,0.8,0.7]", ATTN_OK));
        let (_, traces) = read_all(text.as_bytes()).unwrap();
        let json = trace_to_json(&traces[0]);
        assert!(!json.contains("quality"));
        let mut with_q = traces[0].clone();
        with_q.quality = Some(0.25);
        assert!(trace_to_json(&with_q).contains("\"quality\":0.25"));
    }

    #[test]
    fn gzip_input_is_sniffed() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let text = format!("{HEADER}\n{}\n", record("[0.9,0.8,0.7]", ATTN_OK));
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(text.as_bytes()).unwrap();
        let gz = enc.finish().unwrap();
        let (_, traces) = read_all(gz.as_slice()).unwrap();
        assert_eq!(traces.len(), 1);
    }

    #[test]
    fn empty_input_yields_nothing() {
        let reader = read_traces(&b""[..]).unwrap();
        assert!(reader.header().is_none());
        assert_eq!(reader.count(), 0);
    }
}
