//! Tab-separated event-log format.
//!
//! ```text
//! #loopfm-events v1	vm=ad_id:24,ad_cat:4	extra=segment:4
//! <key>	<timestamp>	<chunk>	<vm ids, comma-separated>	<extra ids, comma-separated>	<label>[	<p_true>]
//! ```
//!
//! An empty extra block is written as `-`.

use std::io::{BufRead, Write};
use std::path::Path;

use super::{EventLog, EventSample, LogSchema};
use crate::error::{Error, Result};

const MAGIC: &str = "#loopfm-events v1";

fn schema_block(names: &[String], cards: &[usize]) -> String {
    names
        .iter()
        .zip(cards)
        .map(|(n, c)| format!("{n}:{c}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn ids(vals: &[u32]) -> String {
    if vals.is_empty() {
        return "-".into();
    }
    vals.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

pub fn write_event_log(log: &EventLog, out: &mut impl Write) -> std::io::Result<()> {
    let s = &log.schema;
    writeln!(
        out,
        "{MAGIC}\tvm={}\textra={}",
        schema_block(&s.vm_names, &s.vm_cards),
        schema_block(&s.extra_names, &s.extra_cards)
    )?;
    for e in &log.events {
        write!(out, "{}\t{}\t{}\t{}\t{}\t{}", e.key, e.timestamp, e.chunk, ids(&e.vm), ids(&e.extra), e.label)?;
        if e.p_true.is_finite() {
            write!(out, "\t{:?}", e.p_true)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_event_log(log: &EventLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_event_log(log, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn parse_schema_block(block: &str, prefix: &str, line: usize) -> Result<(Vec<String>, Vec<usize>)> {
    let body = block
        .strip_prefix(prefix)
        .ok_or_else(|| Error::Parse { line, msg: format!("expected `{prefix}` block") })?;
    let (mut names, mut cards) = (vec![], vec![]);
    for item in body.split(',').filter(|s| !s.is_empty()) {
        let (n, c) = item
            .split_once(':')
            .ok_or_else(|| Error::Parse { line, msg: format!("bad schema entry `{item}`") })?;
        let c: usize = c
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad cardinality in `{item}`") })?;
        names.push(n.to_string());
        cards.push(c);
    }
    Ok((names, cards))
}

/// Streaming reader: yields one validated event per line with bounded memory.
pub struct EventReader<R: BufRead> {
    input: R,
    schema: LogSchema,
    line_no: usize,
    buf: String,
    last_in_chunk: Option<(u8, i64)>,
    warnings: Vec<String>,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header).map_err(|e| Error::io("<event log>", e))?;
        let fields: Vec<&str> = header.trim_end_matches(['\n', '\r']).split('\t').collect();
        if fields.len() != 3 || fields[0] != MAGIC {
            return Err(Error::Parse { line: 1, msg: "missing `#loopfm-events v1` header".into() });
        }
        let (vm_names, vm_cards) = parse_schema_block(fields[1], "vm=", 1)?;
        let (extra_names, extra_cards) = parse_schema_block(fields[2], "extra=", 1)?;
        Ok(EventReader {
            input,
            schema: LogSchema {
                vm_names,
                vm_cards,
                extra_names,
                extra_cards,
            },
            line_no: 1,
            buf: String::new(),
            last_in_chunk: None,
            warnings: Vec::new(),
        })
    }

    pub fn schema(&self) -> &LogSchema {
        &self.schema
    }

    /// Ordering warnings seen so far.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn parse_line(&mut self) -> Result<EventSample> {
        let line = self.line_no;
        let perr = |msg: String| Error::Parse { line, msg };
        let f: Vec<&str> = self.buf.trim_end_matches(['\n', '\r']).split('\t').collect();
        if f.len() != 6 && f.len() != 7 {
            return Err(perr(format!("expected 6 or 7 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<i64> { s.parse().map_err(|_| perr(format!("bad {what} `{s}`"))) };
        let list = |s: &str, cards: &[usize], what: &str| -> Result<Vec<u32>> {
            let vals: Vec<u32> = if s == "-" {
                vec![]
            } else {
                s.split(',')
                    .map(|v| v.parse().map_err(|_| perr(format!("bad {what} id `{v}`"))))
                    .collect::<Result<_>>()?
            };
            if vals.len() != cards.len() {
                return Err(perr(format!("{} {what} ids, schema has {}", vals.len(), cards.len())));
            }
            if let Some((v, c)) = vals.iter().zip(cards).find(|(v, c)| **v as usize >= **c) {
                return Err(perr(format!("{what} id {v} outside cardinality {c}")));
            }
            Ok(vals)
        };
        let key = num(f[0], "key")?;
        let timestamp = num(f[1], "timestamp")?;
        let chunk = num(f[2], "chunk")?;
        if key < 0 || timestamp < 0 || !(1..=255).contains(&chunk) {
            return Err(perr("key, timestamp and chunk must be nonnegative; chunk ≥ 1".into()));
        }
        let vm = list(f[3], &self.schema.vm_cards, "vm")?;
        let extra = list(f[4], &self.schema.extra_cards, "extra")?;
        let label = match f[5] {
            "0" => 0,
            "1" => 1,
            other => return Err(perr(format!("label must be 0 or 1, got `{other}`"))),
        };
        let p_true = match f.get(6) {
            Some(s) => s.parse().map_err(|_| perr(format!("bad probability `{s}`")))?,
            None => f64::NAN,
        };
        Ok(EventSample {
            key: key as u64,
            timestamp,
            chunk: chunk as u8,
            vm,
            extra,
            label,
            p_true,
        })
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<EventSample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::io("<event log>", e))),
            }
            self.line_no += 1;
            if self.buf.trim().is_empty() {
                continue;
            }
            let ev = self.parse_line();
            if let Ok(e) = &ev {
                if let Some((c, t)) = self.last_in_chunk {
                    if c == e.chunk && e.timestamp < t {
                        self.warnings.push(format!(
                            "line {}: timestamp {} precedes {t} within chunk {c}",
                            self.line_no, e.timestamp
                        ));
                    }
                }
                self.last_in_chunk = Some((e.chunk, e.timestamp));
            }
            return Some(ev);
        }
    }
}

/// Reads a whole log; events are stably reordered by timestamp if needed.
pub fn ingest_event_log(path: impl AsRef<Path>) -> Result<(EventLog, Vec<String>)> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_event_log(std::io::BufReader::new(f))
}

pub fn read_event_log(input: impl BufRead) -> Result<(EventLog, Vec<String>)> {
    let mut reader = EventReader::new(input)?;
    let mut events = Vec::new();
    for ev in reader.by_ref() {
        events.push(ev?);
    }
    if events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        events.sort_by_key(|e| e.timestamp);
    }
    let schema = reader.schema.clone();
    Ok((EventLog { schema, events }, reader.warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate, WorldSpec};

    #[test]
    fn round_trip_is_identical() {
        let mut spec = WorldSpec::default_experiment(5);
        spec.n_users = 10;
        spec.events_per_user = 16;
        let log = generate(&spec, 1).unwrap();
        let mut buf = Vec::new();
        write_event_log(&log, &mut buf).unwrap();
        let (back, warn) = read_event_log(&buf[..]).unwrap();
        assert_eq!(back, log);
        assert!(warn.is_empty());
    }

    #[test]
    fn wrong_field_count_names_line() {
        let text = "#loopfm-events v1\tvm=a:2\textra=\n0\t1\t1\t0\t-\t1\n0\t2\t1\t1\t-\n";
        let err = read_event_log(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn out_of_order_within_chunk_warns() {
        let text = "#loopfm-events v1\tvm=a:2\textra=\n0\t5\t1\t0\t-\t1\n1\t3\t1\t1\t-\t0\n";
        let (log, warn) = read_event_log(text.as_bytes()).unwrap();
        assert_eq!(warn.len(), 1);
        assert_eq!(log.events[0].timestamp, 3);
    }

    struct Lines {
        n: usize,
        i: usize,
        pending: Vec<u8>,
    }

    impl std::io::Read for Lines {
        fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
            if self.pending.is_empty() {
                if self.i > self.n {
                    return Ok(0);
                }
                self.pending = if self.i == 0 {
                    b"#loopfm-events v1\tvm=a:3,b:2\textra=c:2\n".to_vec()
                } else {
                    format!("{}\t{}\t1\t{},1\t0\t{}\n", self.i % 97, self.i, self.i % 3, self.i % 2).into_bytes()
                };
                self.i += 1;
            }
            let k = out.len().min(self.pending.len());
            out[..k].copy_from_slice(&self.pending[..k]);
            self.pending.drain(..k);
            Ok(k)
        }
    }

    #[test]
    fn million_lines_stream_without_collecting() {
        let src = Lines { n: 1_000_000, i: 0, pending: vec![] };
        let reader = EventReader::new(std::io::BufReader::with_capacity(1 << 16, src)).unwrap();
        let mut count = 0usize;
        let mut positives = 0usize;
        for ev in reader {
            let ev = ev.unwrap();
            count += 1;
            positives += ev.label as usize;
        }
        assert_eq!(count, 1_000_000);
        assert_eq!(positives, 500_000);
    }
}
