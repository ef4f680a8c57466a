//! Lattice text format.
//!
//! A file holds one or more lattice blocks:
//!
//! ```text
//! UTT <utt_id>
//! S <num_states>
//! A <src> <dst> <label> <am_logp> <lm_logp> [<edit_cost>]
//! F <state>
//! END
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Scores are
//! natural-log probabilities. Writing is canonical: arcs are sorted by
//! (src, dst, label) and floats are printed with 17 significant digits, so
//! a parse/write round trip is the identity on canonical files and
//! write(parse(write(l))) == write(l) for any lattice `l`.
//!
//! Reference transcripts use a separate format: one utterance per line,
//! `<utt_id>\t<space-separated words>`.

use std::path::Path;

use super::{Arc, Lattice, StateId};
use crate::{Error, Result};

/// Parse every lattice block in `text`.
pub fn parse_lattices(text: &str) -> Result<Vec<Lattice>> {
    let mut parser = Parser::new();
    for (i, line) in text.lines().enumerate() {
        parser.line(i + 1, line)?;
    }
    parser.finish()
}

/// Parse a text containing exactly one lattice block.
pub fn parse_lattice(text: &str) -> Result<Lattice> {
    let mut lats = parse_lattices(text)?;
    match lats.len() {
        1 => Ok(lats.pop().unwrap()),
        n => Err(Error::InvalidArgument(format!(
            "expected exactly one lattice block, found {n}"
        ))),
    }
}

enum ParserState {
    /// Between blocks; next record must be `UTT`.
    Idle,
    /// Saw `UTT`; next record must be `S`.
    AwaitStates { utt_id: String },
    /// Inside a block body; `A`, `F`, or `END`.
    Body { lattice: Lattice },
}

struct Parser {
    state: ParserState,
    done: Vec<Lattice>,
}

impl Parser {
    fn new() -> Parser {
        Parser {
            state: ParserState::Idle,
            done: Vec::new(),
        }
    }

    fn line(&mut self, lineno: usize, raw: &str) -> Result<()> {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(());
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let tag = fields[0];
        match std::mem::replace(&mut self.state, ParserState::Idle) {
            ParserState::Idle => {
                if tag != "UTT" {
                    return Err(Error::parse(
                        lineno,
                        format!("expected UTT record, found {tag:?}"),
                    ));
                }
                if fields.len() != 2 {
                    return Err(Error::parse(lineno, "UTT record needs exactly one id"));
                }
                self.state = ParserState::AwaitStates {
                    utt_id: fields[1].to_string(),
                };
            }
            ParserState::AwaitStates { utt_id } => {
                if tag != "S" {
                    return Err(Error::parse(
                        lineno,
                        format!("expected S record after UTT, found {tag:?}"),
                    ));
                }
                if fields.len() != 2 {
                    return Err(Error::parse(lineno, "S record needs exactly one count"));
                }
                let n: StateId = fields[1]
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad state count {:?}", fields[1])))?;
                let lattice = Lattice::new(utt_id, n)
                    .map_err(|e| Error::parse(lineno, e.to_string()))?;
                self.state = ParserState::Body { lattice };
            }
            ParserState::Body { mut lattice } => match tag {
                "A" => {
                    self.parse_arc(lineno, &fields, &mut lattice)?;
                    self.state = ParserState::Body { lattice };
                }
                "F" => {
                    if fields.len() != 2 {
                        return Err(Error::parse(lineno, "F record needs exactly one state"));
                    }
                    let f = parse_state(lineno, fields[1], lattice.num_states)?;
                    lattice.finals.insert(f);
                    self.state = ParserState::Body { lattice };
                }
                "END" => {
                    if fields.len() != 1 {
                        return Err(Error::parse(lineno, "END record takes no fields"));
                    }
                    self.done.push(lattice);
                    self.state = ParserState::Idle;
                }
                other => {
                    return Err(Error::parse(
                        lineno,
                        format!("unknown record tag {other:?}"),
                    ));
                }
            },
        }
        Ok(())
    }

    fn parse_arc(&self, lineno: usize, fields: &[&str], lattice: &mut Lattice) -> Result<()> {
        if fields.len() != 6 && fields.len() != 7 {
            return Err(Error::parse(
                lineno,
                "A record needs src, dst, label, am_logp, lm_logp, and optionally edit_cost",
            ));
        }
        let src = parse_state(lineno, fields[1], lattice.num_states)?;
        let dst = parse_state(lineno, fields[2], lattice.num_states)?;
        let label = fields[3].to_string();
        let am_logp = parse_score(lineno, fields[4])?;
        let lm_logp = parse_score(lineno, fields[5])?;
        let edit_cost = if fields.len() == 7 {
            Some(fields[6].parse::<u32>().map_err(|_| {
                Error::parse(lineno, format!("bad edit cost {:?}", fields[6]))
            })?)
        } else {
            None
        };
        lattice.arcs.push(Arc {
            src,
            dst,
            label,
            am_logp,
            lm_logp,
            edit_cost,
        });
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<Lattice>> {
        match self.state {
            ParserState::Idle => Ok(std::mem::take(&mut self.done)),
            _ => Err(Error::InvalidArgument(
                "unterminated lattice block: missing END".into(),
            )),
        }
    }
}

fn parse_state(lineno: usize, field: &str, num_states: StateId) -> Result<StateId> {
    let s: StateId = field
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad state id {field:?}")))?;
    if s >= num_states {
        return Err(Error::parse(
            lineno,
            format!("state id {s} out of range (lattice has {num_states} states)"),
        ));
    }
    Ok(s)
}

fn parse_score(lineno: usize, field: &str) -> Result<f64> {
    let x: f64 = field
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad score {field:?}")))?;
    if !x.is_finite() {
        return Err(Error::parse(lineno, format!("non-finite score {field:?}")));
    }
    Ok(x)
}

/// 17 significant digits: round-trips any finite f64 exactly.
fn fmt_score(x: f64) -> String {
    format!("{x:.16e}")
}

/// Render one lattice block canonically.
pub fn write_lattice(lattice: &Lattice) -> String {
    let mut order: Vec<usize> = (0..lattice.arcs.len()).collect();
    order.sort_by(|&i, &j| {
        let a = &lattice.arcs[i];
        let b = &lattice.arcs[j];
        a.src
            .cmp(&b.src)
            .then(a.dst.cmp(&b.dst))
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| a.am_logp.total_cmp(&b.am_logp))
            .then_with(|| a.lm_logp.total_cmp(&b.lm_logp))
            .then(a.edit_cost.cmp(&b.edit_cost))
    });
    let mut out = String::new();
    out.push_str(&format!("UTT {}\n", lattice.utt_id));
    out.push_str(&format!("S {}\n", lattice.num_states));
    for i in order {
        let a = &lattice.arcs[i];
        out.push_str(&format!(
            "A {} {} {} {} {}",
            a.src,
            a.dst,
            a.label,
            fmt_score(a.am_logp),
            fmt_score(a.lm_logp)
        ));
        if let Some(c) = a.edit_cost {
            out.push_str(&format!(" {c}"));
        }
        out.push('\n');
    }
    for f in &lattice.finals {
        out.push_str(&format!("F {f}\n"));
    }
    out.push_str("END\n");
    out
}

/// Render several lattice blocks into one text.
pub fn write_lattices(lattices: &[Lattice]) -> String {
    let mut out = String::new();
    for l in lattices {
        out.push_str(&write_lattice(l));
    }
    out
}

pub fn load_lattices(path: &Path) -> Result<Vec<Lattice>> {
    parse_lattices(&std::fs::read_to_string(path)?)
}

pub fn save_lattices(path: &Path, lattices: &[Lattice]) -> Result<()> {
    std::fs::write(path, write_lattices(lattices))?;
    Ok(())
}

/// Parse reference transcripts: `<utt_id>\t<words>` per line.
pub fn parse_refs(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut refs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line.split_once('\t').ok_or_else(|| {
            Error::parse(i + 1, "reference line needs <utt_id>\\t<words>")
        })?;
        let id = id.trim();
        if id.is_empty() || id.split_whitespace().count() != 1 {
            return Err(Error::parse(i + 1, "utterance id must be one token"));
        }
        refs.push((
            id.to_string(),
            words.split_whitespace().map(str::to_string).collect(),
        ));
    }
    Ok(refs)
}

/// Render reference transcripts.
pub fn write_refs(refs: &[(String, Vec<String>)]) -> String {
    let mut out = String::new();
    for (id, words) in refs {
        out.push_str(id);
        out.push('\t');
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# a small two-path lattice
UTT utt1
S 3
A 0 1 hello -1.5 -0.75
A 1 2 world -0.25 -0.5
A 0 2 help -3.0 -1.0 2
F 2
END
";

    #[test]
    fn parse_sample() {
        let l = parse_lattice(SAMPLE).unwrap();
        assert_eq!(l.utt_id, "utt1");
        assert_eq!(l.num_states, 3);
        assert_eq!(l.arcs.len(), 3);
        assert_eq!(l.arcs[0].label, "hello");
        assert_eq!(l.arcs[0].am_logp, -1.5);
        assert_eq!(l.arcs[2].edit_cost, Some(2));
        assert_eq!(l.finals.iter().copied().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn round_trip_is_identity_on_canonical_text() {
        let l = parse_lattice(SAMPLE).unwrap();
        let text = write_lattice(&l);
        let l2 = parse_lattice(&text).unwrap();
        assert_eq!(write_lattice(&l2), text);
        assert_eq!(l2.num_states, l.num_states);
        assert_eq!(l2.finals, l.finals);
        // Same arcs up to order.
        assert_eq!(l2.arcs.len(), l.arcs.len());
        for a in &l.arcs {
            assert!(l2.arcs.contains(a));
        }
    }

    #[test]
    fn writer_sorts_arcs() {
        let mut l = Lattice::new("u", 3).unwrap();
        l.add_arc(1, 2, "b", 0.0, 0.0, None);
        l.add_arc(0, 2, "z", 0.0, 0.0, None);
        l.add_arc(0, 1, "a", 0.0, 0.0, None);
        l.finals.insert(2);
        let text = write_lattice(&l);
        let a_lines: Vec<&str> = text.lines().filter(|x| x.starts_with("A ")).collect();
        assert!(a_lines[0].starts_with("A 0 1 a"));
        assert!(a_lines[1].starts_with("A 0 2 z"));
        assert!(a_lines[2].starts_with("A 1 2 b"));
    }

    #[test]
    fn scores_round_trip_exactly() {
        let mut l = Lattice::new("u", 2).unwrap();
        let am = -0.123456789012345678;
        let lm = -1.0 / 3.0;
        l.add_arc(0, 1, "w", am, lm, None);
        l.finals.insert(1);
        let l2 = parse_lattice(&write_lattice(&l)).unwrap();
        assert_eq!(l2.arcs[0].am_logp.to_bits(), am.to_bits());
        assert_eq!(l2.arcs[0].lm_logp.to_bits(), lm.to_bits());
    }

    #[test]
    fn multiple_blocks_parse() {
        let text = format!("{SAMPLE}\n{}", SAMPLE.replace("utt1", "utt2"));
        let lats = parse_lattices(&text).unwrap();
        assert_eq!(lats.len(), 2);
        assert_eq!(lats[1].utt_id, "utt2");
        assert!(parse_lattice(&text).is_err());
    }

    #[test]
    fn state_out_of_range_is_an_error_with_line() {
        let bad = "UTT u\nS 2\nA 0 5 w -1.0 -1.0\nF 1\nEND\n";
        match parse_lattices(bad) {
            Err(crate::Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("out of range"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_end_is_an_error() {
        assert!(parse_lattices("UTT u\nS 1\nF 0\n").is_err());
    }

    #[test]
    fn unknown_tag_is_an_error_with_line() {
        let bad = "UTT u\nS 1\nF 0\nQ what\nEND\n";
        match parse_lattices(bad) {
            Err(crate::Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_score_rejected() {
        let bad = "UTT u\nS 2\nA 0 1 w inf -1.0\nF 1\nEND\n";
        assert!(parse_lattices(bad).is_err());
        let bad = "UTT u\nS 2\nA 0 1 w nan -1.0\nF 1\nEND\n";
        assert!(parse_lattices(bad).is_err());
    }

    #[test]
    fn zero_state_count_rejected() {
        assert!(parse_lattices("UTT u\nS 0\nEND\n").is_err());
    }

    #[test]
    fn refs_round_trip() {
        let text = "utt1\thello world\nutt2\t\n";
        let refs = parse_refs(text).unwrap();
        assert_eq!(refs.len(), 2);
        assert_eq!(refs[0].1, vec!["hello", "world"]);
        assert!(refs[1].1.is_empty());
        assert_eq!(write_refs(&refs), "utt1\thello world\nutt2\t\n");
    }

    #[test]
    fn refs_without_tab_rejected() {
        assert!(parse_refs("utt1 hello world\n").is_err());
    }
}
