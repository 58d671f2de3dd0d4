//! The event-stream wire format.
//!
//! Comma-separated with a mandatory header:
//!
//! ```text
//! seq,stratum,group,outcome
//! 1,1,a,0
//! 2,1,b,1
//! ```
//!
//! `stratum` is 1-based on the wire (internally strata are 0-based),
//! `group` is `a` or `b`, `outcome` is `0` or `1`. Streams are accepted from
//! files or standard input.

use std::io::{BufRead, Write};

use stratevals_core::ingest::{Group, OutcomeEvent};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing header line `seq,stratum,group,outcome`")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parsed stream plus the number of strata (the largest label seen).
#[derive(Debug)]
pub struct EventStream {
    pub events: Vec<OutcomeEvent>,
    pub n_strata: usize,
}

pub fn parse_events<R: BufRead>(reader: R) -> Result<EventStream, EventParseError> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(EventParseError::MissingHeader),
    };
    if normalize(&header) != "seq,stratum,group,outcome" {
        return Err(EventParseError::MissingHeader);
    }

    let mut events = Vec::new();
    let mut n_strata = 0usize;
    for (index, line) in lines {
        let line = line?;
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(EventParseError::Malformed {
                line: line_no,
                message: format!("expected 4 comma-separated fields, found {}", fields.len()),
            });
        }
        let seq: u64 = fields[0].parse().map_err(|_| EventParseError::Malformed {
            line: line_no,
            message: format!("invalid seq `{}`", fields[0]),
        })?;
        let stratum: usize = fields[1].parse().map_err(|_| EventParseError::Malformed {
            line: line_no,
            message: format!("invalid stratum `{}`", fields[1]),
        })?;
        if stratum == 0 {
            return Err(EventParseError::Malformed {
                line: line_no,
                message: "stratum labels are 1-based".into(),
            });
        }
        let group = match fields[2] {
            "a" => Group::A,
            "b" => Group::B,
            other => {
                return Err(EventParseError::Malformed {
                    line: line_no,
                    message: format!("group must be `a` or `b`, found `{other}`"),
                })
            }
        };
        let outcome = match fields[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(EventParseError::Malformed {
                    line: line_no,
                    message: format!("outcome must be 0 or 1, found `{other}`"),
                })
            }
        };
        n_strata = n_strata.max(stratum);
        events.push(OutcomeEvent { seq, stratum: stratum - 1, group, outcome });
    }
    Ok(EventStream { events, n_strata })
}

pub fn write_events<W: Write>(mut out: W, events: &[OutcomeEvent]) -> std::io::Result<()> {
    writeln!(out, "seq,stratum,group,outcome")?;
    for e in events {
        let group = match e.group {
            Group::A => 'a',
            Group::B => 'b',
        };
        writeln!(out, "{},{},{},{}", e.seq, e.stratum + 1, group, u8::from(e.outcome))?;
    }
    Ok(())
}

fn normalize(header: &str) -> String {
    header.split(',').map(str::trim).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_small_stream() {
        let input = "seq,stratum,group,outcome\n1,1,a,0\n2,2,b,1\n";
        let stream = parse_events(input.as_bytes()).unwrap();
        assert_eq!(stream.events.len(), 2);
        assert_eq!(stream.n_strata, 2);
        assert_eq!(stream.events[0].stratum, 0);
        assert_eq!(stream.events[1].group, Group::B);
        assert!(stream.events[1].outcome);
    }

    #[test]
    fn reports_file_line_numbers() {
        let input = "seq,stratum,group,outcome\n1,1,a,0\n2,1,c,1\n";
        let err = parse_events(input.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("group"), "{err}");
    }

    #[test]
    fn rejects_missing_header() {
        let err = parse_events("1,1,a,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, EventParseError::MissingHeader));
    }

    #[test]
    fn round_trips() {
        let events = vec![
            OutcomeEvent { seq: 1, stratum: 0, group: Group::A, outcome: true },
            OutcomeEvent { seq: 2, stratum: 1, group: Group::B, outcome: false },
        ];
        let mut buffer = Vec::new();
        write_events(&mut buffer, &events).unwrap();
        let back = parse_events(buffer.as_slice()).unwrap();
        assert_eq!(back.events, events);
    }
}
