use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::{NoteEvent, Performance};

pub const NOTE_TABLE_HEADER: &str = "onset,offset,pitch,dynamic";

/// Renders the notes as CSV, one row per note in performance order.
///
/// Floats use the shortest representation that parses back to the same
/// `f64`, so the table round-trips bit-exactly.
pub fn to_note_table(performance: &Performance) -> String {
    let mut out = String::with_capacity(32 * (performance.len() + 1));
    out.push_str(NOTE_TABLE_HEADER);
    out.push('\n');
    for n in performance.notes() {
        writeln!(out, "{:?},{:?},{},{}", n.onset, n.offset, n.pitch, n.dynamic).expect("string write");
    }
    out
}

pub fn from_note_table(
    text: &str,
    performer_id: impl Into<String>,
    piece_id: impl Into<String>,
) -> Result<Performance> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["onset", "offset", "pitch", "dynamic"] {
        return Err(Error::NoteTable {
            line: 1,
            message: format!("expected header `{NOTE_TABLE_HEADER}`, found `{}`", names.join(",")),
        });
    }

    let mut notes = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let bad = |message: String| Error::NoteTable { line, message };
        if record.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", record.len())));
        }
        let float = |idx: usize| {
            record[idx]
                .parse::<f64>()
                .map_err(|e| bad(format!("field {}: {e}", idx + 1)))
        };
        let byte = |idx: usize| {
            record[idx]
                .parse::<u8>()
                .map_err(|e| bad(format!("field {}: {e}", idx + 1)))
        };
        let note = NoteEvent {
            onset: float(0)?,
            offset: float(1)?,
            pitch: byte(2)?,
            dynamic: byte(3)?,
        };
        note.validate().map_err(|e| bad(e.to_string()))?;
        notes.push(note);
    }
    Ok(Performance::new(performer_id, piece_id, notes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_note_table() {
        let p = Performance::new(
            "a",
            "x",
            vec![NoteEvent { onset: 0.5, offset: 1.0, pitch: 60, dynamic: 64 }],
        );
        assert_eq!(to_note_table(&p), "onset,offset,pitch,dynamic\n0.5,1.0,60,64\n");
    }

    #[test]
    fn tied_onsets_are_written_in_pitch_order() {
        let notes = [67u8, 60, 64]
            .iter()
            .map(|&pitch| NoteEvent { onset: 1.0, offset: 2.0, pitch, dynamic: 50 })
            .collect();
        let table = to_note_table(&Performance::new("a", "x", notes));
        let pitches: Vec<&str> = table
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap())
            .collect();
        assert_eq!(pitches, ["60", "64", "67"]);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = from_note_table("onset,offset,pitch,dynamic\n0.5,0.4,60,64\n", "a", "x").unwrap_err();
        assert!(matches!(err, Error::NoteTable { line: 2, .. }), "{err}");
        let err = from_note_table("onset,offset,pitch\n0.5,0.4,60\n", "a", "x").unwrap_err();
        assert!(matches!(err, Error::NoteTable { line: 1, .. }));
        let err = from_note_table("onset,offset,pitch,dynamic\n0.5,0.9,300,64\n", "a", "x").unwrap_err();
        assert!(matches!(err, Error::NoteTable { line: 2, .. }));
        let err = from_note_table("onset,offset,pitch,dynamic\n0.5,0.9,60,0\n", "a", "x").unwrap_err();
        assert!(matches!(err, Error::NoteTable { line: 2, .. }));
    }

    #[test]
    fn accepts_crlf() {
        let p = from_note_table("onset,offset,pitch,dynamic\r\n0.5,0.9,60,64\r\n", "a", "x").unwrap();
        assert_eq!(p.len(), 1);
    }

    fn arb_note() -> impl Strategy<Value = NoteEvent> {
        (0.0f64..1e4, 1e-9f64..100.0, 0u8..=127, 1u8..=127).prop_map(|(onset, dur, pitch, dynamic)| {
            NoteEvent { onset, offset: onset + dur, pitch, dynamic }
        })
    }

    proptest! {
        #[test]
        fn note_table_round_trips(notes in prop::collection::vec(arb_note(), 0..40)) {
            let notes: Vec<NoteEvent> = notes.into_iter().filter(|n| n.offset > n.onset).collect();
            let p = Performance::new("perf", "piece", notes);
            let back = from_note_table(&to_note_table(&p), "perf", "piece").unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
