//! Note-level performance data: Standard MIDI File parsing and a plain CSV
//! note table for interchange.

mod note_table;
mod smf;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use note_table::{from_note_table, to_note_table, NOTE_TABLE_HEADER};
pub use smf::{parse_smf, write_smf, ParsedSmf, TempoMap, TickGrid, Timing};

/// One performed note. Times are in seconds from the start of the file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset: f64,
    pub offset: f64,
    pub pitch: u8,
    /// MIDI velocity of the note-on.
    pub dynamic: u8,
}

impl NoteEvent {
    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset.is_finite() && self.offset.is_finite()) {
            return Err(Error::invalid("note times must be finite"));
        }
        if self.onset < 0.0 {
            return Err(Error::invalid(format!("negative onset {}", self.onset)));
        }
        if self.offset <= self.onset {
            return Err(Error::invalid(format!(
                "offset {} does not follow onset {}",
                self.offset, self.onset
            )));
        }
        if self.pitch > 127 {
            return Err(Error::invalid(format!("pitch {} out of range", self.pitch)));
        }
        if !(1..=127).contains(&self.dynamic) {
            return Err(Error::invalid(format!(
                "dynamic {} out of range",
                self.dynamic
            )));
        }
        Ok(())
    }
}

/// Total order used for every note list: onset, then pitch, then the
/// remaining fields so that duplicates still sort deterministically.
pub fn note_order(a: &NoteEvent, b: &NoteEvent) -> Ordering {
    a.onset
        .total_cmp(&b.onset)
        .then(a.pitch.cmp(&b.pitch))
        .then(a.offset.total_cmp(&b.offset))
        .then(a.dynamic.cmp(&b.dynamic))
}

/// One performer's rendition of one piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub performer_id: String,
    pub piece_id: String,
    notes: Vec<NoteEvent>,
}

impl Performance {
    /// Builds a performance, sorting the notes by (onset, pitch).
    pub fn new(
        performer_id: impl Into<String>,
        piece_id: impl Into<String>,
        mut notes: Vec<NoteEvent>,
    ) -> Self {
        notes.sort_by(note_order);
        Performance {
            performer_id: performer_id.into(),
            piece_id: piece_id.into(),
            notes,
        }
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn pitches(&self) -> Vec<u8> {
        self.notes.iter().map(|n| n.pitch).collect()
    }

    /// Checks every note invariant. Sortedness holds by construction.
    pub fn validate(&self) -> Result<()> {
        for (i, note) in self.notes.iter().enumerate() {
            note.validate()
                .map_err(|e| Error::invalid(format!("note {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn with_ids(mut self, performer_id: impl Into<String>, piece_id: impl Into<String>) -> Self {
        self.performer_id = performer_id.into();
        self.piece_id = piece_id.into();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(onset: f64, pitch: u8) -> NoteEvent {
        NoteEvent {
            onset,
            offset: onset + 0.5,
            pitch,
            dynamic: 64,
        }
    }

    #[test]
    fn performance_sorts_ties_by_pitch() {
        let p = Performance::new("a", "x", vec![note(1.0, 67), note(1.0, 60), note(0.5, 72), note(1.0, 64)]);
        assert_eq!(p.pitches(), vec![72, 60, 64, 67]);
    }

    #[test]
    fn validation_rejects_bad_notes() {
        let mut n = note(1.0, 60);
        n.offset = 1.0;
        assert!(n.validate().is_err());
        let mut n = note(1.0, 60);
        n.dynamic = 0;
        assert!(n.validate().is_err());
        let mut n = note(1.0, 60);
        n.pitch = 128;
        assert!(n.validate().is_err());
        let mut n = note(1.0, 60);
        n.onset = -0.1;
        assert!(n.validate().is_err());
        assert!(note(0.0, 0).validate().is_ok());
    }
}
