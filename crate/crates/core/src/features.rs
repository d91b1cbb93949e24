//! Norm performance and per-note deviation features.
//!
//! The norm is the per-position mean of onset, offset and dynamic over the
//! performers present at that position. Each performer is then described by
//! five deviation series: onset time (OT), inter-onset interval (IOI),
//! off-time duration (OTD), dynamic level (DL) and note duration (ND).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignedNoteTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "OT")]
    Ot,
    #[serde(rename = "IOI")]
    Ioi,
    #[serde(rename = "OTD")]
    Otd,
    #[serde(rename = "DL")]
    Dl,
    #[serde(rename = "ND")]
    Nd,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Ot,
        FeatureKind::Ioi,
        FeatureKind::Otd,
        FeatureKind::Dl,
        FeatureKind::Nd,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Ot => "OT",
            FeatureKind::Ioi => "IOI",
            FeatureKind::Otd => "OTD",
            FeatureKind::Dl => "DL",
            FeatureKind::Nd => "ND",
        }
    }

    /// Distance used to compare norm and performer values of this quantity.
    pub fn metric(self) -> Metric {
        match self {
            FeatureKind::Ioi | FeatureKind::Otd => Metric::SimpleAbsolute,
            FeatureKind::Ot | FeatureKind::Dl | FeatureKind::Nd => Metric::Simple,
        }
    }

    /// Whether the quantity is defined between a note and its successor.
    pub fn needs_successor(self) -> bool {
        matches!(self, FeatureKind::Ioi | FeatureKind::Otd)
    }

    /// Parses a comma-separated list such as `IOI,DL,ND`.
    pub fn parse_list(list: &str) -> Result<Vec<FeatureKind>> {
        let kinds = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if kinds.is_empty() {
            return Err(Error::invalid("empty feature list"));
        }
        Ok(kinds)
    }

    /// Joins kinds as `IOI+DL+ND`.
    pub fn join(kinds: &[FeatureKind]) -> String {
        kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown feature `{s}` (expected OT, IOI, OTD, DL or ND)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    /// `x - y`
    Simple,
    /// `|x| - |y|`
    SimpleAbsolute,
}

impl Metric {
    /// Distance of `y` (performer) from `x` (norm).
    pub fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            Metric::Simple => x - y,
            Metric::SimpleAbsolute => x.abs() - y.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormNote {
    pub mean_onset: f64,
    pub mean_offset: f64,
    pub mean_dynamic: f64,
    /// Number of performers averaged.
    pub coverage: usize,
}

/// Across-performer average of every aligned position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormPerformance {
    pub notes: Vec<NormNote>,
    pub movement_starts: Vec<usize>,
}

/// A note as seen by the feature extractor: position-indexed, with the
/// dynamic as a real so norms and performers share one representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamNote {
    pub position: usize,
    pub movement: usize,
    pub onset: f64,
    pub offset: f64,
    pub dynamic: f64,
}

/// Position-ordered notes of one performer, or of the norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteStream {
    pub label: String,
    pub notes: Vec<StreamNote>,
}

pub fn compute_norm(table: &AlignedNoteTable) -> Result<NormPerformance> {
    table.validate()?;
    let mut notes = Vec::with_capacity(table.n_positions());
    for pos in 0..table.n_positions() {
        let present: Vec<_> = (0..table.n_performers()).filter_map(|p| table.cell(pos, p)).collect();
        if present.is_empty() {
            return Err(Error::invalid(format!("position {pos} has no notes")));
        }
        let count = present.len() as f64;
        let mean = |f: fn(&crate::midi_io::NoteEvent) -> f64| present.iter().map(|n| f(n)).sum::<f64>() / count;
        notes.push(NormNote {
            mean_onset: mean(|n| n.onset),
            mean_offset: mean(|n| n.offset),
            mean_dynamic: mean(|n| n.dynamic as f64),
            coverage: present.len(),
        });
    }
    Ok(NormPerformance {
        notes,
        movement_starts: table.movement_starts.clone(),
    })
}

pub fn performer_stream(table: &AlignedNoteTable, performer: usize) -> NoteStream {
    let movements = table.movement_of_positions();
    let notes = table.cells[performer]
        .iter()
        .enumerate()
        .filter_map(|(position, cell)| {
            cell.map(|n| StreamNote {
                position,
                movement: movements[position],
                onset: n.onset,
                offset: n.offset,
                dynamic: n.dynamic as f64,
            })
        })
        .collect();
    NoteStream {
        label: table.performer_ids[performer].clone(),
        notes,
    }
}

impl NormPerformance {
    fn stream_note(&self, position: usize, movement: usize) -> StreamNote {
        let n = &self.notes[position];
        StreamNote {
            position,
            movement,
            onset: n.mean_onset,
            offset: n.mean_offset,
            dynamic: n.mean_dynamic,
        }
    }

    /// The full norm as a stream.
    pub fn stream(&self) -> NoteStream {
        let movements = movement_of_positions(&self.movement_starts, self.notes.len());
        NoteStream {
            label: "norm".into(),
            notes: (0..self.notes.len()).map(|p| self.stream_note(p, movements[p])).collect(),
        }
    }

    /// The norm restricted to the positions present in `performer`, so that
    /// successor-based quantities span the same pair of positions in both.
    pub fn stream_along(&self, performer: &NoteStream) -> NoteStream {
        NoteStream {
            label: "norm".into(),
            notes: performer
                .notes
                .iter()
                .map(|n| self.stream_note(n.position, n.movement))
                .collect(),
        }
    }
}

fn movement_of_positions(starts: &[usize], n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    for (mvt, &start) in starts.iter().enumerate() {
        let end = starts.get(mvt + 1).copied().unwrap_or(n);
        out.extend(std::iter::repeat_n(mvt, end.saturating_sub(start)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub position: usize,
    /// Successor position for IOI and OTD.
    pub next: Option<usize>,
    pub value: f64,
}

/// One raw expressive quantity per note (or note pair) of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantitySeries {
    pub kind: FeatureKind,
    pub label: String,
    pub entries: Vec<Quantity>,
}

/// OT = onset, DL = dynamic, ND = offset − onset, and between consecutive
/// notes of the same movement IOI = next onset − onset and
/// OTD = next onset − offset.
pub fn derive_quantity(stream: &NoteStream, kind: FeatureKind) -> QuantitySeries {
    let single = |f: fn(&StreamNote) -> f64| {
        stream
            .notes
            .iter()
            .map(|n| Quantity {
                position: n.position,
                next: None,
                value: f(n),
            })
            .collect()
    };
    let paired = |f: fn(&StreamNote, &StreamNote) -> f64| {
        stream
            .notes
            .windows(2)
            .filter(|w| w[0].movement == w[1].movement)
            .map(|w| Quantity {
                position: w[0].position,
                next: Some(w[1].position),
                value: f(&w[0], &w[1]),
            })
            .collect()
    };
    let entries = match kind {
        FeatureKind::Ot => single(|n| n.onset),
        FeatureKind::Dl => single(|n| n.dynamic),
        FeatureKind::Nd => single(|n| n.offset - n.onset),
        FeatureKind::Ioi => paired(|a, b| b.onset - a.onset),
        FeatureKind::Otd => paired(|a, b| b.onset - a.offset),
    };
    QuantitySeries {
        kind,
        label: stream.label.clone(),
        entries,
    }
}

/// One performer's per-note deviations from the norm for one feature kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSeries {
    pub kind: FeatureKind,
    pub performer_id: String,
    /// Aligned position of each value (the first note for IOI and OTD).
    pub positions: Vec<usize>,
    pub values: Vec<f64>,
}

impl DeviationSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Deviation of the performer quantity `y` from the norm quantity `x` using
/// the kind's metric, over the entries present in both series.
pub fn deviations(performer: &QuantitySeries, norm: &QuantitySeries) -> Result<DeviationSeries> {
    if performer.kind != norm.kind {
        return Err(Error::invalid(format!(
            "cannot compare {} with {}",
            performer.kind, norm.kind
        )));
    }
    let metric = performer.kind.metric();
    let key = |q: &Quantity| (q.position, q.next);
    let mut positions = Vec::new();
    let mut values = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < performer.entries.len() && j < norm.entries.len() {
        let (p, n) = (&performer.entries[i], &norm.entries[j]);
        match key(p).cmp(&key(n)) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let value = metric.apply(n.value, p.value);
                if !value.is_finite() {
                    return Err(Error::invalid(format!("non-finite deviation at position {}", p.position)));
                }
                positions.push(p.position);
                values.push(value);
                i += 1;
                j += 1;
            }
        }
    }
    Ok(DeviationSeries {
        kind: performer.kind,
        performer_id: performer.label.clone(),
        positions,
        values,
    })
}

/// Deviation series of one performer column against the norm.
pub fn performer_deviations(
    table: &AlignedNoteTable,
    norm: &NormPerformance,
    performer: usize,
    kind: FeatureKind,
) -> Result<DeviationSeries> {
    let stream = performer_stream(table, performer);
    let norm_stream = norm.stream_along(&stream);
    deviations(&derive_quantity(&stream, kind), &derive_quantity(&norm_stream, kind))
}

/// All five deviation series of every performer in a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    pub performer_ids: Vec<String>,
    pub n_positions: usize,
    /// `series[performer][kind.index()]`.
    pub series: Vec<Vec<DeviationSeries>>,
}

impl FeatureDataset {
    pub fn series(&self, performer: usize, kind: FeatureKind) -> &DeviationSeries {
        &self.series[performer][kind.index()]
    }

    pub fn n_performers(&self) -> usize {
        self.performer_ids.len()
    }

    pub fn from_table(table: &AlignedNoteTable) -> Result<FeatureDataset> {
        let norm = compute_norm(table)?;
        FeatureDataset::from_table_and_norm(table, &norm)
    }

    pub fn from_table_and_norm(table: &AlignedNoteTable, norm: &NormPerformance) -> Result<FeatureDataset> {
        let series = (0..table.n_performers())
            .into_par_iter()
            .map(|p| {
                FeatureKind::ALL
                    .iter()
                    .map(|&kind| performer_deviations(table, norm, p, kind))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureDataset {
            performer_ids: table.performer_ids.clone(),
            n_positions: table.n_positions(),
            series,
        })
    }

    /// CSV dump with columns `performer,kind,position,value`.
    pub fn to_csv(&self, kinds: &[FeatureKind]) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("performer,kind,position,value\n");
        for (p, id) in self.performer_ids.iter().enumerate() {
            for &kind in kinds {
                let s = self.series(p, kind);
                for (pos, v) in s.positions.iter().zip(&s.values) {
                    writeln!(out, "{id},{kind},{pos},{v:?}").expect("string write");
                }
            }
        }
        out
    }

    /// Pearson correlation between two kinds, pairing values of the same
    /// performer at the same position and pooling all performers.
    pub fn feature_correlation(&self, a: FeatureKind, b: FeatureKind) -> Result<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for p in 0..self.n_performers() {
            let (sa, sb) = (self.series(p, a), self.series(p, b));
            let (mut i, mut j) = (0, 0);
            while i < sa.len() && j < sb.len() {
                match sa.positions[i].cmp(&sb.positions[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        xs.push(sa.values[i]);
                        ys.push(sb.values[j]);
                        i += 1;
                        j += 1;
                    }
                }
            }
        }
        pearson_r(&xs, &ys)
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 values"));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi_io::NoteEvent;

    fn stream(notes: &[(f64, f64, f64)]) -> NoteStream {
        NoteStream {
            label: "p".into(),
            notes: notes
                .iter()
                .enumerate()
                .map(|(position, &(onset, offset, dynamic))| StreamNote {
                    position,
                    movement: 0,
                    onset,
                    offset,
                    dynamic,
                })
                .collect(),
        }
    }

    fn values(q: &QuantitySeries) -> Vec<f64> {
        q.entries.iter().map(|e| e.value).collect()
    }

    fn note(onset: f64, offset: f64, dynamic: u8) -> Option<NoteEvent> {
        Some(NoteEvent { onset, offset, pitch: 60, dynamic })
    }

    #[test]
    fn derived_quantities_follow_definitions() {
        let s = stream(&[(0.0, 0.4, 60.0), (0.5, 1.0, 70.0)]);
        assert_eq!(values(&derive_quantity(&s, FeatureKind::Ioi)), vec![0.5]);
        let otd = values(&derive_quantity(&s, FeatureKind::Otd));
        assert!((otd[0] - 0.1).abs() < 1e-15);
        let nd = values(&derive_quantity(&s, FeatureKind::Nd));
        assert!((nd[0] - 0.4).abs() < 1e-15 && (nd[1] - 0.5).abs() < 1e-15);
        assert_eq!(values(&derive_quantity(&s, FeatureKind::Ot)), vec![0.0, 0.5]);
        assert_eq!(values(&derive_quantity(&s, FeatureKind::Dl)), vec![60.0, 70.0]);
    }

    #[test]
    fn legato_overlap_gives_negative_otd() {
        let s = stream(&[(0.0, 0.6, 60.0), (0.5, 1.0, 70.0)]);
        let otd = values(&derive_quantity(&s, FeatureKind::Otd));
        assert!((otd[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_note_stream_has_no_successor_quantities() {
        let s = stream(&[(0.0, 0.6, 60.0)]);
        assert!(derive_quantity(&s, FeatureKind::Ioi).entries.is_empty());
        assert!(derive_quantity(&s, FeatureKind::Otd).entries.is_empty());
    }

    #[test]
    fn simple_metric_uses_norm_minus_performer() {
        let norm = stream(&[(1.00, 2.0, 60.0)]);
        let perf = stream(&[(1.02, 2.0, 60.0)]);
        let d = deviations(&derive_quantity(&perf, FeatureKind::Ot), &derive_quantity(&norm, FeatureKind::Ot)).unwrap();
        assert!((d.values[0] + 0.02).abs() < 1e-15);
    }

    #[test]
    fn absolute_metric_on_otd() {
        // norm OTD -0.05, performer OTD +0.03
        let norm = stream(&[(0.0, 1.05, 60.0), (1.0, 2.0, 60.0)]);
        let perf = stream(&[(0.0, 0.97, 60.0), (1.0, 2.0, 60.0)]);
        let d = deviations(&derive_quantity(&perf, FeatureKind::Otd), &derive_quantity(&norm, FeatureKind::Otd)).unwrap();
        assert!((d.values[0] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let s = stream(&[(0.0, 1.0, 60.0)]);
        let err = deviations(&derive_quantity(&s, FeatureKind::Ot), &derive_quantity(&s, FeatureKind::Nd));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn norm_means() {
        let table = AlignedNoteTable {
            piece_id: "x".into(),
            performer_ids: vec!["a".into(), "b".into()],
            cells: vec![vec![note(1.0, 1.5, 60)], vec![note(2.0, 3.0, 61)]],
            movement_starts: vec![0],
        };
        let norm = compute_norm(&table).unwrap();
        assert_eq!(norm.notes[0].mean_onset, 1.5);
        assert_eq!(norm.notes[0].mean_offset, 2.25);
        assert_eq!(norm.notes[0].mean_dynamic, 60.5);
        assert_eq!(norm.notes[0].coverage, 2);
    }

    #[test]
    fn nine_performer_dynamic_mean() {
        let dyns = [60u8, 64, 62, 70, 58, 66, 64, 61, 63];
        let table = AlignedNoteTable {
            piece_id: "x".into(),
            performer_ids: (0..9).map(|i| format!("p{i}")).collect(),
            cells: dyns.iter().map(|&d| vec![note(0.0, 1.0, d)]).collect(),
            movement_starts: vec![0],
        };
        let norm = compute_norm(&table).unwrap();
        assert!((norm.notes[0].mean_dynamic - 568.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_performer_equals_norm() {
        let col = vec![note(0.0, 0.4, 50), note(0.5, 0.9, 70), note(1.1, 1.5, 90)];
        let table = AlignedNoteTable {
            piece_id: "x".into(),
            performer_ids: vec!["a".into(), "b".into()],
            cells: vec![col.clone(), col.clone()],
            movement_starts: vec![0],
        };
        let norm = compute_norm(&table).unwrap();
        for (n, c) in norm.notes.iter().zip(&col) {
            let c = c.unwrap();
            assert_eq!((n.mean_onset, n.mean_offset, n.mean_dynamic), (c.onset, c.offset, c.dynamic as f64));
        }
        let ds = FeatureDataset::from_table_and_norm(&table, &norm).unwrap();
        assert!(ds.series.iter().flatten().flat_map(|s| &s.values).all(|&v| v == 0.0));
    }

    #[test]
    fn missing_cell_spans_same_positions_in_norm() {
        let table = AlignedNoteTable {
            piece_id: "x".into(),
            performer_ids: vec!["a".into(), "b".into(), "c".into()],
            cells: vec![
                vec![note(0.0, 0.4, 60), note(1.0, 1.4, 60), note(2.0, 2.4, 60)],
                vec![note(0.0, 0.4, 60), note(1.2, 1.4, 60), note(2.2, 2.4, 60)],
                vec![note(0.3, 0.4, 60), None, note(2.6, 2.8, 60)],
            ],
            movement_starts: vec![0],
        };
        let norm = compute_norm(&table).unwrap();
        let ioi = performer_deviations(&table, &norm, 2, FeatureKind::Ioi).unwrap();
        assert_eq!(ioi.positions, vec![0]);
        // norm IOI from position 0 to 2: mean(2.0, 2.2, 2.6) - mean(0, 0, 0.3)
        let norm_ioi = (6.8 / 3.0) - (0.3 / 3.0);
        assert!((ioi.values[0] - (norm_ioi - 2.3)).abs() < 1e-12);
    }

    #[test]
    fn successor_quantities_reset_at_movement_boundaries() {
        let mut s = stream(&[(0.0, 0.4, 60.0), (0.5, 1.0, 70.0), (0.0, 0.3, 60.0), (0.4, 0.5, 60.0)]);
        s.notes[2].movement = 1;
        s.notes[3].movement = 1;
        let ioi = derive_quantity(&s, FeatureKind::Ioi);
        assert_eq!(ioi.entries.iter().map(|e| e.position).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 4.0, 7.0];
        assert!((pearson_r(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson_r(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson_r(&a, &[3.0; 4]), Err(Error::UndefinedCorrelation)));
        assert!(pearson_r(&a, &a[..3]).is_err());
        assert!(pearson_r(&a[..1], &a[..1]).is_err());
    }

    #[test]
    fn feature_names_parse() {
        assert_eq!(
            FeatureKind::parse_list("IOI, dl,ND").unwrap(),
            vec![FeatureKind::Ioi, FeatureKind::Dl, FeatureKind::Nd]
        );
        assert!(FeatureKind::parse_list("IOI,XYZ").is_err());
        assert_eq!(FeatureKind::join(&[FeatureKind::Ioi, FeatureKind::Dl]), "IOI+DL");
    }
}
