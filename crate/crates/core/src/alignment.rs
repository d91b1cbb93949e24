//! Note-to-note alignment of performances against a reference.
//!
//! Alignment is a global edit-distance DP over the (onset, pitch)-ordered
//! pitch sequences. The DP runs inside a diagonal band that doubles until
//! its optimum provably beats every path leaving the band, so the result is
//! the exact global optimum at near-linear cost for similar sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::midi_io::{NoteEvent, Performance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCosts {
    /// Pairing two notes of different pitch.
    pub substitution: f64,
    /// A performance note with no reference counterpart.
    pub insertion: f64,
    /// A reference note the performance skipped.
    pub deletion: f64,
}

impl Default for AlignmentCosts {
    fn default() -> Self {
        AlignmentCosts {
            substitution: 1.0,
            insertion: 0.6,
            deletion: 0.6,
        }
    }
}

impl AlignmentCosts {
    fn validate(&self) -> Result<()> {
        let ok = |c: f64| c.is_finite() && c >= 0.0;
        if ok(self.substitution) && ok(self.insertion) && ok(self.deletion) {
            Ok(())
        } else {
            Err(Error::invalid("alignment costs must be finite and non-negative"))
        }
    }
}

/// Partition of both note lists into matched pairs and unmatched notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteAlignment {
    /// (reference index, performance index), strictly increasing in both.
    pub pairs: Vec<(usize, usize)>,
    /// Performance notes without a reference match.
    pub insertions: Vec<usize>,
    /// Reference notes without a performance match.
    pub deletions: Vec<usize>,
    pub cost: f64,
}

impl NoteAlignment {
    pub fn substitutions(&self, reference: &[u8], performance: &[u8]) -> usize {
        self.pairs
            .iter()
            .filter(|&&(r, p)| reference[r] != performance[p])
            .count()
    }
}

const FROM_DIAG: u8 = 0;
const FROM_UP: u8 = 1; // deletion: reference note consumed alone
const FROM_LEFT: u8 = 2; // insertion: performance note consumed alone

/// Globally optimal alignment of two pitch sequences.
///
/// Ties prefer a pair, then a deletion, then an insertion, at every cell.
pub fn align_pitches(reference: &[u8], performance: &[u8], costs: &AlignmentCosts) -> NoteAlignment {
    let n = reference.len() as i64;
    let m = performance.len() as i64;
    let diff = m - n;
    let min_indel = costs.insertion.min(costs.deletion);
    let mut half_width: i64 = 16;
    loop {
        let lo = diff.min(0) - half_width;
        let hi = diff.max(0) + half_width;
        let covers_all = lo <= -n && hi >= m;
        let (cost, trace) = banded_dp(reference, performance, costs, lo, hi);
        // Any path that leaves the band visits a diagonal d outside [lo, hi]
        // and so needs at least |d| + |diff - d| >= |diff| + 2(w + 1) indels.
        let escape_bound = min_indel * (diff.abs() + 2 * (half_width + 1)) as f64;
        if covers_all || cost <= escape_bound {
            return traceback(&trace, reference.len(), performance.len(), lo, hi, cost);
        }
        half_width *= 2;
    }
}

fn banded_dp(
    reference: &[u8],
    performance: &[u8],
    costs: &AlignmentCosts,
    lo: i64,
    hi: i64,
) -> (f64, Vec<u8>) {
    let n = reference.len();
    let m = performance.len() as i64;
    let width = (hi - lo + 1) as usize;
    let mut trace = vec![u8::MAX; (n + 1) * width];
    let mut prev = vec![f64::INFINITY; width];
    let mut cur = vec![f64::INFINITY; width];

    // row 0: only insertions
    for k in 0..width {
        let j = k as i64 + lo;
        if (0..=m).contains(&j) {
            prev[k] = j as f64 * costs.insertion;
            trace[k] = if j == 0 { u8::MAX } else { FROM_LEFT };
        }
    }

    for i in 1..=n {
        let row = i * width;
        for k in 0..width {
            let j = i as i64 + k as i64 + lo;
            cur[k] = f64::INFINITY;
            if j < 0 || j > m {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut from = u8::MAX;
            if j >= 1 {
                let step = if reference[i - 1] == performance[(j - 1) as usize] {
                    0.0
                } else {
                    costs.substitution
                };
                let c = prev[k] + step;
                if c < best {
                    best = c;
                    from = FROM_DIAG;
                }
            }
            if k + 1 < width {
                let c = prev[k + 1] + costs.deletion;
                if c < best {
                    best = c;
                    from = FROM_UP;
                }
            }
            if k >= 1 && j >= 1 {
                let c = cur[k - 1] + costs.insertion;
                if c < best {
                    best = c;
                    from = FROM_LEFT;
                }
            }
            cur[k] = best;
            trace[row + k] = from;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let final_k = (m - n as i64 - lo) as usize;
    (prev[final_k], trace)
}

fn traceback(trace: &[u8], n: usize, m: usize, lo: i64, hi: i64, cost: f64) -> NoteAlignment {
    let width = (hi - lo + 1) as usize;
    let mut pairs = Vec::new();
    let mut insertions = Vec::new();
    let mut deletions = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let k = (j as i64 - i as i64 - lo) as usize;
        match trace[i * width + k] {
            FROM_DIAG => {
                i -= 1;
                j -= 1;
                pairs.push((i, j));
            }
            FROM_UP => {
                i -= 1;
                deletions.push(i);
            }
            FROM_LEFT => {
                j -= 1;
                insertions.push(j);
            }
            _ => unreachable!("traceback left the band"),
        }
    }
    pairs.reverse();
    insertions.reverse();
    deletions.reverse();
    NoteAlignment {
        pairs,
        insertions,
        deletions,
        cost,
    }
}

/// Aligns a performance to a reference performance.
pub fn align_pair(reference: &Performance, performance: &Performance, costs: &AlignmentCosts) -> NoteAlignment {
    align_pitches(&reference.pitches(), &performance.pitches(), costs)
}

/// How the reference note sequence is chosen in [`build_table`].
#[derive(Debug, Clone, Default, PartialEq)]
pub enum ReferencePolicy {
    /// The performance with the median note count (lower median, first in
    /// input order on ties).
    #[default]
    MedianLength,
    /// The performance at this input index.
    Index(usize),
    /// An external note list, e.g. a score.
    Explicit(Performance),
}

/// Position × performer grid of aligned notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedNoteTable {
    pub piece_id: String,
    pub performer_ids: Vec<String>,
    /// `cells[performer][position]`.
    pub cells: Vec<Vec<Option<NoteEvent>>>,
    /// First position of each movement; always starts with 0.
    pub movement_starts: Vec<usize>,
}

impl AlignedNoteTable {
    pub fn n_positions(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    pub fn n_performers(&self) -> usize {
        self.performer_ids.len()
    }

    pub fn cell(&self, position: usize, performer: usize) -> Option<&NoteEvent> {
        self.cells[performer][position].as_ref()
    }

    pub fn coverage(&self, position: usize) -> usize {
        self.cells.iter().filter(|col| col[position].is_some()).count()
    }

    /// Movement index of every position.
    pub fn movement_of_positions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_positions());
        for (mvt, &start) in self.movement_starts.iter().enumerate() {
            let end = self.movement_starts.get(mvt + 1).copied().unwrap_or(self.n_positions());
            out.extend(std::iter::repeat_n(mvt, end - start));
        }
        out
    }

    /// Checks shape, movement bookkeeping and per-column onset monotonicity
    /// within each movement.
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.performer_ids.len() {
            return Err(Error::invalid("one column per performer expected"));
        }
        let n = self.n_positions();
        if self.cells.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("columns differ in length"));
        }
        if self.movement_starts.first() != Some(&0)
            || self.movement_starts.windows(2).any(|w| w[0] > w[1])
            || self.movement_starts.last().is_some_and(|&s| s > n)
        {
            return Err(Error::invalid("malformed movement boundaries"));
        }
        let movements = self.movement_of_positions();
        for (p, col) in self.cells.iter().enumerate() {
            let mut last: Option<(usize, f64)> = None;
            for (pos, cell) in col.iter().enumerate() {
                if let Some(note) = cell {
                    if let Some((mvt, onset)) = last {
                        if mvt == movements[pos] && note.onset < onset {
                            return Err(Error::invalid(format!(
                                "performer {} onsets decrease at position {pos}",
                                self.performer_ids[p]
                            )));
                        }
                    }
                    last = Some((movements[pos], note.onset));
                }
            }
        }
        Ok(())
    }

    /// Joins per-movement tables of the same performers end to end.
    pub fn concat(tables: Vec<AlignedNoteTable>) -> Result<AlignedNoteTable> {
        let mut iter = tables.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::invalid("no tables to concatenate"))?;
        for table in iter {
            if table.performer_ids != out.performer_ids {
                return Err(Error::invalid("movements have different performers"));
            }
            let offset = out.n_positions();
            out.movement_starts
                .extend(table.movement_starts.iter().map(|s| s + offset));
            for (dst, src) in out.cells.iter_mut().zip(table.cells) {
                dst.extend(src);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformerAlignmentStats {
    pub performer_id: String,
    pub pairs: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub cost: f64,
}

/// Summary written next to an aligned table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub reference: String,
    pub reference_notes: usize,
    pub n_positions: usize,
    pub performers: Vec<PerformerAlignmentStats>,
    /// Reference indices dropped for insufficient coverage.
    pub dropped_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableBuild {
    pub table: AlignedNoteTable,
    pub report: AlignmentReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableOptions {
    pub reference: ReferencePolicy,
    pub costs: AlignmentCosts,
    /// Minimum number of matched performers for a position to be kept.
    pub min_coverage: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            reference: ReferencePolicy::MedianLength,
            costs: AlignmentCosts::default(),
            min_coverage: 2,
        }
    }
}

/// Aligns every performance to the chosen reference and collects the
/// correspondences into an [`AlignedNoteTable`].
pub fn build_table(performances: &[Performance], options: &TableOptions) -> Result<TableBuild> {
    if performances.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 performances, got {}",
            performances.len()
        )));
    }
    if options.min_coverage < 2 {
        return Err(Error::invalid("min_coverage must be at least 2"));
    }
    options.costs.validate()?;
    if let Some(p) = performances.iter().find(|p| p.is_empty()) {
        return Err(Error::invalid(format!("performance {} has no notes", p.performer_id)));
    }

    let reference = match &options.reference {
        ReferencePolicy::MedianLength => {
            let mut order: Vec<usize> = (0..performances.len()).collect();
            order.sort_by_key(|&i| (performances[i].len(), i));
            &performances[order[(order.len() - 1) / 2]]
        }
        ReferencePolicy::Index(i) => performances
            .get(*i)
            .ok_or_else(|| Error::invalid(format!("reference index {i} out of range")))?,
        ReferencePolicy::Explicit(score) => {
            if score.is_empty() {
                return Err(Error::invalid("reference has no notes"));
            }
            score
        }
    };

    let ref_pitches = reference.pitches();
    let alignments: Vec<NoteAlignment> = {
        use rayon::prelude::*;
        performances
            .par_iter()
            .map(|p| align_pitches(&ref_pitches, &p.pitches(), &options.costs))
            .collect()
    };

    let n_ref = reference.len();
    let mut full: Vec<Vec<Option<NoteEvent>>> = Vec::with_capacity(performances.len());
    for (perf, alignment) in performances.iter().zip(&alignments) {
        let mut col = vec![None; n_ref];
        for &(r, p) in &alignment.pairs {
            col[r] = Some(perf.notes()[p]);
        }
        full.push(col);
    }

    let keep: Vec<bool> = (0..n_ref)
        .map(|pos| full.iter().filter(|c| c[pos].is_some()).count() >= options.min_coverage)
        .collect();
    let dropped_positions: Vec<usize> = (0..n_ref).filter(|&p| !keep[p]).collect();
    let cells: Vec<Vec<Option<NoteEvent>>> = full
        .into_iter()
        .map(|col| col.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(c, _)| c).collect())
        .collect();

    let performers = performances
        .iter()
        .zip(&alignments)
        .map(|(perf, a)| PerformerAlignmentStats {
            performer_id: perf.performer_id.clone(),
            pairs: a.pairs.len(),
            substitutions: a.substitutions(&ref_pitches, &perf.pitches()),
            insertions: a.insertions.len(),
            deletions: a.deletions.len(),
            cost: a.cost,
        })
        .collect();

    let table = AlignedNoteTable {
        piece_id: reference.piece_id.clone(),
        performer_ids: performances.iter().map(|p| p.performer_id.clone()).collect(),
        cells,
        movement_starts: vec![0],
    };
    let report = AlignmentReport {
        reference: reference.performer_id.clone(),
        reference_notes: n_ref,
        n_positions: table.n_positions(),
        performers,
        dropped_positions,
    };
    Ok(TableBuild { table, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perf(id: &str, pitches: &[u8]) -> Performance {
        let notes = pitches
            .iter()
            .enumerate()
            .map(|(i, &pitch)| NoteEvent {
                onset: i as f64 * 0.5,
                offset: i as f64 * 0.5 + 0.4,
                pitch,
                dynamic: 64,
            })
            .collect();
        Performance::new(id, "piece", notes)
    }

    #[test]
    fn identity_alignment() {
        let seq = [60, 62, 64, 65, 67, 67, 60];
        let a = align_pitches(&seq, &seq, &AlignmentCosts::default());
        assert_eq!(a.pairs, (0..seq.len()).map(|i| (i, i)).collect::<Vec<_>>());
        assert!(a.insertions.is_empty() && a.deletions.is_empty());
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn substitution_beats_indel_pair() {
        let a = align_pitches(&[60, 62, 64], &[60, 65, 64], &AlignmentCosts::default());
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.cost, 1.0);
        assert_eq!(a.substitutions(&[60, 62, 64], &[60, 65, 64]), 1);
    }

    #[test]
    fn inserted_note_is_reported() {
        let reference = [60, 62, 64, 65, 67];
        let performance = [60, 62, 71, 64, 65, 67];
        let a = align_pitches(&reference, &performance, &AlignmentCosts::default());
        assert_eq!(a.insertions, vec![2]);
        assert!(a.deletions.is_empty());
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 3), (3, 4), (4, 5)]);
        assert!((a.cost - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_sequences() {
        let c = AlignmentCosts::default();
        let a = align_pitches(&[], &[60, 61], &c);
        assert_eq!(a.insertions, vec![0, 1]);
        let a = align_pitches(&[60, 61], &[], &c);
        assert_eq!(a.deletions, vec![0, 1]);
        let a = align_pitches(&[], &[], &c);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn band_widens_for_distant_sequences() {
        // long shifted sequences force several band doublings
        let reference: Vec<u8> = (0..300).map(|i| (i % 50) as u8 + 30).collect();
        let mut performance: Vec<u8> = vec![100; 80];
        performance.extend(&reference);
        let a = align_pitches(&reference, &performance, &AlignmentCosts::default());
        assert_eq!(a.insertions, (0..80).collect::<Vec<_>>());
        assert!((a.cost - 80.0 * 0.6).abs() < 1e-9);

        let c = AlignmentCosts { substitution: 1.0, insertion: 0.0, deletion: 0.0 };
        let a = align_pitches(&[1, 2, 3], &[3, 2, 1], &c);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn build_table_identical_performances() {
        let seq = [60, 64, 67, 72, 71, 69];
        let perfs: Vec<Performance> = (0..9).map(|i| perf(&format!("p{i}"), &seq)).collect();
        let built = build_table(&perfs, &TableOptions::default()).unwrap();
        assert_eq!(built.table.n_positions(), seq.len());
        assert!(built.table.cells.iter().flatten().all(Option::is_some));
        assert!(built.report.dropped_positions.is_empty());
        built.table.validate().unwrap();
    }

    #[test]
    fn build_table_missing_note_keeps_position() {
        let seq = [60, 64, 67, 72];
        let perfs = vec![perf("a", &seq), perf("b", &seq), perf("c", &[60, 64, 72])];
        let built = build_table(&perfs, &TableOptions::default()).unwrap();
        let t = &built.table;
        assert_eq!(t.n_positions(), 4);
        assert!(t.cell(2, 2).is_none());
        assert_eq!(t.coverage(2), 2);
        assert_eq!(built.report.performers[2].deletions, 1);
        assert_eq!(built.report.reference, "a");
    }

    #[test]
    fn build_table_drops_low_coverage() {
        let perfs = vec![perf("a", &[60, 64, 67]), perf("b", &[60, 67]), perf("c", &[60, 67])];
        let opts = TableOptions { reference: ReferencePolicy::Index(0), ..TableOptions::default() };
        let built = build_table(&perfs, &opts).unwrap();
        assert_eq!(built.report.dropped_positions, vec![1]);
        assert_eq!(built.table.n_positions(), 2);
    }

    #[test]
    fn build_table_rejects_single_performance() {
        assert!(matches!(
            build_table(&[perf("a", &[60])], &TableOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn median_reference_choice() {
        let perfs = vec![perf("a", &[60, 62, 64, 65]), perf("b", &[60]), perf("c", &[60, 62])];
        let built = build_table(&perfs, &TableOptions::default()).unwrap();
        assert_eq!(built.report.reference, "c");
    }

    #[test]
    fn concat_tracks_movements() {
        let seq = [60, 62];
        let perfs = vec![perf("a", &seq), perf("b", &seq)];
        let t1 = build_table(&perfs, &TableOptions::default()).unwrap().table;
        let t2 = t1.clone();
        let t = AlignedNoteTable::concat(vec![t1, t2]).unwrap();
        assert_eq!(t.movement_starts, vec![0, 2]);
        assert_eq!(t.movement_of_positions(), vec![0, 0, 1, 1]);
        t.validate().unwrap();
    }
}
