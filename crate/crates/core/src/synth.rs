//! Synthetic scores and performers with known expressive profiles.
//!
//! Score times lie on a 1/1024 s grid so that an identity rendering
//! reproduces the score bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{build_table, ReferencePolicy, TableOptions};
use crate::error::{Error, Result};
use crate::evaluation::{run_cv, EvaluationReport, ExperimentConfig};
use crate::features::{FeatureDataset, FeatureKind};
use crate::midi_io::{NoteEvent, Performance};

const TICK: f64 = 1.0 / 1024.0;
/// Score onsets start here so jittered onsets stay non-negative.
const LEAD_IN: f64 = 1.0;
const MIN_IOI: f64 = 0.1;
/// Bound on `|jitter|` as a fraction of the shortest scaled IOI; keeps onset
/// groups in score order.
const JITTER_LIMIT: f64 = 0.4;
const MIN_DURATION: f64 = 0.02;
const CHORD_PROBABILITY: f64 = 0.07;

/// Mean and standard deviation of a Gaussian, optionally mixed with a
/// second mode of the same spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub mean: f64,
    pub sd: f64,
    /// `(mean, weight)` of a second mode.
    pub second_mode: Option<(f64, f64)>,
}

impl Shift {
    pub const ZERO: Shift = Shift::normal(0.0, 0.0);

    pub const fn normal(mean: f64, sd: f64) -> Shift {
        Shift { mean, sd, second_mode: None }
    }

    /// Mean of the (possibly bimodal) distribution.
    pub fn expected(&self) -> f64 {
        match self.second_mode {
            Some((m2, w)) => (1.0 - w) * self.mean + w * m2,
            None => self.mean,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.mean.is_finite() && self.sd.is_finite() && self.sd >= 0.0) {
            return Err(Error::invalid(format!("{name}: need finite mean and sd >= 0")));
        }
        if let Some((m2, w)) = self.second_mode {
            if !(m2.is_finite() && (0.0..=1.0).contains(&w)) {
                return Err(Error::invalid(format!("{name}: second mode needs a weight in [0, 1]")));
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mean = match self.second_mode {
            Some((m2, w)) if rng.random::<f64>() < w => m2,
            _ => self.mean,
        };
        if self.sd == 0.0 {
            return mean;
        }
        Normal::new(mean, self.sd).expect("validated sd").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformerProfile {
    pub id: String,
    /// Multiplies every score time; in [0.5, 2.0].
    pub tempo_scale: f64,
    /// Onset displacement in seconds, drawn once per onset group.
    pub onset_jitter: Shift,
    /// Added to the score velocity.
    pub velocity_shift: Shift,
    /// Seconds by which each offset is pulled earlier, lengthening the gap
    /// to the next note.
    pub articulation_bias: Shift,
    /// Multiplies every scaled duration.
    pub duration_scale: f64,
    pub seed: u64,
}

impl PerformerProfile {
    /// Renders the score unchanged.
    pub fn identity(id: impl Into<String>, seed: u64) -> PerformerProfile {
        PerformerProfile {
            id: id.into(),
            tempo_scale: 1.0,
            onset_jitter: Shift::ZERO,
            velocity_shift: Shift::ZERO,
            articulation_bias: Shift::ZERO,
            duration_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=2.0).contains(&self.tempo_scale) {
            return Err(Error::invalid(format!("tempo_scale {} outside [0.5, 2]", self.tempo_scale)));
        }
        if !(self.duration_scale.is_finite() && self.duration_scale > 0.0) {
            return Err(Error::invalid("duration_scale must be positive"));
        }
        self.onset_jitter.validate("onset_jitter")?;
        self.velocity_shift.validate("velocity_shift")?;
        self.articulation_bias.validate("articulation_bias")
    }

    fn distinct_from(&self, other: &PerformerProfile) -> bool {
        self.id != other.id
    }
}

fn grid(ticks: u32) -> f64 {
    ticks as f64 * TICK
}

/// A mostly monophonic score of exactly `n_notes` notes with occasional
/// chords of up to three notes. Durations run 1.4 to 2 times the gap to the
/// next onset, as in legato or pedalled playing, so every profile made by
/// [`well_separated_profiles`] still overlaps consecutive notes.
pub fn generate_score(n_notes: usize, seed: u64) -> Result<Performance> {
    if n_notes < 2 {
        return Err(Error::invalid("a score needs at least 2 notes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_ticks = (MIN_IOI / TICK).ceil() as u32;

    // Onset groups: (onset ticks, pitches).
    let mut groups: Vec<(u32, Vec<u8>)> = Vec::new();
    let mut onset = (LEAD_IN / TICK) as u32;
    let mut pitch: i32 = rng.random_range(55..=77);
    let mut placed = 0;
    while placed < n_notes {
        let remaining = n_notes - placed;
        let size = if remaining > 1 && rng.random::<f64>() < CHORD_PROBABILITY {
            rng.random_range(2..=remaining.min(3))
        } else {
            1
        };
        pitch = (pitch + rng.random_range(-7..=7)).clamp(36, 96);
        let mut chord = vec![pitch as u8];
        while chord.len() < size {
            let candidate = (pitch + rng.random_range(-12..=12)).clamp(36, 96) as u8;
            if !chord.contains(&candidate) {
                chord.push(candidate);
            }
        }
        chord.sort_unstable();
        groups.push((onset, chord));
        placed += size;
        onset += rng.random_range(min_ticks..=1024);
    }

    let mut notes = Vec::with_capacity(n_notes);
    let mut dynamic: i32 = rng.random_range(55..=85);
    for (g, (start, pitches)) in groups.iter().enumerate() {
        let ioi = match groups.get(g + 1) {
            Some((next, _)) => next - start,
            None => rng.random_range(min_ticks..=1024),
        };
        let duration = ((ioi as f64 * rng.random_range(1.4..2.0)).round() as u32).max(1);
        for &p in pitches {
            // Never overlap the next note of the same pitch.
            let next_same = groups[g + 1..]
                .iter()
                .find(|(_, ps)| ps.contains(&p))
                .map(|(t, _)| *t);
            let end = next_same.map_or(start + duration, |t| (start + duration).min(t));
            dynamic = (dynamic + rng.random_range(-6..=6)).clamp(40, 100);
            notes.push(NoteEvent {
                onset: grid(*start),
                offset: grid(end),
                pitch: p,
                dynamic: dynamic as u8,
            });
        }
    }
    let score = Performance::new("score", format!("synthetic-{seed}"), notes);
    score.validate()?;
    Ok(score)
}

/// Plays `score` with the tendencies of `profile`. Note order and pitches
/// are preserved, so the rendering aligns to the score one-to-one.
pub fn render_performer(score: &Performance, profile: &PerformerProfile) -> Result<Performance> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let notes = score.notes();
    let tempo = profile.tempo_scale;
    let jitter_bound = JITTER_LIMIT * tempo * MIN_IOI;

    let mut onsets = Vec::with_capacity(notes.len());
    let mut shift = 0.0;
    for (i, n) in notes.iter().enumerate() {
        if i == 0 || n.onset != notes[i - 1].onset {
            shift = profile.onset_jitter.sample(&mut rng).clamp(-jitter_bound, jitter_bound);
        }
        onsets.push(n.onset * tempo + shift);
    }

    let mut rendered = Vec::with_capacity(notes.len());
    for (i, n) in notes.iter().enumerate() {
        let articulation = profile.articulation_bias.sample(&mut rng);
        let velocity = profile.velocity_shift.sample(&mut rng);
        let scaled = n.duration() * tempo * profile.duration_scale;
        let duration = if articulation == 0.0 { scaled } else { (scaled - articulation).max(MIN_DURATION) };
        let mut offset = onsets[i] + duration;
        if let Some(j) = (i + 1..notes.len()).find(|&j| notes[j].pitch == n.pitch && notes[j].onset > n.onset) {
            offset = offset.min(onsets[j]);
        }
        let dynamic = (n.dynamic as f64 + velocity).round().clamp(1.0, 127.0) as u8;
        rendered.push(NoteEvent {
            onset: onsets[i],
            offset,
            pitch: n.pitch,
            dynamic,
        });
    }
    let out = Performance::new(profile.id.clone(), score.piece_id.clone(), rendered);
    out.validate()?;
    Ok(out)
}

/// Profiles whose parameters are spread evenly over `[-1, 1] × separation`,
/// with an independent permutation per parameter so that no two performers
/// share a rank in every dimension.
pub fn well_separated_profiles(n: usize, separation: f64, seed: u64) -> Vec<PerformerProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = |rng: &mut ChaCha8Rng| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order
            .into_iter()
            .map(|r| if n > 1 { 2.0 * r as f64 / (n - 1) as f64 - 1.0 } else { 0.0 })
            .collect::<Vec<f64>>()
    };
    let tempo = levels(&mut rng);
    let velocity = levels(&mut rng);
    let duration = levels(&mut rng);
    let jitter = levels(&mut rng);
    let articulation = levels(&mut rng);
    (0..n)
        .map(|i| PerformerProfile {
            id: format!("P{:02}", i + 1),
            tempo_scale: (1.0 + 0.08 * separation * tempo[i]).clamp(0.5, 2.0),
            onset_jitter: Shift::normal(0.01 * separation * jitter[i], 0.008),
            velocity_shift: Shift::normal(10.0 * separation * velocity[i], 4.0),
            articulation_bias: Shift::normal(0.02 * separation * articulation[i], 0.01),
            duration_scale: (1.0 + 0.25 * separation * duration[i]).max(0.05),
            seed: seed.wrapping_mul(1_000).wrapping_add(i as u64 + 1),
        })
        .collect()
}

/// How far apart the performers' deviation distributions are for one
/// feature: variance of the per-performer means over the mean
/// within-performer variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separability {
    pub kind: FeatureKind,
    pub between_variance: f64,
    pub within_variance: f64,
    pub ratio: f64,
}

pub fn separability(dataset: &FeatureDataset, kind: FeatureKind) -> Separability {
    let stats: Vec<(f64, f64)> = (0..dataset.n_performers())
        .map(|p| {
            let v = &dataset.series(p, kind).values;
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var)
        })
        .collect();
    let k = stats.len().max(1) as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / k;
    let between_variance = stats.iter().map(|s| (s.0 - grand) * (s.0 - grand)).sum::<f64>() / k;
    let within_variance = stats.iter().map(|s| s.1).sum::<f64>() / k;
    let ratio = if within_variance > 0.0 { between_variance / within_variance } else { f64::INFINITY };
    Separability {
        kind,
        between_variance,
        within_variance,
        ratio,
    }
}

/// A rendered score and everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub score: Performance,
    pub performances: Vec<Performance>,
    pub dataset: FeatureDataset,
    /// Every rendering aligned to the score position for position.
    pub identity_alignment: bool,
}

/// Generates the score, renders every profile, aligns the renderings to the
/// score and extracts deviation features.
pub fn synthesize(n_notes: usize, profiles: &[PerformerProfile], score_seed: u64) -> Result<SyntheticSet> {
    if profiles.len() < 2 {
        return Err(Error::invalid("need at least 2 profiles"));
    }
    for (i, a) in profiles.iter().enumerate() {
        if profiles[i + 1..].iter().any(|b| !a.distinct_from(b)) {
            return Err(Error::invalid(format!("duplicate profile id {}", a.id)));
        }
    }
    let score = generate_score(n_notes, score_seed)?;
    let performances = profiles
        .par_iter()
        .map(|p| render_performer(&score, p))
        .collect::<Result<Vec<_>>>()?;
    let options = TableOptions {
        reference: ReferencePolicy::Explicit(score.clone()),
        ..TableOptions::default()
    };
    let built = build_table(&performances, &options)?;
    let identity_alignment = built.table.n_positions() == score.len()
        && performances.iter().enumerate().all(|(p, perf)| {
            perf.notes()
                .iter()
                .enumerate()
                .all(|(pos, note)| built.table.cell(pos, p) == Some(note))
        });
    let dataset = FeatureDataset::from_table(&built.table)?;
    Ok(SyntheticSet {
        score,
        performances,
        dataset,
        identity_alignment,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub report: EvaluationReport,
    pub separability: Vec<Separability>,
    pub identity_alignment: bool,
}

/// End-to-end run: synthesize, then cross-validate with `config`.
pub fn benchmark(
    n_notes: usize,
    profiles: &[PerformerProfile],
    score_seed: u64,
    config: &ExperimentConfig,
) -> Result<BenchmarkResult> {
    let set = synthesize(n_notes, profiles, score_seed)?;
    let report = run_cv(&set.dataset, config)?;
    Ok(BenchmarkResult {
        report,
        separability: FeatureKind::ALL.iter().map(|&k| separability(&set.dataset, k)).collect(),
        identity_alignment: set.identity_alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_is_deterministic_and_sized() {
        let a = generate_score(500, 3).unwrap();
        assert_eq!(a, generate_score(500, 3).unwrap());
        assert_ne!(a, generate_score(500, 4).unwrap());
        assert_eq!(a.len(), 500);
        assert_eq!(generate_score(16980, 1).unwrap().len(), 16980);
        assert!(generate_score(1, 0).is_err());
    }

    #[test]
    fn score_ranges() {
        let s = generate_score(2000, 11).unwrap();
        let notes = s.notes();
        assert!(notes.iter().all(|n| (36..=96).contains(&n.pitch) && (40..=100).contains(&n.dynamic)));
        let mut onsets: Vec<f64> = notes.iter().map(|n| n.onset).collect();
        onsets.dedup();
        assert!(onsets.windows(2).all(|w| (0.1 - 1e-9..=1.0 + 1e-9).contains(&(w[1] - w[0]))));
        assert!(onsets.len() < notes.len(), "expected some chords");
    }

    #[test]
    fn identity_profile_reproduces_score() {
        let s = generate_score(300, 5).unwrap();
        let r = render_performer(&s, &PerformerProfile::identity("score", 9)).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn tempo_is_linear_without_jitter() {
        let s = generate_score(300, 5).unwrap();
        let mut p = PerformerProfile::identity("slow", 1);
        p.tempo_scale = 1.1;
        let r = render_performer(&s, &p).unwrap();
        for (w, v) in s.notes().windows(2).zip(r.notes().windows(2)) {
            assert!(((v[1].onset - v[0].onset) - 1.1 * (w[1].onset - w[0].onset)).abs() < 1e-12);
        }
    }

    #[test]
    fn rendering_preserves_order_and_pitch() {
        let s = generate_score(1000, 2).unwrap();
        for p in well_separated_profiles(4, 2.0, 8) {
            let r = render_performer(&s, &p).unwrap();
            assert_eq!(r.pitches(), s.pitches());
        }
    }

    #[test]
    fn profile_validation() {
        let mut p = PerformerProfile::identity("x", 0);
        p.tempo_scale = 2.5;
        assert!(p.validate().is_err());
        let mut p = PerformerProfile::identity("x", 0);
        p.velocity_shift.sd = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn bimodal_shift_mean() {
        let s = Shift { mean: -10.0, sd: 1.0, second_mode: Some((10.0, 0.25)) };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20000;
        let mean = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - s.expected()).abs() < 0.2);
    }
}
