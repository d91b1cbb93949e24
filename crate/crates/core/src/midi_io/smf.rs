use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

use super::{note_order, NoteEvent, Performance};

const DEFAULT_TEMPO: u32 = 500_000;

/// Time division from the SMF header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Ticks per quarter note; real time then depends on the tempo map.
    Metrical(u16),
    /// SMPTE frames per second and ticks per frame; tempo events are ignored.
    Timecode { fps: u8, ticks_per_frame: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TempoSegment {
    tick: u64,
    micros_per_quarter: u32,
    start_seconds: f64,
}

/// Piecewise-constant tempo map converting absolute ticks to seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TempoMap {
    timing: Timing,
    segments: Vec<TempoSegment>,
}

impl TempoMap {
    /// `changes` are (tick, microseconds per quarter) pairs; later entries win
    /// on equal ticks. A 120 BPM segment is assumed before the first change.
    pub fn new(timing: Timing, mut changes: Vec<(u64, u32)>) -> Self {
        changes.sort_by_key(|&(tick, _)| tick);
        let mut segments: Vec<TempoSegment> = vec![TempoSegment {
            tick: 0,
            micros_per_quarter: DEFAULT_TEMPO,
            start_seconds: 0.0,
        }];
        for (tick, tempo) in changes {
            let last = *segments.last().expect("non-empty");
            if tick == last.tick {
                segments.last_mut().expect("non-empty").micros_per_quarter = tempo;
                continue;
            }
            let start_seconds = last.start_seconds + span_seconds(timing, last.micros_per_quarter, tick - last.tick);
            segments.push(TempoSegment {
                tick,
                micros_per_quarter: tempo,
                start_seconds,
            });
        }
        TempoMap { timing, segments }
    }

    pub fn constant(division: u16, micros_per_quarter: u32) -> Self {
        TempoMap::new(Timing::Metrical(division), vec![(0, micros_per_quarter)])
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    /// Seconds elapsed at `tick`: `ticks × tempo / (division × 10^6)` within
    /// each constant-tempo segment.
    pub fn seconds(&self, tick: u64) -> f64 {
        let idx = self.segments.partition_point(|s| s.tick <= tick) - 1;
        let seg = &self.segments[idx];
        seg.start_seconds + span_seconds(self.timing, seg.micros_per_quarter, tick - seg.tick)
    }
}

fn span_seconds(timing: Timing, micros_per_quarter: u32, ticks: u64) -> f64 {
    match timing {
        Timing::Metrical(division) => {
            ticks as f64 * micros_per_quarter as f64 / (division as f64 * 1e6)
        }
        Timing::Timecode { fps, ticks_per_frame } => {
            let fps = if fps == 29 { 29.97 } else { fps as f64 };
            ticks as f64 / (fps * ticks_per_frame as f64)
        }
    }
}

/// Result of reading an SMF: the sorted notes plus anything that had to be
/// repaired on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSmf {
    pub format: u16,
    pub tempo_map: TempoMap,
    pub notes: Vec<NoteEvent>,
    pub warnings: Vec<String>,
}

impl ParsedSmf {
    pub fn into_performance(
        self,
        performer_id: impl Into<String>,
        piece_id: impl Into<String>,
    ) -> Performance {
        Performance::new(performer_id, piece_id, self.notes)
    }
}

#[derive(Debug, Clone, Copy)]
enum RawEvent {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8 },
}

struct RawTrack {
    events: Vec<(u64, RawEvent)>,
    end_tick: u64,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Smf {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn remaining(&self) -> usize {
        self.end - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        if self.pos >= self.end {
            return self.err("unexpected end of data");
        }
        let b = self.data[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn data_byte(&mut self) -> Result<u8> {
        let b = self.u8()?;
        if b & 0x80 != 0 {
            self.pos -= 1;
            return self.err(format!("expected data byte, found status 0x{b:02X}"));
        }
        Ok(b)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return self.err(format!("need {n} bytes, {} left", self.remaining()));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.bytes(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        self.pos = start;
        self.err("variable-length quantity longer than 4 bytes")
    }
}

/// Parses a format 0 or 1 Standard MIDI File into sorted note events.
///
/// Note-on with velocity 0 closes a note. Overlapping notes of the same
/// channel and pitch are closed first-in first-out. Notes still sounding at
/// the end of their track are closed at the track's final tick and reported
/// in `warnings`; zero-length notes are stretched to one tick.
pub fn parse_smf(bytes: &[u8]) -> Result<ParsedSmf> {
    let mut r = Reader {
        data: bytes,
        pos: 0,
        end: bytes.len(),
    };
    let mut warnings = Vec::new();

    if r.bytes(4).ok() != Some(b"MThd".as_slice()) {
        return Err(Error::Smf {
            offset: 0,
            message: "missing MThd header".into(),
        });
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return r.err(format!("header length {header_len} is shorter than 6"));
    }
    let header_start = r.pos;
    let format = r.u16()?;
    let declared_tracks = r.u16()?;
    let division_pos = r.pos;
    let division = r.u16()?;
    if header_len > r.remaining() + 6 {
        return r.err("header chunk runs past end of file");
    }
    r.pos = header_start + header_len;

    if format > 1 {
        return Err(Error::Smf {
            offset: header_start,
            message: format!("unsupported SMF format {format}"),
        });
    }
    let timing = if division & 0x8000 != 0 {
        let fps = (-((division >> 8) as u8 as i8)) as u8;
        let ticks_per_frame = (division & 0xFF) as u8;
        if !matches!(fps, 24 | 25 | 29 | 30) || ticks_per_frame == 0 {
            return Err(Error::Smf {
                offset: division_pos,
                message: format!("invalid SMPTE division 0x{division:04X}"),
            });
        }
        Timing::Timecode {
            fps,
            ticks_per_frame,
        }
    } else {
        if division == 0 {
            return Err(Error::Smf {
                offset: division_pos,
                message: "division of zero ticks per quarter".into(),
            });
        }
        Timing::Metrical(division)
    };

    let mut tracks = Vec::new();
    let mut tempo_changes = Vec::new();
    while r.remaining() > 0 {
        let chunk_pos = r.pos;
        if r.remaining() < 8 {
            warnings.push(format!("{} trailing bytes at offset {chunk_pos} ignored", r.remaining()));
            break;
        }
        let kind: [u8; 4] = r.bytes(4)?.try_into().expect("4 bytes");
        let len = r.u32()? as usize;
        if len > r.remaining() {
            return Err(Error::Smf {
                offset: chunk_pos,
                message: format!("chunk length {len} exceeds the {} bytes left", r.remaining()),
            });
        }
        let body_start = r.pos;
        if &kind == b"MTrk" {
            let mut track_reader = Reader {
                data: bytes,
                pos: body_start,
                end: body_start + len,
            };
            let track = parse_track(&mut track_reader, &mut tempo_changes, &mut warnings, tracks.len())?;
            tracks.push(track);
        }
        r.pos = body_start + len;
    }
    if tracks.len() != declared_tracks as usize {
        warnings.push(format!(
            "header declares {declared_tracks} tracks, found {}",
            tracks.len()
        ));
    }

    let tempo_map = TempoMap::new(timing, tempo_changes);
    let mut notes = Vec::new();
    for (track_idx, track) in tracks.iter().enumerate() {
        pair_notes(track, track_idx, &tempo_map, &mut notes, &mut warnings);
    }
    notes.sort_by(note_order);

    Ok(ParsedSmf {
        format,
        tempo_map,
        notes,
        warnings,
    })
}

fn parse_track(
    r: &mut Reader<'_>,
    tempo_changes: &mut Vec<(u64, u32)>,
    warnings: &mut Vec<String>,
    track_idx: usize,
) -> Result<RawTrack> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    let mut saw_end = false;

    while r.remaining() > 0 {
        tick += r.vlq()? as u64;
        let status_pos = r.pos;
        let first = r.u8()?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            r.pos -= 1;
            match running {
                Some(s) => s,
                None => return r.err("data byte without running status"),
            }
        };

        match status {
            0x80..=0xEF => {
                running = Some(status);
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x80 => {
                        let pitch = r.data_byte()?;
                        r.data_byte()?;
                        events.push((tick, RawEvent::NoteOff { channel, pitch }));
                    }
                    0x90 => {
                        let pitch = r.data_byte()?;
                        let velocity = r.data_byte()?;
                        let ev = if velocity == 0 {
                            RawEvent::NoteOff { channel, pitch }
                        } else {
                            RawEvent::NoteOn {
                                channel,
                                pitch,
                                velocity,
                            }
                        };
                        events.push((tick, ev));
                    }
                    0xC0 | 0xD0 => {
                        r.data_byte()?;
                    }
                    _ => {
                        r.data_byte()?;
                        r.data_byte()?;
                    }
                }
            }
            0xF0 | 0xF7 => {
                let len = r.vlq()? as usize;
                r.bytes(len)?;
            }
            0xFF => {
                let kind = r.u8()?;
                let len = r.vlq()? as usize;
                let data = r.bytes(len)?;
                match kind {
                    0x51 => {
                        if len != 3 {
                            return Err(Error::Smf {
                                offset: status_pos,
                                message: format!("tempo event with length {len}"),
                            });
                        }
                        let tempo = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if tempo == 0 {
                            return Err(Error::Smf {
                                offset: status_pos,
                                message: "tempo of zero microseconds per quarter".into(),
                            });
                        }
                        tempo_changes.push((tick, tempo));
                    }
                    0x2F => {
                        saw_end = true;
                        break;
                    }
                    _ => {}
                }
            }
            _ => {
                return Err(Error::Smf {
                    offset: status_pos,
                    message: format!("unexpected status byte 0x{status:02X}"),
                })
            }
        }
    }
    if !saw_end {
        warnings.push(format!("track {track_idx} has no end-of-track event"));
    }
    Ok(RawTrack {
        events,
        end_tick: tick,
    })
}

fn pair_notes(
    track: &RawTrack,
    track_idx: usize,
    tempo_map: &TempoMap,
    notes: &mut Vec<NoteEvent>,
    warnings: &mut Vec<String>,
) {
    let mut open: BTreeMap<(u8, u8), VecDeque<(u64, u8)>> = BTreeMap::new();
    let mut push = |on: u64, off: u64, pitch: u8, velocity: u8, warnings: &mut Vec<String>| {
        let off = if off <= on {
            warnings.push(format!(
                "track {track_idx}: zero-length note (pitch {pitch}, tick {on}) stretched to one tick"
            ));
            on + 1
        } else {
            off
        };
        notes.push(NoteEvent {
            onset: tempo_map.seconds(on),
            offset: tempo_map.seconds(off),
            pitch,
            dynamic: velocity,
        });
    };

    for &(tick, event) in &track.events {
        match event {
            RawEvent::NoteOn {
                channel,
                pitch,
                velocity,
            } => open.entry((channel, pitch)).or_default().push_back((tick, velocity)),
            RawEvent::NoteOff { channel, pitch } => {
                match open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
                    Some((on, velocity)) => push(on, tick, pitch, velocity, warnings),
                    None => warnings.push(format!(
                        "track {track_idx}: note-off without note-on (pitch {pitch}, tick {tick})"
                    )),
                }
            }
        }
    }
    for ((_, pitch), queue) in open {
        for (on, velocity) in queue {
            warnings.push(format!(
                "track {track_idx}: dangling note-on (pitch {pitch}, tick {on}) closed at tick {}",
                track.end_tick
            ));
            push(on, track.end_tick, pitch, velocity, warnings);
        }
    }
}

/// Fixed metrical grid used when writing SMF output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickGrid {
    pub division: u16,
    pub micros_per_quarter: u32,
}

impl Default for TickGrid {
    /// 500 ticks per quarter at 120 BPM: one tick per millisecond.
    fn default() -> Self {
        TickGrid {
            division: 500,
            micros_per_quarter: DEFAULT_TEMPO,
        }
    }
}

impl TickGrid {
    fn tempo_map(&self) -> TempoMap {
        TempoMap::constant(self.division, self.micros_per_quarter)
    }

    fn ticks_at(&self, seconds: f64) -> u64 {
        let ticks_per_second = self.division as f64 * 1e6 / self.micros_per_quarter as f64;
        (seconds * ticks_per_second).round().max(0.0) as u64
    }

    fn note_ticks(&self, note: &NoteEvent) -> (u64, u64) {
        let on = self.ticks_at(note.onset);
        let off = self.ticks_at(note.offset).max(on + 1);
        (on, off)
    }

    /// Snaps every note onto the grid exactly as `write_smf` followed by
    /// `parse_smf` would.
    pub fn quantize(&self, performance: &Performance) -> Performance {
        let map = self.tempo_map();
        let notes = performance
            .notes()
            .iter()
            .map(|n| {
                let (on, off) = self.note_ticks(n);
                NoteEvent {
                    onset: map.seconds(on),
                    offset: map.seconds(off),
                    ..*n
                }
            })
            .collect();
        Performance::new(
            performance.performer_id.clone(),
            performance.piece_id.clone(),
            notes,
        )
    }
}

fn write_vlq(out: &mut Vec<u8>, mut value: u64) {
    let mut buf = [0u8; 10];
    let mut i = buf.len();
    i -= 1;
    buf[i] = (value & 0x7F) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = 0x80 | (value & 0x7F) as u8;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Writes a single-track format 0 SMF on `grid`, channel 0.
///
/// Times are rounded to the grid, so `parse_smf(write_smf(p))` yields
/// `grid.quantize(p)` for any performance whose same-pitch notes do not nest.
pub fn write_smf(performance: &Performance, grid: &TickGrid) -> Vec<u8> {
    // (tick, 0 = off / 1 = on, pitch, velocity)
    let mut events: Vec<(u64, u8, u8, u8)> = Vec::with_capacity(performance.len() * 2);
    for note in performance.notes() {
        let (on, off) = grid.note_ticks(note);
        events.push((on, 1, note.pitch, note.dynamic));
        events.push((off, 0, note.pitch, 0));
    }
    events.sort_by_key(|&(tick, kind, pitch, _)| (tick, kind, pitch));

    let mut track = Vec::new();
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x51, 0x03]);
    track.extend_from_slice(&grid.micros_per_quarter.to_be_bytes()[1..]);
    let mut last_tick = 0;
    for (tick, kind, pitch, velocity) in events {
        write_vlq(&mut track, tick - last_tick);
        last_tick = tick;
        if kind == 1 {
            track.extend_from_slice(&[0x90, pitch & 0x7F, velocity & 0x7F]);
        } else {
            track.extend_from_slice(&[0x80, pitch & 0x7F, 0x40]);
        }
    }
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&grid.division.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}
