//! Standard MIDI File reading and writing (formats 0 and 1, metrical timing).
//!
//! Only the information needed for note-level modeling survives a round trip:
//! notes, programs, the percussion channel and the tempo map.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use super::note::{sort_notes, Instrument, Note, DRUM_CHANNEL};

/// Ticks per quarter note used by [`write_smf`].
pub const WRITE_TICKS_PER_QUARTER: u16 = 480;
pub const DEFAULT_BPM: f64 = 120.0;

#[derive(Debug, Error, PartialEq)]
pub enum SmfError {
    #[error("malformed chunk header at byte {offset}: {reason}")]
    MalformedChunk { offset: usize, reason: &'static str },
    #[error("truncated event data in track {track} at byte {offset}")]
    Truncated { track: usize, offset: usize },
    #[error("unexpected data byte without running status in track {track} at byte {offset}")]
    NoRunningStatus { track: usize, offset: usize },
    #[error("SMPTE time division is not supported")]
    UnsupportedSmpte,
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TempoChange {
    pub tick: u64,
    pub micros_per_quarter: u32,
}

/// Notes and timing information recovered from a MIDI file.
#[derive(Clone, Debug, PartialEq)]
pub struct MidiClip {
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub notes: Vec<Note>,
    pub tempos: Vec<TempoChange>,
    /// Number of note-ons never closed by a note-off (resolved by clamping to the clip end).
    pub dangling: usize,
    pub warnings: Vec<String>,
}

impl MidiClip {
    /// Tempo of the first tempo event, or 120 bpm when the file has none.
    pub fn bpm(&self) -> f64 {
        self.tempos
            .first()
            .map(|t| 60_000_000.0 / t.micros_per_quarter as f64)
            .unwrap_or(DEFAULT_BPM)
    }

    /// Convert a tick position into seconds by walking the tempo map.
    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let tpq = self.ticks_per_quarter as f64;
        let mut seconds = 0.0;
        let mut last_tick = 0u64;
        let mut uspq = 500_000.0;
        for t in &self.tempos {
            if t.tick >= tick {
                break;
            }
            seconds += (t.tick - last_tick) as f64 / tpq * uspq / 1e6;
            last_tick = t.tick;
            uspq = t.micros_per_quarter as f64;
        }
        seconds + (tick - last_tick) as f64 / tpq * uspq / 1e6
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    track: usize,
}

impl<'a> Reader<'a> {
    fn byte(&mut self) -> Result<u8, SmfError> {
        let b = *self.data.get(self.pos).ok_or(SmfError::Truncated {
            track: self.track,
            offset: self.pos,
        })?;
        self.pos += 1;
        Ok(b)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], SmfError> {
        if self.pos + n > self.data.len() {
            return Err(SmfError::Truncated {
                track: self.track,
                offset: self.pos,
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn vlq(&mut self) -> Result<u64, SmfError> {
        let mut value = 0u64;
        for _ in 0..4 {
            let b = self.byte()?;
            value = (value << 7) | (b & 0x7f) as u64;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(SmfError::Truncated {
            track: self.track,
            offset: self.pos,
        })
    }

    fn done(&self) -> bool {
        self.pos >= self.data.len()
    }
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

struct OpenNote {
    onset: u64,
    velocity: u8,
    instrument: Instrument,
}

/// Parse a Standard MIDI File into notes.
///
/// Overlapping note-ons of the same pitch on the same channel are closed
/// first-in-first-out. A note-on with velocity 0 counts as a note-off.
pub fn parse_smf(bytes: &[u8]) -> Result<MidiClip, SmfError> {
    if bytes.len() < 14 || &bytes[0..4] != b"MThd" {
        return Err(SmfError::MalformedChunk {
            offset: 0,
            reason: "missing MThd header",
        });
    }
    let header_len = be_u32(&bytes[4..8]) as usize;
    if header_len < 6 || 8 + header_len > bytes.len() {
        return Err(SmfError::MalformedChunk {
            offset: 4,
            reason: "bad header length",
        });
    }
    let format = be_u16(&bytes[8..10]);
    if format > 1 {
        return Err(SmfError::UnsupportedFormat(format));
    }
    let division = be_u16(&bytes[12..14]);
    if division & 0x8000 != 0 {
        return Err(SmfError::UnsupportedSmpte);
    }
    if division == 0 {
        return Err(SmfError::MalformedChunk {
            offset: 12,
            reason: "zero ticks per quarter",
        });
    }

    let mut notes = Vec::new();
    let mut tempos = Vec::new();
    let mut warnings = Vec::new();
    let mut open: BTreeMap<(usize, u8, u8), VecDeque<OpenNote>> = BTreeMap::new();
    // program per (chunk, channel); falls back to the last program seen on the channel
    let mut programs: BTreeMap<(usize, u8), u8> = BTreeMap::new();
    let mut last_program = [0u8; 16];
    let mut clip_end = 0u64;

    let mut pos = 8 + header_len;
    let mut track_index = 0usize;
    while pos < bytes.len() {
        if pos + 8 > bytes.len() {
            return Err(SmfError::MalformedChunk {
                offset: pos,
                reason: "truncated chunk header",
            });
        }
        let kind = &bytes[pos..pos + 4];
        let len = be_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        if body_start + len > bytes.len() {
            return Err(SmfError::MalformedChunk {
                offset: pos,
                reason: "chunk length exceeds file",
            });
        }
        if kind != b"MTrk" {
            pos = body_start + len;
            continue;
        }
        let mut r = Reader {
            data: &bytes[body_start..body_start + len],
            pos: 0,
            track: track_index,
        };
        let mut tick = 0u64;
        let mut running: Option<u8> = None;
        while !r.done() {
            tick += r.vlq()?;
            let first = r.byte()?;
            let status = if first & 0x80 != 0 {
                first
            } else {
                let s = running.ok_or(SmfError::NoRunningStatus {
                    track: track_index,
                    offset: body_start + r.pos - 1,
                })?;
                r.pos -= 1;
                s
            };
            match status {
                0xff => {
                    running = None;
                    let meta = r.byte()?;
                    let n = r.vlq()? as usize;
                    let data = r.bytes(n)?;
                    if meta == 0x51 && n == 3 {
                        let uspq = ((data[0] as u32) << 16) | ((data[1] as u32) << 8) | data[2] as u32;
                        tempos.push(TempoChange {
                            tick,
                            micros_per_quarter: uspq.max(1),
                        });
                    }
                    if meta == 0x2f {
                        break;
                    }
                }
                0xf0 | 0xf7 => {
                    running = None;
                    let n = r.vlq()? as usize;
                    r.bytes(n)?;
                }
                0xf1..=0xfe => {
                    // system common / realtime bytes do not belong in files; skip their fixed payloads
                    let n = match status {
                        0xf2 => 2,
                        0xf1 | 0xf3 => 1,
                        _ => 0,
                    };
                    r.bytes(n)?;
                }
                _ => {
                    running = Some(status);
                    let channel = status & 0x0f;
                    let key_chunk = if format == 0 { 0 } else { track_index };
                    match status & 0xf0 {
                        0x80 | 0x90 => {
                            let pitch = r.byte()? & 0x7f;
                            let velocity = r.byte()? & 0x7f;
                            let key = (key_chunk, channel, pitch);
                            if status & 0xf0 == 0x90 && velocity > 0 {
                                let instrument = if channel == DRUM_CHANNEL {
                                    Instrument::Drum
                                } else {
                                    Instrument::Program(
                                        *programs
                                            .get(&(track_index, channel))
                                            .unwrap_or(&last_program[channel as usize]),
                                    )
                                };
                                open.entry(key).or_default().push_back(OpenNote {
                                    onset: tick,
                                    velocity,
                                    instrument,
                                });
                            } else if let Some(on) = open.get_mut(&key).and_then(|q| q.pop_front()) {
                                let track = if format == 0 { channel } else { track_index as u8 };
                                let mut duration = tick - on.onset;
                                if duration == 0 {
                                    warnings.push(format!(
                                        "zero-length note pitch {pitch} at tick {tick} clamped to 1 tick"
                                    ));
                                    duration = 1;
                                }
                                notes.push(Note {
                                    pitch,
                                    onset: on.onset,
                                    duration,
                                    track,
                                    instrument: on.instrument,
                                    velocity: on.velocity,
                                });
                            }
                        }
                        0xa0 | 0xb0 | 0xe0 => {
                            r.bytes(2)?;
                        }
                        0xc0 => {
                            let program = r.byte()? & 0x7f;
                            programs.insert((track_index, channel), program);
                            last_program[channel as usize] = program;
                        }
                        0xd0 => {
                            r.byte()?;
                        }
                        _ => unreachable!("status bytes below 0x80 are handled as running status"),
                    }
                }
            }
        }
        clip_end = clip_end.max(tick);
        track_index += 1;
        pos = body_start + len;
    }

    let mut dangling = 0;
    for ((chunk, channel, pitch), queue) in open {
        for on in queue {
            dangling += 1;
            let track = if format == 0 { channel } else { chunk as u8 };
            notes.push(Note {
                pitch,
                onset: on.onset,
                duration: clip_end.saturating_sub(on.onset).max(1),
                track,
                instrument: on.instrument,
                velocity: on.velocity,
            });
        }
    }
    if dangling > 0 {
        warnings.push(format!("{dangling} dangling note-on(s) clamped to clip end"));
    }
    tempos.sort_by_key(|t| t.tick);
    sort_notes(&mut notes);
    Ok(MidiClip {
        format,
        ticks_per_quarter: division,
        notes,
        tempos,
        dangling,
        warnings,
    })
}

/// Bytes of a written file plus any lossy-encoding warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct WrittenSmf {
    pub bytes: Vec<u8>,
    pub warnings: Vec<String>,
}

fn push_vlq(out: &mut Vec<u8>, mut value: u64) {
    let mut buf = [0u8; 10];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = ((value & 0x7f) as u8) | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

const MELODIC_CHANNELS: [u8; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15];

/// Write notes as a format-1 file at 480 ticks per quarter with one tempo event.
///
/// Note track `k` is written to chunk `k`; chunk 0 also carries the tempo.
/// Each (track, instrument) pair gets its own channel; past 15 melodic pairs
/// channels are reused and a warning is recorded.
pub fn write_smf(notes: &[Note], bpm: f64) -> WrittenSmf {
    let mut warnings = Vec::new();
    let mut sorted = notes.to_vec();
    sort_notes(&mut sorted);

    let mut channels: BTreeMap<(u8, Instrument), u8> = BTreeMap::new();
    let mut next_melodic = 0usize;
    for n in &sorted {
        if channels.contains_key(&(n.track, n.instrument)) {
            continue;
        }
        let ch = match n.instrument {
            Instrument::Drum => DRUM_CHANNEL,
            Instrument::Program(_) => {
                if next_melodic >= MELODIC_CHANNELS.len() {
                    warnings.push(format!(
                        "track {} instrument {} multiplexed onto channel {}",
                        n.track,
                        n.instrument,
                        MELODIC_CHANNELS[next_melodic % MELODIC_CHANNELS.len()]
                    ));
                }
                let ch = MELODIC_CHANNELS[next_melodic % MELODIC_CHANNELS.len()];
                next_melodic += 1;
                ch
            }
        };
        channels.insert((n.track, n.instrument), ch);
    }

    let n_tracks = sorted.iter().map(|n| n.track as usize + 1).max().unwrap_or(1);
    let uspq = (60_000_000.0 / bpm).round().clamp(1.0, 16_777_215.0) as u32;

    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(n_tracks as u16).to_be_bytes());
    out.extend_from_slice(&WRITE_TICKS_PER_QUARTER.to_be_bytes());

    for track in 0..n_tracks {
        // (tick, kind, channel, pitch, duration, velocity, message)
        let mut events: Vec<(u64, u8, u8, u8, u64, u8, Vec<u8>)> = Vec::new();
        if track == 0 {
            events.push((0, 0, 0, 0, 0, 0, vec![0xff, 0x51, 0x03, (uspq >> 16) as u8, (uspq >> 8) as u8, uspq as u8]));
        }
        for (&(t, inst), &ch) in &channels {
            if t as usize == track {
                if let Instrument::Program(p) = inst {
                    events.push((0, 1, ch, 0, 0, 0, vec![0xc0 | ch, p & 0x7f]));
                }
            }
        }
        for n in sorted.iter().filter(|n| n.track as usize == track) {
            let ch = channels[&(n.track, n.instrument)];
            // offs sort before ons at the same tick; equal-onset ons go shortest first
            events.push((n.end(), 2, ch, n.pitch, 0, 0, vec![0x80 | ch, n.pitch & 0x7f, 0x40]));
            events.push((
                n.onset,
                3,
                ch,
                n.pitch,
                n.duration,
                n.velocity,
                vec![0x90 | ch, n.pitch & 0x7f, n.velocity.clamp(1, 127)],
            ));
        }
        events.sort_by(|a, b| (a.0, a.1, a.2, a.3, a.4, a.5).cmp(&(b.0, b.1, b.2, b.3, b.4, b.5)));

        let mut body = Vec::new();
        let mut last = 0u64;
        for e in &events {
            push_vlq(&mut body, e.0 - last);
            last = e.0;
            body.extend_from_slice(&e.6);
        }
        push_vlq(&mut body, 0);
        body.extend_from_slice(&[0xff, 0x2f, 0x00]);

        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    WrittenSmf { bytes: out, warnings }
}
