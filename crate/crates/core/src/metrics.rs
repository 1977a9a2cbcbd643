//! Beat and structure metrics on symbolic music: BCS, BHS, BAS, PHE, GS,
//! and onset-density beat detection.

use std::fmt::Write as _;

use thiserror::Error;

use crate::midi::{MidiClip, Note, SLOTS_PER_MEASURE};

pub const DEFAULT_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("reference beat list is empty")]
    EmptyReference,
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("no bar contains a note")]
    NoNotes,
    #[error("need at least two non-empty bars, got {0}")]
    TooFewBars(usize),
    #[error("clip {id}: {source}")]
    Clip {
        id: String,
        #[source]
        source: Box<MetricError>,
    },
}

/// Slot index of a tick at `ticks_per_quarter` resolution, rounded to nearest.
fn slot_of(tick: u64, ticks_per_quarter: u16) -> u64 {
    let num = tick * (SLOTS_PER_MEASURE / 4);
    let den = ticks_per_quarter as u64;
    (2 * num + den) / (2 * den)
}

/// Beat slots from onsets: local maxima of per-slot onset density that reach the
/// mean density, thinned so kept beats are at least 8 slots (an eighth note) apart.
pub fn detect_beat_slots(onset_slots: &[u64]) -> Vec<u64> {
    let Some(&last) = onset_slots.iter().max() else {
        return Vec::new();
    };
    let n = last as usize + 1;
    let mut density = vec![0usize; n];
    for &s in onset_slots {
        density[s as usize] += 1;
    }
    let mean = onset_slots.len() as f64 / n as f64;
    let mut cands: Vec<usize> = (0..n)
        .filter(|&s| {
            let d = density[s];
            d > 0
                && d as f64 >= mean
                && (s == 0 || d >= density[s - 1])
                && (s + 1 == n || d >= density[s + 1])
        })
        .collect();
    cands.sort_by(|&a, &b| density[b].cmp(&density[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cands {
        if kept.iter().all(|&k| k.abs_diff(c) >= 8) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|s| s as u64).collect()
}

/// Beat times in seconds at a constant tempo.
pub fn detect_beats(notes: &[Note], ticks_per_quarter: u16, bpm: f64) -> Vec<f64> {
    let slots: Vec<u64> = notes.iter().map(|n| slot_of(n.onset, ticks_per_quarter)).collect();
    let slot_secs = 60.0 / bpm / (SLOTS_PER_MEASURE / 4) as f64;
    detect_beat_slots(&slots).into_iter().map(|s| s as f64 * slot_secs).collect()
}

pub fn bcs(gen: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(gen.len() as f64 / reference.len() as f64)
}

/// Greedy one-to-one matches in time order: each generated beat takes the
/// earliest unused reference beat within ±tol.
pub fn matched_beats(gen: &[f64], reference: &[f64], tol: f64) -> usize {
    let mut j = 0;
    let mut matches = 0;
    for &g in gen {
        while j < reference.len() && reference[j] < g - tol - 1e-12 {
            j += 1;
        }
        if j < reference.len() && (reference[j] - g).abs() <= tol + 1e-12 {
            matches += 1;
            j += 1;
        }
    }
    matches
}

pub fn bhs(gen: &[f64], reference: &[f64], tol: f64) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if !(tol > 0.0) {
        return Err(MetricError::Tolerance(tol));
    }
    Ok((matched_beats(gen, reference, tol) as f64 / reference.len() as f64).clamp(0.0, 1.0))
}

pub fn bas(bcs: f64, bhs: f64) -> f64 {
    if bcs <= 1.0 {
        0.5 * ((bcs - 1.0).exp() + bhs)
    } else {
        0.5 * ((1.0 - bcs).exp() + bhs)
    }
}

/// Mean over non-empty bars of the pitch-class entropy in bits.
pub fn phe(bars: &[Vec<u8>]) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    let mut count = 0;
    for bar in bars.iter().filter(|b| !b.is_empty()) {
        let mut h = [0usize; 12];
        for &p in bar {
            h[(p % 12) as usize] += 1;
        }
        let n = bar.len() as f64;
        sum -= h
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let q = c as f64 / n;
                q * q.log2()
            })
            .sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::NoNotes);
    }
    Ok(sum / count as f64)
}

/// Onset pattern of a bar: bit k set when slot k has an onset.
pub type Grid = [bool; SLOTS_PER_MEASURE as usize];

/// Mean of 1 − XOR/64 over all unordered pairs of non-empty bars.
pub fn gs(bars: &[Grid]) -> Result<f64, MetricError> {
    let live: Vec<&Grid> = bars.iter().filter(|b| b.iter().any(|&x| x)).collect();
    if live.len() < 2 {
        return Err(MetricError::TooFewBars(live.len()));
    }
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..live.len() {
        for j in i + 1..live.len() {
            let xor = live[i].iter().zip(live[j].iter()).filter(|(a, b)| a != b).count();
            sum += 1.0 - xor as f64 / SLOTS_PER_MEASURE as f64;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Non-drum pitches per bar.
pub fn pitch_bars(notes: &[Note], ticks_per_quarter: u16) -> Vec<Vec<u8>> {
    let mut bars: Vec<Vec<u8>> = Vec::new();
    for n in notes.iter().filter(|n| !n.instrument.is_drum()) {
        let b = (slot_of(n.onset, ticks_per_quarter) / SLOTS_PER_MEASURE) as usize;
        if bars.len() <= b {
            bars.resize(b + 1, Vec::new());
        }
        bars[b].push(n.pitch);
    }
    bars
}

/// Onset grid per bar over every note.
pub fn onset_grids(notes: &[Note], ticks_per_quarter: u16) -> Vec<Grid> {
    let mut bars: Vec<Grid> = Vec::new();
    for n in notes {
        let s = slot_of(n.onset, ticks_per_quarter);
        let b = (s / SLOTS_PER_MEASURE) as usize;
        if bars.len() <= b {
            bars.resize(b + 1, [false; SLOTS_PER_MEASURE as usize]);
        }
        bars[b][(s % SLOTS_PER_MEASURE) as usize] = true;
    }
    bars
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub bg: usize,
    pub bt: usize,
    pub ba: usize,
    pub bcs: f64,
    pub bhs: f64,
    pub bas: f64,
    /// `None` when the generated clip has no non-drum note.
    pub phe: Option<f64>,
    /// `None` when fewer than two bars have onsets.
    pub gs: Option<f64>,
}

/// Compare generated beats with reference beats, taken from the dance annotation
/// when given and otherwise detected in the reference clip.
pub fn evaluate_pair(
    generated: &MidiClip,
    reference: &MidiClip,
    dance_beats: Option<&[f64]>,
    tol: f64,
) -> Result<MetricReport, MetricError> {
    let gen = detect_beats(&generated.notes, generated.ticks_per_quarter, generated.bpm());
    let refs = match dance_beats {
        Some(b) => b.to_vec(),
        None => detect_beats(&reference.notes, reference.ticks_per_quarter, reference.bpm()),
    };
    let bcs_v = bcs(&gen, &refs)?;
    let bhs_v = bhs(&gen, &refs, tol)?;
    Ok(MetricReport {
        bg: gen.len(),
        bt: refs.len(),
        ba: matched_beats(&gen, &refs, tol),
        bcs: bcs_v,
        bhs: bhs_v,
        bas: bas(bcs_v, bhs_v),
        phe: phe(&pitch_bars(&generated.notes, generated.ticks_per_quarter)).ok(),
        gs: gs(&onset_grids(&generated.notes, generated.ticks_per_quarter)).ok(),
    })
}

/// Field-wise mean; optional metrics average over the clips where they are defined.
pub fn mean_report(reports: &[MetricReport]) -> Option<(f64, f64, f64, f64, f64, f64, Option<f64>, Option<f64>)> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let opt_mean = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some((
        mean(&|r| r.bg as f64),
        mean(&|r| r.bt as f64),
        mean(&|r| r.ba as f64),
        mean(&|r| r.bcs),
        mean(&|r| r.bhs),
        mean(&|r| r.bas),
        opt_mean(&|r| r.phe),
        opt_mean(&|r| r.gs),
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with one row per clip and a final `mean` row.
pub fn report_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = String::from("clip_id,Bg,Bt,Ba,BCS,BHS,BAS,PHE,GS\n");
    for (id, r) in rows {
        let _ = writeln!(
            s,
            "{id},{},{},{},{},{},{},{},{}",
            r.bg,
            r.bt,
            r.ba,
            r.bcs,
            r.bhs,
            r.bas,
            opt(r.phe),
            opt(r.gs)
        );
    }
    let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    if let Some((bg, bt, ba, c, h, a, p, g)) = mean_report(&reports) {
        let _ = writeln!(s, "mean,{bg},{bt},{ba},{c},{h},{a},{},{}", opt(p), opt(g));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_operating_points() {
        assert!((bas(0.73, 0.53) - 0.6467).abs() < 1e-4);
        assert!((bas(0.76, 0.61) - 0.6983).abs() < 1e-4);
        assert_eq!(bas(1.0, 1.0), 1.0);
        assert_eq!(bcs(&[0.0; 73], &[0.0; 100]).unwrap(), 0.73);
    }

    #[test]
    fn symmetric_decay() {
        for d in [0.0, 0.1, 0.5, 1.0] {
            assert!((bas(1.0 + d, 0.4) - bas(1.0 - d, 0.4)).abs() < 1e-15);
        }
    }

    #[test]
    fn phe_closed_forms() {
        assert!((phe(&[(60..72).collect()]).unwrap() - 12f64.log2()).abs() < 1e-9);
        assert_eq!(phe(&[vec![60, 72, 48]]).unwrap(), 0.0);
        assert_eq!(phe(&[vec![60, 62, 60, 62]]).unwrap(), 1.0);
        assert!(phe(&[vec![], vec![]]).is_err());
    }

    #[test]
    fn gs_closed_forms() {
        let mut a = [false; 64];
        for k in (0..64).step_by(4) {
            a[k] = true;
        }
        assert_eq!(gs(&[a, a, a]).unwrap(), 1.0);
        let c = a.map(|x| !x);
        assert_eq!(gs(&[a, c]).unwrap(), 0.0);
        let mut h = a;
        for k in 0..32 {
            h[k] = !h[k];
        }
        assert!((gs(&[a, h]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(gs(&[a]), Err(MetricError::TooFewBars(1)));
    }

    #[test]
    fn quarter_pulse_and_single_note() {
        let kick = |q: u64| Note {
            pitch: 36,
            onset: q * 480,
            duration: 60,
            track: 0,
            instrument: crate::midi::Instrument::Drum,
            velocity: 100,
        };
        let notes: Vec<Note> = (0..8).map(kick).collect();
        let beats = detect_beats(&notes, 480, 120.0);
        assert_eq!(beats, (0..8).map(|q| q as f64 * 0.5).collect::<Vec<_>>());
        assert_eq!(detect_beats(&notes[3..4], 480, 120.0), vec![1.5]);
        assert!(detect_beats(&[], 480, 120.0).is_empty());
    }

    #[test]
    fn bhs_edge_cases() {
        let r = [0.0, 0.5, 1.0];
        assert_eq!(bhs(&r, &r, 0.1).unwrap(), 1.0);
        assert_eq!(bhs(&[0.25, 0.75], &r, 0.1).unwrap(), 0.0);
        assert!(bhs(&r, &[], 0.1).is_err());
        assert!(bhs(&r, &r, 0.0).is_err());
    }
}
