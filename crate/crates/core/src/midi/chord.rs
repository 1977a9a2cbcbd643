use std::fmt;

use serde::{Deserialize, Serialize};

const NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// One of the 24 major/minor triads. Ids are `root * 2 + minor`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Chord(u8);

impl Chord {
    pub const COUNT: u8 = 24;

    pub fn new(root: u8, minor: bool) -> Self {
        Chord((root % 12) * 2 + minor as u8)
    }

    pub fn from_id(id: u8) -> Option<Self> {
        (id < Self::COUNT).then_some(Chord(id))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn root(self) -> u8 {
        self.0 / 2
    }

    pub fn is_minor(self) -> bool {
        self.0 % 2 == 1
    }

    pub fn pitch_classes(self) -> [u8; 3] {
        let r = self.root();
        let third = if self.is_minor() { 3 } else { 4 };
        [r, (r + third) % 12, (r + 7) % 12]
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (root, minor) = match s.strip_suffix('m') {
            Some(r) => (r, true),
            None => (s, false),
        };
        NAMES.iter().position(|n| *n == root).map(|r| Chord::new(r as u8, minor))
    }
}

impl fmt::Display for Chord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", NAMES[self.root() as usize], if self.is_minor() { "m" } else { "" })
    }
}

/// Template-match a set of pitches against the 24 triads.
///
/// A triad matches when all three of its pitch classes sound. Among several
/// matches the one rooted on the lowest sounding pitch class wins, then the
/// lowest id.
pub fn detect_chord(pitches: &[u8]) -> Option<Chord> {
    let mut present = [false; 12];
    for &p in pitches {
        present[(p % 12) as usize] = true;
    }
    let bass = pitches.iter().min().map(|p| p % 12);
    let mut best: Option<Chord> = None;
    for id in 0..Chord::COUNT {
        let c = Chord(id);
        if c.pitch_classes().iter().all(|&pc| present[pc as usize]) {
            match best {
                None => best = Some(c),
                Some(b) if Some(c.root()) == bass && Some(b.root()) != bass => best = Some(c),
                _ => {}
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_major_triad() {
        assert_eq!(detect_chord(&[60, 64, 67]), Some(Chord::new(0, false)));
        assert_eq!(detect_chord(&[67, 60, 64]).unwrap().to_string(), "C");
    }

    #[test]
    fn a_minor_and_inversions() {
        assert_eq!(detect_chord(&[57, 60, 64]), Some(Chord::new(9, true)));
        // C6 = {C, E, G, A}: both C and Am match; bass C picks C major
        assert_eq!(detect_chord(&[48, 57, 64, 67]), Some(Chord::new(0, false)));
    }

    #[test]
    fn no_template_match() {
        assert_eq!(detect_chord(&[60]), None);
        assert_eq!(detect_chord(&[60, 61, 62]), None);
        assert_eq!(detect_chord(&[]), None);
    }

    #[test]
    fn names_round_trip() {
        for id in 0..Chord::COUNT {
            let c = Chord::from_id(id).unwrap();
            assert_eq!(Chord::parse(&c.to_string()), Some(c));
        }
    }
}
