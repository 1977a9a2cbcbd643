//! MIDI files, the slot grid and the quad-token codec.

pub mod chord;
pub mod note;
pub mod quantize;
pub mod smf;
pub mod token;
pub mod vocab;

pub use chord::{detect_chord, Chord};
pub use note::{sort_notes, Instrument, Note, D2MIDI_INSTRUMENTS, DRUM_CHANNEL};
pub use quantize::{quantize, GridNote, Measure, QuantizedClip, SlotEvent, SLOTS_PER_MEASURE};
pub use smf::{parse_smf, write_smf, MidiClip, SmfError};
pub use token::{decode, encode, CodecError, Event, TokenQuad};
pub use vocab::{
    build_vocab, Field, TokenIds, Vocab, BOS, BOS_IDS, CONTENT_START, EOS, EOS_IDS, MASK, NONE, PAD, PAD_IDS,
};
