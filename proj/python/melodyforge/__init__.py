"""Melody generation with an attention LSTM over a sixteenth-note token grid."""

from ._melodyforge import (
    END,
    REST,
    VOCAB_SIZE,
    MelodyforgeError,
    Model,
    NoteEvent,
    decode_tokens,
    encode_tokens,
    extract_notes,
    generate,
    generate_midi,
    midi_info,
    name_to_token,
    parse_note_list,
    pitch_to_frequency,
    pitch_to_name,
    read_vlq,
    roundtrip_midi,
    token_name,
    train,
    write_vlq,
)

__version__ = "0.1.0"
