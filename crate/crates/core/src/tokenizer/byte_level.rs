//! The GPT-2 byte-to-printable-character table used by byte-level BPE vocab files.

use std::collections::HashMap;
use std::sync::OnceLock;

struct Tables {
    encoder: [char; 256],
    decoder: HashMap<char, u8>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let printable = |b: u8| {
            (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b)
        };
        let mut encoder = ['\0'; 256];
        let mut shifted = 0u32;
        for b in 0..=255u8 {
            encoder[b as usize] = if printable(b) {
                char::from(b)
            } else {
                let c = char::from_u32(256 + shifted).expect("valid code point");
                shifted += 1;
                c
            };
        }
        let decoder = encoder.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        Tables { encoder, decoder }
    })
}

/// Printable character standing in for `byte` in vocab and merges files.
pub fn byte_to_char(byte: u8) -> char {
    tables().encoder[byte as usize]
}

pub fn encode_bytes(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| byte_to_char(b)).collect()
}

/// Inverse of [`encode_bytes`]; `None` if a character is outside the alphabet.
pub fn decode_str(s: &str) -> Option<Vec<u8>> {
    let decoder = &tables().decoder;
    s.chars().map(|c| decoder.get(&c).copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_mappings() {
        assert_eq!(byte_to_char(b'a'), 'a');
        assert_eq!(byte_to_char(b' '), 'Ġ');
        assert_eq!(byte_to_char(b'\n'), 'Ċ');
        assert_eq!(byte_to_char(0), 'Ā');
    }

    #[test]
    fn table_is_a_bijection() {
        let chars: std::collections::HashSet<char> = (0..=255u8).map(byte_to_char).collect();
        assert_eq!(chars.len(), 256);
    }

    proptest! {
        #[test]
        fn round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(decode_str(&encode_bytes(&bytes)), Some(bytes));
        }
    }
}
