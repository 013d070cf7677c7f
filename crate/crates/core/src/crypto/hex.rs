//! Lowercase hex for byte arrays, used by the text formats.

use alloc::string::String;

const DIGITS: &[u8; 16] = b"0123456789abcdef";

pub fn encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 15) as usize] as char);
    }
    s
}

fn nibble(c: u8) -> Option<u8> {
    match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'a'..=b'f' => Some(c - b'a' + 10),
        b'A'..=b'F' => Some(c - b'A' + 10),
        _ => None,
    }
}

/// Decodes `s` into `out`; false unless `s` is exactly `2·out.len()` hex
/// digits.
pub fn decode_into(s: &str, out: &mut [u8]) -> bool {
    let b = s.as_bytes();
    if b.len() != 2 * out.len() {
        return false;
    }
    for (i, o) in out.iter_mut().enumerate() {
        match (nibble(b[2 * i]), nibble(b[2 * i + 1])) {
            (Some(h), Some(l)) => *o = h << 4 | l,
            _ => return false,
        }
    }
    true
}

pub fn decode(s: &str) -> Option<alloc::vec::Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    let mut out = alloc::vec![0u8; s.len() / 2];
    decode_into(s, &mut out).then_some(out)
}

/// Serde as a hex string for a newtype over `[u8; N]`.
macro_rules! serde_as_hex {
    ($t:ty, $n:expr) => {
        impl serde::Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&$crate::crypto::hex::encode(&self.0))
            }
        }

        impl<'de> serde::Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <alloc::borrow::Cow<'de, str> as serde::Deserialize>::deserialize(d)?;
                let mut out = [0u8; $n];
                if $crate::crypto::hex::decode_into(&s, &mut out) {
                    Ok(Self(out))
                } else {
                    Err(serde::de::Error::custom("expected hex bytes"))
                }
            }
        }
    };
}
pub(crate) use serde_as_hex;
