//! Input decoding shared by the fuzz targets.

use origami::tokenizer::{CanonicalFloat, Primitive};
use origami::Token;

const KEYS: [&str; 4] = ["a", "b", "c", "d"];

/// Maps each byte to one token from a small alphabet.
pub fn tokens_from_bytes(data: &[u8]) -> Vec<Token> {
    data.iter()
        .map(|&b| {
            let arg = (b >> 4) as usize;
            match b & 0x0f {
                0 => Token::Start,
                1 => Token::End,
                2 => Token::ObjStart,
                3 => Token::ObjEnd,
                4 => Token::Obj,
                5 => Token::Unknown,
                6 => Token::Pad,
                7 => Token::Array(arg % 5),
                8..=10 => Token::Key(KEYS[arg % KEYS.len()].to_string()),
                11 => Token::Value(Primitive::Int(arg as i64 - 8)),
                12 => Token::Value(Primitive::Str(KEYS[arg % KEYS.len()].to_string())),
                13 => Token::Value(Primitive::Bool(arg % 2 == 0)),
                14 => Token::Value(Primitive::Float(CanonicalFloat::new(arg as f64 / 4.0).expect("finite"))),
                _ => Token::Value(Primitive::Null),
            }
        })
        .collect()
}

/// Splits `data` at the first two zero bytes.
pub fn three_parts(data: &[u8]) -> (&[u8], &[u8], &[u8]) {
    let mut parts = data.splitn(3, |&b| b == 0);
    let a = parts.next().unwrap_or_default();
    let b = parts.next().unwrap_or_default();
    let c = parts.next().unwrap_or_default();
    (a, b, c)
}
