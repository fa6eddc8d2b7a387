use std::fmt;

const MARKER: &str = "numerical answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParsedAnswer {
    Digit(u8),
    Unparseable,
}

impl ParsedAnswer {
    pub fn value(self) -> Option<f64> {
        match self {
            ParsedAnswer::Digit(d) => Some(f64::from(d)),
            ParsedAnswer::Unparseable => None,
        }
    }
}

impl fmt::Display for ParsedAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParsedAnswer::Digit(d) => write!(f, "{d}"),
            ParsedAnswer::Unparseable => f.write_str("Unparseable"),
        }
    }
}

/// Extracts a 1..=5 Likert answer from generated text.
///
/// If the text mentions "Numerical Answer" (any case), only the text after
/// its last mention is searched; otherwise the whole text is. The answer is
/// the first standalone digit 1-5: not touching letters or other digits,
/// and not part of a decimal number.
pub fn parse_numeric_answer(text: &str) -> ParsedAnswer {
    let lower = text.to_ascii_lowercase();
    let start = lower.rfind(MARKER).map_or(0, |i| i + MARKER.len());
    let bytes = text.as_bytes();
    for i in start..bytes.len() {
        let c = bytes[i];
        if !(b'1'..=b'5').contains(&c) {
            continue;
        }
        if is_standalone(bytes, i) {
            return ParsedAnswer::Digit(c - b'0');
        }
    }
    ParsedAnswer::Unparseable
}

fn is_standalone(bytes: &[u8], i: usize) -> bool {
    let before = i.checked_sub(1).map(|j| bytes[j]);
    let after = bytes.get(i + 1).copied();
    if before.is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_') {
        return false;
    }
    if after.is_some_and(|a| a.is_ascii_alphanumeric() || a == b'_') {
        return false;
    }
    // Decimal point on either side: "3.5", "0.4".
    let decimal_before = matches!(before, Some(b'.' | b','))
        && i >= 2
        && bytes[i - 2].is_ascii_digit();
    let decimal_after = matches!(after, Some(b'.' | b','))
        && bytes.get(i + 2).is_some_and(u8::is_ascii_digit);
    !(decimal_before || decimal_after)
}
