use super::{is_bangla_digit, NormalizationRules, Result, TextError};

/// Place values with their own word, largest first: crore, lakh, thousand, hundred.
pub(crate) const UNITS: [u64; 4] = [10_000_000, 100_000, 1_000, 100];

const MAX_READABLE: u64 = 99_999_999;

/// Maps ASCII digits onto Bangla digits and leaves everything else alone.
pub fn to_bangla_digits(s: &str) -> String {
    s.chars()
        .map(|c| match c.to_digit(10) {
            Some(d) if c.is_ascii_digit() => char::from_u32(0x09E6 + d).unwrap(),
            _ => c,
        })
        .collect()
}

fn word(rules: &NormalizationRules, n: u64) -> Result<&str> {
    let key = to_bangla_digits(&n.to_string());
    rules
        .digit_lexicon
        .get(&key)
        .map(String::as_str)
        .ok_or(TextError::MissingLexiconEntry(key))
}

/// Reads an integer in the Indian numbering system (crore, lakh, thousand,
/// hundred), e.g. ১২৩৪ as "এক হাজার দুই শত চৌত্রিশ".
pub fn number_to_words(number: &str, rules: &NormalizationRules) -> Result<String> {
    let digits = to_bangla_digits(number);
    if digits.is_empty() || !digits.chars().all(is_bangla_digit) {
        return Err(TextError::MalformedNumber(number.to_string()));
    }
    let significant = digits.trim_start_matches('০');
    if significant.chars().count() > 8 {
        return Err(TextError::NumberOutOfRange(number.to_string()));
    }
    let mut n: u64 = significant.chars().fold(0, |acc, c| acc * 10 + (c as u64 - 0x09E6));
    if n > MAX_READABLE {
        return Err(TextError::NumberOutOfRange(number.to_string()));
    }
    if n == 0 {
        return Ok(word(rules, 0)?.to_string());
    }
    let mut out: Vec<&str> = Vec::new();
    for unit in UNITS {
        let count = n / unit;
        if count > 0 {
            out.push(word(rules, count)?);
            out.push(word(rules, unit)?);
        }
        n %= unit;
    }
    if n > 0 {
        out.push(word(rules, n)?);
    }
    Ok(out.join(" "))
}
