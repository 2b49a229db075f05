use std::collections::BTreeMap;

use super::{Result, TextError};

/// Parses `key<TAB>value` lines; `#` starts a comment line and blank lines
/// are skipped.
pub fn parse_lexicon(source: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('\t').ok_or_else(|| TextError::MalformedLexicon {
            line: i + 1,
            reason: "expected key<TAB>value".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(TextError::MalformedLexicon {
                line: i + 1,
                reason: "empty key or value".into(),
            });
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(TextError::DuplicateKey(key.to_string()));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_entries() {
        let m = parse_lexicon("# header\n\nক\tখ\r\nগ\tঘ ঙ\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["গ"], "ঘ ঙ");
    }

    #[test]
    fn reports_line_of_malformed_entry() {
        assert_eq!(
            parse_lexicon("ক\tখ\nbroken\n").unwrap_err(),
            TextError::MalformedLexicon {
                line: 2,
                reason: "expected key<TAB>value".into()
            }
        );
    }

    #[test]
    fn duplicate_keys_rejected() {
        assert_eq!(
            parse_lexicon("ক\tখ\nক\tগ\n").unwrap_err(),
            TextError::DuplicateKey("ক".into())
        );
    }
}
