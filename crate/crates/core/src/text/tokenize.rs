use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Digit,
    Symbol,
}

fn classify(c: char) -> Class {
    if c.is_numeric() {
        Class::Digit
    } else if c.is_alphabetic() || c == '_' {
        Class::Word
    } else {
        Class::Symbol
    }
}

/// Lowercases and splits text into word runs, digit runs and single symbol characters.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("text is empty or whitespace-only".into()));
    }
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        let mut current_class = None;
        for c in chunk.chars() {
            let class = classify(c);
            if (class == Class::Symbol || current_class != Some(class))
                && !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            current.extend(c.to_lowercase());
            current_class = Some(class);
            if class == Class::Symbol {
                tokens.push(std::mem::take(&mut current));
                current_class = None;
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    Ok(tokens)
}

/// Lenient variant for metric scoring: empty text yields no tokens.
pub fn tokenize_or_empty(text: &str) -> Vec<String> {
    tokenize(text).unwrap_or_default()
}
