use std::sync::LazyLock;

use regex::Regex;

use super::Scenario;

pub const PRICE_TOKEN: &str = "<price>";

/// Bare numerals count as prices only inside this band around the listing.
const BARE_LOW: f64 = 0.2;
const BARE_HIGH: f64 = 2.0;

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (?P<cur>\$\s?\d+(?:,\d{3})*(?:\.\d+)?(?:k\b)?)
        | (?P<num>\d+(?:,\d{3})*(?:\.\d+)?(?:k\b)?)
        | (?P<word>[\p{L}_]+(?:'[\p{L}]+)*)
        | (?P<punct>[^\s\p{L}\p{N}_])
        ",
    )
    .expect("valid token regex")
});

/// Parses `7,050`, `$7050.5`, `$7k` style amounts.
pub fn parse_amount(s: &str) -> Option<f64> {
    let s = s.trim().trim_start_matches('$').trim();
    let (digits, mult) = match s.strip_suffix('k') {
        Some(rest) => (rest, 1000.0),
        None => (s, 1.0),
    };
    if digits.is_empty() || !digits.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    if !digits.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.') {
        return None;
    }
    let v: f64 = digits.replace(',', "").parse().ok()?;
    let v = v * mult;
    v.is_finite().then_some(v)
}

/// Lowercased tokenization with price abstraction. Currency-prefixed
/// amounts are always prices; bare numerals only when a listing price is
/// known and the value is within `[0.2, 2.0] x listing`.
pub fn tokenize(text: &str, listing_price: Option<f64>) -> (Vec<String>, Vec<f64>) {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut prices = Vec::new();
    for caps in TOKEN_RE.captures_iter(&lower) {
        if let Some(m) = caps.name("cur") {
            match parse_amount(m.as_str()) {
                Some(v) => {
                    tokens.push(PRICE_TOKEN.to_string());
                    prices.push(v);
                }
                None => tokens.push(m.as_str().to_string()),
            }
        } else if let Some(m) = caps.name("num") {
            let value = parse_amount(m.as_str());
            match (value, listing_price) {
                (Some(v), Some(listing)) if v >= BARE_LOW * listing && v <= BARE_HIGH * listing => {
                    tokens.push(PRICE_TOKEN.to_string());
                    prices.push(v);
                }
                _ => tokens.push(m.as_str().to_string()),
            }
        } else if let Some(m) = caps.name("word").or_else(|| caps.name("punct")) {
            tokens.push(m.as_str().to_string());
        }
    }
    (tokens, prices)
}

pub fn tokenize_with_price_abstraction(text: &str, context: &Scenario) -> (Vec<String>, Vec<f64>) {
    tokenize(text, Some(context.listing_price))
}

/// `$` + integer if whole, two decimals if the value has cents, otherwise the
/// shortest exact representation.
pub fn format_price(price: f64) -> String {
    if price.fract() == 0.0 && price.abs() < 1e15 {
        format!("${}", price as i64)
    } else if ((price * 100.0).round() / 100.0 - price).abs() < 1e-9 {
        format!("${price:.2}")
    } else {
        format!("${price}")
    }
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Puts the formatted values back at the sentinel positions, in order.
pub fn reinsert_prices(tokens: &[String], prices: &[f64]) -> String {
    let mut values = prices.iter();
    let parts: Vec<String> = tokens
        .iter()
        .map(|t| {
            if t == PRICE_TOKEN {
                values.next().map_or_else(|| t.clone(), |p| format_price(*p))
            } else {
                t.clone()
            }
        })
        .collect();
    parts.join(" ")
}
