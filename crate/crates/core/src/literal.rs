//! Complex number literals of the form `re`, `imi`, or `re+imi`.

use crate::series::C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("malformed complex literal `{0}`")]
pub struct LiteralError(pub String);

pub fn parse_complex(text: &str) -> Result<C64, LiteralError> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let err = || LiteralError(text.to_string());
    if s.is_empty() {
        return Err(err());
    }
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return s.parse::<f64>().map(|r| C64::new(r, 0.0)).map_err(|_| err());
    };
    // Split at the last sign that is not the leading sign and not an exponent sign.
    let bytes = body.as_bytes();
    let mut split = None;
    for k in (1..bytes.len()).rev() {
        if (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E') {
            split = Some(k);
            break;
        }
    }
    let (re_part, im_part) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("", body),
    };
    let re = if re_part.is_empty() {
        0.0
    } else {
        re_part.parse::<f64>().map_err(|_| err())?
    };
    let im = match im_part {
        "" | "+" => 1.0,
        "-" => -1.0,
        t => t.parse::<f64>().map_err(|_| err())?,
    };
    Ok(C64::new(re, im))
}

/// Parse `a;b;c` or `a,b,c` lists of complex literals.
pub fn parse_complex_list(text: &str) -> Result<Vec<C64>, LiteralError> {
    text.split([';', ','])
        .filter(|t| !t.trim().is_empty())
        .map(parse_complex)
        .collect()
}

pub fn format_complex(z: C64) -> String {
    if z.im >= 0.0 {
        format!("{:.16e}+{:.16e}i", z.re, z.im)
    } else {
        format!("{:.16e}{:.16e}i", z.re, z.im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_forms() {
        assert_eq!(parse_complex("1.5").unwrap(), C64::new(1.5, 0.0));
        assert_eq!(parse_complex("-2").unwrap(), C64::new(-2.0, 0.0));
        assert_eq!(parse_complex("3i").unwrap(), C64::new(0.0, 3.0));
        assert_eq!(parse_complex("-i").unwrap(), C64::new(0.0, -1.0));
        assert_eq!(parse_complex("1+2i").unwrap(), C64::new(1.0, 2.0));
        assert_eq!(parse_complex("1.5e-3-2e+2i").unwrap(), C64::new(1.5e-3, -200.0));
        assert_eq!(parse_complex(" 0.5 - i ").unwrap(), C64::new(0.5, -1.0));
        assert!(parse_complex("abc").is_err());
        assert!(parse_complex("").is_err());
    }

    #[test]
    fn format_round_trip() {
        for z in [C64::new(0.1, -0.3), C64::new(-1e-300, 2.5e10), C64::new(0.0, 0.0)] {
            assert_eq!(parse_complex(&format_complex(z)).unwrap(), z);
        }
    }
}
