//! Text fixtures: one block per line, `FORMAT <hex payload>`. Blank lines
//! and `#` comments are ignored.

use super::{QuantFormat, QuantTensor};
use crate::error::{Error, Result};

pub fn write_fixture(t: &QuantTensor) -> String {
    let f = t.format();
    let mut s = String::new();
    for chunk in t.to_bytes().chunks(f.block_bytes()) {
        s.push_str(f.name());
        s.push(' ');
        s.push_str(&hex::encode(chunk));
        s.push('\n');
    }
    s
}

pub fn read_fixture(text: &str) -> Result<QuantTensor> {
    let mut format: Option<QuantFormat> = None;
    let mut bytes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Fixture {
            line: i + 1,
            message,
        };
        let (tag, payload) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| bad("expected `FORMAT hex`".into()))?;
        let f: QuantFormat = tag.parse().map_err(|e: Error| bad(e.to_string()))?;
        if *format.get_or_insert(f) != f {
            return Err(bad(format!("mixed formats {} and {f}", format.unwrap())));
        }
        let block = hex::decode(payload.trim()).map_err(|e| bad(e.to_string()))?;
        if block.len() != f.block_bytes() {
            return Err(bad(format!(
                "{f} block must be {} bytes, got {}",
                f.block_bytes(),
                block.len()
            )));
        }
        bytes.extend_from_slice(&block);
    }
    let f = format.ok_or(Error::Fixture {
        line: 0,
        message: "no blocks".into(),
    })?;
    QuantTensor::from_bytes(f, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantfmt::quantize;

    #[test]
    fn roundtrip() {
        let v: Vec<f32> = (0..512)
            .map(|i| ((i * 37 % 101) as f32 - 50.0) / 17.0)
            .collect();
        for f in QuantFormat::KERNELS.into_iter().chain([QuantFormat::Q8K]) {
            let t = quantize(f, &v).unwrap();
            let text = write_fixture(&t);
            assert_eq!(text.lines().count(), t.n_blocks());
            assert_eq!(read_fixture(&text).unwrap(), t);
        }
    }

    #[test]
    fn errors_carry_line() {
        let err = read_fixture("# c\nQ8_0 zz\n").unwrap_err();
        assert!(matches!(err, Error::Fixture { line: 2, .. }));
    }
}
