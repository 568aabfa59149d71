//! Reader for Python literal records (`{'asin': 'B00', 'categories': [['A']]}`),
//! the layout of older product metadata dumps.

use serde_json::{Map, Number, Value};

pub fn parse(text: &str) -> Result<Value, String> {
    let mut p = Parser {
        s: text.as_bytes(),
        src: text,
        i: 0,
    };
    p.ws();
    let v = p.value()?;
    p.ws();
    if p.i != p.s.len() {
        return Err(format!("trailing characters at byte {}", p.i));
    }
    Ok(v)
}

struct Parser<'a> {
    s: &'a [u8],
    src: &'a str,
    i: usize,
}

impl Parser<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.i).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), String> {
        if self.peek() == Some(c) {
            self.i += 1;
            Ok(())
        } else {
            Err(format!("expected {:?} at byte {}", c as char, self.i))
        }
    }

    fn value(&mut self) -> Result<Value, String> {
        match self.peek() {
            Some(b'{') => self.dict(),
            Some(b'[') => self.seq(b']'),
            Some(b'(') => self.seq(b')'),
            Some(b'\'') | Some(b'"') => self.string().map(Value::String),
            Some(c) if c == b'-' || c.is_ascii_digit() => self.number(),
            Some(_) => self.word(),
            None => Err("unexpected end of input".into()),
        }
    }

    fn dict(&mut self) -> Result<Value, String> {
        self.expect(b'{')?;
        let mut map = Map::new();
        loop {
            self.ws();
            if self.peek() == Some(b'}') {
                self.i += 1;
                return Ok(Value::Object(map));
            }
            let key = match self.value()? {
                Value::String(s) => s,
                other => other.to_string(),
            };
            self.ws();
            self.expect(b':')?;
            self.ws();
            let v = self.value()?;
            map.insert(key, v);
            self.ws();
            match self.peek() {
                Some(b',') => self.i += 1,
                Some(b'}') => {}
                _ => return Err(format!("expected ',' or '}}' at byte {}", self.i)),
            }
        }
    }

    fn seq(&mut self, close: u8) -> Result<Value, String> {
        self.i += 1;
        let mut out = Vec::new();
        loop {
            self.ws();
            if self.peek() == Some(close) {
                self.i += 1;
                return Ok(Value::Array(out));
            }
            out.push(self.value()?);
            self.ws();
            match self.peek() {
                Some(b',') => self.i += 1,
                Some(c) if c == close => {}
                _ => return Err(format!("expected ',' or {:?} at byte {}", close as char, self.i)),
            }
        }
    }

    fn string(&mut self) -> Result<String, String> {
        let quote = self.s[self.i];
        self.i += 1;
        let mut out = String::new();
        loop {
            let start = self.i;
            while self.i < self.s.len() && self.s[self.i] != quote && self.s[self.i] != b'\\' {
                self.i += 1;
            }
            out.push_str(&self.src[start..self.i]);
            match self.peek() {
                None => return Err("unterminated string".into()),
                Some(c) if c == quote => {
                    self.i += 1;
                    return Ok(out);
                }
                Some(_) => {
                    self.i += 1;
                    let esc = self.peek().ok_or("dangling escape")?;
                    self.i += 1;
                    match esc {
                        b'n' => out.push('\n'),
                        b't' => out.push('\t'),
                        b'r' => out.push('\r'),
                        b'0' => out.push('\0'),
                        b'x' => out.push(self.hex(2)?),
                        b'u' => out.push(self.hex(4)?),
                        b'U' => out.push(self.hex(8)?),
                        b'\\' | b'\'' | b'"' => out.push(esc as char),
                        other => {
                            out.push('\\');
                            out.push(other as char);
                        }
                    }
                }
            }
        }
    }

    fn hex(&mut self, n: usize) -> Result<char, String> {
        let digits = self.src.get(self.i..self.i + n).ok_or("short escape")?;
        let code = u32::from_str_radix(digits, 16).map_err(|e| e.to_string())?;
        self.i += n;
        Ok(char::from_u32(code).unwrap_or(char::REPLACEMENT_CHARACTER))
    }

    fn number(&mut self) -> Result<Value, String> {
        let start = self.i;
        self.i += 1;
        while self.i < self.s.len() && matches!(self.s[self.i], b'0'..=b'9' | b'.' | b'e' | b'E' | b'+' | b'-') {
            self.i += 1;
        }
        let text = &self.src[start..self.i];
        if let Ok(n) = text.parse::<i64>() {
            return Ok(Value::Number(n.into()));
        }
        let f: f64 = text.parse().map_err(|_| format!("bad number {text:?}"))?;
        Number::from_f64(f).map(Value::Number).ok_or_else(|| format!("non-finite number {text:?}"))
    }

    fn word(&mut self) -> Result<Value, String> {
        let start = self.i;
        while self.i < self.s.len() && self.s[self.i].is_ascii_alphabetic() {
            self.i += 1;
        }
        match &self.src[start..self.i] {
            "True" => Ok(Value::Bool(true)),
            "False" => Ok(Value::Bool(false)),
            "None" => Ok(Value::Null),
            w => Err(format!("unexpected token {w:?} at byte {start}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_metadata_record() {
        let v = parse(r#"{'asin': '0205616461', 'title': "Bo's \"Best\" Cream", 'price': 5.5, 'salesRank': {'Beauty': 10486}, 'categories': [['Beauty', 'Skin Care', 'Face']], 'related': None, 'ok': True}"#).unwrap();
        assert_eq!(
            v,
            json!({
                "asin": "0205616461",
                "title": "Bo's \"Best\" Cream",
                "price": 5.5,
                "salesRank": {"Beauty": 10486},
                "categories": [["Beauty", "Skin Care", "Face"]],
                "related": null,
                "ok": true
            })
        );
    }

    #[test]
    fn tuples_and_escapes() {
        assert_eq!(parse(r"('a\'b', -3, 1e2)").unwrap(), json!(["a'b", -3, 100.0]));
        assert_eq!(parse(r"'caf\xe9'").unwrap(), json!("café"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("{'a': }").is_err());
        assert!(parse("{'a': 1} x").is_err());
        assert!(parse("'open").is_err());
    }
}
