//! Deterministic CSV emission: header row, floats with 17 significant
//! digits, rows in a fixed order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub struct CsvWriter {
    w: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(Self { w })
    }

    pub fn row(&mut self, fields: &[CsvField]) -> std::io::Result<()> {
        let mut first = true;
        for f in fields {
            if !first {
                write!(self.w, ",")?;
            }
            first = false;
            match f {
                CsvField::Int(v) => write!(self.w, "{v}")?,
                CsvField::Float(v) => write!(self.w, "{}", fmt_f64(*v))?,
                CsvField::Str(s) => write!(self.w, "{s}")?,
            }
        }
        writeln!(self.w)?;
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.w.flush()
    }
}

pub enum CsvField {
    Int(i64),
    Float(f64),
    Str(&'static str),
}

/// 17 significant digits, locale-free.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_17_digits_and_round_trips() {
        let v = std::f64::consts::PI;
        let s = fmt_f64(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
        let mantissa: String = s.chars().filter(|c| c.is_ascii_digit()).take(17).collect();
        assert_eq!(mantissa.len(), 17);
    }
}
