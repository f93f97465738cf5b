//! Fixed-precision number formatting for JSON reports and CSV exports.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

/// Significant digits of floats in JSON output; enough to round-trip any `f64`.
pub const JSON_DIGITS: usize = 17;
/// Significant digits of floats in readable CSV output.
pub const CSV_DIGITS: usize = 6;

/// Formats a finite `v` with exactly `digits` significant digits.
///
/// Positional notation is used for decimal exponents in `-5..digits`,
/// scientific notation otherwise. Non-finite values print as `NaN`, `inf` or
/// `-inf`.
pub fn sig(v: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return if digits == 1 {
            "0".into()
        } else {
            format!("0.{}", "0".repeat(digits - 1))
        };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let figures: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if negative { "-" } else { "" };
    if exp < -5 || exp >= digits as i32 {
        return format!("{mantissa}e{exp}");
    }
    if exp < 0 {
        return format!("{sign}0.{}{figures}", "0".repeat((-exp - 1) as usize));
    }
    let split = exp as usize + 1;
    if split == figures.len() {
        format!("{sign}{figures}")
    } else {
        format!("{sign}{}.{}", &figures[..split], &figures[split..])
    }
}

/// Pretty JSON formatter that writes floats with [`JSON_DIGITS`] significant digits.
struct SigFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for SigFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(sig(value, JSON_DIGITS).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

/// Pretty-printed JSON with fixed-precision floats and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut out,
        SigFormatter {
            inner: PrettyFormatter::new(),
        },
    );
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}
