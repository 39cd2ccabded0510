//! JSON and CSV persistence.
//!
//! Floats are written with 17 significant digits (`{:.16e}`) and parsed with
//! correct rounding, so `load(save(x)) == x` bit for bit. Schema errors
//! report the dotted path of the offending field.

use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::ntk::{KernelMatrix, KernelRecord};

/// Shortest form guaranteed to round-trip: one leading digit, 16 decimals.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON with round-trip float formatting.
struct ExactFormatter {
    inner: PrettyFormatter<'static>,
}

impl ExactFormatter {
    fn new() -> Self {
        Self {
            inner: PrettyFormatter::with_indent(b"  "),
        }
    }
}

impl Formatter for ExactFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFormatter::new());
    value.serialize(&mut ser).map_err(|e| Error::Schema {
        field: String::new(),
        message: e.to_string(),
    })?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Parses JSON, naming the failing field as a dotted path (missing fields
/// included, e.g. `train.eta`).
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let mut field = err.path().to_string();
        let message = err.inner().to_string();
        if let Some(name) = missing_field(&message) {
            field = if field == "." || field.is_empty() {
                name.to_string()
            } else {
                format!("{field}.{name}")
            };
        }
        Error::Schema { field, message }
    })
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value)?)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json_str(&read_text(path)?)
}

/// Kernel JSON `{n, lambda_min, H}`.
pub fn save_kernel(path: &Path, k: &KernelMatrix) -> Result<()> {
    save_json(path, &KernelRecord::from_kernel(k)?)
}

pub fn load_kernel(path: &Path) -> Result<KernelMatrix> {
    load_json::<KernelRecord>(path)?.into_kernel()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Inner {
        eta: f64,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Outer {
        train: Inner,
        xs: Vec<f64>,
    }

    #[test]
    fn float_format_is_seventeen_digits() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-0.0), "-0.0000000000000000e0");
    }

    #[test]
    fn round_trip_is_bitwise() {
        let v = Outer {
            train: Inner { eta: 0.1 + 0.2 },
            xs: vec![f64::MIN_POSITIVE, 5e-324, f64::MAX, -1.0 / 3.0, -0.0],
        };
        let back: Outer = from_json_str(&to_json_string(&v).unwrap()).unwrap();
        for (a, b) in v.xs.iter().zip(&back.xs) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(v.train.eta.to_bits(), back.train.eta.to_bits());
    }

    #[test]
    fn missing_field_is_named() {
        match from_json_str::<Outer>(r#"{"train": {}, "xs": []}"#) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "train.eta"),
            other => panic!("{other:?}"),
        }
        match from_json_str::<Outer>(r#"{"train": {"eta": "x"}, "xs": []}"#) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "train.eta"),
            other => panic!("{other:?}"),
        }
        match from_json_str::<Outer>(r#"{"xs": []}"#) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "train"),
            other => panic!("{other:?}"),
        }
    }
}
