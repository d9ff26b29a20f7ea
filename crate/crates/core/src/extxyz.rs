//! Minimal Extended XYZ reader and writer.
//!
//! Supports the `Properties=` column schema with `S`, `R`, `I` and `L`
//! column types and `key=value` info pairs with double-quoted values.
//! Periodic cells are carried through as info strings but otherwise ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub info: BTreeMap<String, String>,
    pub species: Vec<String>,
    pub positions: Vec<Vec3>,
    /// Extra real-valued per-atom columns, in file order.
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    /// `values[atom][component]`
    pub values: Vec<Vec<f64>>,
}

impl Frame {
    pub fn new(species: Vec<String>, positions: Vec<Vec3>) -> Self {
        Self {
            info: BTreeMap::new(),
            species,
            positions,
            columns: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn push_scalar_column(&mut self, name: impl Into<String>, values: &[f64]) {
        self.columns.push(Column {
            name: name.into(),
            values: values.iter().map(|&v| vec![v]).collect(),
        });
    }
}

/// Float formatting used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Shortest representation that parses back to the identical `f64`.
    RoundTrip,
    /// Fixed number of significant digits in scientific notation.
    Significant(usize),
}

impl Precision {
    fn format(self, out: &mut String, v: f64) {
        match self {
            Precision::RoundTrip => {
                let _ = write!(out, "{v:?}");
            }
            Precision::Significant(d) => {
                let _ = write!(out, "{:.*e}", d.saturating_sub(1), v);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Str,
    Real,
    Int,
    Logical,
}

struct Property {
    name: String,
    kind: Kind,
    width: usize,
}

fn parse_info(line: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut info = BTreeMap::new();
    let mut chars = line.trim().chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek() != Some(&'=') {
            // bare flag
            info.insert(key, "T".to_string());
            continue;
        }
        chars.next();
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            let mut closed = false;
            for c in chars.by_ref() {
                if c == '"' {
                    closed = true;
                    break;
                }
                value.push(c);
            }
            if !closed {
                return Err(format!("unterminated quote in value of `{key}`"));
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        info.insert(key, value);
    }
    Ok(info)
}

fn parse_properties(spec: &str) -> std::result::Result<Vec<Property>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() % 3 != 0 {
        return Err(format!("malformed Properties `{spec}`"));
    }
    parts
        .chunks(3)
        .map(|c| {
            let kind = match c[1] {
                "S" => Kind::Str,
                "R" => Kind::Real,
                "I" => Kind::Int,
                "L" => Kind::Logical,
                other => return Err(format!("unknown property type `{other}`")),
            };
            let width = c[2]
                .parse::<usize>()
                .map_err(|_| format!("bad column count `{}`", c[2]))?;
            Ok(Property {
                name: c[0].to_string(),
                kind,
                width,
            })
        })
        .collect()
}

/// Parses every frame in `text`. `path` is only used for error messages.
pub fn parse_str(text: &str, path: &Path) -> Result<Vec<Frame>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut at = 0;
    while at < lines.len() {
        if lines[at].trim().is_empty() {
            at += 1;
            continue;
        }
        let count: usize = lines[at]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, at + 1, "expected atom count"))?;
        let comment_line = at + 2;
        let comment = lines
            .get(at + 1)
            .ok_or_else(|| Error::parse(path, comment_line, "missing comment line"))?;
        let info = parse_info(comment).map_err(|m| Error::parse(path, comment_line, m))?;
        let props = match info.get("Properties") {
            Some(p) => parse_properties(p).map_err(|m| Error::parse(path, comment_line, m))?,
            None => vec![
                Property {
                    name: "species".into(),
                    kind: Kind::Str,
                    width: 1,
                },
                Property {
                    name: "pos".into(),
                    kind: Kind::Real,
                    width: 3,
                },
            ],
        };
        if !props
            .iter()
            .any(|p| p.name == "pos" && p.kind == Kind::Real && p.width == 3)
        {
            return Err(Error::parse(path, comment_line, "no `pos:R:3` property"));
        }
        let expected_fields: usize = props.iter().map(|p| p.width).sum();
        let mut species = Vec::with_capacity(count);
        let mut positions = Vec::with_capacity(count);
        let mut columns: Vec<Column> = props
            .iter()
            .filter(|p| p.kind == Kind::Real && p.name != "pos")
            .map(|p| Column {
                name: p.name.clone(),
                values: Vec::with_capacity(count),
            })
            .collect();
        for a in 0..count {
            let lineno = at + 3 + a;
            let line = lines
                .get(at + 2 + a)
                .ok_or_else(|| Error::parse(path, lineno, "unexpected end of frame"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != expected_fields {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {expected_fields} fields, found {}", fields.len()),
                ));
            }
            let mut f = 0;
            let mut col = 0;
            for p in &props {
                let slice = &fields[f..f + p.width];
                f += p.width;
                let reals = || -> Result<Vec<f64>> {
                    slice
                        .iter()
                        .map(|s| {
                            s.parse::<f64>()
                                .map_err(|_| Error::parse(path, lineno, format!("bad number `{s}`")))
                        })
                        .collect()
                };
                match (p.name.as_str(), p.kind) {
                    ("species", _) => species.push(slice[0].to_string()),
                    ("pos", Kind::Real) => {
                        let v = reals()?;
                        positions.push(Vec3::new(v[0], v[1], v[2]));
                    }
                    (_, Kind::Real) => {
                        columns[col].values.push(reals()?);
                        col += 1;
                    }
                    _ => {}
                }
            }
        }
        if species.len() != count {
            species = vec!["X".to_string(); count];
        }
        frames.push(Frame {
            info,
            species,
            positions,
            columns,
        });
        at += 2 + count;
    }
    Ok(frames)
}

pub fn read(path: &Path) -> Result<Vec<Frame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_str(&text, path)
}

fn quote(v: &str) -> String {
    if v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '=') {
        format!("\"{v}\"")
    } else {
        v.to_string()
    }
}

pub fn write_frame(out: &mut String, frame: &Frame, precision: Precision) {
    let _ = writeln!(out, "{}", frame.positions.len());
    let mut props = String::from("species:S:1:pos:R:3");
    for c in &frame.columns {
        let width = c.values.first().map_or(1, Vec::len);
        let _ = write!(props, ":{}:R:{}", c.name, width);
    }
    let mut comment = format!("Properties={props}");
    for (k, v) in &frame.info {
        if k == "Properties" {
            continue;
        }
        let _ = write!(comment, " {}={}", k, quote(v));
    }
    let _ = writeln!(out, "{comment}");
    for (a, p) in frame.positions.iter().enumerate() {
        out.push_str(&frame.species[a]);
        for c in p.iter() {
            out.push(' ');
            precision.format(out, *c);
        }
        for col in &frame.columns {
            for v in &col.values[a] {
                out.push(' ');
                precision.format(out, *v);
            }
        }
        out.push('\n');
    }
}

pub fn to_string(frames: &[Frame], precision: Precision) -> String {
    let mut out = String::new();
    for f in frames {
        write_frame(&mut out, f, precision);
    }
    out
}

pub fn write(path: &Path, frames: &[Frame], precision: Precision) -> Result<()> {
    std::fs::write(path, to_string(frames, precision)).map_err(|e| Error::io(path, e))
}
