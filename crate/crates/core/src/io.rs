//! Plain-text file formats.
//!
//! * mesh: node count, `x y` per line; triangle count, `a b c` per line
//!   (0-based); electrode count, one node index per line.
//! * element values: count, then one value per line.
//! * voltage frames: one `drive measure value` line per reading (0-based
//!   electrode numbers); frames in one file are separated by `# frame <t>`.
//! * phantom: TOML with `background` and an `[[inclusions]]` list.
//! * images: 16-bit binary PGM plus a sidecar text file mapping gray levels
//!   to conductivity; gray level 0 marks pixels outside the domain.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{invalid, EitError, Result};
use crate::forward::{NeighboringProtocol, VoltageFrame};
use crate::image::Image;
use crate::mesh::{ElectrodeLayout, TriMesh};
use crate::phantom::PhantomSpec;
use crate::scalar::Real;

fn parse_err(line: usize, message: impl Into<String>) -> EitError {
    EitError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_value<T: Real>(tok: &str, line: usize) -> Result<T> {
    match tok {
        "NaN" | "nan" => Ok(T::nan()),
        _ => tok
            .parse::<T>()
            .map_err(|_| parse_err(line, format!("bad number `{tok}`"))),
    }
}

fn parse_index(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(line, format!("bad index `{tok}`")))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn format_mesh<T: Real>(mesh: &TriMesh<T>, layout: Option<&ElectrodeLayout<T>>) -> String {
    let mut out = String::new();
    writeln!(out, "{}", mesh.node_count()).unwrap();
    for p in mesh.nodes() {
        writeln!(out, "{:e} {:e}", p[0], p[1]).unwrap();
    }
    writeln!(out, "{}", mesh.element_count()).unwrap();
    for t in mesh.triangles() {
        writeln!(out, "{} {} {}", t[0], t[1], t[2]).unwrap();
    }
    let ids = layout.map_or(&[][..], |l| l.node_ids());
    writeln!(out, "{}", ids.len()).unwrap();
    for id in ids {
        writeln!(out, "{id}").unwrap();
    }
    out
}

/// Parses a mesh file; the electrode layout is `None` when the electrode
/// section is empty.
pub fn parse_mesh<T: Real>(text: &str) -> Result<(TriMesh<T>, Option<ElectrodeLayout<T>>)> {
    let mut it = records(text);
    let mut next = |what: &str| {
        it.next()
            .ok_or_else(|| parse_err(0, format!("unexpected end of file in {what}")))
    };
    let (ln, l) = next("header")?;
    let n_nodes = parse_index(l, ln)?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, l) = next("nodes")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(ln, "expected `x y`"));
        }
        nodes.push([parse_value(toks[0], ln)?, parse_value(toks[1], ln)?]);
    }
    let (ln, l) = next("triangle count")?;
    let n_tri = parse_index(l, ln)?;
    let mut tris = Vec::with_capacity(n_tri);
    for _ in 0..n_tri {
        let (ln, l) = next("triangles")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(ln, "expected `a b c`"));
        }
        tris.push([
            parse_index(toks[0], ln)?,
            parse_index(toks[1], ln)?,
            parse_index(toks[2], ln)?,
        ]);
    }
    let (ln, l) = next("electrode count")?;
    let n_el = parse_index(l, ln)?;
    let mut ids = Vec::with_capacity(n_el);
    for _ in 0..n_el {
        let (ln, l) = next("electrodes")?;
        ids.push(parse_index(l, ln)?);
    }
    let mesh = TriMesh::from_parts(nodes, tris)?;
    let layout = if ids.is_empty() {
        None
    } else {
        Some(ElectrodeLayout::from_node_ids(&mesh, ids)?)
    };
    Ok((mesh, layout))
}

pub fn format_element_values<T: Real>(values: &[T]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    writeln!(out, "{}", values.len()).unwrap();
    for v in values {
        writeln!(out, "{v:e}").unwrap();
    }
    out
}

pub fn parse_element_values<T: Real>(text: &str) -> Result<Vec<T>> {
    let mut it = records(text);
    let (ln, l) = it.next().ok_or_else(|| parse_err(0, "empty file"))?;
    let n = parse_index(l, ln)?;
    let values = it
        .map(|(ln, l)| parse_value(l, ln))
        .collect::<Result<Vec<T>>>()?;
    if values.len() != n {
        return Err(parse_err(
            ln,
            format!("header says {n} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

/// Several element-value blocks separated by `# frame <t>` lines.
pub fn format_element_frames<T: Real>(frames: &[Vec<T>]) -> String {
    let mut out = String::new();
    for (t, f) in frames.iter().enumerate() {
        writeln!(out, "# frame {t}").unwrap();
        out.push_str(&format_element_values(f));
    }
    out
}

fn split_frames(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut start = 0;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if line.trim_start().starts_with("# frame") {
            if !text[start..pos].trim().is_empty() {
                blocks.push(&text[start..pos]);
            }
            start = pos + line.len();
        }
        pos += line.len();
    }
    if !text[start..].trim().is_empty() {
        blocks.push(&text[start..]);
    }
    blocks
}

pub fn parse_element_frames<T: Real>(text: &str) -> Result<Vec<Vec<T>>> {
    split_frames(text)
        .into_iter()
        .map(parse_element_values)
        .collect()
}

pub fn format_frames<T: Real>(frames: &[VoltageFrame<T>]) -> String {
    let mut out = String::new();
    for (t, frame) in frames.iter().enumerate() {
        writeln!(out, "# frame {t}").unwrap();
        for ((j, i), v) in frame.protocol().pairs().into_iter().zip(frame.values()) {
            writeln!(out, "{j} {i} {v:e}").unwrap();
        }
    }
    out
}

fn parse_frame_block<T: Real>(text: &str) -> Result<VoltageFrame<T>> {
    let mut entries = Vec::new();
    for (ln, l) in records(text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(ln, "expected `drive measure value`"));
        }
        entries.push((
            parse_index(toks[0], ln)?,
            parse_index(toks[1], ln)?,
            parse_value::<T>(toks[2], ln)?,
            ln,
        ));
    }
    let electrodes = entries
        .iter()
        .map(|&(j, i, _, _)| j.max(i) + 1)
        .max()
        .ok_or_else(|| parse_err(0, "empty frame"))?;
    let protocol = NeighboringProtocol::new(electrodes)?;
    if entries.len() != protocol.measurement_count() {
        return Err(invalid(
            "voltage frame",
            format!(
                "{} readings for {electrodes} electrodes, expected {}",
                entries.len(),
                protocol.measurement_count()
            ),
        ));
    }
    let mut values = vec![T::nan(); entries.len()];
    for (j, i, v, ln) in entries {
        let p = protocol
            .index_of(j, i)
            .ok_or_else(|| parse_err(ln, format!("pair ({j}, {i}) not in the protocol")))?;
        if !values[p].is_nan() {
            return Err(parse_err(ln, format!("duplicate pair ({j}, {i})")));
        }
        values[p] = v;
    }
    VoltageFrame::new(electrodes, values)
}

pub fn parse_frames<T: Real>(text: &str) -> Result<Vec<VoltageFrame<T>>> {
    let frames = split_frames(text)
        .into_iter()
        .map(parse_frame_block)
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(parse_err(0, "no frames"));
    }
    Ok(frames)
}

pub fn phantom_to_toml<T: Real + Serialize>(spec: &PhantomSpec<T>) -> Result<String> {
    toml::to_string(spec).map_err(|e| invalid("phantom", e.to_string()))
}

pub fn phantom_from_toml<T: Real + DeserializeOwned>(text: &str) -> Result<PhantomSpec<T>> {
    let spec: PhantomSpec<T> = toml::from_str(text).map_err(|e| parse_err(0, e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub const PGM_MAX: u16 = u16::MAX;

/// 16-bit PGM bytes and the sidecar text. In-domain values map linearly onto
/// gray levels `1..=65535` over `[lo, hi]`.
pub fn encode_pgm<T: Real>(image: &Image<T>) -> (Vec<u8>, String) {
    let (lo, hi) = image.value_range().unwrap_or((T::zero(), T::one()));
    let span = if hi > lo { hi - lo } else { T::one() };
    let levels = T::lit(f64::from(PGM_MAX - 1));
    let mut bytes = format!("P5\n{} {}\n{}\n", image.width(), image.height(), PGM_MAX).into_bytes();
    for &v in image.pixels() {
        let g: u16 = if v.is_nan() {
            0
        } else {
            let t = ((v - lo) / span * levels).round().to_u16().unwrap_or(0);
            1 + t.min(PGM_MAX - 1)
        };
        bytes.extend_from_slice(&g.to_be_bytes());
    }
    let sidecar = format!(
        "# conductivity (S/m) = min + (gray - 1) * (max - min) / {}\n\
         # gray 0 = outside the domain\n\
         min {lo:e}\nmax {hi:e}\nlevels {}\noutside 0\n",
        PGM_MAX - 1,
        PGM_MAX
    );
    (bytes, sidecar)
}

/// Writes `<stem>.pgm` and `<stem>.txt`.
pub fn write_pgm<T: Real>(image: &Image<T>, stem: &Path) -> Result<()> {
    let (bytes, sidecar) = encode_pgm(image);
    fs::write(stem.with_extension("pgm"), bytes)?;
    fs::write(stem.with_extension("txt"), sidecar)?;
    Ok(())
}
