//! Binary little-endian PLY in the 3DGS property layout.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::GaussianCloud;
use crate::{Error, Result};

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

/// Quaternions further than this from unit norm are renormalized at load.
const UNIT_NORM_TOL: f64 = 1e-6;

/// Property names in the order [`save_ply`] writes them.
fn property_names(sh_coeffs: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for k in 0..3 * (sh_coeffs - 1) {
        names.push(format!("f_rest_{k}"));
    }
    names.push("opacity".into());
    names.extend((0..3).map(|k| format!("scale_{k}")));
    names.extend((0..4).map(|k| format!("rot_{k}")));
    names
}

pub fn ply_header(n: usize, sh_coeffs: usize) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("element vertex {n}\n"));
    for name in property_names(sh_coeffs) {
        h.push_str(&format!("property float {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

/// Serializes `cloud` into `w`. Normals are written as zeros.
pub fn write_ply<W: Write>(cloud: &GaussianCloud, w: &mut W) -> std::io::Result<()> {
    let k = cloud.sh_coeffs;
    w.write_all(ply_header(cloud.len(), k).as_bytes())?;
    let mut row: Vec<f32> = Vec::with_capacity(14 + 3 * k);
    for i in 0..cloud.len() {
        row.clear();
        row.extend_from_slice(&cloud.means[i]);
        row.extend_from_slice(&[0.0; 3]);
        let sh = &cloud.sh[i * k..(i + 1) * k];
        row.extend_from_slice(&sh[0]);
        // f_rest is channel-major: all coefficients of R, then G, then B.
        for c in 0..3 {
            row.extend(sh[1..].iter().map(|coef| coef[c]));
        }
        row.push(cloud.opacities[i]);
        row.extend_from_slice(&cloud.scales[i]);
        row.extend_from_slice(&cloud.rotations[i]);
        for v in &row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_ply(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(cloud, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Header {
    vertex_count: usize,
    properties: Vec<String>,
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut next_line = |r: &mut R, line: &mut String| -> Result<usize> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        lineno += 1;
        if n == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: "unexpected end of file in header".into(),
            });
        }
        Ok(lineno)
    };
    let bad = |line: usize, message: String| Error::Parse { line, message };

    let ln = next_line(r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(bad(
            ln,
            format!("expected `ply`, found `{}`", line.trim_end()),
        ));
    }

    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut in_vertex = false;
    loop {
        let ln = next_line(r, &mut line)?;
        let text = line.trim_end();
        let mut tok = text.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("binary_little_endian") {
                    return Err(bad(ln, format!("unsupported format `{text}`")));
                }
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tok.next();
                let count = tok.next().and_then(|c| c.parse::<usize>().ok());
                match (name, count) {
                    (Some("vertex"), Some(c)) => {
                        if vertex_count.is_some() {
                            return Err(bad(ln, "duplicate vertex element".into()));
                        }
                        vertex_count = Some(c);
                        in_vertex = true;
                    }
                    (Some(other), Some(_)) => {
                        return Err(bad(ln, format!("unsupported element `{other}`")));
                    }
                    _ => return Err(bad(ln, format!("malformed element line `{text}`"))),
                }
            }
            Some("property") => {
                if !in_vertex {
                    return Err(bad(ln, "property outside vertex element".into()));
                }
                match (tok.next(), tok.next(), tok.next()) {
                    (Some("float" | "float32"), Some(name), None) => {
                        properties.push(name.to_string());
                    }
                    _ => return Err(bad(ln, format!("unsupported property `{text}`"))),
                }
            }
            Some("end_header") => break,
            _ => return Err(bad(ln, format!("unrecognized header line `{text}`"))),
        }
    }
    let vertex_count = vertex_count.ok_or_else(|| Error::Parse {
        line: lineno,
        message: "header has no vertex element".into(),
    })?;
    Ok(Header {
        vertex_count,
        properties,
    })
}

/// Loads a 3DGS-layout binary PLY. Quaternions off unit norm by more than
/// 1e-6 are renormalized; the SH degree follows the `f_rest_*` count.
pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(&mut BufReader::new(file))
}

pub(crate) fn read_ply<R: BufRead>(r: &mut R) -> Result<GaussianCloud> {
    let header = parse_header(r)?;
    let index: HashMap<&str, usize> = header
        .properties
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect();
    if index.len() != header.properties.len() {
        return Err(Error::Format("duplicate property names".into()));
    }
    for name in REQUIRED {
        if !index.contains_key(name) {
            return Err(Error::MissingProperty(name.to_string()));
        }
    }
    let n_rest = header
        .properties
        .iter()
        .filter(|p| p.starts_with("f_rest_"))
        .count();
    let sh_coeffs = 1 + n_rest / 3;
    if n_rest % 3 != 0 || ![1, 4, 9, 16].contains(&sh_coeffs) {
        return Err(Error::Format(format!(
            "{n_rest} f_rest properties do not form a full SH band set"
        )));
    }
    let rest_cols: Vec<usize> = (0..n_rest)
        .map(|k| {
            index
                .get(format!("f_rest_{k}").as_str())
                .copied()
                .ok_or_else(|| Error::MissingProperty(format!("f_rest_{k}")))
        })
        .collect::<Result<_>>()?;
    let col = |name: &str| index[name];
    let (cx, cy, cz) = (col("x"), col("y"), col("z"));
    let dc = [col("f_dc_0"), col("f_dc_1"), col("f_dc_2")];
    let op = col("opacity");
    let sc = [col("scale_0"), col("scale_1"), col("scale_2")];
    let rot = [col("rot_0"), col("rot_1"), col("rot_2"), col("rot_3")];

    let stride = header.properties.len();
    let n = header.vertex_count;
    let mut cloud = GaussianCloud {
        means: Vec::with_capacity(n.min(1 << 24)),
        scales: Vec::with_capacity(n.min(1 << 24)),
        rotations: Vec::with_capacity(n.min(1 << 24)),
        sh: Vec::with_capacity(n.min(1 << 24) * sh_coeffs),
        sh_coeffs,
        opacities: Vec::with_capacity(n.min(1 << 24)),
    };
    let mut bytes = vec![0u8; stride * 4];
    let mut row = vec![0f32; stride];
    for i in 0..n {
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Format(format!("payload truncated at vertex {i} of {n}")))?;
        for (v, b) in row.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                index: i,
                message: format!("non-finite value in property `{}`", header.properties[bad]),
            });
        }
        cloud.means.push([row[cx], row[cy], row[cz]]);
        cloud.sh.push(dc.map(|c| row[c]));
        let m = sh_coeffs - 1;
        for k in 0..m {
            cloud.sh.push([
                row[rest_cols[k]],
                row[rest_cols[m + k]],
                row[rest_cols[2 * m + k]],
            ]);
        }
        cloud.opacities.push(row[op]);
        cloud.scales.push(sc.map(|c| row[c]));
        cloud
            .rotations
            .push(normalize_loaded(rot.map(|c| row[c]), i)?);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)
        .map_err(|e| Error::Format(e.to_string()))?
        != 0
    {
        return Err(Error::Format("trailing bytes after vertex payload".into()));
    }
    Ok(cloud)
}

fn normalize_loaded(q: [f32; 4], index: usize) -> Result<[f32; 4]> {
    let qd = q.map(|v| v as f64);
    let norm = crate::math::quat_norm(qd);
    if norm == 0.0 {
        return Err(Error::Validation {
            index,
            message: "zero-norm quaternion".into(),
        });
    }
    if (norm - 1.0).abs() <= UNIT_NORM_TOL {
        return Ok(q);
    }
    Ok(qd.map(|v| (v / norm) as f32))
}
