//! Cloud file formats: plain xyz, ascii PLY (vertex elements only), and OFF
//! meshes which are resampled into clouds on load.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::PointCloud;
use crate::{Error, Result};

/// Fixed seed for OFF mesh resampling, so loads are reproducible.
const OFF_SAMPLE_SEED: u64 = 0x0ff_5eed;
/// Resampled cloud size for OFF meshes.
const OFF_SAMPLE_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Xyz,
    PlyAscii,
    Off,
}

impl Format {
    /// Infers the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Format> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("xyz") | Some("txt") => Ok(Format::Xyz),
            Some("ply") => Ok(Format::PlyAscii),
            Some("off") => Ok(Format::Off),
            other => Err(Error::invalid(format!(
                "cannot infer cloud format from extension {other:?}"
            ))),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Loads a point cloud from disk.
///
/// xyz and PLY points are read verbatim; OFF meshes are resampled into
/// 10,000 area-weighted surface points with a fixed seed.
pub fn load_cloud(path: &Path, format: Format) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    match format {
        Format::Xyz => parse_xyz(&text),
        Format::PlyAscii => parse_ply(&text),
        Format::Off => {
            let (vertices, faces) = parse_off(&text)?;
            let (points, _) = sample_triangles(&vertices, &faces, OFF_SAMPLE_POINTS, OFF_SAMPLE_SEED)?;
            PointCloud::new(points)
        }
    }
}

/// Parses whitespace-separated coordinates, one point per line. A fourth
/// column, when present, is read as an integer part label.
fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut saw_labels = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(
                lineno + 1,
                format!("expected 3 or 4 fields, found {}", fields.len()),
            ));
        }
        let mut p = [0.0; 3];
        for (d, f) in fields[..3].iter().enumerate() {
            p[d] = f
                .parse::<f64>()
                .map_err(|e| parse_err(lineno + 1, format!("bad coordinate {f:?}: {e}")))?;
        }
        if fields.len() == 4 {
            let label = fields[3]
                .parse::<u32>()
                .map_err(|e| parse_err(lineno + 1, format!("bad label {:?}: {e}", fields[3])))?;
            labels.push(label);
            saw_labels = true;
        } else if saw_labels {
            return Err(parse_err(lineno + 1, "label column missing on this line"));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(parse_err(1, "no points in file"));
    }
    if saw_labels {
        if labels.len() != points.len() {
            return Err(parse_err(1, "label column present on only some lines"));
        }
        PointCloud::with_labels(points, labels)
    } else {
        PointCloud::new(points)
    }
}

/// Parses an ascii PLY with a vertex element carrying x, y, z properties.
/// Extra vertex properties are ignored; non-vertex elements are rejected.
fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let (_, magic) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if magic.trim() != "ply" {
        return Err(parse_err(1, "missing 'ply' magic"));
    }
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut header_end = 0usize;
    let mut in_vertex_element = false;
    for (lineno, line) in &mut lines {
        let line = line.trim();
        header_end = lineno;
        if line == "end_header" {
            break;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["format", "ascii", _] | ["comment", ..] | [] => {}
            ["format", other, ..] => {
                return Err(parse_err(lineno + 1, format!("unsupported format {other:?}")));
            }
            ["element", "vertex", count] => {
                vertex_count = Some(count.parse().map_err(|e| {
                    parse_err(lineno + 1, format!("bad vertex count {count:?}: {e}"))
                })?);
                in_vertex_element = true;
            }
            ["element", name, _] => {
                return Err(parse_err(
                    lineno + 1,
                    format!("unsupported element {name:?} (vertex elements only)"),
                ));
            }
            ["property", _, name] if in_vertex_element => {
                properties.push((*name).to_string());
            }
            _ => {
                return Err(parse_err(lineno + 1, format!("unrecognized header line {line:?}")));
            }
        }
    }
    let count = vertex_count.ok_or_else(|| parse_err(header_end + 1, "no vertex element"))?;
    let pos = |name: &str| -> Result<usize> {
        properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(header_end + 1, format!("missing property {name:?}")))
    };
    let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| parse_err(header_end + 1 + points.len() + 1, "truncated vertex list"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < properties.len() {
            return Err(parse_err(
                lineno + 1,
                format!("expected {} fields, found {}", properties.len(), fields.len()),
            ));
        }
        let coord = |idx: usize| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .map_err(|e| parse_err(lineno + 1, format!("bad coordinate {:?}: {e}", fields[idx])))
        };
        points.push([coord(ix)?, coord(iy)?, coord(iz)?]);
    }
    if points.is_empty() {
        return Err(parse_err(header_end + 1, "vertex count is zero"));
    }
    PointCloud::new(points)
}

/// Parses an OFF mesh with triangular faces.
fn parse_off(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[usize; 3]>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, magic) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if magic != "OFF" {
        return Err(parse_err(1, "missing 'OFF' magic"));
    }
    let (counts_line, counts) = lines.next().ok_or_else(|| parse_err(2, "missing counts line"))?;
    let fields: Vec<&str> = counts.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(parse_err(counts_line + 1, "counts line needs vertices and faces"));
    }
    let nv: usize = fields[0]
        .parse()
        .map_err(|e| parse_err(counts_line + 1, format!("bad vertex count: {e}")))?;
    let nf: usize = fields[1]
        .parse()
        .map_err(|e| parse_err(counts_line + 1, format!("bad face count: {e}")))?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| parse_err(counts_line + 2 + vertices.len(), "truncated vertex list"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(parse_err(lineno + 1, "vertex needs 3 coordinates"));
        }
        let mut v = [0.0; 3];
        for d in 0..3 {
            v[d] = fields[d]
                .parse::<f64>()
                .map_err(|e| parse_err(lineno + 1, format!("bad coordinate: {e}")))?;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| parse_err(counts_line + 2 + nv + faces.len(), "truncated face list"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let arity: usize = fields
            .first()
            .ok_or_else(|| parse_err(lineno + 1, "empty face line"))?
            .parse()
            .map_err(|e| parse_err(lineno + 1, format!("bad face arity: {e}")))?;
        if arity != 3 || fields.len() < 4 {
            return Err(parse_err(lineno + 1, "only triangular faces are supported"));
        }
        let mut f = [0usize; 3];
        for d in 0..3 {
            f[d] = fields[d + 1]
                .parse::<usize>()
                .map_err(|e| parse_err(lineno + 1, format!("bad vertex index: {e}")))?;
            if f[d] >= nv {
                return Err(parse_err(lineno + 1, format!("vertex index {} out of range", f[d])));
            }
        }
        faces.push(f);
    }
    if faces.is_empty() {
        return Err(parse_err(counts_line + 1, "mesh has no faces"));
    }
    Ok((vertices, faces))
}

/// Samples `n` points from a triangle soup, per-triangle counts proportional
/// to area, uniform within each triangle. Returns the points and the index
/// of the triangle each point came from.
pub fn sample_triangles(
    vertices: &[[f64; 3]],
    faces: &[[usize; 3]],
    n: usize,
    seed: u64,
) -> Result<(Vec<[f64; 3]>, Vec<usize>)> {
    if faces.is_empty() {
        return Err(Error::invalid("cannot sample an empty mesh"));
    }
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in faces {
        total += triangle_area(vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::invalid("mesh has zero total area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut tri_ids = Vec::with_capacity(n);
    for _ in 0..n {
        let draw = rng.gen::<f64>() * total;
        let tri = cumulative.partition_point(|&c| c <= draw).min(faces.len() - 1);
        let [a, b, c] = faces[tri].map(|i| vertices[i]);
        // Uniform barycentric coordinates.
        let r1 = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        points.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
        tri_ids.push(tri);
    }
    Ok((points, tri_ids))
}

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Writes a cloud as xyz text; labels, when present, become a fourth column.
pub fn save_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, p) in cloud.points().iter().enumerate() {
        out.push_str(&format!("{} {} {}", p[0], p[1], p[2]));
        if let Some(labels) = cloud.labels() {
            out.push_str(&format!(" {}", labels[i]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a cloud as ascii PLY.
pub fn save_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "ply")?;
    writeln!(file, "format ascii 1.0")?;
    writeln!(file, "element vertex {}", cloud.len())?;
    writeln!(file, "property double x")?;
    writeln!(file, "property double y")?;
    writeln!(file, "property double z")?;
    writeln!(file, "end_header")?;
    for p in cloud.points() {
        writeln!(file, "{} {} {}", p[0], p[1], p[2])?;
    }
    Ok(())
}

/// One corpus manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub class_id: u32,
    pub class_name: String,
    pub rng_seed: u64,
    pub split: String,
    pub path: String,
}

/// Writes the corpus manifest CSV.
pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::from("class_id,class_name,rng_seed,split,path\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.class_id, e.class_name, e.rng_seed, e.split, e.path
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a corpus manifest CSV.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(lineno + 1, format!("expected 5 columns, found {}", fields.len())));
        }
        entries.push(ManifestEntry {
            class_id: fields[0]
                .parse()
                .map_err(|e| parse_err(lineno + 1, format!("bad class_id: {e}")))?,
            class_name: fields[1].to_string(),
            rng_seed: fields[2]
                .parse()
                .map_err(|e| parse_err(lineno + 1, format!("bad rng_seed: {e}")))?,
            split: fields[3].to_string(),
            path: fields[4].to_string(),
        });
    }
    Ok(entries)
}
