//! Mesh and point-cloud file formats: OBJ, PLY (ASCII and binary).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh::TriangleMesh;

/// Loads a triangle mesh, picking the format from the file extension.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => parse_obj(&fs::read_to_string(path)?),
        Some("ply") => {
            let ply = parse_ply(&fs::read(path)?)?;
            ply.to_mesh()
        }
        other => Err(Error::Parse(format!("unsupported mesh extension {other:?}"))),
    }
}

/// Polygons are fan-triangulated; texture and normal indices are ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let err = |m: &str| Error::Parse(format!("obj line {}: {m}", lineno + 1));
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.take(3).map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| err("bad vertex"))?;
                if c.len() != 3 {
                    return Err(err("vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| err("bad face index"))?;
                    let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if resolved < 0 {
                        return Err(err("face index out of range"));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(err("face needs 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return Err(Error::Parse(format!("unknown ply type {name}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8], big: bool) -> f64 {
        macro_rules! get {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => get!(i16, 2),
            Self::U16 => get!(u16, 2),
            Self::I32 => get!(i32, 4),
            Self::U32 => get!(u32, 4),
            Self::F32 => get!(f32, 4),
            Self::F64 => get!(f64, 8),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct ElementDef {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parsed PLY element: scalar columns by property name plus list properties.
#[derive(Clone, Debug, Default)]
pub struct PlyElement {
    pub name: String,
    pub count: usize,
    pub scalars: Vec<(String, Vec<f64>)>,
    pub lists: Vec<(String, Vec<Vec<f64>>)>,
}

impl PlyElement {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

#[derive(Clone, Debug, Default)]
pub struct PlyData {
    pub elements: Vec<PlyElement>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&PlyElement> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn positions(&self) -> Result<Vec<Vec3>> {
        let v = self.element("vertex").ok_or_else(|| Error::Parse("ply has no vertex element".into()))?;
        let col = |n: &str| v.scalar(n).ok_or_else(|| Error::Parse(format!("ply vertex lacks {n}")));
        let (x, y, z) = (col("x")?, col("y")?, col("z")?);
        Ok((0..v.count).map(|i| Vec3::new(x[i], y[i], z[i])).collect())
    }

    pub fn normals(&self) -> Option<Vec<Vec3>> {
        let v = self.element("vertex")?;
        let (x, y, z) = (v.scalar("nx")?, v.scalar("ny")?, v.scalar("nz")?);
        Some((0..v.count).map(|i| Vec3::new(x[i], y[i], z[i])).collect())
    }

    pub fn to_mesh(&self) -> Result<TriangleMesh> {
        let vertices = self.positions()?;
        let mut triangles = Vec::new();
        if let Some(f) = self.element("face") {
            let (_, lists) = f
                .lists
                .iter()
                .find(|(n, _)| n == "vertex_indices" || n == "vertex_index")
                .ok_or_else(|| Error::Parse("ply face lacks vertex_indices".into()))?;
            for poly in lists {
                if poly.len() < 3 {
                    return Err(Error::Parse("ply face needs 3 vertices".into()));
                }
                let idx: Vec<usize> = poly.iter().map(|&i| i as usize).collect();
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
        }
        TriangleMesh::new(vertices, triangles)
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| Error::Parse("ply header not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Parse("ply header not utf-8".into()))?;
    let mut body = end + 10;
    while body < bytes.len() && bytes[body] != b'\n' {
        body += 1;
    }
    body += 1;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Parse("missing ply magic".into()));
    }
    let mut format = None;
    let mut defs: Vec<ElementDef> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", f, _] => format = Some(f.to_string()),
            ["element", name, count] => defs.push(ElementDef {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Parse(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => defs
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(ct)?, Scalar::parse(it)?)),
            ["property", ty, name] => defs
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => {}
        }
    }
    let data = &bytes[body.min(bytes.len())..];
    match format.as_deref() {
        Some("ascii") => parse_ascii_body(&defs, data),
        Some("binary_little_endian") => parse_binary_body(&defs, data, false),
        Some("binary_big_endian") => parse_binary_body(&defs, data, true),
        f => Err(Error::Parse(format!("unsupported ply format {f:?}"))),
    }
}

fn empty_element(d: &ElementDef) -> PlyElement {
    let mut e = PlyElement { name: d.name.clone(), count: d.count, ..Default::default() };
    for p in &d.props {
        match p {
            Property::Scalar(n, _) => e.scalars.push((n.clone(), Vec::with_capacity(d.count))),
            Property::List(n, ..) => e.lists.push((n.clone(), Vec::with_capacity(d.count))),
        }
    }
    e
}

fn parse_ascii_body(defs: &[ElementDef], data: &[u8]) -> Result<PlyData> {
    let text = std::str::from_utf8(data).map_err(|_| Error::Parse("ply body not utf-8".into()))?;
    let mut tokens = text.split_whitespace();
    let mut next = || -> Result<f64> {
        tokens
            .next()
            .ok_or_else(|| Error::Parse("ply body truncated".into()))?
            .parse()
            .map_err(|_| Error::Parse("bad ply number".into()))
    };
    let mut out = PlyData::default();
    for d in defs {
        let mut e = empty_element(d);
        for _ in 0..d.count {
            let (mut si, mut li) = (0, 0);
            for p in &d.props {
                match p {
                    Property::Scalar(..) => {
                        e.scalars[si].1.push(next()?);
                        si += 1;
                    }
                    Property::List(..) => {
                        let n = next()? as usize;
                        let items = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
                        e.lists[li].1.push(items);
                        li += 1;
                    }
                }
            }
        }
        out.elements.push(e);
    }
    Ok(out)
}

fn parse_binary_body(defs: &[ElementDef], data: &[u8], big: bool) -> Result<PlyData> {
    let mut pos = 0usize;
    let mut take = |ty: Scalar| -> Result<f64> {
        let n = ty.size();
        if pos + n > data.len() {
            return Err(Error::Parse("ply body truncated".into()));
        }
        let v = ty.read(&data[pos..pos + n], big);
        pos += n;
        Ok(v)
    };
    let mut out = PlyData::default();
    for d in defs {
        let mut e = empty_element(d);
        for _ in 0..d.count {
            let (mut si, mut li) = (0, 0);
            for p in &d.props {
                match *p {
                    Property::Scalar(_, ty) => {
                        e.scalars[si].1.push(take(ty)?);
                        si += 1;
                    }
                    Property::List(_, ct, it) => {
                        let n = take(ct)? as usize;
                        let items = (0..n).map(|_| take(it)).collect::<Result<Vec<_>>>()?;
                        e.lists[li].1.push(items);
                        li += 1;
                    }
                }
            }
        }
        out.elements.push(e);
    }
    Ok(out)
}

/// Binary little-endian PLY point cloud with float32 `x y z`, optional
/// float32 `nx ny nz` and an optional uchar scalar column.
pub fn write_ply_points(
    path: &Path,
    points: &[Vec3],
    normals: Option<&[Vec3]>,
    tag: Option<(&str, &[u8])>,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_ply_points_to(&mut w, points, normals, tag)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply_points_to<W: Write>(
    w: &mut W,
    points: &[Vec3],
    normals: Option<&[Vec3]>,
    tag: Option<(&str, &[u8])>,
) -> Result<()> {
    if normals.is_some_and(|n| n.len() != points.len()) || tag.is_some_and(|(_, t)| t.len() != points.len()) {
        return Err(Error::DimensionMismatch((points.len(), 1), (normals.map_or(0, <[_]>::len), tag.map_or(0, |t| t.1.len()))));
    }
    writeln!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}", points.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if normals.is_some() {
        writeln!(w, "property float nx\nproperty float ny\nproperty float nz")?;
    }
    if let Some((name, _)) = tag {
        writeln!(w, "property uchar {name}")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in points.iter().enumerate() {
        for c in p.iter() {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        if let Some(n) = normals {
            for c in n[i].iter() {
                w.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
        if let Some((_, t)) = tag {
            w.write_all(&[t[i]])?;
        }
    }
    Ok(())
}
