//! Binary PLY checkpoints in the de-facto gaussian-splat layout, plus the
//! small point-cloud PLY used for SfM seeds.
//!
//! Checkpoint property order is fixed: x y z, nx ny nz (zeros), f_dc_0..2,
//! f_rest_0..(3*(basis-1)-1) channel-major, opacity, scale_0..2, rot_0..3;
//! every property is float32 little-endian. The SH degree is inferred from
//! the f_rest count. Reading tolerates comment lines; writing is canonical,
//! so write(read(bytes)) reproduces canonical files byte for byte.

use crate::error::{GaussianError, PlyError};
use crate::gaussians::GaussianSet;
use crate::scalar::Real;

fn malformed(offset: usize, message: impl Into<String>) -> PlyError {
    PlyError::Malformed {
        offset,
        message: message.into(),
    }
}

/// Canonical property names for a given SH basis length.
fn property_names(basis: usize) -> Vec<String> {
    let mut names = vec![
        "x".to_string(),
        "y".to_string(),
        "z".to_string(),
        "nx".to_string(),
        "ny".to_string(),
        "nz".to_string(),
        "f_dc_0".to_string(),
        "f_dc_1".to_string(),
        "f_dc_2".to_string(),
    ];
    for k in 0..3 * (basis - 1) {
        names.push(format!("f_rest_{k}"));
    }
    names.extend(
        [
            "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
        ]
        .map(String::from),
    );
    names
}

struct Header {
    count: usize,
    properties: Vec<String>,
    body_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut pos = 0usize;
    let mut next_line = |expect_more: &str| -> Result<(usize, String), PlyError> {
        if pos >= bytes.len() {
            return Err(malformed(pos, format!("header ended early, {expect_more}")));
        }
        let start = pos;
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|o| pos + o)
            .ok_or_else(|| malformed(pos, "unterminated header line"))?;
        let line = std::str::from_utf8(&bytes[start..end])
            .map_err(|_| malformed(start, "header is not utf-8"))?
            .trim_end_matches('\r')
            .to_string();
        pos = end + 1;
        Ok((start, line))
    };

    let (off, magic) = next_line("expected ply magic")?;
    if magic != "ply" {
        return Err(malformed(off, "missing ply magic"));
    }
    let mut format_seen = false;
    let mut count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let (off, line) = next_line("expected end_header")?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("comment") => continue,
            Some("format") => {
                let rest: Vec<&str> = words.collect();
                if rest != ["binary_little_endian", "1.0"] {
                    return Err(PlyError::UnsupportedFormat {
                        offset: off,
                        found: rest.join(" "),
                    });
                }
                format_seen = true;
            }
            Some("element") => {
                let name = words.next().unwrap_or("");
                if name != "vertex" {
                    return Err(malformed(off, format!("unsupported element {name:?}")));
                }
                if count.is_some() {
                    return Err(malformed(off, "duplicate vertex element"));
                }
                let n: usize = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| malformed(off, "element vertex needs a count"))?;
                count = Some(n);
            }
            Some("property") => {
                let ty = words.next().unwrap_or("");
                let name = words.next().unwrap_or("").to_string();
                if count.is_none() {
                    return Err(malformed(off, "property before element vertex"));
                }
                if ty != "float" {
                    return Err(PlyError::NonFloatProperty {
                        offset: off,
                        name,
                        found: ty.to_string(),
                    });
                }
                properties.push(name);
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(malformed(off, format!("unexpected header line {other:?}")))
            }
            None => continue,
        }
    }
    if !format_seen {
        return Err(PlyError::UnsupportedFormat {
            offset: 0,
            found: "(none)".to_string(),
        });
    }
    let count = count.ok_or_else(|| PlyError::MissingProperty {
        name: "element vertex".to_string(),
    })?;
    Ok(Header {
        count,
        properties,
        body_start: pos,
    })
}

/// Parses a binary checkpoint into a gaussian set.
pub fn read_ply<T: Real>(bytes: &[u8]) -> Result<GaussianSet<T>, PlyError> {
    let header = parse_header(bytes)?;
    // The f_rest count decides the degree; everything else is fixed.
    let rest_count = header
        .properties
        .iter()
        .filter(|p| p.starts_with("f_rest_"))
        .count();
    if rest_count % 3 != 0 {
        return Err(PlyError::BadShCount { count: rest_count });
    }
    let per_channel = rest_count / 3;
    let basis = per_channel + 1;
    let degree = match basis {
        1 => 0,
        4 => 1,
        9 => 2,
        16 => 3,
        _ => return Err(PlyError::BadShCount { count: rest_count }),
    };
    let expected = property_names(basis);
    for (k, want) in expected.iter().enumerate() {
        match header.properties.get(k) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(PlyError::UnknownProperty {
                    offset: header.body_start,
                    name: got.clone(),
                })
            }
            None => {
                return Err(PlyError::MissingProperty { name: want.clone() });
            }
        }
    }
    if header.properties.len() != expected.len() {
        return Err(PlyError::UnknownProperty {
            offset: header.body_start,
            name: header.properties[expected.len()].clone(),
        });
    }

    let stride = expected.len() * 4;
    let body = &bytes[header.body_start..];
    let want_bytes = header.count * stride;
    if body.len() < want_bytes {
        return Err(PlyError::Truncated {
            expected: want_bytes,
            got: body.len(),
        });
    }
    if body.len() > want_bytes {
        return Err(malformed(
            header.body_start + want_bytes,
            "trailing bytes after vertex data",
        ));
    }

    let n = header.count;
    let mut set = GaussianSet::<T> {
        positions: Vec::with_capacity(n),
        opacity_logits: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        log_scales: Vec::with_capacity(n),
        sh: Vec::with_capacity(n * basis * 3),
        sh_degree: degree,
    };
    let f = |row: &[u8], k: usize| -> T {
        let v = f32::from_le_bytes([row[k * 4], row[k * 4 + 1], row[k * 4 + 2], row[k * 4 + 3]]);
        T::from_f64(v as f64)
    };
    for row in body.chunks_exact(stride) {
        set.positions.push([f(row, 0), f(row, 1), f(row, 2)]);
        // Normals at 3..6 are ignored.
        let sh_start = set.sh.len();
        set.sh
            .resize(sh_start + basis * 3, T::zero());
        for c in 0..3 {
            set.sh[sh_start + c] = f(row, 6 + c);
        }
        for c in 0..3 {
            for j in 1..basis {
                let m = c * per_channel + (j - 1);
                set.sh[sh_start + j * 3 + c] = f(row, 9 + m);
            }
        }
        let base = 9 + rest_count;
        set.opacity_logits.push(f(row, base));
        set.log_scales
            .push([f(row, base + 1), f(row, base + 2), f(row, base + 3)]);
        set.rotations.push([
            f(row, base + 4),
            f(row, base + 5),
            f(row, base + 6),
            f(row, base + 7),
        ]);
    }
    Ok(set)
}

/// Serializes a gaussian set to canonical checkpoint bytes.
pub fn write_ply<T: Real>(set: &GaussianSet<T>) -> Result<Vec<u8>, GaussianError> {
    set.validate()?;
    let basis = set.basis_len();
    let names = property_names(basis);
    let mut out = Vec::with_capacity(128 + set.len() * names.len() * 4);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", set.len()).as_bytes());
    for name in &names {
        out.extend_from_slice(format!("property float {name}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");

    let per_channel = basis - 1;
    let mut push = |v: T| {
        let bits = (v.as_f64() as f32).to_le_bytes();
        out.extend_from_slice(&bits);
    };
    for i in 0..set.len() {
        for ax in 0..3 {
            push(set.positions[i][ax]);
        }
        for _ in 0..3 {
            push(T::zero());
        }
        let sh = set.sh_of(i);
        for c in 0..3 {
            push(sh[c]);
        }
        for c in 0..3 {
            for j in 1..basis {
                push(sh[j * 3 + c]);
            }
        }
        let _ = per_channel;
        push(set.opacity_logits[i]);
        for ax in 0..3 {
            push(set.log_scales[i][ax]);
        }
        for ax in 0..4 {
            push(set.rotations[i][ax]);
        }
    }
    Ok(out)
}

/// Reads a point-cloud PLY (x y z float positions, red green blue uchar
/// colors), ascii or binary little-endian.
pub fn read_points<T: Real>(bytes: &[u8]) -> Result<(Vec<[T; 3]>, Vec<[u8; 3]>), PlyError> {
    let text_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| malformed(0, "missing end_header"))?
        + 11;
    let header_text = std::str::from_utf8(&bytes[..text_end])
        .map_err(|_| malformed(0, "header is not utf-8"))?;
    let mut ascii = false;
    let mut count = 0usize;
    let mut props: Vec<(String, String)> = Vec::new();
    for line in header_text.lines() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => match words.next() {
                Some("ascii") => ascii = true,
                Some("binary_little_endian") => ascii = false,
                other => {
                    return Err(PlyError::UnsupportedFormat {
                        offset: 0,
                        found: other.unwrap_or("").to_string(),
                    })
                }
            },
            Some("element") => {
                if words.next() == Some("vertex") {
                    count = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| malformed(0, "element vertex needs a count"))?;
                }
            }
            Some("property") => {
                let ty = words.next().unwrap_or("").to_string();
                let name = words.next().unwrap_or("").to_string();
                props.push((ty, name));
            }
            _ => {}
        }
    }
    let want = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ];
    if props.len() != want.len()
        || props
            .iter()
            .zip(want.iter())
            .any(|((ty, name), (wty, wname))| ty != wty || name != wname)
    {
        return Err(malformed(0, "point cloud must be x y z red green blue"));
    }

    let mut positions = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    if ascii {
        let body = std::str::from_utf8(&bytes[text_end..])
            .map_err(|_| malformed(text_end, "ascii body is not utf-8"))?;
        let mut lines = body.lines();
        for k in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| malformed(text_end, format!("missing vertex line {k}")))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != 6 {
                return Err(malformed(text_end, format!("vertex line {k} malformed")));
            }
            let p: Result<Vec<f64>, _> = vals[..3].iter().map(|v| v.parse::<f64>()).collect();
            let c: Result<Vec<u8>, _> = vals[3..].iter().map(|v| v.parse::<u8>()).collect();
            match (p, c) {
                (Ok(p), Ok(c)) => {
                    positions.push([T::from_f64(p[0]), T::from_f64(p[1]), T::from_f64(p[2])]);
                    colors.push([c[0], c[1], c[2]]);
                }
                _ => return Err(malformed(text_end, format!("vertex line {k} malformed"))),
            }
        }
    } else {
        let stride = 3 * 4 + 3;
        let body = &bytes[text_end..];
        if body.len() < count * stride {
            return Err(PlyError::Truncated {
                expected: count * stride,
                got: body.len(),
            });
        }
        for row in body[..count * stride].chunks_exact(stride) {
            let g = |k: usize| {
                f32::from_le_bytes([row[k * 4], row[k * 4 + 1], row[k * 4 + 2], row[k * 4 + 3]])
            };
            positions.push([
                T::from_f64(g(0) as f64),
                T::from_f64(g(1) as f64),
                T::from_f64(g(2) as f64),
            ]);
            colors.push([row[12], row[13], row[14]]);
        }
    }
    Ok((positions, colors))
}

/// Writes a binary little-endian point cloud.
pub fn write_points<T: Real>(positions: &[[T; 3]], colors: &[[u8; 3]]) -> Vec<u8> {
    assert_eq!(positions.len(), colors.len());
    let mut out = Vec::with_capacity(128 + positions.len() * 15);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", positions.len()).as_bytes());
    for name in ["x", "y", "z"] {
        out.extend_from_slice(format!("property float {name}\n").as_bytes());
    }
    for name in ["red", "green", "blue"] {
        out.extend_from_slice(format!("property uchar {name}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for (p, c) in positions.iter().zip(colors.iter()) {
        for ax in 0..3 {
            out.extend_from_slice(&(p[ax].as_f64() as f32).to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::sh_basis_len;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, degree: usize) -> GaussianSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = sh_basis_len(degree);
        let mut set = GaussianSet::empty(degree);
        for _ in 0..n {
            set.positions.push([
                rng.gen_range(-5.0f32..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ]);
            set.opacity_logits.push(rng.gen_range(-4.0..4.0));
            set.rotations.push([
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0f32..1.0).max(0.01),
            ]);
            set.log_scales.push([
                rng.gen_range(-3.0..0.0),
                rng.gen_range(-3.0..0.0),
                rng.gen_range(-3.0..0.0),
            ]);
            for _ in 0..basis * 3 {
                set.sh.push(rng.gen_range(-1.0..1.0));
            }
        }
        set
    }

    #[test]
    fn roundtrip_preserves_every_field_bit_exactly() {
        for degree in 0..=3 {
            let set = random_set(degree as u64, 17, degree);
            let bytes = write_ply(&set).unwrap();
            let back: GaussianSet<f32> = read_ply(&bytes).unwrap();
            assert_eq!(set, back, "degree {degree}");
        }
    }

    #[test]
    fn roundtrip_through_f64_is_still_bit_exact() {
        // f32 -> f64 is exact and rounding back recovers the same bits.
        let set = random_set(9, 11, 2);
        let bytes = write_ply(&set).unwrap();
        let wide: GaussianSet<f64> = read_ply(&bytes).unwrap();
        let again = write_ply(&wide).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn write_read_write_is_canonical_fixpoint() {
        let set = random_set(4, 100, 3);
        let bytes = write_ply(&set).unwrap();
        let back: GaussianSet<f32> = read_ply(&bytes).unwrap();
        let bytes2 = write_ply(&back).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn degree3_row_is_248_bytes() {
        let set = random_set(1, 1, 3);
        let bytes = write_ply(&set).unwrap();
        let header_end = bytes
            .windows(11)
            .position(|w| w == b"end_header\n")
            .unwrap()
            + 11;
        assert_eq!(bytes.len() - header_end, 62 * 4);
    }

    #[test]
    fn empty_set_roundtrips() {
        let set = GaussianSet::<f32>::empty(1);
        let bytes = write_ply(&set).unwrap();
        let back: GaussianSet<f32> = read_ply(&bytes).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.sh_degree, 1);
    }

    #[test]
    fn ascii_checkpoint_is_rejected() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        match read_ply::<f32>(text) {
            Err(PlyError::UnsupportedFormat { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_body_reports_sizes() {
        let set = random_set(2, 3, 0);
        let mut bytes = write_ply(&set).unwrap();
        bytes.truncate(bytes.len() - 5);
        match read_ply::<f32>(&bytes) {
            Err(PlyError::Truncated { expected, got }) => {
                assert_eq!(expected, 3 * 17 * 4);
                assert_eq!(got, 3 * 17 * 4 - 5);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn reordered_property_is_unknown() {
        let set = random_set(3, 1, 0);
        let bytes = write_ply(&set).unwrap();
        let text = String::from_utf8_lossy(&bytes[..200]).to_string();
        let swapped = text.replacen("property float x", "property float y", 1);
        let mut mutated = swapped.into_bytes();
        mutated.extend_from_slice(&bytes[mutated.len()..]);
        assert!(matches!(
            read_ply::<f32>(&mutated),
            Err(PlyError::UnknownProperty { .. })
        ));
    }

    #[test]
    fn double_precision_property_is_rejected() {
        let header =
            b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty double x\nend_header\n";
        assert!(matches!(
            read_ply::<f32>(header),
            Err(PlyError::NonFloatProperty { .. })
        ));
    }

    #[test]
    fn comments_are_tolerated_on_read() {
        let set = random_set(8, 2, 1);
        let bytes = write_ply(&set).unwrap();
        let insert_at = bytes.windows(1).position(|w| w == b"\n").unwrap() + 1;
        let mut with_comment = bytes[..insert_at].to_vec();
        with_comment.extend_from_slice(b"comment generated for a test\n");
        with_comment.extend_from_slice(&bytes[insert_at..]);
        let back: GaussianSet<f32> = read_ply(&with_comment).unwrap();
        assert_eq!(back, read_ply::<f32>(&bytes).unwrap());
    }

    #[test]
    fn point_cloud_roundtrips_binary_and_parses_ascii() {
        let positions = vec![[1.0f32, 2.0, 3.0], [-0.5, 0.25, 4.0]];
        let colors = vec![[255u8, 0, 128], [10, 20, 30]];
        let bytes = write_points(&positions, &colors);
        let (p, c) = read_points::<f32>(&bytes).unwrap();
        assert_eq!(p, positions);
        assert_eq!(c, colors);

        let ascii = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0.5 -1.5 2.0 1 2 3\n";
        let (p, c) = read_points::<f64>(ascii).unwrap();
        assert_eq!(p[0], [0.5, -1.5, 2.0]);
        assert_eq!(c[0], [1, 2, 3]);
    }
}
