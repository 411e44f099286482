//! Grid pictures of per-cell fields.
//!
//! ASCII buckets, with `x` the value divided by the largest magnitude:
//!
//! ```text
//! '#'  x >  0.5      '+'  0.1 < x ≤ 0.5      '.'  |x| ≤ 0.1
//! '-'  -0.5 ≤ x < -0.1                      '='  x < -0.5
//! '%'  obstacle
//! ```
//!
//! PGM output is 16-bit binary. Free cells map `[-m, m]` linearly onto
//! `[1, 65535]` with `m` the largest magnitude, so zero is mid-grey;
//! obstacles are 0. The range goes to a sidecar text file.

use crate::env::Environment;
use crate::error::{Error, Result};

pub const OBSTACLE_CHAR: char = '%';

fn check(v: &[f64], env: &Environment) -> Result<()> {
    if v.len() != env.len() {
        return Err(Error::ShapeMismatch {
            expected: env.len(),
            got: v.len(),
        });
    }
    Ok(())
}

fn peak(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn render_ascii(v: &[f64], env: &Environment) -> Result<String> {
    check(v, env)?;
    let m = peak(v);
    let text = env.render_chars(|k| {
        let x = if m > 0.0 { v[k] / m } else { 0.0 };
        if x > 0.5 {
            '#'
        } else if x > 0.1 {
            '+'
        } else if x >= -0.1 {
            '.'
        } else if x >= -0.5 {
            '-'
        } else {
            '='
        }
    });
    // render_chars marks obstacles with '#'; swap in the distinct glyph
    let (header, body) = text.split_once('\n').unwrap_or((&text, ""));
    let mut out = format!("{header}\n");
    for (r, line) in body.lines().enumerate() {
        for (c, ch) in line.chars().enumerate() {
            let blocked = env.kind() == crate::env::EnvKind::Grid2D && env.is_obstacle(r, c);
            out.push(if blocked { OBSTACLE_CHAR } else { ch });
        }
        out.push('\n');
    }
    Ok(out)
}

/// 16-bit PGM bytes and the sidecar text.
pub fn render_pgm(v: &[f64], env: &Environment) -> Result<(Vec<u8>, String)> {
    check(v, env)?;
    let m = peak(v);
    let (rows, cols) = (env.rows(), env.cols());
    let mut bytes = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for r in 0..rows {
        for c in 0..cols {
            let level: u16 = match env.index_of(r, c) {
                None => 0,
                Some(k) => {
                    let x = if m > 0.0 { v[k] / m } else { 0.0 };
                    (32768.0 + (x * 32767.0).round()).clamp(1.0, 65535.0) as u16
                }
            };
            bytes.extend_from_slice(&level.to_be_bytes());
        }
    }
    let sidecar = format!(
        "level_1 = {:.16e}\nlevel_32768 = 0\nlevel_65535 = {:.16e}\nobstacle_level = 0\n",
        -m, m
    );
    Ok((bytes, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_mid_grey() {
        let env = Environment::parse("grid 2 3\n..#\n...\n").unwrap();
        let (bytes, side) = render_pgm(&[0.0; 5], &env).unwrap();
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect();
        assert_eq!(px, vec![32768, 32768, 0, 32768, 32768, 32768]);
        assert!(side.contains("obstacle_level = 0"));
    }

    #[test]
    fn ascii_buckets() {
        let env = Environment::parse("grid 2 3\n.#.\n...\n").unwrap();
        let s = render_ascii(&[1.0, 0.3, 0.0, -0.3, -1.0], &env).unwrap();
        assert_eq!(s, "grid 2 3\n#%+\n.-=\n");
    }

    #[test]
    fn indicator_render_matches_overlay_up_to_charset() {
        let env = Environment::parse("grid 2 3\n.#.\n...\n").unwrap();
        let overlay = "grid 2 3\nX#.\n.XX\n";
        let w = env.parse_overlay(overlay).unwrap();
        let s = render_ascii(&w, &env).unwrap();
        assert_eq!(s.replace('%', "#"), overlay.replace('X', "#"));
    }
}
