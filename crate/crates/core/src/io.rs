//! Text dumps of coupling tables and dimer covers.
//!
//! Coupling table (CSV, entries row-major over whites then blacks):
//!
//! ```text
//! # domain_hash = 3f2a...
//! # delta = 0.0625
//! # cut_column = 0
//! white,black,re,im
//! 0,0,0.25,-0.5
//! ```
//!
//! Covers (one `white black` pair per line, each cover introduced by a
//! `# cover <index>` line):
//!
//! ```text
//! # domain_hash = 3f2a...
//! # seed = 7
//! # cover 0
//! 0 3
//! 1 0
//! ```

use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kasteleyn::CouplingTable;
use crate::lattice::{CylinderDomain, DimerCover};

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.strip_prefix('#')?.trim();
    let (k, v) = rest.split_once('=')?;
    (k.trim() == key).then(|| v.trim())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn write_coupling_csv<W: Write>(out: &mut W, table: &CouplingTable, domain: &CylinderDomain) -> Result<()> {
    writeln!(out, "# domain_hash = {}", domain.hash_hex())?;
    writeln!(out, "# delta = {:e}", table.delta())?;
    writeln!(out, "# cut_column = {}", table.cut_column())?;
    writeln!(out, "white,black,re,im")?;
    let n = table.n();
    for w in 0..n {
        for b in 0..n {
            let v = table.coupling(w, b);
            writeln!(out, "{w},{b},{:e},{:e}", v.re, v.im)?;
        }
    }
    Ok(())
}

/// Parsed coupling dump.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingDump {
    pub domain_hash: String,
    pub delta: f64,
    pub cut_column: usize,
    pub n: usize,
    /// `values[w * n + b]`.
    pub values: Vec<Complex64>,
}

impl CouplingDump {
    pub fn get(&self, w: usize, b: usize) -> Complex64 {
        self.values[w * self.n + b]
    }
}

pub fn read_coupling_csv<R: BufRead>(input: R) -> Result<CouplingDump> {
    let mut hash = None;
    let mut delta = None;
    let mut cut = None;
    let mut entries: Vec<(usize, usize, Complex64)> = Vec::new();
    let mut seen_columns = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let no = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t.starts_with('#') {
            if let Some(v) = header_value(t, "domain_hash") {
                hash = Some(v.to_string());
            } else if let Some(v) = header_value(t, "delta") {
                delta = Some(v.parse::<f64>().map_err(|e| parse_err(no, e.to_string()))?);
            } else if let Some(v) = header_value(t, "cut_column") {
                cut = Some(v.parse::<usize>().map_err(|e| parse_err(no, e.to_string()))?);
            }
            continue;
        }
        if !seen_columns {
            if t != "white,black,re,im" {
                return Err(parse_err(no, format!("expected column header, got `{t}`")));
            }
            seen_columns = true;
            continue;
        }
        let f: Vec<&str> = t.split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(no, "expected four fields"));
        }
        let idx = |s: &str| s.trim().parse::<usize>().map_err(|e| parse_err(no, e.to_string()));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse_err(no, e.to_string()));
        entries.push((idx(f[0])?, idx(f[1])?, Complex64::new(num(f[2])?, num(f[3])?)));
    }
    let missing = |k: &str| parse_err(0, format!("missing header `{k}`"));
    let n = (entries.len() as f64).sqrt().round() as usize;
    if n * n != entries.len() {
        return Err(parse_err(0, format!("{} entries do not form a square table", entries.len())));
    }
    let mut values = vec![Complex64::new(0.0, 0.0); n * n];
    for (k, (w, b, v)) in entries.into_iter().enumerate() {
        if w * n + b != k {
            return Err(parse_err(0, format!("entry {k} is ({w},{b}), expected row-major order")));
        }
        values[k] = v;
    }
    Ok(CouplingDump {
        domain_hash: hash.ok_or_else(|| missing("domain_hash"))?,
        delta: delta.ok_or_else(|| missing("delta"))?,
        cut_column: cut.ok_or_else(|| missing("cut_column"))?,
        n,
        values,
    })
}

pub fn write_covers<W: Write>(out: &mut W, domain: &CylinderDomain, seed: u64, covers: &[DimerCover]) -> Result<()> {
    writeln!(out, "# domain_hash = {}", domain.hash_hex())?;
    writeln!(out, "# seed = {seed}")?;
    for (k, cover) in covers.iter().enumerate() {
        writeln!(out, "# cover {k}")?;
        for (w, b) in cover.matching.iter().enumerate() {
            writeln!(out, "{w} {b}")?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverDump {
    pub domain_hash: String,
    pub seed: u64,
    pub covers: Vec<DimerCover>,
}

pub fn read_covers<R: BufRead>(input: R) -> Result<CoverDump> {
    let mut hash = None;
    let mut seed = None;
    let mut covers: Vec<Vec<Option<usize>>> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let no = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(v) = header_value(t, "domain_hash") {
            hash = Some(v.to_string());
        } else if let Some(v) = header_value(t, "seed") {
            seed = Some(v.parse::<u64>().map_err(|e| parse_err(no, e.to_string()))?);
        } else if t.starts_with("# cover") {
            covers.push(Vec::new());
        } else if t.starts_with('#') {
            continue;
        } else {
            let cur = covers.last_mut().ok_or_else(|| parse_err(no, "pair before the first `# cover` line"))?;
            let mut it = t.split_whitespace().map(|s| s.parse::<usize>());
            let (w, b) = match (it.next(), it.next(), it.next()) {
                (Some(Ok(w)), Some(Ok(b)), None) => (w, b),
                _ => return Err(parse_err(no, format!("expected `white black`, got `{t}`"))),
            };
            if cur.len() <= w {
                cur.resize(w + 1, None);
            }
            if cur[w].replace(b).is_some() {
                return Err(parse_err(no, format!("white {w} listed twice")));
            }
        }
    }
    let covers = covers
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            m.into_iter()
                .collect::<Option<Vec<usize>>>()
                .map(|matching| DimerCover { matching })
                .ok_or_else(|| parse_err(0, format!("cover {k} leaves a white unmatched")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverDump {
        domain_hash: hash.ok_or_else(|| parse_err(0, "missing header `domain_hash`"))?,
        seed: seed.ok_or_else(|| parse_err(0, "missing header `seed`"))?,
        covers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kasteleyn::KasteleynSystem;
    use crate::sampling::Sampler;
    use std::sync::Arc;

    #[test]
    fn coupling_dump_round_trip() {
        let d = Arc::new(CylinderDomain::straight(6, 4).unwrap());
        let s = KasteleynSystem::assemble(d.clone()).unwrap();
        let t = s.invert().unwrap();
        let mut buf = Vec::new();
        write_coupling_csv(&mut buf, &t, &d).unwrap();
        let dump = read_coupling_csv(buf.as_slice()).unwrap();
        assert_eq!(dump.domain_hash, d.hash_hex());
        assert_eq!(dump.n, t.n());
        assert_eq!(dump.cut_column, 0);
        for w in 0..t.n() {
            for b in 0..t.n() {
                assert_eq!(dump.get(w, b), t.coupling(w, b));
            }
        }
    }

    #[test]
    fn cover_dump_round_trip() {
        let d = Arc::new(CylinderDomain::straight(8, 4).unwrap());
        let s = KasteleynSystem::assemble(d.clone()).unwrap();
        let t = s.invert().unwrap();
        let sampler = Sampler::new(&s, &t);
        let covers: Vec<_> = (0..3).map(|i| sampler.sample(5, i).unwrap()).collect();
        let mut buf = Vec::new();
        write_covers(&mut buf, &d, 5, &covers).unwrap();
        let dump = read_covers(buf.as_slice()).unwrap();
        assert_eq!(dump.seed, 5);
        assert_eq!(dump.covers, covers);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(read_covers("# seed = 1\n1 2\n".as_bytes()).is_err());
        assert!(read_covers("# domain_hash = ab\n# seed = 1\n# cover 0\n1 0\n".as_bytes()).is_err());
        let bad = "# domain_hash = ab\n# delta = 0.5\n# cut_column = 0\nwhite,black,re,im\n0,0,1,0\n0,1,1,0\n";
        assert!(matches!(read_coupling_csv(bad.as_bytes()), Err(Error::Parse { .. })));
    }
}
