use super::PosteriorSamples;
use crate::error::{Error, Result};
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"PSB1";

/// Columnar CSV: `chain,draw,<names>`, floats in shortest round-trip form.
pub fn write_csv<W: Write>(s: &PosteriorSamples, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(s.names.iter().cloned());
    out.write_record(&header).map_err(csv_err)?;
    let mut counter = vec![0usize; s.n_chains()];
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..s.n_draws() {
        let c = s.chains[i] as usize;
        rec.clear();
        rec.push(c.to_string());
        rec.push(counter[c].to_string());
        counter[c] += 1;
        rec.extend(s.row(i).iter().map(|v| format!("{v:?}")));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<PosteriorSamples> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.len() < 2 || &header[0] != "chain" || &header[1] != "draw" {
        return Err(Error::format("posterior CSV must start with chain,draw"));
    }
    let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let mut s = PosteriorSamples::new(names);
    let mut row = Vec::with_capacity(s.n_cols());
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, found {}", header.len(), rec.len()) });
        }
        let chain: u32 = rec[0].parse().map_err(|_| Error::Parse { line, msg: "bad chain index".into() })?;
        row.clear();
        for f in rec.iter().skip(2) {
            row.push(f.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("bad number {f:?}") })?);
        }
        s.push(chain, &row);
    }
    Ok(s)
}

/// Binary layout: magic, u32 column count, per column (u32 byte length,
/// UTF-8 name), u64 draw count, u32 chain per draw, then row-major f64 values.
/// Everything little-endian.
pub fn write_binary<W: Write>(s: &PosteriorSamples, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(s.n_cols() as u32).to_le_bytes())?;
    for n in &s.names {
        w.write_all(&(n.len() as u32).to_le_bytes())?;
        w.write_all(n.as_bytes())?;
    }
    w.write_all(&(s.n_draws() as u64).to_le_bytes())?;
    for c in &s.chains {
        w.write_all(&c.to_le_bytes())?;
    }
    for v in &s.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<PosteriorSamples> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("truncated posterior file"))?;
    if &magic != MAGIC {
        return Err(Error::format("not a posterior sample file"));
    }
    let n_cols = read_u32(&mut r)? as usize;
    let mut names = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let len = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|_| Error::format("truncated column name"))?;
        names.push(String::from_utf8(buf).map_err(|_| Error::format("column name is not UTF-8"))?);
    }
    let n_draws = read_u64(&mut r)? as usize;
    let mut s = PosteriorSamples::new(names);
    s.chains.reserve(n_draws);
    for _ in 0..n_draws {
        s.chains.push(read_u32(&mut r)?);
    }
    let mut buf = [0u8; 8];
    s.values.reserve(n_draws * n_cols);
    for _ in 0..n_draws * n_cols {
        r.read_exact(&mut buf).map_err(|_| Error::format("truncated sample values"))?;
        s.values.push(f64::from_le_bytes(buf));
    }
    Ok(s)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated posterior header"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated posterior header"))?;
    Ok(u64::from_le_bytes(b))
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(format!("posterior CSV: {e}"))
}
