//! Plain-text formats for rendered data.
//!
//! * Images: `# key=value` header lines, then CSV `row,col,counts`.
//! * Cubes: one JSON header line (geometry, axis, metadata), then CSV
//!   `row,col,bin,counts` listing nonzero entries.
//! * g² histograms: CSV `tau_ns,g2,sigma`.
//! * Spectra: CSV `<axis>,counts` where the axis column is `frequency_ghz`,
//!   `detuning_mhz` or `wavelength_nm`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::confocal::{ConfocalImage, ImageGeometry, ImageMetadata};
use super::cube::{SpectralCube, WavelengthAxis};
use super::g2::G2Histogram;
use super::spectrum::{AxisUnit, Spectrum};
use crate::error::{Error, Result};
use crate::foundation::Point2D;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

pub fn write_image<W: Write>(image: &ConfocalImage, mut w: W) -> Result<()> {
    let g = &image.geometry;
    let mut header = vec![
        format!("origin_x_nm={}", g.origin.x),
        format!("origin_y_nm={}", g.origin.y),
        format!("pixel_pitch_nm={}", g.pixel_pitch_nm),
        format!("width={}", g.width),
        format!("height={}", g.height),
        format!("dwell_ms={}", g.dwell_ms),
    ];
    if let Some(s) = image.metadata.psf_sigma_nm {
        header.push(format!("psf_sigma_nm={s}"));
    }
    if let Some(l) = image.metadata.wavelength_nm {
        header.push(format!("wavelength_nm={l}"));
    }
    for h in header {
        writeln!(w, "# {h}").map_err(io_err)?;
    }
    for warning in &image.metadata.warnings {
        writeln!(w, "# warning={warning}").map_err(io_err)?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["row", "col", "counts"])?;
    for r in 0..g.height {
        for c in 0..g.width {
            csv.write_record([r.to_string(), c.to_string(), image.get(r, c).to_string()])?;
        }
    }
    csv.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_image<R: Read>(r: R, source: &str) -> Result<ConfocalImage> {
    let mut reader = BufReader::new(r);
    let mut fields = std::collections::BTreeMap::new();
    let mut warnings = Vec::new();
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err)? == 0 {
            break;
        }
        match line.trim_end().strip_prefix('#') {
            Some(h) => {
                let (k, v) = h
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::parse(source, format!("bad header line `{}`", line.trim_end())))?;
                if k == "warning" {
                    warnings.push(v.to_string());
                } else {
                    fields.insert(k.to_string(), v.to_string());
                }
            }
            None => {
                body.push_str(&line);
                reader.read_to_string(&mut body).map_err(io_err)?;
                break;
            }
        }
    }
    let num = |k: &str| -> Result<f64> {
        fields
            .get(k)
            .ok_or_else(|| Error::parse(source, format!("missing header `{k}`")))?
            .parse::<f64>()
            .map_err(|e| Error::parse(source, format!("header `{k}`: {e}")))
    };
    let geometry = ImageGeometry {
        origin: Point2D::new(num("origin_x_nm")?, num("origin_y_nm")?),
        pixel_pitch_nm: num("pixel_pitch_nm")?,
        width: num("width")? as usize,
        height: num("height")? as usize,
        dwell_ms: num("dwell_ms")?,
    };
    geometry
        .validate()
        .map_err(|e| Error::parse(source, e.to_string()))?;
    let mut counts = vec![0u64; geometry.len()];
    let mut seen = vec![false; geometry.len()];
    let mut csv = csv::Reader::from_reader(body.as_bytes());
    for rec in csv.deserialize::<(usize, usize, u64)>() {
        let (r, c, n) = rec.map_err(|e| Error::parse(source, e.to_string()))?;
        if r >= geometry.height || c >= geometry.width {
            return Err(Error::parse(source, format!("pixel ({r}, {c}) outside the grid")));
        }
        counts[r * geometry.width + c] = n;
        seen[r * geometry.width + c] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::parse(source, "image is missing pixels"));
    }
    let mut image = ConfocalImage::new(geometry, counts)?;
    image.metadata = ImageMetadata {
        psf_sigma_nm: num("psf_sigma_nm").ok(),
        wavelength_nm: num("wavelength_nm").ok(),
        warnings,
    };
    Ok(image)
}

pub fn save_image(image: &ConfocalImage, path: &Path) -> Result<()> {
    write_image(image, create(path)?)
}

pub fn load_image(path: &Path) -> Result<ConfocalImage> {
    read_image(open(path)?, &path.display().to_string())
}

#[derive(Serialize, Deserialize)]
struct CubeHeader {
    geometry: ImageGeometry,
    axis: WavelengthAxis,
    #[serde(default)]
    metadata: ImageMetadata,
}

pub fn write_cube<W: Write>(cube: &SpectralCube, mut w: W) -> Result<()> {
    let header = CubeHeader {
        geometry: cube.geometry,
        axis: cube.axis,
        metadata: cube.metadata.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w).map_err(io_err)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["row", "col", "bin", "counts"])?;
    let (width, bins) = (cube.geometry.width, cube.axis.bins);
    for (i, &n) in cube.counts.iter().enumerate() {
        if n > 0 {
            let p = i / bins;
            csv.write_record([
                (p / width).to_string(),
                (p % width).to_string(),
                (i % bins).to_string(),
                n.to_string(),
            ])?;
        }
    }
    csv.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_cube<R: Read>(r: R, source: &str) -> Result<SpectralCube> {
    let mut reader = BufReader::new(r);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err)?;
    let header: CubeHeader = serde_json::from_str(first.trim())
        .map_err(|e| Error::parse(source, format!("cube header: {e}")))?;
    let (g, axis) = (header.geometry, header.axis);
    g.validate().map_err(|e| Error::parse(source, e.to_string()))?;
    axis.validate().map_err(|e| Error::parse(source, e.to_string()))?;
    let mut counts = vec![0u64; g.len() * axis.bins];
    let mut csv = csv::Reader::from_reader(reader);
    for rec in csv.deserialize::<(usize, usize, usize, u64)>() {
        let (row, col, bin, n) = rec.map_err(|e| Error::parse(source, e.to_string()))?;
        if row >= g.height || col >= g.width || bin >= axis.bins {
            return Err(Error::parse(source, format!("entry ({row}, {col}, {bin}) outside the cube")));
        }
        counts[(row * g.width + col) * axis.bins + bin] = n;
    }
    let mut cube = SpectralCube::new(g, axis, counts)?;
    cube.metadata = header.metadata;
    Ok(cube)
}

pub fn save_cube(cube: &SpectralCube, path: &Path) -> Result<()> {
    write_cube(cube, create(path)?)
}

pub fn load_cube(path: &Path) -> Result<SpectralCube> {
    read_cube(open(path)?, &path.display().to_string())
}

pub fn write_g2<W: Write>(h: &G2Histogram, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["tau_ns", "g2", "sigma"])?;
    for i in 0..h.len() {
        csv.serialize((h.tau_ns[i], h.values[i], h.sigma[i]))?;
    }
    csv.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_g2<R: Read>(r: R, source: &str) -> Result<G2Histogram> {
    let mut csv = csv::Reader::from_reader(r);
    let mut h = G2Histogram {
        tau_ns: Vec::new(),
        values: Vec::new(),
        sigma: Vec::new(),
    };
    for rec in csv.deserialize::<(f64, f64, f64)>() {
        let (t, v, s) = rec.map_err(|e| Error::parse(source, e.to_string()))?;
        h.tau_ns.push(t);
        h.values.push(v);
        h.sigma.push(s);
    }
    h.validate().map_err(|e| Error::parse(source, e.to_string()))?;
    Ok(h)
}

pub fn save_g2(h: &G2Histogram, path: &Path) -> Result<()> {
    write_g2(h, create(path)?)
}

pub fn load_g2(path: &Path) -> Result<G2Histogram> {
    read_g2(open(path)?, &path.display().to_string())
}

pub fn write_spectrum<W: Write>(s: &Spectrum, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([s.unit.column(), "counts"])?;
    for (x, c) in s.x.iter().zip(&s.counts) {
        csv.serialize((x, c))?;
    }
    csv.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_spectrum<R: Read>(r: R, source: &str) -> Result<Spectrum> {
    let mut csv = csv::Reader::from_reader(r);
    let unit = {
        let headers = csv.headers().map_err(|e| Error::parse(source, e.to_string()))?;
        let first = headers.get(0).unwrap_or("");
        AxisUnit::from_column(first)
            .ok_or_else(|| Error::parse(source, format!("unknown spectrum axis column `{first}`")))?
    };
    let mut s = Spectrum {
        unit,
        x: Vec::new(),
        counts: Vec::new(),
    };
    for rec in csv.deserialize::<(f64, f64)>() {
        let (x, c) = rec.map_err(|e| Error::parse(source, e.to_string()))?;
        s.x.push(x);
        s.counts.push(c);
    }
    s.validate().map_err(|e| Error::parse(source, e.to_string()))?;
    Ok(s)
}

pub fn save_spectrum(s: &Spectrum, path: &Path) -> Result<()> {
    write_spectrum(s, create(path)?)
}

pub fn load_spectrum(path: &Path) -> Result<Spectrum> {
    read_spectrum(open(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip() {
        let g = ImageGeometry::centered(Point2D::new(10.0, -5.0), 25.0, 4, 2.0);
        let mut img = ConfocalImage::new(g, (0..16).collect()).unwrap();
        img.metadata.psf_sigma_nm = Some(122.5);
        img.metadata.warnings.push("undersampled".into());
        let mut buf = Vec::new();
        write_image(&img, &mut buf).unwrap();
        assert_eq!(read_image(buf.as_slice(), "mem").unwrap(), img);
    }

    #[test]
    fn truncated_image_is_rejected() {
        let g = ImageGeometry::centered(Point2D::ORIGIN, 25.0, 3, 1.0);
        let img = ConfocalImage::new(g, vec![1; 9]).unwrap();
        let mut buf = Vec::new();
        write_image(&img, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(text.lines().count() - 2).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_image(cut.as_bytes(), "mem"), Err(Error::Parse { .. })));
    }

    #[test]
    fn cube_round_trip() {
        let g = ImageGeometry::centered(Point2D::ORIGIN, 50.0, 3, 1.0);
        let axis = WavelengthAxis::new(570.0, 580.0, 5).unwrap();
        let counts = (0..45).map(|i| (i % 4) as u64).collect();
        let cube = SpectralCube::new(g, axis, counts).unwrap();
        let mut buf = Vec::new();
        write_cube(&cube, &mut buf).unwrap();
        assert_eq!(read_cube(buf.as_slice(), "mem").unwrap(), cube);
    }

    #[test]
    fn spectrum_and_g2_round_trip() {
        let s = Spectrum {
            unit: AxisUnit::WavelengthNm,
            x: vec![736.0, 737.0],
            counts: vec![1.5, 2.0],
        };
        let mut buf = Vec::new();
        write_spectrum(&s, &mut buf).unwrap();
        assert_eq!(read_spectrum(buf.as_slice(), "mem").unwrap(), s);

        let h = G2Histogram {
            tau_ns: vec![-1.0, 0.0, 1.0],
            values: vec![0.9, 0.4, 0.9],
            sigma: vec![0.1, 0.1, 0.1],
        };
        let mut buf = Vec::new();
        write_g2(&h, &mut buf).unwrap();
        assert_eq!(read_g2(buf.as_slice(), "mem").unwrap(), h);
        assert!(read_g2("tau_ns,g2,sigma\n0,1,x\n".as_bytes(), "mem").is_err());
    }
}
