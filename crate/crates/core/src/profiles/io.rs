use std::fs;
use std::io::Write;
use std::path::Path;

use super::{RoadProfile, SpeedProfile};
use crate::error::{CcdError, Result};

fn write_with_header(path: &Path, header: &str, cols: [&str; 2], rows: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut out = Vec::new();
    for line in header.lines() {
        writeln!(out, "# {line}").expect("write to vec");
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(cols)?;
        for (a, b) in rows {
            w.write_record([a.to_string(), b.to_string()])?;
        }
        w.flush().map_err(|e| CcdError::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| CcdError::io(path, e))
}

fn read_pairs(path: &Path, cols: [&str; 2]) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| CcdError::io(path, e))?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers()?.clone();
    if headers.len() != 2 || headers[0].trim() != cols[0] || headers[1].trim() != cols[1] {
        return Err(CcdError::Parse(format!(
            "{}: expected columns {}, {}",
            path.display(),
            cols[0],
            cols[1]
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CcdError::Parse(format!("{}: {e}", path.display())))
        };
        rows.push((parse(&rec[0])?, parse(&rec[1])?));
    }
    Ok(rows)
}

pub fn write_road_csv(road: &RoadProfile, spec_json: &str, path: &Path) -> Result<()> {
    let header = format!("road profile\nspec: {spec_json}\nseed: {}", road.seed);
    write_with_header(
        path,
        &header,
        ["s_m", "z0_m"],
        road.elevation_m
            .iter()
            .enumerate()
            .map(|(i, &z)| (road.distance(i), z)),
    )
}

/// Reads an externally supplied road; the grid must be uniform.
pub fn read_road_csv(path: &Path) -> Result<RoadProfile> {
    let rows = read_pairs(path, ["s_m", "z0_m"])?;
    if rows.len() < 2 {
        return Err(CcdError::Parse(format!("{}: too few rows", path.display())));
    }
    let spacing = rows[1].0 - rows[0].0;
    for (i, w) in rows.windows(2).enumerate() {
        if ((w[1].0 - w[0].0) - spacing).abs() > 1e-6 * spacing.abs().max(1.0) {
            return Err(CcdError::Parse(format!(
                "{}: non-uniform distance grid at row {}",
                path.display(),
                i + 2
            )));
        }
    }
    RoadProfile::from_elevation(spacing, rows.into_iter().map(|r| r.1).collect(), 0)
}

pub fn write_speed_csv(speed: &SpeedProfile, spec_json: &str, path: &Path) -> Result<()> {
    let header = format!("speed profile\nspec: {spec_json}\nseed: {}", speed.seed);
    write_with_header(
        path,
        &header,
        ["t_s", "v_mps"],
        speed
            .speed_mps
            .iter()
            .enumerate()
            .map(|(k, &v)| (speed.time(k), v)),
    )
}

pub fn read_speed_csv(path: &Path) -> Result<SpeedProfile> {
    let rows = read_pairs(path, ["t_s", "v_mps"])?;
    if rows.len() < 2 {
        return Err(CcdError::Parse(format!("{}: too few rows", path.display())));
    }
    if rows.iter().any(|r| !(r.1 >= 0.0)) {
        return Err(CcdError::Parse(format!("{}: negative speed", path.display())));
    }
    Ok(SpeedProfile {
        period_s: rows[1].0 - rows[0].0,
        speed_mps: rows.into_iter().map(|r| r.1).collect(),
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{generate_road, generate_speed, RoadSpec, SpeedSpec};

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = RoadSpec {
            length_m: 50.0,
            ..RoadSpec::default()
        };
        let road = generate_road(&spec, 1).unwrap();
        let p = dir.path().join("road.csv");
        write_road_csv(&road, &serde_json::to_string(&spec).unwrap(), &p).unwrap();
        let back = read_road_csv(&p).unwrap();
        assert_eq!(back.elevation_m, road.elevation_m);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("# road profile"));

        let speed = generate_speed(&SpeedSpec { steps: 300, ..SpeedSpec::default() }, 2).unwrap();
        let q = dir.path().join("speed.csv");
        write_speed_csv(&speed, "{}", &q).unwrap();
        let back = read_speed_csv(&q).unwrap();
        assert_eq!(back.speed_mps, speed.speed_mps);
    }
}
