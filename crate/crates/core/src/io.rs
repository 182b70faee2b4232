//! Text formats: point files, ESRI ASCII DEMs, and the CSV tables the
//! command-line tools exchange.
//!
//! Point files hold one `x y z class` record per line. Lines starting with
//! `#` are comments, except two optional headers this module writes itself:
//! `# extent xmin ymin xmax ymax` and `# frame absolute|above_ground`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cloud::{HeightFrame, Point3D, PointClass, PointCloud};
use crate::dem::{Dem, DEFAULT_NODATA};
use crate::error::{Error, Result};
use crate::eval::{CrownClass, Detected, Metrics, StemRecord};
use crate::grid::{Extent, GridSpec};
use crate::occlusion::OcclusionRow;
use crate::strata::LayerStats;
use crate::treeseg::Crown;

pub fn read_points(reader: impl BufRead) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut extent = None;
    let mut frame = HeightFrame::Absolute;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(comment) = t.strip_prefix('#') {
            let mut words = comment.split_whitespace();
            match words.next() {
                Some("extent") => {
                    let v: Vec<f64> = words
                        .map(|w| w.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::parse(lineno, "extent header needs four numbers"))?;
                    if v.len() != 4 || !(v[2] >= v[0] && v[3] >= v[1]) {
                        return Err(Error::parse(lineno, "extent header needs xmin ymin xmax ymax"));
                    }
                    extent = Some(Extent::new(v[0], v[1], v[2], v[3]));
                }
                Some("frame") => {
                    frame = match words.next() {
                        Some("absolute") => HeightFrame::Absolute,
                        Some("above_ground") => HeightFrame::AboveGround,
                        other => {
                            return Err(Error::parse(lineno, format!("unknown height frame {other:?}")))
                        }
                    }
                }
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(lineno, format!("expected `x y z class`, got {} fields", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("{name} is not a finite number: {}", fields[i])))
        };
        let (x, y, z) = (num(0, "x")?, num(1, "y")?, num(2, "z")?);
        let class = match fields[3] {
            "0" => PointClass::Unclassified,
            "2" => PointClass::Ground,
            "5" => PointClass::Vegetation,
            other => return Err(Error::parse(lineno, format!("class must be 0, 2 or 5, got {other}"))),
        };
        points.push(Point3D::new(x, y, z, class));
    }
    Ok(match extent {
        Some(e) => PointCloud::with_extent(points, e, frame),
        None => PointCloud::from_points(points, frame),
    })
}

pub fn write_points(mut w: impl Write, cloud: &PointCloud) -> Result<()> {
    let e = cloud.extent;
    writeln!(w, "# extent {} {} {} {}", e.xmin, e.ymin, e.xmax, e.ymax)?;
    let frame = match cloud.frame {
        HeightFrame::Absolute => "absolute",
        HeightFrame::AboveGround => "above_ground",
    };
    writeln!(w, "# frame {frame}")?;
    for p in &cloud.points {
        writeln!(w, "{} {} {} {}", p.x, p.y, p.z, p.class.code())?;
    }
    Ok(())
}

/// ESRI ASCII grid. Corner or center registration is accepted on input.
pub fn read_dem(reader: impl BufRead) -> Result<Dem> {
    let mut header: Vec<(String, f64)> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut lines = reader.lines().enumerate();
    let mut pending: Option<(usize, String)> = None;
    for (k, line) in lines.by_ref() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let first = t.split_whitespace().next().unwrap_or("");
        if first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            let mut parts = t.split_whitespace();
            let key = parts.next().unwrap().to_ascii_lowercase();
            let v = parts
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::parse(k + 1, format!("header {key} needs a number")))?;
            header.push((key, v));
        } else {
            pending = Some((k + 1, line));
            break;
        }
    }
    let get = |key: &str| header.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
    let need = |key: &str| get(key).ok_or_else(|| Error::parse(0, format!("DEM header lacks {key}")));
    let ncols = need("ncols")?;
    let nrows = need("nrows")?;
    let cell = need("cellsize")?;
    if !(ncols >= 1.0 && nrows >= 1.0 && ncols.fract() == 0.0 && nrows.fract() == 0.0) {
        return Err(Error::parse(0, "ncols and nrows must be positive integers"));
    }
    if !(cell > 0.0) {
        return Err(Error::parse(0, "cellsize must be positive"));
    }
    let (ncols, nrows) = (ncols as usize, nrows as usize);
    let (x0, y0) = match (get("xllcorner"), get("yllcorner"), get("xllcenter"), get("yllcenter")) {
        (Some(x), Some(y), _, _) => (x, y),
        (_, _, Some(x), Some(y)) => (x - cell / 2.0, y - cell / 2.0),
        _ => return Err(Error::parse(0, "DEM header lacks xllcorner/yllcorner")),
    };
    let nodata = get("nodata_value").unwrap_or(DEFAULT_NODATA);

    let mut push_line = |lineno: usize, line: &str| -> Result<()> {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(lineno, format!("not a number: {tok}")))?;
            values.push(v);
        }
        Ok(())
    };
    if let Some((lineno, line)) = pending {
        push_line(lineno, &line)?;
    }
    for (k, line) in lines {
        push_line(k + 1, &line?)?;
    }
    if values.len() != ncols * nrows {
        return Err(Error::parse(0, format!("expected {} DEM values, found {}", ncols * nrows, values.len())));
    }
    // On disk the north row comes first; in memory rows run south to north.
    let mut grid_values = Vec::with_capacity(values.len());
    for row in (0..nrows).rev() {
        for &v in &values[row * ncols..(row + 1) * ncols] {
            grid_values.push(if v == nodata { f64::NAN } else { v });
        }
    }
    let mut dem = Dem {
        grid: GridSpec {
            origin_x: x0,
            origin_y: y0,
            cell_width: cell,
            ncols,
            nrows,
        },
        values: grid_values,
        nodata,
    };
    if dem.has_voids() && dem.values.iter().any(|v| !v.is_nan()) {
        dem.fill_voids();
    }
    Ok(dem)
}

pub fn write_dem(mut w: impl Write, dem: &Dem) -> Result<()> {
    let g = &dem.grid;
    writeln!(w, "ncols {}", g.ncols)?;
    writeln!(w, "nrows {}", g.nrows)?;
    writeln!(w, "xllcorner {}", g.origin_x)?;
    writeln!(w, "yllcorner {}", g.origin_y)?;
    writeln!(w, "cellsize {}", g.cell_width)?;
    writeln!(w, "NODATA_value {}", dem.nodata)?;
    for row in (0..g.nrows).rev() {
        let line: Vec<String> = (0..g.ncols)
            .map(|col| {
                let v = dem.value(col, row);
                if v.is_nan() { dem.nodata } else { v }.to_string()
            })
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_reader<R: std::io::Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::parse(line, format!("{kind:?}")),
    }
}

/// Crown table; a `layer` column follows when any crown carries one.
pub fn write_crowns(w: impl Write, crowns: &[Crown]) -> Result<()> {
    let layered = crowns.iter().any(|c| c.layer.is_some());
    let mut out = csv_writer(w);
    let mut head = vec!["tree_id", "apex_x", "apex_y", "apex_height_m", "hull_area_m2", "max_radius_m", "n_points"];
    if layered {
        head.push("layer");
    }
    out.write_record(&head).map_err(csv_err)?;
    for c in crowns {
        let mut rec = vec![
            c.id.to_string(),
            format!("{:.3}", c.apex.x),
            format!("{:.3}", c.apex.y),
            format!("{:.3}", c.height),
            format!("{:.3}", c.hull.area().abs()),
            format!("{:.3}", c.max_radius),
            c.members.len().to_string(),
        ];
        if layered {
            rec.push(c.layer.map_or(String::new(), |l| l.to_string()));
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CrownRow {
    tree_id: u32,
    apex_x: f64,
    apex_y: f64,
    apex_height_m: f64,
}

/// Reads the apex columns of a crown table.
pub fn read_crowns(r: impl std::io::Read) -> Result<Vec<Detected>> {
    csv_reader(r)
        .deserialize::<CrownRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(Detected {
                id: row.tree_id,
                x: row.apex_x,
                y: row.apex_y,
                height: row.apex_height_m,
            })
        })
        .collect()
}

/// `point_id,tree_id` rows, sorted by point id.
pub fn write_labels(w: impl Write, labels: &[(usize, u32)]) -> Result<()> {
    let mut rows = labels.to_vec();
    rows.sort_unstable();
    let mut out = csv_writer(w);
    out.write_record(["point_id", "tree_id"]).map_err(csv_err)?;
    for (p, t) in rows {
        out.write_record([p.to_string(), t.to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct StemRow {
    id: String,
    x: f64,
    y: f64,
    height_m: f64,
    dbh_cm: Option<f64>,
    #[serde(default)]
    crown_class: String,
}

pub fn read_stems(r: impl std::io::Read) -> Result<Vec<StemRecord>> {
    csv_reader(r)
        .deserialize::<StemRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(StemRecord {
                id: row.id,
                x: row.x,
                y: row.y,
                height: row.height_m,
                crown_class: row.crown_class.parse::<CrownClass>()?,
                dbh: row.dbh_cm,
            })
        })
        .collect()
}

pub fn write_stems(w: impl Write, stems: &[StemRecord]) -> Result<()> {
    let mut out = csv_writer(w);
    for s in stems {
        out.serialize(StemRow {
            id: s.id.clone(),
            x: s.x,
            y: s.y,
            height_m: s.height,
            dbh_cm: s.dbh,
            crown_class: s.crown_class.as_str().to_string(),
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Layer statistics; the total point density of the source cloud (ground
/// included) travels in a `# point_density` comment for the occlusion fit.
pub fn write_layers(mut w: impl Write, rows: &[LayerStats], point_density: f64) -> Result<()> {
    writeln!(w, "# point_density {point_density}")?;
    let mut out = csv_writer(w);
    out.write_record(["layer", "starting_height_m", "thickness_m", "density_pt_m2", "n_points"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.layer.map_or("all".to_string(), |l| l.to_string()),
            format!("{:.3}", r.starting_height),
            format!("{:.3}", r.thickness),
            format!("{:.6}", r.density),
            r.n_points.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// A parsed `layers.csv`: per-layer densities top-down (aggregate row
/// dropped) and the source point density if recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTable {
    pub densities: Vec<f64>,
    pub point_density: Option<f64>,
}

pub fn read_layers(mut r: impl BufRead) -> Result<LayerTable> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let point_density = text.lines().find_map(|l| {
        l.trim()
            .strip_prefix('#')
            .and_then(|c| c.trim().strip_prefix("point_density"))
            .and_then(|v| v.trim().parse::<f64>().ok())
    });
    #[derive(Deserialize)]
    struct Row {
        layer: String,
        density_pt_m2: f64,
    }
    let mut layers: Vec<(u32, f64)> = Vec::new();
    for row in csv_reader(text.as_bytes()).deserialize::<Row>() {
        let row = row.map_err(csv_err)?;
        if row.layer == "all" {
            continue;
        }
        let n: u32 = row
            .layer
            .parse()
            .map_err(|_| Error::InvalidRecord(format!("layer must be an ordinal or `all`, got {}", row.layer)))?;
        if n == 0 || !(row.density_pt_m2 >= 0.0) {
            return Err(Error::InvalidRecord(format!("bad layer row {n}: density {}", row.density_pt_m2)));
        }
        layers.push((n, row.density_pt_m2));
    }
    layers.sort_by_key(|l| l.0);
    if layers.iter().enumerate().any(|(k, l)| l.0 != k as u32 + 1) {
        return Err(Error::InvalidRecord("layer ordinals must run 1, 2, ... without gaps".into()));
    }
    Ok(LayerTable {
        densities: layers.into_iter().map(|l| l.1).collect(),
        point_density,
    })
}

pub fn write_occlusion_report(w: impl Write, rows: &[OcclusionRow], pcd_min_top: f64) -> Result<()> {
    let mut out = csv_writer(w);
    let last = format!("pcd_min_at_{pcd_min_top}");
    out.write_record(["n", "p_n_observed", "p_n_fitted", last.as_str()]).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.p_observed.map_or(String::new(), |p| format!("{p:.6}")),
            format!("{:.6}", r.p_fitted),
            r.pcd_min.map_or("inf".to_string(), |p| format!("{p:.2}")),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub plot_id: String,
    /// Crown class name, `understory`, `overstory` or `all`.
    pub class: String,
    pub metrics: Metrics,
}

pub fn write_metrics(w: impl Write, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["plot_id", "class", "MT", "OE", "CE", "recall", "precision", "f_score"])
        .map_err(csv_err)?;
    for r in rows {
        let m = &r.metrics;
        out.write_record([
            r.plot_id.clone(),
            r.class.clone(),
            m.mt.to_string(),
            m.oe.to_string(),
            m.ce.to_string(),
            format!("{:.6}", m.recall),
            format!("{:.6}", m.precision),
            format!("{:.6}", m.f_score),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Tile layout file of a distributed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLayout {
    pub tile_size_m: f64,
    pub tiles: Vec<TileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub id: u32,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    pub path: String,
}

impl TileEntry {
    pub fn extent(&self) -> Extent {
        Extent::new(self.xmin, self.ymin, self.xmax, self.ymax)
    }
}

pub fn read_tile_layout(r: impl std::io::Read) -> Result<TileLayout> {
    let layout: TileLayout = serde_json::from_reader(r)?;
    if !(layout.tile_size_m > 0.0) {
        return Err(Error::InvalidRecord("tile_size_m must be positive".into()));
    }
    for t in &layout.tiles {
        if !(t.xmax > t.xmin && t.ymax > t.ymin) {
            return Err(Error::InvalidRecord(format!("tile {} has an empty extent", t.id)));
        }
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_round_trip() {
        let cloud = PointCloud::with_extent(
            vec![
                Point3D::new(1.5, 2.25, 301.125, PointClass::Vegetation),
                Point3D::new(0.1, 0.2, 280.0, PointClass::Ground),
                Point3D::new(3.0, 1.0, 0.3, PointClass::Unclassified),
            ],
            Extent::new(0.0, 0.0, 10.0, 10.0),
            HeightFrame::AboveGround,
        );
        let mut buf = Vec::new();
        write_points(&mut buf, &cloud).unwrap();
        let back = read_points(buf.as_slice()).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn point_errors_name_the_line() {
        let text = "# a comment\n1 2 3 5\n1 2 x 5\n";
        match read_points(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_points("1 2 3 7\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_points("1 2 3\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(read_points("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn dem_round_trip_north_row_first() {
        let text = "ncols 2\nnrows 2\nxllcorner 10\nyllcorner 20\ncellsize 1\nNODATA_value -9999\n5 6\n1 2\n";
        let dem = read_dem(text.as_bytes()).unwrap();
        assert_eq!(dem.value(0, 0), 1.0);
        assert_eq!(dem.value(1, 1), 6.0);
        assert_eq!((dem.grid.origin_x, dem.grid.origin_y), (10.0, 20.0));
        let mut buf = Vec::new();
        write_dem(&mut buf, &dem).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn dem_voids_are_filled_and_short_grids_rejected() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n7 -9999\n";
        let dem = read_dem(text.as_bytes()).unwrap();
        assert_eq!(dem.value(1, 0), 7.0);
        let short = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n";
        assert!(read_dem(short.as_bytes()).is_err());
    }

    #[test]
    fn stems_round_trip() {
        let stems = vec![
            StemRecord {
                id: "a".into(),
                x: 1.0,
                y: 2.0,
                height: 20.5,
                crown_class: CrownClass::Dominant,
                dbh: Some(31.2),
            },
            StemRecord {
                id: "b".into(),
                x: 3.0,
                y: 4.0,
                height: 8.0,
                crown_class: CrownClass::Overtopped,
                dbh: None,
            },
        ];
        let mut buf = Vec::new();
        write_stems(&mut buf, &stems).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,x,y,height_m,dbh_cm,crown_class\n"));
        assert_eq!(read_stems(buf.as_slice()).unwrap(), stems);
    }

    #[test]
    fn layers_table_round_trip() {
        let rows = vec![
            LayerStats { layer: Some(1), n_points: 10, starting_height: 18.0, thickness: 7.0, density: 42.08 },
            LayerStats { layer: Some(2), n_points: 3, starting_height: 6.0, thickness: 6.5, density: 5.02 },
            LayerStats { layer: None, n_points: 13, starting_height: 6.0, thickness: 19.0, density: 47.1 },
        ];
        let mut buf = Vec::new();
        write_layers(&mut buf, &rows, 50.0).unwrap();
        let t = read_layers(buf.as_slice()).unwrap();
        assert_eq!(t.densities, vec![42.08, 5.02]);
        assert_eq!(t.point_density, Some(50.0));
    }

    #[test]
    fn layout_validation() {
        let ok = r#"{"tile_size_m": 10, "tiles": [{"id": 0, "xmin": 0, "ymin": 0, "xmax": 10, "ymax": 10, "path": "t0.txt"}]}"#;
        assert_eq!(read_tile_layout(ok.as_bytes()).unwrap().tiles.len(), 1);
        let bad = r#"{"tile_size_m": 10, "tiles": [{"id": 0, "xmin": 0, "ymin": 0, "xmax": 0, "ymax": 10, "path": "t0.txt"}]}"#;
        assert!(read_tile_layout(bad.as_bytes()).is_err());
    }
}
