#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use canopy::forge::ForestSpec;
use canopy::grid::Extent;
use canopy::io::{read_points, write_points, TileEntry, TileLayout};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn canopy(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_canopy"))
        .args(args)
        .output()
        .expect("spawn canopy");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs and insists on exit 0.
pub fn canopy_ok(args: &[&str]) -> Run {
    let r = canopy(args);
    assert_eq!(r.code, 0, "canopy {args:?}\nstdout: {}\nstderr: {}", r.stdout, r.stderr);
    r
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn write_spec(dir: &Path, name: &str, spec: &ForestSpec) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path
}

/// Forges `spec` into `dir/<name>` and returns that directory.
pub fn forge(dir: &Path, name: &str, spec: &ForestSpec) -> PathBuf {
    let spec_path = write_spec(dir, &format!("{name}.json"), spec);
    let out = dir.join(name);
    canopy_ok(&["--out", s(&out), "forge", "--spec", s(&spec_path)]);
    out
}

/// Data rows of a CSV file (header and `#` lines dropped).
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Splits a point file into an `n x n` tile layout under `dir`.
pub fn split_into_tiles(cloud_path: &Path, dir: &Path, n: usize) -> PathBuf {
    let cloud = read_points(std::io::BufReader::new(fs::File::open(cloud_path).unwrap())).unwrap();
    let e = cloud.extent;
    let size = e.width().max(e.height()) / n as f64;
    let mut tiles = Vec::new();
    fs::create_dir_all(dir).unwrap();
    for r in 0..n {
        for c in 0..n {
            let ext = Extent::new(
                e.xmin + c as f64 * size,
                e.ymin + r as f64 * size,
                (e.xmin + (c + 1) as f64 * size).min(e.xmax),
                (e.ymin + (r + 1) as f64 * size).min(e.ymax),
            );
            let last_c = c + 1 == n;
            let last_r = r + 1 == n;
            let ids: Vec<usize> = (0..cloud.len())
                .filter(|&i| {
                    let p = cloud.points[i];
                    let col = ((p.x - e.xmin) / size).floor() as usize;
                    let row = ((p.y - e.ymin) / size).floor() as usize;
                    (col == c || (last_c && col >= n)) && (row == r || (last_r && row >= n))
                })
                .collect();
            let mut sub = cloud.subset(&ids);
            sub.extent = ext;
            let id = (r * n + c) as u32;
            let name = format!("tile_{id}.xyz");
            write_points(fs::File::create(dir.join(&name)).unwrap(), &sub).unwrap();
            tiles.push(TileEntry { id, xmin: ext.xmin, ymin: ext.ymin, xmax: ext.xmax, ymax: ext.ymax, path: name });
        }
    }
    let layout = dir.join("layout.json");
    let body = TileLayout { tile_size_m: size, tiles };
    fs::write(&layout, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    layout
}

/// Every file of `a` exists in `b` with identical bytes (manifests excluded).
pub fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut n = 0;
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for p in names {
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if !p.is_file() || name == "manifest.json" {
            continue;
        }
        let other = b.join(&name);
        let (x, y) = (fs::read(&p).unwrap(), fs::read(&other).map_err(|e| format!("{name}: {e}"))?);
        if x != y {
            return Err(format!("{name} differs"));
        }
        n += 1;
    }
    Ok(n)
}
