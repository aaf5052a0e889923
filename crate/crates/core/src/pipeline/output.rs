use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::grid_fem::Point;
use crate::kv_levelset::LevelSetField;

use super::config::ExperimentConfig;

/// Output directory of one run. Files are written with shortest
/// round-trip float formatting, so equal results give equal bytes.
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<String>,
    results: Vec<(String, String)>,
}

impl RunOutput {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
            files: Vec::new(),
            results: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// `grid_<name>.csv` with columns `x,y,value`.
    pub fn write_grid(
        &mut self,
        name: &str,
        rows: impl IntoIterator<Item = (Point, f64)>,
    ) -> Result<()> {
        let mut s = String::from("x,y,value\n");
        for (p, v) in rows {
            writeln!(s, "{:?},{:?},{:?}", p[0], p[1], v).unwrap();
        }
        self.write_text(&format!("grid_{name}.csv"), &s)
    }

    /// Pixel field of an `np × np` partition, one row per pixel center.
    pub fn write_pixel_grid(&mut self, name: &str, np: usize, values: &[f64]) -> Result<()> {
        let h = 1.0 / np as f64;
        self.write_grid(
            name,
            values.iter().enumerate().map(|(k, &v)| {
                (
                    [((k % np) as f64 + 0.5) * h, ((k / np) as f64 + 0.5) * h],
                    v,
                )
            }),
        )
    }

    /// Level-set values on the grid nodes.
    pub fn write_levelset_grid(&mut self, name: &str, phi: &LevelSetField) -> Result<()> {
        let n = phi.n();
        let h = phi.h();
        self.write_grid(
            name,
            (0..=n)
                .flat_map(|j| (0..=n).map(move |i| (i, j)))
                .map(|(i, j)| ([i as f64 * h, j as f64 * h], phi.at(i, j))),
        )
    }

    /// `contour_<name>.csv` with columns `polyline,x,y`.
    pub fn write_contours(&mut self, name: &str, polylines: &[Vec<Point>]) -> Result<()> {
        let mut s = String::from("polyline,x,y\n");
        for (id, line) in polylines.iter().enumerate() {
            for p in line {
                writeln!(s, "{id},{:?},{:?}", p[0], p[1]).unwrap();
            }
        }
        self.write_text(&format!("contour_{name}.csv"), &s)
    }

    /// `history.csv` with columns `iter,J,dt,sigma1`.
    pub fn write_history(
        &mut self,
        rows: impl IntoIterator<Item = (usize, f64, f64, f64)>,
    ) -> Result<()> {
        let mut s = String::from("iter,J,dt,sigma1\n");
        for (iter, j, dt, sigma1) in rows {
            writeln!(s, "{iter},{j:?},{dt:?},{sigma1:?}").unwrap();
        }
        self.write_text("history.csv", &s)
    }

    /// Adds a `key = value` line to the results section of the manifest.
    pub fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        self.results.push((key.to_string(), value.to_string()));
    }

    /// `manifest.txt`: command, versions, the full configuration echo,
    /// recorded results and the list of files written.
    pub fn write_manifest(&mut self, command: &str, config: &ExperimentConfig) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "# run manifest").unwrap();
        writeln!(s, "command = {command}").unwrap();
        writeln!(s, "version = {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(
            s,
            "noise_seed = {}",
            config.seed.map_or("none".into(), |x| x.to_string())
        )
        .unwrap();
        writeln!(s, "\n[config]").unwrap();
        s.push_str(&config.to_text());
        writeln!(s, "\n[results]").unwrap();
        for (k, v) in &self.results {
            writeln!(s, "{k} = {v}").unwrap();
        }
        writeln!(s, "\n[files]").unwrap();
        for f in &self.files {
            writeln!(s, "{f}").unwrap();
        }
        fs::write(self.path("manifest.txt"), s)?;
        Ok(())
    }
}
