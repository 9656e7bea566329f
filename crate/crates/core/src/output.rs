//! File formats: the diagnostics CSV, legacy-ASCII VTK snapshots and a
//! directory sink that writes both during a run.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::DiagnosticsRow;
use crate::mesh::Mesh;
use crate::simulation::RunSink;
use crate::stepper::State;

pub const CSV_HEADER: &str = "step,t,min_u,max_u,min_w,max_w,min_th,max_th,energy_B,dissipation_cum,\
mass_b,mass_bw,mass_bth,overshoot_u,overshoot_w,overshoot_th,newton_iters,lin_iters_u,lin_iters_w,lin_iters_th";

/// 17 significant digits, independent of the platform's shortest-roundtrip printing.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_line(row: &DiagnosticsRow) -> String {
    let floats = [
        row.t,
        row.min[0],
        row.max[0],
        row.min[1],
        row.max[1],
        row.min[2],
        row.max[2],
        row.energy_b,
        row.dissipation_cum,
        row.mass_b,
        row.mass_bw,
        row.mass_bth,
        row.overshoot[0],
        row.overshoot[1],
        row.overshoot[2],
    ];
    let mut s = row.step.to_string();
    for v in floats {
        s.push(',');
        s.push_str(&fmt_f64(v));
    }
    for n in [row.newton_iters, row.lin_iters[0], row.lin_iters[1], row.lin_iters[2]] {
        let _ = write!(s, ",{n}");
    }
    s
}

pub fn write_diag_row(row: &DiagnosticsRow, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{}", csv_line(row))
}

/// Legacy VTK, ASCII, unstructured grid of linear triangles with the three
/// fields as point scalars.
pub fn vtk_string(mesh: &Mesh, state: &State) -> String {
    let n = mesh.node_count();
    let t = mesh.triangle_count();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "porous snapshot t={}", fmt_f64(state.t));
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {n} double");
    for &[x, y] in mesh.nodes() {
        let _ = writeln!(s, "{} {} 0", fmt_f64(x), fmt_f64(y));
    }
    let _ = writeln!(s, "CELLS {t} {}", 4 * t);
    for [i, j, k] in mesh.triangles() {
        let _ = writeln!(s, "3 {i} {j} {k}");
    }
    let _ = writeln!(s, "CELL_TYPES {t}");
    for _ in 0..t {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    for (name, values) in [("u", &state.u), ("w", &state.w), ("theta", &state.theta)] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in values.iter() {
            s.push_str(&fmt_f64(*v));
            s.push('\n');
        }
    }
    s
}

pub fn write_snapshot(mesh: &Mesh, state: &State, path: &Path) -> io::Result<()> {
    fs::write(path, vtk_string(mesh, state)).map_err(|e| with_path(e, path))
}

fn with_path(e: io::Error, path: &Path) -> io::Error {
    io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

pub fn snapshot_name(step: usize) -> String {
    format!("snapshot_{step:05}.vtk")
}

/// Writes `diagnostics.csv`, `mesh.txt` and `snapshot_NNNNN.vtk` files into a directory.
pub struct DirectorySink {
    dir: PathBuf,
    csv: BufWriter<File>,
}

impl DirectorySink {
    pub fn create(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| with_path(e, &dir))?;
        let path = dir.join("diagnostics.csv");
        let mut csv = BufWriter::new(File::create(&path).map_err(|e| with_path(e, &path))?);
        writeln!(csv, "{CSV_HEADER}")?;
        Ok(DirectorySink { dir, csv })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl RunSink for DirectorySink {
    fn start(&mut self, mesh: &Mesh) -> io::Result<()> {
        let path = self.dir.join("mesh.txt");
        fs::write(&path, mesh.to_ascii()).map_err(|e| with_path(e, &path))
    }

    // Flushed per row so a failed run leaves every completed level on disk.
    fn row(&mut self, row: &DiagnosticsRow) -> io::Result<()> {
        write_diag_row(row, &mut self.csv)?;
        self.csv.flush()
    }

    fn snapshot(&mut self, step: usize, state: &State, mesh: &Mesh) -> io::Result<()> {
        write_snapshot(mesh, state, &self.dir.join(snapshot_name(step)))
    }

    fn finish(&mut self) -> io::Result<()> {
        self.csv.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_rect_mesh, Marker, SideMarkers};

    fn row() -> DiagnosticsRow {
        DiagnosticsRow {
            step: 3,
            t: 0.03,
            min: [-1.0, 0.0, 0.5],
            max: [-0.5, 1.0, 1.0],
            energy_b: 0.125,
            dissipation_cum: 1.0 / 3.0,
            grad_l2: [0.0; 3],
            mass_b: 0.2,
            mass_bw: 0.1,
            mass_bth: 1.2,
            overshoot: [0.0; 3],
            newton_iters: 4,
            lin_iters: [30, 12, 11],
        }
    }

    #[test]
    fn csv_line_matches_header_arity() {
        let line = csv_line(&row());
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
        assert!(line.starts_with("3,2.9999999999999999e-2,"));
        assert!(line.contains("3.3333333333333331e-1"));
        assert!(line.ends_with(",4,30,12,11"));
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn vtk_layout() {
        let mesh = generate_rect_mesh(1, 1, 1.0, 1.0, SideMarkers::all(Marker::Dirichlet)).unwrap();
        let st = State {
            t: 0.0,
            u: vec![1.0; 4],
            w: vec![2.0; 4],
            theta: vec![3.0; 4],
        };
        let s = vtk_string(&mesh, &st);
        assert!(s.contains("POINTS 4 double\n"));
        assert!(s.contains("CELLS 2 8\n3 0 1 3\n3 0 3 2\n"));
        assert!(s.contains("CELL_TYPES 2\n5\n5\n"));
        assert!(s.contains("SCALARS theta double 1\nLOOKUP_TABLE default\n3.0000000000000000e0\n"));
        assert_eq!(snapshot_name(42), "snapshot_00042.vtk");
    }
}
