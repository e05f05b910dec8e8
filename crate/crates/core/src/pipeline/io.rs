//! Stage checkpoint files and exports.
//!
//! All binary formats are little-endian with an eight-byte magic and a u32
//! version so stale files fail loudly instead of being misread.

use crate::combing::CombedField;
use crate::dehomog::FineVoxelGrid;
use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::optimize::{DesignVector, MmaState, OptimizerState, RunLog};
use nalgebra::Matrix3;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const OPT_MAGIC: &[u8; 8] = b"DH3DOPT1";
const COMB_MAGIC: &[u8; 8] = b"DH3DCMB1";
const PHI_MAGIC: &[u8; 8] = b"DH3DPHI1";
const VERSION: u32 = 1;

struct Bin<W: Write>(W);

impl<W: Write> Bin<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.0
            .write_all(&v.to_le_bytes())
            .map_err(Error::io("write"))
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.0
            .write_all(&v.to_le_bytes())
            .map_err(Error::io("write"))
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.0
            .write_all(&v.to_le_bytes())
            .map_err(Error::io("write"))
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }
}

struct Un<R: Read> {
    r: R,
    path: String,
}

impl<R: Read> Un<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b).map_err(Error::io("read"))?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b).map_err(Error::io("read"))?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b).map_err(Error::io("read"))?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; 8 * n];
        self.r.read_exact(&mut bytes).map_err(Error::io("read"))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b).map_err(Error::io("read"))?;
        if &b != magic {
            return Err(Error::BadFile {
                path: self.path.clone(),
                reason: format!("bad magic {:?}", b),
            });
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::BadFile {
                path: self.path.clone(),
                reason: format!("unsupported version {v}"),
            });
        }
        Ok(())
    }
}

fn open_writer(path: &Path) -> Result<Bin<BufWriter<File>>> {
    let f = File::create(path).map_err(Error::io(format!("create {}", path.display())))?;
    Ok(Bin(BufWriter::new(f)))
}

fn open_reader(path: &Path) -> Result<Un<BufReader<File>>> {
    let f = File::open(path).map_err(Error::io(format!("open {}", path.display())))?;
    Ok(Un {
        r: BufReader::new(f),
        path: path.display().to_string(),
    })
}

fn write_grid<W: Write>(b: &mut Bin<W>, grid: &Grid3) -> Result<()> {
    b.u64(grid.nx as u64)?;
    b.u64(grid.ny as u64)?;
    b.u64(grid.nz as u64)?;
    b.f64(grid.h)
}

fn read_grid<R: Read>(u: &mut Un<R>) -> Result<Grid3> {
    let nx = u.u64()? as usize;
    let ny = u.u64()? as usize;
    let nz = u.u64()? as usize;
    let h = u.f64()?;
    Ok(Grid3::new(nx, ny, nz, h))
}

/// Write the resumable optimizer checkpoint (six fields, MMA state,
/// iteration counter and objective scaling).
pub fn write_design_checkpoint(path: &Path, grid: &Grid3, state: &OptimizerState) -> Result<()> {
    let mut b = open_writer(path)?;
    b.0.write_all(OPT_MAGIC).map_err(Error::io("write"))?;
    b.u32(VERSION)?;
    write_grid(&mut b, grid)?;
    b.u64(state.iteration as u64)?;
    b.f64(state.gamma_c)?;
    b.f64(state.gamma_theta)?;
    for f in state.design.mu.iter().chain(state.design.theta.iter()) {
        b.f64s(f)?;
    }
    let raw = state.mma.raw();
    b.u64(raw.iter as u64)?;
    b.f64s(&raw.xold1)?;
    b.f64s(&raw.xold2)?;
    b.f64s(&raw.low)?;
    b.f64s(&raw.upp)?;
    b.f64s(&raw.move_limit)?;
    b.0.flush().map_err(Error::io("flush"))?;
    Ok(())
}

/// Read back a design checkpoint; the MMA template must be constructed by
/// the caller with the same bounds it used originally.
pub fn read_design_checkpoint(
    path: &Path,
    mma_template: MmaState,
) -> Result<(Grid3, OptimizerState)> {
    let mut u = open_reader(path)?;
    u.expect_magic(OPT_MAGIC)?;
    let grid = read_grid(&mut u)?;
    let n = grid.num_elements();
    let iteration = u.u64()? as usize;
    let gamma_c = u.f64()?;
    let gamma_theta = u.f64()?;
    let mut fields = Vec::with_capacity(6);
    for _ in 0..6 {
        fields.push(u.f64s(n)?);
    }
    let design = DesignVector {
        mu: [
            fields[0].clone(),
            fields[1].clone(),
            fields[2].clone(),
        ],
        theta: [
            fields[3].clone(),
            fields[4].clone(),
            fields[5].clone(),
        ],
    };
    let mma_iter = u.u64()? as usize;
    let xold1 = u.f64s(6 * n)?;
    let xold2 = u.f64s(6 * n)?;
    let low = u.f64s(6 * n)?;
    let upp = u.f64s(6 * n)?;
    let move_limit = u.f64s(6 * n)?;
    let mut mma = mma_template;
    mma.restore(crate::optimize::mma::MmaRawState {
        iter: mma_iter,
        xold1,
        xold2,
        low,
        upp,
        move_limit,
    });
    Ok((
        grid,
        OptimizerState {
            design,
            mma,
            iteration,
            gamma_c,
            gamma_theta,
            log: RunLog::default(),
        },
    ))
}

/// Combed-field dump: grid header, then per element nine frame entries
/// (column-major) and three widths, then the physical density field.
pub fn write_combed(path: &Path, combed: &CombedField, rho: &[f64]) -> Result<()> {
    let mut b = open_writer(path)?;
    b.0.write_all(COMB_MAGIC).map_err(Error::io("write"))?;
    b.u32(VERSION)?;
    write_grid(&mut b, &combed.grid)?;
    for e in 0..combed.grid.num_elements() {
        b.f64s(combed.frames[e].as_slice())?;
        b.f64s(&combed.widths[e])?;
    }
    b.f64s(rho)?;
    b.0.flush().map_err(Error::io("flush"))?;
    Ok(())
}

pub fn read_combed(path: &Path) -> Result<(CombedField, Vec<f64>)> {
    let mut u = open_reader(path)?;
    u.expect_magic(COMB_MAGIC)?;
    let grid = read_grid(&mut u)?;
    let n = grid.num_elements();
    let mut frames = Vec::with_capacity(n);
    let mut widths = Vec::with_capacity(n);
    for _ in 0..n {
        let f = u.f64s(9)?;
        frames.push(Matrix3::from_column_slice(&f));
        let w = u.f64s(3)?;
        widths.push([w[0], w[1], w[2]]);
    }
    let rho = u.f64s(n)?;
    Ok((
        CombedField {
            grid,
            frames,
            widths,
        },
        rho,
    ))
}

/// Mapping-field dump: intermediate grid, layer index, periodicity scaling,
/// nodal values.
pub fn write_phi(path: &Path, grid: &Grid3, layer: usize, p_scale: f64, phi: &[f64]) -> Result<()> {
    let mut b = open_writer(path)?;
    b.0.write_all(PHI_MAGIC).map_err(Error::io("write"))?;
    b.u32(VERSION)?;
    write_grid(&mut b, grid)?;
    b.u64(layer as u64)?;
    b.f64(p_scale)?;
    b.f64s(phi)?;
    b.0.flush().map_err(Error::io("flush"))?;
    Ok(())
}

pub fn read_phi(path: &Path) -> Result<(Grid3, usize, f64, Vec<f64>)> {
    let mut u = open_reader(path)?;
    u.expect_magic(PHI_MAGIC)?;
    let grid = read_grid(&mut u)?;
    let layer = u.u64()? as usize;
    let p_scale = u.f64()?;
    let phi = u.f64s(grid.num_nodes())?;
    Ok((grid, layer, p_scale, phi))
}

/// Raw voxel dump (one byte per voxel, x fastest) with a JSON sidecar.
pub fn write_voxels_raw(
    path: &Path,
    sidecar_path: &Path,
    voxels: &FineVoxelGrid,
    provenance_hash: &str,
) -> Result<()> {
    let mut f =
        BufWriter::new(File::create(path).map_err(Error::io(format!("create {}", path.display())))?);
    f.write_all(&voxels.data).map_err(Error::io("write"))?;
    f.flush().map_err(Error::io("flush"))?;
    let sidecar = serde_json::json!({
        "dims": [voxels.grid.nx, voxels.grid.ny, voxels.grid.nz],
        "spacing": voxels.grid.h,
        "origin": [0.0, 0.0, 0.0],
        "order": "x-fastest",
        "dtype": "u8",
        "provenance": provenance_hash,
    });
    std::fs::write(
        sidecar_path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(Error::io(format!("write {}", sidecar_path.display())))?;
    Ok(())
}

pub fn read_voxels_raw(path: &Path, sidecar_path: &Path) -> Result<FineVoxelGrid> {
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(sidecar_path)
            .map_err(Error::io(format!("read {}", sidecar_path.display())))?,
    )
    .map_err(|e| Error::BadFile {
        path: sidecar_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let dims = sidecar["dims"]
        .as_array()
        .ok_or_else(|| Error::BadFile {
            path: sidecar_path.display().to_string(),
            reason: "missing dims".into(),
        })?;
    let nx = dims[0].as_u64().unwrap_or(0) as usize;
    let ny = dims[1].as_u64().unwrap_or(0) as usize;
    let nz = dims[2].as_u64().unwrap_or(0) as usize;
    let h = sidecar["spacing"].as_f64().unwrap_or(1.0);
    let grid = Grid3::new(nx, ny, nz, h);
    let data = std::fs::read(path).map_err(Error::io(format!("read {}", path.display())))?;
    if data.len() != grid.num_elements() {
        return Err(Error::BadFile {
            path: path.display().to_string(),
            reason: format!(
                "expected {} voxels, file holds {}",
                grid.num_elements(),
                data.len()
            ),
        });
    }
    Ok(FineVoxelGrid { grid, data })
}

/// VTK XML ImageData with one unsigned-8-bit cell array in raw appended
/// encoding; readable by ParaView and the vtkio crate.
pub fn write_vti(path: &Path, voxels: &FineVoxelGrid) -> Result<()> {
    let g = &voxels.grid;
    let mut f =
        BufWriter::new(File::create(path).map_err(Error::io(format!("create {}", path.display())))?);
    let header = format!(
        concat!(
            "<?xml version=\"1.0\"?>\n",
            "<VTKFile type=\"ImageData\" version=\"1.0\" byte_order=\"LittleEndian\" header_type=\"UInt64\">\n",
            "  <ImageData WholeExtent=\"0 {nx} 0 {ny} 0 {nz}\" Origin=\"0 0 0\" Spacing=\"{h} {h} {h}\">\n",
            "    <Piece Extent=\"0 {nx} 0 {ny} 0 {nz}\">\n",
            "      <CellData Scalars=\"density\">\n",
            "        <DataArray type=\"UInt8\" Name=\"density\" NumberOfComponents=\"1\" format=\"appended\" offset=\"0\"/>\n",
            "      </CellData>\n",
            "    </Piece>\n",
            "  </ImageData>\n",
            "  <AppendedData encoding=\"raw\">\n_"
        ),
        nx = g.nx,
        ny = g.ny,
        nz = g.nz,
        h = g.h
    );
    f.write_all(header.as_bytes()).map_err(Error::io("write"))?;
    f.write_all(&(voxels.data.len() as u64).to_le_bytes())
        .map_err(Error::io("write"))?;
    f.write_all(&voxels.data).map_err(Error::io("write"))?;
    f.write_all(b"\n  </AppendedData>\n</VTKFile>\n")
        .map_err(Error::io("write"))?;
    f.flush().map_err(Error::io("flush"))?;
    Ok(())
}

/// SHA-256 of a file, hex-encoded; used to stamp exports with the design
/// they came from.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(Error::io(format!("read {}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combing::proper_rotations_24;
    use tempfile::tempdir;

    #[test]
    fn combed_round_trip_bit_identical() {
        let dir = tempdir().unwrap();
        let grid = Grid3::new(3, 2, 2, 0.5);
        let rots = proper_rotations_24();
        let n = grid.num_elements();
        let combed = CombedField {
            grid: grid.clone(),
            frames: (0..n).map(|e| rots[e % 24]).collect(),
            widths: (0..n).map(|e| [0.1 * e as f64 % 1.0, 0.3, 0.7]).collect(),
        };
        let rho: Vec<f64> = (0..n).map(|e| e as f64 / n as f64).collect();
        let path = dir.path().join("combed.bin");
        write_combed(&path, &combed, &rho).unwrap();
        let (back, rho_back) = read_combed(&path).unwrap();
        assert_eq!(back.grid, grid);
        for e in 0..n {
            assert_eq!(back.frames[e], combed.frames[e]);
            assert_eq!(back.widths[e], combed.widths[e]);
        }
        assert_eq!(rho, rho_back);

        // writing again produces identical bytes
        let path2 = dir.path().join("combed2.bin");
        write_combed(&path2, &combed, &rho).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn voxel_raw_round_trip() {
        let dir = tempdir().unwrap();
        let grid = Grid3::new(8, 4, 2, 0.25);
        let voxels = FineVoxelGrid {
            grid: grid.clone(),
            data: (0..grid.num_elements()).map(|e| (e % 2) as u8).collect(),
        };
        let raw = dir.path().join("fine.raw");
        let side = dir.path().join("fine.json");
        write_voxels_raw(&raw, &side, &voxels, "abc123").unwrap();
        let back = read_voxels_raw(&raw, &side).unwrap();
        assert_eq!(back.data, voxels.data);
        assert_eq!(back.grid.dims(), grid.dims());
    }

    #[test]
    fn vti_parses_with_external_reader() {
        let dir = tempdir().unwrap();
        let grid = Grid3::new(6, 5, 4, 0.1);
        let voxels = FineVoxelGrid {
            grid: grid.clone(),
            data: (0..grid.num_elements()).map(|e| (e % 2) as u8).collect(),
        };
        let path = dir.path().join("out.vti");
        write_vti(&path, &voxels).unwrap();
        let vtk = vtkio::Vtk::import(&path).expect("external reader parses the file");
        match vtk.data {
            vtkio::model::DataSet::ImageData { extent, pieces, .. } => {
                let dims = extent.into_dims();
                assert_eq!((dims[0], dims[1], dims[2]), (7, 6, 5)); // node dims
                assert_eq!(pieces.len(), 1);
            }
            other => panic!("unexpected dataset {other:?}"),
        }
    }

    #[test]
    fn empty_grid_vti_is_valid() {
        let dir = tempdir().unwrap();
        let grid = Grid3::new(4, 4, 4, 1.0);
        let voxels = FineVoxelGrid::empty(grid);
        let path = dir.path().join("zero.vti");
        write_vti(&path, &voxels).unwrap();
        assert!(vtkio::Vtk::import(&path).is_ok());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTMAGICxxxxyyyy").unwrap();
        assert!(matches!(
            read_combed(&path),
            Err(Error::BadFile { .. })
        ));
    }
}
