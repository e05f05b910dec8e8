//! Problem presets, end-to-end orchestration, configuration and export.
//!
//! Each stage reads its input from the previous stage's checkpoint file and
//! writes its own, so stages are independently re-runnable and a full
//! pipeline run is just the stages in sequence.

pub mod io;
pub mod presets;

pub use presets::{load_preset, ProblemPreset, PRESET_NAMES};

use crate::combing::{
    comb_field, count_misaligned_faces, layer_contributions, proper_frame_from_angles,
    single_scale_widths, CombedField,
};
use crate::dehomog::{
    self, active_domain, combine_layers, element_to_nodal, periodicity_scale, project_layer,
    sample_to_voxels, solve_mapping, upsample, FineVoxelGrid, MappingConfig,
};
use crate::error::{Error, Result};
use crate::fem::MgcgConfig;
use crate::grid::Grid3;
use crate::material::{volume_fraction, EulerAngles, LayerWidths, MaterialConstants};
use crate::optimize::{MmaState, OptimizationConfig, Optimizer, OptimizerState};
use crate::postprocess::{self, CleanupConfig, FineProblem};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshProfile {
    /// Fine mesh at 20x the coarse mesh per axis.
    Paper,
    /// Fine mesh at 8x the coarse mesh per axis (reduced memory/runtime).
    Desk,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preset: String,
    pub coarse_dims: (usize, usize, usize),
    pub vmax: f64,
    pub e_plus: f64,
    /// compliant-phase modulus during optimization, relative to `e_plus`
    pub e_minus_factor: f64,
    /// void modulus for fine verification, relative to `e_plus`
    pub e_minus_fine_factor: f64,
    pub nu: f64,
    /// average unit-cell spacing in fine-voxel units
    pub epsilon_hf: f64,
    /// minimum feature size in fine-voxel units (0 disables enforcement)
    pub fmin_hf: f64,
    pub intermediate_factor: usize,
    pub profile: MeshProfile,
    /// explicit fine-mesh refinement override (per axis, relative to coarse)
    pub fine_factor: Option<usize>,
    pub gamma_phi: f64,
    /// design iterations per continuation step (8 steps total)
    pub iterations_per_step: usize,
    pub solver_tol: f64,
    pub verification_tol: f64,
    pub run_post: bool,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preset: "electrical_mast".into(),
            coarse_dims: (24, 24, 72),
            vmax: 0.1,
            e_plus: 1.0,
            e_minus_factor: 1e-3,
            e_minus_fine_factor: 1e-9,
            nu: 0.3,
            epsilon_hf: 24.0,
            fmin_hf: 0.0,
            intermediate_factor: 4,
            profile: MeshProfile::Desk,
            fine_factor: None,
            gamma_phi: 100.0,
            iterations_per_step: 50,
            solver_tol: 1e-8,
            verification_tol: 1e-9,
            run_post: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn material(&self) -> Result<MaterialConstants> {
        MaterialConstants::new(self.e_plus, self.e_minus_factor * self.e_plus, self.nu)
    }

    pub fn effective_fine_factor(&self) -> usize {
        if let Some(f) = self.fine_factor {
            return f;
        }
        match self.profile {
            MeshProfile::Paper => 20,
            MeshProfile::Desk => 8,
        }
    }

    pub fn fine_dims(&self) -> (usize, usize, usize) {
        let f = self.effective_fine_factor();
        (
            self.coarse_dims.0 * f,
            self.coarse_dims.1 * f,
            self.coarse_dims.2 * f,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.vmax) || self.vmax == 0.0 {
            return Err(Error::Config(format!("vmax must be in (0,1): {}", self.vmax)));
        }
        if self.fmin_hf > 0.0 && self.epsilon_hf <= self.fmin_hf {
            return Err(Error::Config(format!(
                "epsilon ({}) must exceed fmin ({})",
                self.epsilon_hf, self.fmin_hf
            )));
        }
        let factor = self.effective_fine_factor();
        if self.profile == MeshProfile::Desk && !(8..=12).contains(&factor) {
            log::warn!("desk profile normally refines 8-12x per axis; using {factor}x");
        }
        if factor < 20 {
            log::warn!(
                "fine mesh refinement {factor}x is below the reference 20x profile; \
                 unit-cell spacing is fixed in voxel units and therefore physically larger"
            );
        }
        let (fx, fy, fz) = self.fine_dims();
        let voxels = fx * fy * fz;
        if self.profile == MeshProfile::Desk && voxels > 24_000_000 {
            return Err(Error::Config(format!(
                "desk profile caps the fine mesh at 24M voxels; requested {voxels}"
            )));
        }
        Ok(())
    }

    /// File locations of every stage product.
    pub fn paths(&self) -> StagePaths {
        let d = &self.out_dir;
        StagePaths {
            design: d.join("design.ckpt"),
            runlog: d.join("runlog.json"),
            combed: d.join("combed.bin"),
            phi: [d.join("phi_1.bin"), d.join("phi_2.bin"), d.join("phi_3.bin")],
            fine_raw: d.join("fine.raw"),
            fine_json: d.join("fine.json"),
            fine_vti: d.join("fine.vti"),
            post_raw: d.join("post.raw"),
            post_json: d.join("post.json"),
            post_vti: d.join("post.vti"),
            metrics: d.join("metrics.json"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StagePaths {
    pub design: PathBuf,
    pub runlog: PathBuf,
    pub combed: PathBuf,
    pub phi: [PathBuf; 3],
    pub fine_raw: PathBuf,
    pub fine_json: PathBuf,
    pub fine_vti: PathBuf,
    pub post_raw: PathBuf,
    pub post_json: PathBuf,
    pub post_vti: PathBuf,
    pub metrics: PathBuf,
}

/// The metrics report accumulated across stages (the columns of the result
/// tables: volume fraction, compliance and stiffness-per-weight before and
/// after post-processing).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Metrics {
    pub coarse_compliance: Option<f64>,
    pub coarse_volume_fraction: Option<f64>,
    pub v_f_phi: Option<f64>,
    pub j_phi: Option<f64>,
    pub s_phi: Option<f64>,
    pub v_f_post: Option<f64>,
    pub j_post: Option<f64>,
    pub s_post: Option<f64>,
    pub cleanup_iterations: Option<usize>,
    pub cleanup_converged: Option<bool>,
    pub misaligned_faces: Option<usize>,
    pub wall_seconds: BTreeMap<String, f64>,
}

impl Metrics {
    fn load(path: &Path) -> Metrics {
        std::fs::read_to_string(path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default()
    }

    fn store(&self, path: &Path) -> Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("metrics serialize"),
        )
        .map_err(Error::io(format!("write {}", path.display())))
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.out_dir)
            .map_err(Error::io(format!("create {}", config.out_dir.display())))?;
        Ok(Self { config })
    }

    fn preset(&self) -> Result<ProblemPreset> {
        load_preset(
            &self.config.preset,
            self.config.coarse_dims,
            self.config.material()?,
        )
    }

    fn optimization_config(&self) -> OptimizationConfig {
        let mut schedule = crate::fields::ContinuationSchedule::standard();
        for s in schedule.steps.iter_mut() {
            s.iterations = self.config.iterations_per_step;
        }
        OptimizationConfig {
            vmax_fraction: self.config.vmax,
            schedule,
            solver: MgcgConfig {
                tol: self.config.solver_tol,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn optimizer(&self) -> Result<Optimizer> {
        let preset = self.preset()?;
        Optimizer::new(preset.problem, self.optimization_config())
    }

    /// Homogenization-based optimization, checkpointed at every continuation
    /// step; resumes automatically from an unfinished checkpoint.
    pub fn run_optimize(&self) -> Result<()> {
        let t0 = Instant::now();
        let paths = self.config.paths();
        let mut opt = self.optimizer()?;
        let total = opt.config.schedule.total_iterations();

        let resume = if paths.design.exists() {
            let (grid, state) =
                io::read_design_checkpoint(&paths.design, self.mma_template(&opt))?;
            if grid != opt.problem.grid {
                return Err(Error::BadFile {
                    path: paths.design.display().to_string(),
                    reason: "checkpoint grid differs from the configured problem".into(),
                });
            }
            if state.iteration >= total {
                log::info!("optimization already complete ({} iterations)", total);
                return Ok(());
            }
            log::info!("resuming optimization at iteration {}", state.iteration);
            Some(state)
        } else {
            None
        };

        let grid = opt.problem.grid.clone();
        let ckpt_every = self.config.iterations_per_step;
        let design_path = paths.design.clone();
        let (result, state) = opt.run_with(resume, |st| {
            if st.iteration % ckpt_every == 0 {
                io::write_design_checkpoint(&design_path, &grid, st)?;
            }
            Ok(())
        })?;
        io::write_design_checkpoint(&paths.design, &grid, &state)?;
        std::fs::write(
            &paths.runlog,
            serde_json::to_string_pretty(&result.log).expect("runlog serialize"),
        )
        .map_err(Error::io("write runlog"))?;

        let mut metrics = Metrics::load(&paths.metrics);
        metrics.coarse_compliance = Some(result.compliance);
        metrics.coarse_volume_fraction = Some(result.volume_fraction);
        metrics
            .wall_seconds
            .insert("optimize".into(), t0.elapsed().as_secs_f64());
        metrics.store(&paths.metrics)?;
        log::info!(
            "optimization done: J^c = {:.4}, volume = {:.4}",
            result.compliance,
            result.volume_fraction
        );
        Ok(())
    }

    fn mma_template(&self, opt: &Optimizer) -> MmaState {
        let n = opt.problem.grid.num_elements();
        let tb = opt.config.theta_bound;
        let xmin: Vec<f64> = [0.0, 0.0, 0.0, -tb, -tb, -tb]
            .iter()
            .flat_map(|&b| std::iter::repeat(b).take(n))
            .collect();
        let xmax: Vec<f64> = [1.0, 1.0, 1.0, tb, tb, tb]
            .iter()
            .flat_map(|&b| std::iter::repeat(b).take(n))
            .collect();
        let moves: Vec<f64> = [opt.config.mu_move; 3]
            .iter()
            .chain([opt.config.theta_move; 3].iter())
            .flat_map(|&m| std::iter::repeat(m).take(n))
            .collect();
        MmaState::new(xmin, xmax, moves, 1)
    }

    /// Load the optimized design and derive the physical fields the
    /// de-homogenization consumes.
    fn load_final_design(&self) -> Result<(Optimizer, OptimizerState)> {
        let paths = self.config.paths();
        let opt = self.optimizer()?;
        let (grid, state) = io::read_design_checkpoint(&paths.design, self.mma_template(&opt))?;
        if grid != opt.problem.grid {
            return Err(Error::BadFile {
                path: paths.design.display().to_string(),
                reason: "checkpoint grid differs from the configured problem".into(),
            });
        }
        Ok((opt, state))
    }

    /// Comb the optimized frame field into three 1-direction fields with
    /// single-scale widths.
    pub fn run_comb(&self) -> Result<()> {
        let t0 = Instant::now();
        let paths = self.config.paths();
        let (opt, state) = self.load_final_design()?;
        let step = opt.config.schedule.last();
        let (_, mu_bar) = opt.physical_widths(&state.design, step);
        let grid = opt.problem.grid.clone();
        let n = grid.num_elements();

        let mut frames = Vec::with_capacity(n);
        let mut widths = Vec::with_capacity(n);
        let mut rho = Vec::with_capacity(n);
        for e in 0..n {
            let angles = EulerAngles::new(
                state.design.theta[0][e],
                state.design.theta[1][e],
                state.design.theta[2][e],
            );
            frames.push(proper_frame_from_angles(&angles));
            let w = [mu_bar[0][e], mu_bar[1][e], mu_bar[2][e]];
            let r = volume_fraction(&LayerWidths::new(w[0], w[1], w[2]));
            let p = layer_contributions(&w, r);
            let (_, ss) = single_scale_widths(&p, r);
            widths.push(ss);
            rho.push(r);
        }
        let (combed, report) = comb_field(&grid, &frames, &widths, &rho)?;
        let misaligned = count_misaligned_faces(&combed, &rho);
        if misaligned > 0 {
            log::warn!(
                "{misaligned} mid-density faces keep a relative rotation above pi/4; \
                 a direction-field singularity may cross the structure"
            );
        }
        io::write_combed(&paths.combed, &combed, &rho)?;
        let mut metrics = Metrics::load(&paths.metrics);
        metrics.misaligned_faces = Some(misaligned);
        metrics
            .wall_seconds
            .insert("comb".into(), t0.elapsed().as_secs_f64());
        metrics.store(&paths.metrics)?;
        log::info!(
            "combing done (seed element {}, {} misaligned faces)",
            report.seed,
            misaligned
        );
        Ok(())
    }

    /// Solve the three mapping fields on the intermediate mesh and fix their
    /// periodicity scalings.
    pub fn run_map(&self) -> Result<()> {
        let t0 = Instant::now();
        let paths = self.config.paths();
        let (combed, rho) = io::read_combed(&paths.combed)?;
        let inter = upsample(&combed, &rho, self.config.intermediate_factor);
        let mask = active_domain(&inter);
        let cfg = MappingConfig {
            gamma_phi: self.config.gamma_phi,
            solver: MgcgConfig {
                tol: self.config.solver_tol,
                ..Default::default()
            },
        };
        let fine = self.fine_grid(&combed.grid);
        let epsilon = self.config.epsilon_hf * fine.h;
        for layer in 0..3 {
            let phi = solve_mapping(&inter, &mask, layer, &cfg)?;
            let p = periodicity_scale(&inter.grid, &phi, &mask.active[layer], epsilon);
            io::write_phi(&paths.phi[layer], &inter.grid, layer, p, &phi)?;
            log::info!("mapping field {} solved (P = {:.3})", layer + 1, p);
        }
        let mut metrics = Metrics::load(&paths.metrics);
        metrics
            .wall_seconds
            .insert("map".into(), t0.elapsed().as_secs_f64());
        metrics.store(&paths.metrics)?;
        Ok(())
    }

    fn fine_grid(&self, coarse: &Grid3) -> Grid3 {
        coarse.refined(self.effective_fine_factor_checked(coarse))
    }

    fn effective_fine_factor_checked(&self, _coarse: &Grid3) -> usize {
        self.config.effective_fine_factor()
    }

    /// Project the implicit geometry onto the fine voxel grid, enforcing the
    /// minimum feature size, and export it.
    pub fn run_project(&self) -> Result<()> {
        let t0 = Instant::now();
        let paths = self.config.paths();
        let (combed, rho) = io::read_combed(&paths.combed)?;
        let inter = upsample(&combed, &rho, self.config.intermediate_factor);
        let fine = self.fine_grid(&combed.grid);

        let mut layers: Vec<Vec<u8>> = Vec::with_capacity(3);
        for layer in 0..3 {
            let (phi_grid, stored_layer, p_scale, phi) = io::read_phi(&paths.phi[layer])?;
            if stored_layer != layer || phi_grid != inter.grid {
                return Err(Error::BadFile {
                    path: paths.phi[layer].display().to_string(),
                    reason: "mapping checkpoint does not match the combed field".into(),
                });
            }
            // widths to voxels via node averaging + tri-linear sampling
            let w_elem: Vec<f64> = (0..inter.grid.num_elements())
                .map(|e| inter.widths[e][layer])
                .collect();
            let w_nodal = element_to_nodal(&inter.grid, &w_elem);
            let mut w_fine = sample_to_voxels(&inter.grid, &w_nodal, &fine);
            if self.config.fmin_hf > 0.0 {
                let grad = dehomog::gradient_norm_at_voxels(&inter.grid, &phi, &fine);
                let spacing = postprocess::local_spacing(&grad, p_scale);
                let fmin = self.config.fmin_hf * fine.h;
                postprocess::enforce_feature_size(&mut w_fine, &spacing, fmin);
            }
            layers.push(project_layer(&inter.grid, &phi, p_scale, &fine, &w_fine));
        }
        let mut voxels = combine_layers(&fine, &layers);
        drop(layers);

        // stamp the passive masks of the preset, instantiated at fine dims
        let fine_preset = load_preset(
            &self.config.preset,
            fine.dims(),
            self.config.material()?,
        )?;
        voxels
            .data
            .iter_mut()
            .zip(fine_preset.problem.passive_solid.iter())
            .zip(fine_preset.problem.passive_void.iter())
            .for_each(|((d, &s), &v)| {
                if s {
                    *d = 1;
                } else if v {
                    *d = 0;
                }
            });

        let hash = io::file_sha256(&paths.design)?;
        io::write_voxels_raw(&paths.fine_raw, &paths.fine_json, &voxels, &hash)?;
        io::write_vti(&paths.fine_vti, &voxels)?;

        let mut metrics = Metrics::load(&paths.metrics);
        metrics.v_f_phi = Some(voxels.solid_fraction());
        metrics
            .wall_seconds
            .insert("project".into(), t0.elapsed().as_secs_f64());
        metrics.store(&paths.metrics)?;
        log::info!(
            "projection done: {} voxels, V_f = {:.4}",
            voxels.data.len(),
            voxels.solid_fraction()
        );
        Ok(())
    }

    /// Fine verification problem matching the projected grid.
    pub fn fine_problem(&self, fine: &Grid3) -> Result<FineProblem> {
        let preset = load_preset(&self.config.preset, fine.dims(), self.config.material()?)?;
        Ok(FineProblem {
            grid: fine.clone(),
            boundary: preset.problem.boundary,
            stiff_tensor: *crate::material::ElasticityTensor::isotropic(
                self.config.e_plus,
                self.config.nu,
            )
            .voigt(),
            void_scale: self.config.e_minus_fine_factor,
            solver: MgcgConfig {
                tol: self.config.verification_tol,
                ..Default::default()
            },
        })
    }

    /// Fine-mesh verification and cleanup: report the de-homogenized
    /// performance, then strip non-load-carrying material.
    pub fn run_post(&self) -> Result<postprocess::CleanupReport> {
        let t0 = Instant::now();
        let paths = self.config.paths();
        let mut voxels = io::read_voxels_raw(&paths.fine_raw, &paths.fine_json)?;
        let problem = self.fine_problem(&voxels.grid)?;

        let mut warm = vec![0.0; voxels.grid.num_nodes() * 3];
        let j_phi = problem.solve(&voxels.data, &mut warm)?;
        let v_phi = voxels.solid_fraction();
        drop(warm);
        let mut metrics = Metrics::load(&paths.metrics);
        metrics.j_phi = Some(j_phi);
        metrics.v_f_phi = Some(v_phi);
        metrics.s_phi = Some(j_phi * v_phi * 100.0);
        metrics.store(&paths.metrics)?;
        log::info!("fine verification: J = {j_phi:.4} at V_f = {v_phi:.4}");

        let cleanup = CleanupConfig {
            structuring_radius: self.config.fmin_hf / 2.0,
            ..Default::default()
        };
        let report = postprocess::energy_cleanup(&mut voxels, &problem, &cleanup)?;
        let hash = io::file_sha256(&paths.design)?;
        io::write_voxels_raw(&paths.post_raw, &paths.post_json, &voxels, &hash)?;
        io::write_vti(&paths.post_vti, &voxels)?;

        let v_post = voxels.solid_fraction();
        metrics.v_f_post = Some(v_post);
        metrics.j_post = Some(report.compliance);
        metrics.s_post = Some(report.compliance * v_post * 100.0);
        metrics.cleanup_iterations = Some(report.iterations);
        metrics.cleanup_converged = Some(report.converged);
        metrics
            .wall_seconds
            .insert("post".into(), t0.elapsed().as_secs_f64());
        metrics.store(&paths.metrics)?;
        log::info!(
            "cleanup done in {} iterations: J = {:.4} at V_f = {:.4}",
            report.iterations,
            report.compliance,
            v_post
        );
        Ok(report)
    }

    /// The full sequence; post-processing only when configured.
    pub fn run_all(&self) -> Result<Metrics> {
        self.run_optimize().map_err(|e| e.in_stage("optimize"))?;
        self.run_comb().map_err(|e| e.in_stage("comb"))?;
        self.run_map().map_err(|e| e.in_stage("map"))?;
        self.run_project().map_err(|e| e.in_stage("project"))?;
        if self.config.run_post {
            self.run_post().map_err(|e| e.in_stage("post"))?;
        }
        Ok(Metrics::load(&self.config.paths().metrics))
    }
}

/// Convenience wrapper: build the combed field for a finished design (used
/// by the comb stage and by tests that bypass file IO).
pub fn comb_from_result(
    opt: &Optimizer,
    design: &crate::optimize::DesignVector,
) -> Result<(CombedField, Vec<f64>)> {
    let step = opt.config.schedule.last();
    let (_, mu_bar) = opt.physical_widths(design, step);
    let grid = opt.problem.grid.clone();
    let n = grid.num_elements();
    let mut frames = Vec::with_capacity(n);
    let mut widths = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for e in 0..n {
        let angles = EulerAngles::new(
            design.theta[0][e],
            design.theta[1][e],
            design.theta[2][e],
        );
        frames.push(proper_frame_from_angles(&angles));
        let w = [mu_bar[0][e], mu_bar[1][e], mu_bar[2][e]];
        let r = volume_fraction(&LayerWidths::new(w[0], w[1], w[2]));
        let p = layer_contributions(&w, r);
        let (_, ss) = single_scale_widths(&p, r);
        widths.push(ss);
        rho.push(r);
    }
    let (combed, _) = comb_field(&grid, &frames, &widths, &rho)?;
    Ok((combed, rho))
}

/// Projection without file IO for in-process use: returns the voxel design
/// produced exactly as the `project` stage would.
pub fn project_in_memory(
    config: &PipelineConfig,
    combed: &CombedField,
    rho: &[f64],
    phis: &[(f64, Vec<f64>)],
) -> Result<FineVoxelGrid> {
    let inter = upsample(combed, rho, config.intermediate_factor);
    let fine = combed.grid.refined(config.effective_fine_factor());
    let mut layers = Vec::with_capacity(3);
    for layer in 0..3 {
        let (p_scale, phi) = &phis[layer];
        let w_elem: Vec<f64> = (0..inter.grid.num_elements())
            .map(|e| inter.widths[e][layer])
            .collect();
        let w_nodal = element_to_nodal(&inter.grid, &w_elem);
        let mut w_fine = sample_to_voxels(&inter.grid, &w_nodal, &fine);
        if config.fmin_hf > 0.0 {
            let grad = dehomog::gradient_norm_at_voxels(&inter.grid, phi, &fine);
            let spacing = postprocess::local_spacing(&grad, *p_scale);
            postprocess::enforce_feature_size(&mut w_fine, &spacing, config.fmin_hf * fine.h);
        }
        layers.push(project_layer(&inter.grid, phi, *p_scale, &fine, &w_fine));
    }
    let mut voxels = combine_layers(&fine, &layers);
    let fine_preset = load_preset(&config.preset, fine.dims(), config.material()?)?;
    voxels
        .data
        .iter_mut()
        .zip(fine_preset.problem.passive_solid.iter())
        .zip(fine_preset.problem.passive_void.iter())
        .for_each(|((d, &s), &v)| {
            if s {
                *d = 1;
            } else if v {
                *d = 0;
            }
        });
    Ok(voxels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::default();
        c.out_dir = std::env::temp_dir().join("dh3d-cfg-test");
        assert!(c.validate().is_ok());
        c.epsilon_hf = 2.0;
        c.fmin_hf = 4.0;
        assert!(c.validate().is_err());
        c.fmin_hf = 0.0;
        c.vmax = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fine_dims_follow_profile() {
        let mut c = PipelineConfig::default();
        c.coarse_dims = (24, 24, 72);
        c.profile = MeshProfile::Desk;
        assert_eq!(c.fine_dims(), (192, 192, 576));
        c.profile = MeshProfile::Paper;
        assert_eq!(c.fine_dims(), (480, 480, 1440));
        c.fine_factor = Some(16);
        assert_eq!(c.fine_dims(), (384, 384, 1152));
    }
}
