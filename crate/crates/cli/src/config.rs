use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tumorseg::ensemble::EnsembleConfig;
use tumorseg::metrics::LesionParams;
use tumorseg::nifti::NamingScheme;
use tumorseg::phantom::PhantomSpec;
use tumorseg::postprocess::FitGrid;
use tumorseg::radiomics::RadiomicsConfig;
use tumorseg::stratify::StratifyConfig;
use tumorseg::volume::Connectivity;

/// Everything a run can be configured with. Every section is optional in the
/// JSON file; missing fields take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub naming: NamingScheme,
    pub radiomics: RadiomicsConfig,
    pub stratify: StratifyConfig,
    pub ensemble: EnsembleConfig,
    pub postprocess: PostprocessSettings,
    pub metrics: LesionParams,
    pub phantom: PhantomSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessSettings {
    pub connectivity: Connectivity,
    pub grid: FitGrid,
}

impl Default for PostprocessSettings {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::TwentySix,
            grid: FitGrid::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig =
            serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radiomics.bin_width.is_finite() && self.radiomics.bin_width > 0.0) {
            bail!("radiomics.bin_width must be positive");
        }
        let s = &self.stratify;
        if !(s.variance_retention > 0.0 && s.variance_retention <= 1.0) {
            bail!("stratify.variance_retention must be in (0, 1]");
        }
        if s.k_min < 2 || s.k_min > s.k_max {
            bail!("stratify k range {}..={} is invalid", s.k_min, s.k_max);
        }
        if s.n_folds < 2 || s.restarts == 0 || s.max_iter == 0 {
            bail!("stratify needs n_folds >= 2, restarts >= 1 and max_iter >= 1");
        }
        if !(0.0..=1.0).contains(&self.ensemble.threshold) {
            bail!("ensemble.threshold must be in [0, 1]");
        }
        if !(self.metrics.penalty.is_finite() && self.metrics.penalty >= 0.0) {
            bail!("metrics.penalty must be finite and nonnegative");
        }
        let g = &self.postprocess.grid;
        if !g.thresholds.contains(&0) || !g.ratios.contains(&0.0) {
            bail!("postprocess grids must contain 0");
        }
        if g.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            bail!("postprocess ratio candidates must lie in [0, 1]");
        }
        self.phantom.validate()?;
        Ok(())
    }
}
