//! Seeded synthetic cohorts with a known four-cluster structure.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, CategoryTaxonomy, Diagnosis, FeatureMatrix};
use crate::error::{invalid, Error, Result};
use crate::util::{derive_seed, rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    None,
    /// Rolls the first latent axis onto a spiral in 3-D before projecting.
    SwissRollLift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Samples per label in HC, AD, MCI, Depr order.
    pub n_per_label: [usize; 4],
    pub n_features: usize,
    /// Features per category, in category order; sums to `n_features`.
    pub features_per_category: [usize; Category::COUNT],
    /// Categories whose features carry the cluster structure; the rest are noise.
    pub informative_categories: Vec<Category>,
    /// Side of the square whose corners are the class centers, in units of
    /// the within-class standard deviation.
    pub separation: f64,
    pub nonlinearity: Nonlinearity,
    pub subjects_per_sample_group: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_per_label: [100; 4],
            n_features: 18,
            features_per_category: [2; Category::COUNT],
            informative_categories: Category::ALL.to_vec(),
            separation: 10.0,
            nonlinearity: Nonlinearity::None,
            subjects_per_sample_group: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Reads a TOML spec; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_label.contains(&0) {
            return Err(invalid!("every label needs a positive sample count, got {:?}", self.n_per_label));
        }
        let planned: usize = self.features_per_category.iter().sum();
        if planned != self.n_features || self.n_features == 0 {
            return Err(invalid!(
                "feature plan covers {planned} features but n_features is {}",
                self.n_features
            ));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(invalid!("separation must be a non-negative number"));
        }
        let g = self.subjects_per_sample_group;
        if g == 0 || self.n_per_label.iter().any(|n| n % g != 0) {
            return Err(invalid!("each label count must be a positive multiple of subjects_per_sample_group ({g})"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub matrix: FeatureMatrix,
    pub taxonomy: CategoryTaxonomy,
    /// Ground-truth cluster per sample (the label index).
    pub truth: Vec<usize>,
    /// Latent class centers, HC, AD, MCI, Depr.
    pub centers: [[f64; 2]; 4],
}

impl SyntheticCohort {
    /// Writes `matrix.csv`, `categories.json` and `truth.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.matrix.write_csv(&dir.join("matrix.csv"))?;
        self.taxonomy.write_json(&dir.join("categories.json"))?;
        let path = dir.join("truth.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["sample_id", "cluster"])?;
        for (id, c) in self.matrix.sample_ids().iter().zip(&self.truth) {
            w.write_record([id.as_str(), &c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

/// An m x m orthogonal matrix from Gram-Schmidt on Gaussian columns.
fn random_orthogonal(m: usize, g: &mut Rng) -> DMatrix<f64> {
    loop {
        let mut q: DMatrix<f64> = DMatrix::from_fn(m, m, |_, _| StandardNormal.sample(g));
        let mut ok = true;
        for c in 0..m {
            for prev in 0..c {
                let dot = q.column(c).dot(&q.column(prev));
                let p = q.column(prev).into_owned();
                q.column_mut(c).axpy(-dot, &p, 1.0);
            }
            let norm = q.column(c).norm();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(c).unscale_mut(norm);
        }
        if ok {
            return q;
        }
    }
}

/// Maps latent (u, v) onto a swiss roll; u is the rolled axis, spanning
/// one and a half turns over the range of the class centers.
pub fn swiss_roll_lift(u: f64, v: f64, separation: f64) -> [f64; 3] {
    let t = 1.5 * std::f64::consts::PI + 3.0 * std::f64::consts::PI * (u + 3.0) / (separation + 6.0);
    [t * t.cos(), v, t * t.sin()]
}

pub fn generate_cohort(spec: &SyntheticSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let s = spec.separation;
    let centers = [[0.0, 0.0], [s, 0.0], [0.0, s], [s, s]];
    let n: usize = spec.n_per_label.iter().sum();

    let mut latent_rng = rng(derive_seed(spec.seed, &[0]));
    let mut labels = Vec::with_capacity(n);
    let mut sample_ids = Vec::with_capacity(n);
    let mut subject_ids = Vec::with_capacity(n);
    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (k, (&label, &count)) in Diagnosis::ALL.iter().zip(&spec.n_per_label).enumerate() {
        for i in 0..count {
            let e1: f64 = StandardNormal.sample(&mut latent_rng);
            let e2: f64 = StandardNormal.sample(&mut latent_rng);
            let (u, v) = (centers[k][0] + e1, centers[k][1] + e2);
            latent.push(match spec.nonlinearity {
                Nonlinearity::None => vec![u, v],
                Nonlinearity::SwissRollLift => swiss_roll_lift(u, v, s).to_vec(),
            });
            labels.push(label);
            sample_ids.push(format!("{label}_{i:04}"));
            subject_ids.push(format!("{label}_subj{:04}", i / spec.subjects_per_sample_group));
        }
    }

    let mut names = Vec::with_capacity(spec.n_features);
    let mut informative = Vec::with_capacity(spec.n_features);
    let mut mapping = BTreeMap::new();
    for (cat, &count) in Category::ALL.iter().zip(&spec.features_per_category) {
        let slug = cat.as_str().replace(' ', "_");
        for j in 0..count {
            let name = format!("{slug}_{j:02}");
            mapping.insert(name.clone(), *cat);
            names.push(name);
            informative.push(spec.informative_categories.contains(cat));
        }
    }

    let n_inf = informative.iter().filter(|&&b| b).count();
    let ldim = latent.first().map_or(2, Vec::len);
    let mut frame_rng = rng(derive_seed(spec.seed, &[1]));
    let q = random_orthogonal(n_inf.max(ldim), &mut frame_rng);
    let mut noise_rng = rng(derive_seed(spec.seed, &[2]));
    let mut values = DMatrix::zeros(n, spec.n_features);
    let mut inf_index = 0;
    for (j, &is_inf) in informative.iter().enumerate() {
        for i in 0..n {
            values[(i, j)] = if is_inf {
                (0..ldim).map(|c| q[(inf_index, c)] * latent[i][c]).sum()
            } else {
                StandardNormal.sample(&mut noise_rng)
            };
        }
        if is_inf {
            inf_index += 1;
        }
    }

    let matrix = FeatureMatrix::new(
        sample_ids,
        subject_ids,
        vec!["synthetic".to_string(); n],
        labels.clone(),
        names,
        values,
    )?;
    Ok(SyntheticCohort {
        matrix,
        taxonomy: CategoryTaxonomy::new(mapping),
        truth: labels.iter().map(|l| l.index()).collect(),
        centers,
    })
}
