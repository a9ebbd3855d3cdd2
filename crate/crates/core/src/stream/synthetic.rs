//! Desk-scale synthetic streams with planted task relatedness.
//!
//! Every task draws its inputs from a class-conditional Gaussian living in a
//! low-dimensional latent subspace of the input space, plus isotropic noise:
//! `x = U (mu_c + s_l * e) + s_n * n`. Related tasks share the subspace `U`
//! and the class prototypes `mu_c` up to an orthogonal perturbation of
//! magnitude `perturbation`; conflicting tasks put their signal in a subspace
//! orthogonal to the source's and carry large nuisance variance along it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

use super::{Example, Input, Label, Splits, Stream, Task, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Relation {
    /// `target` reuses `source`'s labeling function up to a perturbation.
    Related { source: usize, target: usize, perturbation: f64 },
    /// `target`'s signal is orthogonal to `source`'s, and `source`'s signal
    /// directions carry nuisance variance in `target`.
    Conflicting { source: usize, target: usize, nuisance: f64 },
}

impl Relation {
    fn endpoints(&self) -> (usize, usize) {
        match *self {
            Relation::Related { source, target, .. } | Relation::Conflicting { source, target, .. } => (source, target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_tasks: usize,
    /// Class count per task; a single entry applies to all tasks.
    pub num_classes: Vec<usize>,
    pub input_dim: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Split sizes per task; a single entry applies to all tasks.
    pub sizes: Vec<SplitSizes>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    /// Indices of tasks that reappear (fresh samples, new id) after the
    /// original tasks, in list order.
    #[serde(default)]
    pub repeat: Vec<usize>,
    #[serde(default = "default_noise")]
    pub input_noise: f64,
    #[serde(default = "default_latent_noise")]
    pub latent_noise: f64,
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    #[serde(default)]
    pub domains: Vec<String>,
    /// Meta-train length; defaults to the whole stream.
    #[serde(default)]
    pub boundary: Option<usize>,
    pub seed: u64,
}

fn default_latent() -> usize {
    4
}
fn default_noise() -> f64 {
    1.0
}
fn default_latent_noise() -> f64 {
    0.6
}
fn default_separation() -> f64 {
    2.0
}

impl SyntheticSpec {
    pub fn new(num_tasks: usize, num_classes: usize, input_dim: usize, sizes: SplitSizes, seed: u64) -> Self {
        Self {
            num_tasks,
            num_classes: vec![num_classes],
            input_dim,
            latent_dim: default_latent(),
            sizes: vec![sizes],
            relations: Vec::new(),
            repeat: Vec::new(),
            input_noise: default_noise(),
            latent_noise: default_latent_noise(),
            class_separation: default_separation(),
            domains: Vec::new(),
            boundary: None,
            seed,
        }
    }

    fn per_task<T: Clone>(v: &[T], i: usize, what: &str) -> Result<T> {
        match v.len() {
            1 => Ok(v[0].clone()),
            _ => v.get(i).cloned().ok_or_else(|| Error::Config(format!("{what}: no entry for task {i}"))),
        }
    }

    pub fn classes_of(&self, i: usize) -> Result<usize> {
        Self::per_task(&self.num_classes, i, "num_classes")
    }

    pub fn sizes_of(&self, i: usize) -> Result<SplitSizes> {
        Self::per_task(&self.sizes, i, "sizes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_tasks == 0 {
            return bad("num_tasks must be positive".into());
        }
        if self.latent_dim == 0 || self.input_dim < 2 * self.latent_dim {
            return bad(format!("input_dim {} must be at least twice latent_dim {}", self.input_dim, self.latent_dim));
        }
        for (name, len) in [("num_classes", self.num_classes.len()), ("sizes", self.sizes.len())] {
            if len != 1 && len != self.num_tasks {
                return bad(format!("{name} has {len} entries for {} tasks", self.num_tasks));
            }
        }
        if !self.domains.is_empty() && self.domains.len() != 1 && self.domains.len() != self.num_tasks {
            return bad("domains must have 0, 1, or num_tasks entries".into());
        }
        for i in 0..self.num_tasks {
            let c = self.classes_of(i)?;
            if c < 2 {
                return bad(format!("task {i}: num_classes {c} < 2"));
            }
            let s = self.sizes_of(i)?;
            if s.train.min(s.val).min(s.test) < 2 * c {
                return bad(format!("task {i}: every split needs at least {} examples", 2 * c));
            }
        }
        let mut has_parent = vec![false; self.num_tasks];
        for r in &self.relations {
            let (s, t) = r.endpoints();
            if s >= self.num_tasks || t >= self.num_tasks {
                return bad(format!("relation {s}->{t} references a task outside 0..{}", self.num_tasks));
            }
            if s >= t {
                return bad(format!("relation {s}->{t}: source must precede target"));
            }
            if std::mem::replace(&mut has_parent[t], true) {
                return bad(format!("task {t} is the target of more than one relation"));
            }
            if let Relation::Related { perturbation, .. } = r {
                if self.classes_of(s)? != self.classes_of(t)? {
                    return bad(format!("related tasks {s} and {t} differ in class count"));
                }
                if !(*perturbation >= 0.0) {
                    return bad("perturbation must be non-negative".into());
                }
            }
        }
        if let Some(&r) = self.repeat.iter().find(|&&r| r >= self.num_tasks) {
            return bad(format!("repeat index {r} outside 0..{}", self.num_tasks));
        }
        let total = self.num_tasks + self.repeat.len();
        if let Some(b) = self.boundary {
            if b == 0 || b > total {
                return bad(format!("boundary {b} outside 1..={total}"));
            }
        }
        Ok(())
    }
}

/// Generative parameters of one task.
#[derive(Debug, Clone)]
struct Family {
    /// `latent_dim` orthonormal columns of length `input_dim`.
    basis: Vec<Vec<f64>>,
    prototypes: Vec<Vec<f64>>,
    nuisance: Option<(Vec<Vec<f64>>, f64)>,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram-Schmidt: orthonormalizes `v` against `against` (assumed orthonormal).
fn orthonormalize(mut v: Vec<f64>, against: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..2 {
        for u in against {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
    }
    let n = dot(&v, &v).sqrt();
    (n > 1e-9).then(|| v.into_iter().map(|x| x / n).collect())
}

fn random_basis(rng: &mut impl Rng, dim: usize, k: usize, avoid: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut against = avoid.to_vec();
        against.extend(out.iter().cloned());
        if let Some(v) = orthonormalize(gaussian_vec(rng, dim), &against) {
            out.push(v);
        }
    }
    out
}

fn random_prototypes(rng: &mut impl Rng, classes: usize, k: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let v = gaussian_vec(rng, k);
            let n = dot(&v, &v).sqrt().max(1e-9);
            v.into_iter().map(|x| x * scale / n).collect()
        })
        .collect()
}

impl Family {
    fn fresh(spec: &SyntheticSpec, classes: usize, rng: &mut impl Rng) -> Self {
        Family {
            basis: random_basis(rng, spec.input_dim, spec.latent_dim, &[]),
            prototypes: random_prototypes(rng, classes, spec.latent_dim, spec.class_separation),
            nuisance: None,
        }
    }

    fn perturbed(&self, spec: &SyntheticSpec, delta: f64, rng: &mut impl Rng) -> Self {
        // Perturb each basis column towards a direction orthogonal to the
        // whole source subspace, then re-orthonormalize.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.basis.len());
        for col in &self.basis {
            let dir = orthonormalize(gaussian_vec(rng, spec.input_dim), &self.basis).unwrap_or_else(|| col.clone());
            let moved: Vec<f64> = col.iter().zip(&dir).map(|(a, b)| a + delta * b).collect();
            basis.push(orthonormalize(moved, &basis).unwrap_or_else(|| col.clone()));
        }
        let prototypes = self
            .prototypes
            .iter()
            .map(|p| {
                let noise = gaussian_vec(rng, p.len());
                let n = dot(&noise, &noise).sqrt().max(1e-9);
                p.iter().zip(&noise).map(|(a, b)| a + delta * spec.class_separation * b / n).collect()
            })
            .collect();
        Family { basis, prototypes, nuisance: None }
    }

    fn conflicting(&self, spec: &SyntheticSpec, classes: usize, nuisance: f64, rng: &mut impl Rng) -> Self {
        Family {
            basis: random_basis(rng, spec.input_dim, spec.latent_dim, &self.basis),
            prototypes: random_prototypes(rng, classes, spec.latent_dim, spec.class_separation),
            nuisance: Some((self.basis.clone(), nuisance)),
        }
    }

    fn sample(&self, spec: &SyntheticSpec, class: usize, rng: &mut impl Rng) -> Vec<f32> {
        let mut x: Vec<f64> = gaussian_vec(rng, spec.input_dim).into_iter().map(|v| v * spec.input_noise).collect();
        for (j, col) in self.basis.iter().enumerate() {
            let z = self.prototypes[class][j] + spec.latent_noise * rng.sample::<f64, _>(StandardNormal);
            x.iter_mut().zip(col).for_each(|(xi, ci)| *xi += z * ci);
        }
        if let Some((dirs, scale)) = &self.nuisance {
            for col in dirs {
                let z = scale * rng.sample::<f64, _>(StandardNormal);
                x.iter_mut().zip(col).for_each(|(xi, ci)| *xi += z * ci);
            }
        }
        x.into_iter().map(|v| v as f32).collect()
    }

    fn split(&self, spec: &SyntheticSpec, classes: usize, n: usize, rng: &mut impl Rng) -> Vec<Example> {
        use rand::seq::SliceRandom;
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        labels.shuffle(rng);
        labels
            .into_iter()
            .map(|c| Example::new(Input::Features(self.sample(spec, c, rng)), Label::Class(c as u32)))
            .collect()
    }
}

fn build_task(
    spec: &SyntheticSpec,
    family: &Family,
    id: String,
    source_index: usize,
    year: i32,
    rng: &mut impl Rng,
) -> Result<Task> {
    let classes = spec.classes_of(source_index)?;
    let sizes = spec.sizes_of(source_index)?;
    let splits = Splits {
        train: family.split(spec, classes, sizes.train, rng),
        val: family.split(spec, classes, sizes.val, rng),
        test: family.split(spec, classes, sizes.test, rng),
    };
    let domain = match spec.domains.len() {
        0 => "synthetic".to_string(),
        1 => spec.domains[0].clone(),
        _ => spec.domains[source_index].clone(),
    };
    Task::new(id.clone(), id, year, domain, TaskKind::SingleLabel, classes, (1, spec.input_dim as u32), splits)
}

pub fn make_synthetic_stream(spec: &SyntheticSpec) -> Result<Stream> {
    spec.validate()?;
    let mut families: Vec<Family> = Vec::with_capacity(spec.num_tasks);
    for i in 0..spec.num_tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &["family", &i.to_string()]));
        let classes = spec.classes_of(i)?;
        let parent = spec.relations.iter().find(|r| r.endpoints().1 == i);
        let fam = match parent {
            None => Family::fresh(spec, classes, &mut rng),
            Some(Relation::Related { source, perturbation, .. }) => {
                families[*source].perturbed(spec, *perturbation, &mut rng)
            }
            Some(Relation::Conflicting { source, nuisance, .. }) => {
                families[*source].conflicting(spec, classes, *nuisance, &mut rng)
            }
        };
        families.push(fam);
    }

    let mut tasks = Vec::with_capacity(spec.num_tasks + spec.repeat.len());
    for (i, fam) in families.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &["data", &i.to_string()]));
        tasks.push(Arc::new(build_task(spec, fam, format!("syn{i:02}"), i, 2000 + i as i32, &mut rng)?));
    }
    for (k, &r) in spec.repeat.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &["repeat", &k.to_string()]));
        let year = 2000 + (spec.num_tasks + k) as i32;
        tasks.push(Arc::new(build_task(spec, &families[r], format!("syn{r:02}_rep{k}"), r, year, &mut rng)?));
    }
    let boundary = spec.boundary.unwrap_or(tasks.len());
    Stream::new(tasks, boundary)
}
