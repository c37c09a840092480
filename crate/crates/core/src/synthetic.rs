//! Seeded synthetic datasets.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::data::Dataset;
use crate::matrix::Matrix;
use crate::rng::{self, SimRng, Stream};
use crate::{Error, Result};

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn split(x: Matrix, y: Vec<f64>, n_train: usize) -> Result<Dataset> {
    let train_rows: Vec<usize> = (0..n_train).collect();
    let test_rows: Vec<usize> = (n_train..x.rows()).collect();
    Dataset::new(
        x.select_rows(&train_rows),
        y[..n_train].to_vec(),
        x.select_rows(&test_rows),
        y[n_train..].to_vec(),
    )
}

/// Standard-normal features labelled by a random hyperplane through the
/// origin; each label is flipped with probability `label_noise`.
pub fn linear_teacher(n_train: usize, n_test: usize, n_features: usize, label_noise: f64, seed: u64) -> Result<Dataset> {
    if n_features == 0 || n_train == 0 {
        return Err(Error::Config("linear teacher needs at least one feature and one training row".into()));
    }
    if !(0.0..=0.5).contains(&label_noise) {
        return Err(Error::Config(format!("label_noise {label_noise} must lie in [0, 0.5]")));
    }
    let mut rng = rng::stream(seed, Stream::Synthetic, 0);
    let teacher: Vec<f64> = (0..n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
    let total = n_train + n_test;
    let x = gaussian_matrix(total, n_features, &mut rng);
    let y = x
        .row_iter()
        .map(|row| {
            let s: f64 = row.iter().zip(&teacher).map(|(a, b)| a * b).sum();
            let label = if s > 0.0 { 1.0 } else { 0.0 };
            if rng.gen::<f64>() < label_noise {
                1.0 - label
            } else {
                label
            }
        })
        .collect();
    split(x, y, n_train)
}

/// Shape and generation parameters of a Madelon-style problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MadelonShape {
    pub n_train: usize,
    pub n_test: usize,
    pub n_informative: usize,
    pub n_redundant: usize,
    pub n_probes: usize,
    pub clusters_per_class: usize,
    /// Half the hypercube side length.
    pub class_sep: f64,
    pub flip_fraction: f64,
}

impl Default for MadelonShape {
    /// 2000 train / 600 test rows, 5 informative + 15 redundant + 480 probe features.
    fn default() -> Self {
        MadelonShape {
            n_train: 2000,
            n_test: 600,
            n_informative: 5,
            n_redundant: 15,
            n_probes: 480,
            clusters_per_class: 16,
            class_sep: 1.0,
            flip_fraction: 0.01,
        }
    }
}

impl MadelonShape {
    pub fn n_features(&self) -> usize {
        self.n_informative + self.n_redundant + self.n_probes
    }
}

/// Madelon-style XOR-of-clusters problem: Gaussian clusters on the vertices
/// of an informative hypercube, each class owning half the vertices, plus
/// random linear combinations of the informative features and pure-noise
/// probes. Rows and columns are shuffled and a small fraction of labels flipped.
pub fn madelon_like(shape: &MadelonShape, seed: u64) -> Result<Dataset> {
    let k = shape.n_informative;
    let clusters = 2 * shape.clusters_per_class;
    if k == 0 || k >= usize::BITS as usize || clusters > (1usize << k) {
        return Err(Error::Config(format!("{clusters} clusters do not fit on a {k}-dimensional hypercube")));
    }
    let mut rng = rng::stream(seed, Stream::Synthetic, 1);
    let total = shape.n_train + shape.n_test;
    let n = shape.n_features();
    let unif = Uniform::new_inclusive(-1.0, 1.0);

    let mut vertices: Vec<usize> = (0..1usize << k).collect();
    vertices.shuffle(&mut rng);
    vertices.truncate(clusters);

    let mut x = Matrix::zeros(total, n);
    let mut y = vec![0.0; total];
    let mut row = 0;
    for (c, &vertex) in vertices.iter().enumerate() {
        let label = if c < shape.clusters_per_class { 0.0 } else { 1.0 };
        let size = total / clusters + usize::from(c < total % clusters);
        let mixing: Vec<f64> = (0..k * k).map(|_| unif.sample(&mut rng)).collect();
        let centroid: Vec<f64> = (0..k)
            .map(|b| if vertex >> b & 1 == 1 { shape.class_sep } else { -shape.class_sep })
            .collect();
        for _ in 0..size {
            let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let out = x.row_mut(row);
            for j in 0..k {
                out[j] = centroid[j] + (0..k).map(|i| z[i] * mixing[i * k + j]).sum::<f64>();
            }
            y[row] = label;
            row += 1;
        }
    }

    let combos: Vec<f64> = (0..k * shape.n_redundant).map(|_| unif.sample(&mut rng)).collect();
    for i in 0..total {
        let r = x.row_mut(i);
        for j in 0..shape.n_redundant {
            r[k + j] = (0..k).map(|a| r[a] * combos[a * shape.n_redundant + j]).sum();
        }
        for v in &mut r[k + shape.n_redundant..n] {
            *v = StandardNormal.sample(&mut rng);
        }
    }

    for label in &mut y {
        if rng.gen::<f64>() < shape.flip_fraction {
            *label = 1.0 - *label;
        }
    }

    let mut rows: Vec<usize> = (0..total).collect();
    rows.shuffle(&mut rng);
    let mut cols: Vec<usize> = (0..n).collect();
    cols.shuffle(&mut rng);
    let x = x.select_rows(&rows).select_columns(&cols);
    let y = rows.iter().map(|&r| y[r]).collect();
    split(x, y, shape.n_train)
}
