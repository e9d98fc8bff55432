//! Direct-formula reference implementations, written with plain loops and
//! no calls into the library's numeric code.

#![allow(dead_code, clippy::needless_range_loop)]

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let mut s = 0.0;
    for v in &e {
        s += v;
    }
    e.iter().map(|v| v / s).collect()
}

pub fn lse(z: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let mut s = 0.0;
    for &v in z {
        s += (v - m).exp();
    }
    m + s.ln()
}

pub fn first_argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    best
}

pub fn msp(logits: &[f64]) -> f64 {
    let p = softmax(logits);
    -p[first_argmax(&p)]
}

pub fn mls(logits: &[f64]) -> f64 {
    -logits[first_argmax(logits)]
}

pub fn gen(logits: &[f64], gamma: f64) -> f64 {
    let mut s = 0.0;
    for p in softmax(logits) {
        s += p.powf(gamma) * (1.0 - p).powf(gamma);
    }
    s
}

pub fn gradnorm(f: &[f64], logits: &[f64]) -> f64 {
    let p = softmax(logits);
    let u = 1.0 / p.len() as f64;
    let mut a = 0.0;
    for v in &p {
        a += (v - u).abs();
    }
    let mut b = 0.0;
    for v in f {
        b += v.abs();
    }
    -a * b
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..n {
            if r != col {
                let factor = a[r][col];
                if factor != 0.0 {
                    for j in 0..n {
                        a[r][j] -= factor * a[col][j];
                        inv[r][j] -= factor * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// `(eigenvalues, eigenvectors as columns)`.
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).collect()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for k in 0..b.len() {
            for j in 0..b[0].len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Moore-Penrose pseudoinverse of a full-rank matrix via normal equations.
pub fn pinv_full_rank(w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let wt = transpose(w);
    if w.len() <= w[0].len() {
        matmul(&wt, &invert(&matmul(w, &wt)))
    } else {
        matmul(&invert(&matmul(&wt, w)), &wt)
    }
}

pub struct MahaOracle {
    means: Vec<Vec<f64>>,
    precision: Vec<Vec<f64>>,
}

impl MahaOracle {
    pub fn fit(features: &[Vec<f64>], labels: &[u32]) -> Self {
        let d = features[0].len();
        let mut classes: Vec<u32> = labels.to_vec();
        classes.sort();
        classes.dedup();
        let mut means = Vec::new();
        for &k in &classes {
            let mut mu = vec![0.0; d];
            let mut count = 0.0;
            for (f, &y) in features.iter().zip(labels) {
                if y == k {
                    for j in 0..d {
                        mu[j] += f[j];
                    }
                    count += 1.0;
                }
            }
            for v in mu.iter_mut() {
                *v /= count;
            }
            means.push(mu);
        }
        let mut cov = vec![vec![0.0; d]; d];
        for (f, &y) in features.iter().zip(labels) {
            let mu = &means[classes.iter().position(|&k| k == y).unwrap()];
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (f[a] - mu[a]) * (f[b] - mu[b]);
                }
            }
        }
        let n = features.len() as f64;
        let mut trace = 0.0;
        for a in 0..d {
            for b in 0..d {
                cov[a][b] /= n;
            }
            trace += cov[a][a];
        }
        for a in 0..d {
            cov[a][a] += 1e-6 * trace / d as f64;
        }
        MahaOracle {
            means,
            precision: invert(&cov),
        }
    }

    pub fn score(&self, f: &[f64]) -> f64 {
        let d = f.len();
        let mut best = f64::INFINITY;
        for mu in &self.means {
            let mut q = 0.0;
            for a in 0..d {
                for b in 0..d {
                    q += (f[a] - mu[a]) * self.precision[a][b] * (f[b] - mu[b]);
                }
            }
            if q < best {
                best = q;
            }
        }
        best
    }
}

/// Linear-interpolation percentile over a sorted copy.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn react(f: &[f64], w: &[Vec<f64>], b: &[f64], tau: f64) -> f64 {
    let logits: Vec<f64> = w
        .iter()
        .zip(b)
        .map(|(row, bk)| {
            let mut s = *bk;
            for j in 0..f.len() {
                s += row[j] * f[j].min(tau);
            }
            s
        })
        .collect();
    -lse(&logits)
}

pub fn klm_templates(train_logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let c = train_logits[0].len();
    let mut sums = vec![vec![0.0; c]; c];
    let mut counts = vec![0usize; c];
    for z in train_logits {
        let k = first_argmax(z);
        let p = softmax(z);
        for i in 0..c {
            sums[k][i] += p[i];
        }
        counts[k] += 1;
    }
    (0..c)
        .map(|k| {
            if counts[k] == 0 {
                (0..c).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
            } else {
                sums[k].iter().map(|s| s / counts[k] as f64).collect()
            }
        })
        .collect()
}

pub fn klm(logits: &[f64], templates: &[Vec<f64>]) -> f64 {
    let p = softmax(logits);
    let mut best = f64::INFINITY;
    for t in templates {
        let mut kl = 0.0;
        for i in 0..p.len() {
            if p[i] > 0.0 {
                kl += p[i] * (p[i].ln() - t[i].max(1e-12).ln());
            }
        }
        if kl < best {
            best = kl;
        }
    }
    best
}

fn unit(v: &[f64]) -> Vec<f64> {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    let n = s.sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn knn(f: &[f64], bank: &[Vec<f64>], k: usize) -> f64 {
    let q = unit(f);
    let mut dists: Vec<f64> = bank
        .iter()
        .map(|row| {
            let r = unit(row);
            let mut s = 0.0;
            for j in 0..q.len() {
                s += (q[j] - r[j]) * (q[j] - r[j]);
            }
            s.sqrt()
        })
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[k - 1]
}

pub struct VimOracle {
    offset: Vec<f64>,
    /// Residual-space basis vectors.
    residual: Vec<Vec<f64>>,
    alpha: f64,
}

impl VimOracle {
    pub fn fit(features: &[Vec<f64>], logits: &[Vec<f64>], w: &[Vec<f64>], b: &[f64], principal: usize) -> Self {
        let d = features[0].len();
        let pinv = pinv_full_rank(w);
        let offset: Vec<f64> = (0..d)
            .map(|j| {
                let mut s = 0.0;
                for k in 0..b.len() {
                    s -= pinv[j][k] * b[k];
                }
                s
            })
            .collect();
        let mut moment = vec![vec![0.0; d]; d];
        for f in features {
            for a in 0..d {
                for c in 0..d {
                    moment[a][c] += (f[a] - offset[a]) * (f[c] - offset[c]);
                }
            }
        }
        for row in moment.iter_mut() {
            for v in row.iter_mut() {
                *v /= features.len() as f64;
            }
        }
        let (values, vectors) = jacobi_eigen(&moment);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
        let residual: Vec<Vec<f64>> = order[..d - principal]
            .iter()
            .map(|&i| (0..d).map(|r| vectors[r][i]).collect())
            .collect();
        let mut oracle = VimOracle {
            offset,
            residual,
            alpha: 1.0,
        };
        let mut max_logit_sum = 0.0;
        let mut residual_sum = 0.0;
        for (f, z) in features.iter().zip(logits) {
            max_logit_sum += z[first_argmax(z)];
            residual_sum += oracle.residual_norm(f);
        }
        oracle.alpha = max_logit_sum / residual_sum;
        oracle
    }

    pub fn residual_norm(&self, f: &[f64]) -> f64 {
        let mut s = 0.0;
        for v in &self.residual {
            let mut p = 0.0;
            for j in 0..f.len() {
                p += v[j] * (f[j] - self.offset[j]);
            }
            s += p * p;
        }
        s.sqrt()
    }

    pub fn score(&self, f: &[f64], logits: &[f64]) -> f64 {
        self.alpha * self.residual_norm(f) - lse(logits)
    }
}

/// AUROC by counting every positive/negative pair; ties count one half.
pub fn auroc_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub fn entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h
}
