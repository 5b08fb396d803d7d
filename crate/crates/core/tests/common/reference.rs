//! Straight-line 64-bit forward pass written with plain loops, sharing no
//! code with the tape-based model.

use seisbert::model::{HeadKind, SeismicBert};

type Mat = Vec<Vec<f64>>;

struct Weights<'a> {
    params: Vec<(&'a str, Vec<usize>, Vec<f64>)>,
    next: usize,
}

impl<'a> Weights<'a> {
    fn take(&mut self) -> (Vec<usize>, Vec<f64>) {
        let (_, shape, data) = &self.params[self.next];
        self.next += 1;
        (shape.clone(), data.clone())
    }

    fn matrix(&mut self) -> Mat {
        let (shape, data) = self.take();
        data.chunks(shape[1]).map(<[f64]>::to_vec).collect()
    }

    fn vector(&mut self) -> Vec<f64> {
        self.take().1
    }
}

fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().enumerate().map(|(k, v)| v * w[k][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn norm(x: &Mat, g: &[f64], b: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| g[j] * (v - mean) / (var + eps).sqrt() + b[j])
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Output of the model's head, plus every attention matrix `[layer][head]`.
pub fn forward(model: &SeismicBert<f64>, traces: &Mat, positions: &[usize]) -> (Mat, Vec<Vec<Mat>>) {
    let cfg = &model.config;
    let params = model
        .parameters()
        .into_iter()
        .map(|p| (p.name.as_str(), p.value.shape().to_vec(), p.value.data().to_vec()))
        .collect();
    let mut w = Weights { params, next: 0 };
    let h = cfg.hidden;
    let eps = cfg.layer_norm_eps;

    let proj_w = w.matrix();
    let proj_b = w.vector();
    let g = w.vector();
    let b = w.vector();
    let mut x = affine(traces, &proj_w, &proj_b);
    for (row, &pos) in x.iter_mut().zip(positions) {
        for (i, v) in row.iter_mut().enumerate() {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / h as f64);
            let angle = pos as f64 * freq;
            *v += if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    x = norm(&x, &g, &b, eps);

    let d = h / cfg.heads;
    let scale = cfg.attention_scale();
    let mut all_maps = Vec::new();
    for _ in 0..cfg.layers {
        let (wq, bq, wk, bk, wv, bv, wo, bo) = (
            w.matrix(),
            w.vector(),
            w.matrix(),
            w.vector(),
            w.matrix(),
            w.vector(),
            w.matrix(),
            w.vector(),
        );
        let (g1, b1, g2, b2) = (w.vector(), w.vector(), w.vector(), w.vector());
        let (w1, c1, w2, c2) = (w.matrix(), w.vector(), w.matrix(), w.vector());

        let n1 = norm(&x, &g1, &b1, eps);
        let q = affine(&n1, &wq, &bq);
        let k = affine(&n1, &wk, &bk);
        let v = affine(&n1, &wv, &bv);
        let n = x.len();
        let mut merged = vec![vec![0.0; h]; n];
        let mut maps = Vec::new();
        for a in 0..cfg.heads {
            let mut map = vec![vec![0.0; n]; n];
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..d).map(|c| q[i][a * d + c] * k[j][a * d + c]).sum::<f64>() / scale)
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..n {
                    map[i][j] = e[j] / z;
                }
                for c in 0..d {
                    merged[i][a * d + c] = (0..n).map(|j| map[i][j] * v[j][a * d + c]).sum();
                }
            }
            maps.push(map);
        }
        all_maps.push(maps);
        x = add(&x, &affine(&merged, &wo, &bo));

        let n2 = norm(&x, &g2, &b2, eps);
        let inner: Mat = affine(&n2, &w1, &c1)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        x = add(&x, &affine(&inner, &w2, &c2));
    }

    let hw = w.matrix();
    let hb = w.vector();
    let out = match model.head_kind().expect("head attached") {
        HeadKind::Reconstruction | HeadKind::Denoise => affine(&x, &hw, &hb),
        HeadKind::Velocity | HeadKind::Vrms => affine(&x[..1].to_vec(), &hw, &hb),
        HeadKind::FirstBreak => {
            let s: Mat = x
                .iter()
                .map(|r| r.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect())
                .collect();
            affine(&s, &hw, &hb)
        }
    };
    (out, all_maps)
}
