//! Straight-line reference evaluation of the network, written against plain
//! `Vec<f64>` images and parameter names only. Shares no code with the model.
#![allow(dead_code)]

use mbp_core::{Model, ParameterStore};
use mbp_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Img {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl Img {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Img { c, h, w, d: vec![0.0; c * h * w] }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.d[(c * self.h + y) * self.w + x]
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        let s = t.shape();
        Img { c: s[0], h: s[1], w: s[2], d: t.data().to_vec() }
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::from_vec(&[self.c, self.h, self.w], self.d.clone()).unwrap()
    }
}

pub struct Ref<'a> {
    pub p: &'a ParameterStore<f64>,
}

impl Ref<'_> {
    fn w(&self, name: &str) -> &Tensor<f64> {
        self.p.get(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }

    /// Zero-padded cross-correlation, padding k/2.
    pub fn conv(&self, x: &Img, name: &str, stride: usize) -> Img {
        let w = self.w(&format!("{name}.weight"));
        let b = self.w(&format!("{name}.bias"));
        let (co, ci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        assert_eq!(ci, x.c, "{name}");
        let pad = (k / 2) as isize;
        let oh = (x.h + 2 * (k / 2) - k) / stride + 1;
        let ow = (x.w + 2 * (k / 2) - k) / stride + 1;
        let mut out = Img::zeros(co, oh, ow);
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad;
                                let ix = (ox * stride + kx) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                acc += w.data()[((o * ci + c) * k + ky) * k + kx] * x.at(c, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.d[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    pub fn cab(&self, x: &Img, name: &str) -> Img {
        let r = relu(&self.conv(x, &format!("{name}.conv1"), 1));
        let r = self.conv(&r, &format!("{name}.conv2"), 1);
        let hw = (r.h * r.w) as f64;
        let pooled = Img {
            c: r.c,
            h: 1,
            w: 1,
            d: (0..r.c).map(|c| r.d[c * r.h * r.w..(c + 1) * r.h * r.w].iter().sum::<f64>() / hw).collect(),
        };
        let s = relu(&self.conv(&pooled, &format!("{name}.squeeze"), 1));
        let g = self.conv(&s, &format!("{name}.excite"), 1);
        let mut out = x.clone();
        for c in 0..r.c {
            let gate = 1.0 / (1.0 + (-g.d[c]).exp());
            for i in 0..r.h * r.w {
                out.d[c * r.h * r.w + i] += gate * r.d[c * r.h * r.w + i];
            }
        }
        out
    }

    pub fn cabs(&self, x: &Img, name: &str, n: usize) -> Img {
        (0..n).fold(x.clone(), |h, i| self.cab(&h, &format!("{name}.cab{i}")))
    }

    pub fn up(&self, x: &Img, name: &str, stages: usize) -> Img {
        (0..stages).fold(x.clone(), |h, i| self.conv(&bilinear2(&h), &format!("{name}.stage{i}"), 1))
    }

    pub fn extract(&self, frame: &Img) -> Img {
        self.cab(&self.conv(frame, "extractor.conv", 1), "extractor.cab")
    }

    /// Encoder/decoder update of one cell; `prev` and the result are
    /// ordered e1, e2, e3, d3, d2, d1.
    pub fn cell(&self, cell: &str, phi: &Img, prev: &[Img; 6]) -> [Img; 6] {
        let [pe1, pe2, pe3, pd3, pd2, pd1] = prev;
        let gather = |x: &Img, lvl: &str, pe: &Img, pd: &Img| {
            let a = self.cabs(x, &format!("{cell}.{lvl}.phi"), 2);
            let b = self.conv(pe, &format!("{cell}.{lvl}.gather_e"), 1);
            let c = self.conv(pd, &format!("{cell}.{lvl}.gather_d"), 1);
            add(&add(&a, &b), &c)
        };
        let e1 = gather(phi, "enc1", pe1, pd1);
        let e2 = gather(&self.conv(&e1, &format!("{cell}.down1.conv"), 2), "enc2", pe2, pd2);
        let e3 = gather(&self.conv(&e2, &format!("{cell}.down2.conv"), 2), "enc3", pe3, pd3);
        let d3 = self.cabs(&e3, &format!("{cell}.dec3.phi"), 2);
        let d2 = add(
            &self.cabs(&self.up(&d3, &format!("{cell}.up2"), 1), &format!("{cell}.dec2.phi_up"), 2),
            &self.cabs(&e2, &format!("{cell}.dec2.phi_skip"), 2),
        );
        let d1 = add(
            &self.cabs(&self.up(&d2, &format!("{cell}.up1"), 1), &format!("{cell}.dec1.phi_up"), 2),
            &self.cabs(&e1, &format!("{cell}.dec1.phi_skip"), 2),
        );
        [e1, e2, e3, d3, d2, d1]
    }

    pub fn reconstruct(&self, phi: &Img, f: &[Img; 6], b: &[Img; 6], input: &Img, pair_e2_with_d2: bool) -> Img {
        let [fe1, fe2, fe3, fd3, fd2, fd1] = f;
        let [be1, be2, be3, bd3, bd2, bd1] = b;
        let level = |x: &Img, lvl: usize, enc: Img, dec: Img| {
            let r = format!("reconstructor.level{lvl}");
            let psi = self.cabs(x, &format!("{r}.psi"), 8);
            let e = self.up(&self.conv(&enc, &format!("{r}.fuse_e"), 1), &format!("{r}.up_e"), lvl - 1);
            let d = self.up(&self.conv(&dec, &format!("{r}.fuse_d"), 1), &format!("{r}.up_d"), lvl - 1);
            add(&add(&psi, &e), &d)
        };
        let f1 = level(phi, 1, add(fe1, be1), add(fd1, bd1));
        let f2 = level(&f1, 2, add(fe2, if pair_e2_with_d2 { bd2 } else { be2 }), add(fd2, bd2));
        let f3 = level(&f2, 3, add(fe3, be3), add(fd3, bd3));
        add(&self.conv(&f3, "reconstructor.out", 1), input)
    }
}

pub fn relu(x: &Img) -> Img {
    Img { d: x.d.iter().map(|v| v.max(0.0)).collect(), ..x.clone() }
}

pub fn add(a: &Img, b: &Img) -> Img {
    assert_eq!((a.c, a.h, a.w), (b.c, b.h, b.w));
    Img { d: a.d.iter().zip(&b.d).map(|(x, y)| x + y).collect(), ..a.clone() }
}

/// x2 bilinear resize with half-pixel centres and edge clamping, evaluated
/// from the sampling position of every output pixel.
pub fn bilinear2(x: &Img) -> Img {
    let (oh, ow) = (2 * x.h, 2 * x.w);
    let sample = |n: usize, i: usize| {
        let s = (i as f64 + 0.5) / 2.0 - 0.5;
        let i0 = s.floor();
        let t = s - i0;
        let clamp = |v: f64| v.max(0.0).min((n - 1) as f64) as usize;
        (clamp(i0), clamp(i0 + 1.0), t)
    };
    let mut out = Img::zeros(x.c, oh, ow);
    for c in 0..x.c {
        for oy in 0..oh {
            let (y0, y1, ty) = sample(x.h, oy);
            for ox in 0..ow {
                let (x0, x1, tx) = sample(x.w, ox);
                out.d[(c * oh + oy) * ow + ox] = (1.0 - ty) * (1.0 - tx) * x.at(c, y0, x0)
                    + (1.0 - ty) * tx * x.at(c, y0, x1)
                    + ty * (1.0 - tx) * x.at(c, y1, x0)
                    + ty * tx * x.at(c, y1, x1);
            }
        }
    }
    out
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

/// Parameters with every tensor, biases and the zero-initialised output
/// conv included, drawn uniformly from `[-amp, amp]`.
pub fn random_params(model: &Model, seed: u64, amp: f32) -> ParameterStore<f32> {
    let mut store = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for i in 0..store.len() {
        for v in store.by_id_mut(mbp_tensor::ParamId(i)).data_mut() {
            *v = rng.gen_range(-amp..amp);
        }
    }
    store
}

pub fn random_tensor<T: mbp_tensor::Float>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from(rng.gen::<f64>()).unwrap())
}
