//! Dense f64 feature maps and the layer primitives of the network, each with
//! a hand-written backward pass.

use serde::{Deserialize, Serialize};

/// `channels` stacked 3D maps, channel-major, each x fastest.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Tensor {
            channels,
            dims,
            data: vec![0.0; channels * dims.iter().product::<usize>()],
        }
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    /// No nonlinearity; makes the bias-free network linear.
    Identity,
}

impl Activation {
    pub(crate) fn forward(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Silu => Tensor {
                data: x.data.iter().map(|&v| v * sigmoid(v)).collect(),
                ..*x
            },
        }
    }

    /// Gradient wrt the activation input `x` given the gradient `gy` of its output.
    pub(crate) fn backward(self, x: &Tensor, gy: &Tensor) -> Tensor {
        match self {
            Activation::Identity => gy.clone(),
            Activation::Silu => Tensor {
                data: x
                    .data
                    .iter()
                    .zip(&gy.data)
                    .map(|(&v, &g)| {
                        let s = sigmoid(v);
                        g * s * (1.0 + v * (1.0 - s))
                    })
                    .collect(),
                ..*x
            },
        }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Location of one convolution's weights and biases in the parameter vector.
/// Weights are `[cout][cin][kz][ky][kx]` with kernel size 1 or 3.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w: usize,
    pub b: usize,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k * self.k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    fn taps(&self) -> impl Iterator<Item = (usize, [isize; 3])> {
        let r = (self.k / 2) as isize;
        let k = self.k as isize;
        (0..self.k * self.k * self.k).map(move |tap| {
            let t = tap as isize;
            (tap, [t % k - r, (t / k) % k - r, t / (k * k) - r])
        })
    }

    /// Zero-padded "same" convolution.
    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.channels, self.cin);
        let n = x.voxels();
        let kk = self.k * self.k * self.k;
        let mut out = Tensor::zeros(self.cout, x.dims);
        for co in 0..self.cout {
            let o = &mut out.data[co * n..(co + 1) * n];
            o.fill(p[self.b + co]);
            for ci in 0..self.cin {
                let wk = &p[self.w + (co * self.cin + ci) * kk..][..kk];
                let inp = x.channel(ci);
                for (tap, d) in self.taps() {
                    shifted_axpy(wk[tap], inp, o, x.dims, d);
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients into `g` and returns the input gradient.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Tensor, gy: &Tensor) -> Tensor {
        let n = x.voxels();
        let kk = self.k * self.k * self.k;
        let mut gx = Tensor::zeros(self.cin, x.dims);
        for co in 0..self.cout {
            let go = gy.channel(co);
            g[self.b + co] += go.iter().sum::<f64>();
            for ci in 0..self.cin {
                let base = (co * self.cin + ci) * kk;
                let inp = x.channel(ci);
                let gxi = &mut gx.data[ci * n..(ci + 1) * n];
                for (tap, d) in self.taps() {
                    g[self.w + base + tap] += shifted_dot(go, inp, x.dims, d);
                    shifted_axpy(p[self.w + base + tap], go, gxi, x.dims, [-d[0], -d[1], -d[2]]);
                }
            }
        }
        gx
    }
}

/// Valid output range along one axis for a shift `d` of the input.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(lo as isize) as usize;
    (lo, hi)
}

/// `out[v] += a * inp[v + d]` wherever `v + d` lies inside the grid.
fn shifted_axpy(a: f64, inp: &[f64], out: &mut [f64], dims: [usize; 3], d: [isize; 3]) {
    if a == 0.0 {
        return;
    }
    let [nx, ny, nz] = dims;
    let (x0, x1) = span(nx, d[0]);
    let (y0, y1) = span(ny, d[1]);
    let (z0, z1) = span(nz, d[2]);
    if x0 >= x1 {
        return;
    }
    for z in z0..z1 {
        let zs = (z as isize + d[2]) as usize;
        for y in y0..y1 {
            let ys = (y as isize + d[1]) as usize;
            let orow = &mut out[(z * ny + y) * nx + x0..(z * ny + y) * nx + x1];
            let start = (zs * ny + ys) * nx + (x0 as isize + d[0]) as usize;
            let irow = &inp[start..start + (x1 - x0)];
            for (o, &i) in orow.iter_mut().zip(irow) {
                *o += a * i;
            }
        }
    }
}

/// `sum_v gy[v] * inp[v + d]` over voxels where `v + d` is inside the grid.
fn shifted_dot(gy: &[f64], inp: &[f64], dims: [usize; 3], d: [isize; 3]) -> f64 {
    let [nx, ny, nz] = dims;
    let (x0, x1) = span(nx, d[0]);
    let (y0, y1) = span(ny, d[1]);
    let (z0, z1) = span(nz, d[2]);
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for z in z0..z1 {
        let zs = (z as isize + d[2]) as usize;
        for y in y0..y1 {
            let ys = (y as isize + d[1]) as usize;
            let grow = &gy[(z * ny + y) * nx + x0..(z * ny + y) * nx + x1];
            let start = (zs * ny + ys) * nx + (x0 as isize + d[0]) as usize;
            let irow = &inp[start..start + (x1 - x0)];
            acc += grow.iter().zip(irow).map(|(g, i)| g * i).sum::<f64>();
        }
    }
    acc
}

/// A fully connected layer mapping the timestep embedding to one bias per channel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub nin: usize,
    pub nout: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn param_len(&self) -> usize {
        self.nout * (self.nin + 1)
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.nout)
            .map(|o| p[self.b + o] + (0..self.nin).map(|i| p[self.w + o * self.nin + i] * x[i]).sum::<f64>())
            .collect()
    }

    /// Parameter gradients only; the embedding itself is fixed.
    pub fn backward(&self, g: &mut [f64], x: &[f64], gy: &[f64]) {
        for o in 0..self.nout {
            g[self.b + o] += gy[o];
            for i in 0..self.nin {
                g[self.w + o * self.nin + i] += gy[o] * x[i];
            }
        }
    }
}

/// Sinusoidal embedding of a timestep: `sin(t w_i)` then `cos(t w_i)` with
/// `w_i = 10000^(-i / half)`.
pub(crate) fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (t as f64 * w).sin();
        out[half + i] = (t as f64 * w).cos();
    }
    out
}

/// Mean over each 2x2x2 block.
pub(crate) fn avg_pool2(x: &Tensor) -> Tensor {
    let [nx, ny, nz] = x.dims;
    let dims = [nx / 2, ny / 2, nz / 2];
    let mut out = Tensor::zeros(x.channels, dims);
    let m = out.voxels();
    for c in 0..x.channels {
        let inp = x.channel(c);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    out.data[c * m + i / 2 + dims[0] * (j / 2 + dims[1] * (k / 2))] +=
                        0.125 * inp[i + nx * (j + ny * k)];
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(gy: &Tensor, in_dims: [usize; 3]) -> Tensor {
    let mut gx = upsample2(gy, in_dims);
    for v in &mut gx.data {
        *v *= 0.125;
    }
    gx
}

/// Nearest-neighbour upsampling to `dims` (twice the input size).
pub(crate) fn upsample2(x: &Tensor, dims: [usize; 3]) -> Tensor {
    let [nx, ny, nz] = dims;
    let mut out = Tensor::zeros(x.channels, dims);
    let n = out.voxels();
    for c in 0..x.channels {
        let inp = x.channel(c);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    out.data[c * n + i + nx * (j + ny * k)] = inp[i / 2 + x.dims[0] * (j / 2 + x.dims[1] * (k / 2))];
                }
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(gy: &Tensor, small: [usize; 3]) -> Tensor {
    let [nx, ny, nz] = gy.dims;
    let mut gx = Tensor::zeros(gy.channels, small);
    let m = gx.voxels();
    for c in 0..gy.channels {
        let g = gy.channel(c);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    gx.data[c * m + i / 2 + small[0] * (j / 2 + small[1] * (k / 2))] += g[i + nx * (j + ny * k)];
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, dims: [usize; 3], rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::zeros(c, dims);
        for v in &mut t.data {
            *v = rng.random_range(-1.0..1.0);
        }
        t
    }

    /// Convolution straight from the definition with explicit bounds checks.
    fn conv_oracle(conv: &Conv, p: &[f64], x: &Tensor) -> Tensor {
        let [nx, ny, nz] = x.dims;
        let r = (conv.k / 2) as isize;
        let mut out = Tensor::zeros(conv.cout, x.dims);
        for co in 0..conv.cout {
            for z in 0..nz as isize {
                for y in 0..ny as isize {
                    for xx in 0..nx as isize {
                        let mut acc = p[conv.b + co];
                        for ci in 0..conv.cin {
                            for kz in -r..=r {
                                for ky in -r..=r {
                                    for kx in -r..=r {
                                        let (sx, sy, sz) = (xx + kx, y + ky, z + kz);
                                        if sx < 0
                                            || sy < 0
                                            || sz < 0
                                            || sx >= nx as isize
                                            || sy >= ny as isize
                                            || sz >= nz as isize
                                        {
                                            continue;
                                        }
                                        let k = conv.k as isize;
                                        let tap = ((kz + r) * k * k + (ky + r) * k + (kx + r)) as usize;
                                        let w = p[conv.w + (co * conv.cin + ci) * conv.k.pow(3) + tap];
                                        acc += w * x.channel(ci)[(sx + nx as isize * (sy + ny as isize * sz)) as usize];
                                    }
                                }
                            }
                        }
                        out.data[co * x.voxels() + (xx + nx as isize * (y + ny as isize * z)) as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, dims) in [(3, [5, 4, 3]), (3, [1, 2, 1]), (1, [3, 3, 2])] {
            let conv = Conv {
                cin: 3,
                cout: 2,
                k,
                w: 0,
                b: 2 * 3 * k * k * k,
            };
            let p: Vec<f64> = (0..conv.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = random_tensor(3, dims, &mut rng);
            let got = conv.forward(&p, &x);
            let want = conv_oracle(&conv, &p, &x);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - bias, gy> == <x, conv_backward(gy)>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv {
            cin: 2,
            cout: 3,
            k: 3,
            w: 0,
            b: 3 * 2 * 27,
        };
        let mut p: Vec<f64> = (0..conv.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &mut p[conv.b..] {
            *b = 0.0;
        }
        let x = random_tensor(2, [4, 3, 5], &mut rng);
        let gy = random_tensor(3, [4, 3, 5], &mut rng);
        let y = conv.forward(&p, &x);
        let mut g = vec![0.0; p.len()];
        let gx = conv.backward(&p, &mut g, &x, &gy);
        let lhs: f64 = y.data.iter().zip(&gy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        // weight gradient is linear in the weights: <y, gy> == sum_w w * dL/dw
        let viaw: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!((lhs - viaw).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let big = random_tensor(2, [4, 6, 2], &mut rng);
        let small = random_tensor(2, [2, 3, 1], &mut rng);
        let lhs: f64 = avg_pool2(&big).data.iter().zip(&small.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = big
            .data
            .iter()
            .zip(&avg_pool2_backward(&small, big.dims).data)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs: f64 = upsample2(&small, big.dims)
            .data
            .iter()
            .zip(&big.data)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = small
            .data
            .iter()
            .zip(&upsample2_backward(&big, small.dims).data)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn silu_derivative() {
        let x = Tensor {
            channels: 1,
            dims: [5, 1, 1],
            data: vec![-3.0, -0.5, 0.0, 0.7, 4.0],
        };
        let ones = Tensor {
            data: vec![1.0; 5],
            ..x.clone()
        };
        let g = Activation::Silu.backward(&x, &ones);
        for (i, &v) in x.data.iter().enumerate() {
            let f = |u: f64| u / (1.0 + (-u).exp());
            let fd = (f(v + 1e-6) - f(v - 1e-6)) / 2e-6;
            assert!((g.data[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn embedding_shape() {
        let e = timestep_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_ne!(timestep_embedding(3, 8), timestep_embedding(4, 8));
    }
}
