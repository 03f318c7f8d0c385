//! Forward results checked against naive loop implementations.

use fusedepth_tensor::{conv2d, conv2d_grouped, conv3d, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

#[test]
fn broadcast_add_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[1, 4]);
    let out = a.add(&b).unwrap().to_vec();
    let (ad, bd) = (a.to_vec(), b.to_vec());
    for i in 0..3 {
        for j in 0..4 {
            assert_eq!(out[i * 4 + j], ad[i * 4 + j] + bd[j]);
        }
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, &[5, 7]);
    let b = random(&mut rng, &[7, 3]);
    let c = a.matmul(&b).unwrap().to_vec();
    let (ad, bd) = (a.to_vec(), b.to_vec());
    for i in 0..5 {
        for j in 0..3 {
            let mut s = 0.0;
            for p in 0..7 {
                s += ad[i * 7 + p] * bd[p * 3 + j];
            }
            assert!((c[i * 3 + j] - s).abs() < 1e-12);
        }
    }
}

fn naive_conv2d(x: &[f64], w: &[f64], cin: usize, h: usize, wd: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Vec<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for y in 0..oh {
            for xo in 0..ow {
                let mut s = 0.0;
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xo * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            s += w[((co * cin + ci) * k + ky) * k + kx] * x[(ci * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(co * oh + y) * ow + xo] = s;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 5, 5]);
    let w = random(&mut rng, &[3, 2, 3, 3]);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
        let got = conv2d(&x, &w, stride, pad).unwrap().to_vec();
        let want = naive_conv2d(&x.to_vec(), &w.to_vec(), 2, 5, 5, 3, 3, stride, pad);
        assert_eq!(got.len(), want.len());
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).abs() < 1e-12, "stride {stride} pad {pad}");
        }
    }
}

#[test]
fn depthwise_conv_is_per_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[3, 6, 5]);
    let w = random(&mut rng, &[3, 1, 3, 3]);
    let got = conv2d_grouped(&x, &w, 1, 1, 3).unwrap().to_vec();
    let (xd, wd) = (x.to_vec(), w.to_vec());
    for c in 0..3 {
        let want = naive_conv2d(&xd[c * 30..(c + 1) * 30], &wd[c * 9..(c + 1) * 9], 1, 6, 5, 1, 3, 1, 1);
        for (g, e) in got[c * 30..(c + 1) * 30].iter().zip(&want) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv3d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (cin, cout, d, h, wd, k) = (2, 3, 4, 5, 3, 3);
    let x = random(&mut rng, &[cin, d, h, wd]);
    let w = random(&mut rng, &[cout, cin, k, k, k]);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let got = conv3d(&x, &w, stride, pad).unwrap();
        let od = (d + 2 * pad - k) / stride + 1;
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        assert_eq!(got.shape(), &[cout, od, oh, ow]);
        let (xd, wv, gv) = (x.to_vec(), w.to_vec(), got.to_vec());
        for co in 0..cout {
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (z * stride + kz) as isize - pad as isize;
                                        let iy = (y * stride + ky) as isize - pad as isize;
                                        let ix = (xo * stride + kx) as isize - pad as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        s += wv[(((co * cin + ci) * k + kz) * k + ky) * k + kx]
                                            * xd[((ci * d + iz) * h + iy) * wd + ix];
                                    }
                                }
                            }
                        }
                        let g = gv[((co * od + z) * oh + y) * ow + xo];
                        assert!((g - s).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn zero_input_conv3d() {
    let x = Tensor::zeros(&[2, 3, 3, 3]);
    let w = Tensor::full(&[1, 2, 3, 3, 3], 0.3);
    assert!(conv3d(&x, &w, 1, 1).unwrap().to_vec().iter().all(|&v| v == 0.0));
}
